"""Independent numerical references for Gaussian averaging.

Three routes to the same quantity ``E[f(x + eta)]``, ``eta ~ N(0, sigma^2 I)``:

* :func:`mc_gauss_average` -- plain Monte Carlo;
* :func:`kernel_convolve_grid` / :func:`gauss_hermite_average` -- direct
  quadrature against the Gaussian kernel;
* :func:`heat_solve_grid` -- explicit finite differences for
  ``u_t = (sigma^2 / 2) Laplacian(u)`` run to ``t = 1``.

plus :func:`bishop_check`, which compares the noisy quadratic loss with its
gradient-penalty expansion.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import convolve1d

from .nn import Mlp


@dataclass
class GridField:
    """Samples on a regular 1D or 2D grid.

    ``values`` has shape ``(n,)`` or ``(n0, n1)``; node ``i`` along an axis sits
    at ``origin[axis] + i * dx``.
    """

    origin: tuple[float, ...]
    dx: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.origin = tuple(float(o) for o in np.atleast_1d(self.origin))
        if self.values.ndim not in (1, 2):
            raise ValueError("grid must be 1D or 2D")
        if len(self.origin) != self.values.ndim:
            raise ValueError("origin length must match grid dimension")
        if self.dx <= 0:
            raise ValueError("dx must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")

    @property
    def dim(self) -> int:
        return self.values.ndim

    def axes(self) -> list[np.ndarray]:
        return [o + self.dx * np.arange(n) for o, n in zip(self.origin, self.values.shape)]

    def points(self) -> np.ndarray:
        """Node coordinates, shape ``(size, dim)`` in row-major order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def with_values(self, values: np.ndarray) -> "GridField":
        return GridField(self.origin, self.dx, values)

    def to_csv(self, path) -> None:
        names = [f"x_{i}" for i in range(self.dim)] + ["value"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for p, val in zip(self.points(), self.values.ravel()):
                w.writerow([format(c, ".17g") for c in p] + [format(val, ".17g")])


def grid_from_function(f: Callable[[np.ndarray], np.ndarray], box: Sequence[tuple[float, float]],
                       dx: float) -> GridField:
    """Sample a vectorized ``f: (m, dim) -> (m,)`` on the nodes covering ``box``."""
    box = [tuple(map(float, b)) for b in box]
    counts = [int(round((hi - lo) / dx)) + 1 for lo, hi in box]
    g = GridField(tuple(lo for lo, _ in box), dx, np.zeros(counts))
    return g.with_values(np.asarray(f(g.points()), dtype=np.float64).reshape(counts))


def max_stable_dt(sigma: float, dx: float, dim: int) -> float:
    """Largest dt with (sigma^2/2) dt (2 dim) / dx^2 <= 1/2."""
    return 0.5 * dx * dx / (sigma * sigma * dim)


def heat_solve_grid(u0: GridField, sigma: float, t_final: float = 1.0,
                    dt: float | None = None) -> GridField:
    """Forward-Euler, central-difference heat solve with zero-flux boundaries.

    The boundary uses mirrored ghost nodes (``u[-1] = u[1]``).  Without ``dt``
    the step is the largest stable one that divides ``t_final`` exactly.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0 or t_final == 0:
        return u0.with_values(u0.values.copy())
    dim, h = u0.dim, u0.dx
    limit = max_stable_dt(sigma, h, dim)
    if dt is None:
        steps = math.ceil(t_final / limit - 1e-12)
        dt = t_final / steps
    else:
        if dt > limit * (1 + 1e-12):
            raise ValueError(f"unstable time step {dt:g}; need dt <= {limit:g} "
                             f"for sigma={sigma:g}, dx={h:g}")
        steps = int(round(t_final / dt))
        if abs(steps * dt - t_final) > 1e-9 * t_final:
            raise ValueError(f"dt={dt:g} does not divide t_final={t_final:g}")
    r = 0.5 * sigma * sigma * dt / (h * h)
    u = u0.values.copy()
    if any(n < 2 for n in u.shape):
        return u0.with_values(u)
    for _ in range(steps):
        lap = np.zeros_like(u)
        for axis in range(dim):
            p = np.pad(u, [(1, 1) if a == axis else (0, 0) for a in range(dim)], mode="reflect")
            sl = [slice(None)] * dim
            sl[axis] = slice(2, None)
            hi = p[tuple(sl)]
            sl[axis] = slice(None, -2)
            lo = p[tuple(sl)]
            lap += hi + lo - 2.0 * u
        u = u + r * lap
    return u0.with_values(u)


def kernel_convolve_grid(u0: GridField, sigma: float, truncate: float = 10.0) -> GridField:
    """Discrete convolution of grid values with the N(0, sigma^2) kernel.

    Values are extended past the grid by mirroring about the end nodes, which
    is the image-method solution of the zero-flux problem solved by
    :func:`heat_solve_grid`.
    """
    if sigma == 0:
        return u0.with_values(u0.values.copy())
    half = int(math.ceil(truncate * sigma / u0.dx))
    t = u0.dx * np.arange(-half, half + 1)
    w = np.exp(-0.5 * (t / sigma) ** 2)
    w /= w.sum()
    out = u0.values
    for axis in range(u0.dim):
        n = out.shape[axis]
        if half >= n:
            # mirror enough periods so the 1D filter sees a long enough signal
            reps = half // max(n - 1, 1) + 1
            padw = [(0, 0)] * out.ndim
            padw[axis] = (reps * (n - 1), reps * (n - 1))
            big = np.pad(out, padw, mode="reflect")
            conv = convolve1d(big, w, axis=axis, mode="mirror")
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(reps * (n - 1), reps * (n - 1) + n)
            out = conv[tuple(sl)]
        else:
            out = convolve1d(out, w, axis=axis, mode="mirror")
    return u0.with_values(out)


def gauss_hermite_average(f: Callable[[np.ndarray], np.ndarray], x, sigma: float,
                          n_nodes: int = 64) -> np.ndarray:
    """``E[f(x + sigma Z)]`` for scalar inputs by Gauss-Hermite quadrature.

    ``f`` maps an array of points to an array of values elementwise; ``x`` may
    be a scalar or 1D array of evaluation points.
    """
    nodes, weights = np.polynomial.hermite.hermgauss(n_nodes)
    x = np.asarray(x, dtype=np.float64)
    pts = x[..., None] + math.sqrt(2.0) * sigma * nodes
    vals = np.asarray(f(pts), dtype=np.float64)
    if not np.all(np.isfinite(vals)):
        raise ValueError("quadrature diverged: integrand is not finite at the nodes")
    # the weights sum to sqrt(pi) up to rounding; dividing by their sum keeps constants exact
    return (vals * weights).sum(axis=-1) / weights.sum()


@dataclass
class MCEstimate:
    mean: np.ndarray
    std_error: np.ndarray
    n_samples: int
    seed: int | None


def mc_gauss_average(f: Callable[[np.ndarray], np.ndarray], x, sigma: float, n: int,
                     seed=None, chunk: int = 50_000) -> MCEstimate:
    """Monte-Carlo mean and standard error of ``f(x + eta)``.

    ``f`` takes a batch ``(m, d)`` and returns ``(m,)`` or ``(m, k)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    s1 = s2 = 0.0
    done = 0
    while done < n:
        m = min(chunk, n - done)
        vals = np.asarray(f(x + sigma * rng.standard_normal((m, x.size))), dtype=np.float64)
        s1 = s1 + vals.sum(axis=0)
        s2 = s2 + (vals * vals).sum(axis=0)
        done += m
    mean = s1 / n
    if n > 1:
        var = np.maximum(s2 - n * mean * mean, 0.0) / (n - 1)
    else:
        var = np.zeros_like(mean)
    return MCEstimate(np.asarray(mean), np.sqrt(var / n), n,
                      None if isinstance(seed, np.random.Generator) else seed)


def _central_derivative(f, x: float, h: float = 1e-3) -> float:
    # fourth-order central difference; h ~ eps^(1/5) balances truncation and rounding
    return float((-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h))


def bishop_check(f: Callable, y: float, x: float, sigma: float,
                 fprime: Callable | None = None, n_nodes: int = 64) -> tuple[float, float, float]:
    """Noisy quadratic loss versus its gradient-penalty form at one point.

    ``lhs = E[(f(x + eta) - y)^2]`` by Gauss-Hermite quadrature,
    ``rhs = (f(x) - y)^2 + sigma^2 f'(x)^2``.  Returns ``(lhs, rhs, lhs - rhs)``.
    The residual is ``sigma^2 (f(x) - y) f''(x) + O(sigma^4)``.
    """
    if sigma == 0:
        v = (float(f(x)) - y) ** 2
        return v, v, 0.0
    lhs = float(gauss_hermite_average(lambda p: (f(p) - y) ** 2, x, sigma, n_nodes))
    d = float(fprime(x)) if fprime is not None else _central_derivative(f, x)
    rhs = (float(f(x)) - y) ** 2 + sigma ** 2 * d * d
    return lhs, rhs, lhs - rhs


def grid_restrict(model: Mlp, component: int, box: Sequence[tuple[float, float]],
                  dx: float) -> GridField:
    """Sample one class probability of ``model`` on a 1D or 2D grid."""
    if model.input_dim > 2 or len(box) != model.input_dim:
        raise ValueError(f"grid oracle supports input dim 1 or 2 matching box, got dim {model.input_dim}")
    if not 0 <= component < model.n_classes:
        raise ValueError(f"component {component} out of range")
    return grid_from_function(lambda P: model.probabilities(P)[:, component], box, dx)


@dataclass
class EquivalenceReport:
    """Pairwise agreement of the PDE, kernel-convolution and MC routes on one grid."""

    sigma: float
    dx: float
    linf_pde_vs_kernel: float
    kernel_tol: float
    mc_points: list[float]
    mc_abs_error: list[float]
    mc_std_error: list[float]
    mc_tol: list[float]

    @property
    def kernel_pass(self) -> bool:
        return self.linf_pde_vs_kernel < self.kernel_tol

    @property
    def mc_pass(self) -> bool:
        return all(e < t for e, t in zip(self.mc_abs_error, self.mc_tol))

    @property
    def passed(self) -> bool:
        return self.kernel_pass and self.mc_pass

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kernel_pass=self.kernel_pass, mc_pass=self.mc_pass, passed=self.passed)
        return d


def equivalence_check(f: Callable[[np.ndarray], np.ndarray], box: tuple[float, float], dx: float,
                      sigma: float, mc_points: Sequence[float], mc_n: int = 100_000, seed=0,
                      kernel_tol: float = 1e-3, floor: float | None = None) -> EquivalenceReport:
    """Compare the three Gaussian-averaging routes for a scalar function on a 1D box.

    ``f`` maps ``(m, 1)`` points to ``(m,)`` values.  The grid routes are
    compared everywhere; MC is compared at ``mc_points`` with tolerance
    ``max(3 * std_error, floor)``, where ``floor`` (default ``5 dx^2``) covers
    the grid discretization error where the MC error vanishes.
    """
    u0 = grid_from_function(f, [box], dx)
    pde = heat_solve_grid(u0, sigma)
    ker = kernel_convolve_grid(u0, sigma)
    linf = float(np.max(np.abs(pde.values - ker.values)))
    floor = 5.0 * dx * dx if floor is None else floor
    axis = pde.axes()[0]
    errs, ses, tols = [], [], []
    for i, x in enumerate(mc_points):
        est = mc_gauss_average(f, [x], sigma, mc_n, seed=np.random.default_rng([int(seed), i]))
        grid_val = float(np.interp(x, axis, pde.values))
        se = float(np.ravel(est.std_error)[0])
        errs.append(abs(float(np.ravel(est.mean)[0]) - grid_val))
        ses.append(se)
        tols.append(max(3.0 * se, floor))
    return EquivalenceReport(sigma, dx, linf, kernel_tol, [float(p) for p in mc_points], errs, ses, tols)
