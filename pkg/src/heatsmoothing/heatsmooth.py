"""Deterministic Gaussian smoothing by iterated gradient-regularized retraining.

Starting from a trained model ``f0``, each timestep ``k`` fits a fresh copy
``v`` (warm-started at ``f^k``) to

    J(v) = mean_x [ 1/2 |v(x) - f^k(x)|^2 + lam * sigma^2 / (2 n_T) * G(v, x) ]

where ``G`` is a random-projection, finite-difference estimate of the squared
Jacobian norm ``|grad_x v(x)|_F^2``.  After ``n_T`` timesteps ``f^{n_T}`` is an
implicit-Euler solution of the heat equation at ``t = 1``, i.e. approximately
the Gaussian average of ``f0`` at scale ``sigma``.  Labels are never read.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .nn import Mlp, OptimConfig, TrainingDiverged, sgd_loop

log = logging.getLogger(__name__)

LOSS_MODES = ("quadratic", "kl")
ZERO_GRAD_TOL = 1e-12


@dataclass
class SmoothConfig:
    sigma: float = 0.1
    lam: float | None = None
    n_timesteps: int = 5
    kappa: int = 10
    delta_fd: float = 0.1
    loss_mode: str = "quadratic"
    unbiased_jl: bool = False
    output_space: str = "probabilities"
    optim: OptimConfig = field(default_factory=lambda: OptimConfig(learning_rate=0.01, epochs=20, clip_norm=5.0))

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")
        if self.output_space not in ("probabilities", "logits"):
            raise ValueError("output_space must be 'probabilities' or 'logits'")
        if self.lam is None:
            self.lam = 5.0 if self.loss_mode == "quadratic" else 100.0
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.lam < 1:
            raise ValueError("lam must be >= 1")
        if self.n_timesteps < 1 or self.kappa < 1:
            raise ValueError("n_timesteps and kappa must be >= 1")
        if self.delta_fd <= 0:
            raise ValueError("delta_fd must be positive")

    @property
    def penalty_coef(self) -> float:
        return self.lam * self.sigma ** 2 / (2.0 * self.n_timesteps)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TimestepReport:
    k: int
    distance: float
    penalty: float
    epochs: int
    final_loss: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


class TimestepAborted(RuntimeError):
    """A timestep produced a non-finite loss; carries what was completed."""

    def __init__(self, msg: str, completed: list[Mlp], reports: list[TimestepReport]):
        super().__init__(msg)
        self.completed = completed
        self.reports = reports


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def jl_grad_norm_term(v: Callable[[ad.Tensor], ad.Tensor], x, kappa: int = 10,
                      delta_fd: float = 0.1, seed=None, unbiased: bool = False) -> ad.Tensor:
    """Finite-difference random-projection estimate of ``|grad_x v(x)|_F^2``.

    For each of ``kappa`` draws ``w = z / sqrt(Nc)``, ``z ~ N(0, I)``, the
    direction ``l = grad_x(w.v(x)) / |.|`` is computed by one reverse sweep and
    detached (``l = 0`` if the gradient vanishes); the term is
    ``((w.v(x + delta l) - w.v(x)) / delta)^2``.  The ``kappa`` terms are summed,
    and multiplied by ``Nc / kappa`` when ``unbiased``.

    ``x`` of shape (d,) yields a scalar; (N, d) yields one value per row.
    The result is differentiable with respect to the parameters of ``v``.
    """
    if delta_fd <= 0:
        raise ValueError("delta_fd must be positive")
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    rng = _rng(seed)
    xd = x.data if isinstance(x, ad.Tensor) else np.asarray(x, dtype=np.float64)
    single = xd.ndim == 1
    X = xd[None, :] if single else xd
    n = X.shape[0]
    # row j*n + i is replicate j of example i
    Xr = ad.Tensor(np.tile(X, (kappa, 1)), requires_grad=True)
    Vr = v(Xr)
    nc = Vr.shape[1]
    W = rng.standard_normal((kappa * n, nc)) / math.sqrt(nc)
    G = ad.grad(ad.sum(Vr * W), [Xr])[Xr]
    norms = np.linalg.norm(G, axis=1, keepdims=True)
    L = np.where(norms > ZERO_GRAD_TOL, G / np.where(norms > ZERO_GRAD_TOL, norms, 1.0), 0.0)
    Vp = v(ad.Tensor(Xr.data + delta_fd * L))
    q = ad.sum((Vp - Vr) * W, axis=1) / delta_fd
    terms = ad.sum(ad.reshape(ad.square(q), (kappa, n)), axis=0)
    if unbiased:
        terms = terms * (nc / kappa)
    return ad.reshape(terms, ()) if single else terms


def _outputs(model: Mlp, X, space: str) -> ad.Tensor:
    z = model.logits(X)
    return ad.softmax(z) if space == "probabilities" else z


def _target(model: Mlp, X: np.ndarray, space: str) -> np.ndarray:
    return model.probabilities(X) if space == "probabilities" else model.predict_logits(X)


def timestep_loss(v: Mlp, f_k: Mlp, batch: np.ndarray, config: SmoothConfig,
                  seed=None) -> tuple[ad.Tensor, float, float]:
    """Regularized distance objective for one minibatch.

    Returns ``(J, mean distance term, mean weighted penalty term)``.  ``f_k``
    is only evaluated through its numpy path, so it contributes constants.
    """
    X = np.asarray(batch, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    space = config.output_space
    if config.loss_mode == "quadratic":
        target = _target(f_k, X, space)
        dist = ad.mul(ad.norm_sq(_outputs(v, X, space) - target, axis=1), 0.5)
    else:
        # KL(p_k || p_v), target distribution first
        p_k = _softmax_np(f_k.predict_logits(X))
        log_pv = ad.log_softmax(v.logits(X))
        ent = np.sum(p_k * np.log(np.where(p_k > 0, p_k, 1.0)), axis=1)
        dist = ad.neg(ad.sum(log_pv * p_k, axis=1)) + ent

    def vfun(Z):
        return _outputs(v, Z, space)

    pen = jl_grad_norm_term(vfun, X, config.kappa, config.delta_fd, seed, config.unbiased_jl)
    pen = pen * config.penalty_coef
    J = ad.mean(dist + pen)
    d_mean, p_mean = float(dist.data.mean()), float(pen.data.mean())
    if not math.isfinite(J.item()):
        raise TrainingDiverged(f"non-finite timestep loss: distance={d_mean}, penalty={p_mean}")
    return J, d_mean, p_mean


def _softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def run_schedule(f0: Mlp, inputs: np.ndarray, config: SmoothConfig,
                 checkpoint_dir: str | Path | None = None,
                 on_report: Callable[[TimestepReport], None] | None = None
                 ) -> tuple[Mlp, list[TimestepReport]]:
    """Produce ``f^1 .. f^{n_T}`` and return the last one with per-step reports.

    Each ``f^k`` is written to ``checkpoint_dir/f{k}.json`` as soon as it
    exists, so an abort leaves every completed model on disk.
    """
    X = np.asarray(inputs, dtype=np.float64)
    opt = config.optim
    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt is not None:
        ckpt.mkdir(parents=True, exist_ok=True)
    mode = "probabilities" if config.output_space == "probabilities" else "logits"
    f_k = f0.copy(output_mode=mode)
    completed: list[Mlp] = []
    reports: list[TimestepReport] = []
    for k in range(config.n_timesteps):
        v = f_k.copy()
        rng = np.random.default_rng([opt.seed, 2, k])
        stats = {"d": 0.0, "p": 0.0, "n": 0}

        def batch_loss(idx, epoch):
            J, d, p = timestep_loss(v, f_k, X[idx], config, rng)
            if epoch == opt.epochs - 1:
                stats["d"] += d * len(idx)
                stats["p"] += p * len(idx)
                stats["n"] += len(idx)
            return J

        try:
            final = sgd_loop(v, len(X), batch_loss, opt, rng)
        except TrainingDiverged as exc:
            raise TimestepAborted(f"timestep {k} aborted: {exc}", completed, reports) from exc
        rep = TimestepReport(k, stats["d"] / stats["n"], stats["p"] / stats["n"], opt.epochs, final)
        reports.append(rep)
        v.provenance = f"heatsmooth timestep {k + 1}/{config.n_timesteps}"
        v.info = {"timestep": k + 1, "smooth_config": config.to_dict()}
        v.n_evals = 0
        completed.append(v)
        if ckpt is not None:
            v.save(ckpt / f"f{k + 1}.json")
            with open(ckpt / "reports.jsonl", "a") as fh:
                fh.write(rep.to_json() + "\n")
        if on_report is not None:
            on_report(rep)
        log.info("timestep %d: distance %.4g penalty %.4g loss %.4g", k, rep.distance, rep.penalty, final)
        f_k = v
    return f_k, reports
