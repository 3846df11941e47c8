"""l2 PGD and DDN attacks, with the noise-ensemble gradient for smoothed models.

A model is anything callable on an autodiff tensor of shape ``(m, d)`` that
returns ``(m, Nc)`` outputs, with an ``output_mode`` of ``"logits"`` or
``"probabilities"`` and a numpy ``predict``.  The attacked loss is the
cross-entropy of those outputs against the label.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .nn import Mlp

ZERO_GRAD_TOL = 1e-30


@dataclass
class AttackConfig:
    steps: int = 20
    epsilon: float = 4.0
    alpha: float | None = None
    n_noise: int = 0
    sigma: float = 0.0
    ddn_gamma: float = 0.05
    ddn_init: float = 1.0
    topk: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.alpha is None:
            self.alpha = 2.0 * self.epsilon / self.steps
        if self.steps < 1 or self.epsilon <= 0 or self.alpha <= 0:
            raise ValueError("steps, epsilon and alpha must be positive")
        if self.n_noise < 0 or self.sigma < 0:
            raise ValueError("n_noise and sigma must be non-negative")
        if not 0 <= self.ddn_gamma < 1:
            raise ValueError("ddn_gamma must be in [0, 1)")


@dataclass
class AttackResult:
    example_id: int
    success: bool
    norm: float
    steps: int
    attack: str
    zero_grad_steps: int = 0


class GaussianAverage:
    """``x -> mean_i softmax(f(x + eta_i))`` over a fixed set of noise draws.

    Reusing the same draws everywhere makes this a deterministic, exactly
    differentiable stand-in for the Gaussian average of ``f``.
    """

    output_mode = "probabilities"

    def __init__(self, base: Mlp, sigma: float, n: int, seed=0):
        self.base = base
        self.sigma = sigma
        self.noise = sigma * np.random.default_rng(seed).standard_normal((n, base.input_dim))

    @property
    def n_classes(self) -> int:
        return self.base.n_classes

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        X = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
        if X.data.ndim == 1:
            X = ad.reshape(X, (1, -1))
        m, d = X.shape
        n = len(self.noise)
        # rows ordered (noise draw, example)
        tiled = ad.reshape(ad.matmul(ad.Tensor(np.ones((n, 1))), ad.reshape(X, (1, m * d))), (n * m, d))
        P = ad.softmax(self.base.logits(tiled + ad.Tensor(np.repeat(self.noise, m, axis=0))))
        avg = ad.mean(ad.reshape(P, (n, m * self.n_classes)), axis=0)
        return ad.reshape(avg, (m, self.n_classes))

    def log_probs(self, x: ad.Tensor) -> ad.Tensor:
        """``log`` of the averaged probabilities, via log-sum-exp over draws."""
        X = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
        if X.data.ndim == 1:
            X = ad.reshape(X, (1, -1))
        m, d = X.shape
        n = len(self.noise)
        tiled = ad.reshape(ad.matmul(ad.Tensor(np.ones((n, 1))), ad.reshape(X, (1, m * d))), (n * m, d))
        lp = ad.log_softmax(self.base.logits(tiled + ad.Tensor(np.repeat(self.noise, m, axis=0))))
        lse = ad.logsumexp(ad.reshape(lp, (n, m * self.n_classes)), axis=0)
        return ad.reshape(lse - math.log(n), (m, self.n_classes))

    def predict_with_error(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        means, errs = [], []
        for x in X:
            P = self.base.probabilities(x + self.noise)
            means.append(P.mean(axis=0))
            errs.append(P.std(axis=0, ddof=1) / math.sqrt(len(P)))
        return np.array(means), np.array(errs)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.predict_with_error(X)[0]


def _labels_loss(model, inp: ad.Tensor, y: int) -> ad.Tensor:
    """Summed cross-entropy of the model's class distribution against ``y``."""
    if hasattr(model, "log_probs"):
        lp = model.log_probs(inp)
    elif getattr(model, "output_mode", "logits") == "probabilities":
        lp = ad.log(model(inp))
    else:
        lp = ad.log_softmax(model(inp))
    onehot = np.zeros(lp.shape)
    onehot[:, y] = 1.0
    return ad.neg(ad.sum(lp * onehot))


def attack_gradient(model, x: np.ndarray, y: int, delta: np.ndarray, n_noise: int = 0,
                    sigma: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
    """Gradient of the (summed) cross-entropy at ``x + delta`` with respect to ``delta``.

    With ``n_noise > 0`` the loss is summed over ``x + delta + eta_i``.
    """
    d = ad.Tensor(delta, requires_grad=True)
    if n_noise == 0:
        inp = ad.reshape(ad.Tensor(x) + d, (1, -1))
    else:
        rng = rng if rng is not None else np.random.default_rng()
        eta = sigma * rng.standard_normal((n_noise, x.size))
        inp = ad.Tensor(x[None, :] + eta) + d
    loss = _labels_loss(model, inp, y)
    return ad.grad(loss, [d])[d]


def pgd_step(model, x, y: int, delta, alpha: float, n_noise: int = 0, sigma: float = 0.0,
             seed=None) -> tuple[np.ndarray, bool]:
    """Normalized ascent step ``alpha * g / |g|``; returns ``(step, zero_gradient)``.

    A vanishing gradient yields a zero step and ``zero_gradient=True``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = np.asarray(x, dtype=np.float64).ravel()
    g = attack_gradient(model, x, y, np.asarray(delta, dtype=np.float64).ravel(), n_noise, sigma, rng)
    nrm = float(np.linalg.norm(g))
    if nrm <= ZERO_GRAD_TOL or not math.isfinite(nrm):
        return np.zeros_like(x), True
    return alpha * g / nrm, False


def _project(delta: np.ndarray, radius: float) -> np.ndarray:
    nrm = float(np.linalg.norm(delta))
    return delta if nrm <= radius else delta * (radius / nrm)


def is_adversarial(scores: np.ndarray, y: int, topk: int = 1) -> bool:
    if topk == 1:
        return int(np.argmax(scores)) != y
    # top-k by descending score, ties to the lower index
    order = np.lexsort((np.arange(scores.size), -scores))
    return y not in order[:topk]


def _judge(model, predict_fn):
    if predict_fn is not None:
        return predict_fn
    return lambda z: np.asarray(model.predict(z[None, :]))[0]


def pgd_attack(model, x, y: int, config: AttackConfig, example_id: int = 0,
               predict_fn: Callable[[np.ndarray], np.ndarray] | None = None) -> AttackResult:
    """l2 PGD with early stopping on success.

    ``predict_fn(x) -> scores`` decides success (default: ``model.predict``).
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    judge = _judge(model, predict_fn)
    rng = np.random.default_rng([config.seed, example_id])
    delta = np.zeros_like(x)
    if is_adversarial(judge(x), y, config.topk):
        return AttackResult(example_id, True, 0.0, 0, "pgd")
    zero = 0
    for t in range(1, config.steps + 1):
        g, flat = pgd_step(model, x, y, delta, config.alpha, config.n_noise, config.sigma, rng)
        zero += flat
        delta = _project(delta + g, config.epsilon)
        if is_adversarial(judge(x + delta), y, config.topk):
            return AttackResult(example_id, True, float(np.linalg.norm(delta)), t, "pgd", zero)
    return AttackResult(example_id, False, float(np.linalg.norm(delta)), config.steps, "pgd", zero)


def ddn_attack(model, x, y: int, config: AttackConfig, example_id: int = 0,
               predict_fn: Callable[[np.ndarray], np.ndarray] | None = None) -> AttackResult:
    """Decoupled direction and norm.

    Each iteration takes a normalized gradient step, then rescales the
    perturbation to the current budget.  The budget shrinks by ``(1 - gamma)``
    after an adversarial iterate and grows by ``(1 + gamma)`` otherwise
    (capped at ``epsilon``).  Reports the smallest adversarial norm seen.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    judge = _judge(model, predict_fn)
    rng = np.random.default_rng([config.seed, example_id])
    if is_adversarial(judge(x), y, config.topk):
        return AttackResult(example_id, True, 0.0, 0, "ddn")
    gamma = config.ddn_gamma
    budget = min(config.ddn_init, config.epsilon)
    delta = np.zeros_like(x)
    current = delta.copy()
    best = math.inf
    zero = 0
    adv = False
    for t in range(1, config.steps + 1):
        g, flat = pgd_step(model, x, y, current, config.alpha, config.n_noise, config.sigma, rng)
        zero += flat
        delta = current + g
        if t > 1:
            budget = budget * (1 - gamma) if adv else min(budget * (1 + gamma), config.epsilon)
        nrm = float(np.linalg.norm(delta))
        current = delta * (budget / nrm) if nrm > 0 else delta
        adv = is_adversarial(judge(x + current), y, config.topk)
        if adv:
            best = min(best, float(np.linalg.norm(current)))
    if math.isfinite(best):
        return AttackResult(example_id, True, best, config.steps, "ddn", zero)
    return AttackResult(example_id, False, float(np.linalg.norm(current)), config.steps, "ddn", zero)


def distance_metrics(results: Sequence[AttackResult]) -> dict:
    """Median and mean perturbation norm over successful attacks."""
    norms = [r.norm for r in results if r.success]
    if not norms:
        return {"median": None, "mean": None, "n_success": 0, "n_total": len(results), "empty": True}
    return {"median": float(np.median(norms)), "mean": float(np.mean(norms)),
            "n_success": len(norms), "n_total": len(results), "empty": False}


def attack_curve(results: Sequence[AttackResult], norms: Sequence[float]) -> list[tuple[float, float]]:
    """Fraction of all examples successfully attacked within each l2 distance."""
    if not results:
        raise ValueError("no results")
    ok = np.array([r.success for r in results])
    dist = np.array([r.norm for r in results])
    return [(float(r), float(np.mean(ok & (dist <= r)))) for r in norms]


def write_results_csv(results: Sequence[AttackResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "attack", "success", "norm", "steps"])
        for r in sorted(results, key=lambda r: r.example_id):
            w.writerow([r.example_id, r.attack, int(r.success), format(r.norm, ".17g"), r.steps])
