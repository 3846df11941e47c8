"""Certified l2 radii: Lipschitz bound, single-query deterministic, and sampled.

Models here only need a ``predict(X) -> scores`` method on ``(m, d)`` arrays;
classification is the argmax of the scores with ties broken toward the lowest
class index.  Every row passed to ``predict`` counts as one model evaluation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Protocol, Sequence

import numpy as np
from scipy.stats import beta

ABSTAIN = -1
METHODS = ("l_bound", "deterministic", "cohen")

# coefficients of Acklam's rational approximation to the normal quantile
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


class Scorer(Protocol):
    def predict(self, x: np.ndarray) -> np.ndarray: ...


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def normal_inv_cdf(p: float) -> float:
    """Standard normal quantile, accurate to ~1e-15 in ``Phi``.

    Acklam's rational approximation followed by one Newton step against an
    erfc-based ``Phi``.
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((( _C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -((((( _C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    # refine on the tail we can represent accurately
    if x <= 0:
        err = normal_cdf(x) - p
    else:
        err = -(0.5 * math.erfc(x / math.sqrt(2.0)) - (1.0 - p))
    return x - err * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)


def clopper_pearson_lower(successes: int, trials: int, alpha: float) -> float:
    """One-sided ``1 - alpha`` lower confidence bound on a binomial proportion."""
    if trials < 1 or not 0 <= successes <= trials:
        raise ValueError(f"need 0 <= successes <= trials, trials >= 1; got {successes}/{trials}")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if successes == 0:
        return 0.0
    if successes == trials:
        return alpha ** (1.0 / trials)
    return float(beta.ppf(alpha, successes, trials - successes + 1))


def l_bound(v_out, sigma: float, k: int = 1) -> float:
    """Minimum l2 perturbation that can reorder the k-th and (k+1)-th largest outputs."""
    v = np.asarray(v_out, dtype=np.float64).ravel()
    if v.size < 2:
        raise ValueError("need at least two outputs")
    if np.any(v < 0) or np.any(v > 1):
        raise ValueError("outputs must lie in [0, 1]")
    if abs(v.sum() - 1.0) > 1e-9:
        raise ValueError(f"outputs must sum to 1, got {v.sum():.12g}")
    if not 1 <= k < v.size:
        raise ValueError(f"k must be in 1..{v.size - 1}")
    s = np.sort(v)[::-1]
    return sigma * math.sqrt(math.pi / 2.0) * float(s[k - 1] - s[k])


@dataclass
class CertResult:
    example_id: int
    predicted: int
    radius: float
    method: str
    sigma: float
    correct: bool
    n_evals: int = 0

    @property
    def abstained(self) -> bool:
        return self.predicted == ABSTAIN


def _evaluate(model: Scorer, X: np.ndarray) -> np.ndarray:
    return np.asarray(model.predict(X), dtype=np.float64)


def _is_correct(pred: int, label: int | None) -> bool:
    return label is not None and pred != ABSTAIN and pred == int(label)


def lbound_certify(v: Scorer, x, sigma: float, label: int | None = None,
                   example_id: int = 0) -> CertResult:
    out = _evaluate(v, np.atleast_2d(np.asarray(x, dtype=np.float64)))[0]
    pred = int(np.argmax(out))
    return CertResult(example_id, pred, l_bound(out, sigma, 1), "l_bound", sigma,
                      _is_correct(pred, label), 1)


# largest p strictly below 1; keeps the quantile finite for saturated outputs
_P_MAX = math.nextafter(1.0, 0.0)


def deterministic_certify(v: Scorer, x, sigma: float, label: int | None = None,
                          example_id: int = 0) -> CertResult:
    """Radius ``sigma * Phi^-1(p1)`` from the top output of one evaluation of ``v``.

    ``v`` must output probabilities.  Abstains when ``p1 <= 1/2``.
    """
    p = _evaluate(v, np.atleast_2d(np.asarray(x, dtype=np.float64)))[0]
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("deterministic certification needs probability outputs")
    pred = int(np.argmax(p))
    p1 = min(float(p[pred]), _P_MAX)
    if p1 <= 0.5:
        return CertResult(example_id, ABSTAIN, 0.0, "deterministic", sigma, False, 1)
    return CertResult(example_id, pred, sigma * normal_inv_cdf(p1), "deterministic", sigma,
                      _is_correct(pred, label), 1)


def sample_counts(model: Scorer, x: np.ndarray, sigma: float, n: int,
                  rng: np.random.Generator, batch_size: int = 10_000) -> np.ndarray:
    """Class vote counts of ``model`` over ``n`` Gaussian perturbations of ``x``."""
    x = np.asarray(x, dtype=np.float64).ravel()
    counts = None
    remaining = n
    while remaining > 0:
        m = min(batch_size, remaining)
        noisy = x + sigma * rng.standard_normal((m, x.size))
        scores = _evaluate(model, noisy)
        if counts is None:
            counts = np.zeros(scores.shape[1], dtype=np.int64)
        counts += np.bincount(np.argmax(scores, axis=1), minlength=counts.size)
        remaining -= m
    return counts


def cohen_certify(f: Scorer, x, sigma: float, n0: int = 100, n: int = 10_000,
                  alpha: float = 0.001, seed=None, label: int | None = None,
                  example_id: int = 0, batch_size: int = 10_000) -> CertResult:
    """Sampled certification of the Gaussian-vote classifier built on ``f``.

    Select the majority class over ``n0`` draws, count it over ``n`` fresh
    draws, bound its probability from below, and certify ``sigma *
    Phi^-1(p_lower)`` if that bound exceeds 1/2.
    """
    if n0 < 1 or n < 1:
        raise ValueError("n0 and n must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    c_hat = int(np.argmax(sample_counts(f, x, sigma, n0, rng, batch_size)))
    n_a = int(sample_counts(f, x, sigma, n, rng, batch_size)[c_hat])
    p_lower = clopper_pearson_lower(n_a, n, alpha)
    if p_lower <= 0.5:
        return CertResult(example_id, ABSTAIN, 0.0, "cohen", sigma, False, n0 + n)
    return CertResult(example_id, c_hat, sigma * normal_inv_cdf(p_lower), "cohen", sigma,
                      _is_correct(c_hat, label), n0 + n)


def certified_accuracy_curve(results: Sequence[CertResult], radii: Iterable[float],
                             abstain: str = "count") -> list[tuple[float, float]]:
    """Fraction of examples classified correctly with radius at least ``r``.

    ``abstain="count"`` keeps abstentions in the denominator (as failures);
    ``"exclude"`` drops them from it.
    """
    if not results:
        raise ValueError("no results")
    if abstain not in ("count", "exclude"):
        raise ValueError("abstain must be 'count' or 'exclude'")
    radius = np.array([r.radius for r in results])
    ok = np.array([r.correct and not r.abstained for r in results])
    total = len(results) if abstain == "count" else sum(not r.abstained for r in results)
    curve = []
    for r in radii:
        hits = int(np.sum(ok & (radius >= r)))
        curve.append((float(r), hits / total if total else 0.0))
    return curve


def write_results_csv(results: Sequence[CertResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "method", "class", "radius", "abstain", "correct"])
        for r in sorted(results, key=lambda r: r.example_id):
            w.writerow([r.example_id, r.method, r.predicted, format(r.radius, ".17g"),
                        int(r.abstained), int(r.correct)])


def write_curve_csv(curve: Sequence[tuple[float, float]], path,
                    header: tuple[str, str] = ("radius", "certified_accuracy")) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r, a in curve:
            w.writerow([format(r, ".17g"), format(a, ".17g")])


def result_dict(r: CertResult) -> dict:
    d = asdict(r)
    d["abstain"] = r.abstained
    return d
