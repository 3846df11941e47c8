"""Command-line front end: data, training, smoothing, certification, attacks, oracles, timing.

Every command writes its artifacts plus ``manifest.json`` into ``--out``.
Exit codes: 0 success, 2 usage or input error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy

from . import __version__
from . import attacks as at
from . import certify as ct
from . import data as dt
from . import heatsmooth as hs
from . import nn
from . import oracles as orc

log = logging.getLogger("heatsmoothing")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
SEED_ENV = "HEATSMOOTH_SEED"


class UsageError(Exception):
    """Bad flags or unreadable inputs (exit code 2)."""


class NumericalAbort(Exception):
    """A computation produced non-finite values or failed a stability check (exit code 3)."""


# helpers

def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_model(path) -> nn.Mlp:
    try:
        return nn.Mlp.load(path)
    except FileNotFoundError as exc:
        raise UsageError(f"model file not found: {path}") from exc
    except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"cannot read model {path}: {exc}") from exc


def _load_data(path, limit: int | None = None) -> dt.Dataset:
    try:
        ds = dt.load_dataset(path)
    except FileNotFoundError as exc:
        raise UsageError(f"dataset not found: {path}") from exc
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if limit is not None and limit < len(ds):
        ds = dt.Dataset(ds.inputs[:limit], ds.labels[:limit], ds.n_classes, ds.name, ds.seed, ds.split)
    return ds


def _parallel_map(fn: Callable[[int], object], n: int, threads: int) -> list:
    """Apply ``fn`` to ``0..n-1``; results come back in index order whatever the thread count."""
    if threads <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


class Run:
    """Output directory, seed and manifest bookkeeping for one invocation."""

    def __init__(self, args: argparse.Namespace, argv: Sequence[str]):
        self.args = args
        self.argv = list(argv)
        env = os.environ.get(SEED_ENV)
        if env is not None:
            try:
                self.seed = int(env)
            except ValueError as exc:
                raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
        else:
            self.seed = args.seed
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs: list[Path] = []
        self.counters: dict = {}
        self.results: dict = {}
        self.started = time.time()

    def path(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(p)
        return p

    def manifest(self, status: str, error: str | None = None) -> dict:
        params = {k: v for k, v in vars(self.args).items() if k != "func"}
        return {
            "command": self.args.command,
            "argv": self.argv,
            "params": params,
            "seed": self.seed,
            "seed_source": "env" if os.environ.get(SEED_ENV) is not None else "flag",
            "status": status,
            "error": error,
            "versions": {"heatsmoothing": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "python": platform.python_version()},
            "counters": self.counters,
            "results": self.results,
            "outputs": {str(p.relative_to(self.out)): _sha256(p) for p in self.outputs if p.exists()},
            "timing": {"started": self.started, "elapsed_s": time.time() - self.started},
        }

    def finish(self, status: str, error: str | None = None) -> None:
        _write_json(self.out / "manifest.json", self.manifest(status, error))


def _optim(args, seed: int) -> nn.OptimConfig:
    try:
        return nn.OptimConfig(learning_rate=args.lr, momentum=args.momentum, epochs=args.epochs,
                              batch_size=args.batch_size, seed=seed, clip_norm=args.clip_norm)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# commands

def cmd_make_data(run: Run) -> None:
    a = run.args
    if a.kind == "blobs":
        ds = dt.make_blobs(a.n, a.classes, a.dim, a.spread, seed=run.seed, split=a.split)
    else:
        ds = dt.make_step1d(a.n, a.boundary, seed=run.seed, outlier=a.outlier, split=a.split)
    dt.save_dataset(ds, run.path(a.name))
    run.results = {"n": len(ds), "n_classes": ds.n_classes, "dim": ds.dim}


def cmd_train_base(run: Run) -> None:
    a = run.args
    ds = _load_data(a.data)
    sizes = a.arch if a.arch[0] == ds.dim else [ds.dim] + a.arch
    if sizes[-1] < ds.n_classes:
        raise UsageError(f"architecture outputs {sizes[-1]} classes, dataset has {ds.n_classes}")
    try:
        model = nn.train_base(ds.inputs, ds.labels, sizes, _optim(a, run.seed), a.activation)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    model.save(run.path("model.json"))
    _write_json(run.path("metrics.json"), model.info)
    run.results = dict(model.info)


def cmd_smooth(run: Run) -> None:
    a = run.args
    f0 = _load_model(a.model)
    ds = _load_data(a.data)
    try:
        cfg = hs.SmoothConfig(sigma=a.sigma, lam=a.lam, n_timesteps=a.n_timesteps, kappa=a.kappa,
                              delta_fd=a.delta, loss_mode=a.loss_mode, unbiased_jl=a.unbiased_jl,
                              output_space=a.output_space, optim=_optim(a, run.seed))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ckpt = run.out / "checkpoints"
    reports_path = ckpt / "reports.jsonl"
    if reports_path.exists():
        reports_path.unlink()
    try:
        v, reports = hs.run_schedule(f0, ds.inputs, cfg, checkpoint_dir=ckpt)
    finally:
        for k in range(1, cfg.n_timesteps + 1):
            if (ckpt / f"f{k}.json").exists():
                run.path(f"checkpoints/f{k}.json")
        if reports_path.exists():
            run.path("checkpoints/reports.jsonl")
    v.save(run.path("model.json"))
    _write_json(run.path("reports.json"), [json.loads(r.to_json()) for r in reports])
    run.results = {"timesteps": len(reports), "final_distance": reports[-1].distance,
                   "final_penalty": reports[-1].penalty}


def _radii(a) -> np.ndarray:
    top = a.radius_max if a.radius_max is not None else 4.0 * a.sigma
    return np.linspace(0.0, top, a.radius_count)


def cmd_certify(run: Run) -> None:
    a = run.args
    model = _load_model(a.model)
    ds = _load_data(a.data, a.max_examples)
    method = {"lbound": "l_bound", "det": "deterministic", "cohen": "cohen"}[a.method]
    if method in ("l_bound", "deterministic") and model.output_mode != "probabilities":
        raise UsageError(f"method {a.method} needs a probabilities-mode model; "
                         f"{a.model} is in {model.output_mode} mode")
    model.n_evals = 0

    def one(i: int) -> ct.CertResult:
        x, y = ds.inputs[i], int(ds.labels[i])
        if method == "l_bound":
            return ct.lbound_certify(model, x, a.sigma, label=y, example_id=i)
        if method == "deterministic":
            return ct.deterministic_certify(model, x, a.sigma, label=y, example_id=i)
        return ct.cohen_certify(model, x, a.sigma, a.n0, a.n, a.alpha, seed=[run.seed, i],
                                label=y, example_id=i, batch_size=a.batch_size)

    results = _parallel_map(one, len(ds), a.threads)
    ct.write_results_csv(results, run.path("results.csv"))
    curve = ct.certified_accuracy_curve(results, _radii(a), a.abstain)
    ct.write_curve_csv(curve, run.path("curve.csv"))
    run.counters = {"forward_passes": model.n_evals, "examples": len(ds),
                    "forward_passes_per_example": model.n_evals / len(ds)}
    run.results = {"method": method, "clean_accuracy": curve[0][1],
                   "abstained": sum(r.abstained for r in results)}


def cmd_attack(run: Run) -> None:
    a = run.args
    model = _load_model(a.model)
    ds = _load_data(a.data, a.max_examples)
    try:
        cfg = at.AttackConfig(steps=a.steps, epsilon=a.epsilon, alpha=a.alpha, n_noise=a.n_noise,
                              sigma=a.sigma, ddn_gamma=a.gamma, ddn_init=a.ddn_init, topk=a.topk,
                              seed=run.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if a.topk >= model.n_classes:
        raise UsageError(f"topk={a.topk} must be below the number of classes ({model.n_classes})")
    target = model
    if a.oracle_n:
        target = at.GaussianAverage(model, a.sigma, a.oracle_n, seed=run.seed)
    fn = at.pgd_attack if a.attack == "pgd" else at.ddn_attack
    results = _parallel_map(lambda i: fn(target, ds.inputs[i], int(ds.labels[i]), cfg, example_id=i),
                            len(ds), a.threads)
    at.write_results_csv(results, run.path("results.csv"))
    top = a.curve_max if a.curve_max is not None else a.epsilon
    curve = at.attack_curve(results, np.linspace(0.0, top, a.curve_count))
    ct.write_curve_csv(curve, run.path("curve.csv"), header=("norm", "fraction_attacked"))
    metrics = at.distance_metrics(results)
    metrics["zero_gradient_steps"] = int(sum(r.zero_grad_steps for r in results))
    _write_json(run.path("metrics.json"), metrics)
    run.results = metrics


_FUNCTIONS = {
    "sin": (np.sin, np.cos),
    "gaussian": (lambda x: np.exp(-0.5 * np.asarray(x) ** 2) / math.sqrt(2 * math.pi),
                 lambda x: -np.asarray(x) * np.exp(-0.5 * np.asarray(x) ** 2) / math.sqrt(2 * math.pi)),
    "tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
}


def _scalar_field(a) -> Callable[[np.ndarray], np.ndarray]:
    """``(m, dim) -> (m,)`` from either a model component or a named function."""
    if a.model:
        model = _load_model(a.model)
        if not 0 <= a.component < model.n_classes:
            raise UsageError(f"component {a.component} out of range for {model.n_classes} classes")
        return lambda P: model.probabilities(P)[:, a.component]
    g = _FUNCTIONS[a.function][0]
    return lambda P: g(P[:, 0]) if P.shape[1] == 1 else np.prod(g(P), axis=1)


def cmd_oracle(run: Run) -> None:
    a = run.args
    sub = a.oracle
    if sub == "heat-grid":
        f = _scalar_field(a)
        box = [(a.box[0], a.box[1])] * a.dim
        u0 = orc.grid_from_function(f, box, a.dx)
        try:
            sol = orc.heat_solve_grid(u0, a.sigma, 1.0, a.dt)
        except ValueError as exc:
            raise NumericalAbort(str(exc)) from exc
        ker = orc.kernel_convolve_grid(u0, a.sigma)
        sol.to_csv(run.path("heat_grid.csv"))
        linf = float(np.max(np.abs(sol.values - ker.values)))
        run.results = {"linf_vs_kernel": linf, "mass_u0": float(u0.values.sum()),
                       "mass_solution": float(sol.values.sum()), "nodes": int(u0.values.size),
                       "passed": linf < a.tol}
    elif sub == "mc-average":
        f = _scalar_field(a)
        rows = []
        for i, x in enumerate(a.x):
            est = orc.mc_gauss_average(f, [x] * a.dim, a.sigma, a.n, seed=np.random.default_rng([run.seed, i]))
            rows.append({"x": x, "mean": float(np.ravel(est.mean)[0]),
                         "std_error": float(np.ravel(est.std_error)[0]), "n": a.n})
        run.results = {"points": rows}
    elif sub == "bishop":
        f, fp = _FUNCTIONS[a.function]
        rows = []
        for s in a.sigmas:
            lhs, rhs, res = orc.bishop_check(f, a.y, a.x0, s, fprime=fp)
            rows.append({"sigma": s, "lhs": lhs, "rhs": rhs, "residual": res})
        run.results = {"function": a.function, "x": a.x0, "y": a.y, "rows": rows}
        if len(rows) >= 2 and rows[1]["residual"] != 0:
            run.results["ratio_first_two"] = rows[0]["residual"] / rows[1]["residual"]
    else:
        f = _scalar_field(a)
        if a.dim != 1:
            raise UsageError("equivalence runs on 1D grids")
        pts = np.arange(a.mc_lo, a.mc_hi + 1e-9, a.mc_step)
        try:
            rep = orc.equivalence_check(f, (a.box[0], a.box[1]), a.dx, a.sigma, pts, a.n,
                                        seed=run.seed, kernel_tol=a.tol)
        except ValueError as exc:
            raise NumericalAbort(str(exc)) from exc
        run.results = rep.to_dict()
        print("PASS" if rep.passed else "FAIL",
              f"linf={rep.linf_pde_vs_kernel:.3e}",
              f"max_mc_ratio={max(e / t for e, t in zip(rep.mc_abs_error, rep.mc_tol)):.3f}")
    _write_json(run.path(f"oracle_{sub}.json"), run.results)


def _timed(fn: Callable[[], object], repeats: int) -> float:
    t = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t) / repeats


def cmd_bench(run: Run) -> None:
    a = run.args
    model = _load_model(a.model)
    base = _load_model(a.base) if a.base else model
    ds = _load_data(a.data, a.max_examples)
    smooth = model.copy(output_mode="probabilities")
    rows = []
    for i, x in enumerate(ds.inputs):
        rng = np.random.default_rng([run.seed, i])
        smooth.n_evals = 0
        det_cls = _timed(lambda: smooth.classify(x[None, :]), a.repeats)
        det_cert = _timed(lambda: ct.deterministic_certify(smooth, x, a.sigma), a.repeats)
        det_passes = smooth.n_evals // (2 * a.repeats)

        base.n_evals = 0
        sto_cls = _timed(lambda: np.argmax(ct.sample_counts(base, x, a.sigma, a.n0 + a.n, rng,
                                                            a.batch_size)), a.repeats)
        sto_cert = _timed(lambda: ct.cohen_certify(base, x, a.sigma, a.n0, a.n, a.alpha, seed=rng,
                                                   batch_size=a.batch_size), a.repeats)
        sto_passes = base.n_evals // (2 * a.repeats)
        rows.append((det_cls, det_cert, det_passes, sto_cls, sto_cert, sto_passes))
    r = np.array(rows, dtype=np.float64)
    report = {
        "deterministic": {"classification_s": float(r[:, 0].mean()), "certification_s": float(r[:, 1].mean()),
                          "forward_passes": int(r[0, 2])},
        "stochastic": {"classification_s": float(r[:, 3].mean()), "certification_s": float(r[:, 4].mean()),
                       "forward_passes": int(r[0, 5]), "n0": a.n0, "n": a.n, "batch_size": a.batch_size},
        "examples": len(ds),
        "repeats": a.repeats,
    }
    report["ratio_classification"] = report["stochastic"]["classification_s"] / report["deterministic"]["classification_s"]
    report["ratio_certification"] = report["stochastic"]["certification_s"] / report["deterministic"]["certification_s"]
    _write_json(run.path("bench.json"), report)
    run.counters = {"deterministic_passes": report["deterministic"]["forward_passes"],
                    "stochastic_passes": report["stochastic"]["forward_passes"]}
    run.results = report


# parser

def _add_optim(p: argparse.ArgumentParser, lr: float, epochs: int, clip: float | None) -> None:
    g = p.add_argument_group("optimizer")
    g.add_argument("--lr", type=float, default=lr)
    g.add_argument("--momentum", type=float, default=0.9)
    g.add_argument("--epochs", type=int, default=epochs)
    g.add_argument("--batch-size", type=int, default=64)
    g.add_argument("--clip-norm", type=float, default=clip)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="heatsmoothing", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="run", help="output directory (default: ./run)")
    common.add_argument("--seed", type=int, default=0, help=f"global seed; {SEED_ENV} overrides it")
    common.add_argument("--threads", type=int, default=1, help="worker threads for per-example work")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("make-data", parents=[common], help="generate a synthetic dataset CSV")
    q.add_argument("kind", choices=("blobs", "step1d"))
    q.add_argument("--n", type=int, default=200, help="points per class (blobs) or total (step1d)")
    q.add_argument("--classes", type=int, default=3)
    q.add_argument("--dim", type=int, default=2)
    q.add_argument("--spread", type=float, default=0.4)
    q.add_argument("--boundary", type=float, default=0.0)
    q.add_argument("--outlier", type=float, default=-0.75)
    q.add_argument("--split", choices=("train", "test"), default="train")
    q.add_argument("--name", default="data.csv")
    q.set_defaults(func=cmd_make_data)

    q = sub.add_parser("train-base", parents=[common], help="train the base classifier")
    q.add_argument("--data", required=True)
    q.add_argument("--arch", type=_ints, default=[64, 64, 3],
                   help="layer sizes, with or without the input dim (default 64,64,3)")
    q.add_argument("--activation", choices=nn.ACTIVATIONS, default="relu")
    _add_optim(q, 0.05, 100, None)
    q.set_defaults(func=cmd_train_base)

    q = sub.add_parser("smooth", parents=[common], help="run the HeatSmoothing schedule")
    q.add_argument("--model", required=True)
    q.add_argument("--data", required=True, help="dataset whose inputs drive smoothing (labels unused)")
    q.add_argument("--sigma", type=float, default=0.1)
    q.add_argument("--lam", type=float, default=None, help="default 5 (quadratic) or 100 (kl)")
    q.add_argument("--n-timesteps", type=int, default=5)
    q.add_argument("--kappa", type=int, default=10)
    q.add_argument("--delta", type=float, default=0.1)
    q.add_argument("--loss-mode", choices=hs.LOSS_MODES, default="quadratic")
    q.add_argument("--unbiased-jl", action="store_true")
    q.add_argument("--output-space", choices=("probabilities", "logits"), default="probabilities")
    _add_optim(q, 0.01, 20, 5.0)
    q.set_defaults(func=cmd_smooth)

    q = sub.add_parser("certify", parents=[common], help="certify every example of a dataset")
    q.add_argument("--model", required=True)
    q.add_argument("--data", required=True)
    q.add_argument("--method", choices=("lbound", "det", "cohen"), required=True)
    q.add_argument("--sigma", type=float, required=True)
    q.add_argument("--n0", type=int, default=100)
    q.add_argument("--n", type=int, default=10_000)
    q.add_argument("--alpha", type=float, default=0.001)
    q.add_argument("--batch-size", type=int, default=10_000)
    q.add_argument("--abstain", choices=("count", "exclude"), default="count")
    q.add_argument("--radius-max", type=float, default=None, help="curve upper radius (default 4 sigma)")
    q.add_argument("--radius-count", type=int, default=81)
    q.add_argument("--max-examples", type=int, default=None)
    q.set_defaults(func=cmd_certify)

    q = sub.add_parser("attack", parents=[common], help="PGD or DDN against every example")
    q.add_argument("--model", required=True)
    q.add_argument("--data", required=True)
    q.add_argument("--attack", choices=("pgd", "ddn"), required=True)
    q.add_argument("--steps", type=int, default=20)
    q.add_argument("--epsilon", type=float, default=4.0)
    q.add_argument("--alpha", type=float, default=None, help="step size (default 2 epsilon / steps)")
    q.add_argument("--n-noise", type=int, default=0, help="noise ensemble size for the stochastic step")
    q.add_argument("--sigma", type=float, default=0.0)
    q.add_argument("--gamma", type=float, default=0.05)
    q.add_argument("--ddn-init", type=float, default=1.0)
    q.add_argument("--topk", type=int, default=1)
    q.add_argument("--oracle-n", type=int, default=0,
                   help="attack the fixed-draw Gaussian average of the model with this many draws")
    q.add_argument("--curve-max", type=float, default=None)
    q.add_argument("--curve-count", type=int, default=81)
    q.add_argument("--max-examples", type=int, default=None)
    q.set_defaults(func=cmd_attack)

    q = sub.add_parser("oracle", parents=[common], help="numerical checks of Gaussian averaging")
    q.add_argument("oracle", choices=("heat-grid", "mc-average", "bishop", "equivalence"))
    q.add_argument("--model", default=None, help="use a class probability of this model as the field")
    q.add_argument("--component", type=int, default=0)
    q.add_argument("--function", choices=sorted(_FUNCTIONS), default="gaussian")
    q.add_argument("--sigma", type=float, default=0.5)
    q.add_argument("--sigmas", type=_floats, default=[0.1, 0.05], help="bishop: sigma values")
    q.add_argument("--dim", type=int, default=1)
    q.add_argument("--box", type=_floats, default=[-8.0, 8.0])
    q.add_argument("--dx", type=float, default=0.01)
    q.add_argument("--dt", type=float, default=None)
    q.add_argument("--tol", type=float, default=1e-3)
    q.add_argument("--n", type=int, default=100_000, help="Monte-Carlo samples")
    q.add_argument("--x", type=_floats, default=[0.0], help="mc-average: evaluation points")
    q.add_argument("--x0", type=float, default=0.3, help="bishop: evaluation point")
    q.add_argument("--y", type=float, default=None, help="bishop: target (default f(x0))")
    q.add_argument("--mc-lo", type=float, default=-4.0)
    q.add_argument("--mc-hi", type=float, default=4.0)
    q.add_argument("--mc-step", type=float, default=0.5)
    q.set_defaults(func=cmd_oracle)

    q = sub.add_parser("bench", parents=[common], help="time deterministic vs sampled inference")
    q.add_argument("--model", required=True, help="smoothed model (deterministic path)")
    q.add_argument("--base", default=None, help="base model for the sampled path (default: --model)")
    q.add_argument("--data", required=True)
    q.add_argument("--sigma", type=float, default=0.25)
    q.add_argument("--n0", type=int, default=10)
    q.add_argument("--n", type=int, default=100)
    q.add_argument("--alpha", type=float, default=0.001)
    q.add_argument("--batch-size", type=int, default=1,
                   help="noisy queries per forward call on the sampled path (default 1)")
    q.add_argument("--repeats", type=int, default=3)
    q.add_argument("--max-examples", type=int, default=20)
    q.set_defaults(func=cmd_bench)
    return p


def _validate(args) -> None:
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    if args.command == "oracle":
        if len(args.box) != 2 or args.box[1] <= args.box[0]:
            raise UsageError("--box needs two increasing numbers")
        if args.oracle == "bishop" and args.y is None:
            args.y = float(_FUNCTIONS[args.function][0](args.x0))
        if args.dim not in (1, 2):
            raise UsageError("--dim must be 1 or 2")
    for name in ("max_examples", "n", "n0", "repeats", "radius_count", "curve_count"):
        val = getattr(args, name, None)
        if val is not None and val < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be >= 1")


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = None
    try:
        _validate(args)
        run = Run(args, argv)
        args.func(run)
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if run is not None:
            run.finish("usage_error", str(exc))
        return EXIT_USAGE
    except (NumericalAbort, nn.TrainingDiverged, hs.TimestepAborted, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        if run is not None:
            run.finish("numerical_abort", str(exc))
        return EXIT_NUMERIC
    run.finish("ok")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
