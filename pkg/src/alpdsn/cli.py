"""Command-line runner: ``solve``, ``check`` and ``oracle`` driven by a JSON config.

A config names one problem and one solver::

    {
      "problem": "image-deblur",
      "params": {"n": 32, "lam": 0.01},
      "solver": "alpdsn",
      "newton": {"sigma": 3.0},
      "seed": 0
    }

Unknown keys anywhere in the document are rejected. ``solve`` writes
``trace.csv`` and ``report.json`` to the output directory; ``oracle`` runs a
long PD3O solve and writes ``oracle.json`` and ``u_star.bin``. Exit codes:
0 converged, 2 iteration limit, 3 inner solver failure, 1 configuration or
I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import platform
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .alcore import tiny_problem
from .apps.ctnn import CTNNProblem, CTNNProblemSpec, make_ctnn_instance
from .apps.image import ImageProblem, ImageProblemSpec, make_deblur_instance, make_dense_instance
from .apps.io import atomic_write, read_image
from .apps.metrics import metrics
from .firstorder import UnsupportedStructure, run_first_order
from .linop import read_sparse_triplet
from .newton import NewtonConfig, alpdsn
from .tsvd import read_tensor, write_tensor

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "build_problem", "run", "run_oracle", "main"]

EXIT_CONVERGED = 0
EXIT_ERROR = 1
EXIT_MAX_ITERS = 2
EXIT_INNER_FAILURE = 3
STATUS_EXIT = {"converged": EXIT_CONVERGED, "max-iters": EXIT_MAX_ITERS, "inner-failure": EXIT_INNER_FAILURE}

TRACE_COLUMNS = ["k", "res_norm", "tau", "rule", "inner_iters", "matvecs", "secs"]

PROBLEMS = ("image-deblur", "image-generic-A", "ctnn-synthetic", "ctnn-file", "tiny-qp")
SOLVERS = ("alpdsn", "pd3o", "condat-vu")

# accepted keys and defaults of each problem's "params" block
PROBLEM_PARAMS = {
    "tiny-qp": {},
    "image-deblur": {
        "n": 32,
        "image_path": None,
        "lam": 0.01,
        "kernel_size": 3,
        "kernel_std": 0.5,
        "noise": 1.0,
        "box": [0.0, 255.0],
    },
    "image-generic-A": {
        "matrix_path": None,
        "b_path": None,
        "image_shape": [10, 10],
        "m": 60,
        "lam": 1.0,
        "noise": 1.0,
        "box": [0.0, 255.0],
    },
    "ctnn-synthetic": {
        "shape": [20, 25, 5],
        "rank": 3,
        "sampling": 0.3,
        "beta": 0.01,
        "rho1": 0.1,
        "m": 1.0,
        "pilot_noise": 0.05,
        "correction": "smooth",
        "mu": None,
    },
    "ctnn-file": {
        "shape": None,
        "omega_path": None,
        "y_path": None,
        "F_path": None,
        "truth_path": None,
        "mu": None,
        "rho1": 0.1,
        "c": None,
        "m": 1.0,
        "weight": 1.0,
    },
}
PATH_PARAMS = ("image_path", "matrix_path", "b_path", "omega_path", "y_path", "F_path", "truth_path")

FIRST_ORDER_KEYS = {"iters": 10000, "target": None, "gamma": None, "delta": None, "tau": None}
REFERENCE_KEYS = {"f_star": None, "u_star_path": None, "oracle_dir": None}
OUTPUT_KEYS = {"out_dir": ".", "timing": False}
NEWTON_KEYS = {f.name for f in fields(NewtonConfig)} - {"stop_metric", "timing"} | {"stop_on"}
TOP_KEYS = {"problem", "params", "solver", "newton", "first_order", "reference", "output", "seed"}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class RunConfig:
    problem: str
    params: dict
    solver: str
    newton: dict = field(default_factory=dict)
    first_order: dict = field(default_factory=lambda: dict(FIRST_ORDER_KEYS))
    reference: dict = field(default_factory=lambda: dict(REFERENCE_KEYS))
    output: dict = field(default_factory=lambda: dict(OUTPUT_KEYS))
    seed: int = 0
    base_dir: Path = field(default_factory=Path.cwd)

    def echo(self) -> dict:
        return {
            "problem": self.problem,
            "params": self.params,
            "solver": self.solver,
            "newton": self.newton,
            "first_order": self.first_order,
            "reference": self.reference,
            "output": self.output,
            "seed": self.seed,
        }

    def path(self, value) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def newton_config(self) -> NewtonConfig:
        kw = {k: v for k, v in self.newton.items() if k != "stop_on"}
        kw["timing"] = bool(self.output["timing"])
        if self.newton.get("stop_on", self.default_stop_on()) == "pi_r":
            kw.setdefault("stop_tol", 1e-7)
        try:
            return NewtonConfig(**kw).validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"newton: {exc}") from None

    def default_stop_on(self) -> str:
        return "pi_r" if self.problem.startswith("ctnn") else "res_norm"


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _reject_unknown(section: str, given: dict, allowed) -> None:
    for key in given:
        if key not in allowed:
            where = f"{section}.{key}" if section else key
            raise ConfigError(f"unknown key {where!r}")


def _merge(section: str, given, defaults: dict) -> dict:
    if given is None:
        given = {}
    if not isinstance(given, dict):
        raise ConfigError(f"{section} must be an object")
    _reject_unknown(section, given, defaults)
    out = dict(defaults)
    out.update(given)
    return out


def parse_config(text: str, base_dir=None) -> RunConfig:
    """Strictly parse a JSON config document.

    Raises :class:`ConfigError` with line and column on malformed JSON and
    with the field name on validation failures. Input files are checked for
    existence here, before any work is done.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    _reject_unknown("", doc, TOP_KEYS)
    for key in ("problem", "solver"):
        if key not in doc:
            raise ConfigError(f"missing required key {key!r}")
    problem, solver = doc["problem"], doc["solver"]
    if problem not in PROBLEMS:
        raise ConfigError(f"problem: unknown problem {problem!r}; expected one of {', '.join(PROBLEMS)}")
    if isinstance(solver, list):
        raise ConfigError("solver: exactly one solver per run")
    if solver not in SOLVERS:
        raise ConfigError(f"solver: unknown solver {solver!r}; expected one of {', '.join(SOLVERS)}")
    newton = doc.get("newton") or {}
    if not isinstance(newton, dict):
        raise ConfigError("newton must be an object")
    _reject_unknown("newton", newton, NEWTON_KEYS)
    if newton.get("stop_on", "res_norm") not in ("res_norm", "pi_r"):
        raise ConfigError("newton.stop_on must be 'res_norm' or 'pi_r'")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    cfg = RunConfig(
        problem=problem,
        params=_merge("params", doc.get("params"), PROBLEM_PARAMS[problem]),
        solver=solver,
        newton=dict(newton),
        first_order=_merge("first_order", doc.get("first_order"), FIRST_ORDER_KEYS),
        reference=_merge("reference", doc.get("reference"), REFERENCE_KEYS),
        output=_merge("output", doc.get("output"), OUTPUT_KEYS),
        seed=seed,
        base_dir=Path(base_dir) if base_dir is not None else Path.cwd(),
    )
    if newton.get("stop_on") == "pi_r" and not problem.startswith("ctnn"):
        raise ConfigError("newton.stop_on: 'pi_r' is only defined for ctnn problems")
    _validate(cfg)
    cfg.newton_config()
    return cfg


def _validate(cfg: RunConfig) -> None:
    p = cfg.params
    if cfg.problem == "image-generic-A" and (p["matrix_path"] is None) != (p["b_path"] is None):
        raise ConfigError("params: matrix_path and b_path must be given together")
    if cfg.problem == "ctnn-file":
        for key in ("shape", "omega_path", "y_path", "F_path"):
            if p[key] is None:
                raise ConfigError(f"params.{key} is required for ctnn-file")
    if cfg.problem.startswith("ctnn") and cfg.solver != "alpdsn":
        raise ConfigError(f"solver: {cfg.solver} does not apply to {cfg.problem}")
    if cfg.problem == "tiny-qp" and cfg.solver != "alpdsn":
        raise ConfigError(f"solver: {cfg.solver} does not apply to tiny-qp")
    it = cfg.first_order["iters"]
    if not isinstance(it, int) or it < 0:
        raise ConfigError("first_order.iters must be a nonnegative integer")
    if cfg.first_order["target"] is not None and cfg.reference["f_star"] is None and cfg.reference["oracle_dir"] is None:
        raise ConfigError("first_order.target needs reference.f_star or reference.oracle_dir")
    for key in PATH_PARAMS:
        if p.get(key) is not None and not cfg.path(p[key]).is_file():
            raise ConfigError(f"params.{key}: file not found: {cfg.path(p[key])}")
    if cfg.reference["u_star_path"] is not None and not cfg.path(cfg.reference["u_star_path"]).is_file():
        raise ConfigError(f"reference.u_star_path: file not found: {cfg.path(cfg.reference['u_star_path'])}")
    if cfg.reference["oracle_dir"] is not None:
        d = cfg.path(cfg.reference["oracle_dir"])
        for name in ("oracle.json", "u_star.bin"):
            if not (d / name).is_file():
                raise ConfigError(f"reference.oracle_dir: missing {d / name}")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, base_dir=path.parent)


# ---------------------------------------------------------------------------
# Problem construction
# ---------------------------------------------------------------------------


def build_problem(cfg: RunConfig):
    p = cfg.params
    seed = cfg.seed
    if cfg.problem == "tiny-qp":
        return tiny_problem()
    if cfg.problem == "image-deblur":
        image = read_image(cfg.path(p["image_path"])) if p["image_path"] else None
        prob = make_deblur_instance(
            n=int(p["n"]), lam=float(p["lam"]), kernel_size=int(p["kernel_size"]),
            kernel_std=float(p["kernel_std"]), noise=float(p["noise"]), seed=seed, image=image,
        )
        if tuple(p["box"]) != (0.0, 255.0):
            prob = ImageProblem(ImageProblemSpec(prob.A, prob.obs, prob.lam, prob.image_shape, tuple(p["box"])))
        return prob
    if cfg.problem == "image-generic-A":
        shape = tuple(int(s) for s in p["image_shape"])
        if p["matrix_path"] is None:
            prob = make_dense_instance(m=int(p["m"]), image_shape=shape, lam=float(p["lam"]), noise=float(p["noise"]), seed=seed)
            if tuple(p["box"]) != (0.0, 255.0):
                prob = ImageProblem(ImageProblemSpec(prob.A, prob.obs, prob.lam, shape, tuple(p["box"])))
            return prob
        b = np.atleast_1d(np.loadtxt(cfg.path(p["b_path"]), dtype=float)).ravel()
        A = read_sparse_triplet(cfg.path(p["matrix_path"]), domain_shape=shape, range_shape=b.shape)
        return ImageProblem(ImageProblemSpec(A, b, float(p["lam"]), shape, tuple(p["box"])))
    if cfg.problem == "ctnn-synthetic":
        return make_ctnn_instance(
            shape=tuple(p["shape"]), rank=int(p["rank"]), sampling=float(p["sampling"]), beta=float(p["beta"]),
            seed=seed, rho1=float(p["rho1"]), sigma=cfg.newton_config().sigma, m=float(p["m"]),
            pilot_noise=float(p["pilot_noise"]), correction=p["correction"], mu=p["mu"],
        )
    if cfg.problem == "ctnn-file":
        from .apps.ctnn import ctnn_mu

        shape = tuple(int(s) for s in p["shape"])
        omega = np.atleast_1d(np.loadtxt(cfg.path(p["omega_path"]), dtype=np.int64))
        y = np.atleast_1d(np.loadtxt(cfg.path(p["y_path"]), dtype=float))
        F = read_tensor(cfg.path(p["F_path"]))
        truth = read_tensor(cfg.path(p["truth_path"])) if p["truth_path"] else None
        m = float(p["m"])
        mu = p["mu"] if p["mu"] is not None else ctnn_mu(y / m, m, cfg.newton_config().sigma, float(p["rho1"]), shape)
        c = p["c"]
        if c is None:
            if truth is None:
                raise ConfigError("params.c is required when truth_path is absent")
            c = float(np.abs(truth).max())
        prob = CTNNProblem(CTNNProblemSpec(shape, omega, y, F, float(mu), float(c), m, float(p["weight"])))
        if truth is not None:
            prob.ground_truth = truth
        return prob
    raise ConfigError(f"unknown problem {cfg.problem!r}")  # pragma: no cover


def _load_reference(cfg: RunConfig) -> dict:
    ref = {}
    r = cfg.reference
    if r["oracle_dir"] is not None:
        d = cfg.path(r["oracle_dir"])
        with open(d / "oracle.json") as fh:
            ref["f_star"] = float(json.load(fh)["f_star"])
        ref["u_star"] = _read_image_tensor(d / "u_star.bin")
    if r["f_star"] is not None:
        ref["f_star"] = float(r["f_star"])
    if r["u_star_path"] is not None:
        ref["u_star"] = _read_image_tensor(cfg.path(r["u_star_path"]))
    return ref


def _read_image_tensor(path):
    X = read_tensor(path)
    return X[:, :, 0] if X.shape[2] == 1 else X


def _write_image_tensor(path, u):
    u = np.asarray(u, dtype=float)
    write_tensor(path, u.reshape(u.shape + (1,) * (3 - u.ndim)))


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


def _trace_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for r in rows:
        w.writerow([r.k, repr(float(r.res_norm)), repr(float(r.tau)), r.rule, r.inner_iters, r.matvecs, repr(float(r.secs))])
    return buf.getvalue()


def _versions() -> dict:
    return {"alpdsn": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def _finite(x):
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def _write_outputs(out_dir: Path, trace, report: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with atomic_write(out_dir / "trace.csv") as fh:
        fh.write(_trace_csv(trace))
    with atomic_write(out_dir / "report.json") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run(cfg: RunConfig, out_dir=None, log=None) -> int:
    """Build, solve, write ``trace.csv`` and ``report.json``; return the exit code."""
    out_dir = Path(out_dir) if out_dir is not None else cfg.path(cfg.output["out_dir"])
    reference = _load_reference(cfg)
    prob = build_problem(cfg)
    timing = bool(cfg.output["timing"])
    say = log or (lambda msg: None)
    extra = {}

    if cfg.solver == "alpdsn":
        ncfg = cfg.newton_config()
        if cfg.newton.get("stop_on", cfg.default_stop_on()) == "pi_r":
            ncfg.stop_metric = prob.pi_r

        def progress(k, st):
            say(f"k={k} |F|={st.res_norm:.3e}")

        rep = alpdsn(prob, None, ncfg, callback=progress)
        status, trace = rep.status, rep.trace
        final = {"res_norm": float(rep.state.res_norm), "res0": float(rep.res0)}
        if "inner_failure" in rep.info:
            extra["inner_failure"] = rep.info["inner_failure"]
        if isinstance(prob, (ImageProblem, CTNNProblem)):
            m = metrics(prob, rep.state, reference)
        else:
            m = None
            final["x"] = [float(v) for v in np.concatenate([a.ravel() for a in rep.state.primal_blocks()])]
    else:
        fo = cfg.first_order
        steps = {}
        if cfg.solver == "pd3o":
            steps = {k: fo[k] for k in ("gamma", "delta") if fo[k] is not None}
        else:
            if fo["tau"] is not None:
                steps["tau"] = fo["tau"]
            if fo["delta"] is not None:
                steps["delta"] = fo["delta"]
        try:
            rep = run_first_order(prob, cfg.solver, int(fo["iters"]), fo["target"], reference.get("f_star"), timing=timing, **steps)
        except UnsupportedStructure as exc:
            raise ConfigError(str(exc)) from None
        status, trace = rep.status, rep.trace
        final = {"res_norm": float(trace[-1].res_norm) if trace else 0.0}
        m = metrics(prob, rep.u, reference)

    report = {
        "status": status,
        "exit_code": STATUS_EXIT[status],
        "iterations": len(trace),
        "solver": cfg.solver,
        "problem": cfg.problem,
        "final": final,
        "metrics": {k: _finite(v) for k, v in (m.as_dict() if m is not None else {}).items()},
        "matvecs": int(trace[-1].matvecs) if trace else 0,
        "config": cfg.echo(),
        "versions": _versions(),
    }
    if extra:
        report["diagnostics"] = extra
    _write_outputs(out_dir, trace, report)
    say(f"{status} after {len(trace)} iterations")
    return STATUS_EXIT[status]


def run_oracle(cfg: RunConfig, iters: int, out_dir=None, log=None) -> int:
    """Long PD3O solve; writes ``oracle.json`` (``f_star``) and ``u_star.bin``."""
    out_dir = Path(out_dir) if out_dir is not None else cfg.path(cfg.output["out_dir"])
    prob = build_problem(cfg)
    if not hasattr(prob, "three_term"):
        raise ConfigError(f"oracle: {cfg.problem} has no first-order splitting")
    rep = run_first_order(prob, "pd3o", int(iters), timing=False)
    f_star = float(prob.objective(rep.u))
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_image_tensor(out_dir / "u_star.bin", rep.u)
    with atomic_write(out_dir / "oracle.json") as fh:
        json.dump({"f_star": f_star, "iters": int(iters), "method": "pd3o", "config": cfg.echo(), "versions": _versions()}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if log:
        log(f"f* = {f_star!r} after {iters} PD3O iterations")
    return EXIT_CONVERGED


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="alpdsn", description="Run ALPDSN and first-order baselines from a JSON config.")
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="solve and write trace.csv and report.json")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir")
    s.add_argument("--seed", type=int)
    s.add_argument("--quiet", action="store_true")
    c = sub.add_parser("check", help="validate a config without solving")
    c.add_argument("--config", required=True)
    o = sub.add_parser("oracle", help="long PD3O run producing f* and u* reference files")
    o.add_argument("--config", required=True)
    o.add_argument("--iters", type=int, required=True)
    o.add_argument("--out-dir")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)

    def log(msg):
        if not getattr(args, "quiet", False):
            print(msg, file=sys.stderr)

    try:
        cfg = load_config(args.config)
        if args.command == "check":
            print(f"{args.config}: ok ({cfg.problem}, {cfg.solver})")
            return EXIT_CONVERGED
        if args.command == "oracle":
            if args.iters < 1:
                raise ConfigError("--iters must be positive")
            return run_oracle(cfg, args.iters, args.out_dir, log)
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2 ** 64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        return run(cfg, args.out_dir, log)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
