"""Regularized semismooth Newton iteration on the saddle residual ``F``.

Each outer iteration ``k`` fixes one generalized-Jacobian element ``J`` at
``w^k`` and tries regularization levels ``tau_{k,i} = kappa gamma^i |F(w^k)|``
for ``i = 0, 1, ...``. The trial ``w^k + d`` with ``(J + tau I) d = -F`` is
accepted when either

* its residual beats ``nu`` times the max of the last ``min(zeta, k)``
  accepted residual norms (nonmonotone descent), or
* ``tau >= k^beta`` (the step is so heavily regularized that it is short).

At ``i = i_max`` the level is raised to ``max(kappa gamma^i_max |F|, k^beta)``
so the second rule always fires. ``d_z`` is eliminated so the Krylov solver
only sees the ``x`` part of the system.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg, tfqmr

from .alcore import ALState, JacobianHandle, MultiBlockProblem, PrimalDualPoint
from .linop import CountingMap

__all__ = [
    "NewtonConfig",
    "TraceRow",
    "SolveReport",
    "InnerResult",
    "InsufficientHistory",
    "accept_step",
    "inner_solve",
    "trial_step",
    "alpdsn",
    "superlinear_probe",
    "growth_bound_violations",
    "count_matvecs",
    "ACCEPT_DESCENT",
    "ACCEPT_LARGE_TAU",
    "REJECT",
]

ACCEPT_DESCENT = "accept-descent"
ACCEPT_LARGE_TAU = "accept-large-tau"
REJECT = "reject"

_RULE_NAME = {ACCEPT_DESCENT: "descent", ACCEPT_LARGE_TAU: "large-tau"}


class InsufficientHistory(ValueError):
    """The report lacks the converged tail a probe needs."""


@dataclass
class NewtonConfig:
    """Parameters of the Newton iteration.

    Trial steps solve ``(J + tau I) d = -F`` to a residual of at most
    ``eta |F(w^k)|`` with ``eta = inner_tol_rel``, or ``min(1e-2, |F(w^k)|)``
    when that is None, so the forcing term vanishes as the iteration converges. ``stop_metric``, when given, replaces ``|F|`` in
    the stopping test (for instance a relative KKT residual).
    """

    sigma: float = 1.0
    kappa: float = 1e-2
    gamma: float = 10.0
    nu: float = 0.999
    beta: float = 0.6
    zeta: int = 5
    i_max: int = 20
    inner_tol_rel: float | None = None
    inner_tol_abs: float = 1e-14
    inner_method: str = "cg"
    inner_restart: int = 200
    max_iters: int = 500
    stop_tol: float = 1e-10
    tie_rule: str = "lower"
    timing: bool = True
    stop_metric: Callable[[ALState], float] | None = field(default=None, repr=False, compare=False)

    def validate(self) -> "NewtonConfig":
        checks = [
            ("sigma", self.sigma > 0, "must be positive"),
            ("kappa", self.kappa > 0, "must be positive"),
            ("gamma", self.gamma > 1, "must exceed 1"),
            ("nu", 0 < self.nu < 1, "must lie in (0, 1)"),
            ("beta", 0.5 < self.beta <= 1, "must lie in (1/2, 1]"),
            ("zeta", int(self.zeta) == self.zeta and self.zeta >= 1, "must be an integer >= 1"),
            ("i_max", int(self.i_max) == self.i_max and self.i_max >= 0, "must be an integer >= 0"),
            ("inner_tol_abs", self.inner_tol_abs > 0, "must be positive"),
            ("inner_restart", self.inner_restart >= 1, "must be >= 1"),
            ("max_iters", int(self.max_iters) == self.max_iters and self.max_iters >= 0, "must be an integer >= 0"),
            ("stop_tol", self.stop_tol > 0, "must be positive"),
            ("inner_method", self.inner_method in ("tfqmr", "cg", "direct"), "must be 'tfqmr', 'cg' or 'direct'"),
            ("tie_rule", self.tie_rule in ("lower", "upper"), "must be 'lower' or 'upper'"),
        ]
        if self.inner_tol_rel is not None:
            checks.append(("inner_tol_rel", self.inner_tol_rel > 0, "must be positive"))
        for name, ok, msg in checks:
            if not ok:
                raise ValueError(f"NewtonConfig.{name} {msg} (got {getattr(self, name)!r})")
        return self

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("stop_metric", None)
        return d


@dataclass
class TraceRow:
    k: int
    res_norm: float
    tau: float
    rule: str
    inner_iters: int
    matvecs: int
    secs: float


@dataclass
class SolveReport:
    """Outcome of a solve.

    ``trace[j].res_norm`` is the residual of the accepted iterate as tested by
    the acceptance rule; ``res0`` is the residual at the starting point.
    """

    w: PrimalDualPoint
    status: str
    trace: list
    res0: float
    state: ALState | None = None
    info: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def res_history(self) -> np.ndarray:
        return np.array([self.res0] + [r.res_norm for r in self.trace])

    @property
    def converged(self) -> bool:
        return self.status == "converged"


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def count_matvecs(problem: MultiBlockProblem) -> int:
    """Applications (forward plus adjoint) of the counted maps of a problem.

    Problems may name the maps to count in ``problem.counted_maps``; by default
    every ``CountingMap`` among ``problem.maps`` is counted.
    """
    maps = getattr(problem, "counted_maps", None)
    if maps is None:
        maps = [A for A in problem.maps if isinstance(A, CountingMap)]
    return int(sum(A.count for A in maps))


def accept_step(history, trial_norm: float, tau: float, k: int, config: NewtonConfig) -> str:
    """Decide a trial step: descent, large regularization, or reject."""
    if len(history) == 0:
        raise ValueError("history must be nonempty")
    window = list(history)[-min(int(config.zeta), k):]
    if trial_norm <= config.nu * max(window):
        return ACCEPT_DESCENT
    if tau >= k ** config.beta:
        return ACCEPT_LARGE_TAU
    return REJECT


@dataclass
class InnerResult:
    dx: list
    iters: int
    residual: float
    tol: float
    ok: bool


_RTOL_FLOOR = 1e-12


def inner_solve(handle: JacobianHandle, tau: float, F_r, tol: float, config: NewtonConfig | None = None) -> InnerResult:
    """Solve ``H_r dx = F_r`` to ``|H_r dx - F_r| <= max(inner_tol_abs, tol |F_r|)``.

    ``tol`` is floored at ``1e-12`` since rounding in the matvec keeps the true
    residual from going much below that relative level.

    CG (the default; the reduced operator is symmetric positive definite) runs
    uninterrupted, TFQMR restarts every ``inner_restart`` iterations from its
    last iterate. Both stop at ``10 * dim`` iterations in total. The tolerance is
    checked on the true residual, not the method's internal estimate.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    if not tol > 0:
        raise ValueError("tol must be positive")
    config = config or NewtonConfig()
    P = handle.problem
    b = P.flatten_x(F_r)
    nb = float(np.linalg.norm(b))
    if nb == 0.0:
        return InnerResult([np.zeros(s) for s in P.x_shapes], 0, 0.0, 0.0, True)
    target = max(config.inner_tol_abs, max(tol, _RTOL_FLOOR) * nb)
    n = b.size
    if config.inner_method == "direct":
        x = np.linalg.solve(handle.dense_reduced(tau), b)
        res = float(np.linalg.norm(P.flatten_x(handle.reduced_matvec(tau, P.unflatten_x(x))) - b))
        return InnerResult(P.unflatten_x(x), 1, res, target, True)

    def mv(v):
        return P.flatten_x(handle.reduced_matvec(tau, P.unflatten_x(v)))

    op = LinearOperator((n, n), matvec=mv, dtype=float)
    method = tfqmr if config.inner_method == "tfqmr" else cg
    cap = 10 * n
    total = 0
    x = np.zeros(n)
    res = nb
    while True:
        # CG keeps its Krylov space until the cap; restarts only help TFQMR's
        # drifting residual estimate
        cycle = config.inner_restart if config.inner_method == "tfqmr" else cap
        chunk = min(cycle, cap - total)
        if chunk <= 0:
            break
        counter = [0]

        def cb(_xk):
            counter[0] += 1

        # the method's own test is relative to |b|; ask for a bit more than
        # needed so the true-residual check below usually passes first time
        x, _ = method(op, b, x0=x, rtol=0.5 * target / nb, atol=0.0, maxiter=chunk, callback=cb)
        total += max(counter[0], 1)
        res = float(np.linalg.norm(mv(x) - b))
        if res <= target:
            return InnerResult(P.unflatten_x(x), total, res, target, True)
        if counter[0] == 0:
            # no progress possible from here (breakdown)
            break
    return InnerResult(P.unflatten_x(x), total, res, target, False)


def _tau(config: NewtonConfig, res: float, k: int, i: int) -> float:
    tau = config.kappa * config.gamma ** i * res
    if i >= config.i_max:
        tau = max(config.kappa * config.gamma ** config.i_max * res, k ** config.beta)
    return tau


def trial_step(
    problem: MultiBlockProblem,
    w: PrimalDualPoint,
    sigma: float,
    k: int,
    i: int,
    config: NewtonConfig,
    state: ALState | None = None,
    handle: JacobianHandle | None = None,
):
    """Regularized Newton trial ``w + d`` at level ``i``.

    Returns ``(w_trial, tau, inner)`` where ``inner`` is the :class:`InnerResult`.
    """
    if i < 0:
        raise ValueError("line-search index must be >= 0")
    if state is None:
        state = ALState(problem, w, sigma)
    if handle is None:
        handle = state.jacobian(config.tie_rule)
    res = state.res_norm
    tau = _tau(config, res, k, i)
    rel = config.inner_tol_rel if config.inner_tol_rel is not None else min(1e-2, res)
    F = state.F
    F_r = handle.reduced_rhs(tau, F.x, F.z)
    # the inner residual is the full-system residual of (J + tau I) d = -F, so
    # measure it against |F|, not |F_r| (which stays O(1) as |F| -> 0)
    nr = float(np.sqrt(sum(np.vdot(v, v) for v in F_r)))
    tol = rel * res / nr if nr > 0 else rel
    inner = inner_solve(handle, tau, F_r, tol, config)
    dz = handle.recover_dz(tau, inner.dx, F.z)
    d = PrimalDualPoint(inner.dx, dz)
    return w + d, tau, inner


# ---------------------------------------------------------------------------
# Main loop
# ---------------------------------------------------------------------------


def alpdsn(
    problem: MultiBlockProblem,
    w0: PrimalDualPoint | None = None,
    config: NewtonConfig | None = None,
    callback: Callable[[int, ALState], None] | None = None,
) -> SolveReport:
    """Run the Newton iteration from ``w0`` (zero by default)."""
    config = (config or NewtonConfig()).validate()
    sigma = config.sigma
    w = problem.zero_point() if w0 is None else w0
    problem.check_point(w)
    t0 = time.perf_counter()

    def secs():
        return time.perf_counter() - t0 if config.timing else 0.0

    def stop_value(st: ALState) -> float:
        return config.stop_metric(st) if config.stop_metric is not None else st.res_norm

    state = ALState(problem, w, sigma)
    res0 = state.res_norm
    history = [res0]
    trace: list[TraceRow] = []
    info: dict = {"inner_total": 0}
    if stop_value(state) <= config.stop_tol:
        return SolveReport(w, "converged", trace, res0, state, info)

    status = "max-iters"
    k = 1
    while k <= config.max_iters:
        handle = state.jacobian(config.tie_rule)
        inner_iters = 0
        decision = REJECT
        i = 0
        while decision == REJECT:
            w_trial, tau, inner = trial_step(problem, state.w, sigma, k, i, config, state, handle)
            inner_iters += inner.iters
            if not inner.ok:
                info["inner_failure"] = {"k": k, "i": i, "residual": inner.residual, "tol": inner.tol}
                status = "inner-failure"
                break
            trial = ALState(problem, w_trial, sigma)
            decision = accept_step(history, trial.res_norm, tau, k, config)
            i += 1
        if status == "inner-failure":
            break
        info["inner_total"] += inner_iters
        state = trial
        history.append(state.res_norm)
        trace.append(TraceRow(k, state.res_norm, tau, _RULE_NAME[decision], inner_iters, count_matvecs(problem), secs()))
        if callback is not None:
            callback(k, state)
        if stop_value(state) <= config.stop_tol:
            status = "converged"
            break
        k += 1
    return SolveReport(state.w, status, trace, res0, state, info)


def superlinear_probe(report: SolveReport, window: int = 5) -> np.ndarray:
    """Ratios ``|F_{k+1}| / |F_k|`` over the last ``window`` iterations."""
    if not report.converged or report.iterations < window + 1:
        raise InsufficientHistory(
            f"need a converged run with at least {window + 1} iterations "
            f"(status={report.status}, iterations={report.iterations})"
        )
    r = report.res_history[-(window + 1):]
    return r[1:] / r[:-1]


def growth_bound_violations(report: SolveReport, lipschitz: float, beta: float, k_min: int = 4) -> list:
    """Large-regularization steps breaking ``|F_{k+1}|^2 <= (1 + L^2 / k^{2 beta}) |F_k|^2``."""
    hist = report.res_history
    bad = []
    for j, row in enumerate(report.trace):
        if row.rule != "large-tau" or row.k < k_min:
            continue
        prev, new = hist[j], hist[j + 1]
        if new ** 2 > (1 + lipschitz ** 2 / row.k ** (2 * beta)) * prev ** 2 * (1 + 1e-12):
            bad.append(row.k)
    return bad
