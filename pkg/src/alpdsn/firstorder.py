"""First-order primal-dual splitting baselines for ``min f(u) + g(B u) + h(u)``.

``f`` is smooth with ``L_f``-Lipschitz gradient, ``g`` and ``h`` have cheap
proximal maps. Two methods share one driver:

PD3O (primal-dual three-operator splitting), with ``gamma < 2 / L_f`` and
``gamma * delta * |B|^2 <= 1``::

    x      = prox_{gamma h}(z)
    s_new  = prox_{delta g*}(s + delta B(2x - z - gamma grad f(x) - gamma B^T s))
    z_new  = x - gamma grad f(x) - gamma B^T s_new

Condat-Vu, with ``1/tau - delta |B|^2 >= L_f / 2``::

    x_new  = prox_{tau h}(x - tau (grad f(x) + B^T s))
    s_new  = prox_{delta g*}(s + delta B(2 x_new - x))

Default steps follow common practice: PD3O uses ``gamma = 1.8 / L_f`` and
``delta = 1 / (gamma |B|^2)``; Condat-Vu uses ``tau = 1 / L_f`` and
``delta = L_f / (2 |B|^2)``, which meets its condition with equality.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .linop import CountingMap, LinearMap, operator_norm
from .newton import TraceRow
from .prox import ProxFunction, conjugate_prox

__all__ = [
    "UnsupportedStructure",
    "SmoothTerm",
    "least_squares_term",
    "ThreeTermProblem",
    "SplittingState",
    "pd3o_init",
    "pd3o_step",
    "condat_vu_init",
    "condat_vu_step",
    "FirstOrderReport",
    "run_first_order",
]


class UnsupportedStructure(TypeError):
    """The problem cannot be written in the form a splitting method needs."""


@dataclass
class SmoothTerm:
    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    counted: list = field(default_factory=list)


def least_squares_term(A: LinearMap, b, lipschitz: float | None = None) -> SmoothTerm:
    """``f(u) = 1/2 |A u - b|^2``; ``A`` may be a ``CountingMap``."""
    b = np.asarray(b, dtype=float)
    base = A.base if isinstance(A, CountingMap) else A
    if lipschitz is None:
        lipschitz = operator_norm(base) ** 2 * (1 + 1e-6)

    def value(u):
        r = base.apply(u) - b
        return 0.5 * float(np.vdot(r, r))

    def grad(u):
        return A.adjoint(A.apply(u) - b)

    return SmoothTerm(value, grad, float(lipschitz), [A] if isinstance(A, CountingMap) else [])


@dataclass
class ThreeTermProblem:
    f: SmoothTerm
    g: ProxFunction
    B: LinearMap
    h: ProxFunction
    objective: Callable[[np.ndarray], float] | None = None
    B_norm: float | None = None

    def __post_init__(self):
        if self.B_norm is None:
            self.B_norm = operator_norm(self.B) * (1 + 1e-6)

    def value(self, u) -> float:
        if self.objective is not None:
            return float(self.objective(u))
        return self.f.value(u) + self.g.value(self.B.apply(u))

    @property
    def shape(self):
        return tuple(self.B.domain_shape)


@dataclass
class SplittingState:
    x: np.ndarray
    s: np.ndarray
    z: np.ndarray | None
    gamma: float
    delta: float
    k: int = 0


def _check_pd3o_steps(prob: ThreeTermProblem, gamma: float, delta: float):
    if not (gamma > 0 and delta > 0):
        raise ValueError("step sizes must be positive")
    if prob.f.lipschitz > 0 and gamma >= 2.0 / prob.f.lipschitz:
        raise ValueError(f"PD3O needs gamma < 2/L_f = {2.0 / prob.f.lipschitz:.4g}, got {gamma:.4g}")
    if gamma * delta * prob.B_norm ** 2 > 1.0 + 1e-12:
        raise ValueError("PD3O needs gamma * delta * |B|^2 <= 1")


def pd3o_init(prob: ThreeTermProblem, u0=None, gamma: float | None = None, delta: float | None = None, s0=None) -> SplittingState:
    L = prob.f.lipschitz
    if gamma is None:
        gamma = 1.8 / L if L > 0 else 1.0
    if delta is None:
        delta = 1.0 / (gamma * prob.B_norm ** 2) if prob.B_norm > 0 else 1.0
    _check_pd3o_steps(prob, gamma, delta)
    z = np.zeros(prob.shape) if u0 is None else np.array(u0, dtype=float)
    s = np.zeros(prob.B.range_shape) if s0 is None else np.array(s0, dtype=float)
    x = prob.h.prox(z, gamma)
    return SplittingState(x, s, z, float(gamma), float(delta))


def pd3o_step(prob: ThreeTermProblem, st: SplittingState) -> SplittingState:
    g_, d_ = st.gamma, st.delta
    x = st.x
    gx = prob.f.grad(x)
    # B is applied once forward and once in adjoint per iteration
    Bts = prob.B.adjoint(st.s)
    s_new = conjugate_prox(prob.g, d_, st.s + d_ * prob.B.apply(2 * x - st.z - g_ * gx - g_ * Bts))
    z_new = x - g_ * gx - g_ * prob.B.adjoint(s_new)
    x_new = prob.h.prox(z_new, g_)
    return SplittingState(x_new, s_new, z_new, g_, d_, st.k + 1)


def condat_vu_init(prob: ThreeTermProblem, u0=None, tau: float | None = None, delta: float | None = None, s0=None) -> SplittingState:
    L = prob.f.lipschitz
    nb2 = prob.B_norm ** 2
    if tau is None:
        tau = 1.0 / L if L > 0 else 1.0
    if delta is None:
        delta = max(1.0 / tau - L / 2, 0.0) / nb2 if nb2 > 0 else 1.0
    if not (tau > 0 and delta > 0):
        raise ValueError("step sizes must be positive")
    if 1.0 / tau - delta * nb2 < L / 2 - 1e-12 * max(1.0, L):
        raise ValueError("Condat-Vu needs 1/tau - delta |B|^2 >= L_f / 2")
    x = np.zeros(prob.shape) if u0 is None else prob.h.prox(np.array(u0, dtype=float), tau)
    s = np.zeros(prob.B.range_shape) if s0 is None else np.array(s0, dtype=float)
    return SplittingState(x, s, None, float(tau), float(delta))


def condat_vu_step(prob: ThreeTermProblem, st: SplittingState) -> SplittingState:
    t_, d_ = st.gamma, st.delta
    x_new = prob.h.prox(st.x - t_ * (prob.f.grad(st.x) + prob.B.adjoint(st.s)), t_)
    s_new = conjugate_prox(prob.g, d_, st.s + d_ * prob.B.apply(2 * x_new - st.x))
    return SplittingState(x_new, s_new, None, t_, d_, st.k + 1)


@dataclass
class FirstOrderReport:
    """Outcome of a first-order run.

    ``trace`` rows share the Newton trace columns: ``res_norm`` holds the
    fixed-point residual ``|x_{k+1} - x_k|``, ``tau`` the primal step and
    ``rule`` the method name. ``objective`` lists ``f(x_k)`` per iteration.
    """

    u: np.ndarray
    status: str
    trace: list
    objective: list
    state: SplittingState
    method: str
    info: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _matvecs(prob: ThreeTermProblem) -> int:
    return int(sum(A.count for A in prob.f.counted))


def run_first_order(
    prob,
    method: str = "pd3o",
    iters: int = 10000,
    target: float | None = None,
    f_star: float | None = None,
    u0=None,
    timing: bool = True,
    **steps,
) -> FirstOrderReport:
    """Iterate a splitting method up to ``iters`` times.

    With ``target`` and ``f_star`` given the run stops as soon as
    ``(f - f_star) / |f| < target``; that test is also applied to the start.
    ``prob`` may be a :class:`ThreeTermProblem` or any object with a
    ``three_term()`` method.
    """
    if not isinstance(prob, ThreeTermProblem):
        if not hasattr(prob, "three_term"):
            raise UnsupportedStructure(f"{type(prob).__name__} has no f + g(B u) + h(u) splitting")
        prob = prob.three_term()
    if method == "pd3o":
        st = pd3o_init(prob, u0, **steps)
        step = pd3o_step
    elif method == "condat-vu":
        st = condat_vu_init(prob, u0, **steps)
        step = condat_vu_step
    else:
        raise ValueError(f"unknown first-order method {method!r}")
    if target is not None and f_star is None:
        raise ValueError("a target needs f_star")
    t0 = time.perf_counter()

    def ferr(f):
        return (f - f_star) / abs(f) if f != 0 else abs(f - f_star)

    trace, objective = [], []
    f = prob.value(st.x)
    status = "max-iters"
    if target is not None and ferr(f) < target:
        return FirstOrderReport(st.x, "converged", trace, objective, st, method)
    for k in range(1, iters + 1):
        x_old = st.x
        st = step(prob, st)
        f = prob.value(st.x)
        objective.append(f)
        secs = time.perf_counter() - t0 if timing else 0.0
        trace.append(TraceRow(k, float(np.linalg.norm(st.x - x_old)), st.gamma, method, 0, _matvecs(prob), secs))
        if target is not None and ferr(f) < target:
            status = "converged"
            break
    return FirstOrderReport(st.x, status, trace, objective, st, method)
