"""Augmented-Lagrangian saddle function, its residual map and Newton system.

The problem is

    min  sum_i h_i(x_i)   s.t.  sum_{i<n} A_i x_i + x_n = b,

with smooth blocks ``I1`` (first ``n1`` of the ``x`` blocks) and nonsmooth
blocks ``I2`` (the remaining ``x`` blocks and ``x_n``). Eliminating the
nonsmooth primal blocks through their proximal maps leaves the value function

    Phi(x; z) = sum_{I1} h_i(x_i) + sum_{I2 \\ n} e_{sigma h_i}(x_i - z_i / sigma)
                + e_{sigma h_n}(b - z_n / sigma - sum_i A_i x_i)
                - (1 / 2 sigma) sum_{I2} |z_i|^2,

convex in ``x`` and concave in ``z``. The residual is
``F = (grad_x Phi, -grad_z Phi)``. Writing ``p_i = prox_{sigma h_i*}(sigma x_i - z_i)``
and ``p_n = prox_{sigma h_n*}(sigma (b - A x) - z_n)``:

    F_{x_i} = grad h_i(x_i) - A_i* p_n        (i in I1)
    F_{x_i} = p_i - A_i* p_n                  (i in I2 \\ n)
    F_{z_i} = (z_i + p_i) / sigma             (i in I2)

At a zero of ``F``: ``z_i = -p_i`` and the primal blocks are recovered as
``prox_{h_i/sigma}(x_i - z_i / sigma)``.

Each multiplier ``z_i`` enters the constraint ``x_i = y_i`` with the sign
convention of the Lagrangian ``... + <z, A x + x_n - b>``; for the problem
``min 1/2 (x1 - 1)^2 + |x2|  s.t.  x1 + x2 = 0`` the solution has ``z_n = +1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .linop import DimensionError, IdentityMap, LinearMap, operator_norm
from .prox import JacobianElement, L1Norm, ProxFunction, conjugate_prox, conjugate_prox_jacobian

__all__ = [
    "SmoothBlock",
    "QuadraticBlock",
    "MultiBlockProblem",
    "PrimalDualPoint",
    "ALState",
    "JacobianHandle",
    "eval_phi",
    "residual",
    "jacobian_element",
    "reduced_matvec",
    "reduced_rhs",
    "recover_dz",
    "primal_objective",
    "lipschitz_estimate",
    "tiny_problem",
]


# ---------------------------------------------------------------------------
# Problem description
# ---------------------------------------------------------------------------


@dataclass
class SmoothBlock:
    """A twice-differentiable convex block supplied by value, gradient and Hessian action.

    ``hess(x, d)`` returns the Hessian at ``x`` applied to ``d``. ``lipschitz``
    bounds the gradient's Lipschitz constant; when omitted it is estimated by
    power iteration on the Hessian at zero.
    """

    shape: tuple
    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lipschitz: float | None = None

    def __post_init__(self):
        self.shape = tuple(self.shape)


class QuadraticBlock(SmoothBlock):
    """``h(x) = (scale / 2) |x|^2 + <linear, x>``."""

    def __init__(self, shape, scale: float = 1.0, linear=None):
        shape = tuple(shape)
        if scale < 0:
            raise ValueError("scale must be nonnegative for a convex block")
        lin = np.zeros(shape) if linear is None else np.asarray(linear, dtype=float)
        if lin.shape != shape:
            raise DimensionError(f"linear term has shape {lin.shape}, expected {shape}")
        self.scale = float(scale)
        self.linear = lin
        super().__init__(
            shape=shape,
            value=lambda x: 0.5 * self.scale * float(np.vdot(x, x)) + float(np.vdot(self.linear, x)),
            grad=lambda x: self.scale * x + self.linear,
            hess=lambda x, d: self.scale * d,
            lipschitz=self.scale,
        )


class MultiBlockProblem:
    """Linearly constrained multi-block problem.

    Parameters
    ----------
    smooth_blocks
        Blocks ``x_1 .. x_{n1}``.
    nonsmooth_blocks
        Proximable functions for ``x_{n1+1} .. x_n``; the last one is ``h_n``.
    maps
        ``A_1 .. A_{n-1}``; ``A_n`` is the identity.
    b
        Right-hand side in the range space.
    """

    def __init__(
        self,
        smooth_blocks: Sequence[SmoothBlock],
        nonsmooth_blocks: Sequence[ProxFunction],
        maps: Sequence[LinearMap],
        b,
    ):
        self.smooth_blocks = list(smooth_blocks)
        self.nonsmooth_blocks = list(nonsmooth_blocks)
        self.maps = list(maps)
        self.b = np.asarray(b, dtype=float)
        if not self.nonsmooth_blocks:
            raise ValueError("the last block h_n must be a ProxFunction")
        self.n1 = len(self.smooth_blocks)
        self.n = self.n1 + len(self.nonsmooth_blocks)
        if len(self.maps) != self.n - 1:
            raise ValueError(f"need {self.n - 1} maps A_1..A_(n-1), got {len(self.maps)}")
        for i, A in enumerate(self.maps):
            if tuple(A.range_shape) != self.b.shape:
                raise DimensionError(f"A_{i + 1} maps into {A.range_shape}, but b has shape {self.b.shape}")
        for i, blk in enumerate(self.smooth_blocks):
            if blk.shape != tuple(self.maps[i].domain_shape):
                raise DimensionError(f"smooth block {i + 1} has shape {blk.shape}, A_{i + 1} expects {self.maps[i].domain_shape}")
        self.x_shapes = [tuple(A.domain_shape) for A in self.maps]
        self.z_shapes = self.x_shapes[self.n1:] + [self.b.shape]

    @property
    def h_n(self) -> ProxFunction:
        return self.nonsmooth_blocks[-1]

    @property
    def nonsmooth_x(self) -> list:
        """Indices (into ``x``) of the nonsmooth blocks other than ``x_n``."""
        return list(range(self.n1, self.n - 1))

    def apply_A(self, xs) -> np.ndarray:
        out = np.zeros(self.b.shape)
        for A, x in zip(self.maps, xs):
            out = out + A.apply(x)
        return out

    def adjoint_A(self, y) -> list:
        return [A.adjoint(y) for A in self.maps]

    def zero_point(self) -> "PrimalDualPoint":
        return PrimalDualPoint([np.zeros(s) for s in self.x_shapes], [np.zeros(s) for s in self.z_shapes])

    @property
    def dim(self) -> int:
        return self.dim_x + sum(int(np.prod(s)) for s in self.z_shapes)

    @property
    def dim_x(self) -> int:
        return sum(int(np.prod(s)) for s in self.x_shapes)

    def flatten_x(self, xs) -> np.ndarray:
        return np.concatenate([np.ravel(x) for x in xs]) if xs else np.zeros(0)

    def unflatten_x(self, v) -> list:
        return _split(v, self.x_shapes)

    def point_from_flat(self, v) -> "PrimalDualPoint":
        v = np.asarray(v, dtype=float)
        k = self.dim_x
        return PrimalDualPoint(_split(v[:k], self.x_shapes), _split(v[k:], self.z_shapes))

    def check_point(self, w: "PrimalDualPoint") -> None:
        if len(w.x) != len(self.x_shapes) or len(w.z) != len(self.z_shapes):
            raise DimensionError(
                f"point has {len(w.x)} x-blocks and {len(w.z)} z-blocks, "
                f"problem needs {len(self.x_shapes)} and {len(self.z_shapes)}"
            )
        for i, (x, s) in enumerate(zip(w.x, self.x_shapes)):
            if np.shape(x) != s:
                raise DimensionError(f"x block {i + 1} has shape {np.shape(x)}, expected {s}")
        for i, (z, s) in enumerate(zip(w.z, self.z_shapes)):
            if np.shape(z) != s:
                raise DimensionError(f"z block {i + 1} has shape {np.shape(z)}, expected {s}")


def _split(v, shapes) -> list:
    out, k = [], 0
    for s in shapes:
        m = int(np.prod(s))
        out.append(np.asarray(v[k:k + m], dtype=float).reshape(s))
        k += m
    if k != len(v):
        raise DimensionError(f"flat vector has length {len(v)}, expected {k}")
    return out


@dataclass
class PrimalDualPoint:
    """``w = (x, z)`` as lists of arrays, with the vector-space operations the solver needs."""

    x: list
    z: list

    def blocks(self) -> list:
        return list(self.x) + list(self.z)

    def _combine(self, other, op):
        return PrimalDualPoint([op(a, b) for a, b in zip(self.x, other.x)], [op(a, b) for a, b in zip(self.z, other.z)])

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, c: float):
        return PrimalDualPoint([c * a for a in self.x], [c * a for a in self.z])

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def dot(self, other) -> float:
        return float(sum(np.vdot(a, b) for a, b in zip(self.blocks(), other.blocks())))

    def norm(self) -> float:
        return float(np.sqrt(sum(np.vdot(a, a).real for a in self.blocks())))

    def copy(self):
        return PrimalDualPoint([a.copy() for a in self.x], [a.copy() for a in self.z])

    def flat(self) -> np.ndarray:
        blocks = self.blocks()
        return np.concatenate([np.ravel(a) for a in blocks]) if blocks else np.zeros(0)


# ---------------------------------------------------------------------------
# State at (w, sigma)
# ---------------------------------------------------------------------------


def _check_sigma(sigma):
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")


class ALState:
    """Prox points, conjugate prox values and the residual at ``(w, sigma)``.

    Everything is computed on construction; the state is never mutated, so a
    new ``(w, sigma)`` means a new state.
    """

    def __init__(self, problem: MultiBlockProblem, w: PrimalDualPoint, sigma: float):
        _check_sigma(sigma)
        problem.check_point(w)
        self.problem = problem
        self.w = w
        self.sigma = float(sigma)
        P = problem
        nx = P.n - 1
        self.Ax = P.apply_A(w.x)
        # arguments of prox_{sigma h*}, one per nonsmooth block (z order)
        self.u = [sigma * w.x[i] - w.z[j] for j, i in enumerate(P.nonsmooth_x)]
        self.u.append(sigma * (P.b - self.Ax) - w.z[-1])
        self.p = [conjugate_prox(h, sigma, u) for h, u in zip(P.nonsmooth_blocks, self.u)]
        self.Atp = P.adjoint_A(self.p[-1])
        Fx = []
        for i in range(nx):
            if i < P.n1:
                Fx.append(P.smooth_blocks[i].grad(w.x[i]) - self.Atp[i])
            else:
                Fx.append(self.p[i - P.n1] - self.Atp[i])
        Fz = [(z + p) / sigma for z, p in zip(w.z, self.p)]
        self.F = PrimalDualPoint(Fx, Fz)
        self._phi = None
        self._res_norm = None

    @property
    def prox_points(self) -> list:
        """``prox_{h_i / sigma}(u_i / sigma)`` for every nonsmooth block (last one is ``x_n``)."""
        return [(u - p) / self.sigma for u, p in zip(self.u, self.p)]

    @property
    def res_norm(self) -> float:
        if self._res_norm is None:
            self._res_norm = self.F.norm()
        return self._res_norm

    @property
    def phi(self) -> float:
        if self._phi is None:
            P, s = self.problem, self.sigma
            val = sum(blk.value(x) for blk, x in zip(P.smooth_blocks, self.w.x[:P.n1]))
            for h, y, p, z in zip(P.nonsmooth_blocks, self.prox_points, self.p, self.w.z):
                # e_{sigma h}(u/sigma) = h(y) + |p|^2 / (2 sigma) with y its prox point
                hv = 0.0 if h.is_indicator else h.value(y)
                val += hv + float(np.vdot(p, p)) / (2 * s) - float(np.vdot(z, z)) / (2 * s)
            self._phi = float(val)
        return self._phi

    def primal_blocks(self) -> list:
        """Primal estimate ``(x_1..x_{n1}, y_{n1+1}..y_{n-1}, x_n)`` from the prox points."""
        return list(self.w.x[:self.problem.n1]) + self.prox_points

    def jacobian(self, tie_rule: str = "lower") -> "JacobianHandle":
        return JacobianHandle(self, tie_rule)


def eval_phi(problem: MultiBlockProblem, w: PrimalDualPoint, sigma: float) -> float:
    return ALState(problem, w, sigma).phi


def residual(problem: MultiBlockProblem, w: PrimalDualPoint, sigma: float) -> PrimalDualPoint:
    return ALState(problem, w, sigma).F


def primal_objective(problem: MultiBlockProblem, blocks: Sequence[np.ndarray]) -> float:
    """``sum_i h_i(x_i)`` for primal blocks ``x_1 .. x_n`` (constraint not enforced)."""
    P = problem
    val = sum(blk.value(x) for blk, x in zip(P.smooth_blocks, blocks[:P.n1]))
    val += sum(h.value(x) for h, x in zip(P.nonsmooth_blocks, blocks[P.n1:]))
    return float(val)


# ---------------------------------------------------------------------------
# Generalized Jacobian and reduced system
# ---------------------------------------------------------------------------


def _shift_inv(sigma, tau):
    # (H_zz + tau I)^{-1} as a scalar function of the prox-Jacobian weight d
    return lambda d: 1.0 / ((1.0 - d) / sigma + tau)


def _coupling(sigma, tau):
    # D (H_zz + tau I)^{-1}
    return lambda d: d / ((1.0 - d) / sigma + tau)


def _schur(sigma, tau):
    # sigma D + D (H_zz + tau I)^{-1} D
    return lambda d: sigma * d + d * d / ((1.0 - d) / sigma + tau)


class JacobianHandle:
    """One element ``J`` of the generalized Jacobian of ``F`` at a state.

    ``J = [[H_xx, H_xz], [-H_xz^T, H_zz]]`` with

    * ``H_xx = blkdiag(hess h_i (I1), sigma D_i (I2)) + sigma A^* D_n A``
    * ``H_xz`` couples ``x_i`` to ``z_i`` by ``-D_i`` and every ``x_i`` to ``z_n`` by ``A_i^* D_n``
    * ``H_zz = blkdiag((I - D_i) / sigma)``

    where ``D_i`` is an element of the Jacobian of ``prox_{sigma h_i*}``.
    """

    def __init__(self, state: ALState, tie_rule: str = "lower"):
        self.state = state
        self.problem = state.problem
        self.sigma = state.sigma
        P = self.problem
        self.D: list[JacobianElement] = [
            conjugate_prox_jacobian(h, self.sigma, u, tie_rule) for h, u in zip(P.nonsmooth_blocks, state.u)
        ]
        self.x_smooth = list(state.w.x[:P.n1])

    def _hess(self, i, d):
        return self.problem.smooth_blocks[i].hess(self.x_smooth[i], d)

    def apply(self, d: PrimalDualPoint) -> PrimalDualPoint:
        """Full action ``J d``."""
        P, s = self.problem, self.sigma
        a1 = P.apply_A(d.x)
        Dn = self.D[-1]
        back = P.adjoint_A(Dn.apply(s * a1 + d.z[-1]))
        out_x, out_z = [], []
        for i in range(P.n - 1):
            if i < P.n1:
                out_x.append(self._hess(i, d.x[i]) + back[i])
            else:
                j = i - P.n1
                out_x.append(self.D[j].apply(s * d.x[i] - d.z[j]) + back[i])
        for j, i in enumerate(P.nonsmooth_x):
            Dj = self.D[j]
            out_z.append(Dj.apply(d.x[i]) + (d.z[j] - Dj.apply(d.z[j])) / s)
        out_z.append(-Dn.apply(a1) + (d.z[-1] - Dn.apply(d.z[-1])) / s)
        return PrimalDualPoint(out_x, out_z)

    def reduced_matvec(self, tau: float, dx: Sequence[np.ndarray]) -> list:
        """``(H_xx + H_xz (H_zz + tau I)^{-1} H_xz^T + tau I) dx``.

        ``a1 = sum_j A_j dx_j`` is formed once and shared by all blocks.
        """
        _check_tau(tau)
        P, s = self.problem, self.sigma
        a1 = P.apply_A(dx)
        back = P.adjoint_A(self.D[-1].apply_fn(_schur(s, tau), a1))
        schur = _schur(s, tau)
        out = []
        for i in range(P.n - 1):
            if i < P.n1:
                own = self._hess(i, dx[i])
            else:
                own = self.D[i - P.n1].apply_fn(schur, dx[i])
            out.append(own + tau * dx[i] + back[i])
        return out

    def reduced_rhs(self, tau: float, Fx: Sequence[np.ndarray], Fz: Sequence[np.ndarray]) -> list:
        """``H_xz (H_zz + tau I)^{-1} F_z - F_x``."""
        _check_tau(tau)
        P, s = self.problem, self.sigma
        cpl = _coupling(s, tau)
        back = P.adjoint_A(self.D[-1].apply_fn(cpl, Fz[-1]))
        out = []
        for i in range(P.n - 1):
            r = back[i] - Fx[i]
            if i >= P.n1:
                j = i - P.n1
                r = r - self.D[j].apply_fn(cpl, Fz[j])
            out.append(r)
        return out

    def recover_dz(self, tau: float, dx: Sequence[np.ndarray], Fz: Sequence[np.ndarray]) -> list:
        """``(H_zz + tau I)^{-1} (H_xz^T dx - F_z)``."""
        _check_tau(tau)
        P, s = self.problem, self.sigma
        inv = _shift_inv(s, tau)
        cpl = _coupling(s, tau)
        out = []
        for j, i in enumerate(P.nonsmooth_x):
            out.append(-self.D[j].apply_fn(cpl, dx[i]) - self.D[j].apply_fn(inv, Fz[j]))
        a1 = P.apply_A(dx)
        out.append(self.D[-1].apply_fn(cpl, a1) - self.D[-1].apply_fn(inv, Fz[-1]))
        return out

    # dense assembly, for verification on small problems

    def dense(self) -> np.ndarray:
        P = self.problem
        cols = []
        for k in range(P.dim):
            e = np.zeros(P.dim)
            e[k] = 1.0
            cols.append(self.apply(P.point_from_flat(e)).flat())
        return np.stack(cols, axis=1)

    def dense_reduced(self, tau: float) -> np.ndarray:
        P = self.problem
        cols = []
        for k in range(P.dim_x):
            e = np.zeros(P.dim_x)
            e[k] = 1.0
            cols.append(P.flatten_x(self.reduced_matvec(tau, P.unflatten_x(e))))
        return np.stack(cols, axis=1)


def _check_tau(tau):
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")


def jacobian_element(problem: MultiBlockProblem, w: PrimalDualPoint, sigma: float, tie_rule: str = "lower") -> JacobianHandle:
    return ALState(problem, w, sigma).jacobian(tie_rule)


def reduced_matvec(handle: JacobianHandle, tau: float, dx) -> list:
    return handle.reduced_matvec(tau, dx)


def reduced_rhs(handle: JacobianHandle, tau: float, Fx, Fz) -> list:
    return handle.reduced_rhs(tau, Fx, Fz)


def recover_dz(handle: JacobianHandle, tau: float, dx, Fz) -> list:
    return handle.recover_dz(tau, dx, Fz)


# ---------------------------------------------------------------------------
# Lipschitz bound
# ---------------------------------------------------------------------------


def _smooth_lipschitz(blk: SmoothBlock, seed: int) -> float:
    if blk.lipschitz is not None:
        return float(blk.lipschitz)

    class _Hess(LinearMap):
        def __init__(self):
            super().__init__(blk.shape, blk.shape)

        def _apply(self, d):
            return blk.hess(np.zeros(blk.shape), d)

        _adjoint = _apply

    return operator_norm(_Hess(), seed=seed)


def lipschitz_estimate(problem: MultiBlockProblem, sigma: float, seed: int = 0) -> float:
    """Upper bound on the Lipschitz constant of ``F`` for penalty ``sigma``.

    Every prox-Jacobian element has spectrum in ``[0, 1]``, so with
    ``a = |A|`` (power iteration on the stacked map) the blocks of any ``J``
    satisfy ``|H_xx| <= max(L_i, sigma) + sigma a^2``, ``|H_xz| <= 1 + a`` and
    ``|H_zz| <= 1 / sigma``. The spectral norm of the 2 x 2 matrix of these
    bounds bounds ``|J|`` and hence the Lipschitz constant.
    """
    _check_sigma(sigma)
    P = problem
    stacked = _HorizontalStack(P.maps)
    a = operator_norm(stacked, seed=seed) * (1 + 1e-6) if P.maps else 0.0
    local = [_smooth_lipschitz(blk, seed) for blk in P.smooth_blocks]
    if len(P.nonsmooth_blocks) > 1:
        local.append(sigma)
    hxx = max(local, default=0.0) + sigma * a * a
    hxz = 1.0 + a
    hzz = 1.0 / sigma
    return float(np.linalg.norm(np.array([[hxx, hxz], [hxz, hzz]]), 2))


class _HorizontalStack(LinearMap):
    """``x -> sum_i A_i x_i`` on the flattened product space."""

    def __init__(self, maps):
        self.maps = list(maps)
        self.shapes = [tuple(A.domain_shape) for A in self.maps]
        n = sum(int(np.prod(s)) for s in self.shapes)
        super().__init__((n,), tuple(self.maps[0].range_shape))

    def _apply(self, v):
        return sum(A.apply(x) for A, x in zip(self.maps, _split(v, self.shapes)))

    def _adjoint(self, y):
        return np.concatenate([np.ravel(A.adjoint(y)) for A in self.maps])


def tiny_problem() -> MultiBlockProblem:
    """``min 1/2 (x1 - 1)^2 + |x2|  s.t.  x1 + x2 = 0``, solved by ``x = (0, 0)``.

    The constant ``1/2`` of the smooth block is dropped, so objective values
    are shifted by it.
    """
    return MultiBlockProblem(
        smooth_blocks=[QuadraticBlock((1,), 1.0, -np.ones(1))],
        nonsmooth_blocks=[L1Norm(1.0)],
        maps=[IdentityMap((1,))],
        b=np.zeros(1),
    )
