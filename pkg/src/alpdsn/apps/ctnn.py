"""Corrected tensor-nuclear-norm completion, posed through its dual.

Primal problem over a tensor ``X`` observed on index set ``Omega``::

    min_X  1/(2m) |D_Omega X - y|^2 + mu (TNN(X) - <F, X>)   s.t.  |X|_inf <= c

``F`` is a rank-correction tensor with spectral norm at most one, so the
corrected regularizer is nonnegative. The dual is posed as a three-block
problem with a slack ``Z`` for the spectral-ball variable::

    min  m/2 |v|^2 - <v, y>  +  delta_{|Z|_op <= mu}(Z)  +  c |W|_1
    s.t. D_Omega^* v - Z + W = -mu F

``v`` is the smooth block, ``Z`` the spectral-ball block and ``W`` the last
block. The multiplier of the constraint is the primal tensor ``X``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..alcore import ALState, MultiBlockProblem, QuadraticBlock
from ..linop import AdjointMap, CoordinateSampling, CountingMap, ScaledMap
from ..prox import BoxSupport, OpNormBall
from ..tsvd import t_opball_project, t_spectral_map, tprod, tsvd

__all__ = [
    "CTNNProblemSpec",
    "CTNNProblem",
    "build_ctnn_problem",
    "synth_lowrank_tensor",
    "rank_correction",
    "ctnn_mu",
    "make_ctnn_instance",
]


@dataclass
class CTNNProblemSpec:
    """Data of a completion problem.

    ``omega`` holds distinct flat (C-order) indices of the observed entries.
    The linear term of the primal is ``mu * weight * <F, X>``.
    """

    shape: tuple
    omega: np.ndarray
    y: np.ndarray
    F: np.ndarray
    mu: float
    c: float
    m: float = 1.0
    weight: float = 1.0

    def validate(self) -> "CTNNProblemSpec":
        if len(self.shape) != 3:
            raise ValueError(f"shape must have three modes, got {self.shape}")
        if np.size(self.omega) != np.size(self.y):
            raise ValueError(f"|Omega| = {np.size(self.omega)} but y has {np.size(self.y)} entries")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")
        if not self.m > 0:
            raise ValueError(f"m must be positive, got {self.m}")
        if np.shape(self.F) != tuple(self.shape):
            raise ValueError(f"F has shape {np.shape(self.F)}, expected {tuple(self.shape)}")
        return self


class CTNNProblem(MultiBlockProblem):
    def __init__(self, spec: CTNNProblemSpec):
        spec.validate()
        self.spec = spec
        self.shape = tuple(spec.shape)
        self.sampling = CoordinateSampling(np.asarray(spec.omega), self.shape)
        self.y = np.asarray(spec.y, dtype=float)
        self.mu = float(spec.mu)
        self.c = float(spec.c)
        self.m = float(spec.m)
        self.muF = self.mu * float(spec.weight) * np.asarray(spec.F, dtype=float)
        self.D_counted = CountingMap(AdjointMap(self.sampling))
        super().__init__(
            smooth_blocks=[QuadraticBlock(self.y.shape, self.m, -self.y)],
            nonsmooth_blocks=[OpNormBall(self.mu), BoxSupport(-self.c, self.c)],
            maps=[self.D_counted, ScaledMap(-1.0, shape=self.shape)],
            b=-self.muF,
        )
        self.counted_maps = [self.D_counted]

    def tensor(self, state: ALState) -> np.ndarray:
        """Primal tensor ``X`` (the constraint multiplier)."""
        return state.w.z[-1].copy()

    def kkt_residuals(self, state: ALState) -> dict:
        """Relative KKT residuals ``pi_d, pi_u, pi_w, pi_z`` and their max ``pi_r``."""
        v, Y = state.w.x
        X = state.w.z[-1]
        W = state.prox_points[-1]
        Dv = self.sampling.adjoint(v)
        nrm = np.linalg.norm
        pi_d = nrm(Y - self.muF - Dv - W) / (1 + nrm(self.muF))
        pi_u = nrm(self.m * v - self.y + self.sampling.apply(X)) / (1 + nrm(self.y))
        pi_w = nrm(X - np.clip(X - W, -self.c, self.c)) / (1 + nrm(X) + nrm(W))
        pi_z = nrm(Y - t_opball_project(Y + X, self.mu)) / (1 + nrm(Y) + nrm(X))
        out = {"pi_d": float(pi_d), "pi_u": float(pi_u), "pi_w": float(pi_w), "pi_z": float(pi_z)}
        out["pi_r"] = max(out.values())
        return out

    def pi_r(self, state: ALState) -> float:
        return self.kkt_residuals(state)["pi_r"]

    def objective(self, X) -> float:
        from ..tsvd import tnn

        r = self.sampling.apply(X) - self.y
        return float(np.vdot(r, r)) / (2 * self.m) + self.mu * tnn(X) - float(np.vdot(self.muF, X))


def build_ctnn_problem(spec: CTNNProblemSpec) -> CTNNProblem:
    return CTNNProblem(spec)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


def synth_lowrank_tensor(n1: int, n2: int, n3: int, r: int, seed: int = 0) -> np.ndarray:
    """``A * B`` with standard normal ``A`` (n1 x r x n3) and ``B`` (r x n2 x n3)."""
    if r > min(n1, n2):
        raise ValueError(f"tubal rank {r} exceeds min(n1, n2) = {min(n1, n2)}")
    if r < 0:
        raise ValueError("rank must be nonnegative")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n1, r, n3))
    B = rng.standard_normal((r, n2, n3))
    return tprod(A, B)


def rank_correction(Xm, mode: str = "smooth", rank: int | None = None, eps: float = 0.01, power: float = 2.0) -> np.ndarray:
    """Rank-correction tensor ``U phi(S) V^T`` of a pilot estimate ``Xm``.

    ``mode='smooth'`` uses ``phi(t) = (1 + eps^p) t^p / (t^p + eps^p)`` on
    singular values scaled by the largest one; ``mode='hard'`` keeps the
    leading ``rank`` singular vectors with weight one. Both give spectral
    norm at most one.
    """
    Xm = np.asarray(Xm, dtype=float)
    if mode == "smooth":
        smax = max(float(tsvd(Xm).s_hat.max(initial=0.0)), 1e-300)

        def phi(s):
            t = (s / smax) ** power
            return (1 + eps ** power) * t / (t + eps ** power)

        return t_spectral_map(Xm, phi)
    if mode == "hard":
        if rank is None:
            raise ValueError("hard rank correction needs a rank")

        def phi(s):
            w = np.zeros_like(s)
            w[:rank] = 1.0
            return w

        return t_spectral_map(Xm, phi)
    raise ValueError(f"unknown correction mode {mode!r}")


def ctnn_mu(v, m: float, sigma: float, rho1: float, shape) -> float:
    """``rho1 sigma |v| / sqrt(m) * sqrt(2 log(n1 n3 + n2 n3) / (m min(n1, n2) n3))``."""
    n1, n2, n3 = shape
    return float(rho1 * sigma * np.linalg.norm(v) / np.sqrt(m) * np.sqrt(2 * np.log(n1 * n3 + n2 * n3) / (m * min(n1, n2) * n3)))


def make_ctnn_instance(
    shape=(20, 25, 5),
    rank: int = 3,
    sampling: float = 0.3,
    beta: float = 0.01,
    seed: int = 0,
    rho1: float = 0.1,
    sigma: float = 1.0,
    m: float = 1.0,
    pilot_noise: float = 0.05,
    correction: str = "smooth",
    mu: float | None = None,
) -> CTNNProblem:
    """Synthetic completion problem.

    The pilot estimate is ``X0`` plus Gaussian noise of relative size
    ``pilot_noise``; the correction tensor is computed from it. ``mu`` defaults
    to the data-driven formula of :func:`ctnn_mu` evaluated at ``v = y / m``.
    """
    n1, n2, n3 = shape = tuple(int(s) for s in shape)
    rng = np.random.default_rng(seed)
    X0 = synth_lowrank_tensor(n1, n2, n3, rank, seed)
    N = n1 * n2 * n3
    k = int(round(sampling * N))
    if not 0 < k <= N:
        raise ValueError(f"sampling ratio {sampling} gives {k} observations")
    omega = np.sort(rng.choice(N, size=k, replace=False))
    noisy = X0 + beta * rng.standard_normal(shape)
    y = noisy.ravel()[omega]
    scale = np.linalg.norm(X0) / np.sqrt(N)
    Xm = X0 + pilot_noise * scale * rng.standard_normal(shape)
    F = rank_correction(Xm, correction, rank=rank)
    if mu is None:
        mu = ctnn_mu(y / m, m, sigma, rho1, shape)
    c = float(np.abs(X0).max())
    prob = CTNNProblem(CTNNProblemSpec(shape, omega, y, F, mu, c, m))
    prob.ground_truth = X0
    return prob
