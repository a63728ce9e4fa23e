"""Proximal maps, Moreau envelopes and generalized-Jacobian elements.

Each nonsmooth function ``h`` knows its closed-form ``prox_{t h}`` and can
return one element of the Clarke Jacobian of that map at a point. Proximal
maps of the conjugate are never formed from ``h*`` directly; they go through
the Moreau decomposition

    prox_{s h*}(u) = u - s * prox_{h/s}(u / s),

and so does their Jacobian: ``I - J_{prox_{h/s}}(u / s)``.

Jacobian elements are matrix-free. Diagonal kinds hold a weight per entry;
spectral kinds hold singular vectors plus the divided-difference weight
matrices of the singular-value map. Both are diagonal in an orthonormal frame,
which lets callers apply any scalar function of the element (needed for the
shifted inverses in the Newton system) without forming a matrix.
"""

from __future__ import annotations

from typing import Callable, Literal

import numpy as np

TieRule = Literal["lower", "upper"]

__all__ = [
    "UnsupportedKindError",
    "ProxFunction",
    "Zero",
    "Box",
    "L1Norm",
    "LinfBall",
    "BoxSupport",
    "NuclearNorm",
    "OpNormBall",
    "JacobianElement",
    "DiagonalJacobian",
    "SpectralJacobian",
    "prox",
    "moreau_envelope",
    "envelope_gradient",
    "conjugate_prox",
    "prox_jacobian",
    "conjugate_prox_jacobian",
    "soft_threshold",
    "spectral_weights",
]

# relative tolerance for calling two singular values equal
SV_TIE_TOL = 1e-12


class UnsupportedKindError(TypeError):
    """The function has no closed-form prox or Jacobian."""


def _check_tie(tie_rule: str) -> float:
    if tie_rule == "lower":
        return 0.0
    if tie_rule == "upper":
        return 1.0
    raise ValueError(f"tie_rule must be 'lower' or 'upper', got {tie_rule!r}")


def soft_threshold(x, thr):
    return np.sign(x) * np.maximum(np.abs(x) - thr, 0.0)


# ---------------------------------------------------------------------------
# Jacobian elements
# ---------------------------------------------------------------------------


class JacobianElement:
    """A symmetric PSD linear map with spectrum in [0, 1].

    ``apply_fn(fn, d)`` applies ``fn(J)`` where ``fn`` acts elementwise on the
    eigen-weights; ``fn=None`` is the identity function.
    """

    kind = "abstract"

    def apply(self, d: np.ndarray) -> np.ndarray:
        return self.apply_fn(None, d)

    def apply_fn(self, fn: Callable | None, d: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def complement(self) -> "JacobianElement":
        """The element ``I - J``."""
        raise NotImplementedError

    def dense(self) -> np.ndarray:
        """Explicit matrix on the flattened space (tests only)."""
        n = int(np.prod(self.shape))
        cols = []
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            cols.append(self.apply(e.reshape(self.shape)).ravel())
        return np.stack(cols, axis=1)


class DiagonalJacobian(JacobianElement):
    def __init__(self, weights):
        w = np.asarray(weights, dtype=float)
        w.setflags(write=False)
        self.weights = w
        self.shape = w.shape

    @property
    def kind(self) -> str:
        if np.all((self.weights == 0.0) | (self.weights == 1.0)):
            return "diagonal-mask"
        return "interval-diagonal"

    def apply_fn(self, fn, d):
        w = self.weights if fn is None else fn(self.weights)
        return w * d

    def complement(self):
        return DiagonalJacobian(1.0 - self.weights)


def spectral_weights(s, g: Callable, gprime: Callable):
    """Divided-difference weights of the odd spectral map ``s -> g(s)``.

    Returns ``(w_sym, w_skew, w_rect)``: the ``m x m`` weights acting on the
    Hermitian and skew-Hermitian parts of the leading block and the ``m``-vector
    of row weights for the rectangular remainder. ``gprime`` supplies the
    derivative on ties (equal or vanishing singular values).
    """
    s = np.asarray(s, dtype=float)
    tol = SV_TIE_TOL * max(1.0, float(s.max(initial=0.0)))
    gs = g(s)
    diff = s[:, None] - s[None, :]
    tie = np.abs(diff) <= tol
    safe = np.where(tie, 1.0, diff)
    w_sym = np.where(tie, gprime(np.maximum(s[:, None], s[None, :])), (gs[:, None] - gs[None, :]) / safe)
    tot = s[:, None] + s[None, :]
    zero = tot <= tol
    w_skew = np.where(zero, gprime(np.zeros_like(tot)), (gs[:, None] + gs[None, :]) / np.where(zero, 1.0, tot))
    small = s <= tol
    w_rect = np.where(small, gprime(np.zeros_like(s)), gs / np.where(small, 1.0, s))
    return w_sym, w_skew, w_rect


class SpectralJacobian(JacobianElement):
    """Jacobian of a spectral map ``X = U diag(s) V^H -> U diag(g(s)) V^H``.

    Works for real or complex matrices; wide (``m <= n``) internally, tall
    inputs are handled through the conjugate transpose.
    """

    kind = "spectral-omega"

    def __init__(self, U, s, Vh, w_sym, w_skew, w_rect, shape, transposed=False, complemented=False):
        self.U = U
        self.s = s
        self.Vh = Vh
        self.w_sym = w_sym
        self.w_skew = w_skew
        self.w_rect = w_rect
        self.shape = tuple(shape)
        self.transposed = transposed
        self.complemented = complemented

    @classmethod
    def from_matrix(cls, X, g, gprime) -> "SpectralJacobian":
        X = np.asarray(X)
        shape = X.shape
        transposed = shape[0] > shape[1]
        Xw = X.conj().T if transposed else X
        U, s, Vh = np.linalg.svd(Xw, full_matrices=False)
        w_sym, w_skew, w_rect = spectral_weights(s, g, gprime)
        return cls(U, s, Vh, w_sym, w_skew, w_rect, shape, transposed)

    @classmethod
    def from_svd(cls, U, s, Vh, g, gprime, shape=None, transposed=False) -> "SpectralJacobian":
        """Build from a thin SVD of the wide frame (``U`` square, ``Vh`` m x n)."""
        w_sym, w_skew, w_rect = spectral_weights(s, g, gprime)
        if shape is None:
            shape = (Vh.shape[1], U.shape[0]) if transposed else (U.shape[0], Vh.shape[1])
        return cls(U, s, Vh, w_sym, w_skew, w_rect, shape, transposed)

    def complement(self):
        return SpectralJacobian(
            self.U, self.s, self.Vh, self.w_sym, self.w_skew, self.w_rect,
            self.shape, self.transposed, not self.complemented,
        )

    def effective_weights(self, fn=None):
        ws, wk, wr = self.w_sym, self.w_skew, self.w_rect
        if self.complemented:
            ws, wk, wr = 1.0 - ws, 1.0 - wk, 1.0 - wr
        if fn is not None:
            ws, wk, wr = fn(ws), fn(wk), fn(wr)
        return ws, wk, wr

    def apply_fn(self, fn, d, path: str = "auto"):
        d = np.asarray(d)
        G = d.conj().T if self.transposed else d
        ws, wk, wr = self.effective_weights(fn)
        alpha = None
        if path != "dense":
            alpha = _lowrank_support(ws, wk, wr)
            if path == "lowrank" and alpha is None:
                raise ValueError("weights have no low-rank structure")
        if alpha is not None and alpha.size < ws.shape[0]:
            out = _apply_lowrank(self.U, self.Vh, ws, wk, wr, G, alpha)
        else:
            out = _apply_dense(self.U, self.Vh, ws, wk, wr, G)
        if self.transposed:
            out = out.conj().T
        if not (np.iscomplexobj(d) or np.iscomplexobj(self.U)):
            out = out.real
        return out


def _lowrank_support(ws, wk, wr):
    """Leading index set ``alpha`` outside of which all weights vanish, or None."""
    active = (np.diagonal(ws) != 0) | (np.diagonal(wk) != 0) | (wr != 0)
    r = int(active.sum())
    if not np.all(active[:r]):
        return None
    if np.any(ws[r:, r:] != 0) or np.any(wk[r:, r:] != 0):
        return None
    return np.arange(r)


def _apply_dense(U, Vh, ws, wk, wr, G):
    # thin frame: U is m x m, Vh is m x n; the part of G orthogonal to the
    # row space of Vh is weighted row-wise by wr
    UG = U.conj().T @ G
    G1 = UG @ Vh.conj().T
    G1h = G1.conj().T
    R1 = ws * (G1 + G1h) / 2 + wk * (G1 - G1h) / 2
    return U @ (R1 @ Vh + wr[:, None] * (UG - G1 @ Vh))


def _apply_lowrank(U, Vh, ws, wk, wr, G, alpha):
    """Same map as the dense path, touching only blocks that meet ``alpha``.

    With ``r = len(alpha)`` every product costs O(m n r).
    """
    r = alpha.size
    Ua, Ub = U[:, :r], U[:, r:]
    Va = Vh[:r]
    UaG = Ua.conj().T @ G                     # r x n
    row = UaG @ Vh.conj().T                   # G1[alpha, :]
    col_b = Ub.conj().T @ (G @ Va.conj().T)   # G1[abar, alpha]
    Gaa = row[:, :r]
    Gab = row[:, r:]
    Raa = ws[:r, :r] * (Gaa + Gaa.conj().T) / 2 + wk[:r, :r] * (Gaa - Gaa.conj().T) / 2
    Rab = ws[:r, r:] * (Gab + col_b.conj().T) / 2 + wk[:r, r:] * (Gab - col_b.conj().T) / 2
    Rba = ws[r:, :r] * (col_b + Gab.conj().T) / 2 + wk[r:, :r] * (col_b - Gab.conj().T) / 2
    top = Raa @ Va + Rab @ Vh[r:] + wr[:r, None] * (UaG - row @ Vh)
    return Ua @ top + Ub @ (Rba @ Va)


# ---------------------------------------------------------------------------
# Functions
# ---------------------------------------------------------------------------


class ProxFunction:
    """A closed convex function with a closed-form proximal map."""

    kind = "abstract"
    is_indicator = False

    def value(self, x) -> float:
        raise NotImplementedError

    def prox(self, x, t: float):
        raise UnsupportedKindError(f"{self.kind} has no closed-form prox")

    def jacobian(self, x, t: float, tie_rule: TieRule = "lower") -> JacobianElement:
        raise UnsupportedKindError(f"{self.kind} has no Jacobian rule")

    def __call__(self, x):
        return self.value(x)

    def __repr__(self):
        params = ", ".join(f"{k}={v!r}" for k, v in vars(self).items())
        return f"{type(self).__name__}({params})"


def _inf_unless(ok: bool) -> float:
    return 0.0 if ok else np.inf


class Zero(ProxFunction):
    kind = "zero-function"

    def value(self, x):
        return 0.0

    def prox(self, x, t):
        return np.array(x, dtype=float, copy=True)

    def jacobian(self, x, t, tie_rule="lower"):
        return DiagonalJacobian(np.ones(np.shape(x)))


class Box(ProxFunction):
    """Indicator of ``{lo <= x <= hi}``."""

    kind = "box-indicator"
    is_indicator = True

    def __init__(self, lo: float, hi: float):
        if lo > hi:
            raise ValueError("box needs lo <= hi")
        self.lo = float(lo)
        self.hi = float(hi)

    def value(self, x):
        x = np.asarray(x)
        slack = 1e-12 * max(1.0, abs(self.lo), abs(self.hi))
        return _inf_unless(bool(np.all(x >= self.lo - slack) and np.all(x <= self.hi + slack)))

    def prox(self, x, t):
        return np.clip(x, self.lo, self.hi)

    def jacobian(self, x, t, tie_rule="lower"):
        tie = _check_tie(tie_rule)
        x = np.asarray(x, dtype=float)
        w = np.where((x > self.lo) & (x < self.hi), 1.0, 0.0)
        w = np.where((x == self.lo) | (x == self.hi), tie, w)
        return DiagonalJacobian(w)


class LinfBall(Box):
    """Indicator of ``{|x|_inf <= lam}``."""

    kind = "linf-ball-indicator"

    def __init__(self, lam: float):
        if lam < 0:
            raise ValueError("radius must be nonnegative")
        super().__init__(-lam, lam)
        self.lam = float(lam)


class L1Norm(ProxFunction):
    """``lam * |x|_1``."""

    kind = "l1-norm"

    def __init__(self, lam: float):
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        self.lam = float(lam)

    def value(self, x):
        return self.lam * float(np.sum(np.abs(x)))

    def prox(self, x, t):
        return soft_threshold(np.asarray(x, dtype=float), t * self.lam)

    def jacobian(self, x, t, tie_rule="lower"):
        tie = _check_tie(tie_rule)
        ax = np.abs(np.asarray(x, dtype=float))
        thr = t * self.lam
        w = np.where(ax > thr, 1.0, 0.0)
        if thr > 0:
            w = np.where(ax == thr, tie, w)
        else:
            w = np.ones_like(ax)
        return DiagonalJacobian(w)


class BoxSupport(ProxFunction):
    """Support function of ``[lo, hi]``: ``sum_i max(lo x_i, hi x_i)``.

    Its conjugate is the box indicator, so ``prox_{t h}(x) = x - t clip(x/t)``.
    """

    kind = "box-support-function"

    def __init__(self, lo: float, hi: float):
        if lo > hi:
            raise ValueError("box needs lo <= hi")
        self.lo = float(lo)
        self.hi = float(hi)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(np.sum(np.maximum(self.lo * x, self.hi * x)))

    def prox(self, x, t):
        x = np.asarray(x, dtype=float)
        return x - t * np.clip(x / t, self.lo, self.hi)

    def jacobian(self, x, t, tie_rule="lower"):
        tie = _check_tie(tie_rule)
        y = np.asarray(x, dtype=float) / t
        w = np.where((y > self.lo) & (y < self.hi), 0.0, 1.0)
        w = np.where((y == self.lo) | (y == self.hi), tie, w)
        return DiagonalJacobian(w)


def _soft_pair(thr: float, tie: float):
    def g(s):
        return np.maximum(s - thr, 0.0)

    def gprime(s):
        if thr == 0.0:
            return np.ones_like(s)
        return np.where(s > thr, 1.0, np.where(s < thr, 0.0, tie))

    return g, gprime


def _clip_pair(mu: float, tie: float):
    def g(s):
        return np.minimum(s, mu)

    def gprime(s):
        return np.where(s < mu, 1.0, np.where(s > mu, 0.0, tie))

    return g, gprime


def _svd_map(X, g):
    U, s, Vh = np.linalg.svd(X, full_matrices=False)
    return (U * g(s)) @ Vh


class NuclearNorm(ProxFunction):
    """``mu * |X|_*`` for matrices; ``mu * TNN(X)`` for third-order tensors."""

    kind = "nuclear-norm"

    def __init__(self, mu: float):
        if mu < 0:
            raise ValueError("mu must be nonnegative")
        self.mu = float(mu)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 3:
            from .tsvd import tnn

            return self.mu * tnn(x)
        return self.mu * float(np.linalg.svd(x, compute_uv=False).sum())

    def prox(self, x, t):
        x = np.asarray(x, dtype=float)
        g, _ = _soft_pair(t * self.mu, 0.0)
        if x.ndim == 3:
            from .tsvd import t_spectral_map

            return t_spectral_map(x, g)
        return _svd_map(x, g)

    def jacobian(self, x, t, tie_rule="lower"):
        g, gp = _soft_pair(t * self.mu, _check_tie(tie_rule))
        x = np.asarray(x, dtype=float)
        if x.ndim == 3:
            from .tsvd import TensorSpectralJacobian

            return TensorSpectralJacobian.from_tensor(x, g, gp)
        return SpectralJacobian.from_matrix(x, g, gp)


class OpNormBall(ProxFunction):
    """Indicator of ``{|X|_op <= mu}``; the tensor op norm is the dual of TNN."""

    kind = "opnorm-ball-indicator"
    is_indicator = True

    def __init__(self, mu: float):
        if mu < 0:
            raise ValueError("mu must be nonnegative")
        self.mu = float(mu)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 3:
            from .tsvd import tensor_opnorm

            nrm = tensor_opnorm(x)
        else:
            nrm = float(np.linalg.norm(x, 2))
        return _inf_unless(nrm <= self.mu * (1 + 1e-10) + 1e-14)

    def prox(self, x, t):
        x = np.asarray(x, dtype=float)
        g, _ = _clip_pair(self.mu, 0.0)
        if x.ndim == 3:
            from .tsvd import t_spectral_map

            return t_spectral_map(x, g)
        return _svd_map(x, g)

    def jacobian(self, x, t, tie_rule="lower"):
        g, gp = _clip_pair(self.mu, _check_tie(tie_rule))
        x = np.asarray(x, dtype=float)
        if x.ndim == 3:
            from .tsvd import TensorSpectralJacobian

            return TensorSpectralJacobian.from_tensor(x, g, gp)
        return SpectralJacobian.from_matrix(x, g, gp)


# ---------------------------------------------------------------------------
# Module-level API
# ---------------------------------------------------------------------------


def _positive(name, v):
    if not v > 0:
        raise ValueError(f"{name} must be positive, got {v}")


def prox(h: ProxFunction, t: float, x) -> np.ndarray:
    """``argmin_y h(y) + |y - x|^2 / (2t)``."""
    _positive("t", t)
    return h.prox(np.asarray(x, dtype=float), t)


def moreau_envelope(h: ProxFunction, sigma: float, x) -> float:
    """``min_y h(y) + (sigma/2)|y - x|^2``."""
    _positive("sigma", sigma)
    x = np.asarray(x, dtype=float)
    p = h.prox(x, 1.0 / sigma)
    hv = 0.0 if h.is_indicator else h.value(p)
    return float(hv + 0.5 * sigma * np.sum((p - x) ** 2))


def envelope_gradient(h: ProxFunction, sigma: float, x) -> np.ndarray:
    """``sigma (x - prox_{h/sigma}(x))``, the gradient of the envelope."""
    _positive("sigma", sigma)
    x = np.asarray(x, dtype=float)
    return sigma * (x - h.prox(x, 1.0 / sigma))


def conjugate_prox(h: ProxFunction, sigma: float, u) -> np.ndarray:
    """``prox_{sigma h*}(u)`` via the Moreau decomposition."""
    _positive("sigma", sigma)
    u = np.asarray(u, dtype=float)
    return u - sigma * h.prox(u / sigma, 1.0 / sigma)


def prox_jacobian(h: ProxFunction, t: float, x, tie_rule: TieRule = "lower") -> JacobianElement:
    _positive("t", t)
    return h.jacobian(np.asarray(x, dtype=float), t, tie_rule)


def conjugate_prox_jacobian(h: ProxFunction, sigma: float, u, tie_rule: TieRule = "lower") -> JacobianElement:
    """Element of the Jacobian of ``prox_{sigma h*}`` at ``u``: ``I - J_{prox_{h/sigma}}(u/sigma)``."""
    _positive("sigma", sigma)
    u = np.asarray(u, dtype=float)
    return h.jacobian(u / sigma, 1.0 / sigma, tie_rule).complement()
