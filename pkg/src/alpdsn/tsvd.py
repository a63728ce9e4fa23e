"""Third-order tensor algebra under the FFT-based t-product.

Conventions
-----------
``X̄`` denotes the (unnormalized) DFT of ``X`` along the third mode, so
``|X|_F = |X̄|_F / sqrt(n3)``. The tensor nuclear norm is

    TNN(X) = (1/n3) * sum_k |X̄^(k)|_*,

whose dual norm under the real Frobenius inner product is
``max_k |X̄^(k)|_op``. With this scaling ``prox_{mu TNN}`` soft-thresholds each
spectral slice at ``mu`` and projection onto the dual ball clips each spectral
slice at ``mu``; for ``n3 = 1`` both reduce to the matrix case.

Real tensors have conjugate-symmetric spectra, so only slices
``0 .. n3 // 2`` are factorized (``rfft``); the rest are mirrors.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .prox import JacobianElement, SpectralJacobian, _clip_pair, _soft_pair, _check_tie

__all__ = [
    "TSVDFactors",
    "TensorSpectralJacobian",
    "spectral",
    "from_spectral",
    "tprod",
    "ttranspose",
    "identity_tensor",
    "bcirc",
    "tsvd",
    "tnn",
    "tensor_opnorm",
    "t_spectral_map",
    "t_svt",
    "t_opball_project",
    "d2_action",
    "read_tensor",
    "write_tensor",
]


def _check3(X, name="X"):
    X = np.asarray(X, dtype=float)
    if X.ndim != 3:
        raise ValueError(f"{name} must be a third-order array, got ndim={X.ndim}")
    return X


def spectral(X) -> np.ndarray:
    """Half spectrum along mode 3, shape ``(n1, n2, n3 // 2 + 1)``."""
    return np.fft.rfft(_check3(X), axis=2)


def from_spectral(Xh, n3: int) -> np.ndarray:
    return np.fft.irfft(Xh, n=n3, axis=2)


def _slice_weights(n3: int) -> np.ndarray:
    """Multiplicity of each half-spectrum slice in the full spectrum."""
    nh = n3 // 2 + 1
    w = np.full(nh, 2.0)
    w[0] = 1.0
    if n3 % 2 == 0:
        w[-1] = 1.0
    return w


def tprod(X, Y) -> np.ndarray:
    """t-product: slice-wise matrix product in the spectral domain."""
    X = _check3(X)
    Y = _check3(Y, "Y")
    if X.shape[1] != Y.shape[0] or X.shape[2] != Y.shape[2]:
        raise ValueError(f"t-product shape mismatch: {X.shape} * {Y.shape}")
    Z = np.einsum("ijk,jlk->ilk", spectral(X), spectral(Y))
    return from_spectral(Z, X.shape[2])


def ttranspose(X) -> np.ndarray:
    """Tensor transpose: transpose each frontal slice, reverse slices 2..n3."""
    X = _check3(X)
    Xt = np.transpose(X, (1, 0, 2))
    return np.concatenate([Xt[:, :, :1], Xt[:, :, :0:-1]], axis=2)


def identity_tensor(n: int, n3: int) -> np.ndarray:
    I = np.zeros((n, n, n3))
    I[:, :, 0] = np.eye(n)
    return I


def bcirc(X) -> np.ndarray:
    """Block-circulant matrix of the frontal slices (for testing)."""
    X = _check3(X)
    n1, n2, n3 = X.shape
    B = np.zeros((n1 * n3, n2 * n3))
    for i in range(n3):
        for j in range(n3):
            B[i * n1:(i + 1) * n1, j * n2:(j + 1) * n2] = X[:, :, (i - j) % n3]
    return B


@dataclass
class TSVDFactors:
    """Spectral t-SVD factors of a real ``n1 x n2 x n3`` tensor.

    ``U_hat[k]`` (n1 x n1), ``s_hat[k]`` and ``Vh_hat[k]`` (n2 x n2) are the full
    SVD of half-spectrum slice ``k``. ``S`` holds the singular values of all
    ``n3`` spectral slices, shape ``(n3, min(n1, n2))``.
    """

    U_hat: list
    s_hat: np.ndarray
    Vh_hat: list
    shape: tuple

    @property
    def n3(self) -> int:
        return self.shape[2]

    @property
    def S(self) -> np.ndarray:
        full = np.empty((self.n3, self.s_hat.shape[1]))
        nh = self.s_hat.shape[0]
        full[:nh] = self.s_hat
        for k in range(nh, self.n3):
            full[k] = self.s_hat[self.n3 - k]
        return full

    def tubal_rank(self, tol: float = 1e-10) -> int:
        s = self.s_hat
        scale = max(1.0, float(s.max(initial=0.0)))
        return int((s > tol * scale).sum(axis=1).max(initial=0))

    def _assemble(self, mats) -> np.ndarray:
        return from_spectral(np.stack(mats, axis=2), self.n3)

    @property
    def U(self) -> np.ndarray:
        return self._assemble(self.U_hat)

    @property
    def V(self) -> np.ndarray:
        return self._assemble([Vh.conj().T for Vh in self.Vh_hat])

    def s_tensor(self) -> np.ndarray:
        """The f-diagonal ``n1 x n2 x n3`` tensor of singular values."""
        n1, n2, _ = self.shape
        mats = []
        for s in self.s_hat:
            M = np.zeros((n1, n2))
            M[np.arange(s.size), np.arange(s.size)] = s
            mats.append(M)
        return self._assemble(mats)

    def tnn(self) -> float:
        return float(_slice_weights(self.n3) @ self.s_hat.sum(axis=1)) / self.n3


def tsvd(X) -> TSVDFactors:
    X = _check3(X)
    Xh = spectral(X)
    U_hat, s_list, Vh_hat = [], [], []
    for k in range(Xh.shape[2]):
        U, s, Vh = np.linalg.svd(Xh[:, :, k], full_matrices=True)
        U_hat.append(U)
        s_list.append(s)
        Vh_hat.append(Vh)
    return TSVDFactors(U_hat, np.array(s_list), Vh_hat, X.shape)


def tnn(X) -> float:
    """``(1/n3) sum_k |X̄^(k)|_*``."""
    X = _check3(X)
    Xh = spectral(X)
    s = np.array([np.linalg.svd(Xh[:, :, k], compute_uv=False) for k in range(Xh.shape[2])])
    return float(_slice_weights(X.shape[2]) @ s.sum(axis=1)) / X.shape[2]


def tensor_opnorm(X) -> float:
    """``max_k |X̄^(k)|_op``, the dual norm of :func:`tnn`."""
    Xh = spectral(X)
    return max(float(np.linalg.norm(Xh[:, :, k], 2)) for k in range(Xh.shape[2]))


def t_spectral_map(X, g) -> np.ndarray:
    """Apply the odd singular-value map ``g`` to every spectral slice."""
    X = _check3(X)
    Xh = spectral(X)
    out = np.empty_like(Xh)
    for k in range(Xh.shape[2]):
        U, s, Vh = np.linalg.svd(Xh[:, :, k], full_matrices=False)
        out[:, :, k] = (U * g(s)) @ Vh
    return from_spectral(out, X.shape[2])


def t_svt(X, mu: float) -> np.ndarray:
    """``prox_{mu TNN}(X)``: soft-threshold singular values of each spectral slice."""
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    g, _ = _soft_pair(float(mu), 0.0)
    return t_spectral_map(X, g)


def t_opball_project(X, mu: float) -> np.ndarray:
    """Projection onto ``{tensor_opnorm <= mu}``."""
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    g, _ = _clip_pair(float(mu), 0.0)
    return t_spectral_map(X, g)


def _slice_jacobian(U, s, Vh, g, gp) -> SpectralJacobian:
    """Jacobian element of one slice from its full SVD."""
    m, n = U.shape[0], Vh.shape[0]
    if m <= n:
        return SpectralJacobian.from_svd(U, s, Vh[:m], g, gp, shape=(m, n))
    # tall slice: work with the conjugate transpose
    return SpectralJacobian.from_svd(Vh.conj().T, s, U[:, :n].conj().T, g, gp, shape=(m, n), transposed=True)


class TensorSpectralJacobian(JacobianElement):
    """Jacobian element of a slice-wise spectral map on real tensors.

    Acts as ``G -> ifft_k( J_k(Ḡ^(k)) )`` where ``J_k`` is the matrix element of
    spectral slice ``k``; it is self-adjoint under the real inner product.
    """

    kind = "spectral-omega"

    def __init__(self, slices, shape):
        self.slices = list(slices)
        self.shape = tuple(shape)

    @classmethod
    def from_tensor(cls, X, g, gp) -> "TensorSpectralJacobian":
        return cls.from_factors(tsvd(X), g, gp)

    @classmethod
    def from_factors(cls, factors: TSVDFactors, g, gp) -> "TensorSpectralJacobian":
        slices = [
            _slice_jacobian(U, s, Vh, g, gp)
            for U, s, Vh in zip(factors.U_hat, factors.s_hat, factors.Vh_hat)
        ]
        return cls(slices, factors.shape)

    def complement(self):
        return TensorSpectralJacobian([J.complement() for J in self.slices], self.shape)

    def apply_fn(self, fn, d, path: str = "auto"):
        d = np.asarray(d, dtype=float)
        if d.shape != self.shape:
            raise ValueError(f"direction shape {d.shape} does not match factorized tensor {self.shape}")
        Dh = spectral(d)
        out = np.empty_like(Dh)
        for k, J in enumerate(self.slices):
            out[:, :, k] = J.apply_fn(fn, Dh[:, :, k], path=path)
        return from_spectral(out, self.shape[2])


def d2_action(factors: TSVDFactors, mu: float, G, tie_rule: str = "lower", path: str = "auto") -> np.ndarray:
    """Directional derivative of ``t_svt(., mu)`` at the factorized tensor.

    ``path='lowrank'`` forms only the blocks meeting the leading index set of
    each slice; ``'dense'`` forms all blocks; ``'auto'`` picks low-rank when the
    weight pattern allows it.
    """
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    g, gp = _soft_pair(float(mu), _check_tie(tie_rule))
    J = TensorSpectralJacobian.from_factors(factors, g, gp)
    return J.apply_fn(None, G, path=path)


# ---------------------------------------------------------------------------
# Binary I/O
# ---------------------------------------------------------------------------

_HEADER = np.dtype("<i8")
_DATA = np.dtype("<f8")


def write_tensor(path, X) -> None:
    """Write ``n1 n2 n3`` (int64 LE) then the data (float64 LE, C order).

    Written to a temporary file and renamed, so readers never see a partial file.
    """
    X = _check3(X)
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(np.asarray(X.shape, dtype=_HEADER).tobytes())
            fh.write(np.ascontiguousarray(X, dtype=_DATA).tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 24:
        raise ValueError(f"{path}: truncated header")
    shape = tuple(int(v) for v in np.frombuffer(raw[:24], dtype=_HEADER))
    if any(v <= 0 for v in shape):
        raise ValueError(f"{path}: invalid dimensions {shape}")
    expected = 24 + 8 * int(np.prod(shape))
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for shape {shape}, found {len(raw)}")
    return np.frombuffer(raw[24:], dtype=_DATA).reshape(shape).astype(float)
