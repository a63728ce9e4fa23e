"""Linear maps with adjoints.

Every map acts on numpy arrays of a fixed ``domain_shape`` and returns arrays
of ``range_shape``. Maps are immutable once built, so ``apply`` and
``adjoint`` are safe to call from several threads at once.

Boundary handling for the convolution and total-variation operators is
periodic, which makes both diagonal in the 2-D discrete Fourier basis.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "DimensionError",
    "LinearMap",
    "DenseMap",
    "SparseMap",
    "IdentityMap",
    "ScaledMap",
    "PeriodicConvolution",
    "FiniteDifferenceTV",
    "CoordinateSampling",
    "Composition",
    "VerticalStack",
    "AdjointMap",
    "CountingMap",
    "apply",
    "adjoint",
    "tv_forward",
    "blur_operator",
    "gaussian_kernel",
    "compose",
    "operator_norm",
    "adjoint_mismatch",
    "read_sparse_triplet",
    "write_sparse_triplet",
]


class DimensionError(ValueError):
    """Raised when an array does not have the shape a map expects."""


def _as_shape(shape) -> tuple[int, ...]:
    if np.isscalar(shape):
        return (int(shape),)
    return tuple(int(s) for s in shape)


class LinearMap:
    """Base class: subclasses implement ``_apply`` and ``_adjoint``."""

    kind = "abstract"

    def __init__(self, domain_shape, range_shape):
        self.domain_shape = _as_shape(domain_shape)
        self.range_shape = _as_shape(range_shape)

    @property
    def domain_size(self) -> int:
        return int(np.prod(self.domain_shape))

    @property
    def range_size(self) -> int:
        return int(np.prod(self.range_shape))

    def apply(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u)
        if u.shape != self.domain_shape:
            raise DimensionError(
                f"{self.kind}: expected input of shape {self.domain_shape}, got {u.shape}"
            )
        return self._apply(u)

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v)
        if v.shape != self.range_shape:
            raise DimensionError(
                f"{self.kind}: expected input of shape {self.range_shape}, got {v.shape}"
            )
        return self._adjoint(v)

    def _apply(self, u):
        raise NotImplementedError

    def _adjoint(self, v):
        raise NotImplementedError

    @property
    def T(self) -> "AdjointMap":
        return AdjointMap(self)

    # Composition sugar: ``A @ B`` is A after B.
    def __matmul__(self, other: "LinearMap") -> "Composition":
        return Composition(self, other)

    def dense(self) -> np.ndarray:
        """Explicit matrix of the map (range_size x domain_size); for tests."""
        cols = []
        for j in range(self.domain_size):
            e = np.zeros(self.domain_size)
            e[j] = 1.0
            cols.append(self.apply(e.reshape(self.domain_shape)).ravel())
        return np.stack(cols, axis=1)

    def __repr__(self):
        return f"{type(self).__name__}({self.domain_shape} -> {self.range_shape})"


class DenseMap(LinearMap):
    kind = "dense"

    def __init__(self, matrix, domain_shape=None, range_shape=None):
        matrix = np.array(matrix, dtype=float)
        if matrix.ndim != 2:
            raise DimensionError("dense map needs a 2-D matrix")
        m, n = matrix.shape
        domain_shape = (n,) if domain_shape is None else _as_shape(domain_shape)
        range_shape = (m,) if range_shape is None else _as_shape(range_shape)
        if np.prod(domain_shape) != n or np.prod(range_shape) != m:
            raise DimensionError("shapes incompatible with matrix size")
        super().__init__(domain_shape, range_shape)
        matrix.setflags(write=False)
        self.matrix = matrix

    def _apply(self, u):
        return (self.matrix @ u.ravel()).reshape(self.range_shape)

    def _adjoint(self, v):
        return (self.matrix.T @ v.ravel()).reshape(self.domain_shape)


class SparseMap(LinearMap):
    kind = "sparse-triplet"

    def __init__(self, rows, cols, values, shape, domain_shape=None, range_shape=None):
        m, n = int(shape[0]), int(shape[1])
        self.matrix = sp.csr_matrix(
            (np.asarray(values, dtype=float), (np.asarray(rows), np.asarray(cols))),
            shape=(m, n),
        )
        self._matrix_t = self.matrix.T.tocsr()
        domain_shape = (n,) if domain_shape is None else _as_shape(domain_shape)
        range_shape = (m,) if range_shape is None else _as_shape(range_shape)
        if np.prod(domain_shape) != n or np.prod(range_shape) != m:
            raise DimensionError("shapes incompatible with matrix size")
        super().__init__(domain_shape, range_shape)

    @classmethod
    def from_matrix(cls, matrix, **kwargs) -> "SparseMap":
        coo = sp.coo_matrix(matrix)
        return cls(coo.row, coo.col, coo.data, coo.shape, **kwargs)

    def _apply(self, u):
        return (self.matrix @ u.ravel()).reshape(self.range_shape)

    def _adjoint(self, v):
        return (self._matrix_t @ v.ravel()).reshape(self.domain_shape)


class IdentityMap(LinearMap):
    kind = "identity"

    def __init__(self, shape):
        super().__init__(shape, shape)

    def _apply(self, u):
        return u.copy()

    def _adjoint(self, v):
        return v.copy()


class ScaledMap(LinearMap):
    """``alpha * A``; a scaled identity when ``base`` is omitted."""

    kind = "scaled"

    def __init__(self, alpha: float, base: LinearMap | None = None, shape=None):
        if base is None:
            if shape is None:
                raise ValueError("shape required for a scaled identity")
            base = IdentityMap(shape)
        super().__init__(base.domain_shape, base.range_shape)
        self.alpha = float(alpha)
        self.base = base

    def _apply(self, u):
        return self.alpha * self.base.apply(u)

    def _adjoint(self, v):
        return self.alpha * self.base.adjoint(v)


class PeriodicConvolution(LinearMap):
    """2-D circular convolution, diagonalized by the FFT.

    The kernel is centred: its middle pixel (``(kh // 2, kw // 2)``) is the
    origin, so a Dirac kernel gives the identity.
    """

    kind = "periodic-convolution-2d"

    def __init__(self, kernel, image_shape):
        kernel = np.asarray(kernel, dtype=float)
        image_shape = _as_shape(image_shape)
        if kernel.ndim != 2 or len(image_shape) != 2:
            raise DimensionError("convolution needs a 2-D kernel and a 2-D image shape")
        if min(image_shape) <= 0:
            raise DimensionError("image shape must be positive")
        kh, kw = kernel.shape
        if kh > image_shape[0] or kw > image_shape[1]:
            raise DimensionError(f"kernel {kernel.shape} larger than image {image_shape}")
        super().__init__(image_shape, image_shape)
        padded = np.zeros(image_shape)
        padded[:kh, :kw] = kernel
        padded = np.roll(padded, (-(kh // 2), -(kw // 2)), axis=(0, 1))
        eig = np.fft.rfft2(padded)
        eig.setflags(write=False)
        self.kernel = kernel
        self.eigenvalues = eig

    def _apply(self, u):
        return np.fft.irfft2(np.fft.rfft2(u) * self.eigenvalues, s=self.domain_shape)

    def _adjoint(self, v):
        return np.fft.irfft2(np.fft.rfft2(v) * np.conj(self.eigenvalues), s=self.domain_shape)


class FiniteDifferenceTV(LinearMap):
    """Forward differences with periodic wrap.

    Output has shape ``(2, n1, n2)``: ``out[0]`` holds vertical differences
    ``u[i+1, j] - u[i, j]`` and ``out[1]`` horizontal ones ``u[i, j+1] - u[i, j]``.
    """

    kind = "finite-difference-tv"

    def __init__(self, image_shape):
        image_shape = _as_shape(image_shape)
        if len(image_shape) != 2 or min(image_shape) < 2:
            raise DimensionError(f"TV needs an image with at least 2 rows and 2 columns, got {image_shape}")
        super().__init__(image_shape, (2,) + image_shape)

    def _apply(self, u):
        out = np.empty(self.range_shape)
        out[0] = np.roll(u, -1, axis=0) - u
        out[1] = np.roll(u, -1, axis=1) - u
        return out

    def _adjoint(self, v):
        return (np.roll(v[0], 1, axis=0) - v[0]) + (np.roll(v[1], 1, axis=1) - v[1])


class CoordinateSampling(LinearMap):
    """Gather entries at flat indices ``omega``; the adjoint scatters."""

    kind = "coordinate-sampling"

    def __init__(self, omega, domain_shape):
        domain_shape = _as_shape(domain_shape)
        omega = np.asarray(omega, dtype=np.intp).ravel()
        n = int(np.prod(domain_shape))
        if omega.size and (omega.min() < 0 or omega.max() >= n):
            raise DimensionError("sample index out of range")
        if np.unique(omega).size != omega.size:
            raise ValueError("sample indices must be distinct")
        super().__init__(domain_shape, (omega.size,))
        omega.setflags(write=False)
        self.omega = omega

    def _apply(self, u):
        return u.ravel()[self.omega].copy()

    def _adjoint(self, v):
        out = np.zeros(self.domain_size)
        out[self.omega] = v
        return out.reshape(self.domain_shape)


class Composition(LinearMap):
    """``outer`` after ``inner``."""

    kind = "composition"

    def __init__(self, outer: LinearMap, inner: LinearMap):
        if inner.range_shape != outer.domain_shape:
            raise DimensionError(
                f"cannot compose: inner range {inner.range_shape} != outer domain {outer.domain_shape}"
            )
        super().__init__(inner.domain_shape, outer.range_shape)
        self.outer = outer
        self.inner = inner

    def _apply(self, u):
        return self.outer.apply(self.inner.apply(u))

    def _adjoint(self, v):
        return self.inner.adjoint(self.outer.adjoint(v))


class VerticalStack(LinearMap):
    """Stack maps sharing a domain; the range is the flat concatenation."""

    kind = "vertical-stack"

    def __init__(self, maps: Sequence[LinearMap]):
        maps = list(maps)
        if not maps:
            raise ValueError("need at least one map")
        dom = maps[0].domain_shape
        for m in maps[1:]:
            if m.domain_shape != dom:
                raise DimensionError("stacked maps must share a domain shape")
        self.maps = tuple(maps)
        self._offsets = np.cumsum([0] + [m.range_size for m in maps])
        super().__init__(dom, (int(self._offsets[-1]),))

    def _apply(self, u):
        return np.concatenate([m.apply(u).ravel() for m in self.maps])

    def _adjoint(self, v):
        out = np.zeros(self.domain_shape)
        for m, a, b in zip(self.maps, self._offsets[:-1], self._offsets[1:]):
            out += m.adjoint(v[a:b].reshape(m.range_shape))
        return out


class AdjointMap(LinearMap):
    """The adjoint ``A*`` of a map as a map in its own right."""

    def __init__(self, base: LinearMap):
        super().__init__(base.range_shape, base.domain_shape)
        self.base = base
        self.kind = f"adjoint({base.kind})"

    def _apply(self, u):
        return self.base.adjoint(u)

    def _adjoint(self, v):
        return self.base.apply(v)


class CountingMap(LinearMap):
    """Wrapper that counts forward and adjoint applications."""

    def __init__(self, base: LinearMap):
        super().__init__(base.domain_shape, base.range_shape)
        self.base = base
        self.kind = base.kind
        self._lock = threading.Lock()
        self.n_apply = 0
        self.n_adjoint = 0

    @property
    def count(self) -> int:
        return self.n_apply + self.n_adjoint

    def reset(self):
        with self._lock:
            self.n_apply = 0
            self.n_adjoint = 0

    def _apply(self, u):
        with self._lock:
            self.n_apply += 1
        return self.base.apply(u)

    def _adjoint(self, v):
        with self._lock:
            self.n_adjoint += 1
        return self.base.adjoint(v)


def apply(A: LinearMap, u) -> np.ndarray:
    return A.apply(u)


def adjoint(A: LinearMap, v) -> np.ndarray:
    return A.adjoint(v)


def compose(outer: LinearMap, inner: LinearMap) -> Composition:
    return Composition(outer, inner)


def tv_forward(image) -> np.ndarray:
    """Periodic vertical/horizontal first differences stacked as ``(2, n1, n2)``."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise DimensionError("tv_forward expects a 2-D image")
    return FiniteDifferenceTV(image.shape).apply(image)


def gaussian_kernel(size: int = 9, std: float = 2.0) -> np.ndarray:
    """Normalized isotropic Gaussian on a ``size x size`` grid."""
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * std**2))
    k = np.outer(g, g)
    return k / k.sum()


def blur_operator(kernel, image_shape) -> PeriodicConvolution:
    return PeriodicConvolution(kernel, image_shape)


def adjoint_mismatch(A: LinearMap, rng=None, trials: int = 1) -> float:
    """Worst ``|<Au, v> - <u, A*v>| / (1 + |u||v|)`` over random pairs."""
    rng = np.random.default_rng(rng)
    worst = 0.0
    for _ in range(trials):
        u = rng.standard_normal(A.domain_shape)
        v = rng.standard_normal(A.range_shape)
        lhs = np.vdot(A.apply(u), v)
        rhs = np.vdot(u, A.adjoint(v))
        worst = max(worst, abs(lhs - rhs) / (1.0 + np.linalg.norm(u) * np.linalg.norm(v)))
    return float(worst)


def operator_norm(A: LinearMap, seed: int = 0, max_iter: int = 200, rtol: float = 1e-9) -> float:
    """Largest singular value of ``A`` by power iteration on ``A* A``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(A.domain_shape)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(max_iter):
        y = A.adjoint(A.apply(x))
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        new = np.sqrt(ny)
        x = y / ny
        if abs(new - est) <= rtol * new:
            est = new
            break
        est = new
    return float(est)


def read_sparse_triplet(path, domain_shape=None, range_shape=None) -> SparseMap:
    """Read ``rows cols nnz`` followed by ``row col value`` lines (0-based)."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: header must be 'rows cols nnz'")
        m, n, nnz = (int(t) for t in header)
        data = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
    if data.shape[0] != nnz or (nnz and data.shape[1] != 3):
        raise ValueError(f"{path}: expected {nnz} triplets, found {data.shape[0]}")
    rows = data[:, 0].astype(np.intp)
    cols = data[:, 1].astype(np.intp)
    if nnz and (rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n):
        raise ValueError(f"{path}: triplet index out of range")
    return SparseMap(rows, cols, data[:, 2], (m, n), domain_shape=domain_shape, range_shape=range_shape)


def write_sparse_triplet(path, matrix) -> None:
    coo = sp.coo_matrix(matrix)
    with Path(path).open("w") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")
