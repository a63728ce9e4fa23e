"""Box-constrained TV image restoration, posed through its dual.

Primal problem over an image ``u``::

    min_u  1/2 |A u - b|^2 + lam |D u|_1   s.t.  lo <= u <= hi

Its dual, written as a three-block constrained problem::

    min  1/2 |y|^2 + <y, b>  +  delta_{|s|_inf <= lam}(s)  +  supp_Q(nu)
    s.t. A^T y + D^T s + nu = 0

``y`` is the smooth block, ``s`` the clipped block and ``nu`` the last block.
The multiplier of the constraint is minus the image, so the restored image is
read off the final conjugate prox point, which always lies in the pixel box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..alcore import ALState, MultiBlockProblem, PrimalDualPoint, QuadraticBlock
from ..linop import (
    AdjointMap,
    CountingMap,
    DenseMap,
    FiniteDifferenceTV,
    LinearMap,
    ScaledMap,
    adjoint_mismatch,
    blur_operator,
    gaussian_kernel,
    read_sparse_triplet,
)
from ..prox import BoxSupport, L1Norm, LinfBall, Box

__all__ = [
    "ImageProblemSpec",
    "ImageProblem",
    "build_image_problem",
    "phantom",
    "make_deblur_instance",
    "make_dense_instance",
    "make_sparse_instance",
]

ADJOINT_TOL = 1e-9


@dataclass
class ImageProblemSpec:
    """Data of a restoration problem.

    ``operator`` maps images of ``image_shape`` to observations shaped like ``b``.
    ``tv`` selects the regularizing transform: ``"anisotropic"`` forward
    differences with periodic boundary, or ``"none"`` for a zero transform.
    """

    operator: LinearMap
    b: np.ndarray
    lam: float
    image_shape: tuple
    box: tuple = (0.0, 255.0)
    tv: str = "anisotropic"

    def validate(self) -> "ImageProblemSpec":
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        lo, hi = self.box
        if not lo < hi:
            raise ValueError(f"pixel box needs lo < hi, got {self.box}")
        if tuple(self.operator.domain_shape) != tuple(self.image_shape):
            raise ValueError(f"operator acts on {self.operator.domain_shape}, image is {tuple(self.image_shape)}")
        if tuple(self.operator.range_shape) != np.shape(self.b):
            raise ValueError(f"operator maps into {self.operator.range_shape}, observations have shape {np.shape(self.b)}")
        if self.tv not in ("anisotropic", "none"):
            raise ValueError(f"unknown tv operator {self.tv!r}")
        return self


class ImageProblem(MultiBlockProblem):
    """Dual restoration problem plus the primal-side helpers.

    ``A`` and ``D`` are the plain operators; the block maps wrap ``A^T`` in a
    counter so solver work can be measured in applications of ``A``.
    """

    def __init__(self, spec: ImageProblemSpec):
        spec.validate()
        self.spec = spec
        self.A = spec.operator
        self.image_shape = tuple(spec.image_shape)
        if spec.tv == "anisotropic":
            self.D = FiniteDifferenceTV(self.image_shape)
        else:
            self.D = ScaledMap(0.0, shape=self.image_shape)
        self.lam = float(spec.lam)
        self.lo, self.hi = map(float, spec.box)
        self.obs = np.asarray(spec.b, dtype=float)
        self.A_counted = CountingMap(AdjointMap(self.A))
        super().__init__(
            smooth_blocks=[QuadraticBlock(self.obs.shape, 1.0, self.obs)],
            nonsmooth_blocks=[LinfBall(self.lam), BoxSupport(self.lo, self.hi)],
            maps=[self.A_counted, AdjointMap(self.D)],
            b=np.zeros(self.image_shape),
        )
        self.counted_maps = [self.A_counted]
        self._self_check()

    def _self_check(self):
        rng = np.random.default_rng(12345)
        for name, M in (("A", self.A), ("D", self.D)):
            err = adjoint_mismatch(M, rng)
            if err > ADJOINT_TOL:
                raise ValueError(f"operator {name} fails the adjoint test (mismatch {err:.2e})")

    # primal side

    def image(self, state: ALState) -> np.ndarray:
        """Restored image at a solver state (always inside the pixel box)."""
        return state.p[-1].copy()

    def image_from_point(self, w: PrimalDualPoint, sigma: float = 1.0) -> np.ndarray:
        return self.image(ALState(self, w, sigma))

    def objective(self, u) -> float:
        """Primal objective; the box is not checked."""
        r = self.A.apply(u) - self.obs
        return 0.5 * float(np.vdot(r, r)) + self.lam * float(np.abs(self.D.apply(u)).sum())

    def three_term(self):
        """The primal as ``f(u) + g(D u) + h(u)`` for the splitting methods."""
        from ..firstorder import ThreeTermProblem, least_squares_term

        return ThreeTermProblem(
            f=least_squares_term(CountingMap(self.A), self.obs),
            g=L1Norm(self.lam),
            B=self.D,
            h=Box(self.lo, self.hi),
            objective=self.objective,
        )

    def active_fraction(self, state: ALState, tol: float = 1e-8) -> float:
        """Fraction of prox inputs within ``tol`` of a kink (strict-complementarity probe)."""
        s = state.sigma
        u_s = state.u[0] / s
        u_n = state.u[-1] / s
        near_s = np.abs(np.abs(u_s) - self.lam) <= tol
        near_n = (np.abs(u_n - self.lo) <= tol) | (np.abs(u_n - self.hi) <= tol)
        return float((near_s.sum() + near_n.sum()) / (near_s.size + near_n.size))


def build_image_problem(spec: ImageProblemSpec) -> ImageProblem:
    return ImageProblem(spec)


# ---------------------------------------------------------------------------
# Instances
# ---------------------------------------------------------------------------


def phantom(n: int, seed: int = 0, lo: float = 20.0, hi: float = 235.0) -> np.ndarray:
    """Piecewise-smooth test image: a few discs and rectangles on a ramp."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:n, 0:n] / max(n - 1, 1)
    img = 0.3 + 0.2 * xx
    for _ in range(4):
        cx, cy, r = rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.08, 0.25)
        img = np.where((xx - cx) ** 2 + (yy - cy) ** 2 <= r * r, rng.uniform(0.0, 1.0), img)
    for _ in range(2):
        x0, y0 = rng.uniform(0.0, 0.6, size=2)
        w, h = rng.uniform(0.15, 0.4, size=2)
        img = np.where((xx >= x0) & (xx <= x0 + w) & (yy >= y0) & (yy <= y0 + h), rng.uniform(0.0, 1.0), img)
    img = (img - img.min()) / max(img.max() - img.min(), 1e-12)
    return lo + (hi - lo) * img


def make_deblur_instance(
    n: int = 32,
    lam: float = 0.01,
    kernel_size: int = 3,
    kernel_std: float = 0.5,
    noise: float = 1.0,
    seed: int = 0,
    image=None,
) -> ImageProblem:
    """Gaussian-blurred, noisy observation of a test image (periodic boundary)."""
    rng = np.random.default_rng(seed)
    u = phantom(n, seed) if image is None else np.asarray(image, dtype=float)
    A = blur_operator(gaussian_kernel(kernel_size, kernel_std), u.shape)
    b = A.apply(u) + noise * rng.standard_normal(u.shape)
    prob = ImageProblem(ImageProblemSpec(A, b, lam, u.shape))
    prob.clean = u
    return prob


def make_dense_instance(
    m: int = 60,
    image_shape=(10, 10),
    lam: float = 1.0,
    noise: float = 1.0,
    seed: int = 0,
) -> ImageProblem:
    """Random Gaussian measurements ``b = A u + noise`` of a small test image."""
    rng = np.random.default_rng(seed)
    image_shape = tuple(image_shape)
    n = int(np.prod(image_shape))
    u = phantom(image_shape[0], seed) if image_shape[0] == image_shape[1] else rng.uniform(20, 235, image_shape)
    M = rng.standard_normal((m, n)) / np.sqrt(m)
    A = DenseMap(M, domain_shape=image_shape, range_shape=(m,))
    b = A.apply(u) + noise * rng.standard_normal(m)
    prob = ImageProblem(ImageProblemSpec(A, b, lam, image_shape))
    prob.clean = u
    return prob


def make_sparse_instance(path, b, lam: float, image_shape, box=(0.0, 255.0)) -> ImageProblem:
    """Operator read from a sparse triplet file."""
    image_shape = tuple(image_shape)
    b = np.asarray(b, dtype=float)
    A = read_sparse_triplet(path, domain_shape=image_shape, range_shape=b.shape)
    return ImageProblem(ImageProblemSpec(A, b, lam, image_shape, box))
