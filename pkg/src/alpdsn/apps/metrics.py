"""Accuracy measures for restored images and completed tensors."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..alcore import ALState

__all__ = ["PSNR_MAX", "Metrics", "MissingReference", "ferror", "uerror", "psnr", "metrics"]

# reported in place of +inf when an image equals its reference
PSNR_MAX = 1000.0


class MissingReference(ValueError):
    """A relative metric was requested without its reference value."""


def ferror(f: float, f_star: float) -> float:
    """``(f - f*) / |f|``; the absolute gap when ``f = 0``."""
    return float((f - f_star) / abs(f)) if f != 0 else float(abs(f - f_star))


def uerror(u, u_star) -> float:
    """``|u - u*| / |u*|``; the absolute error when ``u* = 0``."""
    u = np.asarray(u, dtype=float)
    u_star = np.asarray(u_star, dtype=float)
    d = float(np.linalg.norm(u - u_star))
    n = float(np.linalg.norm(u_star))
    return d / n if n > 0 else d


def psnr(u, ref, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; :data:`PSNR_MAX` for identical images."""
    mse = float(np.mean((np.asarray(u, dtype=float) - np.asarray(ref, dtype=float)) ** 2))
    if mse == 0.0:
        return PSNR_MAX
    return float(10.0 * np.log10(peak * peak / mse))


@dataclass
class Metrics:
    ferror: float | None = None
    uerror: float | None = None
    psnr: float | None = None
    pi_d: float | None = None
    pi_u: float | None = None
    pi_w: float | None = None
    pi_z: float | None = None
    pi_r: float | None = None
    rxerror: float | None = None
    objective: float | None = None

    def as_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def metrics(problem, state_or_u, reference: dict | None = None, require=()) -> Metrics:
    """Metrics for a solver result.

    ``state_or_u`` is an :class:`ALState` or a primal image/tensor.
    ``reference`` may hold ``f_star``, ``u_star`` (the optimum, for ferror and
    uerror) and ``clean`` (the ground truth, for PSNR or RXerror). Names in
    ``require`` must be computable or :class:`MissingReference` is raised.
    """
    from .ctnn import CTNNProblem
    from .image import ImageProblem

    reference = reference or {}
    out = Metrics()
    state = state_or_u if isinstance(state_or_u, ALState) else None
    if isinstance(problem, ImageProblem):
        u = problem.image(state) if state is not None else np.asarray(state_or_u, dtype=float)
        out.objective = problem.objective(u)
        clean = reference.get("clean", getattr(problem, "clean", None))
        if clean is not None:
            out.psnr = psnr(u, clean)
    elif isinstance(problem, CTNNProblem):
        u = problem.tensor(state) if state is not None else np.asarray(state_or_u, dtype=float)
        out.objective = problem.objective(u)
        if state is not None:
            for k, v in problem.kkt_residuals(state).items():
                setattr(out, k, v)
        clean = reference.get("clean", getattr(problem, "ground_truth", None))
        if clean is not None:
            out.rxerror = uerror(u, clean)
    else:
        u = np.asarray(state_or_u, dtype=float) if state is None else None
    if "f_star" in reference and out.objective is not None:
        out.ferror = ferror(out.objective, reference["f_star"])
    if "u_star" in reference and u is not None:
        out.uerror = uerror(u, reference["u_star"])
    for name in require:
        if getattr(out, name) is None:
            raise MissingReference(f"metric {name!r} needs a reference that was not supplied")
    return out
