"""Scenario sample-size rule and minimum-volume enclosing ellipsoids.

An :class:`Ellipsoid` is stored as a matrix/vector pair ``(shape, center_image)``
describing the region ``{x : ||shape @ x - center_image||_2 <= 1}``.  The shape
matrix is kept symmetric positive definite, so the region is always a
full-dimensional ellipsoid and ``center_image == shape @ center``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DegenerateCloudError",
    "DegenerateCloudWarning",
    "Ellipsoid",
    "ellipsoid_contains",
    "mvee",
    "required_sample_count",
]

# Multiplier e/(e-1) in the scenario sample-size rule.
_EULER_FACTOR = math.e / (math.e - 1.0)

# Covariance inflation used when a point cloud is rank deficient.
REGULARIZATION_EPS = 1e-9


class DegenerateCloudWarning(UserWarning):
    """Points spanned a lower-dimensional affine subspace; fit was regularized."""


class DegenerateCloudError(ValueError):
    """Points spanned a lower-dimensional affine subspace and regularization was off."""


def required_sample_count(beta: float, gamma: float, dim: int) -> int:
    """Number of runs needed so a fitted convex set generalizes.

    Returns the smallest integer Gamma such that a minimum-volume ellipsoid
    fitted to Gamma independent d-dimensional samples contains at least
    ``1 - beta`` of the sampled distribution's mass with confidence
    ``1 - gamma``:

        ceil((1/beta) * (e/(e-1)) * (ln(1/gamma) + d(d+1)/2 + d))

    Parameters
    ----------
    beta : float
        Mass allowed to escape the fitted set, in (0, 1).
    gamma : float
        Confidence failure probability, in (0, 1).
    dim : int
        Dimension of the fitted samples, at least 1.
    """
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    dim = int(dim)
    if dim < 1:
        raise ValueError(f"dim must be a positive integer, got {dim}")
    complexity = dim * (dim + 1) / 2.0 + dim
    value = (1.0 / beta) * _EULER_FACTOR * (-math.log(gamma) + complexity)
    return int(math.ceil(value))


@dataclass(frozen=True)
class Ellipsoid:
    """Region {x : ||shape @ x - center_image||_2 <= 1}.

    Attributes
    ----------
    shape : (dim, dim) ndarray
        Symmetric positive-definite matrix.
    center_image : (dim,) ndarray
        Image of the center under ``shape``.
    dim : int
        Ambient dimension.
    regularized : bool
        True when the fit needed covariance inflation (degenerate cloud).
    """

    shape: np.ndarray
    center_image: np.ndarray
    dim: int
    regularized: bool = field(default=False, compare=False)

    def __post_init__(self):
        shape = np.asarray(self.shape, dtype=float)
        center_image = np.asarray(self.center_image, dtype=float)
        dim = int(self.dim)
        if shape.shape != (dim, dim):
            raise ValueError(f"shape must be ({dim}, {dim}), got {shape.shape}")
        if center_image.shape != (dim,):
            raise ValueError(f"center_image must be ({dim},), got {center_image.shape}")
        sign, _ = np.linalg.slogdet(shape)
        if sign <= 0 or not np.isfinite(shape).all():
            raise ValueError("shape matrix must have strictly positive determinant")
        shape.setflags(write=False)
        center_image.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "center_image", center_image)
        object.__setattr__(self, "dim", dim)

    @property
    def center(self) -> np.ndarray:
        return np.linalg.solve(self.shape, self.center_image)

    def membership(self, x: np.ndarray) -> np.ndarray:
        """||shape @ x - center_image|| for one point or a batch (..., dim)."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"point dimension {x.shape[-1]} != ellipsoid dim {self.dim}")
        return np.linalg.norm(x @ self.shape.T - self.center_image, axis=-1)

    def contains(self, x: np.ndarray, slack: float = 0.0):
        if slack < 0:
            raise ValueError(f"slack must be nonnegative, got {slack}")
        return self.membership(x) <= 1.0 + slack

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounding box (lower, upper) of the region."""
        inv = np.linalg.inv(self.shape)
        halfwidth = np.sqrt(np.sum(inv * inv, axis=1))
        c = self.center
        return c - halfwidth, c + halfwidth

    def log_det_shape(self) -> float:
        return float(np.linalg.slogdet(self.shape)[1])

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "shape": [float(v) for v in self.shape.ravel()],
            "center_image": [float(v) for v in self.center_image],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Ellipsoid":
        dim = int(data["dim"])
        shape = np.asarray(data["shape"], dtype=float).reshape(dim, dim)
        return cls(shape=shape, center_image=np.asarray(data["center_image"], dtype=float), dim=dim)


def ellipsoid_contains(e: Ellipsoid, x: np.ndarray, slack: float = 0.0) -> bool:
    """True iff ||e.shape @ x - e.center_image|| <= 1 + slack."""
    x = np.asarray(x, dtype=float)
    if x.shape != (e.dim,):
        raise ValueError(f"point must have shape ({e.dim},), got {x.shape}")
    return bool(e.contains(x, slack))


def mvee(points, tolerance: float = 1e-7, max_iter: int | None = None,
         regularize: bool = True) -> Ellipsoid:
    """Minimum-volume enclosing ellipsoid of a point set.

    Solves ``argmin -log det A  s.t. ||A x_i - b|| <= 1`` with a first-order
    ascent on the dual weights (Khachiyan iteration with away steps).  The
    returned ellipsoid is rescaled so that every input point is contained
    exactly (slack 0), which keeps the containment guarantee independent of
    the termination tolerance.

    Parameters
    ----------
    points : (n, d) array_like
        Point cloud; a flat array is treated as one-dimensional points.
    tolerance : float
        Termination tolerance on the dual optimality gap and on the relative
        determinant improvement per iteration.
    max_iter : int, optional
        Iteration cap, default ``100 * d * n``.
    regularize : bool
        When the cloud spans a lower-dimensional affine subspace, inflate the
        covariance by ``REGULARIZATION_EPS`` along the missing directions and
        emit :class:`DegenerateCloudWarning` instead of raising.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("points must be a nonempty (n, d) array")
    if not np.isfinite(pts).all():
        raise ValueError("points must be finite")
    if tolerance <= 0:
        raise ValueError(f"tolerance must be positive, got {tolerance}")

    n, d = pts.shape
    centroid = pts.mean(axis=0)

    if d == 1:
        lo, hi = float(pts.min()), float(pts.max())
        if hi - lo <= max(abs(lo), abs(hi), 1.0) * 1e-14:
            if not regularize:
                raise DegenerateCloudError("one-dimensional points coincide")
            return _mvee_degenerate(pts, centroid, 0, tolerance, max_iter)
        return _mvee_interval(lo, hi)

    centered = pts - centroid
    svals = np.linalg.svd(centered, compute_uv=False)
    # Threshold absorbs the rounding jitter of exactly repeated points.
    point_scale = max(1.0, float(np.abs(pts).max()))
    floor = point_scale * np.finfo(float).eps * 16.0 * math.sqrt(n)
    rank = int(np.sum(svals > max(svals[0] * 1e-9, floor)))

    if rank < d:
        if not regularize:
            raise DegenerateCloudError(
                f"points span an affine subspace of rank {rank} < dim {d}")
        return _mvee_degenerate(pts, centroid, rank, tolerance, max_iter)
    return _mvee_khachiyan(pts, tolerance, max_iter)


def _mvee_interval(lo: float, hi: float) -> Ellipsoid:
    # In one dimension the optimum is exactly the smallest covering interval.
    a = 2.0 / (hi - lo)
    c = 0.5 * (lo + hi)
    return Ellipsoid(shape=np.array([[a]]), center_image=np.array([a * c]), dim=1)


def _mvee_degenerate(pts, centroid, rank, tolerance, max_iter) -> Ellipsoid:
    n, d = pts.shape
    warnings.warn(
        f"point cloud of rank {rank} < dim {d}; regularizing flat directions",
        DegenerateCloudWarning, stacklevel=3)
    half_flat = math.sqrt(REGULARIZATION_EPS)
    if rank == 0:
        a = np.eye(d) / half_flat
        return Ellipsoid(shape=a, center_image=a @ centroid, dim=d, regularized=True)
    _, _, vt = np.linalg.svd(pts - centroid, full_matrices=True)
    basis = vt.T  # columns: first `rank` span the cloud, rest are flat
    coords = (pts - centroid) @ basis[:, :rank]
    sub = mvee(coords, tolerance=tolerance, max_iter=max_iter)
    block = np.zeros((d, d))
    block[:rank, :rank] = sub.shape
    block[rank:, rank:] = np.eye(d - rank) / half_flat
    shape = basis @ block @ basis.T
    shape = 0.5 * (shape + shape.T)
    image_rot = np.concatenate([sub.center_image, np.zeros(d - rank)])
    center_image = shape @ centroid + basis @ image_rot
    return Ellipsoid(shape=shape, center_image=center_image, dim=d, regularized=True)


def _mvee_khachiyan(pts, tolerance, max_iter) -> Ellipsoid:
    n, d = pts.shape
    if max_iter is None:
        max_iter = 100 * d * n
    q = np.column_stack([pts, np.ones(n)]).T  # (d+1, n) lifted points
    u = np.full(n, 1.0 / n)
    dp1 = d + 1
    last_logdet = -np.inf
    stalled = 0
    for _ in range(max_iter):
        x = (q * u) @ q.T
        try:
            sol = np.linalg.solve(x, q)
        except np.linalg.LinAlgError:
            x = x + np.eye(dp1) * (np.trace(x) * 1e-14 + 1e-300)
            sol = np.linalg.solve(x, q)
        m = np.einsum("ij,ij->j", q, sol)
        j_add = int(np.argmax(m))
        kappa_add = m[j_add]
        gap_add = kappa_add / dp1 - 1.0
        if gap_add <= tolerance:
            break

        # Stall guard on the dual objective log det X.
        logdet = float(np.linalg.slogdet(x)[1])
        if logdet - last_logdet < tolerance * 1e-3:
            stalled += 1
            if stalled >= 3:
                break
        else:
            stalled = 0
        last_logdet = logdet

        active = u > 0
        m_active = np.where(active, m, np.inf)
        j_away = int(np.argmin(m_active))
        kappa_away = m_active[j_away]
        gap_away = 1.0 - kappa_away / dp1

        if gap_add >= gap_away or kappa_away <= 1.0 + 1e-12:
            beta = (kappa_add - dp1) / (dp1 * (kappa_add - 1.0))
            j = j_add
        else:
            beta = (kappa_away - dp1) / (dp1 * (kappa_away - 1.0))
            beta = max(beta, -u[j_away] / (1.0 - u[j_away]))
            j = j_away
        u *= 1.0 - beta
        u[j] += beta
        np.clip(u, 0.0, None, out=u)
        u /= u.sum()

    center = u @ pts
    scatter = (pts.T * u) @ pts - np.outer(center, center)
    scatter = 0.5 * (scatter + scatter.T)
    h = np.linalg.inv(d * scatter)
    h = 0.5 * (h + h.T)
    eigvals, eigvecs = np.linalg.eigh(h)
    eigvals = np.clip(eigvals, 1e-300, None)
    shape = (eigvecs * np.sqrt(eigvals)) @ eigvecs.T
    shape = 0.5 * (shape + shape.T)
    image = shape @ center

    # Guarantee containment regardless of where the iteration stopped.
    worst = float(np.linalg.norm(pts @ shape.T - image, axis=1).max())
    if worst > 1.0:
        shape = shape / worst
        image = image / worst
    return Ellipsoid(shape=shape, center_image=image, dim=d)
