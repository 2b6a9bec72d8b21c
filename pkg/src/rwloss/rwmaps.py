"""RW map families and the rectification principle.

A RW map ``Z`` is an N x K array derived only from the ground truth. The
rectified form keeps each pixel's own-class entry and gives all K-1 other
classes a common value no smaller than it, which fixes the sign of every
gradient component of the RW loss.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import DomainError, LabelGrid, OneHot, RWMap, one_hot, values_of
from .edt import class_edt

KINDS = ("ac", "boundary", "rrw", "hd", "cao")


class MapConfigError(ValueError):
    """A class channel cannot be mapped (empty or covering the whole grid)."""


@dataclass(frozen=True)
class MapSpec:
    kind: str
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown map kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "hd":
            a = 2.0 if self.alpha is None else float(self.alpha)
            if not (np.isfinite(a) and a > 0):
                raise DomainError(f"hd exponent must be positive, got {a}")
            object.__setattr__(self, "alpha", a)
        if self.kind == "cao":
            a = 1.0 if self.alpha is None else float(self.alpha)
            b = 1.0 if self.beta is None else float(self.beta)
            if not (np.isfinite(a) and np.isfinite(b)):
                raise DomainError("cao alpha and beta must be finite")
            object.__setattr__(self, "alpha", a)
            object.__setattr__(self, "beta", b)


def ac_map(Y: OneHot) -> RWMap:
    return RWMap(Y.dims, 1.0 - Y.values, Y.spacing)


def cao_map(Y: OneHot, alpha: float, beta: float) -> RWMap:
    if not (np.isfinite(alpha) and np.isfinite(beta)):
        raise DomainError("alpha and beta must be finite")
    return RWMap(Y.dims, np.where(Y.values == 1, float(alpha), -float(beta)), Y.spacing)


def _checked_sdf(grid: LabelGrid):
    sdf = class_edt(grid)
    for k in range(grid.num_classes):
        if sdf.empty[k]:
            raise MapConfigError(f"class {k} is absent from the grid; its distance map is undefined")
        if sdf.full[k]:
            raise MapConfigError(f"class {k} covers the whole grid; its distance map is undefined")
    return sdf


def boundary_map(grid: LabelGrid) -> RWMap:
    """Signed distance to each class boundary: negative inside, positive outside (mm)."""
    sdf = _checked_sdf(grid)
    return RWMap(grid.dims, sdf.values, grid.spacing)


def hd_map(grid: LabelGrid, alpha: float = 2.0) -> RWMap:
    """Zero inside each class, distance**alpha outside (one-sided HD map)."""
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    sdf = _checked_sdf(grid)
    return RWMap(grid.dims, np.maximum(sdf.values, 0.0) ** alpha, grid.spacing)


def rrw_map(grid: LabelGrid) -> RWMap:
    """Rectified map: depth normalised to [-1, 0) inside each class, 1 elsewhere."""
    sdf = class_edt(grid)
    out = np.ones((grid.size, grid.num_classes), dtype=np.float64)
    for k in range(grid.num_classes):
        if sdf.full[k]:
            raise MapConfigError(f"class {k} covers the whole grid; the RRW normaliser is undefined")
        if sdf.empty[k]:
            warnings.warn(f"class {k} is absent; its RRW channel is all ones", RuntimeWarning, stacklevel=2)
            continue
        col = sdf.values[:, k]
        inside = col < 0
        depth = -col[inside]
        out[inside, k] = -depth / depth.max()
    return RWMap(grid.dims, out, grid.spacing)


def build_map(grid: LabelGrid, spec: MapSpec) -> RWMap:
    if spec.kind == "ac":
        return ac_map(one_hot(grid))
    if spec.kind == "cao":
        return cao_map(one_hot(grid), spec.alpha, spec.beta)
    if spec.kind == "boundary":
        return boundary_map(grid)
    if spec.kind == "hd":
        return hd_map(grid, spec.alpha)
    return rrw_map(grid)


def rectify(Z, Y, mode: str = "mean", constant: float | None = None) -> RWMap | np.ndarray:
    """Replace every off-class entry of each pixel by one common value.

    ``mode`` is ``"constant"`` (use ``constant``), ``"mean"`` or ``"max"`` of
    the replaced entries. The own-class entry is kept.
    """
    z = values_of(Z)
    y = values_of(Y)
    if z.shape != y.shape:
        raise DomainError(f"shape mismatch {z.shape} vs {y.shape}")
    n, k = z.shape
    if k < 2:
        raise DomainError("rectification needs at least two classes")
    own_mask = y == 1
    own = z[own_mask]
    others = z[~own_mask].reshape(n, k - 1)
    if mode == "constant":
        if constant is None:
            raise DomainError("constant mode needs a value")
        common = np.full(n, float(constant))
    elif mode == "mean":
        common = others.mean(axis=1)
    elif mode == "max":
        common = others.max(axis=1)
    else:
        raise DomainError(f"unknown rectify mode {mode!r}")
    out = np.repeat(common[:, None], k, axis=1)
    out[own_mask] = own
    if isinstance(Z, RWMap):
        return RWMap(Z.dims, out, Z.spacing)
    return out


@dataclass
class RectificationReport:
    ok: bool
    unequal_pixels: np.ndarray = field(repr=False)
    misordered_pixels: np.ndarray = field(repr=False)

    @property
    def n_unequal(self) -> int:
        return int(self.unequal_pixels.size)

    @property
    def n_misordered(self) -> int:
        return int(self.misordered_pixels.size)

    def __bool__(self) -> bool:
        return self.ok


def is_rectified(Z, Y, tol: float = 1e-12) -> RectificationReport:
    """Check equal off-class entries and own-class entry <= every other entry."""
    z = values_of(Z)
    y = values_of(Y)
    if z.shape != y.shape:
        raise DomainError(f"shape mismatch {z.shape} vs {y.shape}")
    n, k = z.shape
    own_mask = y == 1
    own = z[own_mask]
    if k < 2:
        empty = np.zeros(0, dtype=np.int64)
        return RectificationReport(True, empty, empty)
    others = z[~own_mask].reshape(n, k - 1)
    spread = others.max(axis=1) - others.min(axis=1)
    unequal = np.flatnonzero(spread > tol)
    misordered = np.flatnonzero(own > others.min(axis=1))
    return RectificationReport(unequal.size == 0 and misordered.size == 0, unequal, misordered)
