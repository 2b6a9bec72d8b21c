"""Exact Euclidean distance transforms on label grids.

The n-D transform is separable: a squared 1D lower-envelope pass is run along
each axis in turn and the square root is taken at the end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DomainError, LabelGrid

INF = math.inf


def _envelope_row(f: list[float], spacing: float) -> list[float]:
    n = len(f)
    out = [INF] * n
    sites = [p for p in range(n) if f[p] != INF]
    if not sites:
        return out
    # v: parabola apexes on the envelope, z: boundaries between them
    v = [sites[0]]
    z = [-INF, INF]
    for q in sites[1:]:
        xq = q * spacing
        hq = f[q] + xq * xq
        while True:
            p = v[-1]
            xp = p * spacing
            s = (hq - (f[p] + xp * xp)) / (2.0 * (xq - xp))
            if s <= z[-2]:
                v.pop()
                z.pop()
                continue
            break
        v.append(q)
        z[-1] = s
        z.append(INF)
    k = 0
    for q in range(n):
        x = q * spacing
        while z[k + 1] < x:
            k += 1
        p = v[k]
        d = x - p * spacing
        out[q] = d * d + f[p]
    return out


def squared_edt_1d(f, spacing: float = 1.0) -> np.ndarray:
    """``out[q] = min_p (spacing*(q-p))**2 + f[p]``, exact, for f in R or +inf."""
    f = np.asarray(f, dtype=np.float64).ravel()
    if f.size == 0:
        raise DomainError("squared_edt_1d needs a non-empty input")
    if spacing <= 0:
        raise DomainError("spacing must be positive")
    if np.any(np.isnan(f)) or np.any(f == -INF):
        raise DomainError("f must hold reals or +inf")
    return np.array(_envelope_row(f.tolist(), float(spacing)))


def squared_edt(f: np.ndarray, spacing) -> np.ndarray:
    """Separable squared transform of a cost array ``f`` (0 at seeds, +inf elsewhere)."""
    out = np.array(f, dtype=np.float64)
    for axis, s in enumerate(spacing):
        moved = np.moveaxis(out, axis, -1)
        shape = moved.shape
        rows = moved.reshape(-1, shape[-1])
        res = np.empty_like(rows)
        for r in range(rows.shape[0]):
            row = rows[r]
            if np.isinf(row).all():
                res[r] = INF
            else:
                res[r] = _envelope_row(row.tolist(), float(s))
        out = np.moveaxis(res.reshape(shape), -1, axis)
    return np.ascontiguousarray(out)


def distance_to(seeds: np.ndarray, spacing=None) -> np.ndarray:
    """Euclidean distance from every voxel to the nearest ``True`` voxel of ``seeds``."""
    seeds = np.asarray(seeds, dtype=bool)
    if spacing is None:
        spacing = (1.0,) * seeds.ndim
    return np.sqrt(squared_edt(np.where(seeds, 0.0, INF), spacing))


@dataclass(frozen=True, eq=False)
class SignedDistanceField:
    """Per-class signed distances in mm: negative inside the class, positive outside.

    Channels of empty classes hold ``+inf`` and channels of classes covering
    the whole grid hold ``-inf``; both are flagged.
    """

    dims: tuple[int, ...]
    spacing: tuple[float, ...]
    values: np.ndarray
    empty: tuple[bool, ...]
    full: tuple[bool, ...]

    @property
    def num_classes(self) -> int:
        return self.values.shape[1]

    def channel(self, k: int) -> np.ndarray:
        return self.values[:, k].reshape(self.dims)


def class_edt(grid: LabelGrid) -> SignedDistanceField:
    lab = grid.as_array()
    vals = np.empty((grid.size, grid.num_classes), dtype=np.float64)
    empty, full = [], []
    for k in range(grid.num_classes):
        inside = lab == k
        n_in = int(inside.sum())
        empty.append(n_in == 0)
        full.append(n_in == grid.size)
        if n_in == 0:
            vals[:, k] = INF
            continue
        if n_in == grid.size:
            vals[:, k] = -INF
            continue
        out_dist = distance_to(inside, grid.spacing)
        in_dist = distance_to(~inside, grid.spacing)
        vals[:, k] = np.where(inside, -in_dist, out_dist).ravel()
    return SignedDistanceField(grid.dims, grid.spacing, vals, tuple(empty), tuple(full))
