"""Gradient-sign diagnostics over the probability simplex and equivalence oracles.

The ``verify_prop*`` oracles each compare a loss written in its original form
(evaluated directly from labels, with distances found by brute force) with
the same loss expressed as a RW loss over a RW map built by :mod:`rwmaps`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import DomainError, LabelGrid, one_hot, values_of
from . import loss as L
from .loss import rw2_loss, rw_loss, rw_loss_grad, softmax
from .rwmaps import ac_map, boundary_map, cao_map, hd_map, rrw_map

NEG_TOL = 1e-12


def barycentric_grid(k: int, resolution: int) -> np.ndarray:
    """All points ``c / resolution`` with non-negative integer ``c`` summing to ``resolution``."""
    if k < 2 or resolution < 2:
        raise DomainError("need K >= 2 and resolution >= 2")

    def compositions(total, parts):
        if parts == 1:
            return np.array([[total]], dtype=np.int64)
        blocks = []
        for first in range(total + 1):
            rest = compositions(total - first, parts - 1)
            blocks.append(np.column_stack([np.full(len(rest), first), rest]))
        return np.vstack(blocks)

    return compositions(resolution, k) / resolution


def negative_counts(grads: np.ndarray, tol: float = NEG_TOL) -> np.ndarray:
    return np.sum(grads < -tol, axis=1)


@dataclass
class SimplexSweep:
    z: np.ndarray
    resolution: int
    samples: np.ndarray = field(repr=False)
    grads: np.ndarray = field(repr=False)
    neg_count: np.ndarray = field(repr=False)
    interior: np.ndarray = field(repr=False)

    @property
    def k(self) -> int:
        return self.samples.shape[1]

    @property
    def two_negative_fraction(self) -> float:
        """Fraction of strictly interior samples with >= 2 negative components."""
        return float(np.mean(self.neg_count[self.interior] >= 2))

    @property
    def n_two_negative(self) -> int:
        return int(np.sum(self.neg_count[self.interior] >= 2))

    def to_csv(self, path) -> None:
        k = self.k
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"y{j + 1}" for j in range(k)] + [f"g{j + 1}" for j in range(k)] + ["neg_count"])
            for s, g, c in zip(self.samples, self.grads, self.neg_count):
                w.writerow([repr(float(v)) for v in s] + [repr(float(v)) for v in g] + [int(c)])


def simplex_sweep(z, resolution: int = 400) -> SimplexSweep:
    """Per-pixel RW gradient for one map vector ``z`` at every simplex grid point."""
    z = np.asarray(z, dtype=np.float64).ravel()
    samples = barycentric_grid(z.size, resolution)
    zz = np.broadcast_to(z, samples.shape)
    grads = rw_loss_grad(samples, zz, normalization="none")
    interior = np.all(samples > 0, axis=1)
    return SimplexSweep(z, resolution, samples, grads, negative_counts(grads), interior)


def gradient_extremum(z, component: int, resolution: int = 1000):
    """Minimum of one gradient component over the simplex grid, and where it is attained."""
    sweep = simplex_sweep(z, resolution)
    g = sweep.grads[:, component]
    i = int(np.argmin(g))
    return float(g[i]), sweep.samples[i]


@dataclass
class SignReport:
    counts: np.ndarray
    num_classes: int

    @property
    def histogram(self) -> np.ndarray:
        return np.bincount(self.counts, minlength=self.num_classes + 1)

    @property
    def fraction_two_or_more(self) -> float:
        return float(np.mean(self.counts >= 2)) if self.counts.size else 0.0

    @property
    def n_two_or_more(self) -> int:
        return int(np.sum(self.counts >= 2))

    def as_grid(self, dims) -> LabelGrid:
        return LabelGrid(dims, self.counts, self.num_classes + 1)

    def to_csv(self, path, probs, grads) -> None:
        p = values_of(probs)
        k = p.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"y{j + 1}" for j in range(k)] + [f"g{j + 1}" for j in range(k)] + ["neg_count"])
            for s, g, c in zip(p, grads, self.counts):
                w.writerow([repr(float(v)) for v in s] + [repr(float(v)) for v in g] + [int(c)])


def negcount(P, Z) -> SignReport:
    g = rw_loss_grad(P, Z, normalization="none")
    return SignReport(negative_counts(g), g.shape[1])


# ---------------------------------------------------------------------------
# Proposition oracles (binary tasks: class 0 background, class 1 foreground)


def brute_force_boundary_distance(labels: np.ndarray, spacing) -> np.ndarray:
    """Distance from every voxel to the nearest voxel of the other class, O(N^2)."""
    labels = np.asarray(labels)
    coords = np.stack(np.meshgrid(*[np.arange(d) for d in labels.shape], indexing="ij"), -1)
    coords = coords.reshape(-1, labels.ndim) * np.asarray(spacing, dtype=np.float64)
    flat = labels.ravel()
    out = np.empty(flat.size)
    for i in range(flat.size):
        other = coords[flat != flat[i]]
        d2 = np.sum((other - coords[i]) ** 2, axis=1)
        out[i] = np.sqrt(d2.min()) if d2.size else np.inf
    return out


@dataclass
class BinaryInstance:
    grid: LabelGrid
    probs: np.ndarray

    @property
    def fg(self) -> np.ndarray:
        return self.grid.labels.astype(bool)

    @property
    def degenerate(self) -> bool:
        n_fg = int(self.fg.sum())
        return n_fg == 0 or n_fg == self.grid.size


def random_binary_instance(rng: np.random.Generator, max_side: int = 16, ndim: int = 2,
                           max_side_3d: int = 8, anisotropic: bool = True) -> BinaryInstance:
    side = max_side if ndim == 2 else max_side_3d
    dims = tuple(int(rng.integers(2, side + 1)) for _ in range(ndim))
    density = rng.uniform(0.05, 0.95)
    labels = (rng.random(dims) < density).astype(np.uint8)
    spacing = tuple(rng.uniform(0.5, 2.0, ndim)) if anisotropic else None
    grid = LabelGrid(dims, labels.ravel(), 2, spacing)
    logits = rng.normal(scale=rng.uniform(0.1, 5.0), size=(grid.size, 2))
    return BinaryInstance(grid, softmax(logits))


def prop1_sides(inst: BinaryInstance) -> tuple[float, float]:
    """AC region term with c1 = 1, c2 = 0 versus RW loss on Z = 1 - Y."""
    y = inst.fg.astype(np.float64)
    yhat = inst.probs[:, 1]
    region = float(np.sum(yhat * (1.0 - y) ** 2) + np.sum((1.0 - yhat) * (0.0 - y) ** 2))
    rw = rw_loss(inst.probs, ac_map(one_hot(inst.grid)), normalization="none").value
    return region, rw


def prop2_sides(inst: BinaryInstance) -> tuple[float, float]:
    """Level-set boundary loss summed over both class channels versus RW-Boundary loss."""
    y = inst.grid.labels
    d = brute_force_boundary_distance(inst.grid.as_array(), inst.grid.spacing)
    original = 0.0
    for k in (0, 1):
        level = np.where(y == k, -d, d)
        original += float(np.sum(level * inst.probs[:, k]))
    rw = rw_loss(inst.probs, boundary_map(inst.grid), normalization="none").value
    return original, rw


def prop3_sides(inst: BinaryInstance, alpha: float = 2.0) -> tuple[float, float]:
    """One-sided distance-transform HD loss versus RW loss on squared probabilities."""
    y = inst.fg.astype(np.float64)
    d = brute_force_boundary_distance(inst.grid.as_array(), inst.grid.spacing)
    yhat = inst.probs[:, 1]
    original = float(np.mean((y - yhat) ** 2 * d ** alpha))
    rw = rw2_loss(inst.probs, hd_map(inst.grid, alpha), normalization="per_N").value
    return original, rw


def prop4_sides(inst: BinaryInstance, alpha: float, beta: float) -> tuple[float, float]:
    """Cao boundary loss with a two-valued level function versus RW loss on the Cao map."""
    y = inst.grid.labels
    original = 0.0
    for k in (0, 1):
        level = np.where(y == k, alpha, -beta)
        original += float(np.sum(level * inst.probs[:, k]))
    rw = rw_loss(inst.probs, cao_map(one_hot(inst.grid), alpha, beta), normalization="none").value
    return original, rw


def prop5_sides(inst: BinaryInstance) -> tuple[float, float]:
    """Region-based loss ``sum y (1 - yhat) + (1 - y) yhat`` versus RW loss on Z = 1 - Y."""
    y = inst.fg.astype(np.float64)
    yhat = inst.probs[:, 1]
    original = float(np.sum(y * (1.0 - yhat) + (1.0 - y) * yhat))
    rw = rw_loss(inst.probs, ac_map(one_hot(inst.grid)), normalization="none").value
    return original, rw


@dataclass
class PropResult:
    prop: int
    instances: int
    skipped: list[int]
    """Draw indices of degenerate instances that were skipped (not counted)."""
    max_discrepancy: float
    max_ratio: float
    """Largest discrepancy divided by the instance's pixel count."""

    @property
    def passed(self) -> bool:
        return self.max_ratio <= 1e-12


def verify_prop(prop: int, instances: int = 1000, seed: int = 0) -> PropResult:
    """Run one proposition oracle until ``instances`` seeded random binary
    instances have been evaluated; degenerate draws (a class missing, where
    the distance-based maps are undefined) are skipped and recorded."""
    if prop not in (1, 2, 3, 4, 5):
        raise DomainError(f"no proposition {prop}")
    if instances < 1:
        raise DomainError("need at least one instance")
    rng = np.random.default_rng([seed, prop])
    skipped: list[int] = []
    worst = 0.0
    worst_ratio = 0.0
    done = 0
    draw = 0
    while done < instances:
        draw += 1
        ndim = 3 if prop in (2, 3) and rng.random() < 0.3 else 2
        inst = random_binary_instance(rng, ndim=ndim)
        if prop == 1:
            a, b = prop1_sides(inst)
        elif prop == 5:
            a, b = prop5_sides(inst)
        elif prop == 4:
            alpha, beta = rng.normal(scale=3.0, size=2)
            a, b = prop4_sides(inst, float(alpha), float(beta))
        elif inst.degenerate:
            skipped.append(draw - 1)
            continue
        elif prop == 2:
            a, b = prop2_sides(inst)
        else:
            a, b = prop3_sides(inst, float(rng.uniform(0.5, 3.0)))
        done += 1
        gap = abs(a - b)
        worst = max(worst, gap)
        worst_ratio = max(worst_ratio, gap / inst.grid.size)
    return PropResult(prop, instances, skipped, worst, worst_ratio)


def verify_prop1(instances: int = 1000, seed: int = 0) -> PropResult:
    return verify_prop(1, instances, seed)


def verify_prop2(instances: int = 1000, seed: int = 0) -> PropResult:
    return verify_prop(2, instances, seed)


def verify_prop3(instances: int = 1000, seed: int = 0) -> PropResult:
    return verify_prop(3, instances, seed)


def verify_prop4(instances: int = 1000, seed: int = 0) -> PropResult:
    return verify_prop(4, instances, seed)


def verify_prop5(instances: int = 1000, seed: int = 0) -> PropResult:
    return verify_prop(5, instances, seed)


# ---------------------------------------------------------------------------
# Finite-difference gradient checks (loss side, w.r.t. logits)

GRADCHECK_LOSSES = ("rw", "rrw", "rw2", "pwce", "dice", "focal", "ce")


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    out = np.empty_like(x)
    flat, g = x.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = f(x)
        flat[i] = keep - h
        down = f(x)
        flat[i] = keep
        g[i] = (up - down) / (2.0 * h)
    return out


def relative_error(analytic, numeric) -> float:
    """Normwise ``max|a - n| / max|n|``; entries far below the gradient's scale
    carry only rounding noise, so they are judged against that scale."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = float(np.max(np.abs(n))) if n.size else 0.0
    gap = float(np.max(np.abs(a - n))) if n.size else 0.0
    return gap / scale if scale > 0 else gap


def loss_closures(kind: str, rng: np.random.Generator, n: int, k: int):
    """``(value(p), grad(p))`` for one random instance of a loss kind; the
    gradient is taken w.r.t. the logits. Labels cover every class (``n >= k``);
    ``rrw`` uses the rectified map of those labels on a 1D grid."""
    if kind not in GRADCHECK_LOSSES:
        raise DomainError(f"unknown loss {kind!r}; expected one of {GRADCHECK_LOSSES}")
    labels = rng.integers(0, k, size=n)
    labels[rng.permutation(n)[:k]] = np.arange(k)  # every class present
    y = np.eye(k)[labels]
    if kind == "rrw":
        z = rrw_map(LabelGrid((n,), labels, k)).values
        return (lambda p: rw_loss(p, z).value), (lambda p: rw_loss_grad(p, z))
    if kind == "rw":
        z = rng.normal(size=(n, k))
        return (lambda p: rw_loss(p, z).value), (lambda p: rw_loss_grad(p, z))
    if kind == "rw2":
        z = rng.normal(size=(n, k))
        return (lambda p: rw2_loss(p, z).value), (lambda p: L.rw2_loss_grad(p, z))
    if kind == "pwce":
        w = rng.uniform(0.1, 2.0, size=(n, k))
        return (lambda p: L.pwce_loss(p, y, w).value), (lambda p: L.pwce_grad(p, y, w))
    if kind == "dice":
        return (lambda p: L.dice_loss(p, y).value), (lambda p: L.dice_grad(p, y))
    if kind == "focal":
        return (lambda p: L.focal_loss(p, y).value), (lambda p: L.focal_grad(p, y))
    return (lambda p: L.ce_loss(p, y).value), (lambda p: L.ce_grad(p, y))


def gradcheck_loss(kind: str, seed: int = 0, instances: int = 1, max_n: int = 64, max_k: int = 5,
                   h: float = 1e-5) -> float:
    """Worst relative error of a loss's analytic logit gradient against central
    differences over random instances (``N <= max_n``, ``2 <= K <= max_k``)."""
    rng = np.random.default_rng([seed, GRADCHECK_LOSSES.index(kind) if kind in GRADCHECK_LOSSES else 99])
    worst = 0.0
    for _ in range(instances):
        k = int(rng.integers(2, max_k + 1))
        n = int(rng.integers(k, max_n + 1))
        value, grad = loss_closures(kind, rng, n, k)
        logits = rng.normal(scale=rng.uniform(0.5, 3.0), size=(n, k))
        numeric = central_difference(lambda x: value(softmax(x)), logits, h)
        worst = max(worst, relative_error(grad(softmax(logits)), numeric))
    return worst
