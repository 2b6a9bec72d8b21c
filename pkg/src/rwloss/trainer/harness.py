"""Seeded training runs, run configs, run records and the convergence CDF."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .. import loss as L
from ..analysis import negcount
from ..loss import CombinedSchedule
from ..metrics import cdf, dice
from .adam import AdamState, adam_step
from .data import Dataset, SyntheticTask, generate_task
from .net import TinyNet

log = logging.getLogger(__name__)

CONVERGENCE_THRESHOLD = 0.85
SINGLE_KINDS = ("rrw", "rw_boundary", "dice", "focal", "wce_rrw", "ce")
COMBINED_KINDS = ("dice+rw", "ce+rw", "dice+rrw", "ce+rrw")
LOSS_KINDS = SINGLE_KINDS + COMBINED_KINDS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Flat run configuration; ``to_text``/``from_text`` use the dotted key names."""

    task_size: int = 64
    task_seed: int = 0
    task_noise_sigma: float = 0.15
    train_count: int = 32
    val_count: int = 16
    loss_kind: str = "rrw"
    loss_gamma: float = 2.0
    loss_epsilon: float = L.DICE_EPS
    sched_mode: str = "gradual"
    sched_alpha_end: float = 0.01
    opt_lr: float = 1e-3
    opt_beta1: float = 0.9
    opt_beta2: float = 0.999
    opt_eps: float = 1e-8
    run_epochs: int = 50
    run_batch: int = 2
    run_seed: int = 0

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss.kind {self.loss_kind!r}; expected one of {LOSS_KINDS}")
        if self.sched_mode not in ("equal", "gradual"):
            raise ConfigError(f"unknown sched.mode {self.sched_mode!r}")
        if self.run_epochs < 1 or self.run_batch < 1 or self.train_count < 1 or self.val_count < 1:
            raise ConfigError("epochs, batch and dataset counts must be positive")
        if self.opt_lr <= 0:
            raise ConfigError("opt.lr must be positive")

    @property
    def task(self) -> SyntheticTask:
        return SyntheticTask(size=self.task_size, noise_sigma=self.task_noise_sigma, seed=self.task_seed)

    @staticmethod
    def key_of(name: str) -> str:
        return name.replace("_", ".", 1)

    def to_text(self) -> str:
        return "".join(f"{self.key_of(f.name)}={getattr(self, f.name)}\n" for f in fields(self))

    def describe(self) -> str:
        return " ".join(f"{self.key_of(f.name)}={getattr(self, f.name)}" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        types = {cls.key_of(f.name): (f.name, f.type) for f in fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            name, typ = types[key]
            try:
                kwargs[name] = int(value) if typ == "int" else float(value) if typ == "float" else value
            except ValueError:
                raise ConfigError(f"line {lineno}: bad value {value!r} for {key}") from None
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())


@dataclass
class RunRecord:
    seed: int
    config: RunConfig
    epoch_dice: np.ndarray = field(repr=False)
    """``(epochs, K)`` mean validation Dice per class after each epoch."""
    final_dice: float
    converged: bool
    diverged: bool = False
    weight_trace: list[tuple[float, float]] = field(default_factory=list, repr=False)
    two_negative_pixels: list[int] = field(default_factory=list, repr=False)
    """Pixels with >= 2 negative RW gradient components at sampled iterations."""

    @property
    def run_id(self) -> str:
        c = self.config
        kind = c.loss_kind if c.loss_kind in SINGLE_KINDS else f"{c.loss_kind}_{c.sched_mode}"
        return f"{kind}_task{c.task_seed}_seed{self.seed}"


def validation_dice(net: TinyNet, val: Dataset, batch: int = 8) -> np.ndarray:
    """Per-class Dice of argmax predictions, averaged over validation images."""
    k = val.num_classes
    scores = np.zeros((len(val), k))
    for start in range(0, len(val), batch):
        logits = net.forward(val.images[start:start + batch])
        pred = logits.argmax(axis=-1)
        for j, p in enumerate(pred):
            gt = val.labels[start + j]
            for c in range(k):
                scores[start + j, c] = dice(p == c, gt == c)
    return scores.mean(axis=0)


class _LossBuilder:
    """Per-image loss closures for one run configuration."""

    def __init__(self, cfg: RunConfig, train: Dataset):
        self.cfg = cfg
        self.train = train
        kind = cfg.loss_kind
        # touch lazily computed maps once so they are shared by every step
        if kind in ("rrw", "wce_rrw", "dice+rrw", "ce+rrw"):
            train.rrw_maps
        if kind in ("rw_boundary", "dice+rw", "ce+rw"):
            train.boundary_maps
        self.schedule = None
        if kind in COMBINED_KINDS:
            self.schedule = CombinedSchedule(None, cfg.sched_mode, cfg.run_epochs, 1.0, cfg.sched_alpha_end)

    def rw_map(self, i: int) -> np.ndarray | None:
        kind = self.cfg.loss_kind
        if kind in ("rrw", "dice+rrw", "ce+rrw"):
            return self.train.rrw_maps[i]
        if kind in ("rw_boundary", "dice+rw", "ce+rw"):
            return self.train.boundary_maps[i]
        return None

    def _single(self, name: str, i: int):
        y = self.train.onehots[i]
        cfg = self.cfg
        if name == "rw":
            z = self.rw_map(i)
            return lambda p: (L.rw_loss(p, z).value, L.rw_loss_grad(p, z))
        if name == "dice":
            return lambda p: (L.dice_loss(p, y, cfg.loss_epsilon).value, L.dice_grad(p, y, cfg.loss_epsilon))
        if name == "ce":
            return lambda p: (L.ce_loss(p, y).value, L.ce_grad(p, y))
        if name == "focal":
            return lambda p: (L.focal_loss(p, y, cfg.loss_gamma).value, L.focal_grad(p, y, cfg.loss_gamma))
        if name == "wce_rrw":
            w = np.abs(self.train.rrw_maps[i])
            return lambda p: (L.pwce_loss(p, y, w).value, L.pwce_grad(p, y, w))
        raise ConfigError(name)

    def value_and_grad(self, i: int, probs: np.ndarray, epoch: int):
        kind = self.cfg.loss_kind
        if kind in ("rrw", "rw_boundary"):
            return (*self._single("rw", i)(probs), None)
        if kind in SINGLE_KINDS:
            return (*self._single(kind, i)(probs), None)
        partner = kind.split("+")[0]
        sched = CombinedSchedule((self._single(partner, i), self._single("rw", i)), self.schedule.mode,
                                 self.schedule.epochs, 1.0, self.schedule.alpha_end)
        return L.combined_loss(sched, epoch, probs)


def train_run(cfg: RunConfig, seed: int | None = None, data: tuple[Dataset, Dataset] | None = None,
              threshold: float = CONVERGENCE_THRESHOLD, negcount_every: int = 8) -> RunRecord:
    """Train one TinyNet; deterministic in (task seed, run seed, config).

    ``negcount_every`` samples the RW gradient sign pattern every that many
    iterations (RW-based losses only).
    """
    seed = cfg.run_seed if seed is None else seed
    train, val = data if data is not None else generate_task(cfg.task, cfg.train_count, cfg.val_count)
    rng = np.random.default_rng(seed)
    k = train.num_classes
    net = TinyNet(k, rng)
    opt = AdamState(lr=cfg.opt_lr, beta1=cfg.opt_beta1, beta2=cfg.opt_beta2, eps=cfg.opt_eps)
    builder = _LossBuilder(cfg, train)
    epochs = cfg.run_epochs
    epoch_dice = np.full((epochs, k), np.nan)
    weights: list[tuple[float, float]] = []
    two_neg: list[int] = []
    diverged = False
    iteration = 0
    for epoch in range(epochs):
        if builder.schedule is not None:
            weights.append(builder.schedule.weights(epoch))
        order = rng.permutation(len(train))
        for start in range(0, len(order), cfg.run_batch):
            idx = order[start:start + cfg.run_batch]
            logits = net.forward(train.images[idx])
            b, h, w, _ = logits.shape
            flat = logits.reshape(b, h * w, k)
            dlogits = np.empty_like(flat)
            total = 0.0
            for j, i in enumerate(idx):
                probs = L.softmax(flat[j])
                value, grad, _ = builder.value_and_grad(int(i), probs, epoch)
                total += value
                dlogits[j] = grad / len(idx)
                z = builder.rw_map(int(i))
                if z is not None and iteration % negcount_every == 0:
                    two_neg.append(negcount(probs, z).n_two_or_more)
            if not np.isfinite(total) or not np.all(np.isfinite(dlogits)):
                diverged = True
                break
            grads = net.backward(dlogits.reshape(logits.shape))
            try:
                adam_step(opt, net.params, grads)
            except FloatingPointError as exc:
                log.warning("run %s diverged: %s", seed, exc)
                diverged = True
                break
            iteration += 1
        if diverged:
            break
        epoch_dice[epoch] = validation_dice(net, val)
    if diverged:
        final = 0.0
    else:
        final = float(epoch_dice[-1, 1:].mean())
    return RunRecord(seed, cfg, epoch_dice, final, (not diverged) and final >= threshold, diverged,
                     weights, two_neg)


def end_to_end_gradcheck(kind: str = "rrw", seed: int = 0, size: int = 10, batch: int = 2,
                         n_params: int = 200, h: float = 1e-5) -> float:
    """Relative error of backpropagated parameter gradients of ``loss(net(x))``
    against central differences on ``n_params`` randomly chosen parameters.

    Uses the training path itself (loss closures, softmax, network backward)
    on random images and random labels containing every class.
    """
    from ..analysis import relative_error

    rng = np.random.default_rng(seed)
    k = 4
    labels = rng.integers(0, k, size=(batch, size, size))
    labels.reshape(batch, -1)[:, :k] = np.arange(k)
    ds = Dataset(rng.normal(size=(batch, size, size)), labels.astype(np.uint8), k)
    cfg = RunConfig(loss_kind=kind, run_epochs=2)
    builder = _LossBuilder(cfg, ds)
    net = TinyNet(k, rng, head_scale=1.0)

    def total_loss(with_grad: bool):
        logits = net.forward(ds.images)
        flat = logits.reshape(batch, size * size, k)
        value = 0.0
        dlogits = np.empty_like(flat)
        for i in range(batch):
            v, g, _ = builder.value_and_grad(i, L.softmax(flat[i]), epoch=1)
            value += v
            dlogits[i] = g
        return (value, net.backward(dlogits.reshape(logits.shape))) if with_grad else value

    _, grads = total_loss(True)
    names = sorted(net.params)
    sizes = np.array([net.params[n].size for n in names])
    picks = rng.choice(sizes.sum(), size=min(n_params, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    analytic, numeric = [], []
    for flat_idx in picks:
        j = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        param = net.params[names[j]].reshape(-1)
        i = int(flat_idx - offsets[j])
        keep = param[i]
        param[i] = keep + h
        up = total_loss(False)
        param[i] = keep - h
        down = total_loss(False)
        param[i] = keep
        numeric.append((up - down) / (2.0 * h))
        analytic.append(grads[names[j]].reshape(-1)[i])
    return relative_error(analytic, numeric)


def run_many(cfg: RunConfig, seeds, data=None, **kwargs) -> list[RunRecord]:
    data = data if data is not None else generate_task(cfg.task, cfg.train_count, cfg.val_count)
    return [train_run(cfg, s, data, **kwargs) for s in seeds]


# ---------------------------------------------------------------------------
# Convergence CDF and CSV exports


def final_dice(records) -> np.ndarray:
    return np.array([r.final_dice for r in records])


def cdf_rows(values, levels=None) -> list[tuple[float, float]]:
    """``(d, CDF(d))`` pairs over ``levels`` (default: a 0.01 grid on [0, 1])."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("no run records")
    if levels is None:
        levels = np.linspace(0.0, 1.0, 101)
    return [(float(d), cdf(values, d)) for d in levels]


def convergence_cdf(records, levels=None) -> list[tuple[float, float]]:
    """``(d, CDF(d))`` pairs of the records' final mean foreground Dice."""
    return cdf_rows(final_dice(records), levels)


def cdf_dominates(better, worse, levels=None) -> bool:
    """True when ``better``'s CDF is <= ``worse``'s at every level (default: a 0.01
    grid plus every observed final Dice)."""
    a, b = final_dice(better), final_dice(worse)
    if levels is None:
        levels = np.union1d(np.linspace(0.0, 1.0, 101), np.concatenate([a, b]))
    return all(cdf(a, d) <= cdf(b, d) for d in levels)


def write_cdf_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dice", "cdf"])
        for d, c in rows:
            w.writerow([f"{d:.6f}", f"{c:.6f}"])


def write_epoch_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run_id", "epoch", "class", "dice"])
        for r in records:
            for e, row in enumerate(r.epoch_dice):
                for c, v in enumerate(row):
                    w.writerow([r.run_id, e, c, repr(float(v))])


def write_summary_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run_id", "final_dice", "converged"])
        for r in records:
            w.writerow([r.run_id, repr(float(r.final_dice)), int(r.converged)])


def read_summary_csv(path) -> list[tuple[str, float, bool]]:
    with open(path, newline="") as fh:
        return [(row["run_id"], float(row["final_dice"]), bool(int(row["converged"])))
                for row in csv.DictReader(fh)]


def record_dict(r: RunRecord) -> dict:
    d = asdict(r.config)
    d.update(run_id=r.run_id, seed=r.seed, final_dice=r.final_dice, converged=r.converged, diverged=r.diverged)
    return d
