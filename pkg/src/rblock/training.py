"""Training harness: SGD with momentum and milestone decay, the two-pass
mutual-learning loop, a single-pass baseline trainer, evaluation with the
full unmasked model, the six-method comparison runner, and metrics/
checkpoint persistence.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import data as data_mod
from .losses import LossBreakdown, LossWeights, cross_entropy, rblock_loss
from .masks import PAIR_METHODS, DropSpec, sample_mask
from .nn import Model, build_default_model
from .rng import RngStream

METRICS_HEADER = [
    "method", "epoch", "loss_total", "loss_ce1", "loss_ce2",
    "loss_kl12", "loss_kl21", "val_acc", "best_val_acc", "p_current", "wall_ms",
]

CHECKPOINT_MAGIC = b"RBLK"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; carries the failing step."""

    def __init__(self, epoch, step, breakdown):
        super().__init__(
            f"non-finite loss at epoch {epoch}, step {step}: {breakdown}"
        )
        self.epoch = epoch
        self.step = step
        self.breakdown = breakdown


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4


@dataclass(frozen=True)
class TrainConfig:
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch_size: int = 128
    epochs: int = 200
    lr_milestones: tuple = ((75, 0.1), (130, 0.1), (180, 0.1))
    loss: LossWeights = field(default_factory=LossWeights)
    drop: DropSpec = field(default_factory=lambda: DropSpec("bdropdml", p=0.2))
    mask_placement: tuple | None = None  # None -> every mask slot
    seed: int = 0
    dataset: dict = field(default_factory=lambda: {"kind": "synthetic"})
    eval_every: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        epochs_seen = [e for e, _ in self.lr_milestones]
        if epochs_seen != sorted(set(epochs_seen)):
            raise ValueError("lr_milestones must be strictly increasing in epoch")


@dataclass
class MetricsRow:
    method: str
    epoch: int
    loss_total: float
    loss_ce1: float
    loss_ce2: float
    loss_kl12: float
    loss_kl21: float
    val_acc: float
    best_val_acc: float
    p_current: float
    wall_ms: int

    def as_list(self):
        return [getattr(self, name) for name in METRICS_HEADER]


# ---------------------------------------------------------------------------
# Config serialization

def config_to_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["lr_milestones"] = [list(m) for m in cfg.lr_milestones]
    return d


def _check_keys(d: dict, allowed, where: str):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ValueError(f"unknown config key(s) in {where}: {sorted(unknown)}")


def config_from_dict(d: dict) -> TrainConfig:
    _check_keys(d, [f.name for f in TrainConfig.__dataclass_fields__.values()], "config")
    kwargs = dict(d)
    if "optimizer" in kwargs:
        _check_keys(kwargs["optimizer"], ("lr", "momentum", "weight_decay"), "optimizer")
        kwargs["optimizer"] = OptimizerConfig(**kwargs["optimizer"])
    if "loss" in kwargs:
        _check_keys(kwargs["loss"], ("alpha", "temperature"), "loss")
        kwargs["loss"] = LossWeights(**kwargs["loss"])
    if "drop" in kwargs:
        _check_keys(
            kwargs["drop"],
            ("method", "p", "b_size", "gamma_mode", "center_region", "schedule", "per_sample"),
            "drop",
        )
        kwargs["drop"] = DropSpec(**kwargs["drop"])
    if "lr_milestones" in kwargs:
        kwargs["lr_milestones"] = tuple((int(e), float(f)) for e, f in kwargs["lr_milestones"])
    if "mask_placement" in kwargs and kwargs["mask_placement"] is not None:
        kwargs["mask_placement"] = tuple(kwargs["mask_placement"])
    return TrainConfig(**kwargs)


def load_config(path) -> TrainConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Dataset resolution

def resolve_dataset(cfg: TrainConfig):
    """Build (train, val) datasets from the config's dataset descriptor."""
    desc = dict(cfg.dataset)
    kind = desc.pop("kind", "synthetic")
    if kind == "synthetic":
        _check_keys(desc, ("classes", "per_class", "val_per_class", "shape", "noise", "seed"), "dataset")
        classes = desc.get("classes", 3)
        shape = tuple(desc.get("shape", (1, 16, 16)))
        noise = desc.get("noise", 0.1)
        seed = desc.get("seed", cfg.seed)
        train = data_mod.make_synthetic(classes, desc.get("per_class", 200), shape,
                                        seed, noise, "train")
        val = data_mod.make_synthetic(classes, desc.get("val_per_class", 50), shape,
                                      seed, noise, "val")
        return train, val
    if kind == "cifar10":
        _check_keys(desc, ("path", "standardize"), "dataset")
        return data_mod.load_cifar10(desc["path"], desc.get("standardize", False))
    raise ValueError(f"unknown dataset kind {kind!r}")


def dataset_fingerprint(*datasets) -> str:
    h = hashlib.sha256()
    for ds in datasets:
        h.update(np.ascontiguousarray(ds.x).tobytes())
        h.update(np.ascontiguousarray(ds.y).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Checkpoints

def save_checkpoint(path, params):
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(params)))
        for arr in params:
            flat = np.ascontiguousarray(arr, dtype="<f8").ravel()
            fh.write(struct.pack("<Q", flat.size))
            fh.write(flat.tobytes())


def load_checkpoint(path):
    """Returns the list of flat parameter tensors in declaration order."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        version, = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        count, = struct.unpack("<I", fh.read(4))
        params = []
        for _ in range(count):
            size, = struct.unpack("<Q", fh.read(8))
            buf = fh.read(size * 8)
            if len(buf) != size * 8:
                raise ValueError(f"{path}: truncated checkpoint")
            params.append(np.frombuffer(buf, dtype="<f8").copy())
        return params


# ---------------------------------------------------------------------------
# Optimizer

class SGD:
    """Classic momentum SGD; weight decay is added to the raw gradient."""

    def __init__(self, model: Model, opt: OptimizerConfig):
        self.model = model
        self.opt = opt
        self.velocity = [np.zeros_like(p) for p in model.param_arrays()]

    def step(self, lr: float):
        for p, g, v in zip(self.model.param_arrays(), self.model.grad_arrays(),
                           self.velocity):
            g = g + self.opt.weight_decay * p
            v *= self.opt.momentum
            v += g
            p -= lr * v


def lr_at(base_lr: float, milestones, epoch: int) -> float:
    lr = base_lr
    for ms_epoch, factor in milestones:
        if epoch >= ms_epoch:
            lr *= factor
    return lr


# ---------------------------------------------------------------------------
# Evaluation

def evaluate(model: Model, ds: data_mod.Dataset, batch_size: int = 256) -> float:
    """Accuracy of the full model, no masks applied."""
    correct = 0
    for start in range(0, len(ds), batch_size):
        xb = ds.x[start : start + batch_size]
        yb = ds.y[start : start + batch_size]
        logits, _ = model.forward(xb, masks=None)
        correct += int((logits.argmax(axis=1) == yb).sum())
    return correct / len(ds)


# ---------------------------------------------------------------------------
# Training loops

def _mask_slots(model: Model, cfg: TrainConfig):
    slots = model.mask_slots
    if cfg.mask_placement is not None:
        missing = set(cfg.mask_placement) - set(slots)
        if missing:
            raise ValueError(f"mask_placement indices {sorted(missing)} are not mask slots")
        slots = list(cfg.mask_placement)
    return slots


def _draw_pair_masks(slot_shapes, slots, spec: DropSpec, rng: RngStream, batch: int):
    """One MaskPair per slot; per_sample stacks an independent pair for each
    batch element along the mask batch axis."""
    masks1, masks2 = {}, {}
    for slot in slots:
        shape = slot_shapes[slot]
        if spec.per_sample:
            pairs = [sample_mask(shape, spec, rng) for _ in range(batch)]
            masks1[slot] = np.concatenate([p.keep1 for p in pairs])
            masks2[slot] = np.concatenate([p.keep2 for p in pairs])
        else:
            pair = sample_mask(shape, spec, rng)
            masks1[slot] = pair.keep1
            masks2[slot] = pair.keep2
    return masks1, masks2


def _draw_single_masks(slot_shapes, slots, spec: DropSpec, rng: RngStream, batch: int):
    masks = {}
    for slot in slots:
        shape = slot_shapes[slot]
        if spec.per_sample:
            draws = [sample_mask(shape, spec, rng) for _ in range(batch)]
            masks[slot] = np.concatenate([d.keep1 for d in draws])
        else:
            masks[slot] = sample_mask(shape, spec, rng).keep1
    return masks


def train_rblock(model: Model, cfg: TrainConfig, train_ds, val_ds,
                 method_name: str | None = None, on_step=None):
    """Two-pass mutual-learning training; returns (metrics rows, best params)."""
    if cfg.drop.method not in PAIR_METHODS:
        raise ValueError(f"train_rblock needs a pair method, got {cfg.drop.method!r}")
    return _train(model, cfg, train_ds, val_ds,
                  method_name or cfg.drop.method, two_pass=True, on_step=on_step)


def train_single(model: Model, cfg: TrainConfig, train_ds, val_ds,
                 method_name: str | None = None, loss_scale: float = 1.0,
                 on_step=None):
    """Single-pass cross-entropy training with an optional single mask."""
    if cfg.drop.method in PAIR_METHODS:
        raise ValueError(f"train_single cannot run pair method {cfg.drop.method!r}")
    return _train(model, cfg, train_ds, val_ds,
                  method_name or cfg.drop.method, two_pass=False,
                  loss_scale=loss_scale, on_step=on_step)


def _train(model, cfg, train_ds, val_ds, method_name, two_pass,
           loss_scale=1.0, on_step=None):
    root = RngStream(cfg.seed)
    shuffle_rng = root.substream(10)
    mask_rng = root.substream(11)

    slots = _mask_slots(model, cfg)
    slot_shapes = model.slot_shapes(train_ds.x.shape[1:])
    use_masks = cfg.drop.method != "baseline" and len(slots) > 0
    optimizer = SGD(model, cfg.optimizer)

    rows = []
    best_val = 0.0
    best_params = [p.copy() for p in model.param_arrays()]
    last_val = 0.0
    step_index = 0

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = lr_at(cfg.optimizer.lr, cfg.lr_milestones, epoch)
        p_now = cfg.drop.p_at(epoch, cfg.epochs)
        spec_now = replace(cfg.drop, p=p_now) if use_masks else cfg.drop

        order = shuffle_rng.permutation(len(train_ds))
        sums = np.zeros(5)  # total, ce1, ce2, kl12, kl21
        nsteps = 0
        for start in range(0, len(train_ds), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = train_ds.x[idx]
            yb = train_ds.y[idx]
            model.zero_grad()

            if two_pass:
                if use_masks:
                    masks1, masks2 = _draw_pair_masks(slot_shapes, slots, spec_now,
                                                      mask_rng, len(idx))
                else:
                    masks1 = masks2 = None
                logits1, caches1 = model.forward(xb, masks1)
                logits2, caches2 = model.forward(xb, masks2)
                breakdown, g1, g2 = rblock_loss(logits1, logits2, yb, cfg.loss)
                if not np.isfinite(breakdown.total):
                    raise TrainingDiverged(epoch, step_index, breakdown)
                model.backward(g1, caches1)
                model.backward(g2, caches2)
            else:
                if use_masks:
                    masks = _draw_single_masks(slot_shapes, slots, spec_now,
                                               mask_rng, len(idx))
                else:
                    masks = None
                logits, caches = model.forward(xb, masks)
                losses, grad = cross_entropy(logits, yb)
                ce = float(losses.mean()) * loss_scale
                breakdown = LossBreakdown(total=ce, ce1=ce / loss_scale, ce2=0.0,
                                          kl12=0.0, kl21=0.0)
                if not np.isfinite(breakdown.total):
                    raise TrainingDiverged(epoch, step_index, breakdown)
                model.backward(grad * (loss_scale / len(idx)), caches)

            optimizer.step(lr)
            sums += [breakdown.total, breakdown.ce1, breakdown.ce2,
                     breakdown.kl12, breakdown.kl21]
            nsteps += 1
            if on_step is not None:
                on_step(step_index, breakdown)
            step_index += 1

        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
            last_val = evaluate(model, val_ds)
        if last_val > best_val:
            best_val = last_val
            best_params = [p.copy() for p in model.param_arrays()]
        wall_ms = int((time.perf_counter() - t0) * 1000)
        mean = sums / max(nsteps, 1)
        rows.append(MetricsRow(
            method=method_name, epoch=epoch,
            loss_total=float(mean[0]), loss_ce1=float(mean[1]),
            loss_ce2=float(mean[2]), loss_kl12=float(mean[3]),
            loss_kl21=float(mean[4]), val_acc=last_val,
            best_val_acc=best_val, p_current=p_now, wall_ms=wall_ms,
        ))
    return rows, best_params


def write_metrics_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for row in rows:
            writer.writerow(row.as_list())


def metrics_to_csv_text(rows) -> str:
    lines = [",".join(METRICS_HEADER)]
    for row in rows:
        lines.append(",".join(str(v) for v in row.as_list()))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Comparison runner

# Per-method drop probabilities used for the six-way comparison.
COMPARISON_P = {
    "rdrop_pair": 0.5,
    "cdrop_pair": 0.5,
    "rspatial_pair": 0.1,
    "rdropblock_pair": 0.1,
    "bdropdml": 0.2,
    "sdropdml": 0.2,
}
COMPARISON_METHODS = tuple(COMPARISON_P)
STAGE_FRACTIONS = (0.2, 0.4, 0.6, 0.8, 1.0)


def stage_snapshots(rows, epochs):
    """Best-so-far validation accuracy at 20/40/60/80/100% of training."""
    snaps = []
    for frac in STAGE_FRACTIONS:
        epoch = max(0, int(np.ceil(frac * epochs)) - 1)
        snaps.append(rows[epoch].best_val_acc)
    return snaps


def run_comparison(methods, cfg: TrainConfig, train_ds, val_ds):
    """Train every method with the same seed/model init; returns a list of
    {"method", "p", "stages": [...], "rows": [...]} dicts."""
    if not methods:
        raise ValueError("need at least one method")
    results = []
    for spec in methods:
        mcfg = replace(cfg, drop=spec)
        model = build_default_model(train_ds.x.shape[1], train_ds.x.shape[2],
                                    train_ds.x.shape[3], train_ds.num_classes,
                                    RngStream(cfg.seed).substream(0))
        if spec.method in PAIR_METHODS:
            rows, _ = train_rblock(model, mcfg, train_ds, val_ds)
        else:
            rows, _ = train_single(model, mcfg, train_ds, val_ds)
        results.append({
            "method": spec.method,
            "p": spec.p,
            "stages": stage_snapshots(rows, mcfg.epochs),
            "rows": rows,
        })
    return results


def default_comparison_specs(b_size: int = 3):
    return [DropSpec(m, p=COMPARISON_P[m], b_size=b_size) for m in COMPARISON_METHODS]


def write_stage_table(results, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "p", "stage20", "stage40", "stage60",
                         "stage80", "stage100"])
        for res in results:
            writer.writerow([res["method"], res["p"], *res["stages"]])


def run_manifest(cfg: TrainConfig, fingerprint: str, results=None) -> dict:
    manifest = {
        "config": config_to_dict(cfg),
        "dataset_sha256": fingerprint,
    }
    if results is not None:
        ranked = sorted(results, key=lambda r: -r["stages"][-1])
        manifest["final_ranking"] = [
            {"method": r["method"], "best_val_acc": r["stages"][-1]} for r in ranked
        ]
        manifest["reference_full_scale_ranking"] = [
            "bdropdml", "sdropdml", "rspatial_pair", "rdropblock_pair",
            "cdrop_pair", "rdrop_pair",
        ]
        manifest["note"] = (
            "Desk-scale ordering is reported, not asserted; run-to-run variance "
            "at this scale exceeds full-scale accuracy gaps."
        )
    return manifest
