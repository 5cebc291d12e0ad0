"""Surrogate-gradient training: warmup + cosine schedule, AdamW, checkpoints
and the contrastive training loop."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .arch import ModelConfig, SpikeVPR
from .augment import (
    DilationConfig,
    DropConfig,
    event_dilation,
    event_drop,
    flip_x,
    sample_dilation_length,
)
from .contrastive import LossConfig, PairBatch, build_batch, nt_xent
from .errors import CheckpointError, NonFiniteGradientError
from .events import EventHistogram, PlaceSample, build_histogram
from .nn import BatchNorm, Tape
from .retrieval import DescriptorDB, EvalConfig, recall_at_n, retrieve
from .seeding import derive_seed, sub_seed

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class OptimConfig:
    base_lr: float = 1e-3
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    warmup_steps: int = 0
    total_steps: int = 1
    seed: int = 0
    clip_norm: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if not self.base_lr > 0:
            raise ValueError("base_lr must be positive")
        if not (0 <= self.warmup_steps < self.total_steps):
            raise ValueError(f"need 0 <= warmup_steps < total_steps, got {self.warmup_steps}, {self.total_steps}")

    @classmethod
    def with_warmup_fraction(cls, total_steps: int, fraction: float = 0.05, **kw) -> "OptimConfig":
        return cls(total_steps=total_steps, warmup_steps=min(int(round(fraction * total_steps)), total_steps - 1), **kw)


def lr_at(step: int, cfg: OptimConfig) -> float:
    """Linear ramp from 0 to ``base_lr`` over the warmup, then cosine decay to 0."""
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    if step < cfg.warmup_steps:
        return cfg.base_lr * step / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * (step - cfg.warmup_steps) / span))


@dataclass
class TrainState:
    """Model plus AdamW moments; ``step`` counts completed optimizer updates."""

    model: SpikeVPR
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    seed: int = 0
    best_metric: float = float("nan")
    rejected_steps: int = 0

    def __post_init__(self):
        for name, p in self.model.named_parameters():
            self.m.setdefault(name, np.zeros_like(p))
            self.v.setdefault(name, np.zeros_like(p))

    def params(self) -> dict[str, np.ndarray]:
        return dict(self.model.named_parameters())


def _param_stores(model) -> dict[str, tuple[dict, str]]:
    stores = {}
    for prefix, mod in model.named_modules():
        pre = f"{prefix}." if prefix else ""
        for k in mod.params:
            stores[pre + k] = (mod.params, k)
    return stores


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for k in grads:
            grads[k] = grads[k] * np.asarray(scale, dtype=grads[k].dtype)
    return total


def adamw_step(state: TrainState, grads: dict[str, np.ndarray], cfg: OptimConfig) -> TrainState:
    """One AdamW update at ``lr_at(state.step + 1)``; parameters change in place.

    Weight decay is applied to the parameter first (decoupled), then the
    bias-corrected Adam step. Non-finite gradients leave the state untouched
    and raise.
    """
    stores = _param_stores(state.model)
    for name, g in grads.items():
        if name not in stores:
            raise KeyError(f"gradient for unknown parameter {name}")
        if g.shape != stores[name][0][stores[name][1]].shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            state.rejected_steps += 1
            raise NonFiniteGradientError(f"non-finite gradient for {name}; step rejected")
    t = state.step + 1
    lr = lr_at(t, cfg)
    b1, b2 = cfg.betas
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        store, key = stores[name]
        p = store[key]
        dt = p.dtype
        m = state.m[name]
        v = state.v[name]
        p *= dt.type(1.0 - lr * cfg.weight_decay)
        m *= dt.type(b1)
        m += dt.type(1.0 - b1) * g
        v *= dt.type(b2)
        v += dt.type(1.0 - b2) * np.square(g)
        p -= dt.type(lr) * (m / dt.type(c1)) / (np.sqrt(v / dt.type(c2)) + dt.type(cfg.eps))
    state.step = t
    return state


# --------------------------------------------------------------------------
# checkpoints


def _blob_path(manifest_path: Path) -> Path:
    return manifest_path.with_suffix(".bin")


def save_checkpoint(state: TrainState, path, extra: dict | None = None) -> Path:
    """Write ``<path>`` (JSON manifest) and ``<path>.bin`` (little-endian float32 blob)."""
    path = Path(path)
    tensors = []
    chunks = []
    offset = 0
    named = list(state.model.state_dict().items())
    named += [(f"optim.m.{k}", a) for k, a in state.m.items()]
    named += [(f"optim.v.{k}", a) for k, a in state.v.items()]
    for name, arr in named:
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "dtype": "float32-le",
        "model_config": state.model.cfg.to_dict(),
        "blob": _blob_path(path).name,
        "blob_bytes": offset,
        "tensors": tensors,
        "step": state.step,
        "seed": state.seed,
        "best_metric": None if math.isnan(state.best_metric) else state.best_metric,
        "extra": extra or {},
    }
    _blob_path(path).write_bytes(b"".join(chunks))
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def read_checkpoint_tensors(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint manifest {path}: {exc}") from exc
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {manifest.get('format_version')} != supported {CHECKPOINT_VERSION}"
        )
    blob_path = path.parent / manifest["blob"]
    try:
        blob = blob_path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"missing checkpoint blob {blob_path}") from exc
    if len(blob) != manifest["blob_bytes"]:
        raise CheckpointError(f"corrupt blob: {len(blob)} bytes, manifest says {manifest['blob_bytes']}")
    tensors = {}
    for t in manifest["tensors"]:
        n = int(np.prod(t["shape"])) if t["shape"] else 1
        if t["nbytes"] != 4 * n or t["offset"] < 0 or t["offset"] + t["nbytes"] > len(blob):
            raise CheckpointError(f"corrupt blob: tensor {t['name']} out of range")
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=t["offset"]).reshape(t["shape"])
        tensors[t["name"]] = arr.astype(np.float32)
    return manifest, tensors


def load_checkpoint(path) -> TrainState:
    manifest, tensors = read_checkpoint_tensors(path)
    cfg = ModelConfig.from_dict(manifest["model_config"])
    model = SpikeVPR(cfg, seed=manifest.get("seed", 0))
    model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("optim.")})
    m = {k[len("optim.m."):]: v.copy() for k, v in tensors.items() if k.startswith("optim.m.")}
    v = {k[len("optim.v."):]: a.copy() for k, a in tensors.items() if k.startswith("optim.v.")}
    best = manifest.get("best_metric")
    return TrainState(model, m, v, step=int(manifest["step"]), seed=int(manifest.get("seed", 0)),
                      best_metric=float("nan") if best is None else float(best))


def load_encoder(model: SpikeVPR, path) -> list[str]:
    """Copy only the ``encoder.*`` tensors of a checkpoint into ``model``."""
    manifest, tensors = read_checkpoint_tensors(path)
    enc = {k[len("encoder."):]: v for k, v in tensors.items() if k.startswith("encoder.")}
    if not enc:
        raise CheckpointError("checkpoint holds no encoder tensors")
    return ["encoder." + k for k in model.encoder.load_state_dict(enc, strict=True)]


# --------------------------------------------------------------------------
# data pipeline


@dataclass(frozen=True)
class AugmentConfig:
    """Toggles D (EventDilation), X (x-axis flip) and E (EventDrop)."""

    dilation: bool = False
    flip: bool = False
    drop: bool = False
    t_min: int | None = None
    t_max: int | None = None
    flip_prob: float = 0.5
    drop_mode: str | None = None
    drop_ratio: float = 0.2

    def __post_init__(self):
        if self.dilation:
            if self.t_min is None or self.t_max is None:
                raise ValueError("EventDilation needs t_min and t_max")
            DilationConfig(self.t_min, self.t_max)
        DropConfig(self.drop_mode, self.drop_ratio)

    @property
    def label(self) -> str:
        parts = [c for c, on in (("D", self.dilation), ("X", self.flip), ("E", self.drop)) if on]
        return "+".join(parts) if parts else "None"

    @classmethod
    def from_label(cls, label: str, **kw) -> "AugmentConfig":
        toks = set() if label == "None" else set(label.replace(" ", "").split("+"))
        if not toks <= {"D", "X", "E"}:
            raise ValueError(f"bad augmentation label {label!r}")
        return cls(dilation="D" in toks, flip="X" in toks, drop="E" in toks, **kw)


def sample_histogram(stream, sample: PlaceSample, aug: AugmentConfig | None, seed: int) -> EventHistogram:
    """Histogram for one place sample with the configured augmentations applied."""
    t_c = sample.center
    if aug is not None and aug.dilation:
        dcfg = DilationConfig(aug.t_min, aug.t_max)
        dt = sample_dilation_length(dcfg, derive_seed(seed, "dilation"))
        part = stream.time_slice(t_c - dt // 2 - 1, t_c + dt // 2 + 2)
        part = event_dilation(part, t_c, dcfg, seed, dt=dt)
        # half-open window covering the closed dilation interval
        window = (math.floor(t_c - dt / 2), math.floor(t_c + dt / 2) + 1)
    else:
        part = stream.time_slice(*sample.window)
        window = sample.window
    if aug is not None and aug.drop:
        part = event_drop(part, DropConfig(aug.drop_mode, aug.drop_ratio), derive_seed(seed, "drop"))
    hist = build_histogram(part, window)
    if aug is not None and aug.flip:
        if np.random.default_rng(derive_seed(seed, "flip")).random() < aug.flip_prob:
            hist = flip_x(hist)
    return hist


def calibrate_bn(model: SpikeVPR, x: np.ndarray) -> None:
    """Initialise missing batch-norm running statistics from one batch."""
    if all(m.initialized for m in model.modules() if isinstance(m, BatchNorm)):
        return
    was = model.training
    model.train()
    model.forward(x)
    model.train(was)


@dataclass
class EvalSplit:
    reference: int
    queries: tuple[int, ...]


def embed_samples(model: SpikeVPR, dataset, samples: Sequence[PlaceSample], batch_size: int = 64) -> np.ndarray:
    return model.embed(dataset.histograms(samples).astype(np.float32), batch_size)


def evaluate(model: SpikeVPR, dataset, split: EvalSplit, cfg: EvalConfig):
    refs = dataset.samples([split.reference])
    qs = dataset.samples(split.queries)
    db = DescriptorDB(embed_samples(model, dataset, refs), [s.place_id for s in refs],
                      [s.position for s in refs], [s.traverse_id for s in refs])
    zq = embed_samples(model, dataset, qs)
    res = retrieve(db, zq, [s.position for s in qs], cfg,
                   query_ids=[s.traverse_id * 100000 + s.place_id for s in qs])
    return res, recall_at_n(res, cfg)


def _safe_descriptors(z: np.ndarray) -> np.ndarray:
    """Replace all-zero descriptors by a tiny constant so cosine similarity is defined."""
    dead = ~np.any(z != 0, axis=1)
    if dead.any():
        z = z.copy()
        z[dead] = 1e-6
    return z


@dataclass
class TrainResult:
    state: TrainState
    log_rows: list[dict]

    def csv_text(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,step,lr,loss,val_recall1\n")
        for r in self.log_rows:
            buf.write(f"{r['epoch']},{r['step']},{r['lr']:.8g},{r['loss']:.8g},{r['val_recall1']:.6f}\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.csv_text())


def train(
    dataset,
    model: SpikeVPR,
    optim: OptimConfig,
    loss_cfg: LossConfig,
    aug: AugmentConfig | None,
    epochs: int,
    train_traverses: Sequence[int],
    split: EvalSplit | None = None,
    eval_cfg: EvalConfig = EvalConfig(),
    n_pairs: int | None = None,
    batches_per_epoch: int | None = None,
    state: TrainState | None = None,
) -> TrainResult:
    """Contrastive training; the run is a pure function of data, configs and ``optim.seed``."""
    samples = dataset.samples(train_traverses)
    if n_pairs is None:
        per_traverse = min(len(dataset.samples([t])) for t in train_traverses)
        n_pairs = min(loss_cfg.batch_size // 2, per_traverse)
    if batches_per_epoch is None:
        batches_per_epoch = max(1, math.ceil(len(samples) / (2 * n_pairs)))
    if optim.total_steps != epochs * batches_per_epoch:
        raise ValueError(
            f"optim.total_steps={optim.total_steps} but epochs*batches = {epochs * batches_per_epoch}"
        )
    state = state or TrainState(model, seed=optim.seed)
    seed = optim.seed
    dtype = model.dtype
    rows: list[dict] = []

    def prepare(epoch: int, b: int):
        pairs = build_batch(samples, loss_cfg, eval_cfg.theta_m, sub_seed(derive_seed(seed, "batch"), epoch, b), n_pairs)
        bseed = sub_seed(derive_seed(seed, "augment"), epoch, b)
        hists = [sample_histogram(dataset.stream_of(s), s, aug, bseed ^ i).counts
                 for i, s in enumerate(pairs.samples())]
        return np.stack(hists).astype(dtype)

    def validate() -> float:
        if split is None:
            return float("nan")
        _, curve = evaluate(model, dataset, split, EvalConfig(eval_cfg.theta_m, (1,)))
        return curve[0][1]

    calibrate_bn(model, prepare(0, 0))
    r1 = validate()
    rows.append({"epoch": 0, "step": state.step, "lr": 0.0, "loss": float("nan"), "val_recall1": r1})
    log.info("epoch 0 val R@1 %.4f", r1)

    for epoch in range(1, epochs + 1):
        losses = []
        for b in range(batches_per_epoch):
            x = prepare(epoch, b)
            model.train()
            model.zero_grad()
            tape = Tape()
            z = model.forward(x, tape)
            loss, gz = nt_xent(PairBatch.from_halves(*np.split(_safe_descriptors(z.astype(np.float64)), 2)), loss_cfg)
            model.backward(gz.astype(dtype), tape)
            grads = dict(model.named_grads())
            if optim.clip_norm:
                clip_by_global_norm(grads, optim.clip_norm)
            try:
                adamw_step(state, grads, optim)
            except NonFiniteGradientError as exc:
                log.warning("%s", exc)
                state.step += 1
            losses.append(loss)
        r1 = validate()
        if split is not None and (math.isnan(state.best_metric) or r1 > state.best_metric):
            state.best_metric = r1
        row = {"epoch": epoch, "step": state.step, "lr": lr_at(state.step, optim),
               "loss": float(np.mean(losses)), "val_recall1": r1}
        rows.append(row)
        log.info("epoch %d loss %.4f val R@1 %.4f", epoch, row["loss"], r1)
    model.eval()
    return TrainResult(state, rows)
