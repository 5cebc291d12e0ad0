"""Glue between a :class:`RunConfig` and the library: datasets, models, runs."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .arch import DESK_SMALL, PAPER_SCALE, ModelConfig, SpikeVPR
from .config import RunConfig
from .contrastive import LossConfig
from .errors import DataError
from .events import guess_format, parse_event_file, parse_pose_file
from .retrieval import EvalConfig, PRCurve, RetrievalResult, baseline_retrieve, precision_recall, recall_at_n
from .synth import PlaceDataset, RouteConfig, TraverseConfig, assemble, synthesize
from .train import AugmentConfig, EvalSplit, OptimConfig, TrainResult, evaluate, train

log = logging.getLogger(__name__)


def route_config(cfg: RunConfig) -> RouteConfig:
    r = asdict(cfg.data.route)
    r["traverses"] = tuple(TraverseConfig(**t) for t in r["traverses"])
    return RouteConfig(**r)


def model_config(cfg: RunConfig) -> ModelConfig:
    if cfg.model.preset == "paper":
        return PAPER_SCALE
    if cfg.model.preset == "small":
        return replace(DESK_SMALL, height=cfg.model.height, width=cfg.model.width)
    m = asdict(cfg.model)
    m.pop("preset")
    for k in ("stage_widths", "stage_blocks", "stage_strides"):
        m[k] = tuple(m[k])
    return ModelConfig(**m)


def augment_config(cfg: RunConfig, label: str | None = None) -> AugmentConfig:
    a = cfg.augment
    kw = dict(t_min=a.t_min_us, t_max=a.t_max_us, flip_prob=a.flip_prob,
              drop_mode=a.drop_mode or None, drop_ratio=a.drop_ratio)
    if label is not None:
        return AugmentConfig.from_label(label, **kw)
    return AugmentConfig(dilation=a.dilation, flip=a.flip, drop=a.drop, **kw)


def optim_config(cfg: RunConfig, seed: int) -> OptimConfig:
    o = cfg.optim
    total = cfg.train.epochs * cfg.train.batches_per_epoch
    return OptimConfig.with_warmup_fraction(
        total, o.warmup_fraction, base_lr=o.base_lr, weight_decay=o.weight_decay,
        betas=tuple(o.betas), seed=seed, clip_norm=o.clip_norm or None,
    )


def eval_config(cfg: RunConfig) -> EvalConfig:
    return EvalConfig(cfg.eval.theta_m, tuple(cfg.eval.n_values))


def eval_split(cfg: RunConfig) -> EvalSplit:
    return EvalSplit(cfg.split.reference, tuple(cfg.split.queries))


# --------------------------------------------------------------------------
# datasets


def read_dataset_dir(directory, half_window_us: int, spacing_m: float | None = None) -> PlaceDataset:
    """Load traverses listed in ``<directory>/manifest.json``."""
    directory = Path(directory)
    mpath = directory / "manifest.json"
    try:
        manifest = json.loads(mpath.read_text())
    except FileNotFoundError as exc:
        raise DataError(f"dataset manifest not found: {mpath}") from exc
    except ValueError as exc:
        raise DataError(f"{mpath}: invalid JSON ({exc})") from exc
    entries = manifest.get("traverses")
    if not entries:
        raise DataError(f"{mpath}: no traverses listed")
    spacing = spacing_m if spacing_m is not None else manifest.get("spacing_m")
    if spacing is None:
        raise DataError(f"{mpath}: place spacing unknown")
    geometry = None
    route = manifest.get("route")
    if route:
        geometry = (int(route["width"]), int(route["height"]))
    elif "geometry" in manifest:
        geometry = tuple(manifest["geometry"])
    pairs, ids = [], []
    for e in entries:
        ev = directory / e["events"]
        fmt = e.get("format") or guess_format(ev)
        pairs.append((parse_event_file(ev, fmt, geometry), parse_pose_file(directory / e["pose"])))
        ids.append(int(e["traverse_id"]))
    return assemble(pairs, float(spacing), half_window_us, ids)


def load_dataset(cfg: RunConfig) -> PlaceDataset:
    hw = cfg.data.half_window_us
    if cfg.data.dir:
        return read_dataset_dir(cfg.data.dir, hw, cfg.data.spacing_m)
    return synthesize(route_config(cfg), hw)


def check_split(cfg: RunConfig, ds: PlaceDataset) -> None:
    have = {t.traverse_id for t in ds.traverses}
    wanted = set(cfg.split.train) | {cfg.split.reference} | set(cfg.split.queries)
    missing = sorted(wanted - have)
    if missing:
        raise DataError(f"split refers to traverses {missing} not present in the dataset (have {sorted(have)})")


# --------------------------------------------------------------------------
# runs


def train_run(cfg: RunConfig, ds: PlaceDataset, seed: int | None = None,
              label: str | None = None, validate: bool = True) -> tuple[SpikeVPR, TrainResult]:
    seed = cfg.seed if seed is None else seed
    check_split(cfg, ds)
    model = SpikeVPR(model_config(cfg), seed=seed)
    res = train(
        ds, model, optim_config(cfg, seed), LossConfig(cfg.train.tau, cfg.train.batch_size),
        augment_config(cfg, label), cfg.train.epochs, list(cfg.split.train),
        eval_split(cfg) if validate else None, EvalConfig(cfg.eval.theta_m, (1,)),
        n_pairs=cfg.train.n_pairs, batches_per_epoch=cfg.train.batches_per_epoch,
    )
    return model, res


@dataclass
class Evaluation:
    result: RetrievalResult
    recall: list[tuple[int, float]]
    pr: PRCurve

    @property
    def recall1(self) -> float:
        return dict(self.recall).get(1, float("nan"))

    def summary(self) -> dict:
        return {
            "recall": {str(n): _finite(r) for n, r in self.recall},
            "precision_at_full_recall": _finite(self.pr.precision_at_full_recall),
            "pr_auc": _finite(self.pr.auc()),
            "n_queries": int(self.result.n_queries),
            "n_valid_queries": int(np.sum(self.result.has_match)),
        }


def _finite(x: float) -> float | None:
    return None if np.isnan(x) else float(x)


def evaluate_model(cfg: RunConfig, model: SpikeVPR, ds: PlaceDataset) -> Evaluation:
    check_split(cfg, ds)
    ec = eval_config(cfg)
    res, _ = evaluate(model, ds, eval_split(cfg), ec)
    return Evaluation(res, recall_at_n(res, ec), precision_recall(res, ec))


def evaluate_baseline(cfg: RunConfig, ds: PlaceDataset, method: str) -> Evaluation:
    check_split(cfg, ds)
    ec = eval_config(cfg)
    refs = ds.samples([cfg.split.reference])
    qs = ds.samples(list(cfg.split.queries))
    res = baseline_retrieve(
        method, ds.histograms(refs), [s.place_id for s in refs], [s.position for s in refs],
        ds.histograms(qs), [s.position for s in qs], ec, k=cfg.eval.pca_components,
        query_ids=[s.traverse_id * 100000 + s.place_id for s in qs],
    )
    return Evaluation(res, recall_at_n(res, ec), precision_recall(res, ec))


@dataclass
class AblationRow:
    label: str
    seeds: list[int]
    recall1: list[float]
    precision_at_full_recall: list[float]

    @property
    def median_recall1(self) -> float:
        return float(np.median(self.recall1))

    @property
    def median_precision(self) -> float:
        return float(np.median(self.precision_at_full_recall))


def ablate(cfg: RunConfig, ds: PlaceDataset) -> list[AblationRow]:
    """Train and evaluate once per (augmentation set, seed)."""
    rows = []
    for label in cfg.ablate.labels:
        r1, prec = [], []
        for seed in cfg.ablate.seeds:
            model, _ = train_run(cfg, ds, seed, label, validate=False)
            ev = evaluate_model(cfg, model, ds)
            r1.append(ev.recall1)
            prec.append(ev.pr.precision_at_full_recall)
            log.info("ablation %s seed %d: R@1 %.4f", label, seed, ev.recall1)
        rows.append(AblationRow(label, list(cfg.ablate.seeds), r1, prec))
    return rows


def write_ablation_csv(rows: list[AblationRow], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("augmentation,recall1,precision_at_full_recall,seeds,recall1_per_seed\n")
        for r in rows:
            per = " ".join(f"{v:.6f}" for v in r.recall1)
            seeds = " ".join(str(s) for s in r.seeds)
            fh.write(f"{r.label},{r.median_recall1:.6f},{r.median_precision:.6f},{seeds},{per}\n")
