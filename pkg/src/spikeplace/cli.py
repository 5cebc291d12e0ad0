"""Command-line entry point: ``spikeplace <command> --config run.toml --out DIR``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .arch import SpikeVPR, param_count
from .config import RunConfig, load_config
from .energy import ann_counterpart, ann_energy, energy_decompose, monitor_spikes, stats_to_dict, transfer_rates
from .errors import ConfigError, DataError, SpikePlaceError
from .retrieval import DescriptorDB, retrieve, write_match_report, write_pr_csv, write_recall_csv
from .synth import write_dataset
from .train import load_checkpoint, sample_histogram, save_checkpoint

log = logging.getLogger("spikeplace")

COMMANDS = ("synth", "augment", "train", "embed", "retrieve", "eval", "baseline", "energy", "ablate")
EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n\n{self.format_usage()}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spikeplace", description="Event-camera place recognition with a stateless spiking network.")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    helps = {
        "synth": "generate a synthetic multi-traverse dataset",
        "augment": "write augmented place histograms for the training traverses",
        "train": "contrastive training; writes a checkpoint and the metric log",
        "embed": "descriptors for every place sample",
        "retrieve": "top-N matches for the query traverses",
        "eval": "Recall@N and precision-recall for a checkpoint",
        "baseline": "SAD and PCA baselines",
        "energy": "per-layer inference energy report",
        "ablate": "augmentation ablation grid",
    }
    for name in COMMANDS:
        s = sub.add_parser(name, help=helps[name], description=helps[name])
        s.add_argument("--config", required=True, help="run configuration (TOML)")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--seed", type=int, default=None, help="override the configured seed")
        s.add_argument("--checkpoint", default=None, help="checkpoint manifest (default: <out>/checkpoint.json)")
        s.add_argument("--verbose", "-v", action="store_true", help="log progress")
    return p


def _thread_limit():
    raw = os.environ.get("SPIKEPLACE_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise UsageError(f"SPIKEPLACE_THREADS must be a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _checkpoint_path(args) -> Path:
    path = Path(args.checkpoint) if args.checkpoint else Path(args.out) / "checkpoint.json"
    if not path.is_file():
        raise UsageError(f"{args.command} needs a checkpoint: {path} does not exist (train first or pass --checkpoint)")
    return path


def _load_model(args) -> SpikeVPR:
    state = load_checkpoint(_checkpoint_path(args))
    return state.model


def _figure(cfg: RunConfig, fn, *a):
    if cfg.report.figures:
        fn(*a)


# --------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig, args, out: Path) -> None:
    route = pl.route_config(cfg)
    write_dataset(route, out, cfg.data.half_window_us)
    log.info("wrote %d traverses to %s", len(route.traverses), out)
    if cfg.report.figures:
        from .plotting import plot_histograms

        ds = pl.read_dataset_dir(out, cfg.data.half_window_us)
        firsts = [t.places[len(t.places) // 2] for t in ds.traverses if t.places]
        plot_histograms(ds.histograms(firsts), [f"traverse {s.traverse_id}" for s in firsts], out / "samples.png")


def cmd_augment(cfg: RunConfig, args, out: Path) -> None:
    from .seeding import derive_seed

    ds = pl.load_dataset(cfg)
    pl.check_split(cfg, ds)
    aug = pl.augment_config(cfg)
    samples = ds.samples(list(cfg.split.train))
    base = derive_seed(cfg.seed, "augment")
    hists, rows = [], []
    for i, s in enumerate(samples):
        h = sample_histogram(ds.stream_of(s), s, aug, base ^ i).counts
        orig = ds.histograms([s])[0]
        hists.append(h)
        rows.append((s.traverse_id, s.place_id, int(orig.sum()), int(h.sum())))
    np.savez_compressed(out / "augmented.npz", histograms=np.stack(hists),
                        place_ids=np.array([s.place_id for s in samples]),
                        traverse_ids=np.array([s.traverse_id for s in samples]))
    with open(out / "augment_summary.csv", "w", encoding="utf-8") as fh:
        fh.write("traverse_id,place_id,events_original,events_augmented\n")
        for r in rows:
            fh.write(",".join(map(str, r)) + "\n")
    if cfg.report.figures:
        from .plotting import plot_histograms

        k = min(3, len(samples))
        pairs = []
        titles = []
        for s, h in zip(samples[:k], hists[:k]):
            pairs += [ds.histograms([s])[0], h]
            titles += [f"place {s.place_id}", f"{aug.label}"]
        plot_histograms(np.stack(pairs), titles, out / "augment.png")


def cmd_train(cfg: RunConfig, args, out: Path) -> None:
    ds = pl.load_dataset(cfg)
    model, res = pl.train_run(cfg, ds)
    res.write_csv(out / "train_log.csv")
    save_checkpoint(res.state, out / "checkpoint.json",
                    extra={"augmentation": pl.augment_config(cfg).label, "params": param_count(model)})
    log.info("final loss %.4f, validation R@1 %.4f", res.log_rows[-1]["loss"], res.log_rows[-1]["val_recall1"])
    if cfg.report.figures:
        from .plotting import plot_training_log

        plot_training_log(res.log_rows, out / "train_log.png")


def cmd_embed(cfg: RunConfig, args, out: Path) -> None:
    model = _load_model(args)
    ds = pl.load_dataset(cfg)
    samples = ds.samples()
    z = model.embed(ds.histograms(samples).astype(np.float32))
    np.savez_compressed(
        out / "descriptors.npz", descriptors=z,
        place_ids=np.array([s.place_id for s in samples]),
        traverse_ids=np.array([s.traverse_id for s in samples]),
        positions=np.array([s.position for s in samples], dtype=np.float64),
    )
    log.info("embedded %d samples into %d-d descriptors", len(samples), z.shape[1])


def cmd_retrieve(cfg: RunConfig, args, out: Path) -> None:
    model = _load_model(args)
    ds = pl.load_dataset(cfg)
    pl.check_split(cfg, ds)
    refs = ds.samples([cfg.split.reference])
    qs = ds.samples(list(cfg.split.queries))
    db = DescriptorDB(model.embed(ds.histograms(refs).astype(np.float32)), [s.place_id for s in refs],
                      [s.position for s in refs], [s.traverse_id for s in refs])
    zq = model.embed(ds.histograms(qs).astype(np.float32))
    res = retrieve(db, zq, [s.position for s in qs], pl.eval_config(cfg),
                   query_ids=[s.traverse_id * 100000 + s.place_id for s in qs])
    write_match_report(res, out / "matches.json", n=max(cfg.eval.n_values))


def _write_eval(ev: pl.Evaluation, out: Path, stem: str) -> None:
    write_recall_csv(ev.recall, out / f"recall_{stem}.csv")
    write_pr_csv(ev.pr, out / f"pr_{stem}.csv")


def cmd_eval(cfg: RunConfig, args, out: Path) -> None:
    model = _load_model(args)
    ds = pl.load_dataset(cfg)
    ev = pl.evaluate_model(cfg, model, ds)
    _write_eval(ev, out, "spikevpr")
    write_match_report(ev.result, out / "matches.json", n=max(cfg.eval.n_values))
    (out / "metrics.json").write_text(json.dumps({"spikevpr": ev.summary()}, indent=2) + "\n")
    log.info("Recall@1 %.4f", ev.recall1)
    if cfg.report.figures:
        from .plotting import plot_pr, plot_recall

        plot_recall({"SpikeVPR": ev.recall}, out / "recall.png")
        plot_pr({"SpikeVPR": ev.pr}, out / "pr.png")


def cmd_baseline(cfg: RunConfig, args, out: Path) -> None:
    ds = pl.load_dataset(cfg)
    evs = {m: pl.evaluate_baseline(cfg, ds, m) for m in ("sad", "pca")}
    for m, ev in evs.items():
        _write_eval(ev, out, m)
        log.info("%s Recall@1 %.4f", m.upper(), ev.recall1)
    (out / "metrics.json").write_text(json.dumps({m: ev.summary() for m, ev in evs.items()}, indent=2) + "\n")
    if cfg.report.figures:
        from .plotting import plot_pr, plot_recall

        plot_recall({m.upper(): ev.recall for m, ev in evs.items()}, out / "recall.png")
        plot_pr({m.upper(): ev.pr for m, ev in evs.items()}, out / "pr.png")


def cmd_energy(cfg: RunConfig, args, out: Path) -> None:
    model = _load_model(args)
    ds = pl.load_dataset(cfg)
    pl.check_split(cfg, ds)
    samples = (ds.samples([cfg.split.reference]) + ds.samples(list(cfg.split.queries)))[: cfg.energy.max_inputs]
    stats = monitor_spikes(model, ds.histograms(samples).astype(np.float32))
    report = energy_decompose(stats)
    doc = {
        "model": report.to_dict(),
        "spike_stats": stats_to_dict(stats),
        "ann_total_mJ": ann_energy(ann_counterpart(stats, cfg.energy.ann_gamma)) / 1e9,
        "ann_gamma": cfg.energy.ann_gamma,
        "n_inputs": stats.n_inputs,
    }
    if cfg.energy.paper_scale:
        from .arch import PAPER_SCALE

        big = SpikeVPR(PAPER_SCALE, seed=0)
        moved = transfer_rates(stats, big, (2, PAPER_SCALE.height, PAPER_SCALE.width))
        big_report = energy_decompose(moved)
        doc["paper_scale"] = {
            "params": param_count(big),
            "model": big_report.to_dict(),
            "ann_total_mJ": ann_energy(ann_counterpart(moved, cfg.energy.ann_gamma)) / 1e9,
        }
    (out / "energy_report.json").write_text(json.dumps(doc, indent=2) + "\n")
    log.info("energy per inference: %.6f mJ (dense ANN counterpart %.6f mJ)", report.total_mJ, doc["ann_total_mJ"])
    if cfg.report.figures:
        from .plotting import plot_energy

        plot_energy(report, out / "energy.png")


def cmd_ablate(cfg: RunConfig, args, out: Path) -> None:
    ds = pl.load_dataset(cfg)
    rows = pl.ablate(cfg, ds)
    pl.write_ablation_csv(rows, out / "ablation.csv")
    if cfg.report.figures:
        from .plotting import plot_ablation

        plot_ablation([r.label for r in rows], [r.median_recall1 for r in rows], out / "ablation.png")


HANDLERS = {
    "synth": cmd_synth, "augment": cmd_augment, "train": cmd_train, "embed": cmd_embed,
    "retrieve": cmd_retrieve, "eval": cmd_eval, "baseline": cmd_baseline, "energy": cmd_energy,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(levelname)s %(message)s")
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        cfg.write(out / "config.resolved.toml")
        with _thread_limit():
            HANDLERS[args.command](cfg, args, out)
        return EXIT_OK
    except UsageError as exc:
        print(f"spikeplace: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"spikeplace: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"spikeplace: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SpikePlaceError as exc:
        print(f"spikeplace: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
