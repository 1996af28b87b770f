"""The train -> latency-fit -> search -> enumerate pipeline.

Every command reads a RunConfig and writes its artifacts to the run's output
directory::

    checkpoint.json / checkpoint.bin   supernet weights
    train_report.json
    latency_dataset.csv, gp_model.json, latency_fit.json
    search_history.csv/.json, search_best.json, search_pareto.csv
    enumeration.csv/.json, reference_pareto.csv
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import hwmodel, metrics
from ..errors import DropNasError
from ..evosearch import (
    CachedEvaluator,
    CandidateRecord,
    aim_score,
    dominates,
    pareto_front,
    search,
)
from ..gp import GpModel
from ..metrics import EvalMetrics
from ..supernet import SupernetSpec, train_supernet
from . import report
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .idx import load_idx

log = logging.getLogger(__name__)

CHECKPOINT = "checkpoint.json"
GP_MODEL = "gp_model.json"


class SpaceTooLarge(DropNasError):
    def __init__(self, size, cap):
        super().__init__(f"search space has {size} genomes, enumeration cap is {cap}")
        self.size = size


@dataclass
class Splits:
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray


def load_splits(cfg: RunConfig) -> Splits:
    """Load the IDX dataset and split off a seeded validation fraction."""
    images = cfg.resolve(cfg.paths.train_images)
    labels = cfg.resolve(cfg.paths.train_labels)
    for p in (images, labels):
        if not p.exists():
            raise FileNotFoundError(f"dataset file not found: {p}")
    x, y = load_idx(images, labels)
    if cfg.max_images is not None:
        x, y = x[: cfg.max_images], y[: cfg.max_images]
    order = np.random.default_rng(cfg.seeds.split).permutation(len(x))
    n_val = max(1, int(round(cfg.evaluation.val_fraction * len(x))))
    val, train = order[:n_val], order[n_val:]
    return Splits(x[train], y[train], x[val], y[val])


class SupernetEvaluator:
    """Genome -> EvalMetrics using shared supernet weights.

    Each genome gets its own random streams derived from ``(seed, genome
    index)``, so its metrics do not depend on evaluation order.
    """

    def __init__(self, spec: SupernetSpec, params, val_x, val_y, ood_x, *, samples=3, bins=10,
                 seed=0, latency_fn=None, quantize=False):
        self.spec = spec
        self.params = params
        self.val_x, self.val_y, self.ood_x = val_x, val_y, ood_x
        self.samples = samples
        self.bins = bins
        self.seed = seed
        self.latency_fn = latency_fn or (lambda g: hwmodel.genome_latency(spec, g, samples=samples))
        self.quantize = quantize

    def __call__(self, genome) -> EvalMetrics:
        genome = self.spec.check_genome(genome)
        ss = np.random.SeedSequence([self.seed, self.spec.genome_index(genome)])
        val_rng, ood_rng = (np.random.default_rng(s) for s in ss.spawn(2))
        val = metrics.mc_predict(self.spec, self.params, genome, self.val_x, self.samples, val_rng,
                                 quantize=self.quantize)
        ood = metrics.mc_predict(self.spec, self.params, genome, self.ood_x, self.samples, ood_rng,
                                 quantize=self.quantize)
        return EvalMetrics(
            accuracy=metrics.accuracy(val, self.val_y),
            ece=metrics.ece(val, self.val_y, self.bins),
            ape=metrics.ape(ood),
            latency_ms=float(self.latency_fn(genome)),
        )


def cmd_train(cfg: RunConfig) -> dict:
    spec = cfg.supernet()
    data = load_splits(cfg)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    params, rep = train_supernet(spec, data.train_x, data.train_y, cfg.train_hyper(), cfg.seeds.train)
    elapsed = time.perf_counter() - t0
    save_checkpoint(params, out / CHECKPOINT, spec.hash(), cfg.seeds.train, cfg.train.epochs)
    summary = {
        **rep.to_dict(),
        "spec_hash": spec.hash(),
        "train_size": int(len(data.train_x)),
        "val_size": int(len(data.val_x)),
        "space_size": spec.space_size,
    }
    report.write_json(summary, out / "train_report.json")
    report.write_json({"train_seconds": elapsed}, out / "train_timing.json")
    return summary


def latency_shapes(cfg: RunConfig, spec: SupernetSpec) -> list[tuple[int, ...]]:
    slot_shapes = list(spec.backbone.slot_shapes().values())
    grid = [tuple(s) for s in cfg.latency.shape_grid] if cfg.latency.shape_grid else []
    return list(dict.fromkeys(slot_shapes + grid + hwmodel.covering_grid(slot_shapes)))


def cmd_latency_fit(cfg: RunConfig) -> dict:
    spec = cfg.supernet()
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    ds = hwmodel.build_dataset(latency_shapes(cfg, spec), cfg.latency_calib(), hwmodel.kind_params(spec))
    model = hwmodel.fit_latency_model(ds)
    ds.to_csv(out / "latency_dataset.csv")
    model.save(out / GP_MODEL)
    loo = model.loo_residuals()
    fit = {
        "rows": len(ds),
        "lengthscale": model.hyper.lengthscale,
        "signal_var": model.hyper.signal_var,
        "noise_var": model.hyper.noise_var,
        "log_marginal_likelihood": model.log_marginal_likelihood(),
        "loo_rmse_ms": float(np.sqrt(np.mean(loo**2))),
    }
    report.write_json(fit, out / "latency_fit.json")
    return fit


def _ood_set(cfg: RunConfig, data: Splits) -> np.ndarray:
    mean = data.train_x.mean(axis=0, dtype=np.float64)
    std = data.train_x.std(axis=0, dtype=np.float64)
    return metrics.make_ood(mean, std, cfg.evaluation.ood_size, seed=cfg.seeds.ood)


def build_evaluator(cfg: RunConfig, checkpoint=None, gp=None, quantize=False):
    spec = cfg.supernet()
    out = cfg.output_dir
    ckpt = Path(checkpoint) if checkpoint else out / CHECKPOINT
    gp_path = Path(gp) if gp else out / GP_MODEL
    for p in (ckpt, gp_path):
        if not p.exists():
            raise FileNotFoundError(f"required file not found: {p}")
    params, _ = load_checkpoint(ckpt, spec.hash())
    model = GpModel.load(gp_path)
    data = load_splits(cfg)
    calib = cfg.latency_calib()
    samples = cfg.evaluation.mc_samples
    evaluator = SupernetEvaluator(
        spec, params, data.val_x, data.val_y, _ood_set(cfg, data),
        samples=samples,
        bins=cfg.evaluation.ece_bins,
        seed=cfg.seeds.eval,
        latency_fn=lambda g: hwmodel.genome_latency(spec, g, model, calib, samples),
        quantize=quantize,
    )
    return spec, evaluator


def _write_records(records, front, spec, path_stem: Path):
    rows = report.rows_for(records, front, spec.letters)
    report.write_csv(rows, path_stem.with_suffix(".csv"))
    report.write_json(rows, path_stem.with_suffix(".json"))
    return rows


def cmd_search(cfg: RunConfig, checkpoint=None, gp=None) -> dict:
    spec, evaluator = build_evaluator(cfg, checkpoint, gp)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    weights = cfg.aim_weights()
    result = search(spec, CachedEvaluator(evaluator), weights, cfg.ea_params())
    _write_records(result.history, result.pareto, spec, out / "search_history")
    pareto_rows = report.rows_for(result.pareto, result.pareto, spec.letters)
    report.write_csv(pareto_rows, out / "search_pareto.csv")
    best = result.best
    summary = {
        **report.record_row(best, spec.letters(best.genome), best in result.pareto),
        "weights": report.weights_dict(weights),
        "evaluated": len(result.history),
        "space_size": spec.space_size,
        "best_per_generation": result.best_per_generation,
    }
    report.write_json(summary, out / "search_best.json")
    return summary


def cmd_enumerate(cfg: RunConfig, checkpoint=None, gp=None) -> dict:
    spec = cfg.supernet()
    cap = cfg.evaluation.enumerate_cap
    if spec.space_size > cap:
        raise SpaceTooLarge(spec.space_size, cap)
    spec, evaluator = build_evaluator(cfg, checkpoint, gp)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    weights = cfg.aim_weights()
    records = []
    for g in spec.all_genomes():
        m = evaluator(g)
        records.append(CandidateRecord(g, m, aim_score(m, weights)))
    front = pareto_front(records)
    _write_records(records, front, spec, out / "enumeration")
    report.write_csv(report.rows_for(front, front, spec.letters), out / "reference_pareto.csv")
    best = min(records, key=lambda r: (-r.aim, r.genome))
    summary = {
        "rows": len(records),
        "front_size": len(front),
        "best": report.record_row(best, spec.letters(best.genome), best in front),
    }
    searched = out / "search_best.json"
    if searched.exists():
        sb = json.loads(searched.read_text())
        m = EvalMetrics(sb["accuracy_pct"], sb["ece_pct"], sb["ape_nats"], sb["latency_ms"])
        summary["search_best_on_reference_front"] = not any(dominates(r.metrics, m) for r in records)
    report.write_json(summary, out / "enumeration_summary.json")
    return summary


def cmd_eval(cfg: RunConfig, letters: str, checkpoint=None, gp=None, quantize=False) -> dict:
    spec, evaluator = build_evaluator(cfg, checkpoint, gp, quantize=quantize)
    genome = spec.parse_letters(letters)
    m = evaluator(genome)
    return {
        "genome": report.genome_str(genome),
        "letters": spec.letters(genome),
        **m.to_dict(),
        "aim": aim_score(m, cfg.aim_weights()),
        "quantized": quantize,
    }


def check_aims(rows, weights) -> float:
    """Largest absolute gap between reported aims and their recomputation."""
    return max(
        (abs(aim_score(report.row_metrics(r), weights) - r["aim"]) for r in rows),
        default=0.0,
    )

