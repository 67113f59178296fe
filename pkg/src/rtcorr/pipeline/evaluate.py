"""Run the metric suite over a fold's evaluation pairs and compare sources."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import corrnet, metrics
from ..geodesics import sample_pairs
from ..meshkit import TriMesh, load_mesh, save_mesh
from .config import TrainConfig
from .folds import Fold, pair_id, pair_scheduler
from .manifest import DatasetManifest
from .train import AssetCache

EVAL_GEODESIC_PAIRS = 1000
CURVE_METRICS = ("geodesic_error", "chamfer", "conformal_distortion")


@dataclass
class ModelSource:
    params: dict[str, np.ndarray]
    config: TrainConfig
    name: str = "model"


@dataclass
class NNSource:
    """Source meshes already registered to their targets by an external tool.

    ``directory`` holds ``<organ>_<source>_to_<target>.off`` for every
    ordered evaluation pair.
    """

    directory: Path
    name: str = "nn-baseline"

    def deformed(self, pair) -> TriMesh:
        a, b, organ = pair
        return load_mesh(Path(self.directory) / f"{organ}_{a}_to_{b}.off")


def write_rigid_deformed(manifest: DatasetManifest, fold: Fold, out_dir, split: str = "test") -> Path:
    """Stand-in registration for synthetic data: translate each source onto the
    target's centroid and save it in the :class:`NNSource` layout."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for a, b, organ in pair_scheduler(fold, manifest.organs, "eval", split=split):
        x, y = manifest.load_mesh(a, organ), manifest.load_mesh(b, organ)
        moved = x.with_vertices(x.vertices + (y.vertices.mean(axis=0) - x.vertices.mean(axis=0)))
        save_mesh(moved, out / f"{organ}_{a}_to_{b}.off")
    return out


def true_targets(manifest: DatasetManifest, a: str, b: str, organ: str) -> np.ndarray | None:
    """Ground-truth target vertex of every source vertex (synthetic data only)."""
    if manifest.ground_truth_path(a, organ) is None or manifest.ground_truth_path(b, organ) is None:
        return None
    ga, gb = manifest.load_ground_truth(a, organ), manifest.load_ground_truth(b, organ)
    inv = np.full(max(ga.max(), gb.max()) + 1, -1, dtype=np.int64)
    inv[gb] = np.arange(len(gb))
    out = inv[ga]
    return out if np.all(out >= 0) else None


def _pair_seed(pid: str) -> int:
    return int(hashlib.sha256(pid.encode()).hexdigest()[:8], 16)


def evaluate(manifest: DatasetManifest, fold: Fold, source, out_dir=None, split: str = "test",
             cache: AssetCache | None = None) -> metrics.MetricReport:
    """All metrics for every ordered evaluation pair of the fold.

    Landmarks are carried from target to source, so the map used for pair
    ``a -> b`` is the one predicted for the reversed pair ``b -> a``.
    """
    is_model = isinstance(source, ModelSource)
    if cache is None:
        need = is_model and source.config.variant == "imgfeat"
        cache = AssetCache(manifest, None, need_patches=need)
    pairs = pair_scheduler(fold, manifest.organs, "eval", split=split)
    report = metrics.MetricReport(source.name)
    hard: dict[tuple, np.ndarray] = {}
    final: dict[tuple, np.ndarray] = {}
    seqs: dict[tuple, corrnet.InterpolationSequence] = {}
    for pair in pairs:
        a, b, organ = pair
        x, y = cache.get(a, organ), cache.get(b, organ)
        if is_model:
            feat = source.config.variant == "imgfeat"
            pi, seq = corrnet.forward_pair(x.mesh, y.mesh, source.params, source.config.model,
                                           x.patches if feat else None, y.patches if feat else None)
            hard[pair] = corrnet.hard_correspondence(pi.pi)
            final[pair] = seq.final_frame
            seqs[pair] = seq
        else:
            deformed = source.deformed(pair)
            hard[pair] = metrics.nn_baseline(deformed, y.mesh)
            final[pair] = deformed.vertices
    landmarks = {p: manifest.load_landmarks(p) for p in set(a for a, _, _ in pairs) | set(b for _, b, _ in pairs)}
    for pair in pairs:
        a, b, organ = pair
        pid = pair_id(pair)
        x, y = cache.get(a, organ), cache.get(b, organ)
        report.organs[pid] = organ
        samples = sample_pairs(x.mesh.n_vertices, EVAL_GEODESIC_PAIRS, _pair_seed(pid))
        report.geodesic_errors[pid] = metrics.geodesic_error(hard[pair], x.mesh, y.mesh, x.geodesics,
                                                             y.geodesics, samples)
        report.chamfer[pid] = metrics.chamfer(final[pair], y.mesh)
        if pair in seqs:
            report.distortion[pid] = metrics.conformal_distortion(x.mesh, seqs[pair])
        truth = true_targets(manifest, a, b, organ)
        if truth is not None:
            report.gt_errors[pid] = y.geodesics.d[hard[pair], truth]
        back = hard.get((b, a, organ))
        if back is not None:
            src_lm, tgt_lm = landmarks[a].for_organ(organ), landmarks[b].for_organ(organ)
            for name in sorted(set(src_lm) & set(tgt_lm)):
                report.landmark_errors[f"{pid}|{name}"] = metrics.landmark_error(
                    tgt_lm[name], src_lm[name], y.mesh, x.mesh, back)
    report.check()
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def _stats(values) -> list[tuple[str, float]]:
    v = np.asarray(values, dtype=np.float64)
    q1, q3 = np.percentile(v, [25, 75])
    return [("median", float(np.median(v))), ("mean", float(v.mean())), ("IQR", float(q3 - q1))]


def write_report(report: metrics.MetricReport, out_dir) -> dict[str, Path]:
    """``report.json`` (raw values), ``metrics.csv`` and ``curves.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / "report.json", "metrics": out / "metrics.csv", "curves": out / "curves.csv"}
    paths["report"].write_text(json.dumps(report.to_json()))
    with open(paths["metrics"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pair_id", "organ", "metric", "statistic", "value"])
        for pid, organ in report.organs.items():
            for metric, table in (("geodesic_error", report.geodesic_errors),
                                  ("conformal_distortion", report.distortion),
                                  ("gt_error", report.gt_errors)):
                if pid in table:
                    for stat, value in _stats(table[pid]):
                        w.writerow([pid, organ, metric, stat, repr(value)])
            w.writerow([pid, organ, "chamfer", "mean", repr(report.chamfer[pid])])
        for key, value in report.landmark_errors.items():
            pid, name = key.split("|")
            w.writerow([pid, report.organs[pid], f"landmark:{name}", "value", repr(value)])
    pooled = {
        "geodesic_error": list(report.geodesic_errors.values()),
        "chamfer": [np.array(list(report.chamfer.values()))],
        "conformal_distortion": list(report.distortion.values()),
    }
    with open(paths["curves"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "threshold", "fraction"])
        for metric in CURVE_METRICS:
            if not pooled[metric] or sum(len(v) for v in pooled[metric]) == 0:
                continue
            for t, f in metrics.cumulative_curve(np.concatenate(pooled[metric])):
                w.writerow([metric, repr(float(t)), repr(float(f))])
    return paths


def load_report(path) -> metrics.MetricReport:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return metrics.MetricReport.from_json(json.loads(path.read_text()))


def compare(report_a: metrics.MetricReport, report_b: metrics.MetricReport) -> dict:
    """Wilcoxon signed-rank test on landmark errors present in both reports."""
    keys = sorted(set(report_a.landmark_errors) & set(report_b.landmark_errors))
    a = np.array([report_a.landmark_errors[k] for k in keys])
    b = np.array([report_b.landmark_errors[k] for k in keys])
    result = {"a": report_a.source, "b": report_b.source, "n_pairs": len(keys),
              "median_a": float(np.median(a)) if keys else None,
              "median_b": float(np.median(b)) if keys else None}
    try:
        w = metrics.wilcoxon_signed_rank(a, b)
    except metrics.TooFewSamples as exc:
        result.update(p_value=None, marker="", verdict="no difference", detail=str(exc))
        return result
    result.update(statistic=w.statistic, p_value=w.p_value, method=w.method,
                  marker=metrics.significance_marker(w.p_value),
                  verdict="significant" if w.p_value < 0.05 else "not significant")
    return result
