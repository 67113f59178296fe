"""Per-pair training loop with validation checkpointing."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from .. import corrnet, losses
from ..geodesics import GeodesicTable, cached_geodesics, sample_pairs
from ..meshkit import TriMesh, apply_rigid
from ..volumes import PatchSet, extract_patchset, load_volume
from .config import TrainConfig
from .folds import Fold, FoldSpec, pair_id, pair_scheduler
from .manifest import DatasetManifest

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "pair_id", "reg", "arap", "geo", "imaging", "total")


class NaNAbort(RuntimeError):
    """A non-finite loss stopped training; a diagnostic dump was written."""


@dataclass
class Asset:
    mesh: TriMesh
    graph: corrnet.Graph
    geodesics: GeodesicTable
    patches: PatchSet | None = None


class AssetCache:
    """Meshes, graphs, geodesic tables and patch sets, loaded once per run.

    Geodesic tables and patch sets are also cached on disk under
    ``cache_dir`` keyed by content hash, so later runs skip the work.
    """

    def __init__(self, manifest: DatasetManifest, cache_dir=None, need_patches: bool = False):
        self.manifest = manifest
        self.cache_dir = None if cache_dir is None else Path(cache_dir)
        self.need_patches = need_patches
        self._assets: dict[tuple[str, str], Asset] = {}
        self._volumes: dict = {}

    def _patches(self, patient: str, mesh: TriMesh) -> PatchSet:
        vol_path = self.manifest.volume_path(patient)
        if vol_path is None:
            raise corrnet.MissingPatches(f"patient {patient} has no volume")
        disk = None
        if self.cache_dir is not None:
            h = hashlib.sha256(vol_path.read_bytes() + vol_path.with_suffix(".raw").read_bytes()
                               + mesh.content_hash().encode()).hexdigest()[:24]
            disk = self.cache_dir / f"patch_{h}.npy"
            if disk.exists():
                return PatchSet(np.load(disk).astype(np.float64))
        if patient not in self._volumes:
            self._volumes[patient] = load_volume(vol_path)
        transform = self.manifest.transform(patient)
        if transform is not None:
            # meshes live in the reference frame; sample the CT in its own frame
            mesh = apply_rigid(mesh, transform.inverse())
        ps = extract_patchset(self._volumes[patient], mesh)
        data32 = ps.data.astype(np.float32)
        if disk is not None:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            tmp = disk.with_name(disk.name + ".tmp.npy")
            np.save(tmp, data32)
            tmp.replace(disk)
        # rounded like the disk copy so cache hits and misses agree bitwise
        return PatchSet(data32.astype(np.float64))

    def get(self, patient: str, organ: str) -> Asset:
        key = (patient, organ)
        if key not in self._assets:
            mesh = self.manifest.load_mesh(patient, organ)
            asset = Asset(mesh, corrnet.Graph.from_mesh(mesh), cached_geodesics(mesh, self.cache_dir))
            if self.need_patches:
                asset.patches = self._patches(patient, mesh)
            self._assets[key] = asset
        return self._assets[key]


def _step_seed(seed: int, epoch: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, step]).generate_state(1)[0])


def pair_loss(params, x: Asset, y: Asset, config: TrainConfig, pairs_seed: int):
    """Forward one ordered pair and assemble the weighted loss.

    Returns ``(total_tensor, breakdown)``. Works with or without an active tape.
    """
    mc = config.model
    feat_patches = config.variant == "imgfeat"
    out = corrnet.forward_pair_tensors(
        x.mesh, y.mesh, params, mc,
        x.patches if feat_patches else None, y.patches if feat_patches else None,
        x.graph, y.graph,
    )
    n, t = x.mesh.n_vertices, mc.time_steps
    final = ad.add(ad.gather_rows(out.displacements, np.arange((t - 1) * n, t * n)), x.mesh.vertices)
    reg = losses.registration_loss(final, out.pi, y.mesh.vertices)
    arap = losses.arap_loss(x.mesh, out.displacements, t)
    pairs = sample_pairs(n, config.geodesic_pairs, pairs_seed)
    geo = losses.geodesic_loss(out.pi, x.geodesics, y.geodesics, pairs)
    img = None
    if config.variant == "imgloss":
        img = losses.imaging_loss(out.pi, x.patches, y.patches)
    return losses.total_loss(reg, arap, geo, img, config.weights, use_imaging=img is not None)


def _fmt(v: float) -> str:
    return repr(float(v))


@dataclass
class FoldResult:
    params: dict[str, np.ndarray]
    best_params: dict[str, np.ndarray]
    log_path: Path
    best_checkpoint: Path
    val_losses: list[float]
    epoch_means: list[float]


def _write_sidecar(path: Path, config: TrainConfig, extra: dict) -> None:
    path.write_text(json.dumps({"train": config.to_dict(), **extra}, indent=1))


def _dump_nan(out_dir: Path, params, state, epoch: int, pid: str, breakdown) -> None:
    ad.save_checkpoint(out_dir / "nan_dump.ckpt", params, state)
    (out_dir / "nan_dump.json").write_text(json.dumps(
        {"epoch": epoch, "pair_id": pid, "losses": breakdown.__dict__}, indent=1))


def validation_loss(params, cache: AssetCache, fold: Fold, organs, config: TrainConfig, epoch: int) -> float:
    pairs = pair_scheduler(fold, organs, "val")
    if not pairs:
        return float("nan")
    totals = []
    for k, (a, b, organ) in enumerate(pairs):
        total, _ = pair_loss(params, cache.get(a, organ), cache.get(b, organ), config,
                             _step_seed(config.seed + 7919, epoch, k))
        totals.append(total.item())
    return float(np.mean(totals))


def train_fold(manifest: DatasetManifest, fold: Fold, config: TrainConfig, out_dir,
               cache: AssetCache | None = None, fold_index: int = 0) -> FoldResult:
    """Train one fold: epochs x shuffled same-organ pairs, one Adam step per pair.

    Writes ``train_log.csv``, ``best.ckpt`` (lowest validation loss) with a
    ``config.json`` sidecar, and ``last.ckpt`` every ``checkpoint_every``
    epochs into ``out_dir``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cache is None:
        cache = AssetCache(manifest, out / "cache", need_patches=config.needs_patches)
    params = corrnet.init_params(config.model, config.seed)
    state = ad.AdamState(lr=config.lr)
    organs = manifest.organs
    best_val = np.inf
    best_params = {k: v.copy() for k, v in params.items()}
    best_path = out / "best.ckpt"
    val_losses, epoch_means = [], []
    log_path = out / "train_log.csv"
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for epoch in range(config.epochs):
            totals = []
            for step, pair in enumerate(pair_scheduler(fold, organs, "train", config.seed, epoch)):
                a, b, organ = pair
                x, y = cache.get(a, organ), cache.get(b, organ)
                with ad.Tape() as tape:
                    tracked = {k: tape.watch(ad.Tensor(v)) for k, v in params.items()}
                    total, br = pair_loss(tracked, x, y, config, _step_seed(config.seed, epoch, step))
                pid = pair_id(pair)
                if not np.isfinite(br.total):
                    fh.flush()
                    _dump_nan(out, params, state, epoch, pid, br)
                    raise NaNAbort(f"non-finite loss at epoch {epoch}, pair {pid}")
                g = ad.backward(tape, total)
                grads = {k: g.get(t.node, np.zeros_like(params[k])) for k, t in tracked.items()}
                ad.adam_step(params, grads, state)
                writer.writerow([epoch, pid, _fmt(br.reg), _fmt(br.arap), _fmt(br.geo),
                                 _fmt(br.imaging), _fmt(br.total)])
                totals.append(br.total)
            fh.flush()
            epoch_means.append(float(np.mean(totals)))
            val = validation_loss(params, cache, fold, organs, config, epoch)
            val_losses.append(val)
            log.info("fold %d epoch %d train %.4f val %.4f", fold_index, epoch, epoch_means[-1], val)
            if not np.isfinite(val) or val < best_val:
                if np.isfinite(val):
                    best_val = val
                best_params = {k: v.copy() for k, v in params.items()}
                ad.save_checkpoint(best_path, best_params)
                _write_sidecar(out / "config.json", config,
                               {"fold": fold_index, "epoch": epoch, "val_loss": val})
            if (epoch + 1) % config.checkpoint_every == 0 or epoch + 1 == config.epochs:
                ad.save_checkpoint(out / "last.ckpt", params, state)
    return FoldResult(params, best_params, log_path, best_path, val_losses, epoch_means)


def train(manifest: DatasetManifest, folds: FoldSpec, config: TrainConfig, out_dir,
          fold_indices=None) -> list[FoldResult]:
    """Train the selected folds (all by default) into ``out_dir/fold_k``."""
    out = Path(out_dir)
    cache = AssetCache(manifest, out / "cache", need_patches=config.needs_patches)
    indices = range(len(folds.folds)) if fold_indices is None else fold_indices
    return [train_fold(manifest, folds.folds[k], config, out / f"fold_{k}", cache, k) for k in indices]


def read_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def epoch_mean_totals(path) -> list[float]:
    rows = read_log(path)
    by_epoch: dict[int, list[float]] = {}
    for r in rows:
        by_epoch.setdefault(int(r["epoch"]), []).append(float(r["total"]))
    return [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]
