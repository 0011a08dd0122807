"""Resumable dataset-factory run over a directory of per-sample inputs.

Directory contract (``<root>/samples/<id>/``)::

    sample.json        {"id": ..., "prompt": ..., "source_image": ..., "target_image": ...}
    masks/<view>.png   one 2D edit mask per view, view index as the file stem
    views.json         optional camera list; defaults to a ring of n_views cameras
    boxes.json         optional 2D boxes from the localisation model (recorded only)
    grid.evk           optional voting domain; defaults to the full lattice
    latents/src.evk    source latent, (C, R, R, R)
    latents/tgt.evk    initial target prediction, same shape
    embeddings/        optional precomputed image embeddings keyed by image hash

Each sample runs mask voting, repainting and the consistency filter in order.
Outputs land in ``samples/<id>/out/``; a stage whose input fingerprint matches
the recorded one is skipped. Rejected samples get a ``rejected/<id>.json``
record and stay in place. The run report is ``<root>/report.json``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import maskvote, render2d, repaint
from .errors import EmptyMask, EvkError, MissingArtifact, NoReports, StageFailure
from .geom import View, VoxelGrid, ring_views, voxels_to_mesh
from .tensorio import read_grid, read_mask_png, read_tensor, write_grid, write_tensor

log = logging.getLogger(__name__)

STAGES = ("maskvote", "repaint", "consistency")


@dataclass(frozen=True)
class RunConfig:
    tau: float = 0.5
    n_views: int = 70
    dilation_pcts: tuple[float, ...] = (9.0, 18.0, 27.0)
    consistency_threshold: float = 0.85
    consistency_views: int = 4
    image_size: int = 64
    seed: int = 0
    steps: int = 25
    noise: str = "shared"
    embedder_seed: int = 0

    def __post_init__(self):
        maskvote.VoteConfig(self.tau, self.n_views)
        object.__setattr__(self, "dilation_pcts", tuple(float(p) for p in self.dilation_pcts))
        if any(p < 0 for p in self.dilation_pcts):
            raise ValueError("dilation percents must be non-negative")
        if self.steps < 1 or self.consistency_views < 1 or self.image_size < 11:
            raise ValueError("steps, consistency_views must be positive and image_size >= 11")
        if self.noise not in ("shared", "fresh"):
            raise ValueError("noise must be 'shared' or 'fresh'")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilation_pcts"] = list(self.dilation_pcts)
        return d


@dataclass
class SampleManifest:
    id: str
    root: Path
    prompt: str | None = None
    source_image: str | None = None
    target_image: str | None = None

    @classmethod
    def load(cls, root: Path) -> "SampleManifest":
        meta_path = root / "sample.json"
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls(str(meta.get("id", root.name)), root, meta.get("prompt"),
                   meta.get("source_image"), meta.get("target_image"))

    @property
    def out(self) -> Path:
        return self.root / "out"

    def path(self, stage: str, rel: str, required: bool = True) -> Path:
        p = self.root / rel
        if required and not p.exists():
            raise MissingArtifact(self.id, stage, rel)
        return p


# --------------------------------------------------------------------------
# robustness and tables


def robustness_study(mask: VoxelGrid, percents: Sequence[float]) -> list[dict]:
    """Voxel count and IoU against the original for each dilation percent."""
    if mask.count == 0:
        raise EmptyMask("mask has no occupied cells")
    rows = []
    for pct in sorted(float(p) for p in percents):
        grown = maskvote.dilate_mask(mask, pct)
        rows.append({"percent": pct, "voxels": grown.count, "iou": maskvote.mask_iou(grown, mask)})
    return rows


LOWER_BETTER = {"cd_x1000"}
FAMILIES = {"3d": ("cd_x1000", "nc", "f1_at_001"), "2d": ("psnr", "ssim", "embed_i", "dino_i")}


def relative_gain(new: float, base: float, metric: str) -> float:
    if base == 0:
        return 0.0
    if metric in LOWER_BETTER:
        return (base - new) / base
    return (new - base) / base


def report_tables(reports_dir: str | Path, baseline: str | None = None) -> dict:
    """Per-method means of every metric plus average relative improvement per family.

    Each ``*.json`` file holds one report with a ``method`` name and flat metric
    fields (``cd_x1000``, ``nc``, ``f1_at_001``, ``psnr``, ``ssim``, ``embed_i``...).
    """
    files = sorted(Path(reports_dir).glob("*.json"))
    if not files:
        raise NoReports(f"no reports in {reports_dir}")
    by_method: dict[str, list[dict]] = {}
    for f in files:
        rep = json.loads(f.read_text())
        by_method.setdefault(str(rep.get("method", f.stem)), []).append(rep)
    metrics = [m for fam in FAMILIES.values() for m in fam]
    rows = {}
    for method, reps in sorted(by_method.items()):
        row: dict = {"samples": len(reps)}
        for m in metrics:
            vals = [r[m] for r in reps if r.get(m) is not None]
            if vals:
                row[m] = float(np.mean(vals))
        rows[method] = row
    if baseline is None:
        baseline = next(iter(rows))
    if baseline not in rows:
        raise NoReports(f"baseline {baseline!r} has no reports")
    base = rows[baseline]
    for row in rows.values():
        for fam, names in FAMILIES.items():
            gains = [relative_gain(row[m], base[m], m) for m in names if m in row and m in base]
            row[f"impro_{fam}"] = 100.0 * float(np.mean(gains)) if gains else None
    return {"baseline": baseline, "methods": rows}


def format_table(tables: dict) -> str:
    cols = ["samples", "cd_x1000", "nc", "f1_at_001", "impro_3d", "psnr", "ssim", "embed_i", "impro_2d"]
    lines = ["method".ljust(16) + "".join(c.rjust(11) for c in cols)]
    for method, row in tables["methods"].items():
        cells = []
        for c in cols:
            v = row.get(c)
            cells.append("-".rjust(11) if v is None else (f"{v:11d}" if isinstance(v, int) else f"{v:11.3f}"))
        lines.append(method[:16].ljust(16) + "".join(cells))
    return "\n".join(lines)


# --------------------------------------------------------------------------
# stages


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _fingerprint(parts: dict) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).hexdigest()


def _mask_files(sample: SampleManifest) -> list[Path]:
    d = sample.path("maskvote", "masks")
    files = [p for p in d.iterdir() if p.suffix.lower() == ".png"]
    if not files:
        raise MissingArtifact(sample.id, "maskvote", "masks/*.png")
    try:
        return sorted(files, key=lambda p: int(p.stem))
    except ValueError:
        raise StageFailure(sample.id, "maskvote", "mask file names must be view indices") from None


def _load_views(sample: SampleManifest, cfg: RunConfig) -> list[View]:
    p = sample.root / "views.json"
    if p.exists():
        return [View.from_dict(v) for v in json.loads(p.read_text())]
    return ring_views(cfg.n_views)


def _latent(sample: SampleManifest, stage: str, name: str) -> np.ndarray:
    blob = read_tensor(sample.path(stage, f"latents/{name}.evk"))
    if len(blob.dims) != 4 or len(set(blob.dims[1:])) != 1:
        raise StageFailure(sample.id, stage, f"latent {name} has dims {blob.dims}, expected (C, R, R, R)")
    return blob.data


def _stage_maskvote(sample: SampleManifest, cfg: RunConfig) -> tuple[dict, dict]:
    masks = _mask_files(sample)
    src = _latent(sample, "maskvote", "src")
    inputs = {p.name: _sha(p) for p in masks}
    for rel in ("views.json", "grid.evk", "latents/src.evk"):
        if (sample.root / rel).exists():
            inputs[rel] = _sha(sample.root / rel)
    fp = _fingerprint({"inputs": inputs, "tau": cfg.tau, "n_views": cfg.n_views,
                       "pcts": list(cfg.dilation_pcts)})

    def run():
        views = _load_views(sample, cfg)
        if len(masks) != cfg.n_views or len(views) != cfg.n_views:
            raise StageFailure(sample.id, "maskvote",
                               f"{len(masks)} masks and {len(views)} views, config expects {cfg.n_views}")
        res = src.shape[1]
        grid_path = sample.root / "grid.evk"
        domain = read_grid(grid_path) if grid_path.exists() else VoxelGrid.full(res)
        if domain.resolution != res:
            raise StageFailure(sample.id, "maskvote", "grid resolution differs from latent lattice")
        counts = maskvote.vote(domain, views, [read_mask_png(p) for p in masks])
        mask = maskvote.threshold_mask(counts, maskvote.VoteConfig(cfg.tau, cfg.n_views))
        sample.out.mkdir(exist_ok=True)
        write_grid(sample.out / "mask.evk", mask)
        rows = robustness_study(mask, [0.0, *cfg.dilation_pcts]) if mask.count else []
        (sample.out / "robustness.json").write_text(json.dumps(rows, indent=1, sort_keys=True))
        return {"voxels": mask.count}

    return {"fingerprint": fp, "outputs": ["mask.evk", "robustness.json"]}, run


def _stage_repaint(sample: SampleManifest, cfg: RunConfig):
    src_p = sample.path("repaint", "latents/src.evk")
    tgt_p = sample.path("repaint", "latents/tgt.evk")
    mask_p = sample.out / "mask.evk"
    fp = _fingerprint({"src": _sha(src_p), "tgt": _sha(tgt_p), "mask": _sha(mask_p),
                       "steps": cfg.steps, "seed": cfg.seed, "noise": cfg.noise})

    def run():
        src = _latent(sample, "repaint", "src")
        tgt = _latent(sample, "repaint", "tgt")
        if src.shape != tgt.shape:
            raise StageFailure(sample.id, "repaint", "source and target latents differ in shape")
        cond = sample.prompt.encode() if sample.prompt else None
        res = repaint.repaint_run(repaint.LinearDenoiser(tgt), src, read_grid(mask_p),
                                  repaint.Schedule.linear(cfg.steps), cond, cfg.seed, cfg.noise)
        write_tensor(sample.out / "edit.evk", res.latent)
        return {}

    return {"fingerprint": fp, "outputs": ["edit.evk"]}, run


def occupancy(latent: np.ndarray) -> VoxelGrid:
    """Cells whose first latent channel is positive."""
    return VoxelGrid(latent[0] > 0)


def render_latent(latent: np.ndarray, views: Sequence[View]) -> list[np.ndarray]:
    occ = occupancy(latent)
    if occ.count == 0:
        return [np.full((v.height, v.width, 3), 255, dtype=np.uint8) for v in views]
    return render2d.render_views(voxels_to_mesh(occ), views)


def _stage_consistency(sample: SampleManifest, cfg: RunConfig):
    tgt_p = sample.path("consistency", "latents/tgt.evk")
    edit_p = sample.out / "edit.evk"
    emb_dir = sample.root / "embeddings"
    fp = _fingerprint({"tgt": _sha(tgt_p), "edit": _sha(edit_p), "thr": cfg.consistency_threshold,
                       "views": cfg.consistency_views, "size": cfg.image_size,
                       "emb": sorted(p.name for p in emb_dir.glob("*.evk")) if emb_dir.exists() else None,
                       "emb_seed": cfg.embedder_seed})

    def run():
        views = ring_views(cfg.consistency_views, elevation=render2d.EVAL_ELEVATION, image_size=cfg.image_size)
        a = render_latent(read_tensor(edit_p).data, views)
        b = render_latent(read_tensor(tgt_p).data, views)
        emb = render2d.FileEmbedder(emb_dir) if emb_dir.exists() else render2d.ProxyEmbedder(cfg.embedder_seed)
        score = render2d.mean_view_cosine(a, b, emb)
        return {"mean_cosine": round(score, 12), "kept": score >= cfg.consistency_threshold}

    return {"fingerprint": fp, "outputs": []}, run


_STAGE_FNS = {"maskvote": _stage_maskvote, "repaint": _stage_repaint, "consistency": _stage_consistency}


# --------------------------------------------------------------------------
# driver


@dataclass
class SampleOutcome:
    id: str
    status: str  # kept | discarded | failed
    stages: dict = field(default_factory=dict)
    reason: str | None = None
    error: str | None = None
    executed: list[str] = field(default_factory=list)
    cached: list[str] = field(default_factory=list)


def _process(sample: SampleManifest, cfg: RunConfig) -> SampleOutcome:
    status_path = sample.out / "status.json"
    prior = json.loads(status_path.read_text()) if status_path.exists() else {}
    record = {}
    outcome = SampleOutcome(sample.id, "kept")
    for stage in STAGES:
        try:
            meta, run = _STAGE_FNS[stage](sample, cfg)
            old = prior.get(stage)
            if (old and old.get("fingerprint") == meta["fingerprint"]
                    and all((sample.out / o).exists() for o in meta["outputs"])):
                result = old["result"]
                outcome.cached.append(stage)
            else:
                result = run()
                outcome.executed.append(stage)
            record[stage] = {"fingerprint": meta["fingerprint"], "result": result}
            outcome.stages[stage] = result
        except MissingArtifact as e:
            outcome.status, outcome.reason, outcome.error = "failed", "missing_artifact", str(e)
            break
        except StageFailure as e:
            outcome.status, outcome.reason, outcome.error = "failed", "stage_failure", str(e)
            break
        except (EvkError, ValueError, OSError) as e:
            log.debug("sample %s stage %s: %s", sample.id, stage, traceback.format_exc())
            outcome.status, outcome.reason = "failed", "stage_failure"
            outcome.error = str(StageFailure(sample.id, stage, f"{type(e).__name__}: {e}"))
            break
    else:
        if not outcome.stages["consistency"]["kept"]:
            outcome.status, outcome.reason = "discarded", "consistency"
    if outcome.status == "failed":
        record["error"] = outcome.error
    sample.out.mkdir(exist_ok=True)
    text = json.dumps(record, indent=1, sort_keys=True)
    if not status_path.exists() or status_path.read_text() != text:
        status_path.write_text(text)
    return outcome


def discover(root: Path) -> list[SampleManifest]:
    d = root / "samples"
    if not d.is_dir():
        raise MissingArtifact("*", "discover", "samples/")
    samples = [SampleManifest.load(p) for p in sorted(d.iterdir()) if p.is_dir()]
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise ValueError("sample ids are not unique")
    return samples


@dataclass
class RunResult:
    report: dict
    executed: dict[str, list[str]]
    cached: dict[str, list[str]]

    @property
    def failures(self) -> int:
        return len(self.report["failures"])


def _write_if_changed(path: Path, text: str) -> None:
    if not path.exists() or path.read_text() != text:
        path.write_text(text)


def run_pipeline(cfg: RunConfig, root: str | Path, jobs: int = 1) -> RunResult:
    """Process every sample under ``root``; per-sample failures never stop the run."""
    root = Path(root)
    samples = discover(root)
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            outcomes = list(pool.map(lambda s: _process(s, cfg), samples))
    else:
        outcomes = [_process(s, cfg) for s in samples]

    rejected = root / "rejected"
    for o in outcomes:
        if o.status != "kept":
            rejected.mkdir(exist_ok=True)
            rec = {"id": o.id, "status": o.status, "reason": o.reason, "error": o.error,
                   "stages": o.stages}
            _write_if_changed(rejected / f"{o.id}.json", json.dumps(rec, indent=1, sort_keys=True))
        elif (rejected / f"{o.id}.json").exists():
            (rejected / f"{o.id}.json").unlink()

    counts = {s: sum(1 for o in outcomes if s in o.stages) for s in STAGES}
    report = {
        "config": cfg.to_dict(),
        "samples": {o.id: {"status": o.status, "reason": o.reason, "stages": o.stages} for o in outcomes},
        "stage_counts": counts,
        "kept": [o.id for o in outcomes if o.status == "kept"],
        "discarded": [{"id": o.id, "reason": o.reason} for o in outcomes if o.status == "discarded"],
        "failures": [{"id": o.id, "kind": o.reason, "error": o.error} for o in outcomes if o.status == "failed"],
    }
    _write_if_changed(root / "report.json", json.dumps(report, indent=1, sort_keys=True))
    return RunResult(report, {o.id: o.executed for o in outcomes}, {o.id: o.cached for o in outcomes})
