"""Command line entry point: ``evk <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import EvkError

log = logging.getLogger("evk")


def _load_json(path: str | None) -> dict:
    return json.loads(Path(path).read_text()) if path else {}


def _emit(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=1, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _seed(args, default: int = 0) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    if args.global_seed is not None:
        return args.global_seed
    return default


def cmd_maskvote(args) -> int:
    from . import maskvote
    from .geom import View
    from .tensorio import read_grid, read_mask_png, write_grid

    domain = read_grid(args.grid)
    views = [View.from_dict(v) for v in json.loads(Path(args.views).read_text())]
    files = sorted(Path(args.masks).glob("*.png"), key=lambda p: int(p.stem))
    masks = [read_mask_png(p) for p in files]
    counts = maskvote.vote(domain, views, masks, jobs=args.jobs)
    mask = maskvote.threshold_mask(counts, maskvote.VoteConfig(args.tau, len(views)))
    write_grid(args.out, mask)
    print(json.dumps({"views": len(views), "min_count": maskvote.VoteConfig(args.tau, len(views)).min_count,
                      "voxels": mask.count}))
    return 0


def cmd_repaint(args) -> int:
    from .repaint import Schedule, parse_denoiser, repaint_run
    from .tensorio import read_grid, read_tensor, write_tensor

    src = read_tensor(args.src).data
    res = repaint_run(parse_denoiser(args.denoiser), src, read_grid(args.mask), Schedule.linear(args.steps),
                      args.condition.encode() if args.condition else None, _seed(args), args.noise)
    write_tensor(args.out, res.latent)
    return 0


def cmd_metrics3d(args) -> int:
    from .geom import load_mesh
    from .metrics3d import eval_3d

    rep = eval_3d(load_mesh(args.pred), load_mesh(args.gt), _seed(args), args.samples).to_dict()
    if args.method:
        rep["method"] = args.method
    _emit(rep, args.out)
    return 0


def cmd_metrics2d(args) -> int:
    from .geom import load_mesh
    from .render2d import eval_2d, parse_embedder

    rep = eval_2d(load_mesh(args.pred), load_mesh(args.gt), parse_embedder(args.embedder),
                  args.views, args.image_size).to_dict()
    if args.method:
        rep["method"] = args.method
    _emit(rep, args.out)
    return 0


def cmd_dedup(args) -> int:
    from .dedup import EmbeddingSet, greedy_prune
    from .tensorio import read_tensor

    ids = json.loads(Path(args.ids).read_text())
    vecs = read_tensor(args.embeddings).data.astype(np.float64)
    kept = greedy_prune(EmbeddingSet.normalized(ids, vecs), args.threshold)
    _emit({"threshold": args.threshold, "input": len(ids), "kept": kept}, args.out)
    return 0


def cmd_assemble(args) -> int:
    from .dedup import assemble_pairs, manifest_bytes

    chars = json.loads(Path(args.characters).read_text())
    poses = json.loads(Path(args.poses).read_text())
    data = manifest_bytes(assemble_pairs(chars, poses, args.k, _seed(args)))
    if args.out:
        Path(args.out).write_bytes(data)
    else:
        sys.stdout.write(data.decode())
    return 0


def cmd_editformer_check(args) -> int:
    from .editformer import ModelConfig, run_check

    raw = _load_json(args.config or args.global_config)
    model_cfg = raw.get("model", {k: v for k, v in raw.items() if k in ModelConfig.__dataclass_fields__})
    overfit = raw.get("overfit", {})
    rep = run_check(ModelConfig(**model_cfg),
                    ModelConfig(**overfit["model"]) if "model" in overfit else None,
                    steps=overfit.get("steps", 200), lr=overfit.get("lr", 1e-2))
    _emit(rep.to_dict(), args.out)
    return 0 if rep.passed else 1


def cmd_pipeline_run(args) -> int:
    from .pipeline import RunConfig, run_pipeline

    cfg = RunConfig.from_dict(_load_json(args.config or args.global_config))
    if args.global_seed is not None:
        cfg = RunConfig.from_dict({**cfg.to_dict(), "seed": args.global_seed})
    res = run_pipeline(cfg, args.root, jobs=args.jobs)
    summary = {"executed": res.executed, "cached": res.cached,
               "kept": len(res.report["kept"]), "discarded": len(res.report["discarded"]),
               "failures": res.report["failures"]}
    print(json.dumps(summary, indent=1, sort_keys=True))
    return 0 if res.failures == 0 else 1


def cmd_robustness(args) -> int:
    from .pipeline import robustness_study
    from .tensorio import read_grid

    _emit(robustness_study(read_grid(args.mask), args.percents), args.out)
    return 0


def cmd_tables(args) -> int:
    from .pipeline import format_table, report_tables

    tables = report_tables(args.reports, args.baseline)
    if args.out:
        Path(args.out).write_text(json.dumps(tables, indent=1, sort_keys=True) + "\n")
    print(format_table(tables))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evk", description="3D edit dataset factory and evaluation tools")
    p.add_argument("--config", dest="global_config", help="JSON config file")
    p.add_argument("--jobs", type=int, default=1, help="worker count")
    p.add_argument("--seed", dest="global_seed", type=int, default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("maskvote", help="lift 2D masks to a 3D voxel mask")
    s.add_argument("--grid", required=True)
    s.add_argument("--views", required=True)
    s.add_argument("--masks", required=True)
    s.add_argument("--tau", type=float, default=0.5)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_maskvote)

    s = sub.add_parser("repaint", help="mask-guided latent repainting")
    s.add_argument("--src", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--steps", type=int, default=25)
    s.add_argument("--seed", type=int)
    s.add_argument("--denoiser", default="zero", help="zero | identity | linear:<file.evk>")
    s.add_argument("--noise", choices=("shared", "fresh"), default="shared")
    s.add_argument("--condition", help="opaque condition string passed to the denoiser")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_repaint)

    s = sub.add_parser("metrics3d", help="Chamfer / normal consistency / F1 between meshes")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--samples", type=int, default=100_000)
    s.add_argument("--method")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_metrics3d)

    s = sub.add_parser("metrics2d", help="PSNR / SSIM / embedding similarity over rendered views")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--views", type=int, default=10)
    s.add_argument("--image-size", type=int, default=128)
    s.add_argument("--embedder", default="proxy", help="proxy | file:<dir>")
    s.add_argument("--method")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_metrics2d)

    s = sub.add_parser("dedup", help="greedy cosine-similarity pruning")
    s.add_argument("--embeddings", required=True)
    s.add_argument("--ids", required=True)
    s.add_argument("--threshold", type=float, default=0.9)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_dedup)

    s = sub.add_parser("assemble", help="character/pose pair manifest")
    s.add_argument("--characters", required=True)
    s.add_argument("--poses", required=True)
    s.add_argument("--k", type=int, default=500)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_assemble)

    s = sub.add_parser("editformer", help="toy editing transformer")
    esub = s.add_subparsers(dest="action", required=True)
    c = esub.add_parser("check", help="gate-zero identity, gradient check and overfit smoke test")
    c.add_argument("--config")
    c.add_argument("--out")
    c.set_defaults(fn=cmd_editformer_check)

    s = sub.add_parser("pipeline", help="dataset factory run")
    psub = s.add_subparsers(dest="action", required=True)
    c = psub.add_parser("run")
    c.add_argument("root")
    c.add_argument("--config")
    c.set_defaults(fn=cmd_pipeline_run)

    s = sub.add_parser("robustness", help="mask dilation study")
    s.add_argument("--mask", required=True)
    s.add_argument("--percents", type=float, nargs="+", default=[9, 18, 27])
    s.add_argument("--out")
    s.set_defaults(fn=cmd_robustness)

    s = sub.add_parser("tables", help="aggregate metric reports")
    s.add_argument("--reports", required=True)
    s.add_argument("--baseline")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_tables)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except EvkError as e:
        print(f"evk: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
