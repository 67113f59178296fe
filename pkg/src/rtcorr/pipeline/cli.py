"""Command-line entry point: ``rtcorr <subcommand> ...``.

Exit codes: 0 success, 2 validation error (bad input or configuration),
3 runtime failure such as a NaN abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..corrnet import MissingPatches
from ..meshkit import InvalidMesh, load_mesh
from .config import ConfigError, load_config
from .evaluate import ModelSource, NNSource, compare, evaluate, load_report
from .folds import TooFewPatients, load_folds, make_folds
from .infer import infer, load_model
from .manifest import ManifestError, load_manifest
from .preprocess import preprocess
from .synth import synth_generate
from .train import NaNAbort, train

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rtcorr", description="Unsupervised organ-mesh correspondence.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic corpus with ground truth")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--shapes", type=int, default=20)
    s.add_argument("--out", required=True)
    s.add_argument("--folds-seed", type=int, default=None,
                   help="also write folds.json using this seed")

    s = sub.add_parser("preprocess", help="masks and CT volumes to a mesh manifest")
    s.add_argument("--masks", required=True)
    s.add_argument("--volumes", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--faces", type=int, default=3000)
    s.add_argument("--faces-small", type=int, default=2000)
    s.add_argument("--taubin-iters", type=int, default=10)
    s.add_argument("--remesh-iters", type=int, default=5)
    s.add_argument("--transforms", default=None, help="directory of <patient>.txt 4x4 rigid transforms")

    s = sub.add_parser("folds", help="write a five-fold split for a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("train", help="train one or all folds")
    s.add_argument("--manifest", required=True)
    s.add_argument("--folds", required=True, help="folds.json (see the 'folds' subcommand)")
    s.add_argument("--fold", type=int, action="append", help="fold index; repeat for several (default all)")
    s.add_argument("--config", default=None, help="YAML training config")
    s.add_argument("--variant", choices=("base", "imgfeat", "imgloss"))
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)

    s = sub.add_parser("infer", help="correspondence and interpolation for one mesh pair")
    s.add_argument("--params", required=True, help="checkpoint with config.json beside it")
    s.add_argument("--source", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--volumes", nargs=2, metavar=("SOURCE_HDR", "TARGET_HDR"))
    s.add_argument("--out", required=True)

    s = sub.add_parser("eval", help="metrics over a fold's test pairs")
    s.add_argument("--manifest", required=True)
    s.add_argument("--folds", default=None, help="folds.json (default: next to the manifest)")
    s.add_argument("--fold", type=int, required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--params")
    g.add_argument("--nn-deformed", help="directory of <organ>_<src>_to_<tgt>.off registered meshes")
    s.add_argument("--split", default="test", choices=("test", "val"))
    s.add_argument("--out", required=True)

    s = sub.add_parser("compare", help="Wilcoxon signed-rank test on landmark errors")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--test", default="wilcoxon", choices=("wilcoxon",))
    return p


def _run(args) -> int:
    if args.command == "synth":
        m = synth_generate(args.seed, args.shapes, args.out)
        if args.folds_seed is not None:
            make_folds(m.patients, args.folds_seed).save(Path(args.out) / "folds.json")
        print(Path(args.out) / "manifest.json")
    elif args.command == "preprocess":
        preprocess(args.masks, args.volumes, args.out, args.faces, args.faces_small,
                   args.taubin_iters, args.remesh_iters, args.transforms)
        print(Path(args.out) / "manifest.json")
    elif args.command == "folds":
        spec = make_folds(load_manifest(args.manifest).patients, args.seed)
        spec.save(args.out)
        if spec.repeated_test:
            print(f"note: patients in two test splits: {', '.join(spec.repeated_test)}")
    elif args.command == "train":
        config = load_config(args.config, {"variant": args.variant, "epochs": args.epochs,
                                           "lr": args.lr, "seed": args.seed})
        manifest = load_manifest(args.manifest, need_volumes=config.needs_patches)
        results = train(manifest, load_folds(args.folds), config, args.out, args.fold)
        for r in results:
            print(r.best_checkpoint)
    elif args.command == "infer":
        params, config = load_model(args.params)
        res = infer(params, load_mesh(args.source), load_mesh(args.target), config, args.out,
                    volumes=args.volumes if config.variant == "imgfeat" else None)
        print(res.files["correspondence"])
    elif args.command == "eval":
        manifest = load_manifest(args.manifest)
        folds_path = args.folds or Path(args.manifest).parent / "folds.json"
        fold = load_folds(folds_path).folds[args.fold]
        if args.params:
            params, config = load_model(args.params)
            source = ModelSource(params, config, name=f"model:{config.variant}")
        else:
            source = NNSource(Path(args.nn_deformed))
        evaluate(manifest, fold, source, args.out, split=args.split)
        print(Path(args.out) / "metrics.csv")
    elif args.command == "compare":
        print(json.dumps(compare(load_report(args.a), load_report(args.b)), indent=1))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return _run(args)
    except NaNAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, ManifestError, TooFewPatients, MissingPatches, InvalidMesh,
            FileNotFoundError, ValueError, KeyError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (RuntimeError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
