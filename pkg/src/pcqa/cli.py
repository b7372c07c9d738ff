"""Command-line interface: ``pcqa <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(2, f"error: UsageError: {message}\n")


def _scales(text: str) -> tuple:
    try:
        return tuple(int(k) for k in text.split(",") if k.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"scales must be comma-separated integers, got {text!r}") from None


def _range(text: str):
    from .rating import MosRange

    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"range must be 'min,max', got {text!r}") from None
    return MosRange(lo, hi)


def _render_config(args):
    from .projection import RenderConfig

    return RenderConfig(resolution=args.resolution, splat_radius=args.splat_radius, margin=args.margin)


def _add_render_flags(p):
    p.add_argument("--resolution", type=int, default=1024)
    p.add_argument("--splat-radius", type=int, default=2)
    p.add_argument("--margin", type=float, default=0.05)


def cmd_project(args) -> int:
    from .pointcloud import load_ply
    from .projection import render_cube_projections

    pc = load_ply(args.input)
    proj = render_cube_projections(pc, _render_config(args))
    paths = proj.save(args.out, size=args.size)
    for p in paths:
        print(p)
    return 0


def cmd_features(args) -> int:
    from .features import extract_structural_features, feature_names
    from .pointcloud import load_ply

    pc = load_ply(args.input)
    fs = extract_structural_features(pc, args.scales)
    w = csv.writer(sys.stdout, lineterminator="\n")
    if args.header:
        w.writerow(["name", *feature_names(fs.scales)])
    w.writerow([pc.name, *(repr(float(v)) for v in fs.values)])
    return 0


def cmd_export_sft(args) -> int:
    from .lmm import export_sft_dataset
    from .manifest import group_kfold, load_manifest

    manifest = load_manifest(args.manifest)
    folds = group_kfold(manifest, args.folds, args.seed)
    if not 0 <= args.fold < len(folds):
        raise ValueError(f"fold must be in 0..{len(folds) - 1}")
    n = export_sft_dataset(manifest, folds[args.fold], args.out, args.images)
    print(n)
    return 0


def cmd_score(args) -> int:
    from .experiment import SCORE_COLUMNS
    from .lmm import EndpointConfig, mock_score, projection_paths, score_point_cloud

    if args.mock:
        if args.mos is None:
            raise ValueError("--mock needs --mos")
        if args.name is None and args.input is None:
            raise ValueError("--mock needs --name or --input")
        name = args.name or Path(args.input).stem
        ev = mock_score(name, args.mos, args.mos_range, args.seed, args.sigma)
    else:
        if not args.base_url:
            raise ValueError("endpoint scoring needs --base-url (or use --mock)")
        cfg = EndpointConfig(base_url=args.base_url, model=args.model, timeout=args.timeout, retries=args.retries)
        if args.input:
            from .pointcloud import load_ply
            from .projection import LMM_IMAGE_SIZE, render_cube_projections

            pc = load_ply(args.input)
            name = pc.name
            with tempfile.TemporaryDirectory() as tmp:
                paths = render_cube_projections(pc, _render_config(args)).save(tmp, size=LMM_IMAGE_SIZE)
                ev = score_point_cloud(paths, cfg)
        else:
            if not args.images or not args.name:
                raise ValueError("give --input, or --images with --name")
            name = args.name
            ev = score_point_cloud(projection_paths(args.images, name), cfg)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["name", *SCORE_COLUMNS])
    w.writerow([name, *(repr(float(p)) for p in ev.probs)])
    return 0


def _training_matrix(args):
    from .experiment import read_scores_csv, stack_features
    from .features import read_feature_csv

    structural = read_feature_csv(args.features) if args.features else {}
    scores = read_scores_csv(args.scores) if args.scores else {}
    if structural and scores:
        streams = "fused"
        names = [n for n in structural if n in scores]
    elif scores:
        streams, names = "lmm", list(scores)
    elif structural:
        streams, names = "structural", list(structural)
    else:
        raise ValueError("need --features and/or --scores")
    return names, stack_features(names, scores, structural, streams)


def cmd_train(args) -> int:
    from .manifest import load_manifest
    from .svr import SvrHyper, grid_search, save_model, train_svr

    manifest = load_manifest(args.manifest).by_name()
    names, X = _training_matrix(args)
    names_known = [n for n in names if n in manifest]
    if len(names_known) != len(names):
        missing = sorted(set(names) - set(names_known))
        raise ValueError(f"{len(missing)} cloud(s) not in manifest, e.g. {missing[0]}")
    y = np.array([manifest[n].mos for n in names])
    hyper = SvrHyper(C=args.C, epsilon=args.epsilon, gamma=args.gamma, tol=args.tol)
    if args.grid_search:
        hyper = grid_search(X, y, groups=[manifest[n].group_id for n in names], base=hyper)
    model = train_svr(X, y, hyper)
    save_model(model, args.out)
    print(json.dumps({"samples": len(names), "support_vectors": int(model.dual_coeffs.size),
                      "C": model.hyper.C, "gamma": model.gamma}))
    return 0


def cmd_predict(args) -> int:
    from .svr import load_model, predict

    model = load_model(args.model)
    names, X = _training_matrix(args)
    pred = predict(model, X)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["name", "pred"])
    for n, p in zip(names, pred):
        w.writerow([n, repr(float(p))])
    return 0


def cmd_evaluate(args) -> int:
    from .experiment import ExperimentConfig, run_experiment

    cfg = ExperimentConfig.from_toml(args.config)
    if args.output_dir:
        from dataclasses import replace

        cfg = replace(cfg, output_dir=Path(args.output_dir))
    res = run_experiment(cfg)
    for i, r in enumerate(res.fold_reports):
        print(f"fold {i}: srcc={r.srcc:.4f} plcc={r.plcc:.4f} krcc={r.krcc:.4f} rmse={r.rmse:.4f} n={r.n}")
    m = res.mean
    print(f"mean:   srcc={m.srcc:.4f} plcc={m.plcc:.4f} krcc={m.krcc:.4f} rmse={m.rmse:.4f}")
    print(f"outputs: {res.output_dir}")
    return 0


def _read_two_column(path) -> dict[str, float]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path}: empty file")
    # skip a header row when its second cell is not numeric
    try:
        float(rows[0][-1])
    except ValueError:
        rows = rows[1:]
    if any(len(r) != 2 for r in rows):
        raise ValueError(f"{path}: expected two columns (name, value)")
    return {r[0]: float(r[1]) for r in rows}


def cmd_metrics(args) -> int:
    from .metrics import evaluate

    pred = _read_two_column(args.pred)
    mos = _read_two_column(args.mos)
    names = [n for n in pred if n in mos]
    if len(names) != len(pred) or len(names) != len(mos):
        raise ValueError("prediction and MOS files must cover the same names")
    r = evaluate([pred[n] for n in names], [mos[n] for n in names], logistic=args.logistic)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["srcc", "plcc", "krcc", "rmse", "n", "logistic"])
    w.writerow([repr(r.srcc), repr(r.plcc), repr(r.krcc), repr(r.rmse), r.n, int(r.logistic_applied)])
    return 0


def cmd_synth(args) -> int:
    from .synthetic import generate_benchmark

    path = generate_benchmark(args.out, args.shapes, args.levels, args.points, args.seed)
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pcqa", description="No-reference point cloud quality assessment")
    parser.add_argument("--version", action="version", version=f"pcqa {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("project", help="render the six cube-face projections to PNG")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=None, help="pad and resize faces to SIZE x SIZE")
    _add_render_flags(p)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("features", help="print the structural feature row of a cloud")
    p.add_argument("--input", required=True)
    p.add_argument("--scales", type=_scales, default=(10, 20))
    p.add_argument("--header", action="store_true")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("export-sft", help="write the fine-tuning JSONL for one fold")
    p.add_argument("--manifest", required=True)
    p.add_argument("--fold", type=int, required=True)
    p.add_argument("--folds", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", required=True, help="directory of 448x448 <cloud>_face<k>.png files")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_sft)

    p = sub.add_parser("score", help="rating probabilities of one cloud")
    p.add_argument("--input", help="PLY file (rendered on the fly)")
    p.add_argument("--images", help="directory holding <name>_face<k>.png")
    p.add_argument("--name")
    p.add_argument("--base-url")
    p.add_argument("--model", default="default")
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--retries", type=int, default=3)
    p.add_argument("--mock", action="store_true")
    p.add_argument("--mos", type=float)
    p.add_argument("--mos-range", type=_range, default="0,100")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.0)
    _add_render_flags(p)
    p.set_defaults(func=cmd_score)

    for name, func, help_ in (("train", cmd_train, "fit the SVR on feature/score CSVs"),
                              ("predict", cmd_predict, "apply a saved SVR model")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--features")
        p.add_argument("--scores")
        if name == "train":
            p.add_argument("--manifest", required=True)
            p.add_argument("--out", required=True)
            p.add_argument("--C", type=float, default=100.0)
            p.add_argument("--epsilon", type=float, default=0.1)
            p.add_argument("--gamma", type=float, default=None)
            p.add_argument("--tol", type=float, default=1e-3)
            p.add_argument("--grid-search", action="store_true")
        else:
            p.add_argument("--model", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="run the full k-fold experiment from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("metrics", help="SRCC/PLCC/KRCC/RMSE between two (name, value) CSVs")
    p.add_argument("--pred", required=True)
    p.add_argument("--mos", required=True)
    p.add_argument("--logistic", action="store_true")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("synth", help="generate the synthetic noise benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--shapes", type=int, default=10)
    p.add_argument("--levels", type=int, default=5)
    p.add_argument("--points", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one machine-parseable line per failure
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
