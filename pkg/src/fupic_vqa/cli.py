"""``fupic-vqa`` command line.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import dataset_tools, haar, scoring
from .frame_io import (FrameFormatError, ManifestError, load_frame, load_manifest, save_pgm,
                       sample_frame_indices)
from .metrics import UndefinedCorrelation, plcc, srcc
from .model import ModelConfig, NumericalError, load_checkpoint
from .pipeline import FrameLoader, score_frame, score_videos
from .sampler import STRATEGIES, StrategySpec, coverage, coverage_csv, partition
from .trainer import TrainConfig, train

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

STRATEGY_ALIASES = {"grid": "grid_minipatch", "crop": "center_crop"}


def _write(path: str, text: str) -> None:
    Path(path).write_text(text)


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return p


def _require_out_dir(path: str) -> None:
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {parent}")


def cmd_score(args) -> None:
    _require_file(args.manifest, "manifest")
    _require_file(args.checkpoint, "checkpoint")
    _require_out_dir(args.out)
    videos = load_manifest(args.manifest)
    params = load_checkpoint(args.checkpoint)
    scores = score_videos(videos, params, args.interval, workers=args.workers,
                          aggregation=args.aggregation, chunk=args.micro_batch)
    _write(args.out, scoring.video_scores_csv(scores))
    if args.frames_out:
        _write(args.frames_out, scoring.frame_scores_csv(scores))


def cmd_train(args) -> None:
    _require_file(args.manifest, "manifest")
    for out in (args.checkpoint_out, args.history_csv):
        if out:
            _require_out_dir(out)
    videos = load_manifest(args.manifest)
    model = ModelConfig(patch_size=args.patch_size, token_side=args.token_side, dim=args.dim,
                        depth=args.depth, window=args.window, heads=args.heads)
    config = TrainConfig(seed=args.seed, lr=args.lr, epochs=args.epochs,
                         micro_batch=args.micro_batch, units_per_step=args.units_per_step,
                         interval=args.interval, split=args.split, aggregation=args.aggregation,
                         model=model, checkpoint_out=args.checkpoint_out)
    _, history = train(videos, config)
    if args.history_csv:
        _write(args.history_csv, history.to_csv())


def _read_scores(path: str) -> dict[str, float]:
    with open(_require_file(path, "score CSV"), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or len(header) < 2:
            raise ValueError(f"{path}: expected a header with id and value columns")
        return {row[0]: float(row[1]) for row in reader if row}


def cmd_eval(args) -> None:
    pred, mos = _read_scores(args.pred), _read_scores(args.mos)
    ids = [k for k in pred if k in mos]
    if len(ids) < 2:
        raise ValueError("fewer than two video ids shared between the CSV files")
    p, m = [pred[k] for k in ids], [mos[k] for k in ids]
    print(f"srcc={round(srcc(p, m), 6)} plcc={round(plcc(p, m), 6)}")


def cmd_coverage(args) -> None:
    kind = STRATEGY_ALIASES.get(args.strategy, args.strategy)
    spec = StrategySpec(kind, input_side=args.input_side, patch_size=args.patch_size)
    ratio = coverage(spec, args.width, args.height)
    if args.csv:
        _require_out_dir(args.csv)
        _write(args.csv, coverage_csv([(spec, args.width, args.height)]))
    print(f"{ratio:.6g}")


def cmd_haar(args) -> None:
    _require_file(args.frame, "frame")
    out = Path(args.out_dir)
    if not out.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {out}")
    frame = load_frame(args.frame)
    l, r, c = args.size, args.row, args.col
    if l % 2 or r < 0 or c < 0 or r + l > frame.height or c + l > frame.width:
        raise ValueError(f"patch {l} at ({r}, {c}) does not fit an even crop of "
                         f"{frame.width}x{frame.height}")
    maps = haar.haar_forward(frame.data[:, r:r + l, c:c + l])
    for name, comp in zip(("avg", "h1", "h2", "h3"), maps):
        save_pgm(haar.to_gray8(comp, low_pass=name == "avg"), out / f"{args.prefix}_{name}.pgm")


def cmd_indicators(args) -> None:
    _require_file(args.manifest, "manifest")
    _require_out_dir(args.out)
    loader = FrameLoader(cache=False)
    rows = []
    for v in load_manifest(args.manifest):
        frames = [loader.frame(p) for p in v.frame_paths]
        rows.append((v.video_id, dataset_tools.indicators(frames)))
    _write(args.out, dataset_tools.indicators_csv(rows))


def cmd_pc_scale(args) -> None:
    path = _require_file(args.records, "PC records")
    _require_out_dir(args.out)
    records = dataset_tools.read_pc_csv(path.read_text())
    _write(args.out, dataset_tools.mos_csv(dataset_tools.bradley_terry_mos(records)))


def cmd_weights(args) -> None:
    _require_file(args.manifest, "manifest")
    _require_file(args.checkpoint, "checkpoint")
    out = Path(args.out_dir)
    if not out.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {out}")
    params = load_checkpoint(args.checkpoint)
    loader = FrameLoader(cache=False)
    for v in load_manifest(args.manifest):
        for idx in sample_frame_indices(v.total_frames, args.interval):
            ps = partition(loader.frame(v.frame_paths[idx]), params.config.patch_size)
            fs = score_frame(ps, params, "region", args.micro_batch)
            grid = scoring.weight_grid(fs, ps.grid_shape)
            stem = f"{v.video_id}_{idx:05d}"
            _write(str(out / f"{stem}_weights.csv"), scoring.weight_grid_csv(grid))
            save_pgm(scoring.weight_heatmap(grid, args.cell), out / f"{stem}_weights.pgm")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fupic-vqa", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--interval", type=int, default=10, help="frame sampling interval t")
        p.add_argument("--micro-batch", type=int, default=16)

    p = sub.add_parser("score", help="predict video quality Q for every manifest entry")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frames-out")
    p.add_argument("--aggregation", choices=("region", "mean"), default="region")
    common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("train", help="train on a manifest with mos labels")
    p.add_argument("--manifest", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patch-size", type=int, default=64)
    p.add_argument("--token-side", type=int, default=4)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--window", type=int, default=4)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--units-per-step", type=int, default=4)
    p.add_argument("--split", type=float, default=0.8)
    p.add_argument("--aggregation", choices=("region", "mean"), default="region")
    p.add_argument("--checkpoint-out")
    p.add_argument("--history-csv")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="SRCC/PLCC between a prediction CSV and a MOS CSV")
    p.add_argument("--pred", required=True)
    p.add_argument("--mos", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("coverage", help="content-covering ratio of a sampling strategy")
    p.add_argument("--strategy", required=True,
                   choices=sorted(STRATEGIES + tuple(STRATEGY_ALIASES)))
    p.add_argument("--input-side", type=int, default=224)
    p.add_argument("--patch-size", type=int, default=384)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("haar", help="write the four Haar components of one patch as PGM")
    p.add_argument("--frame", required=True)
    p.add_argument("--row", type=int, default=0)
    p.add_argument("--col", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--prefix", default="patch")
    p.set_defaults(func=cmd_haar)

    p = sub.add_parser("indicators", help="per-clip SI/TI/noise/brightness/contrast CSV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_indicators)

    p = sub.add_parser("pc-scale", help="pair-comparison records -> mos CSV")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pc_scale)

    p = sub.add_parser("weights", help="export region weight grids (CSV + PGM) per sampled frame")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--cell", type=int, default=16, help="heatmap pixels per patch")
    common(p)
    p.set_defaults(func=cmd_weights)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (NumericalError, FloatingPointError, UndefinedCorrelation) as exc:
        print(f"fupic-vqa: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, FrameFormatError, ManifestError, ValueError, KeyError) as exc:
        print(f"fupic-vqa: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
