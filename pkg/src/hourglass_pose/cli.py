"""Command-line entry point: ``hgpose <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data, evaluation, training
from .checkpoint import load_model, read_tensors
from .errors import DataError, HourglassError, InvalidConfigError, NumericalError
from .model import ModelConfig, build_model

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("hourglass_pose")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _edges(spec):
    """``start:stop:step`` or a comma-separated list."""
    if ":" in spec:
        a, b, s = (float(v) for v in spec.split(":"))
        return np.round(np.arange(a, b + s / 2, s), 10)
    return np.array([float(v) for v in spec.split(",")])


def _load_config(path):
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise DataError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc


def _configs(args):
    raw = _load_config(getattr(args, "config", None))
    model_cfg = ModelConfig.from_dict(raw.get("model", {}))
    train_cfg = training.TrainConfig.from_dict(raw.get("train", {}))
    pre = raw.get("preprocess", {})
    pre_cfg = data.PreprocessConfig(int(pre.get("rescale_short_side", 256)), int(pre.get("crop", 224)))
    if getattr(args, "variant", None):
        model_cfg.variant = args.variant
    if getattr(args, "beta", None) is not None:
        train_cfg.loss_beta = args.beta
    if getattr(args, "seed", None) is not None:
        train_cfg.seed = args.seed
    model_cfg.validate()
    return model_cfg, train_cfg, pre_cfg


def _scene(scene_dir):
    p = Path(scene_dir)
    if not p.is_dir():
        raise data.LayoutError(f"scene directory {p} does not exist")
    return data.scan_scene(p.parent, p.name), p


def _stats_for(scene_path, split, short_side):
    cache = data.stats_path(scene_path)
    if cache.is_file():
        return data.SceneStats.load(cache)
    stats = data.compute_scene_stats(split.train, short_side)
    stats.save(cache, scene=scene_path.name)
    return stats


def cmd_fixture(args):
    data.generate_fixture_scene(args.out, args.sequences, args.frames, (args.height, args.width), args.seed,
                                max_angle_deg=args.max_angle, translation_extent=args.extent,
                                n_train_sequences=args.train_sequences)
    print(f"wrote fixture scene to {args.out}")


def cmd_stats(args):
    split, path = _scene(args.scene_dir)
    stats = data.compute_scene_stats(split.train, args.short_side)
    out = Path(args.out) if args.out else data.stats_path(path)
    stats.save(out, scene=path.name)
    print(json.dumps({"scene": path.name, "mean": stats.mean, "std": stats.std}))


def cmd_train(args):
    model_cfg, train_cfg, pre = _configs(args)
    split, path = _scene(args.scene_dir)
    stats = _stats_for(path, split, pre.rescale_short_side)
    pretrained = read_tensors(args.pretrained)[1] if args.pretrained else None
    model = build_model(model_cfg, seed=train_cfg.seed, pretrained=pretrained)
    state = training.fit(model, split, stats, train_cfg, pre, run_dir=args.out, resume_epoch=args.resume_epoch)
    last = state.history[-1] if state.history else {}
    print(f"trained {state.epoch} epochs, {state.step} steps; final loss {last.get('loss_total', float('nan')):.6g}")


def cmd_beta_search(args):
    model_cfg, train_cfg, pre = _configs(args)
    split, path = _scene(args.scene_dir)
    stats = _stats_for(path, split, pre.rescale_short_side)
    betas = [float(b) for b in args.betas.split(",")]
    best, reports = training.beta_grid_search(model_cfg, split, stats, betas, args.budget_epochs, train_cfg, pre)
    rows = [{k: r[k] for k in ("beta", "median_t_m", "median_q_deg", "score")} for r in reports.values()]
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["beta", "median_t_m", "median_q_deg", "score", "selected"])
            for r in rows:
                w.writerow([evaluation.fmt(r["beta"]), evaluation.fmt(r["median_t_m"]),
                            evaluation.fmt(r["median_q_deg"]), evaluation.fmt(r["score"]), int(r["beta"] == best)])
    print(f"best beta {best:g}")


def _preprocess_for_checkpoint(args):
    if args.config:
        return _configs(args)[2]
    run_cfg = Path(args.checkpoint).parent / "config.json"
    if run_cfg.is_file():
        pre = json.loads(run_cfg.read_text()).get("preprocess", {})
        return data.PreprocessConfig(int(pre.get("rescale_short_side", 256)), int(pre.get("crop", 224)))
    return data.PreprocessConfig()


def cmd_eval(args):
    pre = _preprocess_for_checkpoint(args)
    split, path = _scene(args.scene_dir)
    stats = _stats_for(path, split, pre.rescale_short_side)
    model = load_model(args.checkpoint)
    errs = evaluation.evaluate(model, split.test, stats, pre, scene=args.scene_name or path.name)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_errors_csv(out / "errors.csv", errs)
    summary = evaluation.summarize([errs])
    evaluation.write_summary_csv(out / "summary.csv", summary)
    s = summary.scenes[errs.scene]
    print(f"{errs.scene}: {s.n_frames} frames, median {s.median_t:.4g} m, {s.median_q:.4g} deg")


def cmd_report(args):
    per_scene = []
    for path in args.errors:
        if not Path(path).is_file():
            raise DataError(f"errors file {path} not found")
        per_scene.extend(evaluation.read_errors_csv(path).values())
    summary = evaluation.write_report(args.out_dir, per_scene, _edges(args.t_edges), _edges(args.q_edges))
    print(f"AVERAGE over {len(summary.scenes)} scenes: {summary.average_t:.4g} m, {summary.average_q:.4g} deg")


def cmd_selftest(args):
    from .selftest import run
    if not run(seed=args.seed):
        raise NumericalError("self-test failed")


def build_parser():
    p = _Parser(prog="hgpose", description="Hourglass camera-pose regression toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    f = sub.add_parser("fixture", help="generate a synthetic scene in 7-Scenes layout")
    f.add_argument("--out", required=True)
    f.add_argument("--sequences", type=int, default=2)
    f.add_argument("--frames", type=int, default=16)
    f.add_argument("--height", type=int, default=64)
    f.add_argument("--width", type=int, default=64)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--max-angle", type=float, default=20.0)
    f.add_argument("--extent", type=float, default=0.5)
    f.add_argument("--train-sequences", type=int, default=None)
    f.set_defaults(func=cmd_fixture)

    s = sub.add_parser("stats", help="compute and cache per-scene normalization statistics")
    s.add_argument("--scene-dir", required=True)
    s.add_argument("--short-side", type=int, default=256)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_stats)

    def common_train(sp):
        sp.add_argument("--scene-dir", required=True)
        sp.add_argument("--config", default=None, help="JSON with 'model', 'train', 'preprocess' sections")
        sp.add_argument("--variant", choices=("concat", "sum"), default=None)
        sp.add_argument("--seed", type=int, default=None)

    t = sub.add_parser("train", help="train a model on one scene")
    common_train(t)
    t.add_argument("--beta", type=float, default=None)
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--pretrained", default=None, help="checkpoint-format file with encoder weights")
    t.add_argument("--resume-epoch", type=int, default=None)
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("beta-search", help="grid search over the loss scale factor")
    common_train(b)
    b.add_argument("--betas", default="1,3,5,10")
    b.add_argument("--budget-epochs", type=int, default=20)
    b.add_argument("--out", default=None, help="CSV report")
    b.set_defaults(func=cmd_beta_search)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a scene's test split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--scene-dir", required=True)
    e.add_argument("--scene-name", default=None)
    e.add_argument("--config", default=None)
    e.add_argument("--out-dir", required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="merge per-scene errors into summary and histogram CSVs")
    r.add_argument("--errors", nargs="+", required=True)
    r.add_argument("--out-dir", required=True)
    r.add_argument("--t-edges", default="0:1:0.05")
    r.add_argument("--q-edges", default="0:40:2")
    r.set_defaults(func=cmd_report)

    st = sub.add_parser("selftest", help="run the built-in property checks")
    st.add_argument("--seed", type=int, default=0)
    st.set_defaults(func=cmd_selftest)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        if not getattr(args, "func", None):
            raise UsageError("hgpose: a subcommand is required (see --help)")
        args.func(args)
        return EXIT_OK
    except (UsageError, InvalidConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except HourglassError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
