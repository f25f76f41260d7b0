"""Command-line entry point: ``iidlab <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
All relative paths are resolved against ``--root`` (default: cwd).  Every
command accepts ``--config FILE`` of ``key = value`` lines; for ``gen`` the
keys are scene parameters, for ``train`` training settings, and for other
commands they supply defaults for the long options (dashes as underscores).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("iidlab")


class UsageError(Exception):
    pass


class NumericFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p, out_help):
    p.add_argument("--root", default=".", help="workspace directory all paths are relative to")
    p.add_argument("--config", help="key = value file with option defaults")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--out", help=out_help)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = _Parser(prog="iidlab", description="Colorful diffuse intrinsic decomposition lab.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="command")

    p = sub.add_parser("gen", help="generate a procedural dataset with ground truth")
    _common(p, "dataset directory (required)")
    p.add_argument("--n", type=int, help="number of scenes (default 100)")
    p.add_argument("--resolution", type=int)
    p.add_argument("--clip-probability", type=float)

    p = sub.add_parser("train", help="train one stage, an ablation variant or the baseline")
    _common(p, "run name under runs/ (default <stage>_s<seed>)")
    p.add_argument("--manifest")
    p.add_argument("--stage")
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--widths", help="comma-separated encoder widths")
    p.add_argument("--upstream", help="'oracle' or stage=checkpoint,...")

    p = sub.add_parser("decompose", help="run the pipeline on an image or a dataset split")
    _common(p, "output directory for component layers (required)")
    p.add_argument("--run", action="append", help="run directory with checkpoints (repeatable)")
    p.add_argument("--mode", choices=("oracle_gray", "net_gray"))
    p.add_argument("--input", help="PNG or IIDF image")
    p.add_argument("--reference-albedo", help="albedo image for oracle_gray mode")
    p.add_argument("--manifest", help="decompose every scene of --split instead of --input")
    p.add_argument("--split")
    p.add_argument("--oracle", action="store_true", help="write ground-truth components instead")

    p = sub.add_parser("eval", help="score predicted albedo against a dataset")
    _common(p, "report directory (required)")
    p.add_argument("--manifest")
    p.add_argument("--components", help="directory of <scene_id>/ component dirs")
    p.add_argument("--split")

    p = sub.add_parser("edit", help="apply an illumination-aware edit to components")
    _common(p, "output image path, .png or .iidf (required)")
    p.add_argument("--components", help="component directory")
    p.add_argument("--op", choices=("despecularize", "whitebalance", "recover_highlights"))
    p.add_argument("--exposure", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--keep-residual", action="store_true", default=None)

    p = sub.add_parser("gradcheck", help="finite-difference check of all ops, losses and a network")
    _common(p, "optional report file")
    p.add_argument("--tol", type=float)

    p = sub.add_parser("ablate", help="train and compare the variants of an ablation table")
    _common(p, "results directory (required)")
    p.add_argument("--table", choices=("chroma", "albedo", "diffuse", "all"))
    p.add_argument("--manifest")
    p.add_argument("--seeds", help="comma-separated seeds (default 0,1,2)")
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--widths")
    return parser


DEFAULTS = {
    "decompose": {"mode": "oracle_gray", "split": "test"},
    "eval": {"split": "test"},
    "edit": {"exposure": 1.0, "tau": 0.02, "keep_residual": False},
    "gradcheck": {"tol": 1e-3, "seed": 0},
    "ablate": {"table": "all", "seeds": "0,1,2", "iterations": 600, "batch_size": 8, "lr": 1e-3},
}


def _apply_config(args, parser_defaults):
    """Fill unset options from the config file, then from built-in defaults."""
    kv = {}
    if args.config and args.command not in ("gen", "train"):
        from .formation import read_kv

        kv = read_kv(Path(args.root) / args.config)
        unknown = [k for k in kv if not hasattr(args, k)]
        if unknown:
            raise UsageError(f"unknown config keys {unknown}")
    for key, value in {**parser_defaults, **kv}.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)
    for key in ("n", "iterations", "batch_size", "seed"):
        if isinstance(getattr(args, key, None), str):
            setattr(args, key, int(getattr(args, key)))
    for key in ("lr", "exposure", "tau", "tol"):
        if isinstance(getattr(args, key, None), str):
            setattr(args, key, float(getattr(args, key)))
    if isinstance(getattr(args, "keep_residual", None), str):
        args.keep_residual = args.keep_residual.lower() in ("1", "true", "yes")


def _require(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if not getattr(args, n, None)]
    if missing:
        raise UsageError(f"{args.command} needs {', '.join(missing)}")


# -- commands --------------------------------------------------------------------


def cmd_gen(args):
    from dataclasses import replace

    from .formation import read_kv
    from .synthgen import SceneParams, gen_dataset

    _require(args, "out")
    kv = read_kv(Path(args.root) / args.config) if args.config else {}
    n = int(kv.pop("n", 100)) if args.n is None else args.n
    try:
        params = SceneParams.from_kv(kv)
        if args.resolution is not None:
            params = replace(params, resolution=args.resolution)
        if args.clip_probability is not None:
            params = replace(params, clip_probability=args.clip_probability)
    except (TypeError, ValueError) as err:
        raise UsageError(str(err)) from err
    if n < 1:
        raise UsageError("--n must be positive")
    manifest = gen_dataset(params, n, Path(args.root) / args.out, args.seed)
    print(manifest)


def cmd_train(args):
    from .pipeline.estimator import NumericalError
    from .pipeline.training import TrainConfig, train_stage

    overrides = {"manifest": args.manifest, "stage": args.stage, "iterations": args.iterations,
                 "batch_size": args.batch_size, "lr": args.lr, "seed": args.seed,
                 "widths": args.widths, "upstream": args.upstream, "name": args.out}
    try:
        if args.config:
            cfg = TrainConfig.from_file(Path(args.root) / args.config, **overrides)
        else:
            cfg = TrainConfig.from_kv({}, **overrides)
    except (TypeError, ValueError, KeyError) as err:
        raise UsageError(str(err)) from err
    try:
        ckpt, est = train_stage(cfg.stage, cfg, root=args.root)
    except NumericalError as err:
        raise NumericFailure(str(err)) from err
    last = est.curve_[-1] if est.curve_ else {}
    print(f"{ckpt} iterations={est.n_iter_} val_mse={last.get('val_mse')}")


def _check_finite(comp, label):
    for role, arr in comp.layers().items():
        if not np.all(np.isfinite(arr)):
            raise NumericFailure(f"{label}: non-finite values in {role}")


def cmd_decompose(args):
    from .apps import load_input_image
    from .formation import save_components
    from .synthgen import load_dataset

    _require(args, "out")
    root = Path(args.root)
    out = root / args.out
    if args.manifest:
        scenes = load_dataset(root / args.manifest, args.split)
        if not scenes:
            raise ValueError(f"no scenes in split {args.split!r}")
        if args.oracle:
            for s in scenes:
                save_components(s.components, out / s.scene_id)
            print(out)
            return
        model = _load_model(args, root)
        for s in scenes:
            comp = model.decompose(s.components.I, s.components.A_d)
            _check_finite(comp, s.scene_id)
            save_components(comp, out / s.scene_id)
        print(out)
        return
    _require(args, "input")
    if args.oracle:
        raise UsageError("--oracle needs --manifest")
    model = _load_model(args, root)
    I = load_input_image(root / args.input)
    ref = load_input_image(root / args.reference_albedo) if args.reference_albedo else None
    if args.mode == "oracle_gray" and ref is None:
        raise UsageError("oracle_gray mode needs --reference-albedo (or use --mode net_gray)")
    comp = model.decompose(I, ref)
    _check_finite(comp, args.input)
    save_components(comp, out)
    print(out)


def _load_model(args, root):
    from .pipeline.decomposer import IntrinsicDecomposer

    _require(args, "run")
    paths = {}
    for run in args.run:
        ckpts = root / run / "checkpoints"
        if not ckpts.is_dir():
            raise FileNotFoundError(f"{ckpts} does not exist")
        for stage in ("gray0", "chroma", "albedo", "diffuse"):
            if (ckpts / f"{stage}.iidc").exists():
                paths[stage] = ckpts / f"{stage}.iidc"
    needed = ["chroma", "albedo", "diffuse"] + (["gray0"] if args.mode == "net_gray" else [])
    missing = [s for s in needed if s not in paths]
    if missing:
        raise FileNotFoundError(f"no checkpoints for stages {missing} in {args.run}")
    return IntrinsicDecomposer.from_checkpoints(paths, gray_mode=args.mode)


def cmd_eval(args):
    from .metrics import evaluate_dataset

    _require(args, "out", "manifest", "components")
    root = Path(args.root)
    report = evaluate_dataset(root / args.manifest, root / args.components, args.split)
    if not report.rows:
        raise ValueError(f"no scenes in split {args.split!r}")
    report.write(root / args.out)
    print(report.summary(), end="")


def cmd_edit(args):
    from .apps import EditRequest, run_edit

    _require(args, "out", "components", "op")
    try:
        req = EditRequest(args.components, args.op, args.out, args.exposure, args.tau,
                          bool(args.keep_residual))
    except ValueError as err:
        raise UsageError(str(err)) from err
    print(run_edit(req, args.root))


def cmd_gradcheck(args):
    from .nn.gradcheck import gradcheck_suite

    results = gradcheck_suite(seed=args.seed, tol=args.tol)
    lines = [f"{'PASS' if err < args.tol else 'FAIL'} {name} {err:.3e}" for name, err in results.items()]
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        path = Path(args.root) / args.out
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    worst = max(results.values())
    if not worst < args.tol:
        raise NumericFailure(f"gradient check failed: max relative error {worst:.3e}")


def cmd_ablate(args):
    from .experiments import run_ablations
    from .pipeline.estimator import NumericalError
    from .synthgen import load_dataset

    _require(args, "out", "manifest")
    root = Path(args.root)
    try:
        seeds = [int(s) for s in str(args.seeds).split(",")]
        widths = tuple(int(v) for v in args.widths.split(",")) if args.widths else None
    except ValueError as err:
        raise UsageError(f"bad --seeds/--widths: {err}") from err
    tables = ["chroma", "albedo", "diffuse"] if args.table == "all" else [args.table]
    manifest = root / args.manifest
    scenes = tuple(load_dataset(manifest, split) for split in ("train", "val", "test"))
    if not scenes[0] or not scenes[2]:
        raise ValueError(f"{manifest}: ablation needs train and test scenes")
    try:
        results = run_ablations(tables, scenes, seeds, iterations=args.iterations,
                                batch_size=args.batch_size, lr=args.lr, widths=widths)
    except NumericalError as err:
        raise NumericFailure(str(err)) from err
    out = root / args.out
    out.mkdir(parents=True, exist_ok=True)
    for table, res in results.items():
        (out / f"ablation_{table}.csv").write_text(res.to_csv())
        for variant, value in res.means().items():
            print(f"{table} {variant} {res.metric}={value:.6f}")


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "decompose": cmd_decompose, "eval": cmd_eval,
            "edit": cmd_edit, "gradcheck": cmd_gradcheck, "ablate": cmd_ablate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a command is required")
        _apply_config(args, DEFAULTS.get(args.command, {}))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"iidlab: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except NumericFailure as err:
        print(f"iidlab: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError) as err:
        print(f"iidlab: data error: {err}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
