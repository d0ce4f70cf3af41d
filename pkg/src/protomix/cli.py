"""Command-line pipeline: scene synthesis and conversion, episodic training,
evaluation with metrics reports, and classification-map rendering.

One binary with subcommands; every command is deterministic given its full
flag set. Exit codes: 0 success, 1 usage/config error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .container import convert_npy, load_cube, save_cube
from .data import SplitSpec, augment_target, extract_all_patches, split_few_shot, synth_dataset
from .episodes import EpisodeConfig
from .errors import ConfigError, DataError, NumericError, ShapeError
from .evaluation import (
    default_palette,
    evaluate,
    format_multi_seed_report,
    format_report,
    knn_predict,
    prediction_grid,
    render_map,
)
from .model import TransformerConfig, embed_patches
from .training import (
    TrainConfig,
    load_params,
    load_train_state,
    run_schedule,
    save_train_state,
)

# Every key accepted in a --config file, with its parser and built-in default.
# None defaults mean "no value unless given"; unresolvable required values
# are reported by the command that needs them.
_CONFIG_SPEC = {
    "d_model": (int, 100),
    "n_heads": (int, 8),
    "d_head": (int, 64),
    "d_feed": (int, 1024),
    "n_encoders": (int, 2),
    "patch_size": (int, 9),
    "lr": (float, 1e-3),
    "iterations": (int, 3000),
    "source_iterations": (int, 1000),
    "mode": (str, None),
    "mix": (str, "transmix"),
    "seed": (int, 0),
    "shots": (int, 5),
    "augment_to": (int, 200),
    "n_way": (int, None),
    "k_shot": (int, 5),
    "m_query": (int, 15),
    "k": (int, 5),
    "seeds": (str, None),
    "source": (str, None),
    "target": (str, None),
    "checkpoint": (str, None),
    "out": (str, None),
    "map": (str, None),
    "report": (str, None),
    "log": (str, None),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _load_config_file(path):
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_SPEC:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        parse, _ = _CONFIG_SPEC[key]
        try:
            values[key] = parse(value.strip())
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def _resolve(args, keys):
    """Merge flag > config file > built-in default for the listed keys."""
    config = _load_config_file(args.config) if getattr(args, "config", None) else {}
    defaulted = []
    for key in keys:
        if getattr(args, key, None) is not None:
            continue
        if key in config:
            setattr(args, key, config[key])
        else:
            _, default = _CONFIG_SPEC[key]
            setattr(args, key, default)
            if default is not None:
                defaulted.append(key)
    unknown = set(config) - set(keys)
    if unknown:
        raise ConfigError(f"config keys not used by this command: {sorted(unknown)}")
    if getattr(args, "config", None) and defaulted:
        print(f"note: using defaults for: {', '.join(sorted(defaulted))}")


def _parse_pair(text, what):
    parts = text.lower().split("x")
    try:
        if len(parts) == 1:
            value = int(parts[0])
            return value, value
        if len(parts) == 2:
            return int(parts[0]), int(parts[1])
    except ValueError:
        pass
    raise ConfigError(f"bad {what} {text!r}, expected N or NxM")


def _parse_seeds(text):
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, _, hi = part.partition("..")
            try:
                seeds.extend(range(int(lo), int(hi) + 1))
            except ValueError as exc:
                raise ConfigError(f"bad seed range {part!r}") from exc
        elif part:
            try:
                seeds.append(int(part))
            except ValueError as exc:
                raise ConfigError(f"bad seed {part!r}") from exc
    if not seeds:
        raise ConfigError(f"empty seed list {text!r}")
    return seeds


def _require(args, key, flag):
    value = getattr(args, key, None)
    if value is None:
        raise ConfigError(f"missing required {flag}")
    return value


# ---------------------------------------------------------------------------
# pipeline helpers shared by train / eval / map


def _target_pools(args, seed):
    """Load the target scene, extract patches, split, and augment."""
    cube, labels = load_cube(args.target)
    samples = extract_all_patches(cube, labels, args.patch_size)
    if not samples:
        raise DataError(f"{args.target}: no labeled pixels")
    spec = SplitSpec(shots_per_class=args.shots, augment_to=args.augment_to, seed=seed)
    labeled, test = split_few_shot(samples, spec)
    reference = augment_target(labeled, spec, seed=seed)
    class_ids = sorted({s.label for s in samples})
    return cube, labels, labeled, test, reference, class_ids


def _source_pool(args):
    if not getattr(args, "source", None):
        return None
    cube, labels = load_cube(args.source)
    return extract_all_patches(cube, labels, args.patch_size)


def _resolve_mode(args):
    mode = args.mode
    if mode is None:
        mode = "apnt" if getattr(args, "source", None) else "apnt*"
    mode = {"apnt-star": "apnt*"}.get(mode.lower(), mode.lower())
    if mode == "apnt" and args.source_iterations > 0 and not getattr(args, "source", None):
        raise ConfigError("apnt mode needs --source for its pre-training phase")
    return mode


def _train_once(args, seed, reference, source, n_classes, log_stream=None, state=None):
    model_cfg = TransformerConfig(
        d_model=args.d_model, n_heads=args.n_heads, d_head=args.d_head,
        d_feed=args.d_feed, n_encoders=args.n_encoders, patch_size=args.patch_size,
    )
    mode = _resolve_mode(args)
    train_cfg = TrainConfig(
        lr=args.lr, total_iterations=args.iterations,
        source_iterations=args.source_iterations if mode == "apnt" else 0,
        mode=mode, mix_mode=args.mix, seed=seed,
    )
    episode_cfg = EpisodeConfig(
        n_way=args.n_way if args.n_way is not None else n_classes,
        k_shot=args.k_shot, m_query=args.m_query, seed=seed,
    )
    return run_schedule(source, reference, model_cfg, train_cfg, episode_cfg,
                        state=state, log_stream=log_stream)


def _check_bands(params, cube, path):
    expected = params.d_in("target")
    if cube.bands != expected:
        raise DataError(
            f"{path} has {cube.bands} bands but the checkpoint's target mapping "
            f"expects {expected}"
        )


def _render_full_map(params, reference, test, labeled, labels, out_path, k):
    """Predict every labeled pixel (test and labeled alike) and write a P6 map."""
    ref_features = embed_patches([s.pixels for s in reference], "target", params)
    ref_labels = np.array([s.label for s in reference])
    everything = list(test) + list(labeled)
    features = embed_patches([s.pixels for s in everything], "target", params)
    predictions = knn_predict(features, ref_features, ref_labels, k)
    grid = prediction_grid([s.center for s in everything], predictions,
                           (labels.height, labels.width))
    palette = default_palette(int(max(labels.class_ids(), default=0)))
    Path(out_path).write_bytes(render_map(grid, palette))


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    _resolve(args, ["seed", "out"])
    out = _require(args, "out", "--out")
    rows, cols = _parse_pair(args.grid, "grid")
    width, height = _parse_pair(args.size, "size")
    cube, labels = synth_dataset(
        n_classes=args.classes, bands=args.bands, region_grid=(rows, cols),
        noise_sigma=args.noise, seed=args.seed, width=width, height=height,
    )
    save_cube(out, cube, labels)
    print(
        f"wrote {out}: {cube.width}x{cube.height}x{cube.bands}, "
        f"{args.classes} classes over a {rows}x{cols} region grid, "
        f"noise sigma {args.noise}, seed {args.seed}"
    )
    return 0


def cmd_convert(args):
    cube, labels = convert_npy(args.data, args.labels, args.out)
    print(f"wrote {args.out}: {cube.width}x{cube.height}x{cube.bands}, "
          f"{len(labels.class_ids())} classes")
    return 0


_TRAIN_KEYS = [
    "d_model", "n_heads", "d_head", "d_feed", "n_encoders", "patch_size",
    "lr", "iterations", "source_iterations", "mode", "mix", "seed",
    "shots", "augment_to", "n_way", "k_shot", "m_query",
    "source", "target", "out", "log",
]


def cmd_train(args):
    _resolve(args, _TRAIN_KEYS)
    _require(args, "target", "--target")
    out = _require(args, "out", "--out")
    _, _, _, _, reference, class_ids = _target_pools(args, args.seed)
    source = _source_pool(args)
    state = None
    if getattr(args, "resume", None):
        state = load_train_state(args.resume)
        if state.params.cfg.patch_size != args.patch_size:
            raise ConfigError(
                f"--resume checkpoint was trained with patch_size "
                f"{state.params.cfg.patch_size}, flags say {args.patch_size}"
            )
    log_stream = open(args.log, "w") if args.log else None
    try:
        state, log = _train_once(args, args.seed, reference, source,
                                 len(class_ids), log_stream, state)
    finally:
        if log_stream is not None:
            log_stream.close()
    save_train_state(out, state)
    final = log[-1].loss if log else float("nan")
    print(f"trained {state.iteration} iterations, final loss {final:.6f}, wrote {out}")
    return 0


_EVAL_KEYS = _TRAIN_KEYS + ["checkpoint", "k", "seeds", "map", "report"]


def _write_report(text, report_path):
    if report_path:
        Path(report_path).write_text(text)
        print(f"wrote {report_path}")
    else:
        sys.stdout.write(text)


def cmd_eval(args):
    _resolve(args, _EVAL_KEYS)
    _require(args, "target", "--target")

    if args.seeds:
        seeds = _parse_seeds(args.seeds)
        results = {}
        for seed in seeds:
            _, labels, labeled, test, reference, class_ids = _target_pools(args, seed)
            source = _source_pool(args)
            state, _ = _train_once(args, seed, reference, source, len(class_ids))
            results[seed] = evaluate(state.params, test, reference, k=args.k,
                                     class_ids=class_ids)
        _write_report(format_multi_seed_report(results), args.report)
        return 0

    checkpoint = _require(args, "checkpoint", "--checkpoint")
    params = load_params(checkpoint)
    args.patch_size = params.cfg.patch_size
    cube, labels, labeled, test, reference, class_ids = _target_pools(args, args.seed)
    _check_bands(params, cube, args.target)
    result = evaluate(params, test, reference, k=args.k, class_ids=class_ids)
    _write_report(format_report(result), args.report)
    if args.map:
        _render_full_map(params, reference, test, labeled, labels, args.map, args.k)
        print(f"wrote {args.map}")
    return 0


_MAP_KEYS = ["patch_size", "seed", "shots", "augment_to", "k", "checkpoint", "target", "out"]


def cmd_map(args):
    _resolve(args, _MAP_KEYS)
    _require(args, "target", "--target")
    checkpoint = _require(args, "checkpoint", "--checkpoint")
    out = _require(args, "out", "--out")
    params = load_params(checkpoint)
    args.patch_size = params.cfg.patch_size
    cube, labels, labeled, test, reference, _ = _target_pools(args, args.seed)
    _check_bands(params, cube, args.target)
    _render_full_map(params, reference, test, labeled, labels, out, args.k)
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def _add_model_flags(p):
    p.add_argument("--d-model", dest="d_model", type=int)
    p.add_argument("--n-heads", dest="n_heads", type=int)
    p.add_argument("--d-head", dest="d_head", type=int)
    p.add_argument("--d-feed", dest="d_feed", type=int)
    p.add_argument("--encoders", dest="n_encoders", type=int)
    p.add_argument("--patch-size", dest="patch_size", type=int)


def _add_train_flags(p):
    _add_model_flags(p)
    p.add_argument("--source", help="source-domain container for pre-training")
    p.add_argument("--mode", choices=["apnt", "apnt*", "apnt-star"],
                   help="apnt = source pre-training + target fine-tuning; apnt* = target only")
    p.add_argument("--mix", choices=["transmix", "cutmix", "none"],
                   help="label-weighting mode for mixed queries")
    p.add_argument("--iterations", type=int)
    p.add_argument("--source-iterations", dest="source_iterations", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--shots", type=int, help="labeled samples kept per class")
    p.add_argument("--augment-to", dest="augment_to", type=int)
    p.add_argument("--n-way", dest="n_way", type=int)
    p.add_argument("--k-shot", dest="k_shot", type=int)
    p.add_argument("--m-query", dest="m_query", type=int)


def build_parser():
    parser = _Parser(prog="protomix",
                     description="Few-shot hyperspectral patch classification engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled scene")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--bands", type=int, default=16)
    p.add_argument("--grid", default="2x2", help="region grid as RxC")
    p.add_argument("--size", default="40", help="image size as N or WxH")
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("convert", help="convert .npy cube + labels to the container format")
    p.add_argument("--data", required=True, help="(height, width, bands) .npy array")
    p.add_argument("--labels", required=True, help="(height, width) .npy label grid")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("train", help="train on a target scene (optionally with source pre-training)")
    _add_train_flags(p)
    p.add_argument("--target")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="checkpoint path to write")
    p.add_argument("--log", help="per-iteration training log path")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, or loop split/train/eval over --seeds")
    _add_train_flags(p)
    p.add_argument("--target")
    p.add_argument("--checkpoint")
    p.add_argument("--k", type=int, help="KNN neighbor count")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", help="seed list (e.g. 0..9 or 0,3,7) for full split/train/eval runs")
    p.add_argument("--map", help="write a classification map (binary PPM) here")
    p.add_argument("--report", help="write the metrics report here instead of stdout")
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("map", help="render the predicted classification map")
    p.add_argument("--target")
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--shots", type=int)
    p.add_argument("--augment-to", dest="augment_to", type=int)
    p.add_argument("--patch-size", dest="patch_size", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_map)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ShapeError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
