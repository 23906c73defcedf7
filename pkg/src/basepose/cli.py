"""Operator-facing command line.

Subcommands cover the whole pipeline: gen-scenes, collect, augment, train,
eval, infer, saliency, bench, suite. Every command is deterministic given
its flags and seeds. Failures print one machine-parsable line
(``error: <Category>: <message>``) and exit 2 (usage), 3 (data error), or
4 (budget/selection exhaustion).
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import harness
from .cloud import load_ply, save_ply
from .dataset import (
    AugmentConfig,
    augment_entry,
    load_raw_dataset,
    load_train_dataset,
    resample_to_n,
    save_raw_dataset,
    save_train_dataset,
)
from .errors import BaseposeError, EmptyDataset, InvalidConfig, IoFailure
from .gmm import GmmParams
from .model import ModelConfig, load_checkpoint,forward, saliency, save_checkpoint
from .reporting import (
    latency_figure,
    save_report,
    saliency_figure,
    summary_table,
    training_curves,
)
from .scene import SceneSpec, generate_scene, load_scene, save_scene
from .training import LossConfig, TrainConfig, train, write_history_jsonl
from .transition import SelectionConfig, predict, select_pose

CONDITION_ALIASES = {
    "reachability": harness.CONDITION_REACHABILITY,
    "oracle": harness.CONDITION_ORACLE,
    "model": harness.CONDITION_MODEL,
    # Retained for interface compatibility: the learned condition.
    "n2m": harness.CONDITION_MODEL,
}


def _load_json(path, what: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read {what} {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{what} {path} is not valid JSON: {exc}") from exc


def _scene_spec_from(path) -> SceneSpec:
    return SceneSpec.from_dict(_load_json(path, "scene spec")) if path else SceneSpec()


def _oracle_from(path, sides: int) -> harness.OracleSpec:
    if path:
        return harness.OracleSpec.from_dict(_load_json(path, "oracle spec"))
    return harness.OracleSpec(sides=sides)


def _split_train_cfg(d: dict):
    if "train" in d or "loss" in d:
        train_cfg = TrainConfig.from_dict(d.get("train", {}))
        loss_cfg = LossConfig.from_dict(d.get("loss", {}))
    else:
        train_cfg = TrainConfig.from_dict(d)
        loss_cfg = LossConfig()
    return train_cfg, loss_cfg


def cmd_gen_scenes(args) -> int:
    spec = _scene_spec_from(args.spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True))
    for i in range(args.count):
        scene = generate_scene(spec, harness.derive_seed(args.seed, 11, 0, i))
        save_scene(out / f"scene_{i:05d}.json", scene)
    print(f"wrote {args.count} scenes to {out}")
    return 0


def cmd_collect(args) -> int:
    scene_dir = Path(args.scenes)
    paths = sorted(scene_dir.glob("scene_*.json"))
    if not paths:
        raise EmptyDataset(f"no scene records in {scene_dir}")
    scenes = [load_scene(p) for p in paths]
    sides = max(len(scenes[0].reference_poses), 1)
    oracle = _oracle_from(args.oracle, sides)
    spec = harness.data_collection_spec()

    def generator(attempt: int):
        return scenes[attempt]

    result = harness.collect_rollouts(
        generator, oracle, spec, args.n_success, seed=args.seed,
        max_attempts=len(scenes),
    )
    save_raw_dataset(
        args.out, result.entries, scenes=result.scenes,
        config={"oracle": oracle.to_dict(), "attempts": result.attempts},
        seed=args.seed,
    )
    print(f"collected {len(result.entries)} rollouts in {result.attempts} attempts -> {args.out}")
    return 0


def cmd_augment(args) -> int:
    entries, scenes = load_raw_dataset(args.raw)
    if not entries:
        raise EmptyDataset(f"raw dataset {args.raw} has no entries")
    missing = [e.scene_id for e in entries if e.scene_id not in scenes]
    if missing:
        raise IoFailure(f"raw dataset lacks scene records for entries {missing}")
    cfg = AugmentConfig.from_dict(_load_json(args.config, "augment config")) \
        if args.config else AugmentConfig()
    samples = []
    for entry in entries:
        samples.extend(
            augment_entry(entry, scenes[entry.scene_id], cfg,
                          seed=harness.derive_seed(args.seed, entry.scene_id, 41))
        )
    save_train_dataset(args.out, samples, config=cfg.to_dict(), seed=args.seed)
    print(f"augmented {len(entries)} entries into {len(samples)} samples -> {args.out}")
    return 0


def cmd_train(args) -> int:
    samples = load_train_dataset(args.data)
    if not samples:
        raise EmptyDataset(f"training dataset {args.data} is empty")
    model_cfg = ModelConfig.from_dict(_load_json(args.model_cfg, "model config")) \
        if args.model_cfg else ModelConfig()
    train_cfg, loss_cfg = _split_train_cfg(
        _load_json(args.train_cfg, "train config") if args.train_cfg else {}
    )
    params, history = train(samples, model_cfg, train_cfg, loss_cfg)
    save_checkpoint(args.out, params, training_seed=train_cfg.seed)
    write_history_jsonl(str(args.out) + ".history.jsonl", history)
    training_curves(history, str(args.out) + ".history.png")
    final = history[-1]
    print(f"trained {train_cfg.steps} steps on {len(samples)} samples; "
          f"final nll {final['nll']:.3f} -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    condition = CONDITION_ALIASES[args.condition]
    params = None
    if condition == harness.CONDITION_MODEL:
        params, _ = load_checkpoint(args.ckpt)
    scene_spec = _scene_spec_from(args.scene_spec)
    oracle = _oracle_from(args.oracle, scene_spec.sides)
    report = harness.run_condition(
        condition, args.trials, args.seed, scene_spec, oracle, params=params,
        selection=SelectionConfig(),
    )
    save_report(args.out, report)
    rows = [{
        "condition": report.condition,
        "n_trials": report.n_trials,
        "successes": report.successes,
        "success_rate": round(report.success_rate, 6),
        "wilson_low": round(report.wilson_low, 6),
        "wilson_high": round(report.wilson_high, 6),
    }]
    print(summary_table(rows), end="")
    return 0


def cmd_infer(args) -> int:
    params, _ = load_checkpoint(args.ckpt)
    cloud, _ = load_ply(args.cloud)
    observation = resample_to_n(cloud, params.config.n_points, seed=args.seed)
    gmm, _ = forward(params, observation)
    scene = load_scene(args.scene) if args.scene else None
    if scene is not None:
        from .scene import collides

        def hits(p):
            return collides(scene, p, args.footprint_radius)
    else:
        def hits(p):
            return False

    pose = select_pose(gmm, hits, SelectionConfig(strategy=args.strategy),
                       seed=[args.seed, 71])
    record = {
        "ckpt": str(args.ckpt),
        "cloud": str(args.cloud),
        "seed": args.seed,
        "weights": gmm.weights.tolist(),
        "means": gmm.means.tolist(),
        "covariances": gmm.covariances().tolist(),
        "selected_pose": pose.as_array().tolist(),
    }
    Path(args.out).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    print(f"selected pose {np.round(pose.as_array(), 4).tolist()} -> {args.out}")
    return 0


def cmd_saliency(args) -> int:
    params, _ = load_checkpoint(args.ckpt)
    cloud, _ = load_ply(args.cloud)
    observation = resample_to_n(cloud, params.config.n_points, seed=args.seed)
    scores = saliency(params, observation)
    # Grey-to-red colormap over the score range makes the salient region
    # readable in any PLY viewer.
    lo, hi = float(scores.min()), float(scores.max())
    t = (scores - lo) / (hi - lo) if hi > lo else np.zeros_like(scores)
    colors = np.stack([0.2 + 0.8 * t, 0.2 + 0.2 * (1 - t), 0.2 + 0.2 * (1 - t)],
                      axis=1).astype(np.float32)
    colored = type(observation)(observation.positions, colors, observation.labels)
    save_ply(args.out, colored, meta={"ckpt": str(args.ckpt), "seed": args.seed,
                                      "score_min": lo, "score_max": hi})
    saliency_figure(observation, scores, str(args.out) + ".png")
    print(f"saliency range [{lo:.3f}, {hi:.3f}] -> {args.out}")
    return 0


def cmd_bench(args) -> int:
    from threadpoolctl import threadpool_limits

    params, _ = load_checkpoint(args.ckpt)
    if args.cloud:
        cloud, _ = load_ply(args.cloud)
    else:
        scene = generate_scene(SceneSpec(), harness.derive_seed(args.seed, 11, 0, 0))
        pose = harness.sample_pose(harness.task_area_spec(), scene, [args.seed])
        from .render import render

        cloud = render(scene, pose)
    observation = resample_to_n(cloud, params.config.n_points, seed=args.seed)
    cfg = SelectionConfig()

    def once(i: int) -> float:
        t0 = time.perf_counter()
        gmm = predict(params, observation)
        select_pose(gmm, lambda p: False, cfg, seed=[args.seed, i])
        return (time.perf_counter() - t0) * 1000.0

    with threadpool_limits(limits=1):
        once(-1)
        samples = [once(i) for i in range(args.runs)]
    stats = {
        "runs": args.runs,
        "n_points": params.config.n_points,
        "median_ms": statistics.median(samples),
        "p99_ms": float(np.percentile(samples, 99)),
        "mean_ms": statistics.fmean(samples),
        "min_ms": min(samples),
        "max_ms": max(samples),
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
        latency_figure(samples, out / "bench.png")
    print(json.dumps(stats, sort_keys=True))
    return 0


def cmd_suite(args) -> int:
    raw = _load_json(args.config, "suite config")
    suite_cfg = harness.SuiteConfig.from_dict(raw.get("suite", {}))
    if args.out:
        suite_cfg = harness.SuiteConfig.from_dict(
            {**suite_cfg.to_dict(), "out_dir": args.out}
        )
    scene_spec = SceneSpec.from_dict(raw["scene"]) if "scene" in raw else None
    oracle = harness.OracleSpec.from_dict(raw["oracle"]) if "oracle" in raw else None
    augment_cfg = AugmentConfig.from_dict(raw["augment"]) if "augment" in raw else None
    model_cfg = ModelConfig.from_dict(raw["model"]) if "model" in raw else None
    train_cfg = TrainConfig.from_dict(raw["train"]) if "train" in raw else None
    loss_cfg = LossConfig.from_dict(raw["loss"]) if "loss" in raw else None
    result = harness.run_suite(
        suite_cfg, scene_spec=scene_spec, oracle=oracle, augment_cfg=augment_cfg,
        model_cfg=model_cfg, train_cfg=train_cfg, loss_cfg=loss_cfg,
    )
    print(summary_table(result.summary), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="basepose",
        description="Learning preferable robot base poses from ego-centric point clouds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenes", help="generate scene record files")
    p.add_argument("--spec", help="scene spec JSON (defaults to the canonical task)")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_scenes)

    p = sub.add_parser("collect", help="collect successful rollouts into a raw dataset")
    p.add_argument("--scenes", required=True, help="directory of scene records")
    p.add_argument("--oracle", help="oracle spec JSON")
    p.add_argument("--n-success", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("augment", help="viewpoint-augment a raw dataset")
    p.add_argument("--raw", required=True)
    p.add_argument("--config", help="augment config JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train the mixture network")
    p.add_argument("--data", required=True)
    p.add_argument("--model-cfg", help="model config JSON")
    p.add_argument("--train-cfg", help="train config JSON (optional 'train'/'loss' sections)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate one condition over fresh scenes")
    p.add_argument("--ckpt", help="checkpoint (required for the model condition)")
    p.add_argument("--condition", required=True, choices=sorted(CONDITION_ALIASES))
    p.add_argument("--trials", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scene-spec", help="scene spec JSON")
    p.add_argument("--oracle", help="oracle spec JSON")
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict a pose mixture for one observation")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--cloud", required=True, help="observation PLY (robot body frame)")
    p.add_argument("--scene", help="scene record for collision filtering")
    p.add_argument("--strategy", choices=["sample", "mode-mean"], default="sample")
    p.add_argument("--footprint-radius", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output JSON record")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("saliency", help="score-colored observation cloud")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--cloud", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output PLY path")
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("bench", help="forward + selection latency statistics")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--cloud", help="observation PLY (defaults to a canonical render)")
    p.add_argument("--runs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="directory for bench.json and figure")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("suite", help="run the full experiment grid")
    p.add_argument("--config", required=True, help="suite config JSON")
    p.add_argument("--out", help="override the output directory")
    p.set_defaults(func=cmd_suite)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BaseposeError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: InvalidConfig: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # pragma: no cover - unexpected failure guard
        print(f"error: InternalError: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
