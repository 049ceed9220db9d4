"""Command-line interface: make-scene, train, render, eval, diagnose.

Every run writes a manifest.json (config echo, seed, sha256 of produced
artifacts) into the output directory so results are reproducible.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from .diagnostics import diagnose_rays
from .field import ConstParams
from .geometry import Intrinsics
from .metrics import evaluate_views
from .rendering import MLPField, render_image
from .scenes import (
    load_blender_format,
    load_scene,
    make_dataset,
    one_sphere_scene,
    save_blender_format,
    save_png,
    save_scene,
    two_sphere_scene,
)
from .training import TrainConfig, TrainState, load_checkpoint, save_checkpoint, train


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(out_dir, command, cfg_dict, seed, artifacts):
    manifest = {
        "command": command,
        "config": cfg_dict,
        "seed": seed,
        "artifacts": {
            os.path.relpath(p, out_dir): _sha256(p) for p in artifacts if os.path.exists(p)
        },
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def _load_train_config(args, **extra):
    overrides = {"seed": args.seed, **extra}
    if args.config:
        return TrainConfig.from_file(args.config, **overrides)
    return TrainConfig(**overrides)


def cmd_make_scene(args):
    os.makedirs(args.out_dir, exist_ok=True)
    if args.scene_file:
        scene = load_scene(args.scene_file)
    elif args.preset == "one-sphere":
        scene = one_sphere_scene()
    else:
        scene = two_sphere_scene()
    rng = np.random.default_rng(args.seed)
    views = make_dataset(
        scene, args.n_train, args.n_test, args.resolution, rng,
        samples_per_ray=args.samples_per_ray,
    )
    scene_path = os.path.join(args.out_dir, "scene.json")
    save_scene(scene_path, scene)
    save_blender_format(args.out_dir, views)
    artifacts = [scene_path] + [
        os.path.join(args.out_dir, f)
        for f in os.listdir(args.out_dir)
        if f.endswith((".png", ".json"))
    ]
    cfg_echo = {k: v for k, v in vars(args).items() if k != "fn"}
    _write_manifest(args.out_dir, "make-scene", cfg_echo, args.seed, artifacts)
    return 0


def cmd_train(args):
    os.makedirs(args.out_dir, exist_ok=True)
    cfg = _load_train_config(args)
    dataset = load_blender_format(args.data)
    log_path = os.path.join(args.out_dir, "loss_log.csv")
    state, _ = train(dataset, cfg, out_dir=args.out_dir, log_path=log_path)
    final = os.path.join(args.out_dir, "checkpoint_final.ckpt")
    save_checkpoint(final, state)
    artifacts = [log_path, final] + [
        os.path.join(args.out_dir, f)
        for f in os.listdir(args.out_dir)
        if f.startswith("checkpoint_")
    ]
    _write_manifest(args.out_dir, "train", json.loads(cfg.to_json()), cfg.seed, artifacts)
    return 0


def _field_from_checkpoint(args, cfg):
    state = load_checkpoint(args.checkpoint)
    return MLPField(ConstParams(state.params), cfg.render_config()), state


def cmd_render(args):
    os.makedirs(args.out_dir, exist_ok=True)
    cfg = _load_train_config(args)
    field, _ = _field_from_checkpoint(args, cfg)
    dataset = load_blender_format(args.data)
    views = [v for v in dataset if v.split == args.split]
    rng = np.random.default_rng(args.seed)
    rcfg = cfg.render_config()
    rcfg.jitter = False
    artifacts = []
    for i, view in enumerate(views[: args.limit] if args.limit else views):
        img, _ = render_image(field, view.camera, rcfg, rng)
        path = os.path.join(args.out_dir, f"render_{args.split}_{i:03d}.png")
        save_png(path, img)
        artifacts.append(path)
    _write_manifest(args.out_dir, "render", json.loads(cfg.to_json()), args.seed, artifacts)
    return 0


def cmd_eval(args):
    os.makedirs(args.out_dir, exist_ok=True)
    cfg = _load_train_config(args)
    field, _ = _field_from_checkpoint(args, cfg)
    dataset = load_blender_format(args.data)
    views = [v for v in dataset if v.split == "test"] or dataset
    rng = np.random.default_rng(args.seed)
    rcfg = cfg.render_config()
    rcfg.jitter = False
    renders = [render_image(field, v.camera, rcfg, rng)[0] for v in views]
    report = evaluate_views(renders, views)
    txt = os.path.join(args.out_dir, "metrics.txt")
    csvp = os.path.join(args.out_dir, "metrics.csv")
    with open(txt, "w") as fh:
        fh.write(report.text() + "\n")
    with open(csvp, "w") as fh:
        fh.write(report.csv() + "\n")
    print(report.text())
    _write_manifest(args.out_dir, "eval", json.loads(cfg.to_json()), args.seed, [txt, csvp])
    return 0


def cmd_diagnose(args):
    os.makedirs(args.out_dir, exist_ok=True)
    cfg = _load_train_config(args)
    state = load_checkpoint(args.checkpoint)
    dataset = load_blender_format(args.data)
    rng = np.random.default_rng(args.seed)
    _, lines = diagnose_rays(state.params, dataset, args.n_rays, cfg.render_config(), rng)
    path = os.path.join(args.out_dir, "ray_profiles.csv")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    _write_manifest(args.out_dir, "diagnose", json.loads(cfg.to_json()), args.seed, [path])
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="nerflab", description="Sparse-view NeRF desk lab")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None, help="JSON config file")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out-dir", required=True)

    sp = sub.add_parser("make-scene", help="write an analytic scene + rendered dataset")
    common(sp)
    sp.add_argument("--preset", choices=["one-sphere", "two-sphere"], default="two-sphere")
    sp.add_argument("--scene-file", default=None)
    sp.add_argument("--n-train", type=int, default=3)
    sp.add_argument("--n-test", type=int, default=8)
    sp.add_argument("--resolution", type=int, default=32)
    sp.add_argument("--samples-per-ray", type=int, default=2048)
    sp.set_defaults(fn=cmd_make_scene)

    sp = sub.add_parser("train", help="train on a dataset directory")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("render", help="render dataset poses from a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", default="test")
    sp.add_argument("--limit", type=int, default=0)
    sp.set_defaults(fn=cmd_render)

    sp = sub.add_parser("eval", help="PSNR/SSIM of renders against test views")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("diagnose", help="per-ray weight/transmittance profiles")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--n-rays", type=int, default=16)
    sp.set_defaults(fn=cmd_diagnose)
    return p


def cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        print(f"error: missing-file: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
