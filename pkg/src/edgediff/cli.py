"""Command line: ``edgediff {train,sample,sdedit,strokes,freq-sweep,ablate}``.

The device is taken from ``EDGEDIFF_DEVICE`` (default ``cpu``).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch
import yaml
from PIL import Image

from .config import RunConfig, load_config, validate
from .data import DatasetSpec, list_images, load_images, make_grid, normalize, save_image
from .errors import CheckpointError, ConfigError, DataError, EdgeDiffError
from .evaluation import frequency_sweep, plot_heatmap, write_table
from .experiments import ABLATION_AXES, dataset_from_config, run_ablation, run_training
from .reverse_process import generate
from .sdedit import make_stroke_painting, sdedit_generate
from .trainer import load_checkpoint

log = logging.getLogger("edgediff")


def _device() -> str:
    return os.environ.get("EDGEDIFF_DEVICE", "cpu")


def _print_config(cfg: RunConfig | dict, extra: dict | None = None) -> None:
    d = cfg.to_dict() if isinstance(cfg, RunConfig) else dict(cfg)
    if extra:
        d = {"command": extra, **d}
    print("# resolved config")
    print(yaml.safe_dump(d, sort_keys=False).rstrip())
    sys.stdout.flush()


def _write_manifest(out: Path, command: str, cfg_hash: str, artifacts: list[Path], **extra) -> Path:
    manifest = {
        "command": command,
        "config_hash": cfg_hash,
        "artifacts": sorted(str(p.relative_to(out)) for p in artifacts),
        **extra,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def _parse_sigmas(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError as e:
        raise ConfigError(f"--sigmas must be comma-separated numbers, got {text!r}") from e


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.trainer.seed = args.seed
    validate(cfg)
    _print_config(cfg, {"name": "train", "out": str(args.out)})
    out = Path(args.out)
    state = run_training(cfg, out, device=_device())
    artifacts = sorted(out.glob("*.pt")) + [out / "config.yaml", out / "train_log.csv"]
    _write_manifest(out, "train", cfg.hash(), artifacts, final_step=state.step)
    return 0


def cmd_sample(args) -> int:
    state = load_checkpoint(args.checkpoint)
    cfg = state.config
    _print_config(cfg, {"name": "sample", "checkpoint": str(args.checkpoint), "n": args.n, "seed": args.seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.n == 0:
        return 0
    sched, hcfg = cfg.schedule.build()
    model = state.sampling_model.to(_device())
    gen = torch.Generator().manual_seed(args.seed)
    x = generate(model, args.n, sched, hcfg, generator=gen, device=_device()).cpu()
    artifacts = []
    for i, img in enumerate(x):
        p = out / f"sample_{i:05d}.png"
        save_image(img, p)
        artifacts.append(p)
    grid = out / "grid.png"
    save_image(make_grid(x), grid)
    artifacts.append(grid)
    _write_manifest(out, "sample", cfg.hash(), artifacts, checkpoint=str(args.checkpoint), seed=args.seed)
    return 0


def cmd_sdedit(args) -> int:
    state = load_checkpoint(args.checkpoint)
    cfg = state.config
    k = args.k if args.k is not None else cfg.sdedit.k
    hijack = args.hijack if args.hijack is not None else cfg.sdedit.hijack
    pin = args.pin_guide_gradient or cfg.sdedit.grad_source == "guide"
    _print_config(cfg, {"name": "sdedit", "checkpoint": str(args.checkpoint), "guides": str(args.guides),
                        "hijack": hijack, "k": k, "seed": args.seed, "pin_guide_gradient": pin})
    paths = list_images(args.guides)
    spec = DatasetSpec(str(args.guides), cfg.data.resolution, cfg.data.channels)
    originals = load_images(spec)
    ids = [p.stem for p in paths][: len(originals)]
    if args.no_strokes:
        painting = originals
    else:
        painting = make_stroke_painting(originals, k, rng=args.seed, source_ids=ids).painting
    sched, hcfg = cfg.schedule.build()
    gen = torch.Generator().manual_seed(args.seed)
    x = sdedit_generate(state.sampling_model, painting, hijack, sched, hcfg, generator=gen,
                        pin_guide_gradient=pin).float()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts, mapping = [], {}
    for sid, o, g, y in zip(ids, originals, painting, x):
        entry = {}
        for kind, img in (("original", o), ("painting", g), ("output", y)):
            p = out / f"{sid}_{kind}.png"
            save_image(img, p)
            entry[kind] = p.name
            artifacts.append(p)
        trip = out / f"{sid}_triptych.png"
        save_image(make_grid(torch.stack([o, g.float(), y]), ncol=3), trip)
        entry["triptych"] = trip.name
        artifacts.append(trip)
        mapping[sid] = entry
    _write_manifest(out, "sdedit", cfg.hash(), artifacts, hijack=hijack, k=k, guides=mapping)
    return 0


def cmd_strokes(args) -> int:
    _print_config({"command": {"name": "strokes", "images": str(args.images), "k": args.k, "seed": args.seed}})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = list_images(args.images)
    if not paths:
        raise DataError(f"no images in {args.images}")
    artifacts, mapping = [], {}
    h = hashlib.sha256(json.dumps({"k": args.k, "seed": args.seed}).encode()).hexdigest()[:12]
    for i, p in enumerate(paths):
        try:
            with Image.open(p) as im:
                arr = np.asarray(im.convert("RGB"))
        except OSError as e:
            log.warning("skipping undecodable image %s: %s", p, e)
            continue
        x = torch.from_numpy(normalize(arr.transpose(2, 0, 1)))[None]
        guide = make_stroke_painting(x, args.k, rng=args.seed + i, source_ids=[p.stem])
        dst = out / f"{p.stem}_stroke.png"
        save_image(guide.painting[0], dst)
        artifacts.append(dst)
        mapping[p.stem] = {"source": str(p), "painting": dst.name}
    _write_manifest(out, "strokes", h, artifacts, k=args.k, guides=mapping)
    return 0


def cmd_freq_sweep(args) -> int:
    ckpts = []
    for c in args.checkpoint:
        c = Path(c)
        ckpts.extend(sorted(c.glob("ckpt_*.pt")) if c.is_dir() else [c])
    if not ckpts:
        raise CheckpointError(f"no checkpoints found in {args.checkpoint}")
    first = load_checkpoint(ckpts[0])
    cfg = first.config
    sigmas = _parse_sigmas(args.sigmas) if args.sigmas else cfg.freq_sweep.sigmas
    n = args.n if args.n is not None else cfg.freq_sweep.samples_per_point
    if args.data is not None:
        images = load_images(DatasetSpec(str(args.data), cfg.data.resolution, cfg.data.channels))
    else:
        images = dataset_from_config(cfg)
    _print_config(cfg, {"name": "freq-sweep", "checkpoints": [str(c) for c in ckpts], "sigmas": sigmas,
                        "n": n, "seed": args.seed})
    rows = frequency_sweep(ckpts, images, sigmas, n, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = write_table(rows, out / "sweep.csv")
    heat = plot_heatmap(rows, out / "heatmap.png")
    _write_manifest(out, "freq-sweep", cfg.hash(), [table, heat], sigmas=sigmas)
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.trainer.seed = args.seed
    validate(cfg)
    _print_config(cfg, {"name": "ablate", "axis": args.axis, "out": str(args.out)})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = run_ablation(cfg, args.axis, out, parallel=args.parallel or None)
    table = out / "ablation.csv"
    with open(table, "w") as f:
        f.write("axis, tag, distance, n_samples\n")
        for r in results:
            f.write(f"{r['axis']}, {r['tag']}, {r['distance']:.6g}, {r['n_samples']}\n")
    artifacts = [table] + [out / r["tag"] / "result.json" for r in results]
    _write_manifest(out, "ablate", cfg.hash(), artifacts, axis=args.axis, cells=[r["tag"] for r in results])
    for r in results:
        print(f"{r['tag']}: distance={r['distance']:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgediff", description="Edge-preserving hybrid-noise diffusion toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train a denoiser and write checkpoints")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="unconditional samples from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--n", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("sdedit", help="stroke-guided generation from a hijack point")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--guides", required=True, help="directory of guide source images")
    s.add_argument("--hijack", type=float)
    s.add_argument("--k", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--no-strokes", action="store_true", help="use the guides as-is instead of k-means paintings")
    s.add_argument("--pin-guide-gradient", action="store_true")
    s.set_defaults(func=cmd_sdedit)

    s = sub.add_parser("strokes", help="k-means stroke paintings of a directory of images")
    s.add_argument("--images", required=True)
    s.add_argument("--k", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_strokes)

    s = sub.add_parser("freq-sweep", help="distance per (checkpoint, blur band)")
    s.add_argument("--checkpoint", required=True, nargs="+", help="checkpoint files or run directories")
    s.add_argument("--data", help="dataset directory (default: the checkpoint's data block)")
    s.add_argument("--sigmas", help="comma-separated blur sigmas")
    s.add_argument("--n", type=int, help="samples per checkpoint")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_freq_sweep)

    s = sub.add_parser("ablate", help="grid of child runs along one axis")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", required=True, choices=ABLATION_AXES)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--parallel", action="store_true")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EdgeDiffError as e:
        print(f"error [{e.category}]: {e}", file=sys.stderr)
        return e.exit_code
    except (ValueError, FileNotFoundError) as e:
        print(f"error [invalid-argument]: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
