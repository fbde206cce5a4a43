"""Command-line entry point: ``sinf <command> [flags]``.

Commands: synth-data, train, generate, evaluate, gradcheck.
Exit codes: 0 success, 1 usage or configuration error, 2 runtime or
validation failure. Settings come from built-in defaults, then
``--config FILE``, then flags; every command writes the resolved
configuration as ``config.json`` next to its outputs.
"""
from __future__ import annotations

import argparse
import sys
import warnings
from collections import Counter
from pathlib import Path

from .config import ConfigError, RunConfig, load_config

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="run seed (overrides the config)")
    p.add_argument("--out", type=Path, help="output directory (overrides paths.outputs)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sinf", description="Scene synthesis with disentangled implicit fields.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth-data", help="write the procedural toy corpus and asset library")
    _common(p)

    p = sub.add_parser("train", help="train a model on a scene corpus")
    _common(p)
    p.add_argument("--mode", choices=("full", "layout_only", "field_only"))
    p.add_argument("--steps", type=int)
    p.add_argument("--data", type=Path, help="dataset directory (overrides paths.dataset)")
    p.add_argument("--overfit-one", action="store_true", help="train on the first training scene only")
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")

    p = sub.add_parser("generate", help="sample scenes from a trained checkpoint")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--assets", type=Path, help="asset directory (overrides paths.assets)")
    p.add_argument("-n", "--num", type=int, default=None, help="number of scenes (default metrics.n_generate)")
    p.add_argument("--render", action="store_true", help="also write top-down normal renders (PPM)")

    p = sub.add_parser("evaluate", help="compare a generated corpus with a reference corpus")
    _common(p)
    p.add_argument("--generated", type=Path)
    p.add_argument("--reference", type=Path, required=True)
    p.add_argument("--split-halves", action="store_true",
                   help="compare the two halves of the reference corpus with each other")

    p = sub.add_parser("gradcheck", help="finite-difference audit of every differentiable component")
    _common(p)
    p.add_argument("--only", nargs="*", help="restrict to these components")
    p.add_argument("--inject-fault", metavar="OP_KIND", help="corrupt one backward rule (self-test of the audit)")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg.with_overrides(seed=args.seed, mode=getattr(args, "mode", None),
                              steps=getattr(args, "steps", None), out=args.out)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.paths.outputs)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    return out


# --- commands -------------------------------------------------------------------

def cmd_synth_data(cfg: RunConfig, args) -> int:
    from .data.assets import write_asset_library
    from .data.scenes import save_scene, write_manifest
    from .data.synth import library_assets, synth_dataset

    out = _out_dir(cfg)
    data = synth_dataset(cfg.synth)
    rows = []
    for split in ("train", "eval"):
        (out / split).mkdir(exist_ok=True)
        for scene in data[split]:
            rel = f"{split}/{scene.id}.scene"
            save_scene(scene, out / rel)
            rows.append((scene.id, split, rel))
    write_manifest(rows, out / "manifest.tsv")
    write_asset_library(out / "assets", library_assets())
    print(corpus_stats(data))
    return EXIT_OK


def corpus_stats(data: dict) -> str:
    lines = []
    for split, scenes in data.items():
        counts = Counter(len(s.objects) for s in scenes)
        types = Counter(s.scene_type for s in scenes)
        lines.append(f"{split}: {len(scenes)} scenes, {sum(len(s.objects) for s in scenes)} objects")
        lines.append("  objects per scene: " + " ".join(f"{k}:{counts[k]}" for k in sorted(counts)))
        lines.append("  scene types: " + " ".join(f"{k}:{types[k]}" for k in sorted(types)))
    return "\n".join(lines)


def cmd_train(cfg: RunConfig, args) -> int:
    from .data.checkpoint import load_checkpoint, save_checkpoint
    from .data.scenes import load_split
    from .model import SINFModel
    from .training import Trainer

    data_dir = Path(args.data) if args.data else Path(cfg.paths.dataset)
    scenes = load_split(data_dir, "train")
    if not scenes:
        raise RuntimeError(f"no training scenes under {data_dir}")
    if args.overfit_one:
        scenes = scenes[:1]
    out = _out_dir(cfg)
    ckdir = out / "checkpoints"
    ckdir.mkdir(exist_ok=True)
    model = SINFModel(cfg.model, seed=cfg.seed)
    trainer = Trainer(model, scenes, cfg.train, log_path=out / "loss.tsv")
    if args.resume:
        ck = load_checkpoint(args.resume)
        check_compatible(ck, cfg)
        trainer.restore(ck)
    remaining = cfg.train.steps - trainer.step
    meta = cfg.to_dict()
    trainer.run(max(0, remaining), ckdir, cfg.train.checkpoint_every, meta)
    save_checkpoint(trainer.checkpoint(meta), out / "final.ckpt")
    last = trainer.history[-1] if trainer.history else None
    if last is not None:
        print(f"step {trainer.step}: total {last.total:.6g} (kl {last.kl:.4g}, render {last.render:.4g}, "
              f"layout {last.layout:.4g})")
    return EXIT_OK


def check_compatible(ck, cfg: RunConfig) -> None:
    saved = ck.config.get("model") if ck.config else None
    if saved is not None and saved != cfg.model.to_dict():
        raise RuntimeError(f"checkpoint model config {saved} does not match the run's {cfg.model.to_dict()}")


def _model_from_checkpoint(path):
    from .data.checkpoint import load_checkpoint
    from .model import ModelConfig, SINFModel

    ck = load_checkpoint(path)
    mcfg = ModelConfig.from_dict(ck.config["model"]) if ck.config.get("model") else ModelConfig()
    model = SINFModel(mcfg)
    model.load_state_dict(ck.params)
    return model


def cmd_generate(cfg: RunConfig, args) -> int:
    from .data.images import write_image
    from .data.scenes import save_scene, write_manifest
    from .estimator import sample_latents, scene_from_latent
    from .renderer import topdown_render
    from .retrieval import build_library

    n = cfg.metrics.n_generate if args.num is None else args.num
    if n < 0:
        raise UsageError("-n must be nonnegative")
    model = _model_from_checkpoint(args.checkpoint)
    out = _out_dir(cfg)
    rows = []
    if n > 0:
        library = build_library(args.assets or cfg.paths.assets)
        z = sample_latents(n, model.cfg.latent_dim, cfg.seed)
        for i in range(n):
            scene = scene_from_latent(model, z[i], library, f"generated_{i:05d}")
            rel = f"{scene.id}.scene"
            save_scene(scene, out / rel)
            rows.append((scene.id, "generated", rel))
            if args.render:
                write_image(topdown_render(scene, cfg.metrics.resolution), out / f"{scene.id}.ppm")
    write_manifest(rows, out / "manifest.tsv")
    print(f"wrote {n} scene(s) to {out}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, args) -> int:
    from .data.scenes import load_scene_dir
    from .metrics import evaluate, write_report

    reference = load_scene_dir(args.reference)
    if not reference:
        raise RuntimeError(f"reference corpus {args.reference} is empty")
    if args.split_halves:
        generated, reference = reference[0::2], reference[1::2]
    else:
        if args.generated is None:
            raise UsageError("--generated is required unless --split-halves is given")
        generated = load_scene_dir(args.generated)
        if not generated:
            raise RuntimeError(f"generated corpus {args.generated} is empty")
    out = _out_dir(cfg)
    report = evaluate(generated, reference, cfg.metrics.resolution, cfg.seed)
    write_report(report, out / "report.json")
    for k in ("fid_style", "category_kl", "sca", "diversity", "n_scenes"):
        print(f"{k}\t{report[k]}")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    from .gradaudit import format_table, run_audit

    rows = run_audit(args.only or None, fault=args.inject_fault)
    out = _out_dir(cfg)
    table = format_table(rows)
    (out / "gradcheck.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    failed = [r.name for r in rows if not r.passed]
    if failed:
        print("FAILED: " + ", ".join(failed), file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


COMMANDS = {"synth-data": cmd_synth_data, "train": cmd_train, "generate": cmd_generate,
            "evaluate": cmd_evaluate, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args)
    except UsageError as e:
        print(f"sinf: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ValueError) as e:
        print(f"sinf: configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            return COMMANDS[args.command](cfg, args)
    except UsageError as e:
        print(f"sinf: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError,) as e:
        print(f"sinf: configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except KeyError as e:
        print(f"sinf: {args.command} failed: unknown name {e}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeError, ValueError, OSError) as e:
        print(f"sinf: {args.command} failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
