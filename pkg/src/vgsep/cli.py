"""Command-line interface: synth-data, train, separate, evaluate, sweep-steps.

Sampler flags (--variant, --steps, --silence-threshold, --no-guidance, --seed)
map one-to-one onto SamplerConfig. `train` also reads a flat key=value config
file via --config; explicit command-line flags win over file values.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .audio import dump_scaled_spectrogram, save_wav
from .config import parse_config_file, train_config_from
from .data import SyntheticDatasetSpec, generate_synthetic_dataset
from .generative import SamplerConfig
from .inference import FIG5_STEP_GRID, evaluate, separate, sweep_steps, write_sweep_csv
from .training import load_checkpoint, train


def _sampler_from_args(args, variant: str) -> SamplerConfig:
    return SamplerConfig(
        variant=variant,
        steps=args.steps,
        silence_threshold=args.silence_threshold,
        seed=args.seed,
        guidance_enabled=not args.no_guidance,
    )


def _add_sampler_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--steps", type=int, default=None, help="sampling steps (default 15 ddpm / 2 fm)")
    parser.add_argument("--silence-threshold", type=float, default=0.002)
    parser.add_argument("--no-guidance", action="store_true", help="disable silence-mask guidance")
    parser.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vgsep", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate the synthetic category dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--categories", type=int, default=4)
    p.add_argument("--clips-per-category", type=int, default=4)
    p.add_argument("--duration", type=int, default=16384)
    p.add_argument("--noise-floor", type=float, default=2e-3)
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train one generative variant")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--data", dest="data_root")
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--variant", choices=("ddpm", "fm"))
    p.add_argument("--loss", choices=("l1", "l2"))
    p.add_argument("--lr", type=float)
    p.add_argument("--adam-beta1", type=float, dest="adam_beta1")
    p.add_argument("--adam-beta2", type=float, dest="adam_beta2")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--train-steps", type=int, dest="train_steps")
    p.add_argument("--total-steps", type=int, dest="total_steps",
                   help="denoising schedule length (ddpm)")
    p.add_argument("--geometry", choices=("desk", "full"))
    p.add_argument("--base-channels", type=int, dest="base_channels")
    p.add_argument("--ca-variant", dest="ca_variant",
                   choices=("r_tf_t", "r_r_r", "r_r_t", "r_r_tf"))
    p.add_argument("--fim-variant", dest="fim_variant",
                   choices=("local_global", "concat", "pointwise", "local", "global"))
    p.add_argument("--max-frames", type=int, dest="max_frames")
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="checkpoint to resume from")

    p = sub.add_parser("separate", help="separate one source from a mixture WAV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mixture", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--category", type=int, help="category id condition")
    group.add_argument("--condition-embedding", help="embedding file (substituted condition)")
    p.add_argument("--out", required=True, help="output WAV path")
    p.add_argument("--variant", choices=("ddpm", "fm"), help="must match the checkpoint")
    p.add_argument("--dump-spectrogram", help="also dump the predicted scaled grid here")
    _add_sampler_flags(p)

    p = sub.add_parser("evaluate", help="separate and score seeded mixtures from a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "test", "all"))
    p.add_argument("--mixtures", type=int, default=8)
    p.add_argument("--out", help="CSV report path")
    _add_sampler_flags(p)

    p = sub.add_parser("sweep-steps", help="evaluate across a sampling-step grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "test", "all"))
    p.add_argument("--mixtures", type=int, default=4)
    p.add_argument("--steps-grid", default=",".join(str(s) for s in FIG5_STEP_GRID))
    p.add_argument("--out", required=True, help="sweep CSV path")
    _add_sampler_flags(p)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "synth-data":
        spec = SyntheticDatasetSpec(
            n_categories=args.categories,
            clips_per_category=args.clips_per_category,
            duration=args.duration,
            noise_floor=args.noise_floor,
            test_fraction=args.test_fraction,
            seed=args.seed,
        )
        meta = generate_synthetic_dataset(spec, args.out)
        print(f"wrote dataset: {meta}")
        return 0

    if args.command == "train":
        file_values = parse_config_file(args.config) if args.config else {}
        overrides = {
            key: getattr(args, key)
            for key in (
                "data_root", "out_dir", "variant", "loss", "lr", "adam_beta1", "adam_beta2",
                "batch_size", "train_steps", "total_steps", "geometry", "base_channels",
                "ca_variant", "fim_variant", "max_frames", "checkpoint_every", "seed",
            )
        }
        config = train_config_from(file_values, overrides)
        path = train(config, resume_from=args.resume)
        print(f"final checkpoint: {path}")
        return 0

    if args.command == "separate":
        ckpt = load_checkpoint(args.checkpoint)
        if args.variant and args.variant != ckpt.variant:
            raise SystemExit(f"--variant {args.variant} does not match checkpoint ({ckpt.variant})")
        sampler = _sampler_from_args(args, ckpt.variant)
        condition = args.category if args.category is not None else Path(args.condition_embedding)
        result = separate(ckpt, args.mixture, condition, sampler)
        save_wav(args.out, result.waveform)
        if args.dump_spectrogram:
            dump_scaled_spectrogram(
                args.dump_spectrogram, result.predicted_magnitude, source=str(args.mixture)
            )
        print(f"wrote {args.out}")
        return 0

    if args.command == "evaluate":
        ckpt = load_checkpoint(args.checkpoint)
        sampler = _sampler_from_args(args, ckpt.variant)
        report = evaluate(
            ckpt, args.data, split=args.split, sampler=sampler,
            n_mixtures=args.mixtures, seed=args.seed,
        )
        print(report.format_table())
        if args.out:
            report.write_csv(args.out)
        for err in report.errors:
            print(f"error: {err}", file=sys.stderr)
        return 1 if report.errors else 0

    if args.command == "sweep-steps":
        ckpt = load_checkpoint(args.checkpoint)
        sampler = _sampler_from_args(args, ckpt.variant)
        grid = tuple(int(s) for s in args.steps_grid.split(","))
        rows = sweep_steps(
            ckpt, args.data, split=args.split, steps_grid=grid,
            sampler=sampler, n_mixtures=args.mixtures, seed=args.seed,
        )
        write_sweep_csv(rows, args.out)
        for row in rows:
            print(f"{row['variant']} steps={row['steps']:>3} SDR={row['sdr']:.2f} SIR={row['sir']:.2f} SAR={row['sar']:.2f}")
        return 0

    raise SystemExit(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
