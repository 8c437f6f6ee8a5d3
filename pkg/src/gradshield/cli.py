"""Command-line interface.

Exit codes: 0 ok, 2 invalid config (message names the field), 3 missing
artifact (checkpoint / input file), 4 numerical abort (message names the
step).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import harness
from . import io as gio
from .config import ConfigError, default_config, load_config
from .dgs import DGSConfig, PMatrix, reorient
from .watermark import TrainingDiverged

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ARTIFACT = 3
EXIT_NUMERIC = 4


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="gradshield",
        description="Box-free watermarking attack/defense simulation lab",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a procedural dataset as PGM images")
    p.add_argument("--task", required=True, choices=("derain", "style"))
    p.add_argument("--count", required=True, type=int)
    p.add_argument("--size", required=True, type=int)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-victim", help="jointly train encoder and decoder")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("attack", help="train a remover through the decoder API")
    p.add_argument("--config", required=True)
    p.add_argument("--victim", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("robustness", help="JPEG/noise/lattice sweep on returned marks")
    p.add_argument("--victim", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--suite", default="jpeg,noise,lattice")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="fidelity and extraction metrics on the eval split")
    p.add_argument("--victim", required=True)
    p.add_argument("--remover", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("reorient", help="apply the gradient shield transform to one image")
    p.add_argument("--z", required=True)
    p.add_argument("--w", required=True)
    p.add_argument("--lambda", dest="lam", required=True, type=float)
    p.add_argument("--out", required=True)
    return parser


def _load_victim(path):
    try:
        return harness.load_victim(path)
    except FileNotFoundError:
        raise
    except ValueError as err:
        raise FileNotFoundError(str(err)) from err


def cli_main(argv) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gen-data":
            cfg = default_config()
            cfg.task = args.task
            cfg.dataset_count = args.count
            cfg.image_size = args.size
            cfg.seed = args.seed
            cfg.victim.seed = args.seed
            cfg.attack.seed = args.seed
            cfg.validate()
            manifest = harness.run_gen_data(cfg, args.out)
            print(f"wrote {manifest}")
        elif args.command == "train-victim":
            cfg = load_config(args.config)
            model, curve = harness.run_train_victim(cfg, args.out)
            print(f"trained victim: final loss {curve[-1]:.6g} -> {args.out}")
        elif args.command == "attack":
            cfg = load_config(args.config)
            victim, _ = _load_victim(args.victim)
            run = harness.run_attack(cfg, victim, args.out)
            print(
                f"attack done: attacker_view {run.attacker_view_curve[-1]:.6g}, "
                f"defender_view {run.defender_view_curve[-1]:.6g} -> {args.out}"
            )
        elif args.command == "robustness":
            cfg = load_config(args.config)
            victim, _ = _load_victim(args.victim)
            suites = tuple(s.strip() for s in args.suite.split(",") if s.strip())
            unknown = set(suites) - {"jpeg", "noise", "lattice"}
            if unknown:
                raise ConfigError(f"suite: unknown {sorted(unknown)[0]!r}")
            harness.run_robustness(cfg, victim, suites, args.out)
            print(f"wrote {args.out}")
        elif args.command == "eval":
            victim, cfg = _load_victim(args.victim)
            remover = None
            if args.remover:
                ckpt = Path(args.remover) / "remover.ckpt"
                if not ckpt.exists():
                    raise FileNotFoundError(f"remover checkpoint not found: {ckpt}")
                remover = gio.load_checkpoint(ckpt)
            harness.run_eval(cfg, victim, remover, args.out)
            print(f"wrote {args.out}")
        elif args.command == "reorient":
            for path in (args.z, args.w):
                if not Path(path).exists():
                    raise FileNotFoundError(f"input image not found: {path}")
            if args.lam <= 0:
                raise ConfigError(f"lambda: must be positive, got {args.lam}")
            z = gio.read_pgm(args.z)
            w = gio.read_pgm(args.w)
            if z.shape != w.shape:
                raise ConfigError(f"z: shape {z.shape} does not match w {w.shape}")
            lam = np.full(z.size, args.lam)
            cfg = DGSConfig(
                p=PMatrix(lam, (args.lam, args.lam), 0),
                w=w, w0=np.ones_like(w),
            )
            gio.write_pgm(args.out, reorient(z, cfg))
            print(f"wrote {args.out}")
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as err:
        print(f"artifact error: {err}", file=sys.stderr)
        return EXIT_ARTIFACT
    except TrainingDiverged as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main():
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
