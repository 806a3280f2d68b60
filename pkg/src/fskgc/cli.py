"""Command-line entry point: ``fskgc {train,eval,ablate,sweep-diffusion,gen-synth}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ABLATIONS, ConfigError, load_config
from .synth import SynthSpec, write_synthetic
from .train import ablate, evaluate, sweep_diffusion, train


def _int_list(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list:
    return [x.strip() for x in text.split(",") if x.strip()]


def _emit(text: str, out) -> None:
    print(text)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n", encoding="utf-8")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fskgc", description="Few-shot knowledge graph completion engine.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", choices=("valid", "test"), default="test")
    e.add_argument("--candidates", default=None, help="candidate file (default: every entity)")
    e.add_argument("--config", default=None, help="override the config stored in the checkpoint")
    e.add_argument("--out", default=None, help="also write the report here")

    a = sub.add_parser("ablate", help="train and evaluate with one component removed")
    a.add_argument("--variant", required=True, choices=ABLATIONS)
    a.add_argument("--config", required=True)
    a.add_argument("--split", choices=("valid", "test"), default="test")
    a.add_argument("--out", default=None)

    s = sub.add_parser("sweep-diffusion", help="train/evaluate a grid of sampler kinds and step counts")
    s.add_argument("--kinds", type=_str_list, default=["sde", "ddpm", "ddim"])
    s.add_argument("--steps", type=_int_list, default=[5, 10, 20, 50])
    s.add_argument("--config", required=True)
    s.add_argument("--split", choices=("valid", "test"), default="test")
    s.add_argument("--out", default=None, help="also write the CSV here")

    g = sub.add_parser("gen-synth", help="write a synthetic planted-pattern dataset")
    g.add_argument("--entities", type=int, default=50)
    g.add_argument("--relations", type=int, default=8)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        if args.command == "train":
            cfg = load_config(args.config)
            trainer = train(cfg)
            print(f"trained {trainer.episode} episodes; checkpoint {cfg.checkpoint}"
                  + (f"; best valid MRR {trainer.best_mrr:.4f}" if trainer.best_mrr >= 0 else ""))
        elif args.command == "eval":
            cfg = load_config(args.config) if args.config else None
            report = evaluate(args.checkpoint, args.split, args.candidates, cfg)
            out = args.out or str(Path(args.checkpoint).with_suffix(f".{args.split}.json"))
            _emit(report.to_json(), out)
        elif args.command == "ablate":
            report = ablate(load_config(args.config), args.variant, args.split)
            _emit(report.to_json(), args.out)
        elif args.command == "sweep-diffusion":
            _emit(sweep_diffusion(load_config(args.config), args.kinds, args.steps, args.split).rstrip("\n"), args.out)
        elif args.command == "gen-synth":
            spec = SynthSpec(entities=args.entities, relations=args.relations, seed=args.seed)
            graph, tasks = write_synthetic(args.out, spec)
            counts = {s: sum(len(v) for v in rels.values()) for s, rels in tasks.items()}
            print(f"wrote {graph.num_entities} entities, {graph.num_relations} relations to {args.out}: {counts}")
    except (ConfigError, KeyError, ValueError, OSError) as exc:
        print(f"fskgc {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
