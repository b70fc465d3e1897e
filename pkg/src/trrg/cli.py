"""Command-line front door.

Subcommands: gen-data, pretrain, finetune, generate, evaluate, ablate,
gradcheck. Every command is deterministic given --seed; outputs include a
config.resolved.json echo, delimited logs/tables, and rendered figures.
"""

import argparse
import sys
from pathlib import Path

from . import training
from .autograd import ContractError, ShapeError
from .checkpoint import CheckpointError
from .config import ConfigError, ModelConfig, echo_resolved
from .corpus import CorpusFormatError, GeneratorConfig, generate_corpus, write_jsonl
from .decoder import GenerationConfig
from .gradcheck import THRESHOLD, run_gradchecks


def _load_config(args):
    config = ModelConfig.from_json(args.config) if args.config else ModelConfig()
    overrides = {}
    for field in ("seed", "epochs", "batch_size", "lr", "k", "query_len", "variant"):
        value = getattr(args, field.replace("-", "_"), None)
        if value is not None:
            overrides[field] = value
    return config.replace(**overrides) if overrides else config.validate()


def _add_config_flags(parser, variant=False):
    parser.add_argument("--config", help="JSON config file (flags override it)")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--lr", type=float, default=None)
    if variant:
        parser.add_argument("--variant", default=None,
                            choices=("base", "dci", "dci_cmci", "full"))


def cmd_gen_data(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gen = GeneratorConfig()
    offsets = {"train": 0, "val": 1, "test": 2}
    for split, count in (("train", args.train), ("val", args.val), ("test", args.test)):
        if count <= 0:
            continue
        studies = generate_corpus(count, args.seed * 10 + offsets[split])
        write_jsonl(studies, out / f"{split}.jsonl")
    config = ModelConfig(seed=args.seed)
    echo_resolved(config, out)
    print(f"wrote corpus splits to {out}")
    return 0


def cmd_pretrain(args):
    config = _load_config(args)
    studies = training.read_jsonl(args.data)
    ckpt, final_loss = training.run_pretrain(config, studies, args.out,
                                             epochs=args.epochs)
    print(f"stage-1 checkpoint: {ckpt}")
    print(f"final epoch mean loss: {final_loss:.4f}")
    return 0


def cmd_finetune(args):
    config = _load_config(args)
    studies = training.read_jsonl(args.data)
    ckpt, rows = training.run_finetune(config, args.init, studies, args.out,
                                       epochs=args.epochs)
    print(f"stage-2 checkpoint: {ckpt}")
    if rows:
        print(f"final step loss: lm={rows[-1][1]:.4f} dc={rows[-1][2]:.4f} "
              f"total={rows[-1][3]:.4f}")
    return 0


def cmd_generate(args):
    studies = training.read_jsonl(args.data)
    gen_config = GenerationConfig(
        strategy=args.strategy, beam_width=args.beam_width, max_len=args.max_len
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    training.run_generate(args.ckpt, studies, out,
                          clues_path=out.parent / "clues.json",
                          gen_config=gen_config)
    model, _ = training.load_report_model(args.ckpt)
    echo_resolved(model.config, out.parent)
    print(f"wrote hypotheses to {out}")
    return 0


def cmd_evaluate(args):
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    metrics = training.run_evaluate(args.refs, args.hyps, out)
    config = ModelConfig.from_json(args.config) if args.config else ModelConfig()
    echo_resolved(config, out.parent)
    for key in sorted(metrics):
        print(f"{key}: {metrics[key]:.4f}")
    return 0


def cmd_ablate(args):
    config = _load_config(args)
    data = Path(args.data)
    train_studies = training.read_jsonl(data / "train.jsonl")
    test_studies = training.read_jsonl(data / "test.jsonl")
    rows = training.run_ablation(
        args.sweep, config, train_studies, test_studies, args.out,
        pretrain_epochs=args.pretrain_epochs, finetune_epochs=args.epochs,
    )
    print(f"{len(rows)} sweep rows written to {Path(args.out) / 'sweep.csv'}")
    return 0


def cmd_gradcheck(args):
    results = run_gradchecks()
    failures = [r for r in results if not r.passed]
    for result in results:
        status = "ok" if result.passed else "FAIL"
        print(f"{status:4s} {result.name:32s} max rel err {result.error:.3e}")
    print(f"{len(results)} components checked, threshold {THRESHOLD:g}")
    if failures:
        names = ", ".join(r.name for r in failures)
        print(f"FAILED: {names}", file=sys.stderr)
        return 1
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="trrg",
        description="Two-stage radiology report generation over a synthetic corpus",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate corpus splits")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=0)
    p.add_argument("--val", type=int, default=0)
    p.add_argument("--test", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="stage-1 contrastive pretraining")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="stage-2 fine-tuning from a stage-1 checkpoint")
    p.add_argument("--init", required=True, help="stage-1 checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p, variant=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("generate", help="decode reports for a corpus file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="hypotheses JSONL path")
    p.add_argument("--strategy", choices=("greedy", "beam"), default="greedy")
    p.add_argument("--beam-width", type=int, default=3)
    p.add_argument("--max-len", type=int, default=60)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score hypotheses against references")
    p.add_argument("--refs", required=True, help="reference corpus JSONL")
    p.add_argument("--hyps", required=True, help="hypotheses JSONL")
    p.add_argument("--out", required=True, help="metrics.json path")
    p.add_argument("--config", help="optional config to echo alongside")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="component / k / L sweeps")
    p.add_argument("--sweep", required=True, choices=("component", "k", "L"))
    p.add_argument("--data", required=True, help="directory with train/test.jsonl")
    p.add_argument("--out", required=True)
    p.add_argument("--pretrain-epochs", type=int, default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        ConfigError, CheckpointError, CorpusFormatError, ContractError,
        ShapeError, OSError,
    ) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
