"""End-to-end run drivers used by the CLI and the test harness: stage-1
pretraining, stage-2 fine-tuning, report generation, evaluation, and the
ablation sweeps. Every run is deterministic given its seed and writes a
CSV/JSON record plus a rendered figure into its output directory.
"""

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import figures
from .autograd import ContractError
from .checkpoint import load_into, load_model, save_model
from .config import ModelConfig, echo_resolved
from .corpus import Vocabulary, read_jsonl
from .decoder import GenerationConfig
from .metrics import evaluate_pairs, make_pairs
from .model import ReportModel, finetune_step
from .nn import Adam
from .pretrain import PretrainModel, pretrain_step


def data_workers():
    """Worker count for data preparation, from TRRG_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("TRRG_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Order-preserving map, threaded when TRRG_THREADS > 1."""
    workers = data_workers()
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def build_vocab(studies):
    return Vocabulary.build([s.report for s in studies])


def _batches(indices, size):
    for start in range(0, len(indices), size):
        yield indices[start : start + size]


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def run_pretrain(config, studies, out_dir, epochs=None):
    """Stage 1: contrastive alignment. Writes stage1.ckpt, loss CSV, figure."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    epochs = config.epochs if epochs is None else epochs

    vocab = build_vocab(studies)
    config = config.replace(vocab_size=len(vocab))
    echo_resolved(config, out_dir)

    model = PretrainModel(config, np.random.default_rng(config.seed))
    optimizer = Adam(model.trainable_parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed + 1)

    rows = []
    step = 0
    for _ in range(epochs):
        order = rng.permutation(len(studies))
        for batch in _batches(order, config.batch_size):
            if len(batch) < 2:
                continue
            loss = pretrain_step(
                [studies[i] for i in batch], model, vocab, optimizer, rng,
                tau=config.tau,
            )
            step += 1
            rows.append((step, loss))

    _write_csv(out_dir / "pretrain_loss.csv", ("step", "loss"), rows)
    figures.loss_curve(
        out_dir / "pretrain_loss.csv", out_dir / "pretrain_loss.png"
    )
    ckpt = out_dir / "stage1.ckpt"
    save_model(ckpt, model.named_parameters(), config, vocab.id_to_token)
    epoch_steps = max(1, len(rows) // max(1, epochs))
    final_epoch_mean = float(np.mean([r[1] for r in rows[-epoch_steps:]]))
    return ckpt, final_epoch_mean


class FrozenParameterError(AssertionError):
    """A frozen encoder parameter changed during fine-tuning."""


def _restore_encoders(model, stage1_arrays):
    names = [
        n for n in model.named_parameters() if n.startswith(("vision.", "text."))
    ]
    load_into(model.named_parameters(), stage1_arrays, names)


def run_finetune(config, stage1_path, studies, out_dir, epochs=None):
    """Stage 2: fine-tune mapper, interaction, queries, and decoder.

    The vision/text encoders are loaded from the stage-1 checkpoint and
    frozen; their bit-identity is asserted on exit.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    epochs = config.epochs if epochs is None else epochs

    stage1_arrays, stage1_config, vocab_tokens = load_model(stage1_path)
    vocab = Vocabulary(vocab_tokens[4:])
    if vocab.id_to_token != vocab_tokens:
        raise ContractError("stage-1 checkpoint vocabulary is malformed")
    config = config.replace(vocab_size=stage1_config.vocab_size)
    echo_resolved(config, out_dir)

    model = ReportModel(config, np.random.default_rng(config.seed))
    _restore_encoders(model, stage1_arrays)
    model.freeze_encoders()
    frozen_before = model.encoder_state()

    # tokenization is the only data-loading stage worth parallelizing
    parallel_map(lambda s: vocab.encode(s.report), studies)

    optimizer = Adam(model.trainable_parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed + 2)

    rows = []
    step = 0
    for _ in range(epochs):
        bank = model.build_clue_bank(vocab, rng)
        order = rng.permutation(len(studies))
        for batch in _batches(order, config.batch_size):
            lm, dc, total = finetune_step(
                [studies[i] for i in batch], model, bank, vocab, optimizer
            )
            step += 1
            rows.append((step, lm, dc, total))

    frozen_after = model.encoder_state()
    for name, before in frozen_before.items():
        if frozen_after[name] != before:
            raise FrozenParameterError(f"frozen parameter {name} changed")

    _write_csv(out_dir / "finetune_loss.csv", ("step", "lm", "dc", "total"), rows)
    figures.loss_curve(
        out_dir / "finetune_loss.csv", out_dir / "finetune_loss.png",
        columns=("lm", "dc", "total"),
    )
    ckpt = out_dir / "stage2.ckpt"
    save_model(ckpt, model.named_parameters(), config, vocab.id_to_token)
    return ckpt, rows


def load_report_model(ckpt_path):
    """Rebuild a ReportModel (and its vocabulary) from a checkpoint."""
    arrays, config, vocab_tokens = load_model(ckpt_path)
    vocab = Vocabulary(vocab_tokens[4:])
    model = ReportModel(config, np.random.default_rng(config.seed))
    load_into(model.named_parameters(), arrays)
    model.freeze_encoders()
    return model, vocab


def run_generate(ckpt_path, studies, hyps_path, clues_path=None, gen_config=None):
    """Decode reports for every study; write hypotheses JSONL + clues.json."""
    model, vocab = load_report_model(ckpt_path)
    # inference prompts: fixed draw from the seed lineage used in training
    bank = model.build_clue_bank(
        vocab, np.random.default_rng(model.config.seed + 3)
    )
    gen_config = gen_config or GenerationConfig()

    clue_dump = {}
    with open(hyps_path, "w", encoding="utf-8") as fh:
        for study in studies:
            text, clue_info = model.generate_report(study, bank, vocab, gen_config)
            fh.write(json.dumps({"id": study.id, "hypothesis": text}) + "\n")
            clue_dump[study.id] = clue_info
    if clues_path is not None:
        with open(clues_path, "w", encoding="utf-8") as fh:
            json.dump(clue_dump, fh, indent=2, sort_keys=True)
    return hyps_path


def read_hypotheses(path):
    hyps = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            for key in ("id", "hypothesis"):
                if key not in record:
                    raise ContractError(f"{path} line {lineno}: missing {key!r}")
            hyps[record["id"]] = record["hypothesis"]
    if not hyps:
        raise ContractError(f"{path}: no hypotheses")
    return hyps


def run_evaluate(refs_path, hyps_path, out_path):
    """Score hypotheses against references; write metrics.json + figure."""
    references = {s.id: s.report for s in read_jsonl(refs_path)}
    hypotheses = read_hypotheses(hyps_path)
    pairs = make_pairs(references, hypotheses)
    metrics = evaluate_pairs(pairs)
    out_path = Path(out_path)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    figures.metrics_bars(metrics, out_path.with_suffix(".png"))
    return metrics


def _sweep_variants(sweep):
    if sweep == "component":
        return [("variant", v) for v in ("base", "dci", "dci_cmci", "full")]
    if sweep == "k":
        return [("k", k) for k in (1, 2, 3, 4, 5)]
    if sweep == "L":
        return [("query_len", L) for L in (4, 8, 16, 32)]
    raise ContractError(f"unknown sweep {sweep!r} (expected component, k, or L)")


def run_ablation(sweep, config, train_studies, test_studies, out_dir,
                 pretrain_epochs=None, finetune_epochs=None):
    """Train and evaluate each sweep variant with a shared seed.

    Emits sweep.csv (one row per variant, full metric columns) and a
    rendered figure; per-variant artifacts land in subdirectories.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    variants = _sweep_variants(sweep)
    echo_resolved(config, out_dir)

    stage1, _ = run_pretrain(
        config, train_studies, out_dir / "stage1", epochs=pretrain_epochs
    )

    rows = []
    metric_keys = None
    for field, value in variants:
        label = f"{field}={value}" if field != "variant" else str(value)
        variant_cfg = config.replace(**{field: value})
        if field != "variant":
            variant_cfg = variant_cfg.replace(variant="full")
        run_dir = out_dir / label.replace("=", "-")
        ckpt, _ = run_finetune(
            variant_cfg, stage1, train_studies, run_dir, epochs=finetune_epochs
        )
        hyps = run_generate(ckpt, test_studies, run_dir / "hyps.jsonl",
                            run_dir / "clues.json")
        references = {s.id: s.report for s in test_studies}
        metrics = evaluate_pairs(make_pairs(references, read_hypotheses(hyps)))
        if metric_keys is None:
            metric_keys = sorted(metrics)
        rows.append([label] + [metrics[k] for k in metric_keys])

    header = ["setting"] + metric_keys
    _write_csv(out_dir / "sweep.csv", header, rows)
    figures.sweep_chart(header, rows, out_dir / "sweep.png", title=f"{sweep} sweep")
    return rows
