"""Autoregressive report decoder: causal transformer blocks with
cross-attention over a prefix of conditioning tokens, language-modeling
loss, the combined training objective, and greedy/beam decoding.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import ContractError
from .corpus import BOS, EOS


@dataclass
class GenerationConfig:
    max_len: int = 60
    strategy: str = "greedy"  # "greedy" or "beam"
    beam_width: int = 3
    eos_id: int = EOS

    def __post_init__(self):
        if self.max_len < 1:
            raise ContractError("max_len must be >= 1")
        if self.strategy not in ("greedy", "beam"):
            raise ContractError(f"unknown strategy {self.strategy!r}")


class ReportDecoder(nn.Module):
    def __init__(self, vocab_size, max_len, d_llm, heads, depth, rng):
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.tok = nn.Embedding(vocab_size, d_llm, rng)
        self.pos = nn.normal_param(rng, (max_len, d_llm), d_llm**-0.5)
        self.blocks = [nn.DecoderBlock(d_llm, heads, rng) for _ in range(depth)]
        self.ln_out = nn.LayerNorm(d_llm)
        self.out_proj = nn.Linear(d_llm, vocab_size, rng)

    def logits(self, prefix, input_ids):
        """(T, vocab) next-token logits for teacher-forced `input_ids`."""
        t = len(input_ids)
        if t > self.max_len:
            raise ContractError(
                f"sequence length {t} exceeds decoder positions {self.max_len}"
            )
        x = ag.add(self.tok(list(input_ids)), ag.narrow(self.pos, 0, 0, t))
        mask = nn.causal_mask(t)
        for block in self.blocks:
            x = block(x, prefix, mask)
        return self.out_proj(self.ln_out(x))


def lm_loss(decoder, prefix, target_ids):
    """Mean negative log-likelihood of a BOS-prefixed, EOS-terminated report."""
    target_ids = list(target_ids)
    if len(target_ids) < 2 or target_ids[0] != BOS:
        raise ContractError("targets must be BOS-prefixed and EOS-terminated")
    logits = decoder.logits(prefix, target_ids[:-1])
    return ag.mean(ag.cross_entropy_with_logits(logits, target_ids[1:]))


def total_loss(lm, dc):
    """The unweighted training objective: language-modeling + consistency."""
    return ag.add(lm, dc)


def _log_probs(logits_row):
    shifted = logits_row - logits_row.max()
    return shifted - math.log(np.exp(shifted).sum())


def greedy_decode(decoder, prefix, config):
    ids = [BOS]
    for _ in range(config.max_len):
        logits = decoder.logits(prefix, ids).data[-1]
        nxt = int(np.argmax(logits))
        ids.append(nxt)
        if nxt == config.eos_id:
            break
    return ids[1:]


def beam_decode(decoder, prefix, config):
    """Width-b beam search, final choice by length-normalized log-prob."""
    width = config.beam_width
    beams = [([BOS], 0.0)]
    finished = []
    for _ in range(config.max_len):
        candidates = []
        for ids, score in beams:
            logp = _log_probs(decoder.logits(prefix, ids).data[-1])
            top = np.argsort(-logp, kind="stable")[:width]
            for tok in top:
                candidates.append((ids + [int(tok)], score + float(logp[tok])))
        candidates.sort(key=lambda b: (-b[1], b[0]))
        beams = []
        for ids, score in candidates:
            if ids[-1] == config.eos_id:
                finished.append((ids, score))
            else:
                beams.append((ids, score))
            if len(beams) == width:
                break
        if not beams:
            break
    pool = finished if finished else beams
    best = max(pool, key=lambda b: b[1] / (len(b[0]) - 1))
    return best[0][1:]


def generate(decoder, prefix, config):
    """Token ids of one decoded report (no BOS; EOS kept if produced)."""
    if config.strategy == "beam" and config.beam_width > 1:
        return beam_decode(decoder, prefix, config)
    return greedy_decode(decoder, prefix, config)


def sequence_log_prob(decoder, prefix, ids):
    """log P(ids + EOS termination as given) under the decoder."""
    full = [BOS] + list(ids)
    logits = decoder.logits(prefix, full[:-1]).data
    total = 0.0
    for pos, tok in enumerate(full[1:]):
        total += float(_log_probs(logits[pos])[tok])
    return total
