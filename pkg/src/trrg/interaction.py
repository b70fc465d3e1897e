"""Cross-modal interaction: independent two-stream self-attention over
visual and clue tokens, learnable-query compression into fixed-length
token sets, and the disease-aware consistency loss.

The stream blocks are multi-head pre-norm attention with residuals and a
feed-forward sublayer. The query path follows the bare scaled-dot
attention chain E^e = Attn(E, E, E), E^v = FFN(Attn(E^e, V', V')),
E^c = FFN(Attn(E^e, C', C')) with per-stream feed-forward weights and a
residual only around the feed-forward.
"""

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import ContractError, Tensor


def flatten_clues(c_s):
    """(k, r, d) selected clues -> (k*r, d) clue tokens, clue-major."""
    k, r, d = c_s.shape
    return ag.reshape(c_s, (k * r, d))


class StreamBlock(nn.Module):
    """Self-attention over one token stream (Q/K/V projections + FFN).

    The residual around attention is only applicable when the stream
    already lives in the model dimension; when the projections change
    dimension it is skipped.
    """

    def __init__(self, d_model, heads, rng, d_in=None):
        d_in = d_model if d_in is None else d_in
        self.residual = d_in == d_model
        self.ln1 = nn.LayerNorm(d_in)
        self.attn = nn.MultiHeadAttention(d_model, heads, rng, d_in=d_in)
        self.ln2 = nn.LayerNorm(d_model)
        self.ffn = nn.FeedForward(d_model, rng)

    def __call__(self, x):
        normed = self.ln1(x)
        attended = self.attn(normed, normed)
        x = ag.add(x, attended) if self.residual else attended
        return ag.add(x, self.ffn(self.ln2(x)))


class InteractionModule(nn.Module):
    """Two stream blocks plus shared learnable queries and per-stream FFNs."""

    def __init__(self, config, rng):
        d, d_llm = config.d, config.d_llm
        heads = config.heads
        self.depth = config.interaction_layers
        self.visual_stream = [
            StreamBlock(d_llm, heads, rng) for _ in range(self.depth)
        ]
        self.clue_stream = [
            StreamBlock(d_llm, heads, rng, d_in=d if i == 0 else d_llm)
            for i in range(self.depth)
        ]
        self.queries = nn.normal_param(rng, (config.query_len, d_llm), 0.02)
        self.ln_v = nn.LayerNorm(d_llm)
        self.ffn_v = nn.FeedForward(d_llm, rng)
        self.ln_c = nn.LayerNorm(d_llm)
        self.ffn_c = nn.FeedForward(d_llm, rng)

    def self_attend_streams(self, visual_tokens, clue_tokens):
        """Independently self-attend each stream; no cross-stream leakage."""
        if visual_tokens.shape[0] == 0 or clue_tokens.shape[0] == 0:
            raise ContractError("both streams must be nonempty")
        v = visual_tokens
        for block in self.visual_stream:
            v = block(v)
        c = clue_tokens
        for block in self.clue_stream:
            c = block(c)
        return v, c

    def query_compress(self, v_prime, c_prime):
        """Shared self-attended queries attend into each stream separately."""
        shared = ag.scaled_dot_attention(self.queries, self.queries, self.queries)
        v_attended = ag.scaled_dot_attention(shared, v_prime, v_prime)
        c_attended = ag.scaled_dot_attention(shared, c_prime, c_prime)
        e_v = ag.add(v_attended, self.ffn_v(self.ln_v(v_attended)))
        e_c = ag.add(c_attended, self.ffn_c(self.ln_c(c_attended)))
        return e_v, e_c

    def __call__(self, visual_tokens, clue_tokens):
        v_prime, c_prime = self.self_attend_streams(visual_tokens, clue_tokens)
        return self.query_compress(v_prime, c_prime)


def dc_loss(e_v, e_c):
    """Negative mean cosine similarity over aligned query positions.

    Always in [-1, 1]: -1 when the two token sets coincide row-wise, 0
    when rows are orthogonal, +1 when negated.
    """
    if e_v.shape != e_c.shape:
        raise ContractError(f"shape mismatch: {e_v.shape} vs {e_c.shape}")
    norms_v = np.linalg.norm(e_v.data, axis=1)
    norms_c = np.linalg.norm(e_c.data, axis=1)
    if not (norms_v.all() and norms_c.all()):
        raise ContractError("cosine undefined for a zero row")
    dots = ag.tensor_sum(ag.mul(e_v, e_c), axis=1)
    nv = ag.sqrt(ag.tensor_sum(ag.mul(e_v, e_v), axis=1))
    nc = ag.sqrt(ag.tensor_sum(ag.mul(e_c, e_c), axis=1))
    cosines = ag.div(dots, ag.mul(nv, nc))
    return ag.mul(ag.mean(cosines), Tensor(-1.0))
