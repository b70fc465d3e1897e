"""Vision encoder, text encoder, visual mapper, and expert-token pooling.

Both encoders are two pre-norm transformer blocks over embedded tokens
with a learned leading pooled/CLS position. The visual mapper is the
row-wise affine map into the decoder dimension and is the only trainable
visual-path component during fine-tuning; the expert token is the plain
mean of the patch embeddings (the encoder's own pooled slot is ignored
for clue weighting).
"""

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import ShapeError, Tensor


def extract_patches(pixels, patch_size):
    """Row-major (n, patch_size**2) patch matrix from an (H, W) image."""
    pixels = np.asarray(pixels)
    h, w = pixels.shape
    if h % patch_size or w % patch_size:
        raise ShapeError(
            f"image {h}x{w} not divisible by patch size {patch_size}"
        )
    rows, cols = h // patch_size, w // patch_size
    grid = pixels.reshape(rows, patch_size, cols, patch_size)
    return grid.transpose(0, 2, 1, 3).reshape(rows * cols, patch_size * patch_size)


class VisionEncoder(nn.Module):
    def __init__(self, patch_size, n_patches, d, heads, depth, rng):
        self.patch_size = patch_size
        self.n_patches = n_patches
        self.patch_proj = nn.Linear(patch_size * patch_size, d, rng)
        self.pos = nn.normal_param(rng, (n_patches, d), 0.02)
        self.pooled = nn.normal_param(rng, (1, d), d**-0.5)
        # standard-scale residual outputs and no closing LayerNorm: the
        # mean-pooled expert token relies on glyph-amplitude differences
        # that per-row normalization would flatten
        self.blocks = [
            nn.EncoderBlock(d, heads, rng, out_std=d**-0.5) for _ in range(depth)
        ]

    def embed_patches(self, pixels):
        """Patch projection + positional table, before any attention mixing."""
        patches = extract_patches(pixels, self.patch_size)
        if patches.shape[0] != self.n_patches:
            raise ShapeError(
                f"expected {self.n_patches} patches, got {patches.shape[0]}"
            )
        return ag.add(self.patch_proj(Tensor(patches)), self.pos)

    def __call__(self, pixels):
        """Encode an (H, W) image into (n+1, d); row 0 is the pooled slot."""
        x = ag.concat([self.pooled, self.embed_patches(pixels)], axis=0)
        for block in self.blocks:
            x = block(x)
        return x


class TextEncoder(nn.Module):
    def __init__(self, vocab_size, max_len, d, heads, depth, rng):
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.tok = nn.Embedding(vocab_size, d, rng)
        self.pos = nn.normal_param(rng, (max_len, d), 0.02)
        self.cls = nn.normal_param(rng, (1, d), d**-0.5)
        # standard-scale residual outputs: the CLS row must see the
        # sentence content through attention from the first step
        self.blocks = [
            nn.EncoderBlock(d, heads, rng, out_std=d**-0.5) for _ in range(depth)
        ]
        self.ln_out = nn.LayerNorm(d)

    def __call__(self, ids):
        """Encode a token-id sequence into (len+1, d); row 0 is CLS."""
        ids = list(ids)
        if len(ids) > self.max_len:
            raise ShapeError(
                f"sequence length {len(ids)} exceeds positional table {self.max_len}"
            )
        if ids:
            tokens = ag.add(
                self.tok(ids), ag.narrow(self.pos, 0, 0, len(ids))
            )
            x = ag.concat([self.cls, tokens], axis=0)
        else:
            x = self.cls
        for block in self.blocks:
            x = block(x)
        return self.ln_out(x)


class VisualMapper(nn.Module):
    """Row-wise affine map from encoder dim to decoder dim."""

    def __init__(self, d, d_llm, rng):
        self.proj = nn.Linear(d, d_llm, rng)

    def __call__(self, patch_embeddings):
        return self.proj(patch_embeddings)


def pool_expert_token(patch_embeddings):
    """Mean of the n patch rows: the visual disease expert token, (1, d)."""
    return ag.mean(patch_embeddings, axis=0, keepdims=True)


def patch_rows(encoded):
    """Drop the leading pooled/CLS row of an (n+1, d) encoding."""
    return ag.narrow(encoded, 0, 1, encoded.shape[0] - 1)
