"""Neural building blocks on top of the autograd engine.

Blocks are pre-norm with residual connections; the feed-forward hidden
size is 4x the model dimension and the activation is the project-wide
smooth nonlinearity.
"""

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Parameter(Tensor):
    """A tensor registered as model state (checkpointed even when frozen)."""

    def __init__(self, data, requires_grad=True):
        super().__init__(data, requires_grad=requires_grad)


def normal_param(rng, shape, std):
    return Parameter(rng.normal(0.0, std, size=shape))


def zeros_param(shape):
    return Parameter(np.zeros(shape))


def ones_param(shape):
    return Parameter(np.ones(shape))


class Module:
    """Base class with recursive parameter discovery over attributes."""

    def named_parameters(self, prefix=""):
        params = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Parameter):
                params[key] = value
            elif isinstance(value, Module):
                params.update(value.named_parameters(f"{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        params.update(item.named_parameters(f"{key}.{i}."))
                    elif isinstance(item, Parameter):
                        params[f"{key}.{i}"] = item
        return params

    def parameters(self):
        return list(self.named_parameters().values())

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False

    def unfreeze(self):
        for p in self.parameters():
            p.requires_grad = True


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True, std=None):
        self.w = normal_param(rng, (d_in, d_out), d_in**-0.5 if std is None else std)
        self.b = zeros_param((d_out,)) if bias else None

    def __call__(self, x):
        out = ag.matmul(x, self.w)
        if self.b is not None:
            out = ag.add(out, self.b)
        return out


class LayerNorm(Module):
    def __init__(self, d, eps=1e-5):
        self.gain = ones_param((d,))
        self.bias = zeros_param((d,))
        self.eps = eps

    def __call__(self, x):
        return ag.layer_norm(x, self.gain, self.bias, eps=self.eps)


class Embedding(Module):
    def __init__(self, count, d, rng, std=None):
        self.table = normal_param(rng, (count, d), d**-0.5 if std is None else std)

    def __call__(self, ids):
        return ag.embedding_lookup(self.table, ids)


# residual-path output projections start small so blocks open near the
# identity; keeps pooled features informative from step one
RESIDUAL_OUT_STD = 0.02


class FeedForward(Module):
    def __init__(self, d, rng, hidden=None, out_std=RESIDUAL_OUT_STD):
        hidden = 4 * d if hidden is None else hidden
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, d, rng, std=out_std)

    def __call__(self, x):
        return self.fc2(ag.gelu(self.fc1(x)))


class MultiHeadAttention(Module):
    """Linear Q/K/V projections, per-head scaled dot attention, output mix.

    `d_in` may differ from `d_model`; the projections carry the change of
    dimension (used by the clue stream when text and decoder dims differ).
    """

    def __init__(self, d_model, heads, rng, d_in=None, out_std=RESIDUAL_OUT_STD):
        if d_model % heads != 0:
            raise ag.ShapeError(f"heads {heads} must divide model dim {d_model}")
        d_in = d_model if d_in is None else d_in
        self.heads = heads
        self.d_model = d_model
        self.wq = Linear(d_in, d_model, rng, bias=False)
        self.wk = Linear(d_in, d_model, rng, bias=False)
        self.wv = Linear(d_in, d_model, rng, bias=False)
        self.wo = Linear(d_model, d_model, rng, bias=False, std=out_std)

    def __call__(self, query, keyvalue, mask=None):
        q = self._split(self.wq(query))
        k = self._split(self.wk(keyvalue))
        v = self._split(self.wv(keyvalue))
        scale = Tensor(1.0 / np.sqrt(self.d_model // self.heads))
        scores = ag.mul(ag.matmul(q, ag.transpose(k)), scale)
        if mask is not None:
            scores = ag.add(scores, mask)
        mixed = ag.matmul(ag.softmax(scores, axis=-1), v)
        return self.wo(self._join(mixed))

    def _split(self, x):
        t, _ = x.shape
        head_dim = self.d_model // self.heads
        return ag.permute(ag.reshape(x, (t, self.heads, head_dim)), (1, 0, 2))

    def _join(self, x):
        _, t, _ = x.shape
        return ag.reshape(ag.permute(x, (1, 0, 2)), (t, self.d_model))


def causal_mask(length):
    """Additive mask: -1e9 above the diagonal, broadcast over heads."""
    mask = np.triu(np.full((length, length), -1e9), k=1)
    return Tensor(mask[None, :, :])


class EncoderBlock(Module):
    """Pre-norm self-attention + feed-forward, both with residuals."""

    def __init__(self, d, heads, rng, out_std=RESIDUAL_OUT_STD):
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng, out_std=out_std)
        self.ln2 = LayerNorm(d)
        self.ffn = FeedForward(d, rng, out_std=out_std)

    def __call__(self, x):
        normed = self.ln1(x)
        x = ag.add(x, self.attn(normed, normed))
        x = ag.add(x, self.ffn(self.ln2(x)))
        return x


class DecoderBlock(Module):
    """Causal self-attention, cross-attention over a prefix, feed-forward."""

    def __init__(self, d, heads, rng):
        self.ln1 = LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, heads, rng)
        self.ln3 = LayerNorm(d)
        self.ffn = FeedForward(d, rng)

    def __call__(self, x, prefix, mask):
        normed = self.ln1(x)
        x = ag.add(x, self.self_attn(normed, normed, mask=mask))
        x = ag.add(x, self.cross_attn(self.ln2(x), prefix))
        x = ag.add(x, self.ffn(self.ln3(x)))
        return x


class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self._m[i] = self.beta1 * self._m[i] + (1 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1 - self.beta2) * g * g
            m_hat = self._m[i] / (1 - self.beta1**self.t)
            v_hat = self._v[i] / (1 - self.beta2**self.t)
            p.data = p.data - (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(
                p.data.dtype
            )

    def zero_grad(self):
        for p in self.params:
            p.grad = None
