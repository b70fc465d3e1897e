"""Stage-1 contrastive alignment: sentence sampling plus bidirectional
InfoNCE between image expert embeddings and sentence CLS embeddings.

Similarity is cosine over the unnormalized encoder outputs; each
direction is the mean over the batch of the per-example cross-entropy
against in-batch negatives, and the stage loss is their sum.
"""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import ContractError, Tensor
from .corpus import sample_sentence
from .encoders import TextEncoder, VisionEncoder, patch_rows, pool_expert_token


@dataclass
class ContrastiveBatch:
    image: Tensor  # (N, d) expert embeddings v'
    text: Tensor  # (N, d) sentence CLS embeddings t
    tau: float = 0.07

    def __post_init__(self):
        if self.image.shape != self.text.shape or self.image.shape[0] < 2:
            raise ContractError(
                f"need >= 2 index-aligned pairs, got {self.image.shape} "
                f"vs {self.text.shape}"
            )
        if self.tau <= 0:
            raise ContractError(f"temperature must be positive, got {self.tau}")


def similarity(a, b):
    """Cosine similarity of two vectors, as a scalar tensor in [-1, 1]."""
    if not np.linalg.norm(a.data) or not np.linalg.norm(b.data):
        raise ContractError("cosine similarity of a zero vector is undefined")
    flat_a = ag.reshape(a, (-1,))
    flat_b = ag.reshape(b, (-1,))
    dot = ag.tensor_sum(ag.mul(flat_a, flat_b))
    return ag.div(dot, ag.mul(ag.l2_norm(flat_a), ag.l2_norm(flat_b)))


def _unit_rows(x):
    if not np.linalg.norm(x.data, axis=1).all():
        raise ContractError("zero embedding row in contrastive batch")
    norms = ag.sqrt(ag.tensor_sum(ag.mul(x, x), axis=1, keepdims=True))
    return ag.div(x, norms)


def _nce(anchors, candidates, tau):
    logits = ag.mul(
        ag.matmul(_unit_rows(anchors), ag.transpose(_unit_rows(candidates))),
        Tensor(1.0 / tau),
    )
    targets = np.arange(anchors.shape[0])
    return ag.mean(ag.cross_entropy_with_logits(logits, targets))


def infonce_v2t(batch):
    """Text anchors against image candidates; mean over the batch."""
    return _nce(batch.text, batch.image, batch.tau)


def infonce_t2v(batch):
    """Image anchors against text candidates; mean over the batch."""
    return _nce(batch.image, batch.text, batch.tau)


def contrastive_loss(batch):
    return ag.add(infonce_v2t(batch), infonce_t2v(batch))


class PretrainModel(nn.Module):
    """Vision + text encoders trained jointly in stage 1."""

    def __init__(self, config, rng):
        self.vision = VisionEncoder(
            config.patch_size, config.n_patches, config.d, config.heads,
            config.encoder_depth, rng,
        )
        self.text = TextEncoder(
            config.vocab_size, config.max_text_len, config.d, config.heads,
            config.encoder_depth, rng,
        )

    def expert_token(self, pixels):
        return pool_expert_token(patch_rows(self.vision(pixels)))

    def sentence_embedding(self, ids):
        return ag.narrow(self.text(ids), 0, 0, 1)


def encode_batch(model, studies, vocab, rng, tau):
    """Sample one sentence per study and embed both modalities."""
    images, texts = [], []
    for study in studies:
        sentence = sample_sentence(study.report, rng)
        images.append(model.expert_token(study.pixels))
        texts.append(model.sentence_embedding(vocab.encode(sentence)))
    return ContrastiveBatch(
        image=ag.concat(images, axis=0), text=ag.concat(texts, axis=0), tau=tau
    )


def pretrain_step(studies, model, vocab, optimizer, rng, tau=0.07):
    """One contrastive gradient step; returns the scalar stage loss."""
    if len(studies) < 2:
        raise ContractError("contrastive batch needs at least 2 studies")
    batch = encode_batch(model, studies, vocab, rng, tau)
    loss = contrastive_loss(batch)
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return loss.item()
