"""Disease-clue prompting: build templated prompts, encode them with the
frozen text encoder, weight them against the visual expert token, and
select the top-k weighted clue embeddings for injection.

The prompt template is "Clue: <severity> <disease> at <location>" with
absent slots elided. Clue weights are a softmax over the m dot products
between the visual expert token and each clue's CLS embedding; the
selected embeddings drop the CLS row, giving a k x r x d block.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import ContractError, ShapeError, Tensor

log = logging.getLogger(__name__)

# chance that an optional slot is filled when prompts are resampled
_SLOT_PROB = 0.8


@dataclass
class CluePrompt:
    disease: str
    severity: str | None
    location: str | None

    @property
    def rendered(self):
        parts = ["Clue:"]
        if self.severity:
            parts.append(self.severity)
        parts.append(self.disease)
        if self.location:
            parts.append(f"at {self.location}")
        return " ".join(parts)


@dataclass
class ClueBank:
    prompts: list  # m CluePrompt records
    embeddings: np.ndarray  # (m, r+1, d); row 0 of each clue is CLS
    cls: np.ndarray  # (m, d) expert tokens

    @property
    def size(self):
        return len(self.prompts)

    def token_rows(self):
        """(m, r, d) clue token embeddings without the CLS row."""
        return self.embeddings[:, 1:, :]


def build_prompts(catalog, rng, samples_per_disease=1):
    """One freshly sampled prompt per disease.

    Severity and location slots are independently present with fixed
    probability and resampled on every call (one call per epoch). When
    `samples_per_disease` > 1 that many candidate combinations are drawn
    and one is kept uniformly.
    """
    if samples_per_disease < 1:
        raise ContractError("samples_per_disease must be >= 1")
    prompts = []
    for disease in catalog.diseases:
        candidates = []
        for _ in range(samples_per_disease):
            severity = (
                catalog.severities[rng.integers(len(catalog.severities))]
                if rng.uniform() < _SLOT_PROB
                else None
            )
            location = (
                catalog.locations[rng.integers(len(catalog.locations))]
                if rng.uniform() < _SLOT_PROB
                else None
            )
            candidates.append(CluePrompt(disease, severity, location))
        prompts.append(candidates[rng.integers(len(candidates))])
    return prompts


def encode_clue_bank(prompts, text_encoder, vocab, r):
    """Encode prompts with the frozen text encoder into a ClueBank.

    Each clue embedding is the CLS row plus exactly r token rows, padded
    with zeros or truncated (with a logged warning) as needed.
    """
    embeddings = []
    for prompt in prompts:
        ids = vocab.encode(prompt.rendered)
        if len(ids) > r:
            log.warning(
                "clue prompt %r has %d tokens, truncating to %d",
                prompt.rendered, len(ids), r,
            )
            ids = ids[:r]
        encoded = text_encoder(ids).data
        padded = np.zeros((r + 1, encoded.shape[1]), dtype=encoded.dtype)
        padded[: encoded.shape[0]] = encoded
        embeddings.append(padded)
    embeddings = np.stack(embeddings)
    return ClueBank(
        prompts=list(prompts), embeddings=embeddings, cls=embeddings[:, 0, :].copy()
    )


def clue_weights(v_cls, bank):
    """Softmax over the m clues of (v_cls . c_cls^i); a (1, m) tensor."""
    if v_cls.shape[-1] != bank.cls.shape[-1]:
        raise ShapeError(
            f"expert token dim {v_cls.shape} does not match bank {bank.cls.shape}"
        )
    logits = ag.matmul(v_cls, ag.transpose(Tensor(bank.cls)))
    return ag.softmax(logits, axis=-1)


def weight_clues(bank, weights):
    """Hadamard-scale each clue embedding by its weight; (m, r+1, d)."""
    scale = ag.reshape(weights, (bank.size, 1, 1))
    return ag.mul(Tensor(bank.embeddings), scale)


def topk_indices(weights, k):
    """Indices of the k largest weights, descending, ties to lower index."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if not 1 <= k <= w.size:
        raise ContractError(f"k must be in [1, {w.size}], got {k}")
    order = np.argsort(-w, kind="stable")
    return [int(i) for i in order[:k]]


def select_topk(weighted, weights, k):
    """The k most heavily weighted clue embeddings, CLS row dropped.

    Returns (c_s, indices) with c_s of shape (k, r, d), ordered by
    descending weight.
    """
    indices = topk_indices(weights.data, k)
    selected = ag.gather_rows(weighted, indices)
    return ag.narrow(selected, 1, 1, weighted.shape[1] - 1), indices


def inject_clues(v_cls, bank, k):
    """The full weighting + selection path: (c_s, weights, indices).

    Ranking uses the pre-softmax dot products: softmax is strictly
    order-preserving, so the selected set matches ranking by weight while
    staying exact under any positive rescaling of the expert token.
    """
    weights = clue_weights(v_cls, bank)
    weighted = weight_clues(bank, weights)
    scores = np.asarray(v_cls.data) @ bank.cls.T
    indices = topk_indices(scores, k)
    selected = ag.gather_rows(weighted, indices)
    c_s = ag.narrow(selected, 1, 1, weighted.shape[1] - 1)
    return c_s, weights, indices
