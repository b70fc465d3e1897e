"""Synthetic chest-radiograph/report corpus with ground-truth disease labels.

Each study is a 64x64 grayscale image plus a templated 2-6 sentence report.
Positive diseases stamp a per-disease glyph texture at one of eight
anatomical locations, with amplitude scaled by severity; the report names
each positive disease in exactly one non-negated sentence and may add one
negated mention of an absent disease.
"""

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .autograd import ContractError

DISEASES = (
    "atelectasis",
    "cardiomegaly",
    "consolidation",
    "edema",
    "effusion",
    "emphysema",
    "fibrosis",
    "hernia",
    "infiltration",
    "mass",
    "nodule",
    "opacity",
    "pneumonia",
    "pneumothorax",
)

SEVERITIES = ("mild", "moderate", "severe")

LOCATIONS = (
    "left upper lobe",
    "left lower lobe",
    "right upper lobe",
    "right lower lobe",
    "left lung",
    "right lung",
    "cardiac silhouette",
    "pleural space",
)

# top-left stamp anchor per location, aligned to the 8x8 patch grid
_LOCATION_ANCHORS = {
    "left upper lobe": (8, 8),
    "left lower lobe": (40, 8),
    "right upper lobe": (8, 48),
    "right lower lobe": (40, 48),
    "left lung": (24, 8),
    "right lung": (24, 48),
    "cardiac silhouette": (32, 24),
    "pleural space": (48, 24),
}

_SEVERITY_AMPLITUDE = {"mild": 0.5, "moderate": 0.75, "severe": 1.0}

_NORMAL_SENTENCES = (
    "the heart size is normal .",
    "the mediastinal contours are within normal limits .",
    "the lungs are well expanded .",
    "no acute osseous abnormality is identified .",
    "the trachea is midline .",
    "visualized soft tissues are unremarkable .",
)

# draw probabilities for 0..3 positive diseases per study
_COUNT_PROBS = (0.25, 0.4, 0.25, 0.1)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
_SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


@dataclass
class DiseaseCatalog:
    """The fixed disease/severity/location inventory and glyph textures."""

    diseases: tuple = DISEASES
    severities: tuple = SEVERITIES
    locations: tuple = LOCATIONS
    glyph_size: int = 16

    def glyph(self, disease):
        """Deterministic high-contrast texture for one disease, in {0, 1}."""
        index = self.diseases.index(disease)
        rng = np.random.default_rng(977 + index)
        pattern = rng.uniform(size=(self.glyph_size, self.glyph_size)) < 0.5
        return pattern.astype(np.float64)


@dataclass
class GeneratorConfig:
    height: int = 64
    width: int = 64
    noise_amplitude: float = 0.1
    negation_prob: float = 0.3
    count_probs: tuple = _COUNT_PROBS


@dataclass
class SyntheticStudy:
    id: str
    pixels: np.ndarray  # (H, W) float in [0, 1]
    report: str
    labels: dict = field(default_factory=dict)  # disease -> 0|1


def generate_study(study_id, seed, config=None, catalog=None):
    config = config or GeneratorConfig()
    catalog = catalog or DiseaseCatalog()
    rng = np.random.default_rng(seed)

    pixels = rng.uniform(0.0, config.noise_amplitude, size=(config.height, config.width))

    count = int(rng.choice(len(config.count_probs), p=config.count_probs))
    positives = sorted(rng.choice(len(catalog.diseases), size=count, replace=False))

    sentences = list(rng.choice(_NORMAL_SENTENCES, size=2, replace=False))
    labels = {name: 0 for name in catalog.diseases}
    g = catalog.glyph_size
    for index in positives:
        disease = catalog.diseases[index]
        labels[disease] = 1
        severity = catalog.severities[rng.integers(len(catalog.severities))]
        location = catalog.locations[rng.integers(len(catalog.locations))]
        row, col = _LOCATION_ANCHORS[location]
        amplitude = _SEVERITY_AMPLITUDE[severity]
        pixels[row : row + g, col : col + g] += amplitude * catalog.glyph(disease)
        sentences.append(f"there is {severity} {disease} in the {location} .")

    negatives = [d for d in catalog.diseases if labels[d] == 0]
    if negatives and rng.uniform() < config.negation_prob:
        disease = negatives[rng.integers(len(negatives))]
        sentences.append(f"no {disease} is seen .")

    pixels = np.round(np.clip(pixels, 0.0, 1.0), 4)
    return SyntheticStudy(
        id=study_id, pixels=pixels, report=" ".join(sentences), labels=labels
    )


def generate_corpus(count, seed, config=None):
    """Deterministic corpus of `count` studies; per-study seeded sub-generators."""
    if count <= 0:
        raise ContractError(f"count must be positive, got {count}")
    config = config or GeneratorConfig()
    catalog = DiseaseCatalog()
    children = np.random.SeedSequence(seed).spawn(count)
    return [
        generate_study(f"study-{seed}-{i:05d}", child, config, catalog)
        for i, child in enumerate(children)
    ]


def split_sentences(report):
    """Non-empty sentences of a report, split on '.'."""
    parts = [p.strip() for p in report.split(".")]
    return [p for p in parts if p]


def sample_sentence(report, rng):
    """One uniformly sampled non-empty sentence (without its period)."""
    sentences = split_sentences(report)
    if not sentences:
        raise ContractError("cannot sample a sentence from an empty report")
    return sentences[rng.integers(len(sentences))]


def tokenize_text(text):
    """Lowercase word/punctuation tokens, punctuation kept as tokens."""
    return _TOKEN_RE.findall(text.lower())


def normalize_text(text):
    return " ".join(tokenize_text(text))


# the clue-prompt template language must be encodable even when the
# corpus reports never use it
_TEMPLATE_TOKENS = (
    ("clue", ":", "at")
    + DISEASES
    + SEVERITIES
    + tuple(t for loc in LOCATIONS for t in loc.split())
)


class Vocabulary:
    """Dense token-to-id map with fixed special tokens."""

    def __init__(self, tokens):
        self.id_to_token = list(_SPECIALS) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    @classmethod
    def build(cls, texts):
        seen = set(_TEMPLATE_TOKENS)
        for text in texts:
            seen.update(tokenize_text(text))
        return cls(sorted(seen))

    def __len__(self):
        return len(self.id_to_token)

    def encode(self, text):
        return [self.token_to_id.get(t, UNK) for t in tokenize_text(text)]

    def decode(self, ids):
        words = [
            self.id_to_token[i]
            for i in ids
            if i not in (PAD, BOS, EOS)
        ]
        return " ".join(words)


def tokenize(text, vocab):
    return vocab.encode(text)


def detokenize(ids, vocab):
    return vocab.decode(ids)


def write_jsonl(studies, path):
    with open(path, "w", encoding="utf-8") as fh:
        for study in studies:
            h, w = study.pixels.shape
            record = {
                "id": study.id,
                "h": h,
                "w": w,
                "pixels": [float(v) for v in study.pixels.reshape(-1)],
                "report": study.report,
                "labels": {k: int(v) for k, v in study.labels.items()},
            }
            fh.write(json.dumps(record) + "\n")


class CorpusFormatError(ValueError):
    """Raised for malformed corpus files, with the offending line number."""


def read_jsonl(path):
    studies = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise CorpusFormatError(f"line {lineno}: invalid JSON ({err})") from err
            for key in ("id", "h", "w", "pixels", "report", "labels"):
                if key not in record:
                    raise CorpusFormatError(f"line {lineno}: missing field {key!r}")
            h, w = record["h"], record["w"]
            pixels = np.asarray(record["pixels"], dtype=np.float64)
            if pixels.size != h * w:
                raise CorpusFormatError(
                    f"line {lineno}: pixels length {pixels.size} != h*w = {h * w}"
                )
            studies.append(
                SyntheticStudy(
                    id=record["id"],
                    pixels=pixels.reshape(h, w),
                    report=record["report"],
                    labels={k: int(v) for k, v in record["labels"].items()},
                )
            )
    return studies
