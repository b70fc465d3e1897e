"""Report-quality metrics: n-gram overlap scores and clinical-efficacy
precision/recall/F1 from a rule-based disease labeler.

BLEU is corpus-level modified n-gram precision with uniform weights and a
brevity penalty, no smoothing. ROUGE-L is the LCS F-measure (beta = 1.2)
averaged over pairs. CIDEr is the mean over n = 1..4 of TF-IDF n-gram
cosine similarity, scaled by 10 and averaged over pairs, with IDF taken
from the reference corpus.
"""

import math
from collections import Counter, defaultdict
from dataclasses import dataclass

from .autograd import ContractError
from .corpus import DISEASES, split_sentences, tokenize_text

NEGATION_CUES = ("no", "not", "without", "free of", "negative for")


@dataclass
class EvalPair:
    study_id: str
    reference: list  # tokens
    hypothesis: list  # tokens


def make_pairs(references, hypotheses):
    """Pair reference/hypothesis texts by study id.

    Both arguments map id -> text. Ids must match exactly.
    """
    missing = sorted(set(references) ^ set(hypotheses))
    if missing:
        raise ContractError(f"reference/hypothesis id mismatch: {missing}")
    if not references:
        raise ContractError("no evaluation pairs")
    return [
        EvalPair(sid, tokenize_text(references[sid]), tokenize_text(hypotheses[sid]))
        for sid in sorted(references)
    ]


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(pairs, n):
    """Corpus BLEU-n in [0, 1]."""
    if not 1 <= n <= 4:
        raise ContractError(f"bleu order must be in 1..4, got {n}")
    if not pairs:
        raise ContractError("bleu requires at least one pair")
    matched = [0] * n
    guessed = [0] * n
    hyp_len = 0
    ref_len = 0
    for pair in pairs:
        hyp_len += len(pair.hypothesis)
        ref_len += len(pair.reference)
        for order in range(1, n + 1):
            hyp_counts = _ngrams(pair.hypothesis, order)
            ref_counts = _ngrams(pair.reference, order)
            guessed[order - 1] += sum(hyp_counts.values())
            matched[order - 1] += sum(
                min(c, ref_counts[g]) for g, c in hyp_counts.items()
            )
    if any(g == 0 for g in guessed) or any(m == 0 for m in matched):
        return 0.0
    log_precision = sum(math.log(m / g) for m, g in zip(matched, guessed)) / n
    brevity = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return brevity * math.exp(log_precision)


def _lcs_length(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[len(a)][len(b)]


def rouge_l(pairs, beta=1.2):
    """Mean LCS-based F-measure over pairs, in [0, 1]."""
    if not pairs:
        raise ContractError("rouge_l requires at least one pair")
    total = 0.0
    for pair in pairs:
        if not pair.hypothesis or not pair.reference:
            continue
        lcs = _lcs_length(pair.hypothesis, pair.reference)
        precision = lcs / len(pair.hypothesis)
        recall = lcs / len(pair.reference)
        if precision > 0 and recall > 0:
            total += ((1 + beta**2) * precision * recall) / (
                recall + beta**2 * precision
            )
    return total / len(pairs)


def cider(pairs, max_order=4):
    """Mean TF-IDF n-gram cosine over n = 1..4, x10, averaged over pairs."""
    if len(pairs) < 2:
        raise ContractError("cider needs >= 2 pairs for a defined IDF")
    doc_freq = [defaultdict(int) for _ in range(max_order)]
    for pair in pairs:
        for order in range(1, max_order + 1):
            for gram in set(_ngrams(pair.reference, order)):
                doc_freq[order - 1][gram] += 1
    log_n = math.log(len(pairs))

    def tfidf(tokens, order):
        vec = {}
        for gram, count in _ngrams(tokens, order).items():
            idf = log_n - math.log(max(1.0, doc_freq[order - 1][gram]))
            vec[gram] = count * idf
        return vec

    def cosine(a, b):
        norm_a = math.sqrt(sum(v * v for v in a.values()))
        norm_b = math.sqrt(sum(v * v for v in b.values()))
        if norm_a == 0.0 or norm_b == 0.0:
            return 0.0
        dot = sum(v * b.get(g, 0.0) for g, v in a.items())
        return dot / (norm_a * norm_b)

    total = 0.0
    for pair in pairs:
        score = 0.0
        for order in range(1, max_order + 1):
            score += cosine(tfidf(pair.hypothesis, order), tfidf(pair.reference, order))
        total += 10.0 * score / max_order
    return total / len(pairs)


def _cue_positions(tokens):
    positions = []
    for i, tok in enumerate(tokens):
        if tok in ("no", "not", "without"):
            positions.append(i)
        if i + 1 < len(tokens):
            if (tok, tokens[i + 1]) in (("free", "of"), ("negative", "for")):
                positions.append(i)
    return positions


def label_report(text, diseases=DISEASES):
    """14-disease label vector from negation-scoped keyword matching.

    A disease is positive iff its name occurs in some sentence with no
    negation cue before it in that sentence.
    """
    labels = {name: 0 for name in diseases}
    for sentence in split_sentences(text):
        tokens = tokenize_text(sentence)
        cues = _cue_positions(tokens)
        for name in diseases:
            name_tokens = tokenize_text(name)
            width = len(name_tokens)
            for start in range(len(tokens) - width + 1):
                if tokens[start : start + width] != name_tokens:
                    continue
                if not any(c < start for c in cues):
                    labels[name] = 1
                break
    return labels


def ce_scores(predicted, truth):
    """Micro-averaged precision/recall/F1 over all (study, disease) positives.

    Both arguments are sequences of label maps aligned by index.
    """
    if len(predicted) != len(truth):
        raise ContractError(
            f"label count mismatch: {len(predicted)} vs {len(truth)}"
        )
    tp = fp = fn = 0
    for pred, true in zip(predicted, truth):
        for name in true:
            p, t = pred.get(name, 0), true[name]
            tp += p and t
            fp += p and not t
            fn += t and not p
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def evaluate_pairs(pairs):
    """The full metric table: bleu1..4, rouge_l, cider, ce_* from pair texts."""
    predicted = [label_report(" ".join(p.hypothesis)) for p in pairs]
    truth = [label_report(" ".join(p.reference)) for p in pairs]
    precision, recall, f1 = ce_scores(predicted, truth)
    return {
        "bleu1": bleu(pairs, 1),
        "bleu2": bleu(pairs, 2),
        "bleu3": bleu(pairs, 3),
        "bleu4": bleu(pairs, 4),
        "rouge_l": rouge_l(pairs),
        "cider": cider(pairs),
        "ce_precision": precision,
        "ce_recall": recall,
        "ce_f1": f1,
    }
