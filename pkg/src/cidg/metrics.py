"""Corpus-level BLEU-1/2 and pooled Distinct-1/2.

BLEU here is the corpus variant (clipped n-gram counts pooled over all pairs,
not averaged per sentence) with brevity penalty min(1, exp(1 - r/c)) and a
smoothing floor: a zero n-gram precision is replaced by 1/(2 * H_n) where H_n
is the total hypothesis n-gram count; if H_n itself is zero the score is 0.
This choice moves absolute values relative to other BLEU variants, so it is
stated here and in the README rather than left implicit. Tokenization is the
model tokenizer's normalization, with no vocabulary lookup.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from .tokenizer import normalize


@dataclass(frozen=True)
class EvalReport:
    bleu1: float
    bleu2: float
    distinct1: float
    distinct2: float
    counts: dict

    def __post_init__(self):
        for name in ("bleu1", "bleu2", "distinct1", "distinct2"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} out of range: {value}")


def metric_tokenize(text: str) -> list[str]:
    """Same normalization as vocabulary building; no UNK mapping."""
    return normalize(text)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_k(hypotheses: list[str], references: list[str], k: int) -> float:
    if len(hypotheses) != len(references):
        raise ValueError("hypotheses and references must have equal length")
    if not hypotheses:
        raise ValueError("empty input")
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    hyp_tokens = [metric_tokenize(h) for h in hypotheses]
    ref_tokens = [metric_tokenize(r) for r in references]
    c = sum(len(t) for t in hyp_tokens)
    r = sum(len(t) for t in ref_tokens)
    log_sum = 0.0
    for n in range(1, k + 1):
        clipped = 0
        total = 0
        for h, ref in zip(hyp_tokens, ref_tokens):
            h_counts = _ngrams(h, n)
            r_counts = _ngrams(ref, n)
            total += sum(h_counts.values())
            clipped += sum(min(count, r_counts[gram]) for gram, count in h_counts.items())
        if total == 0:
            return 0.0
        p_n = clipped / total if clipped > 0 else 1.0 / (2.0 * total)
        log_sum += math.log(p_n)
    bp = min(1.0, math.exp(1.0 - r / c))
    return bp * math.exp(log_sum / k)


def distinct_n(hypotheses: list[str], n: int) -> float:
    """Distinct n-grams over total, pooled across hypotheses (no boundary crossing)."""
    if not hypotheses:
        raise ValueError("empty input")
    seen: set[tuple[str, ...]] = set()
    total = 0
    for h in hypotheses:
        tokens = metric_tokenize(h)
        for i in range(len(tokens) - n + 1):
            seen.add(tuple(tokens[i : i + n]))
            total += 1
    return len(seen) / total if total else 0.0


def evaluate(hypotheses: list[str], references: list[str]) -> EvalReport:
    if len(hypotheses) != len(references):
        raise ValueError("hypotheses and references must have equal length")
    if not hypotheses:
        raise ValueError("empty input")
    return EvalReport(
        bleu1=bleu_k(hypotheses, references, 1),
        bleu2=bleu_k(hypotheses, references, 2),
        distinct1=distinct_n(hypotheses, 1),
        distinct2=distinct_n(hypotheses, 2),
        counts={
            "hypotheses": len(hypotheses),
            "reference_tokens": sum(len(metric_tokenize(r)) for r in references),
            "hypothesis_tokens": sum(len(metric_tokenize(h)) for h in hypotheses),
        },
    )
