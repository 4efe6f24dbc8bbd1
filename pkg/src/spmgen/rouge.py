"""ROUGE-1/2/L precision, recall and F1 on whitespace-tokenised words.

No stemming or stopword removal.  Corpus scores are macro-averages of the
per-pair scores.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float
    empty_reference: bool = False

    @classmethod
    def from_counts(cls, overlap: int, sys_total: int, ref_total: int) -> "RougeScore":
        p = overlap / sys_total if sys_total else 0.0
        r = overlap / ref_total if ref_total else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f, empty_reference=ref_total == 0)


def words(text: str) -> list[str]:
    return text.lower().split()


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(sys: Sequence[str], ref: Sequence[str], n: int = 1) -> RougeScore:
    """Clipped n-gram overlap.  An empty n-gram set on either side scores 0."""
    if n not in (1, 2):
        raise ValueError(f"n must be 1 or 2, got {n}")
    s, r = ngrams(sys, n), ngrams(ref, n)
    overlap = sum((s & r).values())
    return RougeScore.from_counts(overlap, sum(s.values()), sum(r.values()))


def lcs_length(a: Sequence, b: Sequence) -> int:
    """Longest common subsequence length, O(len(a)·len(b)) time, O(len(b)) memory."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(sys: Sequence[str], ref: Sequence[str]) -> RougeScore:
    return RougeScore.from_counts(lcs_length(sys, ref), len(sys), len(ref))


METRICS = ("ROUGE-1", "ROUGE-2", "ROUGE-L")


def pair_scores(sys: Sequence[str], ref: Sequence[str]) -> dict[str, RougeScore]:
    return {"ROUGE-1": rouge_n(sys, ref, 1), "ROUGE-2": rouge_n(sys, ref, 2), "ROUGE-L": rouge_l(sys, ref)}


def corpus_rouge(pairs: Iterable[tuple[Sequence[str], Sequence[str]]]) -> dict[str, RougeScore]:
    """Macro-average precision, recall and F1 over (system, reference) word lists."""
    sums = {m: [0.0, 0.0, 0.0] for m in METRICS}
    count = 0
    for sys, ref in pairs:
        count += 1
        for m, sc in pair_scores(sys, ref).items():
            acc = sums[m]
            acc[0] += sc.precision
            acc[1] += sc.recall
            acc[2] += sc.f1
    if count == 0:
        raise ValueError("corpus_rouge needs at least one pair")
    return {m: RougeScore(p / count, r / count, f / count) for m, (p, r, f) in sums.items()}


def format_table(scores: dict[str, RougeScore]) -> str:
    lines = ["metric\tprecision\trecall\tf1"]
    for m in METRICS:
        s = scores[m]
        lines.append(f"{m}\t{s.precision:.6f}\t{s.recall:.6f}\t{s.f1:.6f}")
    return "\n".join(lines) + "\n"
