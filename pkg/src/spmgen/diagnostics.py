"""Odd-generation pseudo-counts and token-alignment extraction.

Repeat counting uses the excess-occurrence reading: a word type that occurs
``k`` times contributes ``k - 1`` excess occurrences, and the reference's
excess for the same type is subtracted (floored at zero).  A system output
identical to its reference therefore always scores zero.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .autodiff import no_grad
from .model import ModelParams, teacher_force
from .trainer import Example, build_padded_target
from .vocab import Vocabulary

REPEAT_RULE = "repeat_count = sum over types of max(0, excess_sys - excess_ref), excess = max(0, count - 1)"
OTHER_COLUMN = "<other>"


def _excess(tokens: Sequence[str]) -> Counter:
    return Counter({t: c - 1 for t, c in Counter(tokens).items() if c > 1})


def repeat_count(sys: Sequence[str], ref: Sequence[str]) -> int:
    ref_excess = _excess(ref)
    return sum(max(0, k - ref_excess[t]) for t, k in _excess(sys).items())


def length_deficit(sys: Sequence[str], ref: Sequence[str]) -> int:
    """Reference length minus system length (negative when the system is longer)."""
    return len(ref) - len(sys)


@dataclass
class OddGenReport:
    repeat_counts: list[int] = field(default_factory=list)
    length_deficits: list[int] = field(default_factory=list)

    @property
    def total_repeats(self) -> int:
        return sum(self.repeat_counts)

    @property
    def total_deficit(self) -> int:
        return sum(self.length_deficits)

    @property
    def sentences_with_repeats(self) -> int:
        return sum(1 for r in self.repeat_counts if r > 0)

    @property
    def sentences_too_short(self) -> int:
        return sum(1 for d in self.length_deficits if d > 0)

    def to_tsv(self) -> str:
        lines = [f"# {REPEAT_RULE}", "# length_deficit = |ref| - |sys|", "line\trepeat_count\tlength_deficit"]
        for n, (r, d) in enumerate(zip(self.repeat_counts, self.length_deficits), 1):
            lines.append(f"{n}\t{r}\t{d}")
        lines.append(f"total\t{self.total_repeats}\t{self.total_deficit}")
        return "\n".join(lines) + "\n"


def diagnose(pairs: Iterable[tuple[Sequence[str], Sequence[str]]]) -> OddGenReport:
    report = OddGenReport()
    for sys, ref in pairs:
        report.repeat_counts.append(repeat_count(sys, ref))
        report.length_deficits.append(length_deficit(sys, ref))
    return report


# ---------------------------------------------------------------------------
# alignments


@dataclass
class AlignmentMatrix:
    """Per-step probabilities with labelled rows and columns.

    ``values`` is what gets exported; ``full`` keeps the undisplayed rows
    (for the source head: the whole distribution over the vocabulary).
    """

    row_labels: list[str]
    col_labels: list[str]
    values: np.ndarray
    aligned: list[str]
    full: np.ndarray | None = None

    def to_tsv(self) -> str:
        lines = ["\t".join(["step"] + self.col_labels)]
        for label, row in zip(self.row_labels, self.values):
            lines.append("\t".join([label] + [f"{v:.6f}" for v in row]))
        return "\n".join(lines) + "\n"


def _teacher_outputs(params: ModelParams, sources, framed_targets, pad_id):
    T = max(len(s) for s in sources)
    yprime = np.full((len(sources), T + 1), pad_id, dtype=np.int64)
    for r, (x, y) in enumerate(zip(sources, framed_targets)):
        row = build_padded_target(y, len(x), pad_id)
        yprime[r, : len(row)] = row
    with no_grad():
        _, steps = teacher_force([list(s) for s in sources], yprime[:, :-1], params, with_spm=True, pad_id=pad_id)
    alpha = np.stack([s.alpha.data for s in steps], axis=1)  # B × T × T_src
    q = np.stack([s.q.data for s in steps], axis=1)  # B × T × V_s
    return yprime, alpha, q


def extract_alignments(
    x: Sequence[int], y: Sequence[int], params: ModelParams, vocab: Vocabulary
) -> tuple[AlignmentMatrix, AlignmentMatrix]:
    """Attention and source-head matrices for one teacher-forced pair.

    ``y`` is the framed target.  Attention rows cover the real target steps
    (through ``<eos>``); source-head rows cover all I padded-target steps.
    """
    x, y = list(x), list(y)
    tok = vocab.id_to_token
    yprime, alpha, q = _teacher_outputs(params, [x], [y], vocab.pad_id)
    yprime, alpha, q = yprime[0], alpha[0], q[0]
    I = len(x)
    J = len(y) - 2

    attn_vals = alpha[: J + 1, :I]
    attn_arg = attn_vals.argmax(axis=1)
    attn = AlignmentMatrix(
        row_labels=[f"{j + 1}:{tok[yprime[j + 1]]}({tok[x[a]]})" for j, a in enumerate(attn_arg)],
        col_labels=[f"{i + 1}:{tok[t]}" for i, t in enumerate(x)],
        values=attn_vals,
        aligned=[tok[x[a]] for a in attn_arg],
    )

    cols = list(dict.fromkeys(x))
    outside = np.ones(q.shape[1], dtype=bool)
    outside[cols] = False
    spm_full = q[:I]
    spm_arg = spm_full.argmax(axis=1)
    other = spm_full[:, outside].max(axis=1) if outside.any() else np.zeros(I)
    spm = AlignmentMatrix(
        row_labels=[f"{j + 1}:{tok[yprime[j + 1]]}({tok[a]})" for j, a in enumerate(spm_arg)],
        col_labels=[tok[t] for t in cols] + [OTHER_COLUMN],
        values=np.column_stack([spm_full[:, cols], other]),
        aligned=[tok[a] for a in spm_arg],
        full=spm_full,
    )
    return attn, spm


def source_head_argmax(
    params: ModelParams, examples: Sequence[Example], pad_id: int = 0, batch_size: int = 64
) -> list[tuple[list[int], list[int]]]:
    """For each pair: (padded-target ids y'_1..y'_I, source-head argmax ids per step)."""
    out = []
    for i in range(0, len(examples), batch_size):
        chunk = examples[i : i + batch_size]
        yprime, _, q = _teacher_outputs(params, [e.source for e in chunk], [e.target for e in chunk], pad_id)
        arg = q.argmax(axis=2)
        for r, e in enumerate(chunk):
            I = len(e.source)
            out.append((yprime[r, 1 : I + 1].tolist(), arg[r, :I].tolist()))
    return out


def harvest_pairs(examples: Sequence[Example], params: ModelParams, vocab: Vocabulary) -> list[tuple[str, str]]:
    """One (target token, source-head argmax token) pair per padded-target step."""
    tok = vocab.id_to_token
    pairs = []
    for gold, arg in source_head_argmax(params, list(examples), vocab.pad_id):
        pairs.extend((tok[g], tok[a]) for g, a in zip(gold, arg))
    return pairs


def pair_report(pairs: Iterable[tuple[str, str]]) -> str:
    """Frequency-sorted ``count<TAB>target<TAB>prediction`` lines."""
    counts = Counter(pairs)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return "".join(f"{c}\t{t}\t{p}\n" for (t, p), c in ranked)
