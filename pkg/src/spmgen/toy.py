"""Small self-contained datasets.

``copy_deletion_pairs`` generates the synthetic copy-with-deletion task: the
source is a random token sequence and the target keeps every token that is
not in a fixed "droppable" subset of the vocabulary.  Because the generator
knows which source position produced each target token, it can score the
alignments a trained model implies.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

import numpy as np

from .diagnostics import source_head_argmax
from .model import ModelParams
from .trainer import Example, TrainConfig, make_examples
from .vocab import Vocabulary


def bundled_corpus() -> tuple[list[str], list[str]]:
    """The 32 (sentence, headline) pairs shipped with the package."""
    root = resources.files("spmgen") / "data"
    src = (root / "toy.src.txt").read_text(encoding="utf-8").splitlines()
    tgt = (root / "toy.tgt.txt").read_text(encoding="utf-8").splitlines()
    return src, tgt


def toy_train_config(**overrides) -> TrainConfig:
    """Recipe that memorizes the bundled corpus with a 16/32 model in a few hundred epochs.

    Clipping and dropout are off: at this size clipping at 5 stalls some
    seeds on a plateau, and dropout fights memorization.
    """
    values = dict(
        learning_rate=0.03,
        decay_start_epoch=120,
        decay_factor=0.98,
        clip_norm=float("inf"),
        batch_size=4,
        max_epochs=250,
        dropout_rate=0.0,
        early_stopping=False,
    )
    values.update(overrides)
    return TrainConfig(**values)


@dataclass(frozen=True)
class CopyDeletionPair:
    source: tuple[str, ...]
    target: tuple[str, ...]
    kept: tuple[int, ...]  # source position of each target token

    @property
    def deleted(self) -> tuple[str, ...]:
        keep = set(self.kept)
        return tuple(t for i, t in enumerate(self.source) if i not in keep)


def copy_deletion_words(vocab_size: int = 50) -> list[str]:
    return [f"w{i:02d}" for i in range(vocab_size)]


def copy_deletion_pairs(
    n_pairs: int,
    vocab_size: int = 50,
    delete_fraction: float = 0.3,
    min_len: int = 5,
    max_len: int = 10,
    seed: int = 0,
) -> list[CopyDeletionPair]:
    """Random sources; targets drop the tokens of a fixed droppable subset.

    The droppable subset is the first ``round(delete_fraction * vocab_size)``
    words, so about ``delete_fraction`` of the source tokens are deleted.
    Every source contains at least one droppable and one kept token.
    """
    words = copy_deletion_words(vocab_size)
    n_drop = int(round(delete_fraction * vocab_size))
    if not 0 < n_drop < vocab_size:
        raise ValueError("delete_fraction must leave both droppable and kept words")
    rng = np.random.default_rng(seed)
    pairs = []
    while len(pairs) < n_pairs:
        length = int(rng.integers(min_len, max_len + 1))
        ids = rng.integers(0, vocab_size, size=length)
        kept = tuple(int(i) for i in np.flatnonzero(ids >= n_drop))
        if not kept or len(kept) == length:
            continue
        src = tuple(words[i] for i in ids)
        pairs.append(CopyDeletionPair(src, tuple(src[i] for i in kept), kept))
    return pairs


def copy_deletion_vocab(vocab_size: int = 50) -> Vocabulary:
    return Vocabulary.from_words(copy_deletion_words(vocab_size))


def copy_deletion_train_config(**overrides) -> TrainConfig:
    """Recipe for the copy-with-deletion task (pairs with a 32/64 model).

    ``C = 1`` weights the source-bag loss ten times more than the default;
    with ``C = 10`` the source head never learns which tokens were deleted
    within a desk-scale budget.
    """
    values = dict(
        C=1.0,
        learning_rate=0.005,
        decay_start_epoch=50,
        decay_factor=0.95,
        batch_size=32,
        max_epochs=100,
        dropout_rate=0.0,
        early_stopping=False,
    )
    values.update(overrides)
    return TrainConfig(**values)


def to_examples(pairs: Sequence[CopyDeletionPair], vocab: Vocabulary) -> list[Example]:
    enc = lambda ws: vocab.encode(" ".join(ws)).ids  # noqa: E731
    data = make_examples(((enc(p.source), enc(p.target)) for p in pairs), vocab)
    if data.dropped:
        raise ValueError("generator produced pairs that fail the length filter")
    return data.examples


@dataclass
class AlignmentRecovery:
    """Counts behind the alignment-recovery scores.

    The tail of a pair is its ``<eos>`` step plus its ``<pad>`` steps: there
    are exactly as many tail steps as deleted source tokens.  Chance levels
    are exact expectations under two null models for a tail argmax: uniform
    over the source vocabulary, and a uniformly chosen source position.
    """

    content_steps: int
    content_hits: int
    deleted_tokens: int
    deleted_hits: int
    tail_steps: int
    tail_hits: int
    recall_chance_vocab: float
    recall_chance_source: float
    tail_chance_vocab: float
    tail_chance_source: float

    @property
    def content_accuracy(self) -> float:
        """Share of target-token steps whose source-head argmax is the planted source token."""
        return self.content_hits / max(self.content_steps, 1)

    @property
    def deleted_recall(self) -> float:
        """Share of deleted source tokens matched by a tail argmax (multiset matching)."""
        return self.deleted_hits / max(self.deleted_tokens, 1)

    @property
    def tail_precision(self) -> float:
        """Share of tail steps whose argmax is one of the pair's deleted tokens."""
        return self.tail_hits / max(self.tail_steps, 1)

    @property
    def uniform_vocab_baseline(self) -> float:
        return self.recall_chance_vocab / max(self.deleted_tokens, 1)

    @property
    def uniform_source_baseline(self) -> float:
        return self.recall_chance_source / max(self.deleted_tokens, 1)

    @property
    def tail_vocab_baseline(self) -> float:
        return self.tail_chance_vocab / max(self.tail_steps, 1)

    @property
    def tail_source_baseline(self) -> float:
        return self.tail_chance_source / max(self.tail_steps, 1)


def expected_min(c: int, n: int, p: float) -> float:
    """E[min(c, X)] for X ~ Binomial(n, p)."""
    return sum(min(c, k) * math.comb(n, k) * p**k * (1 - p) ** (n - k) for k in range(n + 1))


def alignment_recovery(
    params: ModelParams, pairs: Sequence[CopyDeletionPair], vocab: Vocabulary
) -> AlignmentRecovery:
    """Score source-head argmax alignments against the generator's ground truth.

    Steps 1..J should predict the source token each target token was copied
    from.  The I - J tail steps should predict the deleted tokens; recall
    counts them as a multiset intersection.
    """
    examples = to_examples(pairs, vocab)
    preds = source_head_argmax(params, examples, vocab.pad_id)
    V = len(vocab)
    c_steps = c_hits = d_tokens = d_hits = t_steps = t_hits = 0
    rv = rs = tv = ts = 0.0
    for pair, ex, (_, arg) in zip(pairs, examples, preds):
        J, I = len(pair.target), len(ex.source)
        planted = [ex.source[i] for i in pair.kept]
        c_steps += J
        c_hits += sum(int(a == p) for a, p in zip(arg[:J], planted))
        deleted = Counter(vocab.token_to_id[t] for t in pair.deleted)
        tail = Counter(arg[J:I])
        n = I - J
        d_hits += sum(min(c, tail[t]) for t, c in deleted.items())
        d_tokens += sum(deleted.values())
        t_hits += sum(c for t, c in tail.items() if t in deleted)
        t_steps += n
        in_source = Counter(ex.source)
        rv += sum(expected_min(c, n, 1.0 / V) for c in deleted.values())
        rs += sum(expected_min(c, n, in_source[t] / I) for t, c in deleted.items())
        tv += n * len(deleted) / V
        ts += n * sum(in_source[t] for t in deleted) / I
    return AlignmentRecovery(c_steps, c_hits, d_tokens, d_hits, t_steps, t_hits, rv, rs, tv, ts)
