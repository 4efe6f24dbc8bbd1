"""Joint source/target byte-pair-encoding vocabulary.

Words are whitespace tokens.  Every word is split into characters and the
last character carries an end-of-word marker, so merges never cross word
boundaries and restoring text only needs to split at markers.
"""

from __future__ import annotations

import collections
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<bos>", "<eos>"
SPECIALS = (PAD, UNK, BOS, EOS)
EOW_CANDIDATES = ("▁", "␂", "␃", "␄", "␞")
MERGES_HEADER = "#version: spmgen-bpe eow="


@dataclass(frozen=True)
class TokenSequence:
    """Vocabulary ids for one sentence; ``side`` is ``"source"`` or ``"target"``."""

    ids: tuple[int, ...]
    side: str = "source"

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)

    def __getitem__(self, i):
        return self.ids[i]


@dataclass
class Vocabulary:
    """Shared subword inventory with its ordered merge table."""

    merges: list[tuple[str, str]]
    tokens: list[str]
    eow: str = EOW_CANDIDATES[0]
    token_to_id: dict[str, int] = field(init=False, repr=False)
    _ranks: dict[tuple[str, str], int] = field(init=False, repr=False)
    _cache: dict[str, tuple[str, ...]] = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        if list(self.tokens[: len(SPECIALS)]) != list(SPECIALS):
            raise ValueError(f"first tokens must be the specials {SPECIALS}")
        self.token_to_id = {t: i for i, t in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self._ranks = {pair: r for r, pair in enumerate(self.merges)}

    def __len__(self):
        return len(self.tokens)

    @property
    def id_to_token(self) -> list[str]:
        return self.tokens

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK]

    @property
    def bos_id(self) -> int:
        return self.token_to_id[BOS]

    @property
    def eos_id(self) -> int:
        return self.token_to_id[EOS]

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(self.token_to_id[s] for s in SPECIALS)

    @classmethod
    def from_words(cls, words: Iterable[str]) -> "Vocabulary":
        """Word-level vocabulary: each distinct word becomes one token."""
        seen = dict.fromkeys(words)
        return cls(merges=[], tokens=list(SPECIALS) + [w for w in seen if w not in SPECIALS], eow="")

    def segment(self, word: str) -> tuple[str, ...]:
        """Apply merges to one word, lowest-ranked pair first."""
        if not self.eow:
            return (word,)
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        symbols = list(word[:-1]) + [word[-1] + self.eow]
        while len(symbols) > 1:
            best = min(
                range(len(symbols) - 1),
                key=lambda i: self._ranks.get((symbols[i], symbols[i + 1]), len(self._ranks)),
            )
            pair = (symbols[best], symbols[best + 1])
            rank = self._ranks.get(pair)
            if rank is None:
                break
            merged = []
            i = 0
            while i < len(symbols):
                if i < len(symbols) - 1 and (symbols[i], symbols[i + 1]) == pair:
                    merged.append(symbols[i] + symbols[i + 1])
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        out = tuple(symbols)
        self._cache[word] = out
        return out

    def tokenize(self, line: str) -> list[str]:
        return [s for word in line.split() for s in self.segment(word)]

    def encode(self, line: str, side: str = "source") -> TokenSequence:
        unk = self.unk_id
        return TokenSequence(tuple(self.token_to_id.get(s, unk) for s in self.tokenize(line)), side)

    def frame(self, seq: TokenSequence) -> TokenSequence:
        """Wrap a target sequence in ``<bos> ... <eos>``."""
        return TokenSequence((self.bos_id, *seq.ids, self.eos_id), "target")

    def restore(self, seq: Iterable[int]) -> str:
        """Join subwords back into whitespace-separated words, dropping framing specials."""
        skip = {self.pad_id, self.bos_id, self.eos_id}
        words: list[str] = []
        current = ""
        for i in seq:
            if i in skip:
                continue
            tok = self.tokens[i]
            if not self.eow or i == self.unk_id:
                if current:
                    words.append(current)
                    current = ""
                words.append(tok)
            elif tok.endswith(self.eow):
                words.append(current + tok[: -len(self.eow)])
                current = ""
            else:
                current += tok
        if current:
            words.append(current)
        return " ".join(words)

    def save(self, merges_path, vocab_path):
        with open(merges_path, "w", encoding="utf-8") as f:
            f.write(MERGES_HEADER + self.eow + "\n")
            for left, right in self.merges:
                f.write(f"{left} {right}\n")
        with open(vocab_path, "w", encoding="utf-8") as f:
            for i, tok in enumerate(self.tokens):
                f.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, merges_path, vocab_path) -> "Vocabulary":
        lines = Path(merges_path).read_text(encoding="utf-8").splitlines()
        eow = EOW_CANDIDATES[0]
        # an empty marker in the header means a word-level vocabulary
        if lines and lines[0].startswith(MERGES_HEADER):
            eow = lines[0][len(MERGES_HEADER):]
            lines = lines[1:]
        merges = []
        for n, line in enumerate(lines, 1):
            parts = line.split(" ")
            if len(parts) != 2:
                raise ValueError(f"{merges_path}:{n}: expected 'left right', got {line!r}")
            merges.append((parts[0], parts[1]))
        entries = []
        for n, line in enumerate(Path(vocab_path).read_text(encoding="utf-8").splitlines(), 1):
            tok, _, idx = line.rpartition("\t")
            if not _:
                raise ValueError(f"{vocab_path}:{n}: expected 'token<TAB>id'")
            entries.append((int(idx), tok))
        entries.sort()
        if [i for i, _ in entries] != list(range(len(entries))):
            raise ValueError(f"{vocab_path}: ids are not a contiguous range from 0")
        return cls(merges=merges, tokens=[t for _, t in entries], eow=eow)


def _pick_marker(alphabet: set[str]) -> str:
    for cand in EOW_CANDIDATES:
        if cand not in alphabet:
            return cand
    raise ValueError("no end-of-word marker outside the corpus alphabet")


def learn_bpe(lines: Iterable[str], num_merges: int = 5000) -> Vocabulary:
    """Learn ``num_merges`` greedy most-frequent-pair merges over a corpus.

    Ties between equally frequent pairs go to the lexicographically smallest
    pair.  Learning stops early once no adjacent pair is left.
    """
    if num_merges < 0:
        raise ValueError("num_merges must be non-negative")
    word_freq: collections.Counter[str] = collections.Counter()
    for line in lines:
        word_freq.update(line.split())
    if not word_freq:
        raise ValueError("cannot learn BPE from an empty corpus")

    eow = _pick_marker({c for w in word_freq for c in w})
    words = [list(w[:-1]) + [w[-1] + eow] for w in word_freq]
    freqs = list(word_freq.values())
    alphabet = sorted({s for w in words for s in w})

    pair_counts: collections.Counter[tuple[str, str]] = collections.Counter()
    where: dict[tuple[str, str], set[int]] = collections.defaultdict(set)
    for idx, (w, f) in enumerate(zip(words, freqs)):
        for pair in zip(w, w[1:]):
            pair_counts[pair] += f
            where[pair].add(idx)

    merges: list[tuple[str, str]] = []
    while len(merges) < num_merges:
        live = [(c, p) for p, c in pair_counts.items() if c > 0 and p[0] + p[1] not in SPECIALS]
        if not live:
            break
        top = max(c for c, _ in live)
        best = min(p for c, p in live if c == top)
        merges.append(best)
        joined = best[0] + best[1]
        for idx in sorted(where.pop(best, ())):
            w, f = words[idx], freqs[idx]
            for pair in zip(w, w[1:]):
                pair_counts[pair] -= f
            merged, i = [], 0
            while i < len(w):
                if i < len(w) - 1 and (w[i], w[i + 1]) == best:
                    merged.append(joined)
                    i += 2
                else:
                    merged.append(w[i])
                    i += 1
            words[idx] = merged
            for pair in zip(merged, merged[1:]):
                pair_counts[pair] += f
                where[pair].add(idx)
        pair_counts.pop(best, None)
        if len(merges) % 1000 == 0:
            logger.info("learned %d merges", len(merges))

    tokens = list(SPECIALS)
    seen = set(tokens)
    for sym in alphabet + [a + b for a, b in merges]:
        if sym not in seen:
            seen.add(sym)
            tokens.append(sym)
    return Vocabulary(merges=merges, tokens=tokens, eow=eow)


def id_sequences(seqs: Sequence[TokenSequence | Sequence[int]]) -> list[list[int]]:
    return [list(s) for s in seqs]
