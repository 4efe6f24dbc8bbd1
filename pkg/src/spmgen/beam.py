"""Shrinking-beam search over the target head.

The live width starts at ``beam_size`` and drops by one every time a
hypothesis emits ``<eos>``; search ends when no live slot is left or after
``max_steps`` emissions.  The source head is never evaluated here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tensor, no_grad
from .model import DecoderState, EncoderStates, ModelParams, decode_step, encode, init_decoder


@dataclass
class BeamConfig:
    beam_size: int = 20
    max_steps: int | None = None  # None: the source length
    length_normalize: bool = True

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError(f"beam_size must be >= 1, got {self.beam_size}")


@dataclass
class Hypothesis:
    ids: tuple[int, ...]
    logp: float
    # only the root carries a state; live rows share one batched DecoderState
    state: DecoderState | None = field(default=None, repr=False)
    finished: bool = False


@dataclass
class BeamResult:
    ids: tuple[int, ...]  # emitted tokens, <eos> included when finished
    logp: float
    score: float
    truncated: bool
    finished: list[Hypothesis] = field(default_factory=list, repr=False)

    @property
    def tokens(self) -> tuple[int, ...]:
        """Emitted ids without the trailing ``<eos>``."""
        return self.ids[:-1] if not self.truncated else self.ids


def score(hyp: Hypothesis, length_normalize: bool = True) -> float:
    """``logp / len`` (emitted tokens, ``<eos>`` counted) or raw ``logp``."""
    if length_normalize and hyp.ids:
        return hyp.logp / len(hyp.ids)
    return hyp.logp


def beam_search(
    source: Sequence[int],
    params: ModelParams,
    cfg: BeamConfig | None = None,
    *,
    bos_id: int = 2,
    eos_id: int = 3,
    barred: Sequence[int] = (0, 2),
) -> BeamResult:
    """Decode one source sentence.

    ``barred`` ids (``<pad>`` and ``<bos>`` by default) are never emitted.
    Equal scores are ordered by parent rank, then by lower token id.
    """
    cfg = cfg or BeamConfig()
    source = list(source)
    max_steps = cfg.max_steps if cfg.max_steps is not None else len(source)
    with no_grad():
        enc = encode([source], params)
        live = [Hypothesis((), 0.0, init_decoder(enc))]
        finished: list[Hypothesis] = []
        width = cfg.beam_size
        state = live[0].state
        for _ in range(max_steps):
            if width <= 0:
                break
            prev = np.array([h.ids[-1] if h.ids else bos_id for h in live], dtype=np.int64)
            out = decode_step(prev, state, _tile(enc, len(live)), params, with_spm=False)
            with np.errstate(divide="ignore"):
                logo = np.log(out.o.data)
            logo[:, list(barred)] = -np.inf
            totals = np.array([h.logp for h in live])[:, None] + logo
            flat = totals.ravel()
            # stable sort on -score keeps parent order then token id for ties
            order = np.argsort(-flat, kind="stable")[:width]
            order = [k for k in order if np.isfinite(flat[k])]
            V = logo.shape[1]
            next_live, rows = [], []
            for k in order:
                parent, tok = divmod(int(k), V)
                hyp = Hypothesis(live[parent].ids + (tok,), float(flat[k]))
                if tok == eos_id:
                    hyp.finished = True
                    finished.append(hyp)
                    width -= 1
                else:
                    next_live.append(hyp)
                    rows.append(parent)
            if not next_live:
                live = []
                break
            state = out.state.select(np.array(rows))
            live = next_live
        if finished:
            best = max(finished, key=lambda h: score(h, cfg.length_normalize))
            return BeamResult(best.ids, best.logp, score(best, cfg.length_normalize), False, finished)
        if not live:
            raise RuntimeError("beam search produced no hypothesis")
        best = max(live, key=lambda h: score(h, cfg.length_normalize))
        return BeamResult(best.ids, best.logp, score(best, cfg.length_normalize), True, finished)


def _tile(enc: EncoderStates, n: int) -> EncoderStates:
    if n == 1:
        return enc
    rows = np.zeros(n, dtype=np.int64)
    return EncoderStates(
        Tensor(enc.h.data[rows]),
        enc.forward,
        enc.backward,
        enc.mask[rows],
        enc.lengths[rows],
        enc.num_layers,
    )


def greedy_decode(source: Sequence[int], params: ModelParams, max_steps: int | None = None, **ids) -> BeamResult:
    return beam_search(source, params, BeamConfig(beam_size=1, max_steps=max_steps, length_normalize=False), **ids)
