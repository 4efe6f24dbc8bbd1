"""Losses, data ingestion and the Adam training loop.

The per-sentence objective is ``trg + src`` where ``trg`` is the negative
log-likelihood of the padded target (the gold headline, ``<eos>``, then
``<pad>`` up to the source length) and ``src`` is the squared distance
between the summed source-head distributions and the source bag of words,
divided by ``C``.  With ``spm_enabled=False`` only ``trg`` is optimised.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .model import ModelParams, teacher_force
from .vocab import TokenSequence, Vocabulary

logger = logging.getLogger(__name__)


class FilteredInputError(ValueError):
    """A target is longer than its source allows (J + 1 > I)."""


@dataclass
class TrainConfig:
    C: float = 10.0
    learning_rate: float = 0.001
    decay_factor: float = 0.5
    decay_start_epoch: int = 9
    clip_norm: float = 5.0
    batch_size: int = 256
    max_epochs: int = 15
    dropout_rate: float = 0.3
    spm_enabled: bool = True
    early_stopping: bool = True
    patience: int = 3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError(f"C must be positive, got {self.C}")
        if self.clip_norm <= 0:
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("batch_size must be >= 1 and max_epochs >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    def lr_at(self, epoch: int) -> float:
        """Learning rate used during ``epoch`` (1-based)."""
        return self.learning_rate * self.decay_factor ** max(0, epoch - self.decay_start_epoch)

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in types:
                raise ValueError(f"unknown training option: {key}")
            kwargs[key] = _coerce(raw, types[key])
        return cls(**kwargs)


def _coerce(raw, typ: str):
    if not isinstance(raw, str):
        return raw
    if typ == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if typ == "int":
        return int(raw)
    if typ == "float":
        return float(raw)
    return raw


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` (or ``key value``) lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, value = (s.strip() for s in line.split("=", 1))
        else:
            parts = line.split(None, 1)
            if len(parts) != 2:
                raise ValueError(f"{path}:{n}: expected 'key = value'")
            key, value = parts
        out[key.replace("-", "_")] = value
    return out


# ---------------------------------------------------------------------------
# targets and losses


def build_padded_target(y: Sequence[int], source_len: int, pad_id: int = 0) -> list[int]:
    """Extend a framed target ``<bos> y_1..y_J <eos>`` with ``<pad>`` to length I + 1."""
    y = list(y)
    J = len(y) - 2
    if J < 0:
        raise ValueError("target must be framed with <bos> and <eos>")
    if J + 1 > source_len:
        raise FilteredInputError(f"target needs {J + 1} steps but the source has only {source_len} tokens")
    return y + [pad_id] * (source_len - (J + 1))


def bag_of_words(x: Sequence[int], vocab_size: int) -> np.ndarray:
    return np.bincount(np.asarray(list(x), dtype=np.int64), minlength=vocab_size).astype(np.float64)


def _as_rows(dists: Sequence[Tensor]) -> Tensor:
    rows = [d if d.ndim == 2 else ad.reshape(d, (1, d.shape[0])) for d in dists]
    return ad.concat(rows, axis=0)


def target_loss(o: Sequence[Tensor], yprime: Sequence[int]) -> Tensor:
    """``-sum_j log o_j[y'_j]`` over steps 1..I (every ``<pad>`` step included)."""
    gold = list(yprime)[1:]
    if len(o) != len(gold):
        raise ValueError(f"got {len(o)} distributions for {len(gold)} target positions")
    probs = _as_rows(o)
    onehot = np.zeros(probs.shape)
    onehot[np.arange(len(gold)), gold] = 1.0
    return -ad.sum(ad.log(probs) * onehot)


def spm_loss(q: Sequence[Tensor], x: Sequence[int], C: float) -> Tensor:
    """``||sum_j q_j - bag(x)||^2 / C`` with one distribution per source token."""
    x = list(x)
    if len(q) != len(x):
        raise ValueError(f"got {len(q)} source-side distributions for a source of length {len(x)}")
    probs = _as_rows(q)
    diff = ad.sum(probs, axis=0) - bag_of_words(x, probs.shape[1])
    return ad.sum(ad.square(diff)) / C


@dataclass
class Batch:
    sources: list[list[int]]
    inputs: np.ndarray
    gold: np.ndarray
    mask: np.ndarray
    bags: np.ndarray

    @property
    def size(self) -> int:
        return len(self.sources)

    @property
    def num_tokens(self) -> int:
        return int(self.mask.sum())


def make_batch(pairs: Sequence["Example"], vocab_size: int, pad_id: int = 0) -> Batch:
    sources = [list(p.source) for p in pairs]
    T = max(len(s) for s in sources)
    yprime = np.full((len(pairs), T + 1), pad_id, dtype=np.int64)
    for r, p in enumerate(pairs):
        row = build_padded_target(p.target, len(p.source), pad_id)
        yprime[r, : len(row)] = row
    mask = np.arange(T)[None, :] < np.array([len(s) for s in sources])[:, None]
    bags = np.stack([bag_of_words(s, vocab_size) for s in sources])
    return Batch(sources, yprime[:, :-1], yprime[:, 1:], mask, bags)


@dataclass
class LossTerms:
    objective: Tensor
    trg: Tensor
    src: Tensor | None
    trg_sum: float
    num_tokens: int


def batch_objective(
    params: ModelParams,
    batch: Batch,
    C: float,
    spm_enabled: bool = True,
    train: bool = False,
    *,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    compute_spm: bool | None = None,
    pad_id: int = 0,
) -> LossTerms:
    """Batch mean of per-sentence ``trg (+ src)`` under teacher forcing.

    Positions past a sentence's own source length add nothing to either term.
    The objective is formed as ``trg + src`` from the two batch means, so the
    SPM contribution can be recovered from a single forward pass.
    """
    if compute_spm is None:
        compute_spm = spm_enabled
    _, steps = teacher_force(
        batch.sources, batch.inputs, params, train, dropout=dropout, rng=rng, with_spm=compute_spm, pad_id=pad_id
    )
    B = batch.size
    V_t = params.config.tgt_vocab
    o = ad.stack([s.o for s in steps], axis=1)
    onehot = np.zeros((B, len(steps), V_t))
    rows, cols = np.nonzero(batch.mask)
    onehot[rows, cols, batch.gold[rows, cols]] = 1.0
    trg_total = -ad.sum(ad.log(o) * onehot)
    trg = trg_total / B
    src = None
    objective = trg
    if compute_spm:
        q = ad.stack([s.q for s in steps], axis=1)
        q_sum = ad.sum(q * batch.mask[:, :, None].astype(np.float64), axis=1)
        src = ad.sum(ad.square(q_sum - batch.bags)) / (C * B)
        if spm_enabled:
            objective = trg + src
    return LossTerms(objective, trg, src, trg_total.item(), batch.num_tokens)


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class Example:
    source: tuple[int, ...]
    target: tuple[int, ...]  # framed: <bos> ... <eos>


@dataclass
class Dataset:
    examples: list[Example]
    dropped_long: int = 0
    dropped_empty: int = 0

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    @property
    def dropped(self) -> int:
        return self.dropped_long + self.dropped_empty


def make_examples(pairs: Iterable[tuple[Sequence[int], Sequence[int]]], vocab: Vocabulary) -> Dataset:
    """Frame targets and drop pairs that are empty or whose target needs more than I steps."""
    data = Dataset([])
    for n, (src, tgt) in enumerate(pairs, 1):
        if len(src) == 0:
            logger.warning("pair %d: empty source, dropped", n)
            data.dropped_empty += 1
            continue
        framed = vocab.frame(TokenSequence(tuple(tgt), "target")).ids
        if len(framed) - 1 > len(src):
            data.dropped_long += 1
            continue
        data.examples.append(Example(tuple(src), framed))
    return data


def ingest(source_file, target_file, vocab: Vocabulary) -> Dataset:
    """Read line-aligned source/target files, apply BPE and filter the pairs."""
    src_lines = Path(source_file).read_text(encoding="utf-8").splitlines()
    tgt_lines = Path(target_file).read_text(encoding="utf-8").splitlines()
    if len(src_lines) != len(tgt_lines):
        raise ValueError(
            f"line count mismatch: {source_file} has {len(src_lines)} lines, {target_file} has {len(tgt_lines)}"
        )
    data = make_examples(((vocab.encode(s).ids, vocab.encode(t).ids) for s, t in zip(src_lines, tgt_lines)), vocab)
    logger.info(
        "ingested %d pairs (%d dropped: %d longer target, %d empty source)",
        len(data),
        data.dropped,
        data.dropped_long,
        data.dropped_empty,
    )
    return data


def iterate_batches(examples: Sequence[Example], batch_size: int, rng: np.random.Generator) -> list[list[Example]]:
    """Shuffle, bucket by source length, then shuffle the bucket order."""
    order = rng.permutation(len(examples))
    order = sorted(order, key=lambda i: len(examples[i].source))
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    return [[examples[i] for i in chunks[k]] for k in rng.permutation(len(chunks))]


# ---------------------------------------------------------------------------
# optimisation


class Adam:
    def __init__(self, params: ModelParams, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self, lr: float, scale: float = 1.0):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for name, p in self.params.items():
            g = p.grad * scale
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, arrays: dict[str, np.ndarray], step_count: int):
        for k in self.m:
            self.m[k] = np.array(arrays[f"adam.m.{k}"], dtype=np.float64)
            self.v[k] = np.array(arrays[f"adam.v.{k}"], dtype=np.float64)
        self.step_count = step_count


def global_norm(params: ModelParams) -> float:
    return math.sqrt(float(sum(float(np.vdot(p.grad, p.grad)) for p in params)))


def clip_scale(norm: float, clip_norm: float) -> float:
    return clip_norm / norm if norm > clip_norm else 1.0


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_trg_per_token: float
    val_trg_per_token: float
    lr: float
    seconds: float

    def tsv(self) -> str:
        return f"{self.epoch}\t{self.train_loss:.6f}\t{self.val_trg_per_token:.6f}\t{self.lr:.6g}"


@dataclass
class TrainingReport:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = math.inf
    stopped_early: bool = False
    seed: int = 0

    def tsv(self) -> str:
        return "".join(e.tsv() + "\n" for e in self.epochs)


def evaluate_trg(params: ModelParams, examples: Sequence[Example], batch_size: int = 64, pad_id: int = 0) -> float:
    """Per-token target NLL (over padded-target positions) without dropout."""
    total, tokens = 0.0, 0
    with no_grad():
        for i in range(0, len(examples), batch_size):
            batch = make_batch(examples[i : i + batch_size], params.config.src_vocab, pad_id)
            terms = batch_objective(params, batch, 1.0, spm_enabled=False, pad_id=pad_id)
            total += terms.trg_sum
            tokens += terms.num_tokens
    return total / max(tokens, 1)


class Trainer:
    """Stateful training loop; its state round-trips through checkpoints."""

    def __init__(self, params: ModelParams, cfg: TrainConfig, pad_id: int = 0):
        self.params = params
        self.cfg = cfg
        self.pad_id = pad_id
        self.optimizer = Adam(params, cfg.beta1, cfg.beta2, cfg.eps)
        self.epoch = 0
        self.report = TrainingReport(seed=cfg.seed)
        self.bad_epochs = 0
        self.best_arrays: dict[str, np.ndarray] | None = None

    def train_epoch(self, examples: Sequence[Example]) -> EpochStats:
        cfg = self.cfg
        epoch = self.epoch + 1
        lr = cfg.lr_at(epoch)
        shuffle_rng = np.random.default_rng([cfg.seed, epoch, 0])
        dropout_rng = np.random.default_rng([cfg.seed, epoch, 1])
        start = time.perf_counter()
        loss_sum, trg_sum, tokens, sentences = 0.0, 0.0, 0, 0
        for n, group in enumerate(iterate_batches(examples, cfg.batch_size, shuffle_rng)):
            batch = make_batch(group, self.params.config.src_vocab, self.pad_id)
            self.params.zero_grad()
            terms = batch_objective(
                self.params,
                batch,
                cfg.C,
                spm_enabled=cfg.spm_enabled,
                train=True,
                dropout=cfg.dropout_rate,
                rng=dropout_rng,
                pad_id=self.pad_id,
            )
            value = terms.objective.item()
            if not math.isfinite(value):
                src = terms.src.item() if terms.src is not None else float("nan")
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch} batch {n}: trg={terms.trg.item()} src={src}"
                )
            terms.objective.backward()
            self.optimizer.step(lr, clip_scale(global_norm(self.params), cfg.clip_norm))
            loss_sum += value * batch.size
            trg_sum += terms.trg_sum
            tokens += terms.num_tokens
            sentences += batch.size
        self.epoch = epoch
        return EpochStats(
            epoch, loss_sum / sentences, trg_sum / max(tokens, 1), float("nan"), lr, time.perf_counter() - start
        )

    def fit(self, train_data: Sequence[Example], valid_data: Sequence[Example] | None = None, max_epochs=None):
        """Train until ``max_epochs`` or until validation stops improving."""
        cfg = self.cfg
        train_data = list(train_data)
        if not train_data:
            raise ValueError("cannot train on an empty dataset")
        last = cfg.max_epochs if max_epochs is None else max_epochs
        while self.epoch < last:
            stats = self.train_epoch(train_data)
            if valid_data:
                stats.val_trg_per_token = evaluate_trg(self.params, list(valid_data), pad_id=self.pad_id)
            self.report.epochs.append(stats)
            logger.info(
                "epoch %d  loss %.4f  trg/token %.4f  val %.4f  lr %.3g  (%.1fs)",
                stats.epoch,
                stats.train_loss,
                stats.train_trg_per_token,
                stats.val_trg_per_token,
                stats.lr,
                stats.seconds,
            )
            if valid_data:
                if stats.val_trg_per_token < self.report.best_val:
                    self.report.best_val = stats.val_trg_per_token
                    self.report.best_epoch = stats.epoch
                    self.best_arrays = {k: v.data.copy() for k, v in self.params.items()}
                    self.bad_epochs = 0
                else:
                    self.bad_epochs += 1
                    if cfg.early_stopping and self.bad_epochs >= cfg.patience:
                        self.report.stopped_early = True
                        break
        return self.report

    def restore_best(self):
        if self.best_arrays is not None:
            for k, v in self.params.items():
                v.data = self.best_arrays[k].copy()

    def state(self) -> tuple[dict[str, np.ndarray], dict]:
        meta = {
            "epoch": self.epoch,
            "adam_step": self.optimizer.step_count,
            "bad_epochs": self.bad_epochs,
            "best_val": self.report.best_val if math.isfinite(self.report.best_val) else None,
            "best_epoch": self.report.best_epoch,
            "train_config": asdict(self.cfg),
        }
        return self.optimizer.state_arrays(), meta

    def load_state(self, arrays: dict[str, np.ndarray], meta: dict):
        self.optimizer.load_state(arrays, int(meta["adam_step"]))
        self.epoch = int(meta["epoch"])
        self.bad_epochs = int(meta.get("bad_epochs", 0))
        best = meta.get("best_val")
        self.report.best_val = math.inf if best is None else float(best)
        self.report.best_epoch = int(meta.get("best_epoch", 0))


def train(
    data: Sequence[Example],
    cfg: TrainConfig,
    params: ModelParams,
    valid: Sequence[Example] | None = None,
    pad_id: int = 0,
) -> TrainingReport:
    """Optimise ``params`` in place; see :class:`Trainer` for resumable training."""
    trainer = Trainer(params, cfg, pad_id)
    report = trainer.fit(data, valid)
    trainer.restore_best()
    return report
