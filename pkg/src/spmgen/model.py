"""Attention encoder-decoder with a source-side prediction head.

Shapes follow the column-vector convention of the model description:
embedding tables are D×V, output heads are V×H and the mixing layer is
H×2H.  Activations are batched as rows (B×H).
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_MAGIC = b"SPMCKPT1"
INIT_SCALE = 0.1
FORGET_BIAS = 1.0


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    src_vocab: int
    tgt_vocab: int
    embed_dim: int = 200
    hidden_dim: int = 400
    num_layers: int = 2


class ModelParams:
    """Named trainable tensors of the encoder-decoder and its SPM head.

    ==============  ==========================  =========================
    name            shape                       role
    ==============  ==========================  =========================
    src_embed       D × V_s                     source embeddings
    tgt_embed       D × V_t                     target embeddings
    enc.{l}.{dir}   4H × (in+H), 4H             encoder LSTM layer l
    dec.{l}         4H × (in+H), 4H             decoder LSTM layer l
    attn            H × H                       bilinear attention
    mix             H × 2H                      context/state mixing
    out.w, out.b    V_t × H, V_t                target head
    spm.w, spm.b    V_s × H, V_s                source head
    ==============  ==========================  =========================

    The decoder's first layer reads ``[embedding; previous z]`` so its input
    width is D + H.  LSTM gate blocks are ordered input, forget, cell, output.
    """

    def __init__(self, config: ModelConfig, tensors: "OrderedDict[str, Tensor]"):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def __len__(self):
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()

    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self.tensors.values()))

    def copy(self) -> "ModelParams":
        return ModelParams(
            ModelConfig(**asdict(self.config)),
            OrderedDict((k, Tensor(v.data.copy(), requires_grad=True, name=k)) for k, v in self.items()),
        )

    @classmethod
    def shapes(cls, config: ModelConfig) -> "OrderedDict[str, tuple[int, ...]]":
        D, H, L = config.embed_dim, config.hidden_dim, config.num_layers
        out: OrderedDict[str, tuple[int, ...]] = OrderedDict()
        out["src_embed"] = (D, config.src_vocab)
        out["tgt_embed"] = (D, config.tgt_vocab)
        for layer in range(L):
            width = (D if layer == 0 else H) + H
            for direction in ("fwd", "bwd"):
                out[f"enc.{layer}.{direction}.w"] = (4 * H, width)
                out[f"enc.{layer}.{direction}.b"] = (4 * H,)
        for layer in range(L):
            width = (D + H if layer == 0 else H) + H
            out[f"dec.{layer}.w"] = (4 * H, width)
            out[f"dec.{layer}.b"] = (4 * H,)
        out["attn"] = (H, H)
        out["mix"] = (H, 2 * H)
        out["out.w"] = (config.tgt_vocab, H)
        out["out.b"] = (config.tgt_vocab,)
        out["spm.w"] = (config.src_vocab, H)
        out["spm.b"] = (config.src_vocab,)
        return out

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "ModelParams":
        """Uniform(-0.1, 0.1) weights; LSTM forget-gate biases start at 1."""
        rng = np.random.default_rng(seed)
        H = config.hidden_dim
        tensors: OrderedDict[str, Tensor] = OrderedDict()
        for name, shape in cls.shapes(config).items():
            data = rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)
            if name.startswith(("enc.", "dec.")) and name.endswith(".b"):
                data[H : 2 * H] = FORGET_BIAS
            tensors[name] = Tensor(data, requires_grad=True, name=name)
        return cls(config, tensors)

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: dict[str, np.ndarray]) -> "ModelParams":
        tensors: OrderedDict[str, Tensor] = OrderedDict()
        for name, shape in cls.shapes(config).items():
            if name not in arrays:
                raise CheckpointError(f"missing tensor {name!r}")
            data = np.asarray(arrays[name], dtype=np.float64)
            if data.shape != shape:
                raise CheckpointError(f"tensor {name!r} has shape {data.shape}, expected {shape}")
            tensors[name] = Tensor(data.copy(), requires_grad=True, name=name)
        return cls(config, tensors)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: ModelParams, extra: dict[str, np.ndarray] | None = None, meta: dict | None = None):
    """Write ``SPMCKPT1`` + u64 manifest length + JSON manifest + raw float64 payload."""
    arrays = [(k, v.data) for k, v in params.items()]
    arrays += [(k, np.asarray(v, dtype=np.float64)) for k, v in (extra or {}).items()]
    entries, offset = [], 0
    for name, arr in arrays:
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    c = params.config
    manifest = {
        "config": {
            "D": c.embed_dim,
            "H": c.hidden_dim,
            "V_s": c.src_vocab,
            "V_t": c.tgt_vocab,
            "layers": c.num_layers,
        },
        "params": list(params.tensors),
        "tensors": entries,
        "meta": meta or {},
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for _, arr in arrays:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelParams, dict[str, np.ndarray], dict]:
    """Return ``(params, extra_arrays, meta)`` from a checkpoint file."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (n,) = struct.unpack("<Q", raw[8:16])
    manifest = json.loads(raw[16 : 16 + n].decode("utf-8"))
    payload = memoryview(raw)[16 + n :]
    arrays = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        if start + count * 8 > len(payload):
            raise CheckpointError(f"{path}: payload truncated at {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(payload[start : start + count * 8], dtype="<f8").reshape(shape)
    cfg = manifest["config"]
    config = ModelConfig(
        src_vocab=cfg["V_s"], tgt_vocab=cfg["V_t"], embed_dim=cfg["D"], hidden_dim=cfg["H"], num_layers=cfg["layers"]
    )
    names = set(manifest["params"])
    params = ModelParams.from_arrays(config, {k: v for k, v in arrays.items() if k in names})
    extra = {k: v.copy() for k, v in arrays.items() if k not in names}
    return params, extra, manifest.get("meta", {})


# ---------------------------------------------------------------------------
# forward pass


@dataclass
class EncoderStates:
    """Top-layer encoder outputs for a batch of sources.

    ``h`` is B×T×H with ``h[:, i] = forward[i] + backward[i]``; positions past
    a sentence's length are masked out of attention.
    """

    h: Tensor
    forward: list[Tensor]
    backward: list[Tensor]
    mask: np.ndarray
    lengths: np.ndarray
    num_layers: int = 2

    @property
    def last_forward(self) -> Tensor:
        # masked updates carry each row's state past its own end
        return self.forward[-1]

    @property
    def first_backward(self) -> Tensor:
        return self.backward[0]


@dataclass
class DecoderState:
    hidden: list[Tensor]
    cell: list[Tensor]
    feed: Tensor

    def select(self, rows) -> "DecoderState":
        """Reorder/duplicate batch rows (used by beam search, outside the tape)."""
        pick = lambda t: Tensor(t.data[rows])  # noqa: E731
        return DecoderState([pick(h) for h in self.hidden], [pick(c) for c in self.cell], pick(self.feed))


@dataclass
class StepOutput:
    z: Tensor
    o: Tensor
    q: Tensor | None
    alpha: Tensor
    state: DecoderState = field(repr=False)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w: Tensor, b: Tensor, keep=None) -> tuple[Tensor, Tensor]:
    H = h.shape[1]
    hc = ad.lstm_cell(x, h, c, w, b, keep)
    return ad.slice_last(hc, 0, H), ad.slice_last(hc, H, 2 * H)


def reference_lstm_cell(x: Tensor, h: Tensor, c: Tensor, w: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """Unfused LSTM step built from elementwise ops (slow; kept for cross-checks)."""
    H = h.shape[1]
    gates = ad.linear(ad.concat([x, h], axis=1), w, b)
    i = ad.sigmoid(ad.slice_last(gates, 0, H))
    f = ad.sigmoid(ad.slice_last(gates, H, 2 * H))
    g = ad.tanh(ad.slice_last(gates, 2 * H, 3 * H))
    o = ad.sigmoid(ad.slice_last(gates, 3 * H, 4 * H))
    c_new = f * c + i * g
    return o * ad.tanh(c_new), c_new


def _run_direction(xs, w, b, mask, reverse):
    B, H = xs[0].shape[0], b.shape[0] // 4
    h = Tensor(np.zeros((B, H)))
    c = Tensor(np.zeros((B, H)))
    outs = [None] * len(xs)
    order = range(len(xs) - 1, -1, -1) if reverse else range(len(xs))
    for t in order:
        m = mask[:, t]
        h, c = lstm_cell(xs[t], h, c, w, b, None if m.all() else m)
        outs[t] = h
    return outs


def _as_id_rows(sources: Sequence[Sequence[int]], pad_id: int):
    lengths = np.array([len(s) for s in sources], dtype=np.int64)
    if len(sources) == 0 or lengths.min() < 1:
        raise ValueError("cannot encode an empty source sequence")
    T = int(lengths.max())
    ids = np.full((len(sources), T), pad_id, dtype=np.int64)
    for r, s in enumerate(sources):
        ids[r, : len(s)] = list(s)
    mask = np.arange(T)[None, :] < lengths[:, None]
    return ids, mask, lengths


def encode(
    sources: Sequence[Sequence[int]],
    params: ModelParams,
    train: bool = False,
    *,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    pad_id: int = 0,
) -> EncoderStates:
    """Run the stacked bidirectional LSTM over a batch of id sequences.

    Each layer sums its forward and backward outputs; the sum feeds the next
    layer (through dropout when ``train``).
    """
    ids, mask, lengths = _as_id_rows(sources, pad_id)
    xs = [ad.embedding(params["src_embed"], ids[:, t]) for t in range(ids.shape[1])]
    fwd = bwd = None
    for layer in range(params.config.num_layers):
        p = f"enc.{layer}"
        fwd = _run_direction(xs, params[f"{p}.fwd.w"], params[f"{p}.fwd.b"], mask, reverse=False)
        bwd = _run_direction(xs, params[f"{p}.bwd.w"], params[f"{p}.bwd.b"], mask, reverse=True)
        xs = [ad.dropout(f + b, dropout, rng, train) for f, b in zip(fwd, bwd)]
    return EncoderStates(ad.stack(xs, axis=1), fwd, bwd, mask, lengths, params.config.num_layers)


def init_decoder(enc: EncoderStates) -> DecoderState:
    """First-layer hidden starts at ``last_forward + first_backward``; all else zero."""
    h0 = enc.last_forward + enc.first_backward
    L = enc.num_layers
    zeros = lambda: Tensor(np.zeros(h0.shape))  # noqa: E731
    return DecoderState([h0] + [zeros() for _ in range(L - 1)], [zeros() for _ in range(L)], zeros())


def decode_step(
    prev_ids,
    state: DecoderState,
    enc: EncoderStates,
    params: ModelParams,
    train: bool = False,
    *,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    with_spm: bool = True,
) -> StepOutput:
    """One input-feeding decoder step with general (bilinear) attention.

    Returns the mixed state ``z``, the target distribution ``o``, the source
    distribution ``q`` (None unless ``with_spm``) and the attention weights.
    """
    prev_ids = np.atleast_1d(np.asarray(prev_ids, dtype=np.int64))
    x = ad.concat([ad.embedding(params["tgt_embed"], prev_ids), state.feed], axis=1)
    hidden, cell = [], []
    for layer in range(len(state.hidden)):
        h, c = lstm_cell(x, state.hidden[layer], state.cell[layer], params[f"dec.{layer}.w"], params[f"dec.{layer}.b"])
        hidden.append(h)
        cell.append(c)
        x = ad.dropout(h, dropout, rng, train)
    z_dir = x
    scores = ad.einsum("bih,bh->bi", enc.h, ad.linear(z_dir, params["attn"]))
    alpha = ad.softmax(scores, mask=enc.mask)
    context = ad.einsum("bi,bih->bh", alpha, enc.h)
    z = ad.tanh(ad.linear(ad.concat([context, z_dir], axis=1), params["mix"]))
    z_head = ad.dropout(z, dropout, rng, train)
    o = ad.softmax(ad.linear(z_head, params["out.w"], params["out.b"]))
    q = ad.softmax(ad.linear(z_head, params["spm.w"], params["spm.b"])) if with_spm else None
    return StepOutput(z, o, q, alpha, DecoderState(hidden, cell, z))


def teacher_force(
    sources: Sequence[Sequence[int]],
    inputs: np.ndarray,
    params: ModelParams,
    train: bool = False,
    *,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    with_spm: bool = True,
    pad_id: int = 0,
) -> tuple[EncoderStates, list[StepOutput]]:
    """Encode ``sources`` and run one decoder step per column of ``inputs`` (B×T ids)."""
    enc = encode(sources, params, train, dropout=dropout, rng=rng, pad_id=pad_id)
    state = init_decoder(enc)
    steps = []
    for j in range(inputs.shape[1]):
        out = decode_step(inputs[:, j], state, enc, params, train, dropout=dropout, rng=rng, with_spm=with_spm)
        steps.append(out)
        state = out.state
    return enc, steps
