"""``spmgen`` command line: bpe, train, decode, evaluate, diagnose, align, gen-toy.

Failures print one line ``error<TAB><kind><TAB><message>`` on stderr and
exit with status 1 (argument errors exit with 2).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .beam import BeamConfig, beam_search
from .diagnostics import diagnose, extract_alignments
from .model import CheckpointError, ModelConfig, ModelParams, load_checkpoint, save_checkpoint
from .rouge import corpus_rouge, format_table, words
from .toy import bundled_corpus, copy_deletion_pairs
from .trainer import (
    EpochStats,
    FilteredInputError,
    TrainConfig,
    Trainer,
    build_padded_target,
    ingest,
    read_config_file,
)
from .vocab import Vocabulary, learn_bpe

logger = logging.getLogger("spmgen")

MODEL_KEYS = {"embed_dim": int, "hidden_dim": int, "num_layers": int, "init_seed": int}
MODEL_DEFAULTS = {"embed_dim": 200, "hidden_dim": 400, "num_layers": 2, "init_seed": 0}
BEST_PREFIX = "best."


class UsageError(ValueError):
    """Bad combination of inputs detected after argument parsing."""


@dataclass
class RunManifest:
    config: dict
    merges: str
    vocabulary: str
    best_checkpoint: str
    last_checkpoint: str
    report: str
    seed: int
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def write(self, path: Path):
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# helpers


def _need(*paths):
    for p in paths:
        if p is not None and (not Path(p).exists() or Path(p).is_dir()):
            raise FileNotFoundError(f"missing file: {p}")


def _read_lines(path) -> list[str]:
    _need(path)
    return Path(path).read_text(encoding="utf-8").splitlines()


def _write_lines(path, lines):
    text = "".join(line + "\n" for line in lines)
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _aligned(sys_path, ref_path) -> tuple[list[str], list[str]]:
    a, b = _read_lines(sys_path), _read_lines(ref_path)
    if len(a) != len(b):
        raise ValueError(f"line-count mismatch: {sys_path} has {len(a)} lines, {ref_path} has {len(b)}")
    return a, b


def _load_vocab(args) -> Vocabulary:
    _need(args.merges, args.vocab)
    return Vocabulary.load(args.merges, args.vocab)


def vocab_digest(vocab: Vocabulary) -> str:
    return hashlib.sha256("\n".join(vocab.tokens).encode("utf-8")).hexdigest()


def _load_model(path, vocab: Vocabulary) -> tuple[ModelParams, dict]:
    _need(path)
    params, _, meta = load_checkpoint(path)
    c = params.config
    if c.src_vocab != len(vocab) or c.tgt_vocab != len(vocab):
        raise CheckpointError(
            f"vocabulary/checkpoint mismatch: vocabulary has {len(vocab)} tokens, "
            f"checkpoint expects V_s={c.src_vocab} V_t={c.tgt_vocab}"
        )
    digest = meta.get("vocab_sha256")
    if digest is not None and digest != vocab_digest(vocab):
        raise CheckpointError("vocabulary/checkpoint mismatch: vocabulary contents differ from training")
    return params, meta


def jsonable(value):
    """Replace non-finite floats by their string form so the output is strict JSON."""
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {k: jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    return value


def _kebab(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser):
    for f in fields(TrainConfig):
        if f.type == "bool":
            p.add_argument(_kebab(f.name), dest=f.name, default=None, type=_parse_bool, metavar="BOOL")
        else:
            p.add_argument(_kebab(f.name), dest=f.name, default=None, type=float if f.type == "float" else int)
    for key, typ in MODEL_KEYS.items():
        p.add_argument(_kebab(key), dest=key, default=None, type=typ)


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {raw!r}")


def resolve_config(args) -> tuple[TrainConfig, dict]:
    """Defaults, then the config file, then explicit flags."""
    values: dict = {}
    if args.config:
        _need(args.config)
        values.update(read_config_file(args.config))
    for f in fields(TrainConfig):
        if getattr(args, f.name) is not None:
            values[f.name] = getattr(args, f.name)
    for key in MODEL_KEYS:
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    if args.no_spm:
        values["spm_enabled"] = False
    model = dict(MODEL_DEFAULTS)
    for key, typ in MODEL_KEYS.items():
        if key in values:
            model[key] = typ(values.pop(key))
    return TrainConfig.from_mapping(values), model


# ---------------------------------------------------------------------------
# subcommands


def cmd_bpe(args):
    if args.action == "learn":
        lines = [line for path in args.input for line in _read_lines(path)]
        vocab = learn_bpe(lines, args.num_merges)
        vocab.save(args.merges, args.vocab)
        logger.info("learned %d merges, %d tokens", len(vocab.merges), len(vocab))
        return
    vocab = _load_vocab(args)
    out = []
    for line in _read_lines(args.input[0]):
        if args.action == "apply":
            out.append(" ".join(vocab.tokenize(line)))
        else:
            ids = [vocab.token_to_id.get(t, vocab.unk_id) for t in line.split()]
            out.append(vocab.restore(ids))
    _write_lines(args.output, out)


def cmd_train(args):
    cfg, model_cfg = resolve_config(args)
    _need(args.train_src, args.train_tgt, args.valid_src, args.valid_tgt, args.resume)
    if (args.valid_src is None) != (args.valid_tgt is None):
        raise UsageError("--valid-src and --valid-tgt go together")
    vocab = _load_vocab(args)
    train_data = ingest(args.train_src, args.train_tgt, vocab)
    logger.info("training pairs: %d (dropped %d)", len(train_data), train_data.dropped)
    valid = ingest(args.valid_src, args.valid_tgt, vocab).examples if args.valid_src else None

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    best_path, last_path = out / "best.ckpt", out / "last.ckpt"
    report_path, manifest_path = out / "report.tsv", out / "manifest.json"
    config_echo = jsonable({**asdict(cfg), **model_cfg})

    if args.resume:
        params, extra, meta = load_checkpoint(args.resume)
        trainer = Trainer(params, cfg, vocab.pad_id)
        trainer.load_state({k: v for k, v in extra.items() if not k.startswith(BEST_PREFIX)}, meta)
        best = {k[len(BEST_PREFIX) :]: v for k, v in extra.items() if k.startswith(BEST_PREFIX)}
        trainer.best_arrays = best or None
        trainer.report.epochs = [
            EpochStats(int(e.pop("epoch")), seconds=0.0, **{k: float(v) for k, v in e.items()})
            for e in meta.get("epochs", [])
        ]
    else:
        mc = ModelConfig(len(vocab), len(vocab), model_cfg["embed_dim"], model_cfg["hidden_dim"], model_cfg["num_layers"])
        params = ModelParams.init(mc, seed=model_cfg["init_seed"])
        trainer = Trainer(params, cfg, vocab.pad_id)

    common_meta = {"vocab_sha256": vocab_digest(vocab), "config": config_echo}
    while trainer.epoch < cfg.max_epochs and not trainer.report.stopped_early:
        trainer.fit(train_data.examples, valid, max_epochs=trainer.epoch + 1)
        if valid and trainer.report.best_epoch == trainer.epoch:
            save_checkpoint(best_path, params, meta={**common_meta, "epoch": trainer.epoch})
        arrays, state = trainer.state()
        if trainer.best_arrays is not None:
            arrays.update({BEST_PREFIX + k: v for k, v in trainer.best_arrays.items()})
        state["epochs"] = _epoch_records(trainer)
        save_checkpoint(last_path, params, extra=arrays, meta=jsonable({**common_meta, **state}))
        if valid and cfg.early_stopping and trainer.bad_epochs >= cfg.patience:
            trainer.report.stopped_early = True
    if not valid:
        save_checkpoint(best_path, params, meta={**common_meta, "epoch": trainer.epoch})

    report_path.write_text(trainer.report.tsv(), encoding="utf-8")
    RunManifest(
        config=config_echo,
        merges=str(Path(args.merges).resolve()),
        vocabulary=str(Path(args.vocab).resolve()),
        best_checkpoint=str(best_path.resolve()),
        last_checkpoint=str(last_path.resolve()),
        report=str(report_path.resolve()),
        seed=cfg.seed,
        epochs=_epoch_records(trainer),
        best_epoch=trainer.report.best_epoch if valid else trainer.epoch,
        stopped_early=trainer.report.stopped_early,
    ).write(manifest_path)


def _epoch_records(trainer: Trainer) -> list[dict]:
    # wall-clock time stays out so reruns write identical files
    return [jsonable({k: v for k, v in asdict(e).items() if k != "seconds"}) for e in trainer.report.epochs]


def cmd_decode(args):
    vocab = _load_vocab(args)
    params, _ = _load_model(args.checkpoint, vocab)
    bc = BeamConfig(args.beam_size, args.max_steps, not args.no_length_normalize)
    out = []
    for line in _read_lines(args.input):
        src = vocab.encode(line).ids
        if not src:
            out.append("")
            continue
        res = beam_search(src, params, bc, bos_id=vocab.bos_id, eos_id=vocab.eos_id)
        out.append(vocab.restore(res.tokens))
    _write_lines(args.output, out)


def cmd_evaluate(args):
    sys_lines, ref_lines = _aligned(args.system, args.reference)
    table = format_table(corpus_rouge((words(s), words(r)) for s, r in zip(sys_lines, ref_lines)))
    _write_lines(args.output, table.splitlines())


def cmd_diagnose(args):
    sys_lines, ref_lines = _aligned(args.system, args.reference)
    report = diagnose((words(s), words(r)) for s, r in zip(sys_lines, ref_lines))
    _write_lines(args.output, report.to_tsv().splitlines())


def cmd_align(args):
    src_lines, tgt_lines = _aligned(args.source, args.target)
    vocab = _load_vocab(args)
    params, _ = _load_model(args.checkpoint, vocab)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(len(src_lines))))
    for n, (s, t) in enumerate(zip(src_lines, tgt_lines), 1):
        x = vocab.encode(s).ids
        y = vocab.frame(vocab.encode(t, side="target")).ids
        if not x:
            raise ValueError(f"line {n}: empty source")
        try:
            build_padded_target(y, len(x), vocab.pad_id)
        except FilteredInputError as e:
            raise FilteredInputError(f"line {n}: {e}") from None
        attn, spm = extract_alignments(x, y, params, vocab)
        (out / f"{n:0{width}d}.attn.tsv").write_text(attn.to_tsv(), encoding="utf-8")
        (out / f"{n:0{width}d}.spm.tsv").write_text(spm.to_tsv(), encoding="utf-8")


def cmd_gen_toy(args):
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    if args.kind == "headlines":
        src, tgt = bundled_corpus()
        _write_lines(f"{prefix}.src", src)
        _write_lines(f"{prefix}.tgt", tgt)
        return
    pairs = copy_deletion_pairs(
        args.n_pairs, args.vocab_size, args.delete_fraction, args.min_len, args.max_len, seed=args.seed
    )
    _write_lines(f"{prefix}.src", [" ".join(p.source) for p in pairs])
    _write_lines(f"{prefix}.tgt", [" ".join(p.target) for p in pairs])
    _write_lines(f"{prefix}.kept", [" ".join(str(i) for i in p.kept) for p in pairs])


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spmgen", description="Headline generation with a source-side prediction head.")
    parser.add_argument("-q", "--quiet", action="store_true", help="only report errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bpe", help="learn, apply or undo a BPE segmentation")
    p.add_argument("action", choices=["learn", "apply", "restore"])
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--merges", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--num-merges", type=int, default=5000)
    p.add_argument("--output", default="-")
    p.set_defaults(func=cmd_bpe)

    p = sub.add_parser("train", help="train a model; writes checkpoints, report and manifest")
    p.add_argument("--config")
    p.add_argument("--train-src", required=True)
    p.add_argument("--train-tgt", required=True)
    p.add_argument("--valid-src")
    p.add_argument("--valid-tgt")
    p.add_argument("--merges", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--resume", help="last.ckpt of an earlier run")
    p.add_argument("--no-spm", action="store_true", help="train the plain encoder-decoder")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="beam-search headlines for a source file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--merges", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", default="-")
    p.add_argument("--beam-size", type=int, default=20)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--no-length-normalize", action="store_true")
    p.set_defaults(func=cmd_decode)

    for name, func, help_ in (
        ("evaluate", cmd_evaluate, "ROUGE-1/2/L table"),
        ("diagnose", cmd_diagnose, "repeat and length-deficit report"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--system", required=True)
        p.add_argument("--reference", required=True)
        p.add_argument("--output", default="-")
        p.set_defaults(func=func)

    p = sub.add_parser("align", help="attention and source-head matrices per sentence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--merges", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("gen-toy", help="write the bundled corpus or a copy-with-deletion corpus")
    p.add_argument("--kind", choices=["copy-deletion", "headlines"], default="copy-deletion")
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--n-pairs", type=int, default=2000)
    p.add_argument("--vocab-size", type=int, default=50)
    p.add_argument("--delete-fraction", type=float, default=0.3)
    p.add_argument("--min-len", type=int, default=5)
    p.add_argument("--max-len", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_toy)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except (OSError, ValueError, FloatingPointError, KeyError) as e:
        message = " ".join(str(e).split()) or repr(e)
        print(f"error\t{type(e).__name__}\t{message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
