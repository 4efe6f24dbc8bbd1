"""
Memorizing 32 headlines
=======================

Train a 16/32 model with the source-side prediction head on the bundled
corpus, then decode it greedily and with a beam, and score the outputs.

Usage: python demos/03_memorize_headlines.py [epochs]   (default 250, about a minute)
"""

import logging
import sys

from spmgen.beam import BeamConfig, beam_search, greedy_decode
from spmgen.diagnostics import diagnose
from spmgen.model import ModelConfig, ModelParams
from spmgen.rouge import corpus_rouge, format_table, words
from spmgen.toy import bundled_corpus, toy_train_config
from spmgen.trainer import Trainer, evaluate_trg, make_examples
from spmgen.vocab import learn_bpe

logging.basicConfig(level=logging.INFO, format="%(message)s")
epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 250

src, tgt = bundled_corpus()
vocab = learn_bpe(src + tgt, 5000)
data = make_examples([(vocab.encode(s).ids, vocab.encode(t).ids) for s, t in zip(src, tgt)], vocab)
params = ModelParams.init(ModelConfig(len(vocab), len(vocab), 16, 32), seed=0)
print(params.num_parameters(), "parameters")

report = Trainer(params, toy_train_config(max_epochs=epochs)).fit(data.examples)
print("per-token target loss:", round(evaluate_trg(params, data.examples), 4))

# %%
greedy = [vocab.restore(greedy_decode(e.source, params).tokens) for e in data.examples]
beam = [vocab.restore(beam_search(e.source, params, BeamConfig(beam_size=5)).tokens) for e in data.examples]
for s, g, r in list(zip(src, greedy, tgt))[:5]:
    print(f"{s}\n  -> {g}\n  ref {r}")
print("exact greedy matches:", sum(g == r for g, r in zip(greedy, tgt)), "/", len(tgt))

# %%
print(format_table(corpus_rouge((words(h), words(r)) for h, r in zip(beam, tgt))))
odd = diagnose((words(h), words(r)) for h, r in zip(beam, tgt))
print("repeats:", odd.total_repeats, " total length deficit:", odd.total_deficit)
