"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[criterion N] PASS|FAIL ...`` line.  The two
training criteria (6 and 7) take a few minutes together.
"""

import math
import random
import sys
import time
from collections import OrderedDict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (
    ROUGE_TABLE,
    as_fraction,
    brute_force_decode,
    brute_length_deficit,
    brute_repeat_count,
    lcs_recursive,
)
from spmgen.autodiff import no_grad
from spmgen.beam import BeamConfig, beam_search, greedy_decode
from spmgen.diagnostics import diagnose, length_deficit, repeat_count
from spmgen.model import ModelConfig, ModelParams, teacher_force
from spmgen.rouge import lcs_length, rouge_l, rouge_n
from spmgen.toy import (
    alignment_recovery,
    bundled_corpus,
    copy_deletion_pairs,
    copy_deletion_train_config,
    copy_deletion_vocab,
    to_examples,
    toy_train_config,
)
from spmgen.trainer import (
    Example,
    Trainer,
    batch_objective,
    build_padded_target,
    evaluate_trg,
    make_batch,
    make_examples,
)
from spmgen.vocab import learn_bpe

PAD, BOS, EOS = 0, 2, 3


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            sys.stdout.write(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'} {detail}\n")
        return ok

    return emit


def test_1_gradient_check(report):
    V = 8
    params = ModelParams.init(ModelConfig(V, V, embed_dim=4, hidden_dim=4), seed=0)
    batch = make_batch([Example((4, 5, 6), (2, 7, 3)), Example((5, 7, 1), (2, 4, 3))], V)
    start = time.perf_counter()
    params.zero_grad()
    batch_objective(params, batch, 10.0).objective.backward()

    def f():
        with no_grad():
            return batch_objective(params, batch, 10.0).objective.item()

    eps, worst, count = 1e-5, 0.0, 0
    for name, t in params.items():
        for idx in np.ndindex(t.shape):
            old = t.data[idx]
            t.data[idx] = old + eps
            hi = f()
            t.data[idx] = old - eps
            lo = f()
            t.data[idx] = old
            num, ana = (hi - lo) / (2 * eps), t.grad[idx]
            # 1e-5 floor: central differences in float64 carry ~1e-10 absolute noise
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-5))
            count += 1
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 10.0
    assert report(1, ok, f"max rel err {worst:.2e} over {count} entries in {elapsed:.1f}s"), (worst, elapsed)


def test_2_loss_decomposition(report):
    rng = np.random.default_rng(0)
    V, C, failures = 8, 10.0, 0
    for seed in range(200):
        params = ModelParams.init(ModelConfig(V, V, 4, 4), seed=seed)
        examples = []
        for _ in range(3):
            I = int(rng.integers(2, 6))
            J = int(rng.integers(0, I))
            src = tuple(int(v) for v in rng.integers(4, V, I))
            examples.append(Example(src, (BOS, *(int(v) for v in rng.integers(4, V, J)), EOS)))
        batch = make_batch(examples, V)
        on = batch_objective(params, batch, C)
        off_objective = on.trg  # the spm-off objective of this very pass
        # independent recomputation of (1/C)||q~ - x~||^2 from the pass's source-head outputs
        with no_grad():
            _, steps = teacher_force(batch.sources, batch.inputs, params)
        q = np.stack([s.q.data for s in steps], axis=1)
        q_sum = (q * batch.mask[:, :, None]).sum(axis=1)
        spm_term = np.sum(np.square(q_sum - batch.bags)) / (C * batch.size)
        off = batch_objective(params, batch, C, spm_enabled=False)
        exact = (
            on.objective.item() == off_objective.item() + spm_term
            and off.objective.item() == off_objective.item()
            and on.src.item() == spm_term
        )
        failures += not exact
    assert report(2, failures == 0, f"on == off + ||q~-x~||^2/C bitwise on {200 - failures}/200 passes"), failures


def _check_yprime(I, J):
    y = [BOS] + [4 + (k % 5) for k in range(J)] + [EOS]
    yp = build_padded_target(y, I, PAD)
    assert len(yp) == I + 1, (I, J)
    assert yp[J + 1] == EOS, (I, J)
    assert yp[J + 2 :] == [PAD] * (I - J - 1), (I, J)
    assert (yp == y) == (J + 1 == I), (I, J)


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 400).flatmap(lambda I: st.tuples(st.just(I), st.integers(0, I - 1))))
def _yprime_property(IJ):
    _check_yprime(*IJ)


def test_3_padded_target_contract(report):
    cases = [(I, J) for I in range(1, 41) for J in range(I)]
    try:
        for I, J in cases:
            _check_yprime(I, J)
        _yprime_property()
        ok, detail = True, f"all {len(cases)} (I, J) with I <= 40, plus a random sweep up to I = 400"
    except AssertionError as e:
        ok, detail = False, f"counterexample (I, J) = {e}"
    assert report(3, ok, detail)


def test_4_beam_matches_enumeration(report):
    start = time.perf_counter()
    mismatches = 0
    n_models = 120
    for seed in range(n_models):
        rng = np.random.default_rng(seed)
        params = ModelParams.init(ModelConfig(6, 5, 3, 3), seed=seed)
        for _, t in params.items():
            t.data[...] = rng.uniform(-1.5, 1.5, size=t.shape)
        x = [int(v) for v in rng.integers(1, 6, size=3)]
        # V_t = 5 leaves 3 emittable tokens; 27 hypotheses cover every length-3 prefix
        res = beam_search(x, params, BeamConfig(beam_size=27, max_steps=3))
        best, ids = brute_force_decode(x, params, 3)
        mismatches += not (res.ids == ids and math.isclose(res.score, best, rel_tol=1e-12, abs_tol=1e-15))
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 30.0
    assert report(4, ok, f"{n_models - mismatches}/{n_models} models agree in {elapsed:.1f}s"), mismatches


def test_5_rouge_oracle(report):
    table_ok = 0
    for sys_text, ref_text, rg1, rg2, rgl in ROUGE_TABLE:
        s, r = sys_text.split(), ref_text.split()
        got = [rouge_n(s, r, 1), rouge_n(s, r, 2), rouge_l(s, r)]
        triples = [tuple(as_fraction(v) for v in (g.precision, g.recall, g.f1)) for g in got]
        table_ok += triples == [rg1, rg2, rgl]
    rnd = random.Random(5)
    lcs_ok = 0
    for _ in range(1000):
        a = [rnd.choice("abcde") for _ in range(rnd.randint(0, 8))]
        b = [rnd.choice("abcde") for _ in range(rnd.randint(0, 8))]
        lcs_ok += lcs_length(a, b) == lcs_recursive(a, b)
    ok = table_ok == len(ROUGE_TABLE) == 10 and lcs_ok == 1000
    assert report(5, ok, f"table {table_ok}/{len(ROUGE_TABLE)}, LCS {lcs_ok}/1000")


@pytest.fixture(scope="module")
def memorized():
    src, tgt = bundled_corpus()
    vocab = learn_bpe(src + tgt, 5000)
    data = make_examples([(vocab.encode(s).ids, vocab.encode(t).ids) for s, t in zip(src, tgt)], vocab)
    params = ModelParams.init(ModelConfig(len(vocab), len(vocab), 16, 32), seed=0)
    start = time.perf_counter()
    Trainer(params, toy_train_config()).fit(data.examples)
    return vocab, data, params, time.perf_counter() - start


@pytest.mark.slow
def test_6_memorization(report, memorized):
    vocab, data, params, train_seconds = memorized
    start = time.perf_counter()
    per_token = evaluate_trg(params, data.examples)
    exact = sum(list(greedy_decode(e.source, params).tokens) == list(e.target[1:-1]) for e in data.examples)
    elapsed = train_seconds + time.perf_counter() - start
    ok = len(data.examples) == 32 and per_token < 0.1 and exact == 32 and elapsed < 300.0
    detail = f"trg/token {per_token:.4f}, exact {exact}/{len(data.examples)}, {elapsed:.0f}s"
    assert report(6, ok, detail)


@pytest.mark.slow
def test_7_alignment_recovery(report):
    vocab = copy_deletion_vocab(50)
    pairs = copy_deletion_pairs(2200, vocab_size=50, delete_fraction=0.3, seed=0)
    train, held = pairs[:2000], pairs[2000:]
    params = ModelParams.init(ModelConfig(len(vocab), len(vocab), 32, 64), seed=0)
    start = time.perf_counter()
    Trainer(params, copy_deletion_train_config()).fit(to_examples(train, vocab))
    rec = alignment_recovery(params, held, vocab)
    elapsed = time.perf_counter() - start
    ok = (
        rec.content_accuracy >= 0.80
        and rec.deleted_recall > 2 * rec.uniform_vocab_baseline
        and elapsed < 1200.0
    )
    detail = (
        f"content {rec.content_accuracy:.3f}; deleted recall {rec.deleted_recall:.3f} "
        f"(uniform-vocab {rec.uniform_vocab_baseline:.3f}, uniform-source {rec.uniform_source_baseline:.3f}); "
        f"tail precision {rec.tail_precision:.3f} (uniform-vocab {rec.tail_vocab_baseline:.3f}, "
        f"uniform-source {rec.tail_source_baseline:.3f}); {elapsed:.0f}s"
    )
    assert report(7, ok, detail)


def test_8_oddgen_counters(report):
    rnd = random.Random(8)
    agree = 0
    refs = []
    for _ in range(1000):
        s = [rnd.choice("abcdef") for _ in range(rnd.randint(0, 10))]
        r = [rnd.choice("abcdef") for _ in range(rnd.randint(0, 10))]
        refs.append(r)
        agree += repeat_count(s, r) == brute_repeat_count(s, r) and length_deficit(s, r) == brute_length_deficit(s, r)
    same = diagnose([(r, r) for r in refs])
    zeros = not any(same.repeat_counts) and not any(same.length_deficits)
    ok = agree == 1000 and zeros and same.total_repeats == same.total_deficit == 0
    assert report(8, ok, f"{agree}/1000 recounts agree; identity report all zero: {zeros}")


@pytest.mark.slow
def test_9_inference_cost_parity(report, memorized):
    vocab, data, params, _ = memorized
    # same trained weights with the source head removed: identical encoder-decoder, no SPM parameters
    plain = ModelParams(params.config, OrderedDict((n, t) for n, t in params.items() if not n.startswith("spm.")))
    sources = [e.source for e in data.examples]
    cfg = BeamConfig(beam_size=5)

    def run(p):
        start = time.perf_counter()
        outs = [beam_search(x, p, cfg).ids for x in sources]
        return (time.perf_counter() - start) / len(sources), outs

    run(params), run(plain)  # warm-up
    spm_times, plain_times = [], []
    for _ in range(7):
        t, a = run(params)
        u, b = run(plain)
        assert a == b
        spm_times.append(t)
        plain_times.append(u)
    t, u = float(np.median(spm_times)), float(np.median(plain_times))
    ratio = t / u
    ok = abs(ratio - 1.0) <= 0.05
    assert report(9, ok, f"{1e3 * t:.2f} ms vs {1e3 * u:.2f} ms per sentence (ratio {ratio:.3f})"), ratio


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
