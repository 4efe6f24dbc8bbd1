import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_decode, np_decode
from spmgen import beam
from spmgen.autodiff import Tensor
from spmgen.beam import BeamConfig, Hypothesis, beam_search, greedy_decode, score
from spmgen.model import ModelConfig, ModelParams

PAD, BOS, EOS = 0, 2, 3


def random_model(seed, V=5, scale=1.5):
    """Tiny model with weights wide enough to give peaked, varied distributions."""
    p = ModelParams.init(ModelConfig(src_vocab=6, tgt_vocab=V, embed_dim=3, hidden_dim=3), seed=seed)
    rng = np.random.default_rng(seed)
    for _, t in p.items():
        t.data[...] = rng.uniform(-scale, scale, size=t.shape)
    return p


class FakeState:
    def __init__(self, prefixes):
        self.prefixes = prefixes

    def select(self, rows):
        return FakeState([self.prefixes[r] for r in rows])


class FakeOut:
    def __init__(self, o, state):
        self.o, self.state = Tensor(o), state


@pytest.fixture
def scripted(monkeypatch):
    """Replace the network by a table ``prefix -> next-token distribution``."""
    calls = []

    def install(table, V=6):
        def step(prev, state, enc, params, with_spm=True, **_):
            prefixes = [p + (int(t),) if p is not None else () for p, t in zip(state.prefixes, prev)]
            calls.append(len(prefixes))
            rows = [np.asarray(table.get(p, table.get("default")), dtype=float) for p in prefixes]
            return FakeOut(np.stack(rows), FakeState(prefixes))

        monkeypatch.setattr(beam, "encode", lambda *a, **k: None)
        monkeypatch.setattr(beam, "init_decoder", lambda enc: FakeState([None]))
        monkeypatch.setattr(beam, "_tile", lambda enc, n: enc)
        monkeypatch.setattr(beam, "decode_step", step)
        return calls

    return install


class TestScore:
    def test_normalised(self):
        assert score(Hypothesis((4, 5, 3), -3.0)) == -1.0

    def test_raw(self):
        assert score(Hypothesis((4, 5, 3), -3.0), length_normalize=False) == -3.0

    def test_single_token(self):
        assert score(Hypothesis((3,), -0.7)) == -0.7

    def test_normalisation_prefers_longer(self):
        short, long = Hypothesis((4, 3), -2.0), Hypothesis((4, 4, 4, 3), -2.4)
        assert max([short, long], key=score) is long
        assert max([short, long], key=lambda h: score(h, False)) is short


class TestConfig:
    def test_defaults(self):
        c = BeamConfig()
        assert c.beam_size == 20 and c.length_normalize and c.max_steps is None

    def test_width_at_least_one(self):
        with pytest.raises(ValueError):
            BeamConfig(beam_size=0)


class TestScripted:
    def test_width_shrinks_after_each_eos(self, scripted):
        # step 1: eos is the best continuation; width 3 -> 2 live rows next step
        calls = scripted({(): [0, 0, 0, 0.5, 0.3, 0.2], "default": [0, 0, 0, 0.2, 0.4, 0.4]})
        beam_search([1, 1, 1], None, BeamConfig(beam_size=3, max_steps=3))
        assert calls[:2] == [1, 2]

    def test_stops_when_width_reaches_zero(self, scripted):
        calls = scripted({"default": [0, 0, 0, 0.9, 0.05, 0.05]})
        res = beam_search([1] * 10, None, BeamConfig(beam_size=2, max_steps=10))
        assert res.ids == (EOS,) and len(calls) == 2

    def test_length_normalisation_choice(self, scripted):
        # "4 eos": 2 ln(.5) = -1.39 raw, -0.69 normalised; "eos": ln(.3) = -1.20 either way
        scripted({(): [0, 0, 0, 0.3, 0.5, 0.2], (4,): [0, 0, 0, 0.5, 0.25, 0.25], "default": [0, 0, 0, 1, 0, 0]})
        assert beam_search([1, 1], None, BeamConfig(beam_size=5)).ids == (4, EOS)
        assert beam_search([1, 1], None, BeamConfig(beam_size=5, length_normalize=False)).ids == (EOS,)

    def test_ties_go_to_lower_id(self, scripted):
        scripted({(): [0, 0, 0, 0, 0.5, 0.5], "default": [0, 0, 0, 1.0, 0, 0]})
        assert greedy_decode([1, 1], None).ids == (4, EOS)

    def test_barred_tokens_never_emitted(self, scripted):
        scripted({"default": [0.6, 0.0, 0.3, 0.1, 0.0, 0.0]})
        assert beam_search([1], None, BeamConfig(beam_size=4)).ids == (EOS,)

    def test_truncation_flag(self, scripted):
        scripted({"default": [0, 0, 0, 0.0, 0.7, 0.3]})
        res = beam_search([1, 1, 1], None, BeamConfig(beam_size=2))
        assert res.truncated and res.ids == (4, 4, 4) and res.tokens == res.ids
        assert math.isclose(res.logp, 3 * math.log(0.7))

    def test_max_steps_defaults_to_source_length(self, scripted):
        calls = scripted({"default": [0, 0, 0, 0.0, 0.7, 0.3]})
        beam_search([1] * 4, None, BeamConfig(beam_size=1))
        assert len(calls) == 4


class TestModel:
    @pytest.mark.parametrize("seed", range(5))
    def test_greedy_matches_stepwise_argmax(self, seed):
        p = random_model(seed, V=7)
        x = [1, 4, 5, 2]
        ids, prev = [], BOS
        for _ in range(len(x)):
            o = np_decode(x, [BOS] + ids, p)[-1][1].copy()
            o[[PAD, BOS]] = 0.0
            prev = int(np.argmax(o))
            ids.append(prev)
            if prev == EOS:
                break
        assert list(greedy_decode(x, p).ids) == ids

    @pytest.mark.parametrize("seed", range(8))
    def test_exhaustive_beam_matches_enumeration(self, seed):
        p = random_model(100 + seed)
        x = [1, 5, 4]
        res = beam_search(x, p, BeamConfig(beam_size=125, max_steps=3))
        best_score, best_ids = brute_force_decode(x, p, 3)
        assert math.isclose(res.score, best_score, rel_tol=1e-9, abs_tol=1e-12)
        assert res.ids == best_ids

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 6), st.lists(st.integers(1, 5), min_size=1, max_size=5))
    def test_output_well_formed(self, seed, width, x):
        p = random_model(seed, V=8)
        res = beam_search(x, p, BeamConfig(beam_size=width))
        assert PAD not in res.ids and BOS not in res.ids
        assert EOS not in res.ids[:-1]
        assert res.truncated == (not res.ids or res.ids[-1] != EOS)
        assert res.logp <= 0.0 and len(res.ids) <= len(x)
        assert beam_search(x, p, BeamConfig(beam_size=width)).ids == res.ids

    def test_scores_are_model_log_probabilities(self):
        p = random_model(7, V=8)
        res = beam_search([1, 2, 3, 4], p, BeamConfig(beam_size=4))
        o = np_decode([1, 2, 3, 4], [BOS] + list(res.ids[:-1]), p)
        assert math.isclose(res.logp, sum(math.log(s[1][t]) for s, t in zip(o, res.ids)), rel_tol=1e-12)

    def test_spm_head_not_evaluated(self, monkeypatch):
        p = random_model(3)
        seen = []
        real = beam.decode_step

        def spy(*a, **k):
            seen.append(k.get("with_spm"))
            return real(*a, **k)

        monkeypatch.setattr(beam, "decode_step", spy)
        beam_search([1, 2], p, BeamConfig(beam_size=3))
        assert seen and not any(seen)
