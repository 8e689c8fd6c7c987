import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simulmt.actions import READ, WRITE, from_string
from simulmt.decoding import Trajectory
from simulmt.nmt_env import EOS
from simulmt import rewards as rw

tokens = st.lists(st.integers(3, 7), min_size=4, max_size=12)


def _traj(actions: str, emitted, source_len):
    return Trajectory(source_len, actions=from_string(actions), emitted=list(emitted))


# ---- BLEU -----------------------------------------------------------------

def _nltk_bleu(cand, ref):
    bleu_score = pytest.importorskip("nltk.translate.bleu_score")
    return bleu_score.sentence_bleu([ref], cand,
                                    smoothing_function=bleu_score.SmoothingFunction().method2)


@settings(max_examples=200, deadline=None)
@given(tokens, tokens)
def test_bleu_agrees_with_nltk(cand, ref):
    # nltk scores a zero unigram match as 0 with a warning; both sides give 0 there
    if not set(cand) & set(ref):
        assert rw.bleu(cand, ref) == 0.0
        return
    assert rw.bleu(cand, ref) == pytest.approx(_nltk_bleu(cand, ref), rel=1e-9)


def test_bleu_hand_computed_value():
    # abcd vs abcde: p1=4/5, p2=(3+1)/(4+1), p3=3/4, p4=2/3, no brevity penalty
    expected = (Fraction(4, 5) * Fraction(4, 5) * Fraction(3, 4) * Fraction(2, 3)) ** 0.25
    assert rw.bleu([3, 4, 5, 6, 7], [3, 4, 5, 6]) == pytest.approx(float(expected), rel=1e-12)
    assert rw.bleu([3, 4, 5, 6, 7], [3, 4, 5, 6]) == pytest.approx(0.75212, abs=1e-5)


def test_bleu_identical_is_one_and_empty_is_zero():
    assert rw.bleu([3, 4, 5, 6], [3, 4, 5, 6]) == pytest.approx(1.0)
    assert rw.bleu([], [3, 4]) == 0.0
    with pytest.raises(ValueError):
        rw.bleu([3], [])


def test_bleu0_drops_orders_longer_than_candidate():
    # single correct unigram: only n=1 enters the mean
    assert rw.bleu0([3], [3, 4, 5, 6]) == 1.0
    assert rw.bleu([3], [3, 4, 5, 6]) == pytest.approx(math.exp(1 - 4))


@given(tokens, tokens)
def test_bleu_bounded_and_bp_only_shrinks(cand, ref):
    b0, b = rw.bleu0(cand, ref), rw.bleu(cand, ref)
    assert 0.0 <= b <= b0 <= 1.0 + 1e-12


def test_brevity_penalty_values():
    assert rw.brevity_penalty(5, 4) == 1.0
    assert rw.brevity_penalty(2, 4) == pytest.approx(math.exp(-1))
    assert rw.brevity_penalty(0, 4) == 0.0


# ---- quality reward ----------------------------------------------------------

def test_quality_rewards_telescope_to_final_bleu_when_no_bp():
    traj = _traj("RWRWRWRWW", [3, 4, 5, 6, EOS], 5)
    r = rw.quality_rewards(traj, [3, 4, 5, 6, EOS])
    writes = [t for t, a in enumerate(traj.actions) if a == WRITE]
    assert np.all(r[[t for t in range(len(r) - 1) if t not in writes]] == 0)
    assert r[:-1].sum() == pytest.approx(rw.bleu0([3, 4, 5, 6], [3, 4, 5, 6]) - 0.0)
    assert r[-1] == pytest.approx(1.0)


def test_quality_reward_ignores_eos_and_uses_content_tokens():
    traj = _traj("RWW", [3, EOS], 2)
    r = rw.quality_rewards(traj, [3, EOS])
    assert r[1] == pytest.approx(1.0) and r[2] == pytest.approx(1.0)


# ---- delay measures ----------------------------------------------------------

def test_reads_before_emit_and_ap_example():
    acts = from_string("RRWRWWRW")
    s = rw.reads_before_emit(acts)
    assert s == [2, 3, 3, 4]
    assert rw.average_proportion(s, 4) == pytest.approx(12 / 16)


def test_ap_errors():
    with pytest.raises(ValueError):
        rw.average_proportion([], 3)
    with pytest.raises(ValueError):
        rw.average_proportion([1], 0)


@given(st.integers(1, 15), st.integers(1, 15))
def test_wait_until_end_has_ap_one(n_src, n_tgt):
    s = rw.reads_before_emit([READ] * n_src + [WRITE] * n_tgt)
    assert rw.average_proportion(s, n_src) == 1.0


@given(st.lists(st.sampled_from([READ, WRITE]), min_size=1, max_size=30))
def test_consecutive_wait_resets_on_write(actions):
    c = rw.consecutive_wait(actions)
    for t, a in enumerate(actions):
        if a == WRITE:
            assert c[t] == 0
        else:
            assert c[t] == (c[t - 1] if t else 0) + 1


@given(st.lists(st.sampled_from([READ, WRITE]), min_size=1, max_size=30).filter(lambda a: WRITE in a),
       st.integers(0, 5))
def test_ap_lies_in_unit_interval_when_reads_fit(actions, extra):
    n_src = actions.count(READ) + extra
    if n_src == 0:
        return
    ap = rw.average_proportion(rw.reads_before_emit(actions), n_src)
    assert 0.0 <= ap <= 1.0


def test_delay_rewards_formula():
    cfg = rw.RewardConfig(alpha=-0.5, beta=-2.0, d_star=0.5, c_star=2.0)
    trace = rw.delay_trace(from_string("RRRWRW"), 4)
    # c = 1,2,3,0,1,0 -> sgn(c-2)+1 = 0,1,2,0,0,0 ; d_final = (3+4)/(4*2) = 0.875
    r = rw.delay_rewards(trace, cfg)
    np.testing.assert_allclose(r, [0, -0.5, -1.0, 0, 0, -2.0 * 0.375])


def test_returns_are_suffix_sums():
    np.testing.assert_allclose(rw.returns([1.0, 2.0, 3.0]), [6.0, 5.0, 3.0])


def test_combined_rewards_sum_and_return():
    cfg = rw.RewardConfig(alpha=0.0, beta=-1.0, d_star=0.3)
    traj = _traj("RRWRWW", [3, 4, EOS], 3)
    r, R = rw.combined_rewards(traj, [3, 4, EOS], cfg)
    rq = rw.quality_rewards(traj, [3, 4, EOS])
    np.testing.assert_allclose(r - rq, [0, 0, 0, 0, 0, -(2 + 3 + 3) / 9 + 0.3])
    assert R[0] == pytest.approx(r.sum())


@pytest.mark.parametrize("kw", [dict(alpha=0.1), dict(beta=0.5), dict(d_star=0.0),
                                dict(d_star=1.5), dict(c_star=0.5), dict(max_ngram=0),
                                dict(bp_at_end_only=False)])
def test_reward_config_validation(kw):
    with pytest.raises(ValueError):
        rw.RewardConfig(**kw)
