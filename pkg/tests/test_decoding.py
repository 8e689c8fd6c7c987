import io
import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_source, scaled_agent
from simulmt.actions import READ, WRITE, from_string
from simulmt.agent import point_mass
from simulmt.decoding import (AgentPolicy, full_beam_search, greedy_decode, heuristic_policy,
                              simultaneous_beam_decode, simultaneous_greedy_decode, write_trace)
from simulmt.nmt_env import EOS, DecoderContext, NMTConfig, NMTEnv


class Scripted:
    """Replays a fixed action list (mandatory first READ excluded), then WRITEs."""

    def __init__(self, actions):
        self.actions = list(actions)

    def start(self):
        return 0

    def step(self, i, view):
        a = self.actions[i] if i < len(self.actions) else WRITE
        return i + 1, point_mass(a)


def _sharp_env(seed=7, scale=4.0, vocab=9):
    env = NMTEnv(NMTConfig(vocab, 8, emb=4, hidden=5, att=3), rng=np.random.default_rng(seed))
    for p in env.params.params.values():
        p *= scale
    return env


def _check_invariants(traj, source):
    assert traj.actions[0] == READ
    for t, (eta, tau) in enumerate(zip(traj.etas, traj.taus), start=1):
        assert eta + tau == t
    assert max(traj.etas) <= len(source)
    assert traj.actions.count(WRITE) == len(traj.emitted)
    assert sum(traj.segments) == len(traj.emitted)
    assert len(traj.observations) == traj.T - 1
    # nothing is read once </s> has been read
    if EOS in source[:max(traj.etas)]:
        first = traj.etas.index(len(source))
        assert all(a == WRITE for a in traj.actions[first + 1:])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from(["wue", "wos", "wiw", "wid", "agent"]))
def test_decode_invariants_hold_for_every_policy(seed, kind):
    env = _sharp_env()
    r = np.random.default_rng(seed)
    src = random_source(r, 9)
    policy = AgentPolicy(scaled_agent(env, seed % 97, 3.0)) if kind == "agent" \
        else heuristic_policy(kind)
    traj = simultaneous_greedy_decode(env, policy, src)
    _check_invariants(traj, src)
    beam = simultaneous_beam_decode(env, policy, src, k=3)
    _check_invariants(beam, src)


def _no_eos_env():
    env = _sharp_env(scale=1.0)
    env.params["out_b"][EOS] = -50.0
    return env


def test_wait_until_end_and_wait_one_step_action_strings():
    env, src = _no_eos_env(), [3, 4, 5, EOS]
    wue = simultaneous_greedy_decode(env, heuristic_policy("wue"), src, tau_max=3)
    assert wue.action_string == "RRRRWWW" and wue.truncated
    wos = simultaneous_greedy_decode(env, heuristic_policy("wos"), src, tau_max=6)
    assert wos.action_string == "RWRWRWRWWW"


def test_scripted_replay_reproduces_actions_and_tokens():
    env = _sharp_env()
    src = [3, 4, 5, 6, EOS]
    script = from_string("WRWWRRW")
    traj = simultaneous_greedy_decode(env, Scripted(script), src, tau_max=4)
    assert traj.actions[1:len(script) + 1] == script[:traj.T - 1]
    # the emitted tokens match a hand-driven environment run
    prefix = env.encode(src[:1])
    ctx, out = env.init_decoder(prefix), []
    for a in traj.actions[1:]:
        if a == READ:
            prefix = env.encode_step(prefix, src[len(prefix)])
            if ctx.tau == 0:
                ctx = env.init_decoder(prefix)
        else:
            cand = env.decode_candidate(ctx, prefix)
            out.append(cand.y_cand)
            ctx = env.commit(ctx, cand)
    assert out == traj.emitted


def test_read_is_masked_after_end_of_source():
    traj = simultaneous_greedy_decode(_no_eos_env(), Scripted([READ] * 30), [3, EOS], tau_max=4)
    assert traj.action_string == "RRWWWW"
    assert traj.forced[2:] == [True] * 4


def test_tau_max_truncates():
    traj = simultaneous_greedy_decode(_no_eos_env(), heuristic_policy("wue"), [3, EOS], tau_max=1)
    assert traj.truncated and len(traj.emitted) == 1


def test_bad_arguments(tiny_env):
    wue = heuristic_policy("wue")
    with pytest.raises(ValueError):
        simultaneous_greedy_decode(tiny_env, wue, [3, 4])
    with pytest.raises(ValueError):
        simultaneous_greedy_decode(tiny_env, wue, [3, EOS, 4, EOS])
    with pytest.raises(ValueError):
        simultaneous_greedy_decode(tiny_env, wue, [3, EOS], tau_max=0)
    with pytest.raises(ValueError):
        simultaneous_beam_decode(tiny_env, wue, [3, EOS], k=0)
    with pytest.raises(ValueError):
        heuristic_policy("wait-k")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_beam_of_one_equals_greedy(seed):
    env = _sharp_env(scale=3.0)
    src = random_source(np.random.default_rng(seed), 9)
    policy = AgentPolicy(scaled_agent(env, seed % 31, 2.0))
    a = simultaneous_greedy_decode(env, policy, src)
    b = simultaneous_beam_decode(env, policy, src, k=1)
    assert a.actions == b.actions and a.emitted == b.emitted
    np.testing.assert_allclose(a.token_log_probs, b.token_log_probs, atol=1e-12)
    np.testing.assert_allclose(a.log_probs, b.log_probs, atol=1e-12)


def test_simultaneous_beam_never_scores_below_greedy_under_wue():
    # with every READ first, the beam is an ordinary beam over the full source
    env = _sharp_env(scale=3.0)
    for seed in range(20):
        src = random_source(np.random.default_rng(seed), 9)
        g = simultaneous_greedy_decode(env, heuristic_policy("wue"), src)
        b = simultaneous_beam_decode(env, heuristic_policy("wue"), src, k=4)
        if not g.truncated and not b.truncated:
            assert sum(b.token_log_probs) >= sum(g.token_log_probs) - 1e-9


def test_greedy_decode_matches_wait_until_end():
    env = _sharp_env(scale=3.0)
    src = [3, 4, 5, EOS]
    wue = simultaneous_greedy_decode(env, heuristic_policy("wue"), src)
    assert greedy_decode(env, src) == wue.emitted


def _score(env, src, seq):
    prefix = env.encode(src)
    ctx, total = env.init_decoder(prefix), 0.0
    for y in seq:
        cand = env.decode_candidate(ctx, prefix)
        total += float(np.log(max(cand.dist[y], 1e-12)))
        ctx = DecoderContext(cand.z_cand, y, ctx.tau + 1)
    return total


def test_full_beam_with_wide_beam_finds_exhaustive_optimum():
    env = NMTEnv(NMTConfig(3, 3, emb=3, hidden=4, att=3), rng=np.random.default_rng(2))
    for p in env.params.params.values():
        p *= 6.0
    src, cap = [2, EOS], 4
    best, best_score = None, -np.inf
    for n in range(1, cap + 1):
        for seq in itertools.product(range(3), repeat=n):
            if EOS in seq[:-1] or (n < cap and seq[-1] != EOS):
                continue
            s = _score(env, src, seq)
            if s > best_score:
                best, best_score = list(seq), s
    tokens, logp = full_beam_search(env, src, k=3 ** cap, len_cap=cap)
    assert tokens == best
    assert logp == pytest.approx(best_score, abs=1e-9)


def test_full_beam_of_one_is_greedy():
    env = _sharp_env(scale=3.0)
    for seed in range(10):
        src = random_source(np.random.default_rng(seed), 9)
        assert full_beam_search(env, src, k=1)[0] == greedy_decode(env, src)


def test_trace_records():
    env = _sharp_env()
    traj = simultaneous_greedy_decode(env, heuristic_policy("wos"), [3, 4, EOS])
    fh = io.StringIO()
    write_trace(traj, fh, sentence_id=7, tokens=[f"t{i}" for i in range(8)])
    recs = [json.loads(line) for line in fh.getvalue().splitlines()]
    assert len(recs) == traj.T
    assert recs[0] == {"sentence_id": 7, "t": 1, "action": "READ", "eta": 1, "tau": 0,
                       "log_prob": 0.0}
    writes = [r for r in recs if r["action"] == "WRITE"]
    assert [r["emitted_token"] for r in writes] == [f"t{y}" for y in traj.emitted]
    assert all(r["t"] == r["eta"] + r["tau"] for r in recs)


# (seed, scale) pairs whose trajectories mix READ and WRITE for both rules
@pytest.mark.parametrize("kind", ["wiw", "wid"])
@pytest.mark.parametrize("seed, scale", [(2, 1.0), (6, 3.0), (1, 10.0)])
def test_lookahead_rules_match_recomputation(kind, seed, scale):
    """Check each WIW/WID decision by recomputing the look-ahead from scratch."""
    env = _sharp_env(seed=seed, scale=scale)
    src = [3, 5, 4, 6, 7, 8, EOS]
    traj = simultaneous_greedy_decode(env, heuristic_policy(kind), src)
    prefix = env.encode(src[:1])
    ctx = env.init_decoder(prefix)
    for a in traj.actions[1:]:
        cand = env.decode_candidate(ctx, prefix)
        if not prefix.source_exhausted:
            ahead = env.encode(src[:len(prefix) + 1])
            c2 = env.init_decoder(ahead) if ctx.tau == 0 else ctx
            after = env.decode_candidate(c2, ahead)
            if kind == "wiw":
                changed = after.dist[cand.y_cand] < cand.dist[cand.y_cand]
            else:
                changed = after.y_cand != cand.y_cand
            want = READ if changed else WRITE
            assert a == want
        if a == READ:
            prefix = env.encode(src[:len(prefix) + 1])
            if ctx.tau == 0:
                ctx = env.init_decoder(prefix)
        else:
            ctx = env.commit(ctx, cand)
