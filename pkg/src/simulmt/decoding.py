"""Simultaneous greedy and beam decoding, full-sentence beam search and the
hand-written READ/WRITE baselines (WUE, WOS, WIW, WID).

A decode always starts with one mandatory READ, which is recorded as the first
action of the trajectory.  After every action ``t == tau + eta`` holds, where
``eta`` counts source tokens read and ``tau`` target tokens written.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Protocol

import numpy as np

from . import numerics as nx
from .actions import READ, WRITE, to_string
from .agent import ActionDist, Agent, choose, observe, point_mass
from .nmt_env import EOS, Candidate, DecoderContext, EncoderPrefix, NMTEnv


@dataclass
class StepView:
    """What a policy gets to see before each decision."""
    env: NMTEnv
    cand: Candidate
    obs: np.ndarray
    prefix: EncoderPrefix
    ctx: DecoderContext
    source: tuple[int, ...]
    last_action: int
    mask: int | None


class Policy(Protocol):
    def start(self): ...

    def step(self, state, view: StepView) -> tuple[object, ActionDist]: ...


class AgentPolicy:
    def __init__(self, agent: Agent):
        self.agent = agent

    def start(self):
        return self.agent.initial_state()

    def step(self, state, view: StepView):
        return self.agent.policy_step(state, view.obs, view.mask)


class HeuristicPolicy:
    """Deterministic baselines sharing the agent's interface."""

    KINDS = ("wue", "wos", "wiw", "wid")

    def __init__(self, kind: str):
        kind = kind.lower()
        if kind not in self.KINDS:
            raise ValueError(f"unknown heuristic policy {kind!r}")
        self.kind = kind

    def start(self):
        return None

    def step(self, state, view: StepView):
        if view.mask is not None:
            return state, point_mass(view.mask)
        if self.kind == "wue":
            return state, point_mass(READ)
        if self.kind == "wos":
            return state, point_mass(WRITE if view.last_action == READ else READ)
        return state, point_mass(READ if self._accept_preread(view) else WRITE)

    def _accept_preread(self, view: StepView) -> bool:
        env, cand = view.env, view.cand
        ahead = env.encode_step(view.prefix, view.source[len(view.prefix)])
        ctx = env.init_decoder(ahead) if view.ctx.tau == 0 else view.ctx
        after = env.decode_candidate(ctx, ahead)
        if self.kind == "wid":
            return after.y_cand != cand.y_cand
        return after.dist[cand.y_cand] < cand.dist[cand.y_cand]


def heuristic_policy(kind: str) -> HeuristicPolicy:
    return HeuristicPolicy(kind)


@dataclass
class Trajectory:
    source_len: int
    actions: list[int] = field(default_factory=list)
    log_probs: list[float] = field(default_factory=list)
    entropies: list[float] = field(default_factory=list)
    forced: list[bool] = field(default_factory=list)
    etas: list[int] = field(default_factory=list)
    taus: list[int] = field(default_factory=list)
    # one entry per decision, i.e. for actions[1:]
    observations: list[np.ndarray] = field(default_factory=list)
    emitted: list[int] = field(default_factory=list)
    token_log_probs: list[float] = field(default_factory=list)
    reads_before_emit: list[int] = field(default_factory=list)
    attn_records: list[np.ndarray] = field(default_factory=list)
    segments: list[int] = field(default_factory=list)
    truncated: bool = False

    @property
    def T(self) -> int:
        return len(self.actions)

    @property
    def action_string(self) -> str:
        return to_string(self.actions)

    def record(self, action: int, eta: int, tau: int, dist: ActionDist | None) -> None:
        self.actions.append(action)
        self.etas.append(eta)
        self.taus.append(tau)
        if dist is None:
            self.log_probs.append(0.0)
            self.entropies.append(0.0)
            self.forced.append(True)
        else:
            self.log_probs.append(dist.log_prob(action))
            self.entropies.append(dist.entropy)
            self.forced.append(dist.forced)

    def trace_records(self, tokens: list[str] | None = None) -> list[dict]:
        out, k = [], 0
        for t, a in enumerate(self.actions, start=1):
            rec = {"t": t, "action": "WRITE" if a == WRITE else "READ",
                   "eta": self.etas[t - 1], "tau": self.taus[t - 1],
                   "log_prob": self.log_probs[t - 1]}
            if a == WRITE:
                y = self.emitted[k]
                rec["emitted_token"] = tokens[y] if tokens is not None else y
                k += 1
            out.append(rec)
        return out


def write_trace(traj: Trajectory, fh: IO[str], sentence_id: int | None = None,
                tokens: list[str] | None = None) -> None:
    """Write one JSON object per step: t, action, eta, tau, log_prob[, emitted_token]."""
    for rec in traj.trace_records(tokens):
        if sentence_id is not None:
            rec = {"sentence_id": sentence_id, **rec}
        fh.write(json.dumps(rec) + "\n")


def default_tau_max(source_len: int) -> int:
    return 2 * source_len + 10


def _check_source(source) -> tuple[int, ...]:
    source = tuple(int(x) for x in source)
    if not source or source[-1] != EOS:
        raise ValueError("source must be non-empty and end with </s>")
    if EOS in source[:-1]:
        raise ValueError("</s> may only appear at the end of the source")
    return source


def _act(policy, state, view: StepView, mode: str, rng):
    state, dist = policy.step(state, view)
    if dist.forced:
        action = READ if dist.p_read == 1.0 else WRITE
    else:
        action = choose(dist, mode, rng)
    if view.mask is not None:
        action = view.mask
    return state, dist, action


def simultaneous_greedy_decode(env: NMTEnv, policy, source, tau_max: int | None = None,
                               mode: str = "greedy",
                               rng: np.random.Generator | None = None) -> Trajectory:
    """Interleave READs and WRITEs as chosen by ``policy``.

    Once ``</s>`` has been read, READ is masked to WRITE so decoding always
    terminates; hitting ``tau_max`` without emitting ``</s>`` marks the
    trajectory as truncated.
    """
    source = _check_source(source)
    tau_max = default_tau_max(len(source)) if tau_max is None else tau_max
    if tau_max < 1:
        raise ValueError("tau_max must be >= 1")

    traj = Trajectory(source_len=len(source))
    prefix = env.encode_step(env.empty_prefix(), source[0])
    ctx = env.init_decoder(prefix)
    traj.record(READ, 1, 0, None)
    state = policy.start()
    last, run = READ, 0
    while ctx.tau < tau_max:
        cand = env.decode_candidate(ctx, prefix)
        obs = observe(cand, env)
        mask = WRITE if prefix.source_exhausted else None
        view = StepView(env, cand, obs, prefix, ctx, source, last, mask)
        state, dist, action = _act(policy, state, view, mode, rng)
        traj.observations.append(obs)
        last = action
        if action == READ:
            if run:
                traj.segments.append(run)
                run = 0
            prefix = env.encode_step(prefix, source[len(prefix)])
            if ctx.tau == 0:
                ctx = env.init_decoder(prefix)
            traj.record(READ, len(prefix), ctx.tau, dist)
        else:
            ctx = env.commit(ctx, cand)
            run += 1
            traj.emitted.append(cand.y_cand)
            traj.token_log_probs.append(cand.log_prob)
            traj.attn_records.append(cand.attn)
            traj.reads_before_emit.append(len(prefix))
            traj.record(WRITE, len(prefix), ctx.tau, dist)
            if cand.y_cand == EOS:
                break
    traj.segments.append(run)
    traj.truncated = traj.emitted[-1] != EOS
    return traj


@dataclass
class _Hyp:
    ctx: DecoderContext
    tokens: list[int]
    logp: float
    token_logps: list[float]
    attns: list[np.ndarray]
    pending: Candidate | None = None


def _expand(beam: list[_Hyp], k: int) -> list[_Hyp]:
    scored = []
    for h in beam:
        dist = h.pending.dist
        logd = np.log(np.maximum(dist, nx.LOG_FLOOR))
        # stable sort keeps the lowest token id first among ties
        for y in np.argsort(-dist, kind="stable")[:k]:
            scored.append((h, int(y), float(logd[y])))
    order = sorted(range(len(scored)), key=lambda i: -(scored[i][0].logp + scored[i][2]))
    out = []
    for i in order[:k]:
        h, y, lp = scored[i]
        c = h.pending
        out.append(_Hyp(DecoderContext(c.z_cand, y, h.ctx.tau + 1), h.tokens + [y],
                        h.logp + lp, h.token_logps + [lp], h.attns + [c.attn]))
    return out


def simultaneous_beam_decode(env: NMTEnv, policy, source, k: int = 5,
                             tau_max: int | None = None, mode: str = "greedy",
                             rng: np.random.Generator | None = None) -> Trajectory:
    """Simultaneous decoding with a k-best search inside each run of WRITEs.

    While the agent keeps writing, the k best partial continuations are kept
    and the agent is shown the candidate of the current best one.  When it
    switches to READ, or decoding ends, the best path is written out.  With
    ``k == 1`` this is exactly simultaneous greedy decoding.
    """
    if k < 1:
        raise ValueError("beam width must be >= 1")
    source = _check_source(source)
    tau_max = default_tau_max(len(source)) if tau_max is None else tau_max
    if tau_max < 1:
        raise ValueError("tau_max must be >= 1")

    traj = Trajectory(source_len=len(source))
    prefix = env.encode_step(env.empty_prefix(), source[0])
    ctx = env.init_decoder(prefix)
    traj.record(READ, 1, 0, None)
    state = policy.start()
    last = READ
    beam: list[_Hyp] | None = None

    def flush(h: _Hyp) -> DecoderContext:
        traj.emitted.extend(h.tokens)
        traj.token_log_probs.extend(h.token_logps)
        traj.attn_records.extend(h.attns)
        traj.reads_before_emit.extend([len(prefix)] * len(h.tokens))
        traj.segments.append(len(h.tokens))
        return h.ctx

    while True:
        cand = env.decode_candidate(ctx, prefix) if beam is None else beam[0].pending
        obs = observe(cand, env)
        mask = WRITE if prefix.source_exhausted else None
        view = StepView(env, cand, obs, prefix, ctx if beam is None else beam[0].ctx,
                        source, last, mask)
        state, dist, action = _act(policy, state, view, mode, rng)
        traj.observations.append(obs)
        last = action

        if action == READ:
            if beam is not None:
                ctx = flush(beam[0])
                beam = None
            prefix = env.encode_step(prefix, source[len(prefix)])
            if ctx.tau == 0:
                ctx = env.init_decoder(prefix)
            traj.record(READ, len(prefix), ctx.tau, dist)
            continue

        if beam is None:
            beam = [_Hyp(ctx, [], 0.0, [], [], cand)]
        beam = _expand(beam, k)
        best = beam[0]
        traj.record(WRITE, len(prefix), best.ctx.tau, dist)
        if best.tokens[-1] == EOS or best.ctx.tau >= tau_max:
            ctx = flush(best)
            traj.truncated = best.tokens[-1] != EOS
            return traj
        beam = [best] + [h for h in beam[1:] if h.tokens[-1] != EOS]
        for h in beam:
            h.pending = env.decode_candidate(h.ctx, prefix)


def greedy_decode(env: NMTEnv, source, len_cap: int | None = None) -> list[int]:
    """Ordinary greedy decoding from the complete source."""
    source = _check_source(source)
    len_cap = default_tau_max(len(source)) if len_cap is None else len_cap
    prefix = env.encode(source)
    ctx = env.init_decoder(prefix)
    out: list[int] = []
    while len(out) < len_cap:
        cand = env.decode_candidate(ctx, prefix)
        ctx = env.commit(ctx, cand)
        out.append(cand.y_cand)
        if cand.y_cand == EOS:
            break
    return out


def full_beam_search(env: NMTEnv, source, k: int = 5,
                     len_cap: int | None = None) -> tuple[list[int], float]:
    """Beam search over the complete source; returns (tokens, summed log-prob).

    Hypotheses end at ``</s>`` or at ``len_cap`` tokens.  Scores are raw sums
    of log-probabilities.  Search stops once no live hypothesis can beat the
    best finished one.
    """
    if k < 1:
        raise ValueError("beam width must be >= 1")
    source = _check_source(source)
    len_cap = default_tau_max(len(source)) if len_cap is None else len_cap
    prefix = env.encode(source)
    ctx0 = env.init_decoder(prefix)
    live = [_Hyp(ctx0, [], 0.0, [], [], env.decode_candidate(ctx0, prefix))]
    finished: list[_Hyp] = []
    for _ in range(len_cap):
        grown = _expand(live, k)
        live = []
        for h in grown:
            (finished if h.tokens[-1] == EOS else live).append(h)
        best_done = max((h.logp for h in finished), default=-np.inf)
        live = [h for h in live if h.logp > best_done]
        if not live:
            break
        for h in live:
            h.pending = env.decode_candidate(h.ctx, prefix)
    pool = finished + live
    best = max(pool, key=lambda h: h.logp)
    return best.tokens, best.logp


def full_beam_decode(env: NMTEnv, source, k: int = 5, len_cap: int | None = None) -> list[int]:
    return full_beam_search(env, source, k, len_cap)[0]
