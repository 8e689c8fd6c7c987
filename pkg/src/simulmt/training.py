"""Maximum-likelihood pre-training of the environment and REINFORCE training of
the agent with a learned baseline, running reward normalisation and an
entropy term."""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .actions import READ, WRITE
from .agent import Agent, Baseline
from .decoding import Trajectory, default_tau_max
from .nmt_env import EOS, NMTEnv
from .rewards import (RewardConfig, combined_rewards, consecutive_wait, content_tokens,
                      bleu, reads_before_emit, average_proportion)

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# pre-training
# ---------------------------------------------------------------------------

def pretrain_mle(env: NMTEnv, pairs, epochs: int = 20, batch_size: int = 32,
                 lr: float = 3e-3, seed: int = 0, valid_pairs=None,
                 max_len: int = 50, clip: float = 5.0, prefix_init: float = 0.5) -> list[dict]:
    """Minimise mean sentence NLL with Adam over shuffled minibatches.

    With probability ``prefix_init`` a training sentence computes z_0 from a
    uniformly drawn source prefix instead of the whole source.  Simultaneous
    decoding fixes z_0 at the first WRITE, from whatever prefix was read, and
    a decoder that only ever saw full-source z_0 reads sentence length off it
    and stops early.

    Returns one log row per epoch with training (and validation) perplexity.
    Row 0 holds the perplexity of the untrained model.
    """
    if not 0.0 <= prefix_init <= 1.0:
        raise ValueError("prefix_init must lie in [0, 1]")
    pairs = [(s, t) for s, t in pairs if len(s) <= max_len + 1 and len(t) <= max_len + 1]
    if not pairs:
        raise ValueError("empty training corpus")
    rng = np.random.default_rng(seed)
    store = env.params

    def ppl(data):
        nll = sum(env.nll_batch([s for s, _ in data[i:i + 256]], [t for _, t in data[i:i + 256]],
                                with_grad=False) for i in range(0, len(data), 256))
        return math.exp(nll / sum(len(t) for _, t in data))

    logrows = [{"epoch": 0, "train_ppl": ppl(pairs)}]
    if valid_pairs:
        logrows[0]["valid_ppl"] = ppl(valid_pairs)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(pairs))
        total, n_tok = 0.0, 0
        for i in range(0, len(order), batch_size):
            batch = [pairs[j] for j in order[i:i + batch_size]]
            init_len = [int(rng.integers(1, len(s) + 1)) if rng.random() < prefix_init else len(s)
                        for s, _ in batch]
            store.zero_grad()
            nll = env.nll_batch([s for s, _ in batch], [t for _, t in batch], init_len=init_len)
            total += nll
            n_tok += sum(len(t) for _, t in batch)
            for g in store.grads.values():
                g /= len(batch)
            _clip(store, clip)
            nx.adam_update(store, lr)
        row = {"epoch": epoch, "train_ppl": math.exp(total / n_tok)}
        if valid_pairs:
            row["valid_ppl"] = ppl(valid_pairs)
        log.info("pretrain epoch %d %s", epoch, row)
        logrows.append(row)
    store.zero_grad()
    return logrows


def _clip(store: nx.ParamStore, max_norm: float) -> None:
    norm = math.sqrt(sum(float((g * g).sum()) for g in store.grads.values()))
    if norm > max_norm:
        for g in store.grads.values():
            g *= max_norm / norm


# ---------------------------------------------------------------------------
# configuration and running statistics
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    lr_agent: float = 1e-4
    lr_baseline: float = 1e-3
    entropy_coef: float = 0.0
    entropy_sign: str = "bonus"
    batch_sentences: int = 10
    samples_per_sentence: int = 5
    max_updates: int = 1000
    eval_every: int = 50
    seed: int = 0
    stats_momentum: float = 0.99
    stats_eps: float = 1e-8

    def __post_init__(self):
        if self.lr_agent <= 0 or self.lr_baseline <= 0:
            raise ValueError("learning rates must be positive")
        if self.entropy_coef < 0:
            raise ValueError("entropy_coef must be non-negative")
        if self.entropy_sign not in ("bonus", "literal"):
            raise ValueError("entropy_sign must be 'bonus' or 'literal'")
        if min(self.batch_sentences, self.samples_per_sentence, self.max_updates,
               self.eval_every) < 1:
            raise ValueError("batch sizes, update and eval counts must be positive")


@dataclass
class RunningStats:
    mean: float = 0.0
    std: float = 1.0
    eps: float = 1e-8
    momentum: float = 0.99

    def __post_init__(self):
        if self.std < 0 or self.eps <= 0:
            raise ValueError("need std >= 0 and eps > 0")

    def update(self, values: np.ndarray) -> None:
        m = self.momentum
        var = m * self.std ** 2 + (1 - m) * float(np.var(values))
        self.mean = m * self.mean + (1 - m) * float(np.mean(values))
        self.std = math.sqrt(var)


def normalize_returns(raw, baseline_values, stats: RunningStats, update: bool = True):
    """R~ = (R - b(o) - running_mean) / sqrt(running_std^2 + eps).

    ``raw`` and ``baseline_values`` may be arrays or lists of per-trajectory
    arrays; the result has the same structure.
    """
    nested = isinstance(raw, (list, tuple))
    if nested:
        lengths = [len(r) for r in raw]
        raw_flat = np.concatenate([np.asarray(r, float) for r in raw]) if raw else np.zeros(0)
        b_flat = np.concatenate([np.asarray(b, float) for b in baseline_values]) if raw else np.zeros(0)
    else:
        raw_flat, b_flat = np.asarray(raw, float), np.asarray(baseline_values, float)
    adv = raw_flat - b_flat
    if update and adv.size:
        stats.update(adv)
    out = (adv - stats.mean) / math.sqrt(stats.std ** 2 + stats.eps)
    if nested:
        return np.split(out, np.cumsum(lengths)[:-1])
    return out


# ---------------------------------------------------------------------------
# batched rollouts
# ---------------------------------------------------------------------------

def rollout_batch(env: NMTEnv, agent: Agent, sources, rng: np.random.Generator | None = None,
                  mode: str = "sample", tau_max: int | None = None) -> list[Trajectory]:
    """Run the simultaneous greedy decoding loop for many sources in lockstep.

    Each row follows exactly the same state machine as
    :func:`simultaneous_greedy_decode` (mandatory first READ, decoder re-init
    while nothing is written, READ masked once ``</s>`` is read); rows are
    simply advanced together so the numpy work is shared.
    """
    if mode == "sample" and rng is None:
        raise ValueError("sampling needs an explicit rng")
    B = len(sources)
    prefixes = [env.encode(s) for s in sources]
    lens = np.array([len(s) for s in sources])
    caps = np.array([default_tau_max(n) if tau_max is None else tau_max for n in lens])
    L = int(lens.max())
    cfg = env.cfg
    H = np.zeros((B, L, cfg.hidden))
    K = np.zeros((B, L, cfg.att))
    for i, p in enumerate(prefixes):
        H[i, :len(p)] = p.states
        K[i, :len(p)] = p.keys
    pos = np.arange(L)[None, :]
    eta = np.ones(B, dtype=int)
    tau = np.zeros(B, dtype=int)
    z = env.init_state(H, (pos < eta[:, None]).astype(float))
    y_prev = np.zeros(B, dtype=int)
    s = np.zeros((B, agent.hidden))
    ap = agent.params
    trajs = [Trajectory(source_len=int(n)) for n in lens]
    for tr in trajs:
        tr.record(READ, 1, 0, None)
    active = np.arange(B)
    while active.size:
        mask = pos < eta[active, None]
        yc, zc, c, attn, dist = env.candidate_batch(z[active], y_prev[active], H[active],
                                                    K[active], mask)
        obs = np.concatenate([c, zc, env.embed_target(yc)], axis=-1)
        s_new, _ = nx.gru_forward(obs, s[active], ap["f_W"], ap["f_U"], ap["f_b"])
        s[active] = s_new
        probs = nx.softmax(s_new @ ap["g_W"] + ap["g_b"])
        if mode == "sample":
            act = np.where(rng.random(active.size) < probs[:, READ], READ, WRITE)
        else:
            act = np.where(probs[:, READ] > probs[:, WRITE], READ, WRITE)
        forced = eta[active] >= lens[active]
        act[forced] = WRITE
        ent = -(probs * np.log(np.maximum(probs, nx.LOG_FLOOR))).sum(axis=-1)
        keep = []
        for j, i in enumerate(active):
            tr = trajs[i]
            a = int(act[j])
            tr.observations.append(obs[j])
            tr.actions.append(a)
            tr.forced.append(bool(forced[j]))
            tr.log_probs.append(0.0 if forced[j] else
                                float(np.log(max(probs[j, a], nx.LOG_FLOOR))))
            tr.entropies.append(0.0 if forced[j] else float(ent[j]))
            if a == READ:
                eta[i] += 1
                if tau[i] == 0:
                    m = (np.arange(L) < eta[i]).astype(float)[None]
                    z[i] = env.init_state(H[i:i + 1], m)[0]
                keep.append(i)
            else:
                y = int(yc[j])
                z[i], y_prev[i] = zc[j], y
                tau[i] += 1
                tr.emitted.append(y)
                tr.token_log_probs.append(float(np.log(max(dist[j, y], nx.LOG_FLOOR))))
                tr.attn_records.append(attn[j, :eta[i]].copy())
                tr.reads_before_emit.append(int(eta[i]))
                if y != EOS and tau[i] < caps[i]:
                    keep.append(i)
                else:
                    tr.truncated = y != EOS
            tr.etas.append(int(eta[i]))
            tr.taus.append(int(tau[i]))
        active = np.array(keep, dtype=int)
    for tr in trajs:
        tr.segments = _runs(tr.actions)
    return trajs


def _runs(actions) -> list[int]:
    out, run = [], 0
    for a in actions[1:]:
        if a == WRITE:
            run += 1
        elif run:
            out.append(run)
            run = 0
    out.append(run)
    return out


def sample_trajectories(env: NMTEnv, agent: Agent, sources, n_samples: int,
                        rng: np.random.Generator, mode: str = "sample") -> list[list[Trajectory]]:
    """``n_samples`` independent rollouts per source, grouped by source."""
    flat = [s for s in sources for _ in range(n_samples)]
    trajs = rollout_batch(env, agent, flat, rng, mode)
    return [trajs[i * n_samples:(i + 1) * n_samples] for i in range(len(sources))]


# ---------------------------------------------------------------------------
# gradient updates
# ---------------------------------------------------------------------------

def _decision_arrays(trajs: list[Trajectory], per_step: list[np.ndarray] | None = None):
    """Pad decision steps (actions[1:]) into arrays of shape (N, Tmax, ...)."""
    N = len(trajs)
    T = max(len(t.actions) - 1 for t in trajs)
    D = trajs[0].observations[0].shape[-1]
    obs = np.zeros((N, T, D))
    act = np.zeros((N, T), dtype=int)
    w = np.zeros((N, T))
    vals = np.zeros((N, T))
    for i, tr in enumerate(trajs):
        n = len(tr.actions) - 1
        obs[i, :n] = np.asarray(tr.observations)
        act[i, :n] = tr.actions[1:]
        w[i, :n] = ~np.asarray(tr.forced[1:], dtype=bool)
        if per_step is not None:
            vals[i, :n] = per_step[i]
    return obs, act, w, vals


def policy_gradient_update(agent: Agent, trajs: list[Trajectory], norm_returns,
                           cfg: TrainConfig, apply: bool = True) -> dict:
    """One REINFORCE ascent step with an optional entropy term.

    ``norm_returns[i]`` holds the normalised returns of trajectory ``i`` at its
    decision steps.  The objective is averaged per trajectory; forced steps
    carry no gradient.  With ``apply=False`` the gradient is left in
    ``agent.params.grads`` (as the gradient of the loss to *minimise*).
    """
    obs, act, w, R = _decision_arrays(trajs, norm_returns)
    N = len(trajs)
    probs, caches = agent.forward_batch(obs)
    onehot = np.eye(2)[act]
    logp = np.log(np.maximum(probs, nx.LOG_FLOOR))
    ent = -(probs * logp).sum(axis=-1)
    d_logpi = onehot - probs
    d_ent = -probs * (logp + ent[..., None])
    kappa = cfg.entropy_coef if cfg.entropy_sign == "bonus" else -cfg.entropy_coef
    grad_obj = (R[..., None] * d_logpi + kappa * d_ent) * w[..., None]
    agent.params.zero_grad()
    agent.backward_batch(-grad_obj / N, caches)
    if apply:
        nx.adam_update(agent.params, cfg.lr_agent)
    n_dec = max(w.sum(), 1.0)
    chosen = (logp * onehot).sum(axis=-1)
    return {"entropy": float((ent * w).sum() / n_dec),
            "surrogate": float((chosen * R * w).sum() / N)}


def baseline_update(baseline: Baseline, trajs: list[Trajectory], raw_returns,
                    cfg: TrainConfig, apply: bool = True) -> float:
    """One Adam step on the mean squared error between b(o_t) and R_t."""
    obs = np.concatenate([np.asarray(t.observations) for t in trajs])
    target = np.concatenate([np.asarray(r, float) for r in raw_returns])
    v, hidden = baseline.value_batch(obs)
    err = v - target
    loss = float(np.mean(err ** 2))
    baseline.params.zero_grad()
    baseline.backward_batch(2.0 * err / len(err), obs, hidden)
    if apply:
        nx.adam_update(baseline.params, cfg.lr_baseline)
    return loss


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------

@dataclass
class EvalPoint:
    update: int
    bleu: float
    ap: float
    cw: float
    agent_params: dict | None = None


@dataclass
class TrainResult:
    agent: Agent
    baseline: Baseline
    curve: list[dict] = field(default_factory=list)
    best: EvalPoint | None = None
    seconds: float = 0.0


def quick_eval(env: NMTEnv, agent: Agent, pairs) -> dict:
    """Greedy-mode metrics on ``pairs`` using the batched rollout."""
    trajs = rollout_batch(env, agent, [s for s, _ in pairs], mode="greedy")
    return summarize(trajs, [t for _, t in pairs])


def summarize(trajs: list[Trajectory], references) -> dict:
    bl, ap, cw, cwmax = [], [], [], []
    for tr, ref in zip(trajs, references):
        bl.append(bleu(content_tokens(tr.emitted), content_tokens(ref)))
        ap.append(average_proportion(reads_before_emit(tr.actions), tr.source_len))
        c = consecutive_wait(tr.actions)
        cw.append(mean_wait(tr.actions))
        cwmax.append(max(c))
    return {"bleu": float(np.mean(bl)), "ap": float(np.mean(ap)), "cw": float(np.mean(cw)),
            "cw_max": float(np.max(cwmax))}


def mean_wait(actions) -> float:
    """Average length of the READ runs that precede each WRITE."""
    waits, c = [], 0
    for a in actions:
        if a == READ:
            c += 1
        else:
            waits.append(c)
            c = 0
    return float(np.mean(waits)) if waits else 0.0


def train_agent(env: NMTEnv, agent: Agent, baseline: Baseline, train_pairs, valid_pairs,
                reward_cfg: RewardConfig, cfg: TrainConfig, progress=None) -> TrainResult:
    """Policy-gradient training against a frozen environment.

    Each update draws a batch of sentences, samples trajectories, computes
    quality and delay rewards, returns, baseline values and normalised
    returns, then takes one ascent step on the agent and one descent step on
    the baseline.  The agent is evaluated greedily every ``eval_every``
    updates; the eval point with the best BLEU/AP ratio is kept.
    """
    rng = np.random.default_rng(cfg.seed)
    stats = RunningStats(eps=cfg.stats_eps, momentum=cfg.stats_momentum)
    result = TrainResult(agent, baseline)
    t0 = time.perf_counter()
    low_entropy = 0
    recent = {"reward": [], "entropy": [], "baseline_loss": []}

    def do_eval(update: int) -> None:
        nonlocal low_entropy
        m = quick_eval(env, agent, valid_pairs)
        row = {"update": update,
               "mean_reward": float(np.mean(recent["reward"])) if recent["reward"] else float("nan"),
               "bleu": m["bleu"], "ap": m["ap"], "cw": m["cw"],
               "entropy": float(np.mean(recent["entropy"])) if recent["entropy"] else float("nan"),
               "baseline_loss": (float(np.mean(recent["baseline_loss"]))
                                 if recent["baseline_loss"] else float("nan"))}
        for v in recent.values():
            v.clear()
        result.curve.append(row)
        if progress:
            progress(row)
        if math.isnan(m["bleu"]):
            raise TrainingDiverged(f"evaluation BLEU is NaN at update {update}")
        # the untrained policy is not a candidate: its near-zero AP inflates the ratio
        ratio = m["bleu"] / m["ap"]
        if update and (result.best is None or ratio > result.best.bleu / result.best.ap):
            result.best = EvalPoint(update, m["bleu"], m["ap"], m["cw"],
                                    {k: v.copy() for k, v in agent.params.params.items()})
        if update and row["entropy"] < 1e-4:
            low_entropy += 1
            if low_entropy >= 3:
                raise TrainingDiverged(f"policy entropy collapsed ({row['entropy']:.2e}) "
                                       f"for 3 evaluations, last at update {update}")
        else:
            low_entropy = 0

    do_eval(0)
    for update in range(1, cfg.max_updates + 1):
        idx = rng.choice(len(train_pairs), size=min(cfg.batch_sentences, len(train_pairs)),
                         replace=False)
        batch = [train_pairs[i] for i in idx]
        groups = sample_trajectories(env, agent, [s for s, _ in batch],
                                     cfg.samples_per_sentence, rng)
        trajs, raw = [], []
        for (_, ref), group in zip(batch, groups):
            for tr in group:
                r, R = combined_rewards(tr, ref, reward_cfg)
                trajs.append(tr)
                raw.append(R[1:])
                recent["reward"].append(float(r.sum()))
        obs = np.concatenate([np.asarray(t.observations) for t in trajs])
        b_flat = baseline.value_batch(obs)[0]
        b_vals = np.split(b_flat, np.cumsum([len(r) for r in raw])[:-1])
        norm = normalize_returns(raw, b_vals, stats)
        diag = policy_gradient_update(agent, trajs, norm, cfg)
        recent["entropy"].append(diag["entropy"])
        recent["baseline_loss"].append(baseline_update(baseline, trajs, raw, cfg))
        if update % cfg.eval_every == 0 or update == cfg.max_updates:
            do_eval(update)
    result.seconds = time.perf_counter() - t0
    return result


def restore_best(result: TrainResult) -> Agent:
    """A copy of the agent with the parameters of the best eval point."""
    agent = copy.deepcopy(result.agent)
    if result.best is not None and result.best.agent_params is not None:
        agent.params.assign(result.best.agent_params)
    return agent
