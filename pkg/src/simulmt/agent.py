"""The READ/WRITE agent: observation vector, recurrent stochastic policy and the
baseline value network used for variance reduction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .actions import READ, WRITE
from .nmt_env import Candidate, NMTEnv
from .numerics import ParamStore


def observe(cand: Candidate, env: NMTEnv) -> np.ndarray:
    """o = [context; decoder state; embedding of the candidate token]."""
    return np.concatenate([cand.context, cand.z_cand, env.embed_target(cand.y_cand)])


def observation_dim(env: NMTEnv) -> int:
    c = env.cfg
    return c.ctx_dim + c.dec_dim + c.emb


@dataclass(frozen=True)
class PolicyState:
    s: np.ndarray


@dataclass(frozen=True)
class ActionDist:
    p_read: float
    p_write: float
    entropy: float
    forced: bool = False

    def prob(self, action: int) -> float:
        return self.p_read if action == READ else self.p_write

    def log_prob(self, action: int) -> float:
        return float(np.log(max(self.prob(action), nx.LOG_FLOOR)))


def point_mass(action: int) -> ActionDist:
    return ActionDist(float(action == READ), float(action == WRITE), 0.0, forced=True)


def _entropy(p: np.ndarray) -> np.ndarray:
    return -(p * np.log(np.maximum(p, nx.LOG_FLOOR))).sum(axis=-1)


def choose(dist: ActionDist, mode: str = "greedy", rng: np.random.Generator | None = None) -> int:
    """Pick an action; greedy prefers WRITE on an exact tie."""
    if mode == "greedy":
        return READ if dist.p_read > dist.p_write else WRITE
    if mode == "sample":
        if rng is None:
            raise ValueError("sampling needs an explicit rng")
        return READ if rng.random() < dist.p_read else WRITE
    raise ValueError(f"unknown action mode {mode!r}")


class Agent:
    """GRU policy over observations followed by a 2-way softmax (READ, WRITE)."""

    def __init__(self, obs_dim: int, hidden: int = 64, rng: np.random.Generator | None = None,
                 params: ParamStore | None = None):
        self.obs_dim = obs_dim
        self.hidden = hidden
        if params is None:
            if rng is None:
                raise ValueError("need either params or an rng to initialise them")
            params = ParamStore()
            nx.add_gru(params, "f_", obs_dim, hidden, rng)
            params.add_zeros("g_W", (hidden, 2))
            params.add_zeros("g_b", (2,))
        self.params = params

    def initial_state(self) -> PolicyState:
        return PolicyState(np.zeros(self.hidden))

    def policy_step(self, state: PolicyState, obs: np.ndarray,
                    mask: int | None = None) -> tuple[PolicyState, ActionDist]:
        """Advance the recurrent state; ``mask`` forces a point mass on one action."""
        p = self.params
        if obs.shape[-1] != self.obs_dim:
            raise ValueError(f"observation has dim {obs.shape[-1]}, expected {self.obs_dim}")
        s, _ = nx.gru_forward(obs[None], state.s[None], p["f_W"], p["f_U"], p["f_b"])
        new = PolicyState(s[0])
        if mask is not None:
            return new, point_mass(mask)
        probs = nx.softmax(s @ p["g_W"] + p["g_b"])[0]
        return new, ActionDist(float(probs[READ]), float(probs[WRITE]), float(_entropy(probs)))

    # ---- batched training path ---------------------------------------------

    def forward_batch(self, obs: np.ndarray):
        """Run the policy over (B, T, D) observation sequences.

        Returns (probs (B, T, 2), caches) for :meth:`backward_batch`.
        """
        p = self.params
        B, T, _ = obs.shape
        s = np.zeros((B, self.hidden))
        caches, states = [], np.zeros((B, T, self.hidden))
        for t in range(T):
            s, cache = nx.gru_forward(obs[:, t], s, p["f_W"], p["f_U"], p["f_b"])
            caches.append(cache)
            states[:, t] = s
        probs = nx.softmax(states @ p["g_W"] + p["g_b"])
        return probs, (caches, states)

    def backward_batch(self, grad_logits: np.ndarray, caches) -> None:
        """Accumulate parameter gradients given d(loss)/d(logits), shape (B, T, 2)."""
        p, g = self.params.params, self.params.grads
        gru_caches, states = caches
        B, T, _ = grad_logits.shape
        g["g_W"] += np.einsum("bth,btk->hk", states, grad_logits)
        g["g_b"] += grad_logits.sum(axis=(0, 1))
        gs_out = grad_logits @ p["g_W"].T
        gs = np.zeros((B, self.hidden))
        for t in reversed(range(T)):
            gs = gs + gs_out[:, t]
            _, gs = nx.gru_backward(gs, gru_caches[t], p["f_W"], p["f_U"],
                                    g["f_W"], g["f_U"], g["f_b"])


class Baseline:
    """Two-layer tanh MLP mapping an observation to a scalar value estimate."""

    def __init__(self, obs_dim: int, hidden: int = 64, rng: np.random.Generator | None = None,
                 params: ParamStore | None = None):
        self.obs_dim = obs_dim
        self.hidden = hidden
        if params is None:
            if rng is None:
                raise ValueError("need either params or an rng to initialise them")
            params = ParamStore()
            params.add_uniform("b_W1", (obs_dim, hidden), rng)
            params.add_zeros("b_b1", (hidden,))
            params.add_uniform("b_W2", (hidden, 1), rng)
            params.add_zeros("b_b2", (1,))
        self.params = params

    def value_batch(self, obs: np.ndarray):
        p = self.params
        a = np.tanh(nx.affine(obs, p["b_W1"], p["b_b1"]))
        return nx.affine(a, p["b_W2"], p["b_b2"])[:, 0], a

    def backward_batch(self, grad_v: np.ndarray, obs: np.ndarray, hidden: np.ndarray) -> None:
        p, g = self.params.params, self.params.grads
        ga = nx.affine_backward(grad_v[:, None], hidden, p["b_W2"], g["b_W2"], g["b_b2"])
        nx.affine_backward(nx.tanh_backward(ga, hidden), obs, p["b_W1"], g["b_W1"], g["b_b1"])

    def __call__(self, obs: np.ndarray) -> float:
        return float(self.value_batch(np.atleast_2d(obs))[0][0])


def baseline_value(obs: np.ndarray, baseline: Baseline) -> float:
    return baseline(obs)
