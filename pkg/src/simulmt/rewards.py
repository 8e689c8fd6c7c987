"""Quality and delay measures, and the per-step rewards built from them.

All functions are pure.  Token sequences are compared as given; callers strip
``</s>`` with :func:`content_tokens` before scoring translations.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .actions import READ, WRITE
from .nmt_env import BOS, EOS


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = -0.025
    beta: float = -1.0
    d_star: float = 0.5
    c_star: float = 5.0
    max_ngram: int = 4
    bp_at_end_only: bool = True

    def __post_init__(self):
        if self.alpha > 0 or self.beta > 0:
            raise ValueError("delay coefficients must satisfy alpha <= 0 and beta <= 0")
        if not 0 < self.d_star <= 1:
            raise ValueError("d_star must lie in (0, 1]")
        if self.c_star < 1:
            raise ValueError("c_star must be >= 1")
        if self.max_ngram < 1:
            raise ValueError("max_ngram must be >= 1")
        if not self.bp_at_end_only:
            raise ValueError("brevity penalty is only applied at the final step")


@dataclass(frozen=True)
class DelayTrace:
    c_seq: tuple[int, ...]
    s_per_emit: tuple[int, ...]
    d_final: float


def content_tokens(ids) -> list[int]:
    return [int(i) for i in ids if int(i) not in (BOS, EOS)]


def _ngrams(seq: Sequence, n: int) -> Counter:
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def bleu0(candidate: Sequence, reference: Sequence, max_ngram: int = 4) -> float:
    """Smoothed geometric mean of modified n-gram precisions, no brevity penalty.

    Orders n >= 2 use add-one smoothing on numerator and denominator; orders
    longer than the candidate are left out of the mean.
    """
    if not len(reference):
        raise ValueError("reference must be non-empty")
    if not len(candidate):
        return 0.0
    log_sum, orders = 0.0, 0
    for n in range(1, max_ngram + 1):
        if len(candidate) < n:
            break
        cand = _ngrams(candidate, n)
        ref = _ngrams(reference, n)
        matches = sum(min(c, ref[g]) for g, c in cand.items())
        total = len(candidate) - n + 1
        if n >= 2:
            matches, total = matches + 1, total + 1
        if matches == 0:
            return 0.0
        log_sum += math.log(matches / total)
        orders += 1
    return math.exp(log_sum / orders)


def brevity_penalty(cand_len: int, ref_len: int) -> float:
    if cand_len == 0:
        return 0.0
    return 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)


def bleu(candidate: Sequence, reference: Sequence, max_ngram: int = 4) -> float:
    return brevity_penalty(len(candidate), len(reference)) * bleu0(candidate, reference, max_ngram)


def quality_rewards(traj, reference, max_ngram: int = 4) -> np.ndarray:
    """Per-step quality reward: BLEU0 increments, full BLEU at the last step."""
    ref = content_tokens(reference)
    actions = traj.actions
    T = len(actions)
    r = np.zeros(T)
    prefix: list[int] = []
    prev = 0.0
    emitted = iter(traj.emitted)
    for t, a in enumerate(actions):
        if a == WRITE:
            y = next(emitted)
            if y not in (BOS, EOS):
                prefix.append(int(y))
            if t < T - 1:
                cur = bleu0(prefix, ref, max_ngram)
                r[t] = cur - prev
                prev = cur
    r[T - 1] = bleu(prefix, ref, max_ngram)
    return r


def reads_before_emit(actions) -> list[int]:
    """s(tau): number of READs preceding each WRITE."""
    s, eta = [], 0
    for a in actions:
        if a == READ:
            eta += 1
        else:
            s.append(eta)
    return s


def average_proportion(s_per_emit: Sequence[int], source_len: int) -> float:
    if not len(s_per_emit):
        raise ValueError("average proportion is undefined without emissions")
    if source_len < 1:
        raise ValueError("source length must be positive")
    return float(sum(s_per_emit)) / (source_len * len(s_per_emit))


def consecutive_wait(actions) -> list[int]:
    c, out = 0, []
    for a in actions:
        c = c + 1 if a == READ else 0
        out.append(c)
    return out


def delay_trace(actions, source_len: int) -> DelayTrace:
    s = reads_before_emit(actions)
    return DelayTrace(tuple(consecutive_wait(actions)), tuple(s),
                      average_proportion(s, source_len))


def delay_rewards(delay: DelayTrace, cfg: RewardConfig, T: int | None = None) -> np.ndarray:
    """alpha * (sgn(c_t - c*) + 1) + beta * max(0, d_t - d*), with d_t = 0 before T."""
    T = len(delay.c_seq) if T is None else T
    c = np.asarray(delay.c_seq[:T], dtype=float)
    r = cfg.alpha * (np.sign(c - cfg.c_star) + 1.0)
    d = np.zeros(T)
    d[-1] = delay.d_final
    return r + cfg.beta * np.maximum(0.0, d - cfg.d_star)


def returns(r: np.ndarray) -> np.ndarray:
    """R_t = sum_{k >= t} r_k."""
    return np.cumsum(np.asarray(r, dtype=float)[::-1])[::-1].copy()


def combined_rewards(traj, reference, cfg: RewardConfig) -> tuple[np.ndarray, np.ndarray]:
    rq = quality_rewards(traj, reference, cfg.max_ngram)
    rd = delay_rewards(delay_trace(traj.actions, traj.source_len), cfg, len(traj.actions))
    r = rq + rd
    return r, returns(r)
