"""The NMT environment: a left-to-right GRU encoder that can be extended one
source token at a time, and an additive-attention GRU decoder that only looks
at the source prefix read so far.

The sequential API (``encode_step`` / ``init_decoder`` / ``decode_candidate`` /
``commit``) is what the decoders use.  ``candidate_batch`` is the same
computation for many independent prefixes at once, and ``nll_batch`` is the
teacher-forced training loss with its hand-written backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import ParamStore

BOS, EOS, UNK = 0, 1, 2


@dataclass(frozen=True)
class NMTConfig:
    src_vocab: int
    tgt_vocab: int
    emb: int = 32
    hidden: int = 64
    att: int = 64

    @property
    def ctx_dim(self) -> int:
        return self.hidden

    @property
    def dec_dim(self) -> int:
        return self.hidden


@dataclass(frozen=True)
class EncoderPrefix:
    """Encoder states h_1..h_eta for the source tokens read so far.

    ``keys`` caches the attention projection of each state; it is a pure
    function of ``states`` so it never needs recomputing for earlier rows.
    """
    states: np.ndarray
    keys: np.ndarray
    tokens_read: tuple[int, ...] = ()
    source_exhausted: bool = False

    def __len__(self) -> int:
        return len(self.tokens_read)

    @property
    def last(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class DecoderContext:
    z_prev: np.ndarray
    y_prev: int = BOS
    tau: int = 0


@dataclass(frozen=True)
class Candidate:
    y_cand: int
    z_cand: np.ndarray
    context: np.ndarray
    attn: np.ndarray
    dist: np.ndarray

    @property
    def log_prob(self) -> float:
        return float(np.log(max(self.dist[self.y_cand], nx.LOG_FLOOR)))


def build_params(cfg: NMTConfig, rng: np.random.Generator) -> ParamStore:
    s = ParamStore()
    s.add_uniform("src_emb", (cfg.src_vocab, cfg.emb), rng)
    nx.add_gru(s, "enc_", cfg.emb, cfg.hidden, rng)
    s.add_uniform("init_W", (cfg.hidden, cfg.dec_dim), rng)
    s.add_zeros("init_b", (cfg.dec_dim,))
    s.add_uniform("att_Wz", (cfg.dec_dim, cfg.att), rng)
    s.add_uniform("att_Wh", (cfg.hidden, cfg.att), rng)
    s.add_zeros("att_b", (cfg.att,))
    s.add_uniform("att_v", (cfg.att,), rng)
    s.add_uniform("tgt_emb", (cfg.tgt_vocab, cfg.emb), rng)
    nx.add_gru(s, "dec_", cfg.emb + cfg.hidden, cfg.dec_dim, rng)
    s.add_uniform("out_W", (cfg.dec_dim, cfg.tgt_vocab), rng)
    s.add_zeros("out_b", (cfg.tgt_vocab,))
    return s


class NMTEnv:
    """A (normally frozen) encoder-decoder plus the operations the agent needs."""

    def __init__(self, cfg: NMTConfig, params: ParamStore | None = None,
                 rng: np.random.Generator | None = None):
        self.cfg = cfg
        if params is None:
            if rng is None:
                raise ValueError("need either params or an rng to initialise them")
            params = build_params(cfg, rng)
        self.params = params

    # ---- encoder -----------------------------------------------------------

    def empty_prefix(self) -> EncoderPrefix:
        c = self.cfg
        return EncoderPrefix(np.zeros((0, c.hidden)), np.zeros((0, c.att)))

    def encode_step(self, prefix: EncoderPrefix, x_next: int) -> EncoderPrefix:
        """Read one more source token; returns a new, one-longer prefix."""
        if prefix.source_exhausted:
            raise ValueError("cannot read past </s>")
        if not 0 <= x_next < self.cfg.src_vocab:
            raise IndexError(f"source token {x_next} out of range")
        p = self.params
        h_prev = prefix.states[-1:] if len(prefix) else np.zeros((1, self.cfg.hidden))
        x = p["src_emb"][[x_next]]
        h, _ = nx.gru_forward(x, h_prev, p["enc_W"], p["enc_U"], p["enc_b"])
        key = h @ p["att_Wh"]
        return EncoderPrefix(
            states=np.concatenate([prefix.states, h]),
            keys=np.concatenate([prefix.keys, key]),
            tokens_read=prefix.tokens_read + (int(x_next),),
            source_exhausted=int(x_next) == EOS,
        )

    def encode(self, src_ids) -> EncoderPrefix:
        prefix = self.empty_prefix()
        for x in src_ids:
            prefix = self.encode_step(prefix, int(x))
        return prefix

    # ---- decoder -----------------------------------------------------------

    def init_state(self, states: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        """z_0 = tanh(W mean(H) + b) for a batch (B, L, h) of encoder states."""
        p = self.params
        if mask is None:
            mean = states.mean(axis=1)
        else:
            mean = (states * mask[:, :, None]).sum(axis=1) / mask.sum(axis=1, keepdims=True)
        return np.tanh(mean @ p["init_W"] + p["init_b"])

    def init_decoder(self, prefix: EncoderPrefix) -> DecoderContext:
        if len(prefix) == 0:
            raise ValueError("decoder init needs at least one encoder state")
        z0 = self.init_state(prefix.states[None])[0]
        return DecoderContext(z_prev=z0, y_prev=BOS, tau=0)

    def candidate_batch(self, z_prev: np.ndarray, y_prev, states: np.ndarray,
                        keys: np.ndarray, mask: np.ndarray | None = None):
        """Greedy next-token proposals for B prefixes at once.

        Returns (y_cand, z_cand, context, attn, dist).  Attention is restricted
        to ``mask`` (or to all L positions when no mask is given).
        """
        p = self.params
        pre = np.tanh(keys + (z_prev @ p["att_Wz"])[:, None, :] + p["att_b"])
        attn = nx.softmax(pre @ p["att_v"], mask)
        context = nx.weighted_sum(attn, states)
        inp = np.concatenate([p["tgt_emb"][np.asarray(y_prev)], context], axis=-1)
        z, _ = nx.gru_forward(inp, z_prev, p["dec_W"], p["dec_U"], p["dec_b"])
        dist = nx.softmax(z @ p["out_W"] + p["out_b"])
        return dist.argmax(axis=-1), z, context, attn, dist

    def decode_candidate(self, ctx: DecoderContext, prefix: EncoderPrefix) -> Candidate:
        """Propose y_tau from the prefix read so far; ``ctx`` is not modified."""
        if len(prefix) == 0:
            raise ValueError("cannot decode from an empty prefix")
        y, z, c, a, d = self.candidate_batch(
            ctx.z_prev[None], [ctx.y_prev], prefix.states[None], prefix.keys[None])
        return Candidate(int(y[0]), z[0], c[0], a[0], d[0])

    @staticmethod
    def commit(ctx: DecoderContext, cand: Candidate) -> DecoderContext:
        return DecoderContext(z_prev=cand.z_cand, y_prev=cand.y_cand, tau=ctx.tau + 1)

    def embed_target(self, ids) -> np.ndarray:
        return self.params["tgt_emb"][np.asarray(ids)]

    # ---- training loss -----------------------------------------------------

    def nll_batch(self, src: list, tgt: list, with_grad: bool = True,
                  init_len: list[int] | None = None) -> float:
        """Sum over the batch of teacher-forced sentence NLLs.

        Gradients of the same quantity are accumulated into ``params.grads``
        when ``with_grad`` is set.  ``init_len[i]`` restricts the mean behind
        z_0 of sentence ``i`` to its first ``init_len[i]`` encoder states.
        """
        return _nll_batch(self, src, tgt, with_grad, init_len)

    def sentence_nll(self, src_ids, tgt_ids, with_grad: bool = False) -> float:
        if not len(src_ids) or src_ids[-1] != EOS or not len(tgt_ids) or tgt_ids[-1] != EOS:
            raise ValueError("source and target must end with </s>")
        return self.nll_batch([src_ids], [tgt_ids], with_grad)


def _pad(seqs: list, fill: int = EOS) -> tuple[np.ndarray, np.ndarray]:
    L = max(len(s) for s in seqs)
    ids = np.full((len(seqs), L), fill, dtype=np.int64)
    mask = np.zeros((len(seqs), L))
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        mask[i, :len(s)] = 1.0
    return ids, mask


def _nll_batch(env: NMTEnv, src: list, tgt: list, with_grad: bool,
               init_len: list[int] | None = None) -> float:
    p, g = env.params.params, env.params.grads
    cfg = env.cfg
    src_ids, src_mask = _pad(src)
    tgt_ids, tgt_mask = _pad(tgt)
    if src_ids.max() >= cfg.src_vocab or src_ids.min() < 0:
        raise IndexError("source token id out of vocabulary range")
    if tgt_ids.max() >= cfg.tgt_vocab or tgt_ids.min() < 0:
        raise IndexError("target token id out of vocabulary range")
    B, Ls = src_ids.shape
    Lt = tgt_ids.shape[1]

    # encoder
    h = np.zeros((B, cfg.hidden))
    enc_caches, states = [], np.zeros((B, Ls, cfg.hidden))
    x_emb = p["src_emb"][src_ids]
    for j in range(Ls):
        h, cache = nx.gru_forward(x_emb[:, j], h, p["enc_W"], p["enc_U"], p["enc_b"])
        enc_caches.append(cache)
        states[:, j] = h
    keys = states @ p["att_Wh"]
    init_mask = src_mask
    if init_len is not None:
        if any(not 1 <= k <= len(s) for k, s in zip(init_len, src)):
            raise ValueError("init_len must lie in [1, len(source)]")
        init_mask = (np.arange(Ls)[None, :] < np.asarray(init_len)[:, None]).astype(float)
    denom = init_mask.sum(axis=1, keepdims=True)
    mean = (states * init_mask[:, :, None]).sum(axis=1) / denom
    z = np.tanh(mean @ p["init_W"] + p["init_b"])
    z0 = z

    # decoder with teacher forcing
    y_in = np.concatenate([np.full((B, 1), BOS), tgt_ids[:, :-1]], axis=1)
    dec_emb = p["tgt_emb"][y_in]
    total = 0.0
    steps = []
    for t in range(Lt):
        z_prev = z
        pre = np.tanh(keys + (z_prev @ p["att_Wz"])[:, None, :] + p["att_b"])
        attn = nx.softmax(pre @ p["att_v"], src_mask > 0)
        ctx = nx.weighted_sum(attn, states)
        inp = np.concatenate([dec_emb[:, t], ctx], axis=-1)
        z, gcache = nx.gru_forward(inp, z_prev, p["dec_W"], p["dec_U"], p["dec_b"])
        loss, probs = nx.softmax_cross_entropy(z @ p["out_W"] + p["out_b"], tgt_ids[:, t])
        total += float((loss * tgt_mask[:, t]).sum())
        steps.append((z_prev, pre, attn, gcache, z, probs))
    if not with_grad:
        return total

    gH = np.zeros_like(states)
    gkeys = np.zeros_like(keys)
    gz = np.zeros((B, cfg.dec_dim))
    for t in reversed(range(Lt)):
        z_prev, pre, attn, gcache, z_t, probs = steps[t]
        glogits = nx.softmax_cross_entropy_backward(tgt_mask[:, t], probs, tgt_ids[:, t])
        gz += nx.affine_backward(glogits, z_t, p["out_W"], g["out_W"], g["out_b"])
        ginp, gz_prev = nx.gru_backward(gz, gcache, p["dec_W"], p["dec_U"],
                                        g["dec_W"], g["dec_U"], g["dec_b"])
        gemb, gctx = ginp[:, :cfg.emb], ginp[:, cfg.emb:]
        nx.embedding_backward(g["tgt_emb"], y_in[:, t], gemb)
        gattn, gH_c = nx.weighted_sum_backward(gctx, attn, states)
        gH += gH_c
        ge = nx.softmax_backward(gattn, attn)
        g["att_v"] += np.einsum("bla,bl->a", pre, ge)
        gs = ge[:, :, None] * p["att_v"] * (1.0 - pre * pre)
        gkeys += gs
        gq = gs.sum(axis=1)
        g["att_b"] += gq.sum(axis=0)
        g["att_Wz"] += z_prev.T @ gq
        gz = gz_prev + gq @ p["att_Wz"].T

    # back through z_0 = tanh(mean W + b)
    gpre0 = gz * (1.0 - z0 * z0)
    g["init_W"] += mean.T @ gpre0
    g["init_b"] += gpre0.sum(axis=0)
    gmean = gpre0 @ p["init_W"].T
    gH += (gmean / denom)[:, None, :] * init_mask[:, :, None]
    g["att_Wh"] += np.einsum("blh,bla->ha", states, gkeys)
    gH += gkeys @ p["att_Wh"].T

    gh = np.zeros((B, cfg.hidden))
    for j in reversed(range(Ls)):
        gh = gh + gH[:, j]
        gx, gh = nx.gru_backward(gh, enc_caches[j], p["enc_W"], p["enc_U"],
                                 g["enc_W"], g["enc_U"], g["enc_b"])
        nx.embedding_backward(g["src_emb"], src_ids[:, j], gx)
    return total
