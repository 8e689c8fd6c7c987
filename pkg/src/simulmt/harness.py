"""Experiment plumbing: building components from a config, evaluation,
beam/greedy comparison, target-delay sweeps and figure-data export."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .actions import READ
from .agent import Agent, Baseline, observation_dim
from .checkpoint import load_checkpoint, restore_store, save_checkpoint
from .config import ConfigError, ExperimentConfig
from .data import Corpus, Vocabulary, generate_synthetic, load_parallel
from .decoding import (AgentPolicy, Trajectory, heuristic_policy, simultaneous_beam_decode,
                       simultaneous_greedy_decode)
from .nmt_env import NMTConfig, NMTEnv
from .rewards import (RewardConfig, average_proportion, bleu, bleu0, consecutive_wait,
                      content_tokens)
from .training import (TrainConfig, TrainingDiverged, TrainResult, mean_wait, pretrain_mle,
                       restore_best, train_agent)

log = logging.getLogger(__name__)

METRIC_FIELDS = ("sentence_id", "bleu", "bleu0", "ap", "cw_mean", "cw_max", "T_s", "T_t",
                 "truncated")
CURVE_FIELDS = ("update", "mean_reward", "bleu", "ap", "cw", "entropy", "baseline_loss")
SWEEP_FIELDS = ("target", "d_star", "c_star", "alpha", "beta", "selected_update", "bleu",
                "ap", "cw", "status")


# ---------------------------------------------------------------------------
# building blocks from a config
# ---------------------------------------------------------------------------

def reward_config(cfg: ExperimentConfig) -> RewardConfig:
    r = cfg.reward
    return RewardConfig(alpha=r.alpha, beta=r.beta, d_star=r.d_star, c_star=r.c_star,
                        max_ngram=r.max_ngram)


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    t = cfg.train
    return TrainConfig(lr_agent=t.lr_agent, lr_baseline=t.lr_baseline,
                       entropy_coef=t.entropy_coef, entropy_sign=t.entropy_sign,
                       batch_sentences=t.batch_sentences,
                       samples_per_sentence=t.samples_per_sentence,
                       max_updates=t.max_updates, eval_every=t.eval_every,
                       seed=cfg.seeds.train, stats_momentum=t.stats_momentum,
                       stats_eps=t.stats_eps)


def synthetic_splits(cfg: ExperimentConfig) -> dict[str, Corpus]:
    """Train/valid/test corpora for the configured synthetic task, one seed per split."""
    d = cfg.data
    out = {}
    for i, (split, n) in enumerate((("train", d.n_train), ("valid", d.n_valid),
                                    ("test", d.n_test))):
        out[split] = generate_synthetic(d.task, n, (d.len_min, d.len_max), d.vocab_size,
                                        seed=cfg.seeds.data + i, window=d.window,
                                        shift=d.shift, split=split)
    return out


def write_corpus_dir(splits: dict[str, Corpus], directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    first = next(iter(splits.values()))
    first.vocab_src.save(directory / "vocab.src")
    first.vocab_tgt.save(directory / "vocab.tgt")
    for name, corpus in splits.items():
        corpus.write(directory / f"{name}.src", directory / f"{name}.tgt")


def read_corpus_dir(directory, split: str, max_len: int = 50) -> Corpus:
    directory = Path(directory)
    vs = Vocabulary.load(directory / "vocab.src")
    vt = Vocabulary.load(directory / "vocab.tgt")
    return load_parallel(directory / f"{split}.src", directory / f"{split}.tgt", vs, vt,
                         max_len=max_len, split=split)


def new_env(cfg: ExperimentConfig, src_vocab: int, tgt_vocab: int) -> NMTEnv:
    e = cfg.env
    return NMTEnv(NMTConfig(src_vocab, tgt_vocab, e.emb, e.hidden, e.att),
                  rng=np.random.default_rng(cfg.seeds.env))


def pretrain_env(cfg: ExperimentConfig, train: Corpus, valid: Corpus | None = None):
    env = new_env(cfg, len(train.vocab_src), len(train.vocab_tgt))
    e = cfg.env
    logrows = pretrain_mle(env, train.pairs, epochs=e.epochs, batch_size=e.batch_size, lr=e.lr,
                           seed=cfg.seeds.env, valid_pairs=valid.pairs if valid else None,
                           max_len=e.max_len, clip=e.clip, prefix_init=e.prefix_init)
    return env, logrows


def new_agent(cfg: ExperimentConfig, env: NMTEnv) -> tuple[Agent, Baseline]:
    rng = np.random.default_rng(cfg.seeds.agent)
    dim = observation_dim(env)
    return (Agent(dim, cfg.agent.hidden, rng=rng),
            Baseline(dim, cfg.agent.baseline_hidden, rng=rng))


def train_from_config(cfg: ExperimentConfig, env: NMTEnv, train_pairs, valid_pairs,
                      progress=None) -> tuple[TrainResult, Agent]:
    """Train one agent; returns the result and the agent chosen by ``train.select``."""
    agent, baseline = new_agent(cfg, env)
    result = train_agent(env, agent, baseline, train_pairs, valid_pairs, reward_config(cfg),
                         train_config(cfg), progress)
    chosen = restore_best(result) if cfg.train.select == "ratio" else result.agent
    return result, chosen


def save_env(path, env: NMTEnv, cfg: ExperimentConfig) -> None:
    c = env.cfg
    text = cfg.to_ini() + f"\n# vocab src={c.src_vocab} tgt={c.tgt_vocab}\n"
    save_checkpoint(path, {"env": env.params}, text)


def load_env(path, cfg: ExperimentConfig, src_vocab: int, tgt_vocab: int) -> NMTEnv:
    env = new_env(cfg, src_vocab, tgt_vocab)
    restore_store(load_checkpoint(path), "env", env.params)
    return env


def save_agent(path, agent: Agent, baseline: Baseline, cfg: ExperimentConfig) -> None:
    save_checkpoint(path, {"agent": agent.params, "baseline": baseline.params}, cfg.to_ini())


def load_agent(path, cfg: ExperimentConfig, env: NMTEnv) -> tuple[Agent, Baseline]:
    agent, baseline = new_agent(cfg, env)
    ckpt = load_checkpoint(path)
    restore_store(ckpt, "agent", agent.params)
    restore_store(ckpt, "baseline", baseline.params)
    return agent, baseline


def make_policy(name: str, agent: Agent | None = None):
    if name == "agent":
        if agent is None:
            raise ValueError("policy 'agent' needs a trained agent")
        return AgentPolicy(agent)
    return heuristic_policy(name)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def sentence_metrics(traj: Trajectory, reference, sentence_id: int, max_ngram: int = 4) -> dict:
    """Per-sentence scores; BLEU is NaN when there is no reference."""
    hyp = content_tokens(traj.emitted)
    ref = content_tokens(reference) if reference is not None else []
    c = consecutive_wait(traj.actions)
    return {"sentence_id": sentence_id,
            "bleu": bleu(hyp, ref, max_ngram) if ref else math.nan,
            "bleu0": bleu0(hyp, ref, max_ngram) if ref else math.nan,
            "ap": average_proportion(traj.reads_before_emit, traj.source_len),
            "cw_mean": mean_wait(traj.actions),
            "cw_max": max(c),
            "T_s": traj.actions.count(READ),
            "T_t": len(traj.emitted),
            "truncated": int(traj.truncated)}


@dataclass
class EvalReport:
    rows: list[dict]
    trajectories: list[Trajectory] = field(repr=False, default_factory=list)

    @property
    def aggregates(self) -> dict:
        """Unweighted sentence means, plus the largest single wait."""
        if not self.rows:
            return {"bleu": math.nan, "ap": math.nan, "cw": math.nan, "cw_max": math.nan, "n": 0}
        col = lambda k: np.array([r[k] for r in self.rows], dtype=float)
        return {"bleu": float(col("bleu").mean()), "ap": float(col("ap").mean()),
                "cw": float(col("cw_mean").mean()), "cw_max": float(col("cw_max").max()),
                "n": len(self.rows)}


def evaluate(env: NMTEnv, policy, pairs, mode: str = "greedy", k: int = 5,
             max_ngram: int = 4) -> EvalReport:
    """Decode every source sequentially and score it against its reference."""
    if mode not in ("greedy", "beam"):
        raise ValueError(f"unknown decoding mode {mode!r}")
    rows, trajs = [], []
    for i, (src, ref) in enumerate(pairs):
        if mode == "greedy":
            tr = simultaneous_greedy_decode(env, policy, src)
        else:
            tr = simultaneous_beam_decode(env, policy, src, k=k)
        trajs.append(tr)
        rows.append(sentence_metrics(tr, ref, i, max_ngram))
    return EvalReport(rows, trajs)


def compare_beam(env: NMTEnv, policy, pairs, k: int = 5) -> dict:
    """Paired greedy vs. beam(k) aggregates and the delay shift beam search causes."""
    g = evaluate(env, policy, pairs, "greedy").aggregates
    b = evaluate(env, policy, pairs, "beam", k).aggregates
    return {"greedy": g, "beam": b,
            "delta_bleu": b["bleu"] - g["bleu"], "delta_ap": b["ap"] - g["ap"],
            "delta_cw": b["cw"] - g["cw"]}


def _write_csv(path, fieldnames, rows, header: str = "") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(header)
        w = csv.DictWriter(fh, fieldnames=fieldnames, extrasaction="ignore",
                           lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def read_csv(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def write_metrics_csv(path, report: EvalReport, header: str = "") -> None:
    _write_csv(path, METRIC_FIELDS, report.rows, header)


def write_curve_csv(path, curve: list[dict], header: str = "") -> None:
    _write_csv(path, CURVE_FIELDS, curve, header)


# ---------------------------------------------------------------------------
# target-delay sweep
# ---------------------------------------------------------------------------

def sweep_configs(cfg: ExperimentConfig) -> list[ExperimentConfig]:
    """One config per grid point; only the targeted delay term stays active."""
    out = []
    if cfg.sweep.target == "ap":
        if cfg.reward.beta == 0:
            raise ConfigError("an AP sweep with reward.beta = 0 has no delay term")
        for d in cfg.d_star_grid:
            c = cfg.copy()
            c.reward.d_star, c.reward.alpha = d, 0.0
            out.append(c)
    else:
        if cfg.reward.alpha == 0:
            raise ConfigError("a CW sweep with reward.alpha = 0 has no delay term")
        for cs in cfg.c_star_grid:
            c = cfg.copy()
            c.reward.c_star, c.reward.beta = cs, 0.0
            out.append(c)
    return out


def sweep(cfg: ExperimentConfig, env: NMTEnv, train_pairs, valid_pairs, out_dir=None,
          progress=None) -> list[dict]:
    """Train one agent per grid point and report its selected eval point.

    A diverging grid point is reported with its reason and does not stop the
    others.  With ``out_dir`` every point writes a learning curve and agent
    checkpoint, and the whole table goes to ``sweep.csv``.
    """
    rows = []
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    for i, c in enumerate(sweep_configs(cfg)):
        row = {"target": cfg.sweep.target, "d_star": c.reward.d_star, "c_star": c.reward.c_star,
               "alpha": c.reward.alpha, "beta": c.reward.beta}
        try:
            result, agent = train_from_config(c, env, train_pairs, valid_pairs, progress)
        except TrainingDiverged as exc:
            log.warning("grid point %d diverged: %s", i, exc)
            row.update(selected_update="", bleu=math.nan, ap=math.nan, cw=math.nan,
                       status=f"diverged: {exc}")
            rows.append(row)
            continue
        if c.train.select == "ratio" and result.best is not None:
            pt = result.best
            row.update(selected_update=pt.update, bleu=pt.bleu, ap=pt.ap, cw=pt.cw)
        else:
            last = result.curve[-1]
            row.update(selected_update=last["update"], bleu=last["bleu"], ap=last["ap"],
                       cw=last["cw"])
        row["status"] = "ok"
        rows.append(row)
        if out_dir is not None:
            write_curve_csv(out_dir / f"curve_{i}.csv", result.curve, c.header())
            save_agent(out_dir / f"agent_{i}.ckpt", agent, result.baseline, c)
    if out_dir is not None:
        _write_csv(out_dir / "sweep.csv", SWEEP_FIELDS, rows, cfg.header())
    return rows


# ---------------------------------------------------------------------------
# figure data
# ---------------------------------------------------------------------------

def alignment_matrix(traj: Trajectory) -> np.ndarray:
    """Rows are source positions, columns emitted tokens, cells attention weights."""
    M = np.zeros((traj.source_len, len(traj.attn_records)))
    for j, a in enumerate(traj.attn_records):
        M[:len(a), j] = a
    return M


def export_heatmap(traj: Trajectory, src_tokens: list[str], tgt_tokens: list[str], path,
                   svg: bool = True) -> np.ndarray:
    """Write ``path``.csv (alignment), ``path``_wait.csv (s per token) and ``path``.svg."""
    path = Path(path)
    M = alignment_matrix(traj)
    if len(src_tokens) != M.shape[0] or len(tgt_tokens) != M.shape[1]:
        raise ValueError(f"labels {len(src_tokens)}x{len(tgt_tokens)} do not match "
                         f"alignment {M.shape}")
    with open(path.with_suffix(".csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source"] + list(tgt_tokens))
        for tok, row in zip(src_tokens, M):
            w.writerow([tok] + [repr(float(v)) for v in row])
    with open(path.with_name(path.stem + "_wait.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau", "token", "s"])
        for j, (tok, s) in enumerate(zip(tgt_tokens, traj.reads_before_emit), start=1):
            w.writerow([j, tok, s])
    if svg:
        path.with_suffix(".svg").write_text(heatmap_svg(M, src_tokens, tgt_tokens),
                                            encoding="utf-8")
    return M


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def heatmap_svg(M: np.ndarray, src_tokens, tgt_tokens, cell: int = 22) -> str:
    n_src, n_tgt = M.shape
    left, top = 60, 60
    w, h = left + cell * n_tgt + 10, top + cell * n_src + 10
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
           f'font-family="monospace" font-size="11">']
    for j, tok in enumerate(tgt_tokens):
        x = left + j * cell + cell // 2
        out.append(f'<text x="{x}" y="{top - 6}" text-anchor="end" '
                   f'transform="rotate(-60 {x} {top - 6})">{_esc(tok)}</text>')
    for i, tok in enumerate(src_tokens):
        out.append(f'<text x="{left - 4}" y="{top + i * cell + cell * 0.7:.1f}" '
                   f'text-anchor="end">{_esc(tok)}</text>')
        for j in range(n_tgt):
            shade = int(round(255 * (1.0 - float(M[i, j]))))
            out.append(f'<rect x="{left + j * cell}" y="{top + i * cell}" width="{cell}" '
                       f'height="{cell}" fill="rgb({shade},{shade},{shade})" stroke="#ccc"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def curve_svg(points: list[tuple[float, float, str]], width: int = 360, height: int = 280,
              xlabel: str = "AP", ylabel: str = "BLEU") -> str:
    """Scatter plot of (delay, quality, label) points on [0, 1] axes."""
    pad = 40
    sx = lambda v: pad + v * (width - 2 * pad)
    sy = lambda v: height - pad - v * (height - 2 * pad)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="monospace" font-size="11">',
           f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
           f'fill="none" stroke="black"/>',
           f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle">{xlabel}</text>',
           f'<text x="12" y="{height / 2}" transform="rotate(-90 12 {height / 2})" '
           f'text-anchor="middle">{ylabel}</text>']
    for x, y, label in points:
        if not (math.isfinite(x) and math.isfinite(y)):
            continue
        cx, cy = sx(min(max(x, 0.0), 1.0)), sy(min(max(y, 0.0), 1.0))
        out.append(f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="4"/>')
        out.append(f'<text x="{cx + 6:.1f}" y="{cy - 6:.1f}">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
