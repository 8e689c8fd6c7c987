"""Command line entry point: ``simulmt <subcommand> [--config c.ini] [--set k=v] [--seed n]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness as hx
from .config import ExperimentConfig, load_config
from .data import Vocabulary, load_parallel
from .decoding import write_trace

log = logging.getLogger("simulmt")

POLICIES = ("agent", "wue", "wos", "wiw", "wid")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI experiment config")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    p.add_argument("--seed", type=int, help="use this seed for every random stream")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simulmt",
                                     description="Simultaneous translation with a learned "
                                                 "READ/WRITE agent.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-data", help="write synthetic train/valid/test corpora")
    _common(p)
    p.add_argument("--out-dir", help="defaults to data.dir")

    p = sub.add_parser("pretrain", help="maximum-likelihood training of the translation model")
    _common(p)

    p = sub.add_parser("train-agent", help="policy-gradient training of the READ/WRITE agent")
    _common(p)

    p = sub.add_parser("decode", help="translate a source file, writing a trace and metrics")
    _common(p)
    p.add_argument("--input", required=True, help="source text, one sentence per line")
    p.add_argument("--reference", help="reference text for BLEU")
    p.add_argument("--policy", choices=POLICIES)
    p.add_argument("--mode", choices=("greedy", "beam"))
    p.add_argument("--beam-k", type=int)
    p.add_argument("--trace", help="JSONL trace path (default <out_dir>/trace.jsonl)")
    p.add_argument("--metrics", help="CSV path (default <out_dir>/decode_metrics.csv)")

    p = sub.add_parser("evaluate", help="score a policy on a corpus split")
    _common(p)
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--policy", choices=POLICIES)
    p.add_argument("--mode", choices=("greedy", "beam"))
    p.add_argument("--beam-k", type=int)
    p.add_argument("--metrics", help="CSV path (default <out_dir>/metrics_<split>.csv)")

    p = sub.add_parser("sweep", help="train one agent per target delay")
    _common(p)

    p = sub.add_parser("export-plots", help="alignment heat-map and quality-vs-delay plot")
    _common(p)
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--sentence", type=int, default=0)
    p.add_argument("--policy", choices=POLICIES)
    return parser


def _config(args) -> ExperimentConfig:
    overrides = list(args.set)
    if args.seed is not None:
        overrides += [f"seeds.{k}={args.seed}" for k in ("data", "env", "agent", "train")]
    for flag, key in (("policy", "decode.policy"), ("mode", "decode.mode"),
                      ("beam_k", "decode.beam_k")):
        if getattr(args, flag, None) is not None:
            overrides.append(f"{key}={getattr(args, flag)}")
    return load_config(args.config, overrides)


def _out_dir(cfg: ExperimentConfig) -> Path:
    d = Path(cfg.data.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _vocab_sizes(cfg: ExperimentConfig) -> tuple[int, int]:
    d = Path(cfg.data.dir)
    return (len(Vocabulary.load(d / "vocab.src")), len(Vocabulary.load(d / "vocab.tgt")))


def _env(cfg: ExperimentConfig):
    return hx.load_env(_out_dir(cfg) / "env.ckpt", cfg, *_vocab_sizes(cfg))


def _policy(cfg: ExperimentConfig, env):
    agent = None
    if cfg.decode.policy == "agent":
        agent, _ = hx.load_agent(_out_dir(cfg) / "agent.ckpt", cfg, env)
    return hx.make_policy(cfg.decode.policy, agent)


def cmd_gen_data(cfg, args) -> None:
    out = Path(args.out_dir or cfg.data.dir)
    splits = hx.synthetic_splits(cfg)
    hx.write_corpus_dir(splits, out)
    (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    print(f"wrote {', '.join(f'{k}={len(v)}' for k, v in splits.items())} pairs to {out}")


def cmd_pretrain(cfg, args) -> None:
    train = hx.read_corpus_dir(cfg.data.dir, "train", cfg.env.max_len)
    valid = hx.read_corpus_dir(cfg.data.dir, "valid", cfg.env.max_len)
    env, rows = hx.pretrain_env(cfg, train, valid)
    out = _out_dir(cfg)
    hx.save_env(out / "env.ckpt", env, cfg)
    hx._write_csv(out / "pretrain_log.csv", ("epoch", "train_ppl", "valid_ppl"), rows,
                  cfg.header())
    print(f"epoch {rows[-1]['epoch']} train_ppl {rows[-1]['train_ppl']:.4f} "
          f"valid_ppl {rows[-1].get('valid_ppl', float('nan')):.4f}; saved {out / 'env.ckpt'}")


def cmd_train_agent(cfg, args) -> None:
    env = _env(cfg)
    train = hx.read_corpus_dir(cfg.data.dir, "train", cfg.env.max_len)
    valid = hx.read_corpus_dir(cfg.data.dir, "valid", cfg.env.max_len)
    progress = (lambda row: log.info("%s", row)) if args.verbose else None
    result, agent = hx.train_from_config(cfg, env, train.pairs, valid.pairs, progress)
    out = _out_dir(cfg)
    hx.save_agent(out / "agent.ckpt", agent, result.baseline, cfg)
    hx.write_curve_csv(out / "curve.csv", result.curve, cfg.header())
    last = result.curve[-1]
    print(f"updates {last['update']} bleu {last['bleu']:.4f} ap {last['ap']:.4f} "
          f"cw {last['cw']:.4f}; saved {out / 'agent.ckpt'}")


def _decode_pairs(cfg, args):
    d = Path(cfg.data.dir)
    vs, vt = Vocabulary.load(d / "vocab.src"), Vocabulary.load(d / "vocab.tgt")
    if args.reference:
        corpus = load_parallel(args.input, args.reference, vs, vt, max_len=10 ** 9)
        return corpus.pairs, vt
    lines = Path(args.input).read_text(encoding="utf-8").splitlines()
    return [(vs.encode(line.split()), None) for line in lines if line.split()], vt


def cmd_decode(cfg, args) -> None:
    env = _env(cfg)
    policy = _policy(cfg, env)
    pairs, vt = _decode_pairs(cfg, args)
    out = _out_dir(cfg)
    trace = Path(args.trace) if args.trace else out / "trace.jsonl"
    metrics = Path(args.metrics) if args.metrics else out / "decode_metrics.csv"
    k = cfg.decode.beam_k
    rows, trajs = [], []
    for i, (src, ref) in enumerate(pairs):
        rep = hx.evaluate(env, policy, [(src, ref)], cfg.decode.mode, k, cfg.reward.max_ngram)
        rows.append(dict(rep.rows[0], sentence_id=i))
        trajs.append(rep.trajectories[0])
    with open(trace, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"config": cfg.to_ini()}) + "\n")
        for i, tr in enumerate(trajs):
            write_trace(tr, fh, sentence_id=i, tokens=vt.itos)
    hx.write_metrics_csv(metrics, hx.EvalReport(rows), cfg.header())
    agg = hx.EvalReport(rows).aggregates
    print(f"decoded {len(rows)} sentences; ap {agg['ap']:.4f} cw {agg['cw']:.4f}; "
          f"trace {trace}; metrics {metrics}")


def cmd_evaluate(cfg, args) -> None:
    env = _env(cfg)
    policy = _policy(cfg, env)
    corpus = hx.read_corpus_dir(cfg.data.dir, args.split, 10 ** 9)
    rep = hx.evaluate(env, policy, corpus.pairs, cfg.decode.mode, cfg.decode.beam_k,
                      cfg.reward.max_ngram)
    path = Path(args.metrics) if args.metrics else _out_dir(cfg) / f"metrics_{args.split}.csv"
    hx.write_metrics_csv(path, rep, cfg.header())
    a = rep.aggregates
    print(f"{cfg.decode.policy} {cfg.decode.mode} n {a['n']} bleu {a['bleu']:.4f} "
          f"ap {a['ap']:.4f} cw {a['cw']:.4f} cw_max {a['cw_max']:.0f}; metrics {path}")


def cmd_sweep(cfg, args) -> None:
    env = _env(cfg)
    train = hx.read_corpus_dir(cfg.data.dir, "train", cfg.env.max_len)
    valid = hx.read_corpus_dir(cfg.data.dir, "valid", cfg.env.max_len)
    out = _out_dir(cfg) / "sweep"
    rows = hx.sweep(cfg, env, train.pairs, valid.pairs, out)
    for r in rows:
        print(f"{r['target']} d*={r['d_star']} c*={r['c_star']} bleu {r['bleu']:.4f} "
              f"ap {r['ap']:.4f} cw {r['cw']:.4f} {r['status']}")
    print(f"sweep table {out / 'sweep.csv'}")


def cmd_export_plots(cfg, args) -> None:
    env = _env(cfg)
    policy = _policy(cfg, env)
    corpus = hx.read_corpus_dir(cfg.data.dir, args.split, 10 ** 9)
    if not 0 <= args.sentence < len(corpus):
        raise IndexError(f"sentence {args.sentence} outside [0, {len(corpus)})")
    src, ref = corpus.pairs[args.sentence]
    tr = hx.evaluate(env, policy, [(src, ref)], cfg.decode.mode, cfg.decode.beam_k).trajectories[0]
    out = _out_dir(cfg) / "plots"
    out.mkdir(exist_ok=True)
    stem = out / f"heatmap_{args.split}_{args.sentence}"
    hx.export_heatmap(tr, corpus.vocab_src.decode(src, strip=False),
                      corpus.vocab_tgt.decode(tr.emitted, strip=False), stem)
    print(f"heat-map {stem.with_suffix('.csv')}")
    table = _out_dir(cfg) / "sweep" / "sweep.csv"
    if table.exists():
        pts = []
        for r in hx.read_csv(table):
            label = f"d*={r['d_star']}" if r["target"] == "ap" else f"c*={r['c_star']}"
            pts.append((float(r["ap"]), float(r["bleu"]), label))
        (out / "quality_delay.svg").write_text(hx.curve_svg(pts), encoding="utf-8")
        print(f"quality-vs-delay {out / 'quality_delay.svg'}")


COMMANDS = {"gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "train-agent": cmd_train_agent,
            "decode": cmd_decode, "evaluate": cmd_evaluate, "sweep": cmd_sweep,
            "export-plots": cmd_export_plots}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command](cfg, args)
    except Exception as exc:  # reported as one line, exit 1
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"simulmt: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
