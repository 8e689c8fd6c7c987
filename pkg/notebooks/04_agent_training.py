"""
Training a READ/WRITE agent
===========================

Trains an agent with a target AP of 0.5 on the copy task, compares greedy and
beam decoding under the trained policy and writes an alignment heat-map.
Takes about two minutes on one CPU.
"""

from pathlib import Path

from simulmt import harness as hx
from simulmt.config import ExperimentConfig
from simulmt.decoding import AgentPolicy

cfg = ExperimentConfig()
cfg.set("train.max_updates", "300")
cfg.set("train.eval_every", "50")
cfg.set("reward.d_star", "0.5")

splits = hx.synthetic_splits(cfg)
env, _ = hx.pretrain_env(cfg, splits["train"], splits["valid"])
result, agent = hx.train_from_config(cfg, env, splits["train"].pairs, splits["valid"].pairs,
                                     progress=lambda row: print(row))
print("selected update", result.best.update if result.best else "final")

policy = AgentPolicy(agent)
test = splits["test"].pairs
cmp = hx.compare_beam(env, policy, test, k=5)
for mode in ("greedy", "beam"):
    a = cmp[mode]
    print(f"{mode:6s} bleu {a['bleu']:.3f}  ap {a['ap']:.3f}  cw {a['cw']:.2f}")

out = Path("notebook_out")
out.mkdir(exist_ok=True)
rep = hx.evaluate(env, policy, test[:1])
corpus = splits["test"]
tr = rep.trajectories[0]
hx.export_heatmap(tr, corpus.vocab_src.decode(test[0][0], strip=False),
                  corpus.vocab_tgt.decode(tr.emitted, strip=False), out / "heatmap")
print("actions", tr.action_string, "heat-map in", out)
