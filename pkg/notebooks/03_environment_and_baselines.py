"""
A pre-trained copy model and the heuristic policies
===================================================

Pre-trains a small translation model on the synthetic copy task, then decodes
the test split with the four hand-written READ/WRITE rules.  Takes under a
minute on one CPU.
"""

from simulmt import harness as hx
from simulmt.config import ExperimentConfig

cfg = ExperimentConfig()
cfg.set("data.n_test", "50")

splits = hx.synthetic_splits(cfg)
env, log = hx.pretrain_env(cfg, splits["train"], splits["valid"])
print("valid perplexity", round(log[0]["valid_ppl"], 2), "->", round(log[-1]["valid_ppl"], 3))

test = splits["test"]
for name in ("wue", "wos", "wiw", "wid"):
    rep = hx.evaluate(env, hx.make_policy(name), test.pairs)
    a = rep.aggregates
    print(f"{name}: bleu {a['bleu']:.3f}  ap {a['ap']:.3f}  cw {a['cw']:.2f}  "
          f"e.g. {rep.trajectories[0].action_string}")
