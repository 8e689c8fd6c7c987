"""
Hand-written kernels and gradient checks
========================================

Every layer in the package is plain numpy with an explicit backward pass.
This script checks a GRU step and the translation loss against finite
differences, then takes a few Adam steps.
"""

import numpy as np

from simulmt import numerics as nx
from simulmt.nmt_env import EOS, NMTConfig, NMTEnv

rng = np.random.default_rng(0)

# a single GRU step, loss = <w, h>
store = nx.ParamStore()
nx.add_gru(store, "g_", 3, 4, rng)
x, h0, w = rng.normal(size=(2, 3)), rng.normal(size=(2, 4)), rng.normal(size=(2, 4))


def gru_loss(s):
    h, cache = nx.gru_forward(x, h0, s["g_W"], s["g_U"], s["g_b"])
    nx.gru_backward(w, cache, s["g_W"], s["g_U"], s.grads["g_W"], s.grads["g_U"], s.grads["g_b"])
    return float((h * w).sum())


rep = nx.grad_check(gru_loss, store)
print("GRU worst relative error:", f"{rep.worst:.2e}", "ok" if rep.ok else "FAILED")

# the teacher-forced NLL of a small encoder-decoder
env = NMTEnv(NMTConfig(9, 8, emb=4, hidden=5, att=3), rng=rng)
src, tgt = [[3, 4, 5, EOS]], [[6, 7, EOS]]
rep = nx.grad_check(lambda s: env.nll_batch(src, tgt), env.params)
print("NLL worst relative error:", f"{rep.worst:.2e}", "over", len(rep.max_rel_error), "tensors")

# Adam on the same loss
for step in range(5):
    env.params.zero_grad()
    loss = env.nll_batch(src, tgt)
    nx.adam_update(env.params, lr=0.05)
    print(f"step {step}  nll {loss:.4f}")
