"""
Quality and delay rewards
=========================

Scores one hand-made trajectory: smoothed BLEU, average proportion (AP),
consecutive wait (CW) and the per-step rewards the agent is trained on.
"""

import numpy as np

from simulmt.actions import from_string
from simulmt.decoding import Trajectory
from simulmt.nmt_env import EOS
from simulmt import rewards as rw

reference = [3, 4, 5, 6, EOS]
traj = Trajectory(source_len=5, actions=from_string("RRWRWRWRWW"),
                  emitted=[3, 4, 5, 7, EOS])

print("BLEU       ", round(rw.bleu(rw.content_tokens(traj.emitted), [3, 4, 5, 6]), 4))
s = rw.reads_before_emit(traj.actions)
print("reads/emit ", s)
print("AP         ", rw.average_proportion(s, traj.source_len))
print("CW         ", rw.consecutive_wait(traj.actions))

cfg = rw.RewardConfig(alpha=-0.025, beta=-1.0, d_star=0.5, c_star=2)
rq = rw.quality_rewards(traj, reference)
rd = rw.delay_rewards(rw.delay_trace(traj.actions, traj.source_len), cfg)
r, R = rw.combined_rewards(traj, reference, cfg)
np.set_printoptions(precision=3, suppress=True)
print("quality r  ", rq)
print("delay r    ", rd)
print("return R_1 ", round(R[0], 4))

# the intermediate quality rewards telescope to the last BLEU0 of the prefix
print("sum of r[:-1]", round(rq[:-1].sum(), 6), "bleu0 of the prefix before the last write",
      round(rw.bleu0([3, 4, 5, 7], [3, 4, 5, 6]), 6))
