"""
Router and ranking feedback, step by step
=========================================

One image, two questions about it.  The fine question needs the finest
level; the coarse one is answered equally well by any level.  A handful
of RGLF updates teach the router to tell them apart from the instruction
alone.  The feedback here is written by hand in the shape a trained LMM
produces, so the script runs without Stage 1.
"""

import numpy as np

from granroute.lmm import AnswerLogProb
from granroute.nn import Adam
from granroute.rglf import RGLFConfig, prepare, rank_by_feedback, rglf_step
from granroute.router import init_router_params, router_forward
from granroute.scenes import COARSE, FINE, generate_sample

fine = generate_sample(1, FINE)
coarse = generate_sample(1, COARSE)
assert np.array_equal(fine.grid.data, coarse.grid.data)

# the router sees 1116 visual tokens plus up to k=32 instruction tokens;
# the voter starts uniform, so every level begins at probability 0.2
params = init_router_params(16, 5, 32, seed=0)
print("voter length:", params.voter_length)
print("initial probs:", np.round(router_forward(fine.pyramid(), None, params).probs.data[0].astype(float), 3).tolist())


def answer_lps(sums, n_tokens=2):
    return [AnswerLogProb(s, s / n_tokens, n_tokens) for s in sums]


# LMM feedback: summed answer log-probs per level (finest first)
feedback = [answer_lps([-0.05, -2.1, -2.1, -2.1, -2.1]), answer_lps([-0.01] * 5)]
for name, lps in zip(("fine", "coarse"), feedback):
    fb = rank_by_feedback(lps)
    # equal feedback ranks the coarser level first
    print(f"{name}: order {fb.perm.tolist()}, best level {fb.best}")
    print(np.round(fb.margins, 2))

cfg = RGLFConfig(lr=1e-3, batch_size=2)
optimizer = Adam(params.tensors, lr=cfg.lr)
batch = [prepare(fine, params, None, False), prepare(coarse, params, None, False)]
for step in range(100):
    total, rank, ce, picks = rglf_step(batch, None, params, cfg, optimizer, feedback, step)
    if step % 20 == 0 or step == 99:
        probs = [router_forward(b.pyramid, b.instr, params).probs.data[0].astype(float) for b in batch]
        print(f"step {step:3d}  loss {total:.3f}  picks {picks}  "
              f"fine {np.round(probs[0], 2).tolist()}  coarse {np.round(probs[1], 2).tolist()}")
