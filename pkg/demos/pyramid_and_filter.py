"""
Granularity pyramid and instruction filter
==========================================

Builds the five-level pyramid of one synthetic scene, shows that the fine
symbol lives only at the finest level, and runs the top-k instruction
filter.
"""

import numpy as np

from granroute.instruction_filter import InstructionTokens, relevance_scores, select_instructions
from granroute.scaler import avg_pool_step
from granroute.scenes import COARSE, FINE, generate_sample

# one scene of each query kind, from the same seed so the image is shared
fine = generate_sample(11, FINE)
coarse = generate_sample(11, COARSE)
print("instruction ids (fine):  ", fine.instruction.ids.tolist())
print("instruction ids (coarse):", coarse.instruction.ids.tolist())
print("answers:", fine.answer.tolist(), coarse.answer.tolist())

# pooling alternates 1x2 and 2x1 average pools: 576, 288, 144, 72, 36 tokens
pyramid = fine.pyramid(5)
for level, grid in enumerate(pyramid.levels):
    print(f"level {level}: {grid.rows}x{grid.cols} -> {grid.n_tokens} tokens")

# the channel means survive every pooling step exactly
means = np.stack([g.flat().astype(np.float64).mean(axis=0) for g in pyramid.levels])
print("max drift of per-channel means:", np.abs(means - means[0]).max())

# the fine channels hold width-adjacent (+a, -a) pairs, so one 1x2 pool zeroes them
half = fine.grid.dim // 2
print("fine channels, level 0 max |x|:", np.abs(fine.grid.data[..., half:]).max())
print("fine channels, level 1 max |x|:", np.abs(avg_pool_step(fine.grid, "width").data[..., half:]).max())

# the filter keeps the k instruction tokens whose best cosine match among
# the finest visual tokens is highest, in their original order
rng = np.random.default_rng(0)
long_instr = InstructionTokens(rng.normal(size=(12, 16)), np.arange(5, 17))
scores = relevance_scores(long_instr, fine.grid)
kept = select_instructions(long_instr, fine.grid, 4)
print("relevance:", np.round(scores, 3).tolist())
print("kept instruction positions:", kept.kept_indices.tolist(), "of", long_instr.length)
