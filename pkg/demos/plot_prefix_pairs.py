"""
Carving prefix pairs out of an attention matrix
===============================================

A target prefix is kept for a source prefix when every target word in it
already has at least ``e`` of its attention mass on the words read so far.
"""

import numpy as np

from simulprefix.prefixgen import GenerationConfig, cumulative_info, generate_prefix_pairs

# a hand-made 3 x 3 attention matrix; row t is target word t, column s is source word s
alpha = np.array([[1.0, 0.0, 0.0],
                  [0.2, 0.8, 0.0],
                  [0.1, 0.2, 0.7]])

# running sums along each row: how much of word t is explained by x_1..x_s
sigma = cumulative_info(alpha)
print(sigma)

###############################################################################
# Sweep the threshold. Low thresholds let the target run ahead of the
# source; high ones make it wait.

for e in (0.1, 0.3, 0.5, 0.9):
    pairs = generate_prefix_pairs(alpha, GenerationConfig(e), line=0)
    print(f"e={e}:", [(p.s, p.t) for p in pairs])

###############################################################################
# A sharper attention matrix gives the same pairs for every threshold in
# the usual range, which is why the toy corpus shows only small shifts.

sharp = np.eye(4)
for e in (0.1, 0.7):
    print(f"sharp e={e}:", [(p.s, p.t) for p in generate_prefix_pairs(sharp, GenerationConfig(e))])
