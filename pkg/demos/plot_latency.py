"""
Average lagging of fixed schedules
==================================

Wait-k reads ``k`` tokens, then alternates one read per write. On equal
source and target lengths its average lagging is exactly ``k``.
"""

from simulprefix.metrics import average_lagging, corpus_bleu

n = 12
for k in (1, 3, 5, n):
    g = [min(k + t, n) for t in range(n)]  # reads before the t-th write
    print(f"k={k:2d}  g={g}  AL={average_lagging(g, n, n):.2f}")

###############################################################################
# Only the writes up to the first one made after the full source count,
# so a translator that waits for everything lags by exactly S tokens.

print("full sentence AL:", average_lagging([n] * n, n, n))

###############################################################################
# BLEU clips each hypothesis n-gram by its count in the best reference.

hyp = "the the the the".split()
print(corpus_bleu([hyp], [["the cat".split()]]).precisions[0])  # 1/4
