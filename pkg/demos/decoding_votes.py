"""
Turning comparator votes into an age
====================================

A bank of K binary comparators answers "is this person younger than class
k?" for k = 1..K. This script builds the vote matrix by hand for a few
decision vectors and compares the three decoders.
"""

import numpy as np

from compcnn import binary_target, class_probabilities, dex_decode, hits_decode, hits_from_outputs, ranking_decode

K = 6
ks = np.arange(1, K + 1)

# A perfectly consistent bank for a subject of class 4: comparators above 4
# say "younger", the rest say "not younger".
d = binary_target(4, ks)
print("decisions       ", d)
hits = hits_from_outputs(d)
print("vote matrix (rows = comparators, columns = classes)")
print(hits)
print("column sums     ", hits.sum(axis=0), "-> K - |y - c|")
print("hits decode     ", hits_decode(hits))
print("ranking decode  ", ranking_decode(d))

# One comparator disagrees: comparator 2 now claims the subject is younger
# than class 2. Votes split, and ties go to the smallest class.
flipped = d.copy()
flipped[1] = 1
print("\nafter flipping comparator 2:", flipped)
print("column sums     ", hits_from_outputs(flipped).sum(axis=0))
print("hits decode     ", hits_decode(hits_from_outputs(flipped)))
print("ranking decode  ", ranking_decode(flipped))

# Soft outputs: P(younger than k) from each comparator. Differences of the
# implied survival curve give a class distribution, and its mean is the
# expected-value estimate.
p_younger = np.array([0.01, 0.05, 0.2, 0.7, 0.95, 0.99])
probs = class_probabilities(p_younger)
print("\nclass probabilities", np.round(probs, 3))
print("expected age      ", round(dex_decode(probs, ks), 3))
