"""
Filtering and smoothing on a two-state chain
============================================

One binary AU, a noisy detector, and three frames of evidence.  We run the
package's exact filter and smoother and compare them with the numbers you
get by writing out the forward recursion by hand.
"""

import numpy as np

from avdbn import Cpt, EvidenceFrame, NetworkSpec, Variable, decode, filter, log_evidence, smooth
from avdbn.graph import HIDDEN_AU, MEASUREMENT_AU

# AU persists with probability 0.9; the detector is right 80% of the time
variables = (Variable("AU25", 2, HIDDEN_AU), Variable("O_AU25", 2, MEASUREMENT_AU))
detector = Cpt("O_AU25", ["AU25"], [[0.8, 0.2], [0.2, 0.8]])
spec = NetworkSpec(
    variables,
    intra_edges=(("AU25", "O_AU25"),),
    inter_edges=(("AU25", "AU25"),),
    cpts={"AU25": Cpt("AU25", [], [0.5, 0.5]), "O_AU25": detector},
    transition_cpts={"AU25": Cpt("AU25", ["AU25@t-1"], [[0.9, 0.1], [0.1, 0.9]]), "O_AU25": detector},
)

# detector fires, fires, then stays silent
evidence = [EvidenceFrame({"AU25": o}) for o in (1, 1, 0)]
filtered = filter(spec, evidence)
smoothed = smooth(spec, evidence)

# the same forward pass written out
trans = np.array([[0.9, 0.1], [0.1, 0.9]])
lik = {0: np.array([0.8, 0.2]), 1: np.array([0.2, 0.8])}
alpha = np.array([0.5, 0.5]) * lik[1]
alpha /= alpha.sum()
by_hand = [alpha]
for o in (1, 0):
    alpha = (alpha @ trans) * lik[o]
    alpha /= alpha.sum()
    by_hand.append(alpha)

print("frame  P(on|past)  by hand   P(on|all)")
for t in range(3):
    print(f"{t:5d}  {filtered[t].marginals['AU25'][1]:10.4f}  {by_hand[t][1]:7.4f}   "
          f"{smoothed[t].marginals['AU25'][1]:9.4f}")

# the silent last frame pulls the smoothed belief at frame 1 down
print("decoded (filtered):", [d["aus"]["AU25"] for d in decode(filtered)])
print("log P(evidence) =", round(log_evidence(spec, evidence), 4))
