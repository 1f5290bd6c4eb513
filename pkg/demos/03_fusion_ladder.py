"""
The method ladder under leave-one-subject-out
=============================================

Measurement-only detectors, a static audiovisual BN, a visual-only DBN, the
learned audiovisual DBN and the expert-augmented DBN, all scored by per-AU
F1 pooled over held-out subjects.  Pass ``full`` for the 8 x 60 corpus used
by the acceptance suite (a few minutes); the default is a quicker 4 x 20.
"""

import sys
import time

from avdbn import NoiseModel, SimConfig, paper_instance, run_loso, sample_corpus
from avdbn.evaluation import METHODS

full = len(sys.argv) > 1 and sys.argv[1] == "full"
subjects, per_subject = (8, 60) if full else (4, 20)
corpus = sample_corpus(SimConfig(generator=paper_instance(), subjects=subjects, sequences_per_subject=per_subject,
                                 frames_per_sequence=100, seed=7, noise=NoiseModel.preset("clean-like")))

start = time.perf_counter()
report = run_loso(corpus, list(METHODS))
print(f"{subjects} subjects x {per_subject} sequences, {time.perf_counter() - start:.0f} s\n")

print(f"{'method':18s}" + "".join(f"{a:>7s}" for a in report.aus) + "   macro")
for m in report.methods:
    row = "".join(f"{report.metric(m, a, 'f1'):7.3f}" for a in report.aus)
    print(f"{m:18s}{row}   {report.macro(m):.3f}")

gain = report.macro("dbn-expert") - report.macro("measurement-only")
print(f"\nfusion gain over the detectors alone: {gain:+.3f} macro-F1")
