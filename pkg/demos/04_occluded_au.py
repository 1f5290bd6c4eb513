"""
An occluded action unit
=======================

Make the AU26 detector miss 60% of true activations while the phone
recogniser stays good.  The expert DBN recovers most of AU26 from the
phones that follow each jaw movement.
"""

from avdbn import NoiseModel, SimConfig, paper_instance, run_loso, sample_corpus

noise = NoiseModel.preset("clean-like", fn={"AU26": 0.6})
corpus = sample_corpus(SimConfig(generator=paper_instance(), subjects=4, sequences_per_subject=20,
                                 frames_per_sequence=100, seed=7, noise=noise))
report = run_loso(corpus, ["measurement-only", "dbn-expert"])

for m in report.methods:
    print(f"{m:18s} AU26 F1 {report.metric(m, 'AU26', 'f1'):.3f}  TPR {report.metric(m, 'AU26', 'tpr'):.3f}  "
          f"FPR {report.metric(m, 'AU26', 'fpr'):.3f}")
