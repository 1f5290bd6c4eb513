"""
Learning the audiovisual network
================================

Sample a small corpus from the bundled generator, learn the intra-slice
structure with K2, the transition edges with BIC hill climbing, and then
add the articulation-leads-sound links by hand.
"""

from avdbn import NoiseModel, OrderingPolicy, SimConfig, inject_expert_edges, k2_search, transition_search
from avdbn.data import PHONE, frame_records, transition_records
from avdbn.simulate import PAPER_EXPERT_AUS, av_variables, measurement_edges, paper_instance, sample_corpus
from avdbn.graph import NetworkSpec

corpus = sample_corpus(SimConfig(generator=paper_instance(), subjects=4, sequences_per_subject=30,
                                 frames_per_sequence=100, seed=3, noise=NoiseModel.preset("clean-like")))
print(f"{len(corpus)} sequences, {sum(s.n_frames for s in corpus)} frames, AUs {', '.join(corpus.aus)}")

variables = av_variables(corpus.aus, len(corpus.alphabet))
hidden = [v for v in variables if v.is_hidden]

# static structure: Phone first, then AUs by decreasing activation count
intra = k2_search(frame_records(corpus, corpus.aus), hidden, OrderingPolicy(max_parents=3))
print("\nK2 edges:")
for a, b in intra:
    print(f"  {a} -> {b}")

# dynamic structure: BIC hill climbing from self-loops
inter = transition_search(transition_records(corpus, corpus.aus), hidden, intra)
print("\nlearned transition edges:")
for a, b in inter:
    print(f"  {a}(t-1) -> {b}(t)")

spec = NetworkSpec(tuple(variables), tuple(intra) + tuple(measurement_edges(variables)), tuple(inter))
expert = inject_expert_edges(spec, [(a, PHONE) for a in PAPER_EXPERT_AUS])
added = sorted(set(expert.inter_edges) - set(spec.inter_edges))
print("\nexpert links added:", ", ".join(f"{a}(t-1) -> {b}(t)" for a, b in added) or "none (already learned)")
print("Phone transition family:", expert.transition_family(PHONE))
