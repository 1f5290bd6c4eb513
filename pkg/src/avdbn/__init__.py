"""Audiovisual facial action unit recognition with dynamic Bayesian networks.

The package covers discrete BN/DBN structures, K2 and BIC structure
learning, CPT fitting, exact filtering and smoothing, phone alignment
handling, a seeded synthetic corpus generator and a leave-one-subject-out
evaluation harness.
"""

from .alignment import Corpus, CorpusFormatError, FrameSequence, PhoneAlphabet, SegmentTrack, discretize
from .evaluation import MethodConfig, MetricsReport, confusion, f1, fpr, mcc, roc, run_loso, tpr
from .graph import Cpt, NetworkSpec, Variable, load_model, save_model, validate
from .inference import BeliefFrame, DecodePolicy, EvidenceFrame, ImpossibleEvidence, decode, filter, log_evidence, smooth
from .params import SmoothingPolicy, fit_all, fit_cpt
from .simulate import NoiseModel, SimConfig, paper_instance, sample_corpus
from .structure import OrderingPolicy, count_stats, inject_expert_edges, k2_family_log_score, k2_search, transition_search

__version__ = "0.1.0"
