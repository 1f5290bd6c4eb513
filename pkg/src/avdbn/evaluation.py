"""Metrics, ROC curves and leave-one-subject-out evaluation of the method ladder.

Methods
-------
``measurement-only``
    the visual AU measurements, passed through.
``static-bn``
    K2 structure over Phone + AUs, no temporal links; frames decoded
    independently.
``dbn-visual-only``
    DBN over the AUs alone (no Phone node, no phone evidence).
``dbn-learned``
    K2 intra-slice structure plus BIC-learned transition structure.
``dbn-expert``
    ``dbn-learned`` with ``AU@t-1 -> Phone`` links injected.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._io import atomic_write_text
from .alignment import Corpus
from .data import MISSING, PHONE, frame_records, initial_records, meas_name, transition_records
from .graph import NetworkSpec, dumps_model
from .inference import DecodePolicy, Engine
from .params import SmoothingPolicy, fit_all
from .simulate import PAPER_EXPERT_AUS, av_variables, measurement_edges
from .structure import OrderingPolicy, inject_expert_edges, k2_search, transition_search

METHODS = ("measurement-only", "static-bn", "dbn-visual-only", "dbn-learned", "dbn-expert")
PHONE_METHODS = ("static-bn", "dbn-learned", "dbn-expert")


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(truth, pred) -> Confusion:
    truth = np.asarray(truth).astype(bool)
    pred = np.asarray(pred).astype(bool)
    if truth.shape != pred.shape:
        raise ValueError(f"length mismatch: {truth.shape} vs {pred.shape}")
    return Confusion(
        tp=int(np.count_nonzero(truth & pred)),
        fp=int(np.count_nonzero(~truth & pred)),
        fn=int(np.count_nonzero(truth & ~pred)),
        tn=int(np.count_nonzero(~truth & ~pred)),
    )


def _ratio(num, den) -> float:
    return num / den if den else 0.0


def f1(c: Confusion) -> float:
    return _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)


def tpr(c: Confusion) -> float:
    return _ratio(c.tp, c.tp + c.fn)


def fpr(c: Confusion) -> float:
    return _ratio(c.fp, c.fp + c.tn)


def mcc(c: Confusion) -> float:
    """Matthews correlation; 0 when any marginal total is zero."""
    # exact integers, so the class-swapped confusion gives the identical value
    tp, fp, fn, tn = (int(x) for x in (c.tp, c.fp, c.fn, c.tn))
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if den == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(den)


def degenerate(c: Confusion) -> list[str]:
    """Metrics of ``c`` that fell back to the 0/0 -> 0 convention."""
    out = []
    if 2 * c.tp + c.fp + c.fn == 0:
        out.append("f1")
    if c.tp + c.fn == 0:
        out.append("tpr")
    if c.fp + c.tn == 0:
        out.append("fpr")
    if (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn) == 0:
        out.append("mcc")
    return out


def roc(truth, scores) -> list[tuple[float, float]]:
    """(FPR, TPR) at every distinct score threshold plus the +/-inf sentinels.

    A frame is positive at threshold ``h`` when ``score >= h``.  Duplicate
    points are merged; the list is sorted by FPR, then TPR.
    """
    truth = np.asarray(truth).astype(bool)
    scores = np.asarray(scores, dtype=float)
    if truth.shape != scores.shape:
        raise ValueError(f"length mismatch: {truth.shape} vs {scores.shape}")
    pos = int(truth.sum())
    neg = truth.size - pos
    order = np.argsort(-scores, kind="stable")
    s, t = scores[order], truth[order]
    # cumulative counts at the last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True]) if s.size else np.array([], dtype=int)
    tps = np.cumsum(t)[ends]
    fps = np.cumsum(~t)[ends]
    pts = {(0.0, 0.0), (_ratio(neg, neg), _ratio(pos, pos))}
    pts.update((_ratio(int(f), neg), _ratio(int(p), pos)) for f, p in zip(fps, tps))
    return sorted(pts)


def auc(points: Sequence[tuple[float, float]]) -> float:
    xs = np.array([p[0] for p in points])
    ys = np.array([p[1] for p in points])
    return float(np.sum(np.diff(xs) * (ys[1:] + ys[:-1]) / 2))


# ---------------------------------------------------------------------------
# method configuration and training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MethodConfig:
    """One rung of the method ladder and its learning options.

    ``expert_aus`` names the AUs whose previous-slice state is linked to
    the phone by ``dbn-expert`` (``None``: the lip and jaw articulators
    AU24/AU25/AU26 when present, else every AU).  ``prior_from`` picks
    the data for initial-slice CPTs: ``"first"`` frames or ``"all"`` frames.
    """

    name: str
    decode: DecodePolicy = DecodePolicy()
    alpha: float = 1.0
    max_parents: int = 3
    inter_max_parents: int = 3
    ordering: tuple[str, ...] | None = None
    expert_aus: tuple[str, ...] | None = None
    expert_max_parents: int | None = None
    prior_from: str = "first"

    def __post_init__(self):
        if self.name not in METHODS:
            raise ValueError(f"unknown method {self.name!r}; choose from {METHODS}")
        if self.prior_from not in ("first", "all"):
            raise ValueError("prior_from must be 'first' or 'all'")

    @property
    def uses_phone(self) -> bool:
        return self.name in PHONE_METHODS


def default_expert_aus(aus: Sequence[str]) -> list[str]:
    ex = [a for a in PAPER_EXPERT_AUS if a in aus]
    return ex or list(aus)


def learn_structure(train: Sequence, aus: Sequence[str], n_phones: int, method: MethodConfig) -> NetworkSpec:
    """Structure-only spec for ``method`` learned from the training sequences."""
    with_phone = method.uses_phone
    variables = av_variables(aus, n_phones if with_phone else None)
    hidden = [v for v in variables if v.is_hidden]
    frames = frame_records(train, aus, with_phone)
    policy = OrderingPolicy(ordering=method.ordering, max_parents=method.max_parents)
    intra = k2_search(frames, hidden, policy)
    inter: list[tuple[str, str]] = []
    if method.name != "static-bn":
        pairs = transition_records(train, aus, with_phone)
        inter = transition_search(pairs, hidden, intra, OrderingPolicy(max_parents=method.inter_max_parents))
    spec = NetworkSpec(tuple(variables), tuple(intra) + tuple(measurement_edges(variables)), tuple(inter))
    if method.name == "dbn-expert":
        ex = default_expert_aus(aus) if method.expert_aus is None else [a for a in method.expert_aus if a in aus]
        spec = inject_expert_edges(spec, [(a, PHONE) for a in ex], max_parents=method.expert_max_parents)
    return spec


def fit_method(structure: NetworkSpec, train: Sequence, aus: Sequence[str], method: MethodConfig) -> NetworkSpec:
    with_phone = method.uses_phone
    smoothing = SmoothingPolicy(method.alpha)
    frames = frame_records(train, aus, with_phone)
    if method.name == "static-bn":
        return fit_all(structure, frames, None, smoothing)
    first = frames if method.prior_from == "all" else initial_records(train, aus, with_phone)
    return fit_all(structure, first, transition_records(train, aus, with_phone), smoothing)


def train_method(train: Sequence, aus: Sequence[str], n_phones: int, method: MethodConfig) -> NetworkSpec | None:
    """Learn structure and parameters; ``None`` for ``measurement-only``."""
    if method.name == "measurement-only":
        return None
    return fit_method(learn_structure(train, aus, n_phones, method), train, aus, method)


# ---------------------------------------------------------------------------
# inference over many sequences
# ---------------------------------------------------------------------------

BATCH = 64


def batches(sequences: Sequence, size: int = BATCH) -> list[list[int]]:
    """Indices grouped by sequence length, shortest first, in chunks of ``size``.

    The grouping depends only on the sequences, so results never depend on
    how the chunks are spread over workers.
    """
    groups: dict[int, list[int]] = {}
    for k, s in enumerate(sequences):
        groups.setdefault(s.n_frames, []).append(k)
    return [groups[n][lo : lo + size] for n in sorted(groups) for lo in range(0, len(groups[n]), size)]


def _infer_chunk(args):
    spec, seqs, aus, policy = args
    engine = Engine(spec)
    pos = {h: i for i, h in enumerate(engine.hidden)}
    has_phone = PHONE in pos
    frames = seqs[0].n_frames
    obs = {meas_name(a): np.stack([s.au_meas[a] for s in seqs]) for a in aus if meas_name(a) in engine.meas}
    if has_phone:
        obs[meas_name(PHONE)] = np.stack([s.phone_meas for s in seqs])
    keep = policy.mode == "joint-map"
    if policy.mode == "smoothed-marginal":
        margs, logc, joints = engine.smooth(obs, frames, len(seqs))
    else:
        margs, logc, joints = engine.forward(obs, frames, len(seqs), keep=keep)
    bad = np.argwhere(~np.isfinite(logc))
    if bad.size:
        t, b = bad[0]
        s = seqs[b]
        raise ValueError(f"sequence {s.subject_id}/{s.word}: evidence has zero probability at frame {t}")
    out = []
    for b in range(len(seqs)):
        scores = {a: margs[pos[a]][:, b, 1].copy() for a in aus}
        if keep:
            labels = _joint_map(np.stack([j[b] for j in joints]), engine.hidden, aus)
        else:
            labels = {a: (scores[a] > policy.threshold).astype(np.int64) for a in aus}
        marg = {h: margs[i][:, b].copy() for i, h in enumerate(engine.hidden)}
        out.append((scores, labels, marg))
    return out


def infer_sequences(spec: NetworkSpec, sequences: Sequence, aus: Sequence[str], policy: DecodePolicy, jobs: int = 1):
    """Per-sequence ``(scores, labels, marginals)``.

    ``scores`` / ``labels`` map AU name to ``(T,)`` arrays of P(AU=1) and
    decoded labels; ``marginals`` maps every hidden variable to its
    ``(T, card)`` beliefs (filtered, or smoothed for the smoothed mode).
    Sequences of equal length are processed as one batch.
    """
    chunks = batches(sequences)
    tasks = [(spec, [sequences[k] for k in c], list(aus), policy) for c in chunks]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_infer_chunk, tasks))
    else:
        results = [_infer_chunk(t) for t in tasks]
    out: list = [None] * len(sequences)
    for c, res in zip(chunks, results):
        for k, r in zip(c, res):
            out[k] = r
    return out


def _joint_map(joint: np.ndarray, hidden: Sequence[str], aus: Sequence[str]) -> dict[str, np.ndarray]:
    axes = tuple(1 + i for i, h in enumerate(hidden) if h not in aus)
    au_joint = joint.sum(axis=axes) if axes else joint
    au_order = [h for h in hidden if h in aus]
    flat = au_joint.reshape(au_joint.shape[0], -1).argmax(axis=1)
    states = np.unravel_index(flat, au_joint.shape[1:])
    return {a: np.asarray(states[i], dtype=np.int64) for i, a in enumerate(au_order)}


def measurement_predictions(sequences: Sequence, aus: Sequence[str]):
    out = []
    for s in sequences:
        labels = {a: np.where(s.au_meas[a] == MISSING, 0, s.au_meas[a]).astype(np.int64) for a in aus}
        out.append(({a: labels[a].astype(float) for a in aus}, labels, None))
    return out


# ---------------------------------------------------------------------------
# leave-one-subject-out
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    methods: list[str]
    aus: list[str]
    confusions: dict[tuple[str, str], Confusion]
    fold_confusions: dict[tuple[str, str, str], Confusion] = field(default_factory=dict)
    roc_points: dict[tuple[str, str], list[tuple[float, float]]] = field(default_factory=dict)
    pooling: str = "micro"

    def metric(self, method: str, au: str, name: str) -> float:
        fn = {"f1": f1, "tpr": tpr, "fpr": fpr, "mcc": mcc}[name]
        if self.pooling == "micro":
            return fn(self.confusions[(method, au)])
        vals = [fn(c) for (m, a, _), c in self.fold_confusions.items() if m == method and a == au]
        return float(np.mean(vals)) if vals else 0.0

    def macro(self, method: str, name: str = "f1") -> float:
        return math.fsum(self.metric(method, a, name) for a in self.aus) / len(self.aus)

    def rows(self) -> list[dict]:
        out = []
        for m in self.methods:
            for a in self.aus:
                c = self.confusions[(m, a)]
                out.append(
                    {
                        "method": m, "au": a, "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn,
                        "f1": self.metric(m, a, "f1"), "tpr": self.metric(m, a, "tpr"),
                        "fpr": self.metric(m, a, "fpr"), "mcc": self.metric(m, a, "mcc"),
                        "auc": auc(self.roc_points[(m, a)]) if (m, a) in self.roc_points else "",
                        "degenerate": ";".join(degenerate(c)),
                    }
                )
            tot = Confusion()
            for a in self.aus:
                tot = tot + self.confusions[(m, a)]
            out.append(
                {
                    "method": m, "au": "macro", "tp": tot.tp, "fp": tot.fp, "fn": tot.fn, "tn": tot.tn,
                    "f1": self.macro(m, "f1"), "tpr": self.macro(m, "tpr"),
                    "fpr": self.macro(m, "fpr"), "mcc": self.macro(m, "mcc"),
                    "auc": "", "degenerate": "",
                }
            )
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        fields = ["method", "au", "tp", "fp", "fn", "tn", "f1", "tpr", "fpr", "mcc", "auc", "degenerate"]
        w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in self.rows():
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {
                "pooling": self.pooling,
                "zero_division": "0/0 metrics reported as 0; see 'degenerate'",
                "methods": self.methods,
                "aus": self.aus,
                "rows": self.rows(),
                "macro_f1": {m: self.macro(m) for m in self.methods},
            },
            indent=1,
        ) + "\n"

    def roc_csv(self, method: str, au: str) -> str:
        lines = ["fpr,tpr"] + [f"{x!r},{y!r}" for x, y in self.roc_points[(method, au)]]
        return "\n".join(lines) + "\n"

    def write(self, csv_path=None, json_path=None, roc_dir=None) -> None:
        if csv_path:
            atomic_write_text(csv_path, self.to_csv())
        if json_path:
            atomic_write_text(json_path, self.to_json())
        if roc_dir:
            os.makedirs(roc_dir, exist_ok=True)
            for m, a in self.roc_points:
                atomic_write_text(os.path.join(roc_dir, f"roc_{m}_{a}.csv"), self.roc_csv(m, a))


def _fold(args):
    corpus, held, methods = args
    train = [s for s in corpus if s.subject_id != held]
    test = [s for s in corpus if s.subject_id == held]
    n_phones = len(corpus.alphabet) if corpus.alphabet is not None else 0
    results = []
    for method in methods:
        spec = train_method(train, corpus.aus, n_phones, method)
        if spec is None:
            preds = measurement_predictions(test, corpus.aus)
            model_text = None
        else:
            preds = infer_sequences(spec, test, corpus.aus, method.decode)
            model_text = dumps_model(spec)
        per_au = {}
        for a in corpus.aus:
            truth = np.concatenate([s.au_truth[a] for s in test])
            score = np.concatenate([p[0][a] for p in preds])
            label = np.concatenate([p[1][a] for p in preds])
            per_au[a] = (truth, score, label)
        results.append((method.name, model_text, per_au))
    return held, results


def run_loso(
    corpus: Corpus,
    methods: Sequence[MethodConfig | str],
    jobs: int = 1,
    pooling: str = "micro",
    model_sink: Callable[[str, str, str], None] | None = None,
) -> MetricsReport:
    """Leave-one-subject-out evaluation of every method.

    For each subject a fresh structure and parameter set are learned from
    the other subjects only, then the held-out sequences are decoded.
    Confusions are pooled across folds (``pooling="micro"``) or rates are
    averaged per fold (``"fold-mean"``).  ``model_sink(subject, method,
    model_json)`` receives every trained model.  Results do not depend on
    ``jobs``.
    """
    methods = [MethodConfig(m) if isinstance(m, str) else m for m in methods]
    if pooling not in ("micro", "fold-mean"):
        raise ValueError("pooling must be 'micro' or 'fold-mean'")
    subjects = corpus.subjects
    if len(subjects) < 2:
        raise ValueError("leave-one-subject-out needs at least two subjects")
    if any(m.uses_phone for m in methods):
        if all(np.all(s.phone_meas == MISSING) for s in corpus):
            raise ValueError("corpus has no phone measurements but a method needs them")
    tasks = [(corpus, subj, methods) for subj in subjects]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            folds = list(ex.map(_fold, tasks))
    else:
        folds = [_fold(t) for t in tasks]

    names = [m.name for m in methods]
    conf = {(m, a): Confusion() for m in names for a in corpus.aus}
    fold_conf = {}
    pooled: dict[tuple[str, str], list] = {(m, a): [[], []] for m in names for a in corpus.aus}
    for held, results in folds:
        for name, model_text, per_au in results:
            if model_sink is not None and model_text is not None:
                model_sink(held, name, model_text)
            for a, (truth, score, label) in per_au.items():
                c = confusion(truth, label)
                conf[(name, a)] = conf[(name, a)] + c
                fold_conf[(name, a, held)] = c
                pooled[(name, a)][0].append(truth)
                pooled[(name, a)][1].append(score)
    rocs = {k: roc(np.concatenate(v[0]), np.concatenate(v[1])) for k, v in pooled.items()}
    return MetricsReport(names, list(corpus.aus), conf, fold_conf, rocs, pooling)
