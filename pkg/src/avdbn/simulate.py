"""Synthetic frame-aligned corpora drawn from a known DBN.

Hidden trajectories are sampled ancestrally, measurements are drawn through
the model's measurement CPTs and then corrupted by a :class:`NoiseModel`.
Each subject gets a Dirichlet-jittered copy of the generator so that
leave-one-subject-out evaluation sees real between-subject variation.

Every random draw comes from numpy's PCG64 seeded through ``SeedSequence``
with keys derived from ``(seed, subject, sequence)``, so a corpus depends on
the seed only, never on generation order.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .alignment import SIL, Corpus, FrameSequence, PhoneAlphabet
from .data import MISSING, PHONE, meas_name
from .graph import (
    HIDDEN_AU,
    HIDDEN_PHONE,
    MEASUREMENT_AU,
    MEASUREMENT_PHONE,
    Cpt,
    NetworkSpec,
    Variable,
    is_prev,
    load_model,
    strip_prev,
    topological_order,
    validate,
)

RNG_ALGORITHM = "numpy.PCG64+SeedSequence[seed,1,subject,sequence]"

PAPER_AUS = ("AU18", "AU20", "AU22", "AU24", "AU25", "AU26", "AU27")
PAPER_PHONES = (
    SIL, "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "EH", "ER", "EY", "F",
    "G", "IH", "IY", "K", "L", "M", "N", "OW", "P", "R", "S", "SH", "T", "UW", "V",
)
# AUs whose previous-slice state drives the phone transition in the bundled model
PAPER_EXPERT_AUS = ("AU24", "AU25", "AU26")


# ---------------------------------------------------------------------------
# network builders
# ---------------------------------------------------------------------------


def av_variables(aus: Sequence[str], n_phones: int | None) -> list[Variable]:
    """Hidden Phone + AUs followed by one measurement node per hidden variable."""
    hidden = []
    if n_phones is not None:
        hidden.append(Variable(PHONE, n_phones, HIDDEN_PHONE))
    hidden += [Variable(a, 2, HIDDEN_AU) for a in aus]
    meas = [
        Variable(meas_name(v.name), v.cardinality, MEASUREMENT_PHONE if v.role == HIDDEN_PHONE else MEASUREMENT_AU)
        for v in hidden
    ]
    return hidden + meas


def measurement_edges(variables: Sequence[Variable]) -> list[tuple[str, str]]:
    return [(v.name, meas_name(v.name)) for v in variables if v.is_hidden]


def paper_instance(seed: int = 0, lead: float = 0.97, lag: float = 0.9, drive: float = 0.0) -> NetworkSpec:
    """The bundled seven-AU, 29-phone DBN used as the synthetic ground truth.

    Each phone has a characteristic AU pattern.  AU18/AU20/AU22/AU27 follow
    the pattern of the current phone with first-order lag.  The articulators
    AU24/AU25/AU26 move mostly on their own (persistence ``lag``, pull
    ``drive`` toward the current phone's pattern) and the phone then follows
    them: a phone is kept while the previous frame's articulator state still
    matches it and is left for a successor whose pattern matches, each
    matching AU weighting a candidate by ``lead / (1 - lead)``.  So the sound
    lags the face.  ``seed`` fixes the random phone patterns and successor
    sets.
    """
    rng = np.random.default_rng(seed)
    aus = PAPER_AUS
    n_ph = len(PAPER_PHONES)
    rate = {"AU18": 0.25, "AU20": 0.06, "AU22": 0.15, "AU24": 0.2, "AU25": 0.8, "AU26": 0.5, "AU27": 0.15}
    pattern = np.zeros((n_ph, len(aus)), dtype=int)
    for p in range(1, n_ph):
        pattern[p] = rng.random(len(aus)) < np.array([rate[a] for a in aus])
    on, off = 0.92, 0.04
    target = np.where(pattern == 1, on, off)

    au_parent = {"AU27": "AU26", "AU22": "AU18"}
    au_idx = {a: i for i, a in enumerate(aus)}
    ex = [au_idx[a] for a in PAPER_EXPERT_AUS]

    def p_on(a, phone, parent_state):
        p = target[phone, au_idx[a]]
        if a in au_parent and parent_state == 0:
            p *= 0.3
        return p

    def p_next(a, phone, parent_state, prev):
        if au_idx[a] in ex:
            # articulators drift with a weak pull toward the current phone
            pull = drive * target[phone, au_idx[a]] + (1.0 - drive) * rate[a]
            return lag * prev + (1.0 - lag) * pull
        return 0.5 * prev + 0.5 * p_on(a, phone, parent_state)

    variables = av_variables(aus, n_ph)
    intra = [(PHONE, a) for a in aus] + [(au_parent[a], a) for a in aus if a in au_parent]
    intra += measurement_edges(variables)
    inter = [(v.name, v.name) for v in variables if v.is_hidden]
    inter += [(a, PHONE) for a in PAPER_EXPERT_AUS]
    structure = NetworkSpec(tuple(variables), tuple(intra), tuple(inter))

    def bern(p):
        return [1.0 - p, p]

    cpts, trans = {}, {}
    prior = np.full(n_ph, 0.2 / (n_ph - 1))
    prior[0] = 0.8
    cpts[PHONE] = Cpt(PHONE, [], prior)
    for a in aus:
        fam = structure.family(a)
        rows = []
        for ph in range(n_ph):
            for ps in ((0, 1) if len(fam) == 2 else (None,)):
                rows.append(bern(p_on(a, ph, ps)))
        cpts[a] = Cpt(a, fam, rows)
        tfam = structure.transition_family(a)
        rows = []
        for ph in range(n_ph):
            for ps in ((0, 1) if len(tfam) == 3 else (None,)):
                for prev in (0, 1):
                    rows.append(bern(p_next(a, ph, ps, prev)))
        trans[a] = Cpt(a, tfam, rows)

    successors = np.zeros((n_ph, n_ph))
    successors[0, 1:] = 1.0
    for p in range(1, n_ph):
        succ = rng.choice([q for q in range(1, n_ph) if q != p], size=4, replace=False)
        successors[p, succ] = 1.0
        successors[p, 0] = 1.0
    successors /= successors.sum(axis=1, keepdims=True)
    odds = lead / (1.0 - lead)
    tfam = structure.transition_family(PHONE)
    assert tfam[0] == PHONE + "@t-1" and [strip_prev(p) for p in tfam[1:]] == list(PAPER_EXPERT_AUS)
    rows = []
    for a in range(n_ph):
        for u in np.ndindex(*(2,) * len(ex)):
            matches = (pattern[:, ex] == np.array(u)).sum(axis=1)
            weight = odds ** matches
            row = successors[a] * weight
            # the current phone competes with the same weight: kept while the
            # articulators still fit it
            row[a] = weight[a]
            rows.append(row / row.sum())
    trans[PHONE] = Cpt(PHONE, tfam, rows)

    for v in variables:
        if v.is_measurement:
            (parent,) = structure.parents(v.name)
            cpts[v.name] = Cpt(v.name, [parent], np.eye(v.cardinality))
            trans[v.name] = Cpt(v.name, [parent], np.eye(v.cardinality))
    spec = NetworkSpec(structure.variables, structure.intra_edges, structure.inter_edges, cpts, trans)
    problems = validate(spec)
    assert not problems, problems
    return spec


def expert_edges(aus: Sequence[str] = PAPER_EXPERT_AUS) -> list[tuple[str, str]]:
    return [(a, PHONE) for a in aus]


# ---------------------------------------------------------------------------
# noise and configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    """Per-frame corruption of the measurement channels.

    ``fp`` / ``fn`` are AU flip rates on truth-0 / truth-1 frames (a float
    for all AUs or a per-AU mapping).  The phone channel is either a
    symmetric error rate or a full row-stochastic confusion table.
    """

    fp: float | Mapping[str, float] = 0.0
    fn: float | Mapping[str, float] = 0.0
    phone_error: float = 0.0
    phone_confusion: np.ndarray | None = None
    missing_visual: float = 0.0
    missing_audio: float = 0.0

    def __post_init__(self):
        for name in ("fp", "fn"):
            v = getattr(self, name)
            vals = v.values() if isinstance(v, Mapping) else [v]
            if any(not 0.0 <= x <= 1.0 for x in vals):
                raise ValueError(f"{name} rates must lie in [0, 1]")
        if not 0.0 <= self.phone_error <= 1.0:
            raise ValueError("phone_error must lie in [0, 1]")
        for name in ("missing_visual", "missing_audio"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.phone_confusion is not None:
            c = np.asarray(self.phone_confusion, dtype=float)
            if c.ndim != 2 or c.shape[0] != c.shape[1]:
                raise ValueError("phone_confusion must be square")
            if np.any(c < 0) or np.any(np.abs(c.sum(axis=1) - 1.0) > 1e-12):
                raise ValueError("phone_confusion rows must be distributions")
            object.__setattr__(self, "phone_confusion", c)

    def rate(self, kind: str, au: str) -> float:
        """Flip rate for ``au``; a mapping may hold a ``"*"`` default."""
        v = getattr(self, kind)
        if isinstance(v, Mapping):
            return float(v.get(au, v.get("*", 0.0)))
        return float(v)

    @classmethod
    def preset(cls, name: str, **overrides) -> "NoiseModel":
        presets = {
            "none": dict(),
            "clean-like": dict(fp=0.10, fn=0.25, phone_error=0.02),
            "challenging-like": dict(fp=0.20, fn=0.40, phone_error=0.05),
        }
        if name not in presets:
            raise ValueError(f"unknown noise preset {name!r}; choose from {sorted(presets)}")
        base = dict(presets[name])
        for kind in ("fp", "fn"):
            # per-AU overrides keep the preset rate for the other AUs
            if isinstance(overrides.get(kind), Mapping) and not isinstance(base.get(kind, 0.0), Mapping):
                overrides[kind] = {"*": base.get(kind, 0.0), **overrides[kind]}
        return cls(**{**base, **overrides})

    def to_dict(self) -> dict:
        d = {
            "fp": dict(self.fp) if isinstance(self.fp, Mapping) else self.fp,
            "fn": dict(self.fn) if isinstance(self.fn, Mapping) else self.fn,
            "phone_error": self.phone_error,
            "missing_visual": self.missing_visual,
            "missing_audio": self.missing_audio,
        }
        if self.phone_confusion is not None:
            d["phone_confusion"] = self.phone_confusion.tolist()
        return d


@dataclass
class SimConfig:
    generator: NetworkSpec
    subjects: int = 8
    sequences_per_subject: int = 60
    frames_per_sequence: int | tuple[int, int] = 100
    seed: int = 0
    noise: NoiseModel = field(default_factory=lambda: NoiseModel.preset("clean-like"))
    subject_concentration: float | None = 200.0
    alphabet: PhoneAlphabet | None = None
    fps: float = 60.0

    def __post_init__(self):
        if self.subjects < 1 or self.sequences_per_subject < 1:
            raise ValueError("subjects and sequences_per_subject must be >= 1")
        f = self.frames_per_sequence
        lo, hi = (f, f) if isinstance(f, int) else f
        if lo < 1 or hi < lo:
            raise ValueError("frames_per_sequence must be >= 1 (and min <= max)")
        if self.subject_concentration is not None and not self.subject_concentration > 0:
            raise ValueError("subject_concentration must be positive")
        if not self.fps > 0:
            raise ValueError("fps must be positive")


def load_sim_config(source, seed: int | None = None, base_dir=None) -> SimConfig:
    """Build a SimConfig from a JSON file path or an already-parsed dict.

    ``generator`` is ``"paper-instance"`` (optionally ``{"preset":
    "paper-instance", "seed": n}`` plus ``lead``/``lag``/``drive``) or
    ``{"model": path}``; ``noise`` is a
    preset name or a dict that may name a ``preset`` and override fields.
    """
    import os

    if isinstance(source, Mapping):
        d = dict(source)
    else:
        with open(source) as fh:
            d = json.load(fh)
        base_dir = base_dir or os.path.dirname(os.path.abspath(source))
    if str(d.get("format_version", "1")) != "1":
        raise ValueError(f"unsupported sim config format_version {d.get('format_version')!r}")
    gen = d.get("generator", "paper-instance")
    if gen == "paper-instance":
        spec = paper_instance()
    elif isinstance(gen, Mapping) and gen.get("preset") == "paper-instance":
        knobs = {k: float(gen[k]) for k in ("lead", "lag", "drive") if k in gen}
        spec = paper_instance(int(gen.get("seed", 0)), **knobs)
    elif isinstance(gen, Mapping) and "model" in gen:
        path = gen["model"]
        if base_dir and not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        spec = load_model(path)
    else:
        raise ValueError(f"unrecognised generator {gen!r}")
    noise = d.get("noise", "clean-like")
    if isinstance(noise, str):
        noise_model = NoiseModel.preset(noise)
    else:
        noise = dict(noise)
        preset = noise.pop("preset", "none")
        noise_model = NoiseModel.preset(preset, **noise)
    n = d.get("frames_per_sequence", 100)
    frames = int(n) if isinstance(n, (int, float)) else (int(n[0]), int(n[1]))
    alphabet = PhoneAlphabet(d["alphabet"]) if "alphabet" in d else None
    if seed is None:
        if "seed" not in d:
            raise ValueError("a seed is required")
        seed = int(d["seed"])
    return SimConfig(
        generator=spec,
        subjects=int(d.get("subjects", 8)),
        sequences_per_subject=int(d.get("sequences_per_subject", 60)),
        frames_per_sequence=frames,
        seed=int(seed),
        noise=noise_model,
        subject_concentration=d.get("subject_concentration", 200.0),
        alphabet=alphabet,
        fps=float(d.get("fps", 60.0)),
    )


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def _rng(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in key])))


def jitter_spec(spec: NetworkSpec, concentration: float, rng: np.random.Generator) -> NetworkSpec:
    """Dirichlet-perturb every hidden-variable CPT row; zeros stay zero."""

    def perturb(cpt: Cpt) -> Cpt:
        t = cpt.table.copy()
        for j in range(t.shape[0]):
            row = t[j]
            nz = row > 0
            if nz.sum() < 2:
                continue
            draw = rng.dirichlet(concentration * row[nz])
            if np.all(np.isfinite(draw)) and draw.sum() > 0:
                new = np.zeros_like(row)
                new[nz] = draw / draw.sum()
                t[j] = new
        return Cpt(cpt.child, cpt.parents, t)

    hidden = {v.name for v in spec.hidden}
    cpts = {n: perturb(c) if n in hidden else c for n, c in spec.cpts.items()}
    trans = None
    if spec.transition_cpts is not None:
        trans = {n: perturb(c) if n in hidden else c for n, c in spec.transition_cpts.items()}
    return NetworkSpec(spec.variables, spec.intra_edges, spec.inter_edges, cpts, trans)


class _Sampler:
    """Inverse-CDF ancestral sampler for one (possibly jittered) spec."""

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        order = [n for n in topological_order(spec) if spec.variable(n).is_hidden]
        self.order = order
        self.index = {n: i for i, n in enumerate(n for n in spec.names if spec.variable(n).is_hidden)}
        self.init = [self._compile(spec.cpts[n]) for n in order]
        self.trans = [self._compile(spec.transition_cpts[n]) for n in order] if spec.is_dynamic else None

    def _compile(self, cpt: Cpt):
        cards = [self.spec.card(p) for p in cpt.parents]
        strides = [math.prod(cards[i + 1:]) for i in range(len(cards))]
        src = [(is_prev(p), self.index[strip_prev(p)]) for p in cpt.parents]
        cum = [np.cumsum(r).tolist() for r in cpt.table]
        for c in cum:
            c[-1] = 1.0 + 1e-12
        return self.index[cpt.child], list(zip(src, strides)), cum

    def hidden(self, frames: int, rng: np.random.Generator) -> np.ndarray:
        n = len(self.index)
        u = rng.random((frames, n))
        x = np.zeros((frames, n), dtype=np.int64)
        prev = None
        for t in range(frames):
            cur = [0] * n
            table = self.init if (t == 0 or self.trans is None) else self.trans
            for k, (child, parents, cum) in enumerate(table):
                j = 0
                for (from_prev, i), stride in parents:
                    j += (prev[i] if from_prev else cur[i]) * stride
                cur[child] = bisect.bisect_right(cum[j], u[t, k])
            x[t] = cur
            prev = cur
        return x

    def measure(self, name: str, parent_states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        spec = self.spec
        u = rng.random(len(parent_states))
        first = np.cumsum(spec.cpts[name].table, axis=1)
        rest = np.cumsum(spec.transition_cpts[name].table, axis=1) if spec.is_dynamic else first
        cum = rest[parent_states]
        cum[0] = first[parent_states[0]]
        return np.minimum((u[:, None] >= cum).sum(axis=1), cum.shape[1] - 1)


def _corrupt_au(o, fp, fn, rng):
    u = rng.random(len(o))
    flip = np.where(o == 1, u < fn, u < fp)
    return np.where(flip, 1 - o, o)


def _corrupt_phone(o, noise: NoiseModel, n_states, rng):
    u = rng.random(len(o))
    if noise.phone_confusion is not None:
        if noise.phone_confusion.shape[0] != n_states:
            raise ValueError("phone_confusion size does not match the phone cardinality")
        cum = np.cumsum(noise.phone_confusion, axis=1)
        return np.minimum((u[:, None] >= cum[o]).sum(axis=1), n_states - 1)
    if noise.phone_error == 0:
        return o
    err = u < noise.phone_error
    other = rng.integers(0, n_states - 1, size=len(o))
    other = other + (other >= o)
    return np.where(err, other, o)


def sample_corpus(config: SimConfig) -> Corpus:
    """Sample a corpus of ``subjects * sequences_per_subject`` sequences."""
    spec = config.generator
    problems = validate(spec)
    if problems:
        raise ValueError("invalid generator: " + "; ".join(problems))
    if not spec.is_dynamic:
        raise ValueError("the generator needs transition CPTs")
    aus = [v.name for v in spec.hidden if v.role == HIDDEN_AU]
    phones = [v.name for v in spec.hidden if v.role == HIDDEN_PHONE]
    if len(phones) != 1:
        raise ValueError("the generator needs exactly one hidden phone variable")
    phone = phones[0]
    n_ph = spec.card(phone)
    alphabet = config.alphabet
    if alphabet is None:
        alphabet = PhoneAlphabet(PAPER_PHONES) if n_ph == len(PAPER_PHONES) else PhoneAlphabet(
            [SIL] + [f"P{i}" for i in range(1, n_ph)]
        )
    if len(alphabet) != n_ph:
        raise ValueError("alphabet size does not match the phone cardinality")
    noise = config.noise
    f = config.frames_per_sequence
    lo, hi = (f, f) if isinstance(f, int) else f
    seqs = []
    for i in range(config.subjects):
        sub_spec = spec
        if config.subject_concentration is not None:
            sub_spec = jitter_spec(spec, float(config.subject_concentration), _rng(config.seed, 0, i))
        sampler = _Sampler(sub_spec)
        col = sampler.index
        for j in range(config.sequences_per_subject):
            rng = _rng(config.seed, 1, i, j)
            frames = int(rng.integers(lo, hi + 1)) if hi > lo else lo
            x = sampler.hidden(frames, rng)
            au_truth, au_meas = {}, {}
            for a in aus:
                truth = x[:, col[a]]
                o = np.full(frames, MISSING, dtype=np.int64)
                for m in sub_spec.measurement_of(a)[:1]:
                    o = sampler.measure(m, truth, rng)
                    o = _corrupt_au(o, noise.rate("fp", a), noise.rate("fn", a), rng)
                if noise.missing_visual > 0:
                    o = np.where(rng.random(frames) < noise.missing_visual, MISSING, o)
                au_truth[a] = truth
                au_meas[a] = o
            ptruth = x[:, col[phone]]
            pm = np.full(frames, MISSING, dtype=np.int64)
            for m in sub_spec.measurement_of(phone)[:1]:
                pm = _corrupt_phone(sampler.measure(m, ptruth, rng), noise, n_ph, rng)
            if noise.missing_audio > 0:
                pm = np.where(rng.random(frames) < noise.missing_audio, MISSING, pm)
            seqs.append(
                FrameSequence(
                    subject_id=f"S{i + 1:02d}",
                    word=f"w{j + 1:03d}",
                    fps=config.fps,
                    au_truth=au_truth,
                    phone_truth=ptruth,
                    au_meas=au_meas,
                    phone_meas=pm,
                )
            )
    meta = {"rng": RNG_ALGORITHM, "seed": int(config.seed), "noise": noise.to_dict()}
    return Corpus(seqs, tuple(aus), alphabet, config.fps, meta)


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------


@dataclass
class CorpusStats:
    au_counts: dict[str, int]
    phone_occupancy: dict[str, int]
    total_frames: int

    def table_row(self) -> dict[str, int]:
        """AU activation counts followed by ``Total Frames``."""
        row = dict(self.au_counts)
        row["Total Frames"] = self.total_frames
        return row

    def __add__(self, other: "CorpusStats") -> "CorpusStats":
        au = dict(self.au_counts)
        for k, v in other.au_counts.items():
            au[k] = au.get(k, 0) + v
        ph = dict(self.phone_occupancy)
        for k, v in other.phone_occupancy.items():
            ph[k] = ph.get(k, 0) + v
        return CorpusStats(au, ph, self.total_frames + other.total_frames)


def empirical_stats(corpus: Corpus) -> CorpusStats:
    """Ground-truth AU activation counts, phone occupancy and frame total."""
    au = {a: 0 for a in corpus.aus}
    labels = list(corpus.alphabet.labels) if corpus.alphabet else []
    occ = np.zeros(len(labels), dtype=np.int64)
    total = 0
    for s in corpus:
        total += s.n_frames
        for a in corpus.aus:
            au[a] += int(np.count_nonzero(s.au_truth[a] == 1))
        if labels:
            occ += np.bincount(s.phone_truth, minlength=len(labels))
    return CorpusStats(au, {lab: int(n) for lab, n in zip(labels, occ)}, total)
