"""Exact filtering and smoothing in a two-slice DBN.

The belief state is the full joint over the hidden variables of one slice,
held as a tensor with one axis per hidden variable (2**7 * 29 = 3712 cells
for the seven-AU model).  The transition step contracts the previous belief
with the factorised transition CPTs using a cached ``einsum`` path, so the
dense transition matrix is never materialised.  Measurement nodes have a
single hidden parent, which makes the evidence term a product of per-variable
likelihood vectors.

The recursions run on a batch of equal-length sequences at once; arrays are
shaped ``(batch, *hidden_cards)``.
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import MISSING
from .graph import HIDDEN_PHONE, NetworkSpec, is_prev, strip_prev, validate

MODES = ("filtered-marginal", "smoothed-marginal", "joint-map")
# largest joint state space for which the dense transition matrix is cached
DENSE_LIMIT = 4096


class ImpossibleEvidence(ValueError):
    """The evidence has probability zero under the model."""


@dataclass(frozen=True)
class EvidenceFrame:
    """Measurements for one frame; ``None`` marks a missing measurement."""

    au_measurements: Mapping[str, int | None] = field(default_factory=dict)
    phone_measurement: int | None = None


@dataclass
class BeliefFrame:
    marginals: dict[str, np.ndarray]
    log_evidence: float
    kind: str  # "filtered" or "smoothed"
    hidden: tuple[str, ...] = ()
    joint: np.ndarray | None = None


@dataclass(frozen=True)
class DecodePolicy:
    mode: str = "filtered-marginal"
    threshold: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown decode mode {self.mode!r}; expected one of {MODES}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie strictly in (0, 1), got {self.threshold!r}")


class Engine:
    """Compiled inference routines for one validated NetworkSpec."""

    def __init__(self, spec: NetworkSpec):
        problems = validate(spec)
        if problems:
            raise ValueError("invalid network: " + "; ".join(problems))
        self.spec = spec
        self.hidden = tuple(v.name for v in spec.hidden)
        self.cards = tuple(v.cardinality for v in spec.hidden)
        n = len(self.hidden)
        if 2 * n + 1 > len(string.ascii_letters):
            raise ValueError("too many hidden variables for exact inference")
        self.n_states = math.prod(self.cards)
        letters = string.ascii_letters
        pos = {h: i for i, h in enumerate(self.hidden)}
        self._cur = letters[:n]
        self._prev = letters[n : 2 * n]
        self._batch = letters[2 * n]

        def axes(parents):
            return "".join(
                self._prev[pos[strip_prev(p)]] if is_prev(p) else self._cur[pos[p]] for p in parents
            )

        def factor(cpt):
            shape = [spec.card(p) for p in cpt.parents] + [cpt.table.shape[1]]
            return cpt.table.reshape(shape), axes(cpt.parents) + self._cur[pos[cpt.child]]

        init = [factor(spec.cpts[h]) for h in self.hidden]
        self.prior = np.einsum(
            ",".join(s for _, s in init) + "->" + self._cur, *[t for t, _ in init]
        ) if init else np.ones(())
        self.static = not spec.is_dynamic
        if not self.static:
            trans = [factor(spec.transition_cpts[h]) for h in self.hidden]
            self._trans_tensors = [t for t, _ in trans]
            self._trans_subs = [s for _, s in trans]
        self._chains: dict[str, _Chain] = {}
        self.dense = None
        if not self.static and self.n_states <= DENSE_LIMIT:
            self.dense = self._dense_transition()

        # measurement node -> (hidden index, initial matrix, transition matrix)
        self.meas: dict[str, tuple[int, np.ndarray, np.ndarray]] = {}
        for v in spec.measurements:
            (parent,) = spec.parents(v.name)
            m_init = spec.cpts[v.name].table
            m_trans = spec.transition_cpts[v.name].table if not self.static else m_init
            self.meas[v.name] = (pos[parent], m_init, m_trans)

    # ------------------------------------------------------------------
    def _chain(self, key, start_axes, out_axes):
        chain = self._chains.get(key)
        if chain is None:
            sizes = {c: k for c, k in zip(self._cur + self._prev, self.cards + self.cards)}
            sizes[self._batch] = 1
            chain = _Chain(start_axes, list(zip(self._trans_subs, self._trans_tensors)), out_axes, sizes)
            self._chains[key] = chain
        return chain

    def _dense_transition(self) -> np.ndarray:
        """P(h_t | h_t-1) as an ``(n_states, n_states)`` matrix, rows = previous state."""
        n = len(self.cards)
        where = {c: i for i, c in enumerate(self._prev)}
        where.update({c: n + i for i, c in enumerate(self._cur)})
        full = np.ones(self.cards + self.cards)
        for subs, factor in zip(self._trans_subs, self._trans_tensors):
            order = sorted(range(len(subs)), key=lambda k: where[subs[k]])
            shape = [1] * (2 * n)
            for k in order:
                shape[where[subs[k]]] = factor.shape[k]
            full *= factor.transpose(order).reshape(shape)
        return full.reshape(self.n_states, self.n_states)

    def predict(self, alpha: np.ndarray) -> np.ndarray:
        """One-step prediction sum_{h'} P(h | h') alpha(h')."""
        if self.dense is not None:
            b = alpha.shape[0]
            return (alpha.reshape(b, -1) @ self.dense).reshape(alpha.shape)
        b = self._batch
        return self._chain("f", b + self._prev, b + self._cur)(alpha)

    def back_project(self, msg: np.ndarray) -> np.ndarray:
        """sum_h P(h | h') msg(h), indexed by the previous-slice state h'."""
        if self.dense is not None:
            b = msg.shape[0]
            return (msg.reshape(b, -1) @ self.dense.T).reshape(msg.shape)
        b = self._batch
        return self._chain("b", b + self._cur, b + self._prev)(msg)

    def likelihood(self, obs: Mapping[str, np.ndarray], t: int, batch: int) -> np.ndarray:
        """Evidence tensor ``(batch, *cards)`` for frame ``t``."""
        e = np.ones((batch,) + self.cards)
        n = len(self.cards)
        for name, (i, m_init, m_trans) in self.meas.items():
            col = obs.get(name)
            if col is None:
                continue
            o = np.asarray(col)[:, t]
            present = o != MISSING
            if not present.any():
                continue
            m = m_init if (t == 0 or self.static) else m_trans
            lik = np.ones((batch, self.cards[i]))
            lik[present] = m[:, o[present]].T
            shape = [batch] + [1] * n
            shape[1 + i] = self.cards[i]
            e *= lik.reshape(shape)
        return e

    def _check_obs(self, obs: Mapping[str, np.ndarray]) -> tuple[int, int]:
        shape = None
        for name, col in obs.items():
            if name not in self.meas:
                raise ValueError(f"evidence for unknown measurement variable {name!r}")
            col = np.asarray(col)
            if col.ndim != 2:
                raise ValueError("observation arrays must be (batch, frames)")
            if shape is None:
                shape = col.shape
            elif col.shape != shape:
                raise ValueError("observation arrays differ in shape")
            k = self.meas[name][1].shape[1]
            if np.any((col != MISSING) & ((col < 0) | (col >= k))):
                raise ValueError(f"state out of range for {name!r}")
        if shape is None:
            raise ValueError("no observation arrays given; pass frame count explicitly")
        return shape

    def forward(self, obs, frames: int | None = None, batch: int | None = None, keep: bool = False):
        """Scaled forward pass.

        Returns ``(marginals, logc, joints)``: one ``(T, batch, card)`` array
        per hidden variable, ``logc[t, b]`` = log P(o_t | o_1..t-1), and the
        normalised joint beliefs per frame when ``keep`` (else ``None``).
        Frames whose evidence is impossible get ``logc = -inf`` and a zero
        belief.
        """
        if obs:
            batch, frames = self._check_obs(obs)
        if frames is None or batch is None:
            raise ValueError("frames and batch are required without observations")
        logc = np.zeros((frames, batch))
        margs = [np.zeros((frames, batch, k)) for k in self.cards]
        joints = [] if keep else None
        alpha = None
        for t in range(frames):
            if t == 0 or self.static:
                pred = np.broadcast_to(self.prior, (batch,) + self.cards)
            else:
                pred = self.predict(alpha)
            a = pred * self.likelihood(obs, t, batch)
            c = a.reshape(batch, -1).sum(axis=1)
            ok = c > 0
            with np.errstate(divide="ignore"):
                logc[t] = np.log(c)
            c_safe = np.where(ok, c, 1.0)
            alpha = a / c_safe.reshape((batch,) + (1,) * len(self.cards))
            for i in range(len(self.cards)):
                margs[i][t] = _axis_marginal(alpha, i)
            if keep:
                joints.append(alpha)
        return margs, logc, joints

    def smooth(self, obs, frames=None, batch=None):
        """Forward-backward; returns smoothed marginals, logc, smoothed joints."""
        margs_f, logc, alphas = self.forward(obs, frames, batch, keep=True)
        frames, batch = logc.shape
        margs = [np.zeros_like(m) for m in margs_f]
        joints = [None] * frames
        beta = np.ones((batch,) + self.cards)
        shape_b = (batch,) + (1,) * len(self.cards)
        for t in range(frames - 1, -1, -1):
            g = alphas[t] * beta
            z = g.reshape(batch, -1).sum(axis=1)
            g = g / np.where(z > 0, z, 1.0).reshape(shape_b)
            joints[t] = g
            for i in range(len(self.cards)):
                margs[i][t] = _axis_marginal(g, i)
            if t > 0 and not self.static:
                c = np.exp(logc[t])
                msg = self.likelihood(obs, t, batch) * beta
                beta = self.back_project(msg) / np.where(c > 0, c, 1.0).reshape(shape_b)
        return margs, logc, joints


class _Chain:
    """Contract a tensor with a list of factors, one pairwise product at a time.

    The factor order is fixed greedily at construction (smallest next
    intermediate first); an axis is summed out as soon as no remaining factor
    and not the output refers to it.
    """

    def __init__(self, start_axes: str, factors, out_axes: str, sizes):
        remaining = list(range(len(factors)))
        axes = start_axes
        self.steps = []
        while remaining:
            best = None
            for f in remaining:
                fa = factors[f][0]
                rest = set(out_axes).union(*(factors[g][0] for g in remaining if g != f))
                union = axes + "".join(c for c in fa if c not in axes)
                keep = "".join(c for c in union if c in rest)
                size = math.prod(sizes[c] for c in keep)
                if best is None or size < best[0]:
                    best = (size, f, keep)
            _, f, keep = best
            self.steps.append((f"{axes},{factors[f][0]}->{keep}", factors[f][1]))
            axes = keep
            remaining.remove(f)
        missing = set(out_axes) - set(axes)
        if missing:
            raise ValueError(f"axes {sorted(missing)} never produced")
        self.final = f"{axes}->{out_axes}"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        for subs, factor in self.steps:
            x = np.einsum(subs, x, factor, optimize=True)
        return np.einsum(self.final, x)


def _axis_marginal(tensor: np.ndarray, i: int) -> np.ndarray:
    axes = tuple(a for a in range(1, tensor.ndim) if a != i + 1)
    return tensor.sum(axis=axes) if axes else tensor


# ---------------------------------------------------------------------------
# frame-level API
# ---------------------------------------------------------------------------


def evidence_to_obs(spec: NetworkSpec, evidence: Sequence[EvidenceFrame]) -> dict[str, np.ndarray]:
    """Convert EvidenceFrames to ``{measurement var: (1, T) array}``."""
    hidden = {v.name: v for v in spec.hidden}
    phones = [v.name for v in spec.hidden if v.role == HIDDEN_PHONE]
    frames = len(evidence)
    obs: dict[str, np.ndarray] = {}

    def put(hidden_name, t, value):
        meas = spec.measurement_of(hidden_name)
        if not meas:
            raise ValueError(f"no measurement node for {hidden_name!r}")
        for m in meas:
            col = obs.setdefault(m, np.full((1, frames), MISSING, dtype=np.int64))
            col[0, t] = MISSING if value is None else int(value)

    for t, ev in enumerate(evidence):
        for name, value in ev.au_measurements.items():
            if name not in hidden:
                raise ValueError(f"evidence references unknown variable {name!r}")
            put(name, t, value)
        if ev.phone_measurement is not None:
            if not phones:
                raise ValueError("evidence has a phone measurement but the model has no phone node")
            put(phones[0], t, ev.phone_measurement)
    return obs


def _frames(engine: Engine, margs, logc, joints, kind, total=None) -> list[BeliefFrame]:
    out = []
    run = np.cumsum(logc[:, 0])
    for t in range(logc.shape[0]):
        out.append(
            BeliefFrame(
                marginals={h: margs[i][t, 0].copy() for i, h in enumerate(engine.hidden)},
                log_evidence=float(run[t] if total is None else total),
                kind=kind,
                hidden=engine.hidden,
                joint=None if joints is None else joints[t][0].copy(),
            )
        )
    return out


def _run(spec, evidence):
    if len(evidence) == 0:
        raise ValueError("evidence must contain at least one frame")
    engine = Engine(spec)
    obs = evidence_to_obs(spec, evidence)
    return engine, obs, len(evidence)


def filter(spec: NetworkSpec, evidence: Sequence[EvidenceFrame]) -> list[BeliefFrame]:
    """Posterior marginals of the hidden variables given frames 1..t, for each t."""
    engine, obs, frames = _run(spec, evidence)
    margs, logc, joints = engine.forward(obs, frames, 1, keep=True)
    bad = np.flatnonzero(~np.isfinite(logc[:, 0]))
    if bad.size:
        raise ImpossibleEvidence(f"evidence has zero probability at frame {int(bad[0])}")
    return _frames(engine, margs, logc, joints, "filtered")


def smooth(spec: NetworkSpec, evidence: Sequence[EvidenceFrame]) -> list[BeliefFrame]:
    """Posterior marginals of the hidden variables given all frames."""
    engine, obs, frames = _run(spec, evidence)
    margs, logc, joints = engine.smooth(obs, frames, 1)
    bad = np.flatnonzero(~np.isfinite(logc[:, 0]))
    if bad.size:
        raise ImpossibleEvidence(f"evidence has zero probability at frame {int(bad[0])}")
    return _frames(engine, margs, logc, joints, "smoothed", total=float(logc[:, 0].sum()))


def log_evidence(spec: NetworkSpec, evidence: Sequence[EvidenceFrame]) -> float:
    """log P(all measurements); ``-inf`` when they are impossible."""
    engine, obs, frames = _run(spec, evidence)
    _, logc, _ = engine.forward(obs, frames, 1)
    if not np.all(np.isfinite(logc)):
        return -math.inf
    return float(logc.sum())


def decode(beliefs: Sequence[BeliefFrame], policy: DecodePolicy = DecodePolicy(), spec: NetworkSpec | None = None):
    """Per-frame labels ``{"aus": {name: 0/1}, "phone": state or None}``.

    Marginal modes threshold P(AU=1) strictly above ``policy.threshold``.
    ``joint-map`` takes the most probable joint AU configuration (phone
    summed out); ties go to the lowest state indices.  The phone label is
    always the arg-max of its marginal.
    """
    want = {"filtered-marginal": "filtered", "smoothed-marginal": "smoothed"}.get(policy.mode)
    roles = {v.name: v.role for v in spec.variables} if spec is not None else {}
    out = []
    for b in beliefs:
        if want is not None and b.kind != want:
            raise ValueError(f"decode mode {policy.mode!r} needs {want} beliefs, got {b.kind}")
        names = list(b.hidden or b.marginals)
        phone_names = [n for n in names if roles.get(n) == HIDDEN_PHONE] if roles else [
            n for n in names if len(b.marginals[n]) > 2 or n == "Phone"
        ]
        au_names = [n for n in names if n not in phone_names]
        phone = int(np.argmax(b.marginals[phone_names[0]])) if phone_names else None
        if policy.mode == "joint-map":
            if b.joint is None:
                raise ValueError("joint-map decoding needs beliefs that carry the joint posterior")
            axes = tuple(names.index(p) for p in phone_names)
            au_joint = b.joint.sum(axis=axes) if axes else b.joint
            best = np.unravel_index(int(np.argmax(au_joint)), au_joint.shape)
            labels = {n: int(s) for n, s in zip(au_names, best)}
        else:
            labels = {n: int(b.marginals[n][1] > policy.threshold) for n in au_names}
        out.append({"aus": labels, "phone": phone})
    return out
