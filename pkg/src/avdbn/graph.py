"""Discrete Bayesian networks and two-slice dynamic Bayesian networks.

A :class:`NetworkSpec` holds the variables, the intra-slice and inter-slice
edges, and the conditional probability tables of a model.  The same type
describes a static BN (no inter-slice edges, no transition CPTs) and a
two-slice DBN.

CPT tables are 2-D arrays of shape ``(n_parent_configs, child_card)``.
Parent configurations are enumerated row-major (C order) over the declared
parent order, so ``table.reshape(*parent_cards, child_card)`` indexes the
table by parent states directly.

Parents in a transition CPT that live in the previous slice are written
``"<name>@t-1"`` (see :func:`prev_name`).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._io import atomic_write_text

HIDDEN_AU = "hidden-AU"
HIDDEN_PHONE = "hidden-phone"
MEASUREMENT_AU = "measurement-AU"
MEASUREMENT_PHONE = "measurement-phone"
ROLES = (HIDDEN_AU, HIDDEN_PHONE, MEASUREMENT_AU, MEASUREMENT_PHONE)
HIDDEN_ROLES = (HIDDEN_AU, HIDDEN_PHONE)
MEASUREMENT_ROLES = (MEASUREMENT_AU, MEASUREMENT_PHONE)

FORMAT_VERSION = "1"
PREV_SUFFIX = "@t-1"
ROW_SUM_TOL = 1e-12


def prev_name(name: str) -> str:
    """Name of ``name`` in the previous time slice."""
    return name + PREV_SUFFIX


def is_prev(name: str) -> bool:
    return name.endswith(PREV_SUFFIX)


def strip_prev(name: str) -> str:
    return name[: -len(PREV_SUFFIX)] if is_prev(name) else name


@dataclass(frozen=True)
class Variable:
    name: str
    cardinality: int
    role: str

    @property
    def is_hidden(self) -> bool:
        return self.role in HIDDEN_ROLES

    @property
    def is_measurement(self) -> bool:
        return self.role in MEASUREMENT_ROLES


class Cpt:
    """P(child | parents) as a read-only ``(n_configs, card)`` array."""

    __slots__ = ("child", "parents", "table")

    def __init__(self, child: str, parents: Sequence[str], table):
        table = np.array(table, dtype=float)
        if table.ndim == 1:
            table = table.reshape(1, -1)
        table.flags.writeable = False
        object.__setattr__(self, "child", child)
        object.__setattr__(self, "parents", tuple(parents))
        object.__setattr__(self, "table", table)

    def __setattr__(self, key, value):
        raise AttributeError("Cpt is immutable")

    def __reduce__(self):
        return (Cpt, (self.child, self.parents, np.array(self.table)))

    def __repr__(self):
        return f"Cpt({self.child!r}, parents={list(self.parents)!r}, shape={self.table.shape})"

    def __eq__(self, other):
        if not isinstance(other, Cpt):
            return NotImplemented
        return (
            self.child == other.child
            and self.parents == other.parents
            and self.table.shape == other.table.shape
            and bool(np.array_equal(self.table, other.table))
        )

    __hash__ = None

    def row_index(self, parent_states: Sequence[int], parent_cards: Sequence[int]) -> int:
        if not self.parents:
            return 0
        return int(np.ravel_multi_index(tuple(parent_states), tuple(parent_cards)))


@dataclass(frozen=True)
class NetworkSpec:
    variables: tuple[Variable, ...]
    intra_edges: tuple[tuple[str, str], ...] = ()
    inter_edges: tuple[tuple[str, str], ...] = ()
    cpts: Mapping[str, Cpt] = field(default_factory=dict)
    transition_cpts: Mapping[str, Cpt] | None = None

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "intra_edges", tuple(tuple(e) for e in self.intra_edges))
        object.__setattr__(self, "inter_edges", tuple(tuple(e) for e in self.inter_edges))
        object.__setattr__(self, "cpts", dict(self.cpts))
        if self.transition_cpts is not None:
            object.__setattr__(self, "transition_cpts", dict(self.transition_cpts))

    # lookups -----------------------------------------------------------
    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    def variable(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(f"unknown variable {name!r}")

    def card(self, name: str) -> int:
        return self.variable(strip_prev(name)).cardinality

    @property
    def cardinalities(self) -> dict[str, int]:
        return {v.name: v.cardinality for v in self.variables}

    @property
    def hidden(self) -> list[Variable]:
        return [v for v in self.variables if v.is_hidden]

    @property
    def measurements(self) -> list[Variable]:
        return [v for v in self.variables if v.is_measurement]

    @property
    def is_dynamic(self) -> bool:
        return self.transition_cpts is not None

    def parents(self, name: str) -> list[str]:
        """Intra-slice parents in declaration order."""
        ps = {a for a, b in self.intra_edges if b == name}
        return [n for n in self.names if n in ps]

    def inter_parents(self, name: str) -> list[str]:
        """Previous-slice parents (bare names) in declaration order."""
        ps = {a for a, b in self.inter_edges if b == name}
        return [n for n in self.names if n in ps]

    def family(self, name: str) -> tuple[str, ...]:
        """Canonical initial-slice parent order."""
        return tuple(self.parents(name))

    def transition_family(self, name: str) -> tuple[str, ...]:
        """Canonical transition parent order: current-slice then previous-slice."""
        return tuple(self.parents(name)) + tuple(prev_name(p) for p in self.inter_parents(name))

    def measurement_of(self, hidden: str) -> list[str]:
        return [
            b for a, b in self.intra_edges if a == hidden and self.variable(b).is_measurement
        ]

    def with_edges(self, intra_edges=None, inter_edges=None, keep_cpts: bool = False) -> "NetworkSpec":
        """Copy with a new edge set; CPTs are dropped unless ``keep_cpts``."""
        return replace(
            self,
            intra_edges=self.intra_edges if intra_edges is None else tuple(intra_edges),
            inter_edges=self.inter_edges if inter_edges is None else tuple(inter_edges),
            cpts=self.cpts if keep_cpts else {},
            transition_cpts=(self.transition_cpts if keep_cpts else None),
        )

    def restrict(self, names: Iterable[str]) -> "NetworkSpec":
        """Sub-network over ``names`` (edges touching other variables are dropped, no CPTs)."""
        keep = set(names)
        return NetworkSpec(
            variables=tuple(v for v in self.variables if v.name in keep),
            intra_edges=tuple(e for e in self.intra_edges if e[0] in keep and e[1] in keep),
            inter_edges=tuple(e for e in self.inter_edges if e[0] in keep and e[1] in keep),
        )


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def _find_cycle(names: Sequence[str], edges: Iterable[tuple[str, str]]) -> list[str] | None:
    children: dict[str, list[str]] = {n: [] for n in names}
    for a, b in edges:
        if a in children and b in children:
            children[a].append(b)
    state = dict.fromkeys(names, 0)
    stack: list[str] = []

    def visit(n):
        state[n] = 1
        stack.append(n)
        for c in children[n]:
            if state[c] == 1:
                return stack[stack.index(c):] + [c]
            if state[c] == 0:
                found = visit(c)
                if found:
                    return found
        stack.pop()
        state[n] = 2
        return None

    for n in names:
        if state[n] == 0:
            found = visit(n)
            if found:
                return found
    return None


def _check_cpt(spec: NetworkSpec, cpt: Cpt, expected_parents: Sequence[str], where: str) -> list[str]:
    out = []
    if set(cpt.parents) != set(expected_parents) or len(cpt.parents) != len(expected_parents):
        out.append(
            f"{where}: parents {list(cpt.parents)} do not match edge set {sorted(expected_parents)}"
        )
        return out
    try:
        child_card = spec.card(cpt.child)
        n_cfg = math.prod(spec.card(p) for p in cpt.parents)
    except KeyError as exc:
        return [f"{where}: {exc.args[0]}"]
    if cpt.table.shape != (n_cfg, child_card):
        out.append(f"{where}: table shape {cpt.table.shape} != ({n_cfg}, {child_card})")
        return out
    t = cpt.table
    if not np.all(np.isfinite(t)) or np.any(t < 0) or np.any(t > 1):
        bad = np.argwhere(~((t >= 0) & (t <= 1)))
        out.append(f"{where}: entry out of [0, 1] at row {int(bad[0][0])}")
    sums = t.sum(axis=1)
    for j in np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL):
        out.append(f"{where}: row {int(j)} sums to {sums[j]!r}, not 1")
    return out


def validate(spec: NetworkSpec, require_cpts: bool = True) -> list[str]:
    """Return every invariant violation of ``spec``; an empty list means valid.

    With ``require_cpts=False`` a structure-only spec (no CPTs at all) is
    accepted; any CPTs that are present are still checked.
    """
    out: list[str] = []
    names = [v.name for v in spec.variables]
    seen = set()
    for v in spec.variables:
        if v.name in seen:
            out.append(f"variable {v.name!r}: duplicate name")
        seen.add(v.name)
        if "@" in v.name:
            out.append(f"variable {v.name!r}: '@' is reserved")
        if v.role not in ROLES:
            out.append(f"variable {v.name!r}: unknown role {v.role!r}")
        if v.cardinality < 2:
            out.append(f"variable {v.name!r}: cardinality {v.cardinality} < 2")
        if v.role in (HIDDEN_AU, MEASUREMENT_AU) and v.cardinality != 2:
            out.append(f"variable {v.name!r}: AU variables must be binary")
    phone_cards = {v.cardinality for v in spec.variables if v.role in (HIDDEN_PHONE, MEASUREMENT_PHONE)}
    if len(phone_cards) > 1:
        out.append(f"phone variables disagree on cardinality: {sorted(phone_cards)}")
    if out:
        return out

    roles = {v.name: v.role for v in spec.variables}
    for kind, edges in (("intra", spec.intra_edges), ("inter", spec.inter_edges)):
        for a, b in edges:
            for n in (a, b):
                if n not in roles:
                    out.append(f"{kind} edge {a}->{b}: unknown variable {n!r}")
        if len(set(edges)) != len(edges):
            out.append(f"{kind} edges contain duplicates")
    if out:
        return out
    for a, b in spec.intra_edges:
        if a == b:
            out.append(f"intra edge {a}->{b}: self edge (cycle)")
    cyc = _find_cycle(names, [e for e in spec.intra_edges if e[0] != e[1]])
    if cyc:
        out.append("cycle in intra-slice edges: " + " -> ".join(cyc))

    for v in spec.variables:
        if not v.is_measurement:
            continue
        ps = [a for a, b in spec.intra_edges if b == v.name]
        want = HIDDEN_AU if v.role == MEASUREMENT_AU else HIDDEN_PHONE
        if len(ps) != 1 or roles[ps[0]] != want:
            out.append(f"measurement {v.name!r}: must have exactly one {want} parent, has {ps}")
        if any(a == v.name for a, _ in spec.intra_edges):
            out.append(f"measurement {v.name!r}: must not have children")
        if any(v.name in e for e in spec.inter_edges):
            out.append(f"measurement {v.name!r}: must not take part in inter-slice edges")
    for a, b in spec.inter_edges:
        if roles[a] not in HIDDEN_ROLES or roles[b] not in HIDDEN_ROLES:
            out.append(f"inter edge {a}->{b}: both ends must be hidden variables")

    if not spec.cpts:
        if require_cpts:
            out.append("no CPTs: every variable needs an initial-slice CPT")
    else:
        for n in names:
            cpt = spec.cpts.get(n)
            if cpt is None:
                out.append(f"cpt {n!r}: missing")
                continue
            if cpt.child != n:
                out.append(f"cpt {n!r}: child field is {cpt.child!r}")
            out.extend(_check_cpt(spec, cpt, spec.family(n), f"cpt {n!r}"))
        for n in spec.cpts:
            if n not in roles:
                out.append(f"cpt {n!r}: no such variable")
    if spec.transition_cpts is not None:
        for n in names:
            cpt = spec.transition_cpts.get(n)
            if cpt is None:
                out.append(f"transition cpt {n!r}: missing")
                continue
            out.extend(_check_cpt(spec, cpt, spec.transition_family(n), f"transition cpt {n!r}"))
    elif spec.inter_edges and spec.cpts:
        out.append("inter-slice edges present but no transition CPTs")
    return out


# ---------------------------------------------------------------------------
# evaluation helpers
# ---------------------------------------------------------------------------


def topological_order(spec: NetworkSpec) -> list[str]:
    """Intra-slice topological order, ties broken by declaration order."""
    names = spec.names
    pos = {n: i for i, n in enumerate(names)}
    indeg = dict.fromkeys(names, 0)
    children: dict[str, list[str]] = {n: [] for n in names}
    for a, b in spec.intra_edges:
        indeg[b] += 1
        children[a].append(b)
    ready = sorted((n for n in names if indeg[n] == 0), key=pos.__getitem__)
    order = []
    while ready:
        n = ready.pop(0)
        order.append(n)
        for c in children[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
        ready.sort(key=pos.__getitem__)
    if len(order) != len(names):
        raise ValueError("intra-slice edges contain a cycle")
    return order


def cpt_lookup(spec: NetworkSpec, cpt: Cpt, assignment: Mapping[str, int]) -> float:
    cards = [spec.card(p) for p in cpt.parents]
    j = cpt.row_index([assignment[p] for p in cpt.parents], cards)
    return float(cpt.table[j, assignment[cpt.child]])


def joint_log_prob(spec: NetworkSpec, assignment: Mapping[str, int]) -> float:
    """log P(x) of a full initial-slice assignment; ``-inf`` on a zero entry."""
    total = 0.0
    for v in spec.variables:
        if v.name not in assignment:
            raise ValueError(f"assignment is missing variable {v.name!r}")
        s = assignment[v.name]
        if not 0 <= s < v.cardinality:
            raise ValueError(f"state {s} out of range for {v.name!r}")
    for v in spec.variables:
        cpt = spec.cpts.get(v.name)
        if cpt is None:
            raise ValueError(f"missing CPT for {v.name!r}")
        p = cpt_lookup(spec, cpt, assignment)
        if p == 0.0:
            return -math.inf
        total += math.log(p)
    return total


# ---------------------------------------------------------------------------
# model file
# ---------------------------------------------------------------------------


def _cpt_to_dict(cpt: Cpt) -> dict:
    return {
        "child": cpt.child,
        "parents": list(cpt.parents),
        "probabilities": [float(x) for x in cpt.table.ravel()],
    }


def _cpt_from_dict(d: Mapping, cards: Mapping[str, int]) -> Cpt:
    child = d["child"]
    parents = list(d["parents"])
    probs = np.asarray(d["probabilities"], dtype=float)
    k = cards[strip_prev(child)]
    if probs.size % k:
        raise ValueError(f"cpt {child!r}: {probs.size} probabilities is not a multiple of {k}")
    return Cpt(child, parents, probs.reshape(-1, k))


def spec_to_dict(spec: NetworkSpec) -> dict:
    d = {
        "format_version": FORMAT_VERSION,
        "parent_order": "row-major",
        "variables": [
            {"name": v.name, "cardinality": v.cardinality, "role": v.role} for v in spec.variables
        ],
        "intra_edges": [list(e) for e in spec.intra_edges],
        "inter_edges": [list(e) for e in spec.inter_edges],
        "cpts": [_cpt_to_dict(spec.cpts[n]) for n in spec.names if n in spec.cpts],
        "transition_cpts": None,
    }
    if spec.transition_cpts is not None:
        d["transition_cpts"] = [
            _cpt_to_dict(spec.transition_cpts[n]) for n in spec.names if n in spec.transition_cpts
        ]
    return d


def spec_from_dict(d: Mapping) -> NetworkSpec:
    if str(d.get("format_version")) != FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version {d.get('format_version')!r}")
    variables = tuple(
        Variable(v["name"], int(v["cardinality"]), v["role"]) for v in d["variables"]
    )
    cards = {v.name: v.cardinality for v in variables}
    cpts = {}
    for c in d.get("cpts") or []:
        cpt = _cpt_from_dict(c, cards)
        cpts[cpt.child] = cpt
    trans = None
    if d.get("transition_cpts") is not None:
        trans = {}
        for c in d["transition_cpts"]:
            cpt = _cpt_from_dict(c, cards)
            trans[cpt.child] = cpt
    return NetworkSpec(
        variables=variables,
        intra_edges=tuple(tuple(e) for e in d.get("intra_edges", [])),
        inter_edges=tuple(tuple(e) for e in d.get("inter_edges", [])),
        cpts=cpts,
        transition_cpts=trans,
    )


def dumps_model(spec: NetworkSpec) -> str:
    # float repr is the shortest string that round-trips bit-exactly
    return json.dumps(spec_to_dict(spec), indent=1) + "\n"


def loads_model(text: str) -> NetworkSpec:
    return spec_from_dict(json.loads(text))


def save_model(spec: NetworkSpec, path: str | os.PathLike) -> None:
    atomic_write_text(path, dumps_model(spec))


def load_model(path: str | os.PathLike) -> NetworkSpec:
    """Read a model file; format problems are raised as ValueError naming the file."""
    with open(path) as fh:
        text = fh.read()
    try:
        return loads_model(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{os.fspath(path)}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{os.fspath(path)}: malformed model file ({exc})") from None
