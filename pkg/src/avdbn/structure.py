"""Structure learning: K2 for the intra-slice graph, BIC hill climbing for
the transition graph, and expert edge injection.

All scores are log scores.  Family scores are decomposable, so searches only
rescore the family a move touches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammaln

from .data import MISSING, as_columns, n_records
from .graph import (
    HIDDEN_AU,
    HIDDEN_PHONE,
    Cpt,
    NetworkSpec,
    Variable,
    _find_cycle,
    is_prev,
    prev_name,
    strip_prev,
)


@dataclass(frozen=True)
class SufficientStats:
    """Counts N_ijk of ``child`` state k under parent configuration j."""

    child: str
    parents: tuple[str, ...]
    counts: np.ndarray  # (n_configs, child_card), int64

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def sample_count(self) -> int:
        return int(self.counts.sum())

    @property
    def cardinality(self) -> int:
        return self.counts.shape[1]

    @property
    def n_configs(self) -> int:
        return self.counts.shape[0]


@dataclass(frozen=True)
class StructureCandidate:
    edges: tuple[tuple[str, str], ...]
    family_scores: Mapping[str, float] = field(default_factory=dict)

    @property
    def total_score(self) -> float:
        return math.fsum(self.family_scores.values())


@dataclass(frozen=True)
class OrderingPolicy:
    """K2 node ordering and parent cap.

    ``ordering`` overrides ``rule``; the only named rule orders phone
    variables first, then AUs by descending activation count.
    """

    ordering: tuple[str, ...] | None = None
    rule: str = "phone-first-frequency"
    max_parents: int = 3

    def __post_init__(self):
        if self.max_parents < 0:
            raise ValueError("max_parents must be >= 0")
        if self.ordering is None and self.rule != "phone-first-frequency":
            raise ValueError(f"unknown ordering rule {self.rule!r}")


def _card_of(cards: Mapping[str, int], name: str) -> int:
    if name in cards:
        return cards[name]
    if strip_prev(name) in cards:
        return cards[strip_prev(name)]
    raise ValueError(f"unknown variable {name!r}")


def count_stats(
    data,
    child: str,
    parents: Sequence[str],
    cards: Mapping[str, int],
    skip_missing: bool = False,
) -> SufficientStats:
    """Count N_ijk for one family.

    ``cards`` maps variable names to cardinalities (previous-slice names
    resolve to their current-slice entry).  With ``skip_missing`` records
    where any family member is ``-1`` are dropped; otherwise they are an
    error.
    """
    parents = tuple(parents)
    names = (child,) + parents
    fam_cards = [_card_of(cards, n) for n in names]
    cols = as_columns(data, names) if not isinstance(data, Mapping) else data
    for n in names:
        if n not in cols:
            raise ValueError(f"data has no column for variable {n!r}")
    arrs = [np.asarray(cols[n], dtype=np.int64) for n in names]
    if skip_missing and arrs[0].size:
        keep = np.ones(arrs[0].shape, dtype=bool)
        for a in arrs:
            keep &= a != MISSING
        arrs = [a[keep] for a in arrs]
    for n, a, k in zip(names, arrs, fam_cards):
        if a.size and (a.min() < 0 or a.max() >= k):
            raise ValueError(f"state out of range for {n!r} (cardinality {k})")
    k = fam_cards[0]
    m = math.prod(fam_cards[1:])
    if parents:
        j = np.ravel_multi_index(tuple(arrs[1:]), tuple(fam_cards[1:]))
    else:
        j = np.zeros_like(arrs[0])
    flat = np.bincount(j * k + arrs[0], minlength=m * k)
    return SufficientStats(child, parents, flat.reshape(m, k).astype(np.int64))


# ---------------------------------------------------------------------------
# K2
# ---------------------------------------------------------------------------


def k2_family_log_score(stats: SufficientStats) -> float:
    """Log of the K2 family score via log-gamma.

    sum_j [ lnG(K) - lnG(N_ij + K) + sum_k lnG(N_ijk + 1) ]
    """
    n = stats.counts.astype(float)
    k = stats.cardinality
    nij = n.sum(axis=1)
    return float(
        stats.n_configs * gammaln(k) - gammaln(nij + k).sum() + gammaln(n + 1).sum()
    )


def resolve_ordering(policy: OrderingPolicy, variables: Sequence[Variable], data) -> list[str]:
    hidden = [v for v in variables if v.is_hidden]
    names = [v.name for v in hidden]
    if policy.ordering is not None:
        if sorted(policy.ordering) != sorted(names):
            raise ValueError(
                f"ordering {list(policy.ordering)} is not a permutation of {names}"
            )
        return list(policy.ordering)
    phones = [v.name for v in hidden if v.role == HIDDEN_PHONE]
    aus = [v.name for v in hidden if v.role == HIDDEN_AU]
    freq = {a: int(np.count_nonzero(np.asarray(data[a]) == 1)) for a in aus}
    pos = {a: i for i, a in enumerate(aus)}
    return phones + sorted(aus, key=lambda a: (-freq[a], pos[a]))


def _check_complete(cols: Mapping[str, np.ndarray], names: Sequence[str]):
    for n in names:
        if n not in cols:
            raise ValueError(f"incomplete data: no column for {n!r}")
        if np.any(np.asarray(cols[n]) == MISSING):
            raise ValueError(f"incomplete data: missing values for {n!r}")


def k2_search(
    data,
    variables: Sequence[Variable],
    policy: OrderingPolicy = OrderingPolicy(),
) -> list[tuple[str, str]]:
    """Greedy K2 parent selection over the hidden ``variables``.

    Returns intra-slice edges ``(parent, child)``.  Candidate parents are
    the predecessors in the ordering; among equal gains the earliest
    predecessor wins.
    """
    hidden = [v for v in variables if v.is_hidden]
    cards = {v.name: v.cardinality for v in hidden}
    cols = as_columns(data)
    _check_complete(cols, list(cards))
    order = resolve_ordering(policy, hidden, cols)
    edges = []
    for i, x in enumerate(order):
        parents: list[str] = []
        best = k2_family_log_score(count_stats(cols, x, parents, cards))
        while len(parents) < policy.max_parents:
            pick, pick_score = None, best
            for z in order[:i]:
                if z in parents:
                    continue
                s = k2_family_log_score(count_stats(cols, x, parents + [z], cards))
                if s > pick_score:
                    pick, pick_score = z, s
            if pick is None:
                break
            parents.append(pick)
            best = pick_score
        edges.extend((p, x) for p in parents)
    return edges


def k2_structure_score(data, variables: Sequence[Variable], edges) -> StructureCandidate:
    hidden = [v for v in variables if v.is_hidden]
    cards = {v.name: v.cardinality for v in hidden}
    cols = as_columns(data)
    scores = {}
    for v in hidden:
        ps = [a for a, b in edges if b == v.name]
        scores[v.name] = k2_family_log_score(count_stats(cols, v.name, ps, cards))
    return StructureCandidate(tuple(edges), scores)


# ---------------------------------------------------------------------------
# BIC
# ---------------------------------------------------------------------------


def max_log_likelihood(stats: SufficientStats) -> float:
    """sum N_ijk log(N_ijk / N_ij) with 0 log 0 = 0."""
    n = stats.counts.astype(float)
    nij = n.sum(axis=1, keepdims=True)
    mask = n > 0
    return float(np.sum(n[mask] * (np.log(n[mask]) - np.log(np.broadcast_to(nij, n.shape)[mask]))))


def n_free_parameters(stats: SufficientStats) -> int:
    return (stats.cardinality - 1) * stats.n_configs


def bic_family_score(stats: SufficientStats, sample_count: int) -> float:
    return max_log_likelihood(stats) - 0.5 * n_free_parameters(stats) * math.log(sample_count)


def transition_families(spec: NetworkSpec) -> dict[str, tuple[str, ...]]:
    """Transition families of the hidden variables of ``spec``."""
    return {v.name: spec.transition_family(v.name) for v in spec.hidden}


def bic_log_score(
    families: Mapping[str, Sequence[str]] | NetworkSpec,
    data,
    cards: Mapping[str, int] | None = None,
) -> StructureCandidate:
    """BIC score of a candidate: max log-likelihood minus (q/2) log S.

    ``families`` maps each scored child to its parents (``name@t-1`` for the
    previous slice), or is a NetworkSpec whose hidden transition families are
    scored.  The structure prior is uniform and dropped.
    """
    if isinstance(families, NetworkSpec):
        cards = families.cardinalities if cards is None else cards
        families = transition_families(families)
    if cards is None:
        raise ValueError("cards required when families is a mapping")
    cols = as_columns(data)
    s = n_records(cols)
    if s == 0:
        raise ValueError("empty data")
    current = list(families)
    cur_edges = [(p, c) for c, ps in families.items() for p in ps if not is_prev(p)]
    if _find_cycle(sorted(set(current) | {p for p, _ in cur_edges}), cur_edges):
        raise ValueError("candidate structure is cyclic")
    scores = {}
    edges = []
    for child, ps in families.items():
        scores[child] = bic_family_score(count_stats(cols, child, ps, cards), s)
        edges.extend((p, child) for p in ps)
    return StructureCandidate(tuple(edges), scores)


def transition_search(
    data,
    variables: Sequence[Variable],
    fixed_intra: Sequence[tuple[str, str]],
    policy: OrderingPolicy = OrderingPolicy(),
) -> list[tuple[str, str]]:
    """Greedy BIC hill climbing over inter-slice edges ``X@t-1 -> Y``.

    Starts from a self-loop on every hidden variable and applies the single
    add or remove with the largest positive gain until none improves.  Ties
    go to the lexicographically first edge.  ``policy.max_parents`` caps the
    number of previous-slice parents per family; intra-slice parents are held
    fixed.  Returns ``(source, target)`` pairs of bare names.
    """
    hidden = [v for v in variables if v.is_hidden]
    names = [v.name for v in hidden]
    cards = {v.name: v.cardinality for v in hidden}
    cols = as_columns(data)
    _check_complete(cols, names + [prev_name(n) for n in names])
    s = n_records(cols)
    if s == 0:
        raise ValueError("empty data")
    intra = {n: [a for a, b in fixed_intra if b == n] for n in names}
    inter: dict[str, set[str]] = {
        n: ({n} if policy.max_parents >= 1 else set()) for n in names
    }
    cache: dict[tuple[str, frozenset], float] = {}

    def fam_score(child, prevs):
        key = (child, frozenset(prevs))
        if key not in cache:
            ps = intra[child] + [prev_name(p) for p in names if p in prevs]
            cache[key] = bic_family_score(count_stats(cols, child, ps, cards), s)
        return cache[key]

    candidates = sorted((x, y) for x in names for y in names)
    while True:
        best_gain, best_move = 0.0, None
        for x, y in candidates:
            cur = inter[y]
            if x in cur:
                new = cur - {x}
            elif len(cur) < policy.max_parents:
                new = cur | {x}
            else:
                continue
            gain = fam_score(y, new) - fam_score(y, cur)
            if gain > best_gain:
                best_gain, best_move = gain, (x, y)
        if best_move is None:
            break
        x, y = best_move
        inter[y] = inter[y] ^ {x}
    pos = {n: i for i, n in enumerate(names)}
    return sorted(((x, y) for y in names for x in inter[y]), key=lambda e: (pos[e[1]], pos[e[0]]))


# ---------------------------------------------------------------------------
# expert knowledge
# ---------------------------------------------------------------------------


def _extend_cpt(cpt: Cpt, new_parents: Sequence[str], cards: Mapping[str, int]) -> Cpt:
    """Re-express ``cpt`` over ``new_parents`` (a superset); new parents have no effect."""
    old = list(cpt.parents)
    k = cpt.table.shape[1]
    t = cpt.table.reshape([_card_of(cards, p) for p in old] + [k])
    # broadcast over the added parents, then permute into the new order
    for p in new_parents:
        if p not in old:
            t = np.repeat(t[np.newaxis], _card_of(cards, p), axis=0)
            old = [p] + old
    perm = [old.index(p) for p in new_parents] + [len(old)]
    t = np.transpose(t, perm)
    return Cpt(cpt.child, new_parents, t.reshape(-1, k))


def inject_expert_edges(
    spec: NetworkSpec,
    edges: Sequence[tuple[str, str]],
    max_parents: int | None = None,
) -> NetworkSpec:
    """Add inter-slice ``AU@t-1 -> Phone`` edges.

    Existing CPTs are extended so the new parents have no effect; refit the
    parameters afterwards.  ``max_parents`` caps the size of any resulting
    transition family.
    """
    roles = {v.name: v.role for v in spec.variables}
    new = list(spec.inter_edges)
    for src, dst in edges:
        if roles.get(src) != HIDDEN_AU:
            raise ValueError(f"expert edge {src}->{dst}: source must be a hidden AU")
        if roles.get(dst) != HIDDEN_PHONE:
            raise ValueError(f"expert edge {src}->{dst}: target must be the hidden phone")
        if (src, dst) not in new:
            new.append((src, dst))
    if len(new) == len(spec.inter_edges):
        return spec
    out = spec.with_edges(inter_edges=new, keep_cpts=True)
    touched = {dst for _, dst in edges}
    if max_parents is not None:
        for t in touched:
            if len(out.transition_family(t)) > max_parents:
                raise ValueError(
                    f"{t!r} would have {len(out.transition_family(t))} transition parents "
                    f"(cap {max_parents})"
                )
    if spec.transition_cpts:
        cards = spec.cardinalities
        trans = dict(spec.transition_cpts)
        for t in touched:
            trans[t] = _extend_cpt(trans[t], out.transition_family(t), cards)
        out = NetworkSpec(out.variables, out.intra_edges, out.inter_edges, out.cpts, trans)
    return out
