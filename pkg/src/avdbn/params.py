"""Maximum-likelihood CPT fitting with optional additive smoothing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import as_columns
from .graph import Cpt, NetworkSpec
from .structure import SufficientStats, count_stats


@dataclass(frozen=True)
class SmoothingPolicy:
    alpha: float = 1.0

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha!r}")


def fit_cpt(stats: SufficientStats, smoothing: SmoothingPolicy = SmoothingPolicy()) -> Cpt:
    """(N_ijk + alpha) / (N_ij + alpha K); empty unsmoothed rows become uniform."""
    if smoothing.alpha < 0:
        raise ValueError("alpha must be >= 0")
    n = stats.counts.astype(float) + smoothing.alpha
    tot = n.sum(axis=1, keepdims=True)
    k = stats.cardinality
    with np.errstate(invalid="ignore", divide="ignore"):
        table = np.where(tot > 0, n / np.where(tot > 0, tot, 1.0), 1.0 / k)
    return Cpt(stats.child, stats.parents, table)


def fit_all(
    structure: NetworkSpec,
    initial_data,
    transition_data=None,
    smoothing: SmoothingPolicy = SmoothingPolicy(),
) -> NetworkSpec:
    """Fit every family of ``structure``.

    ``initial_data`` feeds the initial-slice CPTs; ``transition_data``
    (consecutive-frame pairs) feeds the transition CPTs.  Without
    ``transition_data`` the result is a static network, which is only
    allowed when the structure has no inter-slice edges.  Records with a
    missing measurement are skipped for the families they touch.
    """
    if transition_data is None and structure.inter_edges:
        raise ValueError("structure has inter-slice edges but no transition data was given")
    cards = structure.cardinalities
    init_cols = as_columns(initial_data)
    cpts = {}
    for name in structure.names:
        fam = structure.family(name)
        _require(init_cols, (name,) + fam)
        cpts[name] = fit_cpt(count_stats(init_cols, name, fam, cards, skip_missing=True), smoothing)
    trans = None
    if transition_data is not None:
        tcols = as_columns(transition_data)
        trans = {}
        for name in structure.names:
            fam = structure.transition_family(name)
            _require(tcols, (name,) + fam)
            trans[name] = fit_cpt(count_stats(tcols, name, fam, cards, skip_missing=True), smoothing)
    return NetworkSpec(structure.variables, structure.intra_edges, structure.inter_edges, cpts, trans)


def _require(cols, names):
    for n in names:
        if n not in cols:
            raise ValueError(f"data is missing variable {n!r}")
