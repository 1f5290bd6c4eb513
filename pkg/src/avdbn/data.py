"""Column-oriented record sets.

Learning code consumes a *dataset*: a mapping from variable name to an
integer array, one entry per record.  ``-1`` marks a missing value
(measurement channels only).  Lists of per-record dicts are accepted too and
converted with :func:`as_columns`.

Consecutive-frame pair records carry both slices: the current slice under the
plain names and the previous slice under ``prev_name(name)``.
"""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence

import numpy as np

from .graph import prev_name

MISSING = -1
PHONE = "Phone"
MEAS_PREFIX = "O_"


def meas_name(name: str) -> str:
    """Name of the measurement node attached to hidden variable ``name``."""
    return MEAS_PREFIX + name


def as_columns(data, names: Iterable[str] | None = None) -> dict[str, np.ndarray]:
    """Normalise ``data`` to ``{name: int64 array}``.

    ``data`` is either a mapping of columns or a sequence of record mappings.
    """
    if isinstance(data, Mapping):
        cols = {k: np.asarray(v, dtype=np.int64).ravel() for k, v in data.items()}
    else:
        records = list(data)
        keys: list[str] = []
        for r in records:
            for k in r:
                if k not in keys:
                    keys.append(k)
        cols = {}
        for k in keys:
            try:
                cols[k] = np.array([r[k] for r in records], dtype=np.int64)
            except KeyError:
                raise ValueError(f"incomplete record: variable {k!r} missing in some records")
    if names is not None:
        names = list(names)
        for n in names:
            if n not in cols:
                raise ValueError(f"data has no column for variable {n!r}")
        cols = {n: cols[n] for n in names}
    lengths = {len(v) for v in cols.values()}
    if len(lengths) > 1:
        raise ValueError("columns have different lengths")
    return cols


def n_records(cols: Mapping[str, np.ndarray]) -> int:
    for v in cols.values():
        return len(v)
    return 0


def sequence_columns(seq, aus: Sequence[str], with_phone: bool = True) -> dict[str, np.ndarray]:
    """Hidden truths and measurements of one FrameSequence as columns."""
    cols = {}
    for a in aus:
        cols[a] = np.asarray(seq.au_truth[a], dtype=np.int64)
        cols[meas_name(a)] = np.asarray(seq.au_meas[a], dtype=np.int64)
    if with_phone:
        cols[PHONE] = np.asarray(seq.phone_truth, dtype=np.int64)
        cols[meas_name(PHONE)] = np.asarray(seq.phone_meas, dtype=np.int64)
    return cols


def _concat(parts: list[dict[str, np.ndarray]], names: Sequence[str]) -> dict[str, np.ndarray]:
    if not parts:
        return {n: np.zeros(0, dtype=np.int64) for n in names}
    return {n: np.concatenate([p[n] for p in parts]) for n in names}


def frame_records(sequences, aus: Sequence[str], with_phone: bool = True) -> dict[str, np.ndarray]:
    """Every frame of every sequence as one record."""
    parts = [sequence_columns(s, aus, with_phone) for s in sequences]
    names = list(sequence_columns_names(aus, with_phone))
    return _concat(parts, names)


def initial_records(sequences, aus: Sequence[str], with_phone: bool = True) -> dict[str, np.ndarray]:
    """The first frame of every sequence."""
    parts = []
    for s in sequences:
        c = sequence_columns(s, aus, with_phone)
        if n_records(c):
            parts.append({k: v[:1] for k, v in c.items()})
    return _concat(parts, list(sequence_columns_names(aus, with_phone)))


def transition_records(sequences, aus: Sequence[str], with_phone: bool = True) -> dict[str, np.ndarray]:
    """Consecutive-frame pairs: current slice plus ``name@t-1`` columns."""
    names = list(sequence_columns_names(aus, with_phone))
    parts = []
    for s in sequences:
        c = sequence_columns(s, aus, with_phone)
        if n_records(c) < 2:
            continue
        rec = {k: v[1:] for k, v in c.items()}
        rec.update({prev_name(k): v[:-1] for k, v in c.items()})
        parts.append(rec)
    return _concat(parts, names + [prev_name(n) for n in names])


def sequence_columns_names(aus: Sequence[str], with_phone: bool = True):
    for a in aus:
        yield a
        yield meas_name(a)
    if with_phone:
        yield PHONE
        yield meas_name(PHONE)
