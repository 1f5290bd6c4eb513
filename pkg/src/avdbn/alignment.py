"""Phoneme segment tracks, frame-level corpora, and their file formats.

Segment files are CSV lines ``label,start_s,end_s``; ``#`` starts a comment.
Corpus files are JSON lines: a header record followed by one FrameSequence
per line.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from ._io import atomic_write_text
from .data import MISSING

SIL = "SIL"
CORPUS_FORMAT_VERSION = "1"


class CorpusFormatError(ValueError):
    """A malformed corpus or segment file; ``str()`` carries ``path:line``."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            loc = f"line {line}: "
        super().__init__(loc + message)


class PhoneAlphabet:
    """Ordered phone labels with ``SIL`` at index 0."""

    def __init__(self, labels: Iterable[str]):
        labels = tuple(labels)
        if not labels or labels[0] != SIL:
            labels = (SIL,) + tuple(lab for lab in labels if lab != SIL)
        if len(set(labels)) != len(labels):
            raise ValueError("phone labels must be unique")
        self.labels = labels
        self._index = {lab: i for i, lab in enumerate(labels)}

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __eq__(self, other):
        return isinstance(other, PhoneAlphabet) and self.labels == other.labels

    def __repr__(self):
        return f"PhoneAlphabet({list(self.labels)!r})"

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise ValueError(f"unknown phone label {label!r}") from None

    def label(self, state: int) -> str:
        return self.labels[state]


@dataclass(frozen=True)
class SegmentTrack:
    segments: tuple[tuple[str, float, float], ...]
    total_duration: float | None = None

    def __post_init__(self):
        segs = tuple((str(lab), float(s), float(e)) for lab, s, e in self.segments)
        object.__setattr__(self, "segments", segs)
        for i, (lab, s, e) in enumerate(segs):
            if not s < e:
                raise ValueError(f"segment {i} ({lab}): start {s} is not before end {e}")
            if s < 0:
                raise ValueError(f"segment {i} ({lab}): negative start")
            if i:
                plab, ps, pe = segs[i - 1]
                if s < pe:
                    raise ValueError(f"segment {i} ({lab}): overlaps or precedes segment {i - 1}")
                if lab == plab and s == pe:
                    raise ValueError(f"segment {i}: label {lab!r} repeats the previous segment")
        end = segs[-1][2] if segs else 0.0
        if self.total_duration is None:
            object.__setattr__(self, "total_duration", end)
        elif self.total_duration < end:
            raise ValueError("total_duration is shorter than the last segment")


def discretize(track: SegmentTrack, fps: float, frame_count: int, alphabet: PhoneAlphabet) -> np.ndarray:
    """Label each video frame by the segment containing its midpoint.

    Frame ``t`` samples time ``(t + 0.5) / fps``; intervals are half-open
    ``[start, end)``, and gaps or times past ``total_duration`` are SIL.
    """
    if not fps > 0:
        raise ValueError("fps must be positive")
    if frame_count < 1:
        raise ValueError("frame_count must be >= 1")
    states = np.array([alphabet.index(lab) for lab, _, _ in track.segments], dtype=np.int64)
    out = np.full(frame_count, alphabet.index(SIL), dtype=np.int64)
    if not track.segments:
        return out
    starts = np.array([s for _, s, _ in track.segments])
    ends = np.array([e for _, _, e in track.segments])
    mid = (np.arange(frame_count) + 0.5) / fps
    k = np.searchsorted(starts, mid, side="right") - 1
    inside = (k >= 0) & (mid < ends[np.clip(k, 0, None)]) & (mid < track.total_duration)
    out[inside] = states[k[inside]]
    return out


def parse_segments(text: str, alphabet: PhoneAlphabet, path=None, total_duration=None) -> SegmentTrack:
    segs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise CorpusFormatError("expected 'label,start_s,end_s'", path, lineno)
        lab = parts[0]
        try:
            alphabet.index(lab)
            s, e = float(parts[1]), float(parts[2])
        except ValueError as exc:
            raise CorpusFormatError(str(exc), path, lineno) from None
        if not s < e:
            raise CorpusFormatError(f"start {s} must be before end {e}", path, lineno)
        if segs:
            plab, _, pe = segs[-1]
            if s < pe:
                raise CorpusFormatError("segment overlaps or is out of order", path, lineno)
            if plab == lab and s == pe:
                raise CorpusFormatError(f"label {lab!r} repeats the previous segment", path, lineno)
        segs.append((lab, s, e))
    try:
        return SegmentTrack(tuple(segs), total_duration)
    except ValueError as exc:
        raise CorpusFormatError(str(exc), path) from None


def read_segments(path, alphabet: PhoneAlphabet, total_duration: float | None = None) -> SegmentTrack:
    with open(path) as fh:
        return parse_segments(fh.read(), alphabet, path, total_duration)


# ---------------------------------------------------------------------------
# frame sequences
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class FrameSequence:
    """One recording, stored column-wise; ``-1`` marks a missing measurement."""

    subject_id: str
    word: str
    fps: float
    au_truth: dict[str, np.ndarray]
    phone_truth: np.ndarray
    au_meas: dict[str, np.ndarray]
    phone_meas: np.ndarray

    def __post_init__(self):
        self.au_truth = {k: np.asarray(v, dtype=np.int64) for k, v in self.au_truth.items()}
        self.au_meas = {k: np.asarray(v, dtype=np.int64) for k, v in self.au_meas.items()}
        self.phone_truth = np.asarray(self.phone_truth, dtype=np.int64)
        self.phone_meas = np.asarray(self.phone_meas, dtype=np.int64)
        if list(self.au_truth) != list(self.au_meas):
            raise ValueError("au_truth and au_meas must have the same AU keys")
        n = len(self.phone_truth)
        for arr in [*self.au_truth.values(), *self.au_meas.values(), self.phone_meas]:
            if len(arr) != n:
                raise ValueError("all frame columns must have the same length")

    @property
    def aus(self) -> list[str]:
        return list(self.au_truth)

    @property
    def n_frames(self) -> int:
        return len(self.phone_truth)

    def __len__(self):
        return self.n_frames

    def frames(self) -> Iterator[dict]:
        """Per-frame records (``None`` for missing measurements)."""
        for t in range(self.n_frames):
            yield {
                "au_truth": {a: int(v[t]) for a, v in self.au_truth.items()},
                "phone_truth": int(self.phone_truth[t]),
                "au_meas": {a: _opt(v[t]) for a, v in self.au_meas.items()},
                "phone_meas": _opt(self.phone_meas[t]),
            }

    def __eq__(self, other):
        if not isinstance(other, FrameSequence):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and self.word == other.word
            and self.fps == other.fps
            and list(self.au_truth) == list(other.au_truth)
            and all(np.array_equal(self.au_truth[a], other.au_truth[a]) for a in self.au_truth)
            and all(np.array_equal(self.au_meas[a], other.au_meas[a]) for a in self.au_meas)
            and np.array_equal(self.phone_truth, other.phone_truth)
            and np.array_equal(self.phone_meas, other.phone_meas)
        )

    __hash__ = None


def _opt(v) -> int | None:
    v = int(v)
    return None if v == MISSING else v


@dataclass
class Corpus:
    """FrameSequences sharing one AU list, phone alphabet and frame rate."""

    sequences: list[FrameSequence] = field(default_factory=list)
    aus: tuple[str, ...] = ()
    alphabet: PhoneAlphabet | None = None
    fps: float = 60.0
    meta: dict = field(default_factory=dict)

    def __iter__(self):
        return iter(self.sequences)

    def __len__(self):
        return len(self.sequences)

    def __getitem__(self, i):
        return self.sequences[i]

    @property
    def subjects(self) -> list[str]:
        seen: list[str] = []
        for s in self.sequences:
            if s.subject_id not in seen:
                seen.append(s.subject_id)
        return seen

    def subset(self, sequences: Sequence[FrameSequence]) -> "Corpus":
        return Corpus(list(sequences), self.aus, self.alphabet, self.fps, dict(self.meta))


def dumps_corpus(corpus: Corpus) -> str:
    alphabet = corpus.alphabet
    header = {
        "kind": "header",
        "format_version": CORPUS_FORMAT_VERSION,
        "fps": float(corpus.fps),
        "aus": list(corpus.aus),
        "alphabet": list(alphabet.labels) if alphabet else [],
    }
    header.update(corpus.meta)
    lines = [json.dumps(header, separators=(",", ":"))]
    for s in corpus.sequences:
        if list(s.aus) != list(corpus.aus):
            raise ValueError(f"sequence {s.subject_id}/{s.word}: AU keys differ from the corpus")
        rec = {
            "subject_id": s.subject_id,
            "word": s.word,
            "fps": float(s.fps),
            "au_truth": {a: s.au_truth[a].tolist() for a in corpus.aus},
            "phone_truth": [alphabet.label(p) for p in s.phone_truth],
            "au_meas": {a: [_opt(v) for v in s.au_meas[a]] for a in corpus.aus},
            "phone_meas": [None if p == MISSING else alphabet.label(p) for p in s.phone_meas],
        }
        lines.append(json.dumps(rec, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def write_corpus(corpus: Corpus, path) -> None:
    atomic_write_text(path, dumps_corpus(corpus))


def _binary(values, where, path, lineno, allow_missing):
    out = np.empty(len(values), dtype=np.int64)
    for i, v in enumerate(values):
        if v is None and allow_missing:
            out[i] = MISSING
        elif v in (0, 1) and not isinstance(v, bool) and isinstance(v, int):
            out[i] = v
        else:
            raise CorpusFormatError(f"{where}: frame {i} has value {v!r}, expected 0 or 1", path, lineno)
    return out


def _phones(values, alphabet, where, path, lineno, allow_missing):
    out = np.empty(len(values), dtype=np.int64)
    for i, v in enumerate(values):
        if v is None and allow_missing:
            out[i] = MISSING
            continue
        try:
            out[i] = alphabet.index(v)
        except (ValueError, TypeError):
            raise CorpusFormatError(f"{where}: unknown phone label {v!r} at frame {i}", path, lineno) from None
    return out


def loads_corpus(text: str, path=None) -> Corpus:
    lines = text.splitlines()
    if not any(line.strip() for line in lines):
        return Corpus()
    corpus = None
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"invalid JSON ({exc.msg})", path, lineno) from None
        if not isinstance(rec, dict):
            raise CorpusFormatError("record is not a JSON object", path, lineno)
        if corpus is None:
            if rec.get("kind") != "header":
                raise CorpusFormatError("first record must be the header", path, lineno)
            if str(rec.get("format_version")) != CORPUS_FORMAT_VERSION:
                raise CorpusFormatError(
                    f"unsupported format_version {rec.get('format_version')!r}", path, lineno
                )
            try:
                alphabet = PhoneAlphabet(rec["alphabet"])
                meta = {k: v for k, v in rec.items() if k not in ("kind", "format_version", "fps", "aus", "alphabet")}
                corpus = Corpus([], tuple(rec["aus"]), alphabet, float(rec["fps"]), meta)
            except (KeyError, TypeError, ValueError) as exc:
                raise CorpusFormatError(f"bad header: {exc}", path, lineno) from None
            continue
        try:
            au_truth_raw = rec["au_truth"]
            au_meas_raw = rec["au_meas"]
            if set(au_truth_raw) != set(corpus.aus) or set(au_meas_raw) != set(corpus.aus):
                raise CorpusFormatError(
                    f"AU keys {sorted(au_truth_raw)} do not match header {list(corpus.aus)}", path, lineno
                )
            seq = FrameSequence(
                subject_id=str(rec["subject_id"]),
                word=str(rec["word"]),
                fps=float(rec.get("fps", corpus.fps)),
                au_truth={a: _binary(au_truth_raw[a], f"au_truth[{a}]", path, lineno, False) for a in corpus.aus},
                phone_truth=_phones(rec["phone_truth"], corpus.alphabet, "phone_truth", path, lineno, False),
                au_meas={a: _binary(au_meas_raw[a], f"au_meas[{a}]", path, lineno, True) for a in corpus.aus},
                phone_meas=_phones(rec["phone_meas"], corpus.alphabet, "phone_meas", path, lineno, True),
            )
        except CorpusFormatError:
            raise
        except KeyError as exc:
            raise CorpusFormatError(f"missing field {exc.args[0]!r}", path, lineno) from None
        except (TypeError, ValueError) as exc:
            raise CorpusFormatError(str(exc), path, lineno) from None
        corpus.sequences.append(seq)
    return corpus


def read_corpus(path) -> Corpus:
    with open(path) as fh:
        return loads_corpus(fh.read(), path)
