"""Command-line pipeline: simulate, learn, fit, infer, evaluate.

Every subcommand reads files, writes its outputs atomically and exits with
0 on success, 1 on data or model errors and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from typing import Sequence

import numpy as np

from ._io import atomic_write_text
from .alignment import CorpusFormatError, read_corpus, write_corpus
from .data import PHONE, frame_records, initial_records, transition_records
from .evaluation import METHODS, MethodConfig, infer_sequences, run_loso
from .graph import NetworkSpec, dumps_model, load_model, validate
from .inference import DecodePolicy
from .params import SmoothingPolicy, fit_all
from .simulate import av_variables, empirical_stats, load_sim_config, measurement_edges, sample_corpus
from .structure import OrderingPolicy, inject_expert_edges, k2_search, transition_search

MODE_NAMES = {"filtered": "filtered-marginal", "smoothed": "smoothed-marginal", "joint-map": "joint-map"}


class DataError(Exception):
    """Bad input data or model; maps to exit status 1."""


# ---------------------------------------------------------------------------
# argument types
# ---------------------------------------------------------------------------


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def _threshold(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"must be in (0, 1), got {text}")
    return v


def _name_list(text):
    items = [x.strip() for x in text.split(",") if x.strip()]
    if not items:
        raise argparse.ArgumentTypeError("empty list")
    return items


def _method_list(text):
    items = _name_list(text)
    for m in items:
        if m not in METHODS:
            raise argparse.ArgumentTypeError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    if len(set(items)) != len(items):
        raise argparse.ArgumentTypeError("methods listed more than once")
    return items


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _load_corpus(path):
    try:
        return read_corpus(path)
    except CorpusFormatError as exc:
        raise DataError(str(exc)) from None


def _load_model(path, need_cpts=False):
    try:
        spec = load_model(path)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    problems = validate(spec, require_cpts=need_cpts)
    if problems:
        raise DataError(f"{path}: invalid model: " + "; ".join(problems))
    return spec


def _hidden(spec: NetworkSpec):
    return [v for v in spec.variables if v.is_hidden]


def _has_phone(spec: NetworkSpec) -> bool:
    return PHONE in spec.names


def _write_model(spec: NetworkSpec, path):
    atomic_write_text(path, dumps_model(spec))


def cmd_simulate(args):
    try:
        config = load_sim_config(args.config, seed=args.seed)
        if args.fps is not None:
            config = dataclasses.replace(config, fps=args.fps)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{args.config}: {exc}") from None
    write_corpus(sample_corpus(config), args.out)


def cmd_learn_structure(args):
    corpus = _load_corpus(args.corpus)
    with_phone = not args.no_phone
    if with_phone and corpus.alphabet is None:
        raise DataError(f"{args.corpus}: corpus has no phone alphabet; use --no-phone")
    variables = av_variables(corpus.aus, len(corpus.alphabet) if with_phone else None)
    try:
        policy = OrderingPolicy(ordering=tuple(args.ordering) if args.ordering else None, max_parents=args.max_parents)
        edges = k2_search(frame_records(corpus, corpus.aus, with_phone), [v for v in variables if v.is_hidden], policy)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    spec = NetworkSpec(tuple(variables), tuple(edges) + tuple(measurement_edges(variables)), ())
    _write_model(spec, args.out)


def cmd_learn_transitions(args):
    corpus = _load_corpus(args.corpus)
    spec = _load_model(args.model)
    with_phone = _has_phone(spec)
    hidden = _hidden(spec)
    names = {v.name for v in hidden}
    intra = [e for e in spec.intra_edges if e[0] in names and e[1] in names]
    try:
        edges = transition_search(
            transition_records(corpus, corpus.aus, with_phone), hidden, intra, OrderingPolicy(max_parents=args.max_parents)
        )
    except ValueError as exc:
        raise DataError(str(exc)) from None
    _write_model(spec.with_edges(inter_edges=tuple(edges)), args.out)


def _parse_edges(items):
    edges = []
    for item in items:
        if "->" in item:
            src, dst = (x.strip() for x in item.split("->", 1))
        else:
            src, dst = item, PHONE
        edges.append((src, dst))
    return edges


def cmd_inject_expert(args):
    spec = _load_model(args.model)
    try:
        out = inject_expert_edges(spec, _parse_edges(args.edges), max_parents=args.max_parents)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    _write_model(out, args.out)


def cmd_fit_params(args):
    corpus = _load_corpus(args.corpus)
    spec = _load_model(args.model)
    with_phone = _has_phone(spec)
    smoothing = SmoothingPolicy(args.alpha)
    try:
        frames = frame_records(corpus, corpus.aus, with_phone)
        if not spec.inter_edges:
            fitted = fit_all(spec, frames, None, smoothing)
        else:
            first = frames if args.prior_from == "all" else initial_records(corpus, corpus.aus, with_phone)
            fitted = fit_all(spec, first, transition_records(corpus, corpus.aus, with_phone), smoothing)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    _write_model(fitted, args.out)


def cmd_infer(args):
    corpus = _load_corpus(args.corpus)
    spec = _load_model(args.model, need_cpts=True)
    missing = [a for a in spec.names if spec.variable(a).is_hidden and a != PHONE and a not in corpus.aus]
    if missing:
        raise DataError(f"{args.corpus}: corpus lacks AUs required by the model: {', '.join(missing)}")
    aus = [v.name for v in spec.variables if v.is_hidden and v.name != PHONE]
    policy = DecodePolicy(MODE_NAMES[args.mode], args.threshold)
    try:
        results = infer_sequences(spec, corpus.sequences, aus, policy, jobs=args.jobs)
    except ValueError as exc:
        raise DataError(f"{args.corpus}: {exc}") from None
    lines = []
    for seq, (_, labels, marg) in zip(corpus.sequences, results):
        for t in range(seq.n_frames):
            rec = {
                "subject_id": seq.subject_id,
                "word": seq.word,
                "frame": t,
                "kind": "smoothed" if args.mode == "smoothed" else "filtered",
                "marginals": {h: m[t].tolist() for h, m in marg.items()},
                "aus": {a: int(labels[a][t]) for a in aus},
            }
            if PHONE in marg:
                state = int(np.argmax(marg[PHONE][t]))
                rec["phone"] = corpus.alphabet.label(state) if corpus.alphabet else state
            lines.append(json.dumps(rec, separators=(",", ":")))
    atomic_write_text(args.out, "".join(x + "\n" for x in lines))


def cmd_evaluate(args):
    corpus = _load_corpus(args.corpus)
    policy = DecodePolicy(MODE_NAMES[args.mode], args.threshold)
    methods = [
        MethodConfig(
            m,
            decode=policy,
            alpha=args.alpha,
            max_parents=args.max_parents,
            inter_max_parents=args.max_parents,
            expert_aus=tuple(args.expert_aus) if args.expert_aus else None,
            prior_from=args.prior_from,
        )
        for m in args.methods
    ]
    try:
        report = run_loso(corpus, methods, jobs=args.jobs, pooling=args.pooling)
    except ValueError as exc:
        raise DataError(f"{args.corpus}: {exc}") from None
    report.write(csv_path=args.out, json_path=args.json, roc_dir=args.roc_dir)


def cmd_stats(args):
    corpus = _load_corpus(args.corpus)
    st = empirical_stats(corpus)
    d = {
        "sequences": len(corpus),
        "subjects": corpus.subjects,
        "total_frames": st.total_frames,
        "au_counts": st.au_counts,
        "phone_occupancy": st.phone_occupancy,
    }
    text = json.dumps(d, indent=1) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)


def cmd_validate_model(args):
    try:
        spec = load_model(args.model)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    problems = validate(spec, require_cpts=not args.structure_only)
    if problems:
        raise DataError(f"{args.model}: " + "; ".join(problems))
    print(f"{args.model}: ok")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="avdbn", description=__doc__, formatter_class=fmt, allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_, formatter_class=fmt, allow_abbrev=False)
        p.set_defaults(func=func)
        return p

    p = add("simulate", cmd_simulate, "sample a synthetic corpus from a simulation config")
    p.add_argument("--config", required=True, help="simulation config (JSON)")
    p.add_argument("--out", required=True, help="output corpus (JSONL)")
    p.add_argument("--seed", required=True, type=int, help="random seed; the only source of randomness")
    p.add_argument("--fps", type=_positive_float, default=None,
                   help="frame rate recorded in the corpus (None: the config's value, 60 if unset)")

    p = add("learn-structure", cmd_learn_structure, "learn the intra-slice structure with K2")
    p.add_argument("--corpus", required=True, help="training corpus (JSONL)")
    p.add_argument("--out", required=True, help="output structure model (JSON)")
    p.add_argument("--ordering", type=_name_list, default=None,
                   help="comma-separated node ordering (default: Phone, then AUs by frequency)")
    p.add_argument("--max-parents", type=_nonneg_int, default=3, help="parent cap per node")
    p.add_argument("--no-phone", action="store_true", help="visual-only network without a Phone node")

    p = add("learn-transitions", cmd_learn_transitions, "learn inter-slice edges by BIC hill climbing")
    p.add_argument("--corpus", required=True, help="training corpus (JSONL)")
    p.add_argument("--model", required=True, help="structure model with intra-slice edges (JSON)")
    p.add_argument("--out", required=True, help="output structure model (JSON)")
    p.add_argument("--max-parents", type=_nonneg_int, default=3, help="previous-slice parent cap per node")

    p = add("inject-expert", cmd_inject_expert, "add expert AU(t-1) -> Phone(t) links")
    p.add_argument("--model", required=True, help="structure model (JSON)")
    p.add_argument("--out", required=True, help="output structure model (JSON)")
    p.add_argument("--edges", required=True, type=_name_list,
                   help="comma-separated sources (e.g. AU25,AU26) or SRC->Phone pairs")
    p.add_argument("--max-parents", type=_nonneg_int, default=None, help="total transition-parent cap for the target")

    p = add("fit-params", cmd_fit_params, "fit CPTs by smoothed maximum likelihood")
    p.add_argument("--model", required=True, help="structure model (JSON)")
    p.add_argument("--corpus", required=True, help="training corpus (JSONL)")
    p.add_argument("--out", required=True, help="output fitted model (JSON)")
    p.add_argument("--alpha", type=_nonneg_float, default=1.0, help="additive smoothing pseudo-count")
    p.add_argument("--prior-from", choices=("first", "all"), default="first",
                   help="frames used for initial-slice CPTs of a DBN")

    p = add("infer", cmd_infer, "exact filtering or smoothing; one belief record per frame")
    p.add_argument("--model", required=True, help="fitted model (JSON)")
    p.add_argument("--corpus", required=True, help="corpus with measurements (JSONL)")
    p.add_argument("--out", required=True, help="output beliefs (JSONL)")
    p.add_argument("--mode", choices=tuple(MODE_NAMES), default="filtered", help="belief / decode mode")
    p.add_argument("--threshold", type=_threshold, default=0.5, help="AU activation threshold")
    p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes")

    p = add("evaluate", cmd_evaluate, "leave-one-subject-out evaluation of the method ladder")
    p.add_argument("--corpus", required=True, help="corpus (JSONL)")
    p.add_argument("--out", required=True, help="metrics report (CSV)")
    p.add_argument("--methods", type=_method_list, default=",".join(METHODS), help="comma-separated methods")
    p.add_argument("--json", default=None, help="also write the report as JSON")
    p.add_argument("--roc-dir", default=None, help="directory for per method/AU ROC CSVs")
    p.add_argument("--mode", choices=tuple(MODE_NAMES), default="filtered", help="decode mode")
    p.add_argument("--threshold", type=_threshold, default=0.5, help="AU activation threshold")
    p.add_argument("--alpha", type=_nonneg_float, default=1.0, help="additive smoothing pseudo-count")
    p.add_argument("--max-parents", type=_nonneg_int, default=3, help="parent cap for K2 and transition search")
    p.add_argument("--expert-aus", type=_name_list, default=None,
                   help="AUs linked to the next phone by dbn-expert (default: AU24,AU25,AU26 when present, else all)")
    p.add_argument("--prior-from", choices=("first", "all"), default="first",
                   help="frames used for initial-slice CPTs")
    p.add_argument("--pooling", choices=("micro", "fold-mean"), default="micro", help="fold pooling of metrics")
    p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes (folds)")

    p = add("stats", cmd_stats, "corpus statistics: AU counts and phone occupancy")
    p.add_argument("--corpus", required=True, help="corpus (JSONL)")
    p.add_argument("--out", default=None, help="output JSON (default: stdout)")

    p = add("validate-model", cmd_validate_model, "check a model file")
    p.add_argument("--model", required=True, help="model (JSON)")
    p.add_argument("--structure-only", action="store_true", help="do not require CPTs")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help exits 0, usage errors 2
        return int(exc.code or 0)
    try:
        args.func(args)
    except DataError as exc:
        print(f"avdbn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"avdbn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
