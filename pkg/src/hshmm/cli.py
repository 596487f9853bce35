"""``hshmm`` command line.

Subcommands::

    hshmm train-hyper   --out RUN [--config C] src0=src0.tsv src1=src1.tsv
    hshmm discover      --out RUN --checkpoint RUN/model.hshm target.tsv
    hshmm decode        --out RUN --checkpoint RUN/model.hshm target.tsv
    hshmm eval          REF.ali HYP.ali
    hshmm synth         --out DIR
    hshmm export-embeddings --checkpoint RUN/model.hshm [--out FILE]

Every run directory receives the effective configuration as ``config.json``.
Any :class:`RunConfig` field can be overridden with a ``--field-name`` flag.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .errors import DataError, NumericalError
from .features import load_manifest_data, read_alignments, read_manifest, write_alignments
from .metrics import evaluate
from .synth import SynthSpec, generate_corpus, write_corpus
from .training import Utterance, decode_corpus, train_supervised, train_unsupervised

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

logger = logging.getLogger("hshmm")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    g = p.add_argument_group("configuration overrides")
    for f in dataclasses.fields(RunConfig):
        default = RunConfig.__dataclass_fields__[f.name].default
        if isinstance(default, bool):
            g.add_argument(_flag(f.name), dest=f"cfg_{f.name}", default=None,
                           action=argparse.BooleanOptionalAction)
        else:
            kind = int if f.type in ("int", int) else float
            g.add_argument(_flag(f.name), dest=f"cfg_{f.name}", type=kind, default=None,
                           metavar=kind.__name__.upper())


def _config(args, base: RunConfig | None = None) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else (base or RunConfig())
    overrides = {k[4:]: v for k, v in vars(args).items()
                 if k.startswith("cfg_") and v is not None}
    return cfg.replace(**overrides) if overrides else cfg


def _run_dir(path: str, cfg: RunConfig) -> str:
    os.makedirs(path, exist_ok=True)
    cfg.save(os.path.join(path, "config.json"))
    return path


def _jsonl_logger(path: str):
    fh = open(path, "w", encoding="utf-8")

    def log(rec):
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
        fh.flush()

    return fh, log


def _utterances(manifest_path: str, need_tokens: bool = False) -> list[Utterance]:
    feats, trans = load_manifest_data(read_manifest(manifest_path))
    if need_tokens:
        missing = [u for u in feats if u not in trans]
        if missing:
            raise DataError(f"{manifest_path}: no transcript for {missing[0]!r}")
    return [Utterance(uid, fm.frames, trans.get(uid)) for uid, fm in feats.items()]


def _language_arg(spec: str):
    name, sep, path = spec.partition("=")
    if not sep:
        path = spec
        name = os.path.splitext(os.path.basename(spec))[0]
    return name, path


# ---------------------------------------------------------------------------
# Commands.

def cmd_train_hyper(args) -> int:
    cfg = _config(args)
    corpora = {}
    for spec in args.manifests:
        name, path = _language_arg(spec)
        if name in corpora:
            raise DataError(f"language {name!r} given twice")
        corpora[name] = _utterances(path, need_tokens=True)
    resume = load_checkpoint(args.resume) if args.resume else None
    out = _run_dir(args.out, cfg)
    fh, log = _jsonl_logger(os.path.join(out, "train.jsonl"))
    with fh:
        ck = train_supervised(corpora, cfg, checkpoint=resume, log=log)
    save_checkpoint(ck, os.path.join(out, "model.hshm"))
    return EXIT_OK


def cmd_discover(args) -> int:
    base = load_checkpoint(args.checkpoint)
    cfg = _config(args, base.config)
    utts = _utterances(args.manifest)
    out = _run_dir(args.out, cfg)
    fh, log = _jsonl_logger(os.path.join(out, "train.jsonl"))
    with fh:
        ck = train_unsupervised(utts, base, cfg, target=args.target, log=log)
    save_checkpoint(ck, os.path.join(out, "model.hshm"))
    return EXIT_OK


def cmd_decode(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    cfg = _config(args, ck.config)
    utts = _utterances(args.manifest)
    out = _run_dir(args.out, cfg)
    hyp = decode_corpus(ck, utts, args.language, cfg)
    write_alignments({uid: t.labelled() for uid, t in hyp.items()},
                     os.path.join(out, "units.ali"))
    return EXIT_OK


def cmd_eval(args) -> int:
    ref = read_alignments(args.ref)
    hyp = read_alignments(args.hyp, known_ids=ref)
    res = evaluate(ref, hyp, args.frame_shift_ms, args.tolerance_ms)
    print(json.dumps(res, sort_keys=True))
    return EXIT_OK


def cmd_synth(args) -> int:
    fields = {f.name for f in dataclasses.fields(SynthSpec)}
    overrides = {k: v for k, v in vars(args).items() if k in fields and v is not None}
    spec = SynthSpec(**overrides)
    write_corpus(generate_corpus(spec), args.out)
    # A configuration whose dimensions match the generator.
    RunConfig(feature_dim=spec.feature_dim, embedding_dim=spec.embedding_dim,
              n_hyper=spec.n_hyper, n_states=spec.n_states, n_components=spec.n_components,
              seed=spec.seed).save(os.path.join(args.out, "config.json"))
    return EXIT_OK


def cmd_export_embeddings(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    rows = []
    for name, lp in ck.languages.items():
        vals = list(lp.alpha.mean) + list(lp.alpha.logvar)
        rows.append("\t".join([name] + [repr(float(v)) for v in vals]))
    text = "\n".join(rows) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hshmm", description="Hierarchical subspace HMM unit discovery.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train-hyper", help="stage 1: fit the hyper-subspace on source languages")
    p.add_argument("manifests", nargs="+", metavar="[LANG=]MANIFEST")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--resume", help="stage-1 checkpoint to continue from")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_hyper)

    p = sub.add_parser("discover", help="stage 2: discover units on an untranscribed corpus")
    p.add_argument("manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--target", default="target", help="name of the target language")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("decode", help="Viterbi unit transcriptions")
    p.add_argument("manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--language", default=None, help="defaults to the checkpoint's target")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="NMI and boundary scores as JSON")
    p.add_argument("ref")
    p.add_argument("hyp")
    p.add_argument("--frame-shift-ms", type=float, default=10.0)
    p.add_argument("--tolerance-ms", type=float, default=20.0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a seeded synthetic corpus")
    p.add_argument("--out", required=True)
    for f in dataclasses.fields(SynthSpec):
        kind = type(f.default)
        if kind is bool:
            p.add_argument(_flag(f.name), dest=f.name, default=None,
                           action=argparse.BooleanOptionalAction)
        else:
            p.add_argument(_flag(f.name), dest=f.name, type=kind, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("export-embeddings", help="language embeddings as TSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None, help="output file (default stdout)")
    p.set_defaults(func=cmd_export_embeddings)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as err:
        print(f"hshmm: numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as err:
        print(f"hshmm: numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as err:
        print(f"hshmm: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
