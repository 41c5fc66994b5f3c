"""Command-line entry point: ``dfkd <subcommand> ...``.

Config files are flat ``key = value`` text (``#`` starts a comment). Keys not
in the schema of the subcommand are rejected; command-line flags override
file values. Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import compare as cmp
from . import gradcheck as gc
from . import model as mdl
from .adapter import adapt, bin_to_hz
from .data import CorpusConfig, build_corpus, load_corpus, save_corpus
from .dsp import InputTooShortError, StftConfig, WavFormatError, read_wav, stft
from .loss import FIXED_CROSSOVER, KD_VARIANTS, LossWeights
from .metrics import enhance_spectrum, evaluate
from .train import TrainConfig, TrainingDiverged, distill, train_teacher

log = logging.getLogger("dfkd")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
OUT_ENV = "DFKD_OUT"

_WEIGHT_KEYS = {f.name for f in dataclasses.fields(LossWeights)} - {"kd_variant"}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"weights"}
TRAIN_SCHEMA = sorted(_WEIGHT_KEYS | _TRAIN_KEYS | {"hidden", "student"})
SYNTH_SCHEMA = sorted(f.name for f in dataclasses.fields(CorpusConfig))


class ConfigError(ValueError):
    pass


def read_config(path, schema) -> dict:
    """Parse a flat key-value file into raw strings, rejecting unknown keys."""
    if path is None:
        return {}
    values = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    bad = sorted(set(values) - set(schema))
    if bad:
        raise ConfigError(f"unknown config key(s): {', '.join(bad)}; allowed: {', '.join(schema)}")
    return values


def _coerce(value: str, default):
    if not isinstance(value, str):
        return value
    if isinstance(default, bool):
        if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"expected a boolean, got {value!r}")
        return value.lower() in ("true", "1", "yes")
    if isinstance(default, tuple):
        return tuple(v.strip() for v in value.split(",") if v.strip())
    if default is None:
        return None if value.lower() == "none" else int(value)
    return type(default)(value)


def _build(cls, values: dict):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        if key not in fields:
            continue
        f = fields[key]
        default = f.default if f.default is not dataclasses.MISSING else None
        try:
            kwargs[key] = _coerce(value, default)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def train_config(values: dict, variant: str) -> TrainConfig:
    weights = _build(LossWeights, {**values, "kd_variant": variant})
    cfg = _build(TrainConfig, values)
    return dataclasses.replace(cfg, weights=weights)


def _layer_dims(values: dict, default):
    if "hidden" in values:
        try:
            hidden = [int(v) for v in str(values["hidden"]).split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad value for hidden: {exc}") from exc
        return (mdl.N_BINS, *hidden, mdl.N_BINS)
    return default


def _out_path(arg, default_name) -> Path:
    if arg is not None:
        return Path(arg)
    return Path(os.environ.get(OUT_ENV, "dfkd_out")) / default_name


def _write_json(path, payload) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def _echo(args) -> dict:
    """Command-line arguments, enough to re-run the command."""
    skip = {"func", "verbose"}
    return {"command": args.command, "version": __version__,
            **{k: v for k, v in sorted(vars(args).items()) if k not in skip}}


def _corpus(path):
    corpus = load_corpus(path)
    if not corpus.train or not corpus.test:
        raise ConfigError(f"corpus at {path} needs both train and test clips")
    return corpus


def cmd_synth(args) -> int:
    values = read_config(args.config, SYNTH_SCHEMA)
    if args.seed is not None:
        values["master_seed"] = str(args.seed)
    cfg = _build(CorpusConfig, values)
    out = _out_path(args.out, "corpus")
    save_corpus(build_corpus(cfg), out)
    _write_json(out / "config.json", {"corpus_config": dataclasses.asdict(cfg), "echo": _echo(args)})
    print(f"wrote {cfg.n_train} train and {cfg.n_test} test mixtures to {out}")
    return EXIT_OK


def _train_outputs(args, net, report, out: Path, sample_rate: int) -> None:
    out.parent.mkdir(parents=True, exist_ok=True)
    net.training_meta["echo"] = _echo(args)
    net.training_meta["sample_rate"] = sample_rate
    mdl.save(net, out)
    report.write_csv(_sidecar(out, ".log.csv"))
    payload = report.to_dict()
    payload["echo"] = _echo(args)
    _write_json(_sidecar(out, ".report.json"), payload)
    print(f"checkpoint {out} (best epoch {report.best_epoch}, "
          f"val SI-SNRi {report.best_val_si_snri:.3f} dB)")


def _train_values(args) -> dict:
    values = read_config(args.config, TRAIN_SCHEMA)
    for key in ("seed", "epochs", "lr"):
        if getattr(args, key, None) is not None:
            values[key] = str(getattr(args, key))
    return values


def _epoch_logger(row):
    log.info("epoch %d  l_total %.4f  l_se %.4f  l_kd %.4f  val %s", row["epoch"], row["l_total"],
             row["l_se"], row["l_kd"], row.get("val_si_snri"))


def cmd_train_teacher(args) -> int:
    values = _train_values(args)
    cfg = train_config(values, "none")
    corpus = _corpus(args.corpus)
    net, report = train_teacher(corpus.train, _layer_dims(values, mdl.TEACHER_DIMS), cfg,
                                log=_epoch_logger)
    _train_outputs(args, net, report, _out_path(args.out, "teacher.json"),
                   corpus.train[0].sample_rate)
    return EXIT_OK


def cmd_distill(args) -> int:
    values = _train_values(args)
    cfg = train_config(values, args.variant)
    size = values.get("student", "small")
    if size not in mdl.STUDENT_DIMS:
        raise ConfigError(f"student must be one of {sorted(mdl.STUDENT_DIMS)}")
    teacher = None
    if args.variant != "none":
        if args.teacher is None:
            raise ConfigError(f"--teacher is required for --variant {args.variant}")
        teacher = mdl.load(args.teacher)
    corpus = _corpus(args.corpus)
    net, report = distill(teacher, corpus.train, _layer_dims(values, mdl.STUDENT_DIMS[size]), cfg,
                          log=_epoch_logger)
    _train_outputs(args, net, report, _out_path(args.out, f"student_{args.variant}.json"),
                   corpus.train[0].sample_rate)
    return EXIT_OK


def cmd_eval(args) -> int:
    corpus = _corpus(args.corpus)
    net = None if args.ckpt == "identity" else mdl.load(args.ckpt)
    rate = (net.training_meta.get("sample_rate", 16000) if net is not None else None)
    if rate is not None and any(s.sample_rate != rate for s in corpus.test):
        raise ConfigError(f"checkpoint expects {rate} Hz audio; corpus sample rate differs")
    summary, rows = evaluate(net, corpus.test, variant=args.variant or Path(args.ckpt).stem)
    out = _out_path(args.out, "eval.json")
    _write_json(out, {**summary, "echo": _echo(args)})
    with open(_sidecar(out, ".clips.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows({k: repr(v) if isinstance(v, float) else v for k, v in r.items()}
                         for r in rows)
    print(f"SI-SNRi {summary['si_snri_mean']:.3f} ± {summary['si_snri_std']:.3f} dB, "
          f"LSD {summary['lsd_mean']:.3f} dB over {summary['n_clips']} clips")
    return EXIT_OK


def cmd_adapt_trace(args) -> int:
    wave = read_wav(args.wav)
    cfg = StftConfig()
    noisy = stft(wave, cfg).data
    teacher = mdl.load(args.teacher)
    teacher_out = enhance_spectrum(teacher, noisy)
    if args.variant == "fixed_subband":
        m = np.full(noisy.shape[0], FIXED_CROSSOVER)
    else:
        m = adapt(teacher_out, args.eps, args.per_utterance)
    hz = bin_to_hz(m, cfg.n_fft, wave.sample_rate)
    out = _out_path(args.out, "adapt_trace.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("frame_index", "m", "m_hz"))
        for i, (mi, fi) in enumerate(zip(m, hz)):
            writer.writerow((i, int(mi), repr(float(fi))))
    _write_json(_sidecar(out, ".config.json"), _echo(args))
    print(f"{len(m)} frames, median crossover {float(np.median(hz)):.0f} Hz")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gc.run_suite(args.seed, args.cases, args.corrupt)
    failed = []
    for name, err in results.items():
        ok = err < gc.TOLERANCE
        print(f"{name:22s} max_rel_err={err:.3e}  {'ok' if ok else 'FAIL'}")
        if not ok:
            failed.append(name)
    if args.out is not None:
        _write_json(args.out, {"max_rel_err": results, "tolerance": gc.TOLERANCE,
                               "echo": _echo(args)})
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_compare(args) -> int:
    corpus = _corpus(args.corpus)
    teacher = mdl.load(args.teacher) if args.teacher else None
    result = cmp.run_compare(corpus, args.seeds, teacher, args.teacher_epochs, args.epochs,
                             args.alpha, args.beta, tuple(args.sizes.split(",")))
    out = _out_path(args.out, "compare.md")
    out.parent.mkdir(parents=True, exist_ok=True)
    table = cmp.to_csv(result) if out.suffix == ".csv" else cmp.to_markdown(result)
    out.write_text(table)
    _write_json(_sidecar(out, ".runs.json"), {**result, "echo": _echo(args)})
    print(cmp.to_markdown(result), end="")
    return EXIT_OK


def _version_string() -> str:
    return (f"dfkd {__version__} (python {platform.python_version()}, numpy {np.__version__}, "
            f"{platform.system()} {platform.machine()})")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dfkd", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=_version_string())
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS/OpenMP threads; 1 gives bit-reproducible serial runs")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="build a synthetic noisy-speech corpus")
    s.add_argument("--config")
    s.add_argument("--out", help=f"corpus directory (default ${OUT_ENV}/corpus)")
    s.add_argument("--seed", type=int, help="overrides master_seed")
    s.set_defaults(func=cmd_synth)

    for name, func in (("train-teacher", cmd_train_teacher), ("distill", cmd_distill)):
        t = sub.add_parser(name, help=f"{name.replace('-', ' ')} on a corpus")
        t.add_argument("--corpus", required=True)
        t.add_argument("--config")
        t.add_argument("--out", help="checkpoint path; .log.csv and .report.json are written beside it")
        t.add_argument("--seed", type=int)
        t.add_argument("--epochs", type=int)
        t.add_argument("--lr", type=float)
        if name == "distill":
            t.add_argument("--teacher", help="teacher checkpoint (not needed for --variant none)")
            t.add_argument("--variant", choices=KD_VARIANTS, default="dfkd")
        t.set_defaults(func=func)

    e = sub.add_parser("eval", help="score a checkpoint on the test split")
    e.add_argument("--ckpt", required=True, help="checkpoint path, or 'identity' for no processing")
    e.add_argument("--corpus", required=True)
    e.add_argument("--out", help="summary JSON; per-clip rows go to <out>.clips.csv")
    e.add_argument("--variant", help="label stored in the summary")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("adapt-trace", help="per-frame crossover of a teacher on one WAV")
    a.add_argument("--wav", required=True)
    a.add_argument("--teacher", required=True)
    a.add_argument("--out")
    a.add_argument("--variant", choices=("dfkd", "fixed_subband"), default="dfkd")
    a.add_argument("--eps", type=float, default=1e-8)
    a.add_argument("--per-utterance", action="store_true")
    a.set_defaults(func=cmd_adapt_trace)

    g = sub.add_parser("gradcheck", help="finite-difference check of every loss and the network")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--cases", type=int, default=100)
    g.add_argument("--corrupt", choices=sorted(gc.LOSS_CASES) + ["end_to_end"],
                   help="test hook: perturb one analytic gradient by 1%%")
    g.add_argument("--out", help="optional JSON report")
    g.set_defaults(func=cmd_gradcheck)

    c = sub.add_parser("compare", help="distill every variant over several seeds")
    c.add_argument("--corpus", required=True)
    c.add_argument("--seeds", type=int, default=5)
    c.add_argument("--out", help="table path; .csv for CSV, anything else for Markdown")
    c.add_argument("--teacher", help="reuse a trained teacher instead of training one")
    c.add_argument("--teacher-epochs", type=int, default=30)
    c.add_argument("--epochs", type=int, default=15, help="student epochs")
    c.add_argument("--alpha", type=float, default=0.5)
    c.add_argument("--beta", type=float, default=0.5)
    c.add_argument("--sizes", default="small,tiny")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (ConfigError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, WavFormatError, InputTooShortError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
