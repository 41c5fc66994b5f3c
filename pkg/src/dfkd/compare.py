"""Distillation-variant comparison: one teacher, every KD variant, K seeds."""

from __future__ import annotations

import csv
import io
import logging

import numpy as np

from . import model as mdl
from .loss import LossWeights
from .metrics import evaluate
from .train import TrainConfig, distill, train_teacher

log = logging.getLogger(__name__)

# table label -> kd_variant; "scratch" is distillation with the teacher switched off
VARIANTS = {
    "scratch": "none",
    "l1": "l1",
    "l2": "l2",
    "kl": "kl",
    "fixed_subband": "fixed_subband",
    "dfkd": "dfkd",
}
SIZES = ("small", "tiny")
TABLE_FIELDS = ("variant", "student", "params", "n_seeds", "si_snri_mean", "si_snri_std", "per_seed")


def run_compare(corpus, seeds: int = 5, teacher=None, teacher_epochs: int = 30,
                student_epochs: int = 15, alpha: float = 0.5, beta: float = 0.5,
                sizes=SIZES, variants=tuple(VARIANTS)):
    """Train (or reuse) a teacher, then distill every variant for ``seeds`` seeds.

    Returns a dict with the teacher summary, one record per (variant, size)
    and the raw per-seed test SI-SNRi values.
    """
    if seeds < 1:
        raise ValueError("seeds must be >= 1")
    if teacher is None:
        teacher, _ = train_teacher(corpus.train, mdl.TEACHER_DIMS, TrainConfig(epochs=teacher_epochs))
    teacher_summary, _ = evaluate(teacher, corpus.test, variant="teacher")
    log.info("teacher test SI-SNRi %.3f dB", teacher_summary["si_snri_mean"])

    rows = []
    for size in sizes:
        dims = mdl.STUDENT_DIMS[size]
        for label in variants:
            per_seed = []
            for seed in range(seeds):
                weights = LossWeights(alpha=alpha, beta=beta, kd_variant=VARIANTS[label])
                cfg = TrainConfig(weights=weights, epochs=student_epochs, seed=seed)
                student, _ = distill(teacher, corpus.train, dims, cfg)
                summary, _ = evaluate(student, corpus.test, variant=label, seed=seed)
                per_seed.append(summary["si_snri_mean"])
                log.info("%s/%s seed %d: %.3f dB", label, size, seed, per_seed[-1])
            rows.append({
                "variant": label,
                "student": size,
                "params": mdl.param_count(dims),
                "n_seeds": seeds,
                "si_snri_mean": float(np.mean(per_seed)),
                "si_snri_std": float(np.std(per_seed)),
                "per_seed": per_seed,
            })
    return {
        "teacher": {"params": teacher.n_params, **teacher_summary},
        "rows": rows,
        "config": {"seeds": seeds, "teacher_epochs": teacher_epochs,
                   "student_epochs": student_epochs, "alpha": alpha, "beta": beta,
                   "sizes": list(sizes), "variants": list(variants)},
    }


def lookup(result, variant, size):
    for row in result["rows"]:
        if row["variant"] == variant and row["student"] == size:
            return row
    raise KeyError((variant, size))


def to_csv(result) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TABLE_FIELDS)
    for r in result["rows"]:
        writer.writerow([r["variant"], r["student"], r["params"], r["n_seeds"],
                         f"{r['si_snri_mean']:.4f}", f"{r['si_snri_std']:.4f}",
                         ";".join(f"{v:.4f}" for v in r["per_seed"])])
    return buf.getvalue()


def to_markdown(result) -> str:
    t = result["teacher"]
    lines = [
        f"Teacher ({t['params']} params): SI-SNRi {t['si_snri_mean']:.3f} dB "
        f"over {t['n_clips']} test clips",
        "",
        "| variant | student | params | SI-SNRi (dB) mean ± std | seeds |",
        "|---|---|---:|---:|---:|",
    ]
    for r in result["rows"]:
        lines.append(f"| {r['variant']} | {r['student']} | {r['params']} | "
                     f"{r['si_snri_mean']:.3f} ± {r['si_snri_std']:.3f} | {r['n_seeds']} |")
    return "\n".join(lines) + "\n"
