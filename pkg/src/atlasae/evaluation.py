"""Baselines, metrics and report generation.

The KDE baseline resamples training points with Gaussian jitter; quality is
measured as an exact W1 between fresh truth samples and generated samples,
plus a Gaussian Parzen-window log-likelihood for cross-checking.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datasets import PointCloud
from .discrepancy import squared_distances, w1_discrete_exact
from .errors import ConfigurationError, DataFormatError

EVAL_SEED_OFFSET = 1000


def kde_sample(train: PointCloud, bandwidth: float, m: int, seed: int) -> PointCloud:
    """m draws of (uniformly chosen training point) + N(0, bandwidth^2 I)."""
    if bandwidth <= 0.0:
        raise ConfigurationError("bandwidth must be positive")
    if m < 1:
        raise ConfigurationError("need m >= 1 samples")
    rng = np.random.default_rng(seed)
    centers = train.points[rng.integers(0, len(train), m)]
    return PointCloud(centers + bandwidth * rng.standard_normal(centers.shape))


def parzen_ll(generated: PointCloud, test: PointCloud, sigma: float) -> float:
    """Mean log-likelihood of test points under a Gaussian Parzen window.

    Uses log-sum-exp stabilization. Per-point contributions are summed in
    sorted order, which makes the value bitwise invariant to permuting
    either cloud.
    """
    if sigma <= 0.0:
        raise ConfigurationError("sigma must be positive")
    g, t = generated.points, test.points
    if g.shape[1] != t.shape[1]:
        raise ConfigurationError("dimension mismatch between clouds")
    m, dim = g.shape
    sq = squared_distances(t, g)
    exponents = np.sort(-sq / (2.0 * sigma * sigma), axis=1)
    peak = exponents[:, -1]
    lse = peak + np.log(np.exp(exponents - peak[:, None]).sum(axis=1))
    ll = lse - np.log(m) - 0.5 * dim * np.log(2.0 * np.pi * sigma * sigma)
    return float(np.sort(ll).sum() / len(ll))


def select_parzen_sigma(generated, validation, grid) -> float:
    """Grid value maximizing parzen_ll on the validation set; ties go small."""
    if len(grid) == 0:
        raise ConfigurationError("sigma grid must be non-empty")
    best_sigma = None
    best_value = -np.inf
    for sigma in sorted(float(s) for s in grid):
        value = parzen_ll(generated, validation, sigma)
        if value > best_value:
            best_value = value
            best_sigma = sigma
    return best_sigma


def select_kde_bandwidth(
    train: PointCloud,
    validation: PointCloud,
    grid,
    seed: int,
    metric: str = "l2",
) -> float:
    """Bandwidth minimizing held-out W1 of a KDE resample; ties go small."""
    if len(grid) == 0:
        raise ConfigurationError("bandwidth grid must be non-empty")
    best_bw = None
    best_value = np.inf
    for bw in sorted(float(b) for b in grid):
        cloud = kde_sample(train, bw, len(validation), seed)
        value = w1_discrete_exact(cloud.points, validation.points, metric)
        if value < best_value:
            best_value = value
            best_bw = bw
    return best_bw


@dataclass
class EvalReport:
    method: str
    w1_to_truth: float
    param_count: int
    runtime_seconds: float
    config_fingerprint: str

    def __post_init__(self):
        if self.w1_to_truth < 0.0:
            raise ConfigurationError("W1 cannot be negative")


def config_fingerprint(config: dict) -> str:
    """Short stable hash of a JSON-serializable configuration."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def evaluate(
    sample_fn,
    truth_fn,
    n_eval: int,
    seed: int,
    method: str,
    metric: str = "l2",
    standardize: bool = False,
    param_total: int = 0,
    fingerprint: str = "",
    extra_runtime: float = 0.0,
) -> EvalReport:
    """Exact W1 between n_eval fresh truth draws and n_eval generated draws.

    sample_fn and truth_fn map (count, seed) to an (n, D) array; truth uses
    seed + 1000 so evaluation data never collides with training draws.
    With standardize, both clouds are divided by the truth sample's
    per-coordinate standard deviation first, so heavy-tailed coordinates do
    not drown the rest (the spiral data needs this; see the config files).
    """
    started = time.perf_counter()
    generated = np.asarray(sample_fn(n_eval, seed))
    truth = np.asarray(truth_fn(n_eval, seed + EVAL_SEED_OFFSET))
    if standardize:
        scale = truth.std(axis=0)
        scale[scale == 0.0] = 1.0
        generated = generated / scale
        truth = truth / scale
    w1 = w1_discrete_exact(generated, truth, metric)
    return EvalReport(
        method=method,
        w1_to_truth=w1,
        param_count=param_total,
        runtime_seconds=extra_runtime + time.perf_counter() - started,
        config_fingerprint=fingerprint,
    )


REPORT_COLUMNS = ("method", "w1_to_truth", "param_count", "runtime_seconds", "config")


def report_table(reports, path_base) -> None:
    """Write {base}.csv and an aligned {base}.txt, rows sorted by method."""
    if not reports:
        raise ConfigurationError("need at least one report")
    rows = sorted(reports, key=lambda r: r.method)
    csv_lines = [",".join(REPORT_COLUMNS)]
    for r in rows:
        csv_lines.append(
            f"{r.method},{r.w1_to_truth!r},{r.param_count},"
            f"{r.runtime_seconds!r},{r.config_fingerprint}"
        )
    base = Path(path_base)
    base.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{base}.csv").write_text("\n".join(csv_lines) + "\n", encoding="utf-8")

    cells = [list(REPORT_COLUMNS)]
    for r in rows:
        cells.append(
            [
                r.method,
                f"{r.w1_to_truth:.4f}",
                str(r.param_count),
                f"{r.runtime_seconds:.2f}",
                r.config_fingerprint,
            ]
        )
    widths = [max(len(row[c]) for row in cells) for c in range(len(REPORT_COLUMNS))]
    txt_lines = [
        "  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip()
        for row in cells
    ]
    Path(f"{base}.txt").write_text("\n".join(txt_lines) + "\n", encoding="utf-8")


def load_report_csv(path) -> list[EvalReport]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != ",".join(REPORT_COLUMNS):
        raise DataFormatError(f"{path}: missing report header")
    reports = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(REPORT_COLUMNS):
            raise DataFormatError(f"{path}: line {lineno} has {len(parts)} columns")
        reports.append(
            EvalReport(
                method=parts[0],
                w1_to_truth=float(parts[1]),
                param_count=int(parts[2]),
                runtime_seconds=float(parts[3]),
                config_fingerprint=parts[4],
            )
        )
    return reports
