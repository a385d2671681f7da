"""Synthetic manifold datasets and point-cloud persistence.

Random draws come from numpy's default_rng (PCG64); normal variates use its
standard_normal. Identical seeds give identical clouds within one build.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataFormatError


@dataclass
class PointCloud:
    """n x D matrix of ambient-space samples with optional per-point weights."""

    points: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2:
            raise ConfigurationError("points must be a 2-D array")
        n, d = self.points.shape
        if n < 1 or d < 1:
            raise ConfigurationError("point cloud needs n >= 1 and D >= 1")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.shape != (n,):
                raise ConfigurationError("weights must be a length-n vector")
            if (self.weights < 0).any() or not (self.weights > 0).any():
                raise ConfigurationError(
                    "weights must be nonnegative with at least one positive entry"
                )

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def spiral_from_angles(phi0: np.ndarray) -> np.ndarray:
    """Map latent angles to 2-D spiral points.

    phi = 3*pi*phi0;  point = (cos(phi+2)*phi/pi, 2*sin(phi+2)*phi/pi).
    """
    phi = 3.0 * np.pi * np.asarray(phi0, dtype=np.float64)
    r = phi / np.pi
    return np.column_stack((np.cos(phi + 2.0) * r, 2.0 * np.sin(phi + 2.0) * r))


def gen_spiral(n: int, seed: int) -> PointCloud:
    """Spiral cloud: phi0 ~ N(0,1) mapped through spiral_from_angles."""
    _check_n(n)
    rng = np.random.default_rng(seed)
    return PointCloud(spiral_from_angles(rng.standard_normal(n)))


def torus_from_angles(phi0: np.ndarray, phi1: np.ndarray) -> np.ndarray:
    """Map latent angle pairs to torus points.

    phi = 2*pi*phi0, theta = 2*pi*phi1;
    point = ((3+cos(theta))*cos(phi), (3+cos(theta))*sin(phi), sin(theta)).
    """
    phi = 2.0 * np.pi * np.asarray(phi0, dtype=np.float64)
    theta = 2.0 * np.pi * np.asarray(phi1, dtype=np.float64)
    ring = 3.0 + np.cos(theta)
    return np.column_stack((ring * np.cos(phi), ring * np.sin(phi), np.sin(theta)))


def gen_torus(n: int, seed: int) -> PointCloud:
    """Torus cloud: independent phi0, phi1 ~ N(0,1)."""
    _check_n(n)
    rng = np.random.default_rng(seed)
    phi0 = rng.standard_normal(n)
    phi1 = rng.standard_normal(n)
    return PointCloud(torus_from_angles(phi0, phi1))


def gen_sphere(n: int, seed: int) -> PointCloud:
    """Uniform cloud on the unit 2-sphere via normalized 3-D Gaussians."""
    _check_n(n)
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, 3))
    norms = np.linalg.norm(g, axis=1)
    while (norms == 0.0).any():  # pragma: no cover - probability zero
        bad = norms == 0.0
        g[bad] = rng.standard_normal((int(bad.sum()), 3))
        norms = np.linalg.norm(g, axis=1)
    return PointCloud(g / norms[:, None])


GENERATORS = {"spiral": gen_spiral, "torus": gen_torus, "sphere": gen_sphere}


def _check_n(n: int) -> None:
    if n < 1:
        raise ConfigurationError(f"need n >= 1, got {n}")


def split(cloud: PointCloud, train_fraction: float, seed: int):
    """Disjoint random partition into (train, rest) of sizes floor(n*f), n - floor(n*f)."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError("train_fraction must lie strictly between 0 and 1")
    n = len(cloud)
    n_train = int(np.floor(n * train_fraction))
    if n_train == 0 or n_train == n:
        raise ConfigurationError(
            f"split of {n} points at fraction {train_fraction} leaves an empty side"
        )
    perm = np.random.default_rng(seed).permutation(n)
    first, second = perm[:n_train], perm[n_train:]
    w = cloud.weights
    return (
        PointCloud(cloud.points[first], None if w is None else w[first]),
        PointCloud(cloud.points[second], None if w is None else w[second]),
    )


def save_cloud(cloud: PointCloud, path) -> None:
    """Write one point per line, comma-separated full-precision coordinates.

    Weighted clouds get a '# weighted' header and the weight as a final column.
    """
    lines = []
    if cloud.weights is not None:
        lines.append("# weighted")
        for row, w in zip(cloud.points, cloud.weights):
            lines.append(",".join(repr(float(v)) for v in row) + f",{float(w)!r}")
    else:
        for row in cloud.points:
            lines.append(",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_cloud(path) -> PointCloud:
    """Parse a cloud CSV; malformed input raises DataFormatError with the line number."""
    weighted = False
    rows = []
    arity = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "weighted" in line:
                    weighted = True
                continue
            fields = line.split(",")
            if arity is None:
                arity = len(fields)
            elif len(fields) != arity:
                raise DataFormatError(
                    f"{path}: line {lineno} has {len(fields)} columns, expected {arity}"
                )
            try:
                rows.append([float(f) for f in fields])
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from exc
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=np.float64)
    if weighted:
        if data.shape[1] < 2:
            raise DataFormatError(f"{path}: weighted file needs >= 2 columns")
        return PointCloud(data[:, :-1], data[:, -1])
    return PointCloud(data)
