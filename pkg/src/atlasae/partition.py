"""Data-driven open covers and partitions of unity.

A cover is built from K-means clusters: center a_k, radius r_k = the largest
distance from a_k to a point assigned to cluster k, inflated by a margin.
The smooth kind uses bump weights ((r_k+margin)^2 - |x-a_k|^2)^gamma inside
the ball and 0 outside, normalized across clusters; the indicator kind
assigns a covered point to its nearest covering center.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datasets import PointCloud
from .errors import (
    ConfigurationError,
    DataFormatError,
    EmptyClusterError,
    UncoveredPointError,
)

PARTITION_KINDS = ("indicator", "smooth")


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared euclidean distances, shape (len(x), len(centers))."""
    cross = x @ centers.T
    return (
        np.maximum(
            (x * x).sum(axis=1)[:, None] + (centers * centers).sum(axis=1)[None, :]
            - 2.0 * cross,
            0.0,
        )
    )


def kmeans_fit(
    cloud: PointCloud,
    clusters: int,
    seed: int = 0,
    max_iters: int = 100,
    restarts: int = 1,
):
    """Lloyd's algorithm with k-means++ seeding.

    Returns (centers, assignments). The within-cluster squared-distance
    objective is non-increasing across iterations; an iteration that empties
    a cluster raises EmptyClusterError. With restarts > 1, runs that many
    independent seeded fits and keeps the lowest-objective one.
    """
    if restarts > 1:
        best = None
        for r in range(restarts):
            sub_seed = int(np.random.SeedSequence([seed, r]).generate_state(1)[0])
            centers, assignments = kmeans_fit(cloud, clusters, sub_seed, max_iters)
            objective = float(_sq_dists(cloud.points, centers).min(axis=1).sum())
            if best is None or objective < best[0]:
                best = (objective, centers, assignments)
        return best[1], best[2]
    x = cloud.points
    n = len(cloud)
    if clusters > n:
        raise ConfigurationError(f"K={clusters} exceeds n={n}")
    rng = np.random.default_rng(seed)

    centers = np.empty((clusters, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = _sq_dists(x, centers[:1]).ravel()
    for k in range(1, clusters):
        total = d2.sum()
        if total > 0.0:
            centers[k] = x[rng.choice(n, p=d2 / total)]
        else:
            centers[k] = x[rng.integers(n)]
        d2 = np.minimum(d2, _sq_dists(x, centers[k : k + 1]).ravel())

    assignments = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iters):
        d2_all = _sq_dists(x, centers)
        new_assign = d2_all.argmin(axis=1)
        if (new_assign == assignments).all():
            break
        assignments = new_assign
        for k in range(clusters):
            members = x[assignments == k]
            if len(members) == 0:
                raise EmptyClusterError(
                    f"cluster {k} became empty; re-seed with a different seed "
                    f"or use a smaller K"
                )
            centers[k] = members.mean(axis=0)
    return centers, assignments


BUMP_SCALINGS = ("normalized", "raw")


@dataclass
class PartitionOfUnity:
    """Cover balls plus the weight functions rho_k they induce.

    The smooth bump comes in two scalings. "raw" is
    ((r_k+margin)^2 - |x-a_k|^2)^gamma, which at large gamma lets the
    widest overlapping ball dominate everywhere; "normalized" divides by
    (r_k+margin)^(2 gamma) so every bump peaks at 1 and weight instead
    concentrates on the relatively nearest centroid. Covers with uneven
    radii need "normalized" to keep every cluster's weight alive.
    """

    kind: str
    centers: np.ndarray
    radii: np.ndarray
    margin: float = 0.0
    exponent: float = 10.0
    bump: str = "normalized"

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        self.radii = np.asarray(self.radii, dtype=np.float64)
        if self.kind not in PARTITION_KINDS:
            raise ConfigurationError(f"unknown partition kind {self.kind!r}")
        if self.bump not in BUMP_SCALINGS:
            raise ConfigurationError(f"unknown bump scaling {self.bump!r}")
        if self.centers.ndim != 2 or self.centers.shape[0] < 1:
            raise ConfigurationError("centers must be a K x D matrix with K >= 1")
        if self.radii.shape != (self.centers.shape[0],) or (self.radii <= 0).any():
            raise ConfigurationError("radii must be K positive reals")
        if self.margin < 0:
            raise ConfigurationError("margin must be nonnegative")
        if self.kind == "smooth" and not self.exponent > 1.0:
            raise ConfigurationError("smooth kind needs exponent > 1")

    @property
    def clusters(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def cover_radii(self) -> np.ndarray:
        return self.radii + self.margin

    def bump_values(self, x: np.ndarray) -> np.ndarray:
        """Unnormalized smooth weights, zero on and outside each ball boundary."""
        cov2 = self.cover_radii()[None, :] ** 2
        gap = cov2 - _sq_dists(np.atleast_2d(x), self.centers)
        if self.bump == "normalized":
            gap = gap / cov2
        return np.where(gap > 0.0, np.maximum(gap, 0.0) ** self.exponent, 0.0)

    def evaluate_batch(self, x: np.ndarray, allow_uncovered: bool = False):
        """Weights rho_k row-wise for a batch; rows sum to 1 where covered.

        Returns (weights, covered mask). Uncovered rows raise unless
        allow_uncovered, in which case their weight row is all-zero.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        sq = _sq_dists(x, self.centers)
        inside = sq < self.cover_radii()[None, :] ** 2
        if self.kind == "indicator":
            rho = np.zeros_like(sq)
            masked = np.where(inside, sq, np.inf)
            covered = inside.any(axis=1)
            nearest = masked.argmin(axis=1)
            rho[covered, nearest[covered]] = 1.0
        else:
            bump = self.bump_values(x)
            totals = bump.sum(axis=1)
            covered = totals > 0.0
            rho = np.zeros_like(bump)
            rho[covered] = bump[covered] / totals[covered, None]
        if not covered.all() and not allow_uncovered:
            bad = int(np.flatnonzero(~covered)[0])
            nearest_dist = float(np.sqrt(sq[bad].min()))
            raise UncoveredPointError(
                f"point {bad} lies outside every cover ball "
                f"(nearest center at distance {nearest_dist:.6g}); "
                f"drop it or rebuild the cover with a larger margin",
                nearest_distance=nearest_dist,
            )
        return rho, covered

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Weight vector (rho_1(x), ..., rho_K(x)) for a single point."""
        rho, _ = self.evaluate_batch(np.atleast_2d(x))
        return rho[0]


def build_cover(
    cloud: PointCloud,
    assignments: np.ndarray,
    centers: np.ndarray,
    margin: float | None = None,
    margin_scale: float = 0.05,
    exponent: float = 10.0,
    kind: str = "smooth",
    bump: str = "normalized",
) -> PartitionOfUnity:
    """Construct the partition of unity over the clustered cloud.

    radius_k is the largest distance from center k to a point assigned to it.
    margin defaults to margin_scale times the median radius.
    """
    clusters = centers.shape[0]
    radii = np.empty(clusters)
    for k in range(clusters):
        members = cloud.points[assignments == k]
        if len(members) == 0:
            raise EmptyClusterError(
                f"cluster {k} is empty; re-seed the clustering or use a smaller K"
            )
        radii[k] = np.sqrt(
            np.max(((members - centers[k]) ** 2).sum(axis=1))
        )
    radii = np.maximum(radii, 1e-12)
    if margin is None:
        margin = margin_scale * float(np.median(radii))
    return PartitionOfUnity(
        kind=kind,
        centers=centers,
        radii=radii,
        margin=margin,
        exponent=exponent,
        bump=bump,
    )


def mixture_weights(pou: PartitionOfUnity, cloud: PointCloud) -> np.ndarray:
    """Cluster weights: the average of rho_k over the cloud; sums to 1."""
    rho, _ = pou.evaluate_batch(cloud.points)
    return rho.mean(axis=0)


def save_partition(pou: PartitionOfUnity, path) -> None:
    """Serialize to the key/value sidecar format (one field per line)."""
    lines = [
        "format partition-of-unity/1",
        f"kind {pou.kind}",
        f"bump {pou.bump}",
        f"clusters {pou.clusters}",
        f"dim {pou.dim}",
        f"exponent {pou.exponent!r}",
        f"margin {pou.margin!r}",
    ]
    for k in range(pou.clusters):
        coords = " ".join(repr(float(v)) for v in pou.centers[k])
        lines.append(f"center {k} {coords}")
    for k in range(pou.clusters):
        lines.append(f"radius {k} {float(pou.radii[k])!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_partition(path) -> PartitionOfUnity:
    fields: dict[str, str] = {}
    centers: dict[int, list[float]] = {}
    radii: dict[int, float] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        try:
            if key == "center":
                idx, coords = rest.split(" ", 1)
                centers[int(idx)] = [float(v) for v in coords.split()]
            elif key == "radius":
                idx, val = rest.split()
                radii[int(idx)] = float(val)
            else:
                fields[key] = rest
        except ValueError as exc:
            raise DataFormatError(f"{path}: line {lineno}: {exc}") from exc
    try:
        clusters = int(fields["clusters"])
        pou = PartitionOfUnity(
            kind=fields["kind"],
            centers=np.array([centers[k] for k in range(clusters)]),
            radii=np.array([radii[k] for k in range(clusters)]),
            margin=float(fields["margin"]),
            exponent=float(fields["exponent"]),
            bump=fields.get("bump", "normalized"),
        )
    except KeyError as exc:
        raise DataFormatError(f"{path}: missing field {exc}") from exc
    if fields.get("format") != "partition-of-unity/1":
        raise DataFormatError(f"{path}: unknown format {fields.get('format')!r}")
    return pou
