"""Distances and divergences between point sets.

Covers positive-definite kernels and the biased (V-statistic) squared MMD,
exact 1-Wasserstein between discrete measures via network simplex, the
closed-form 1-D W1, and the sliced W1. The exact solver honors a support cap
(default 5000 points per side) because its cost matrix is dense.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._flow import solve_transport
from .errors import ConfigurationError, ShapeError

KERNEL_FAMILIES = ("gaussian_rbf", "imq", "smoothing_gaussian")
GROUND_METRICS = ("l1", "l2")

SUPPORT_CAP = 5000


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus its scale (C for rbf, C_im for imq, h for smoothing)."""

    family: str
    scale: float

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ConfigurationError(f"unknown kernel family {self.family!r}")
        if self.scale <= 0.0:
            raise ConfigurationError("kernel scale must be positive")

    @classmethod
    def imq_for_dim(cls, dim: int) -> "KernelSpec":
        """The inverse-multiquadratics preset with scale 2*dim."""
        return cls("imq", 2.0 * dim)


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return x


def squared_distances(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Pairwise squared euclidean distances via per-coordinate differences.

    Exactly zero for identical points (the expanded dot-product form is not,
    which would poison the identical-sets contracts downstream).
    """
    x, y = _as_batch(x), _as_batch(y)
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    out = np.zeros((len(x), len(y)))
    for d in range(x.shape[1]):
        diff = x[:, d][:, None] - y[:, d][None, :]
        out += diff * diff
    return out


def gram(spec: KernelSpec, x, y) -> np.ndarray:
    """Kernel matrix k(x_i, y_j)."""
    x, y = _as_batch(x), _as_batch(y)
    sq = squared_distances(x, y)
    if spec.family == "gaussian_rbf":
        return np.exp(-sq / spec.scale)
    if spec.family == "imq":
        return spec.scale / (spec.scale + sq)
    dim = x.shape[1]
    return (2.0 * np.pi * spec.scale) ** (-dim / 2.0) * np.exp(-sq / (2.0 * spec.scale))


def kernel_eval(spec: KernelSpec, x, y) -> float:
    """Kernel value for a single pair of points."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64)).reshape(1, -1)
    y = np.atleast_1d(np.asarray(y, dtype=np.float64)).reshape(1, -1)
    return float(gram(spec, x, y)[0, 0])


def mmd2_biased(spec: KernelSpec, x, y) -> float:
    """Squared MMD as the V-statistic (diagonal terms included)."""
    x, y = _as_batch(x), _as_batch(y)
    if len(x) == 0 or len(y) == 0:
        raise ConfigurationError("mmd needs non-empty sample sets")
    return float(
        gram(spec, x, x).mean() + gram(spec, y, y).mean() - 2.0 * gram(spec, x, y).mean()
    )


def _kernel_grad_second(spec: KernelSpec, x: np.ndarray, y: np.ndarray):
    """Gram matrix and d k(x_i, y_j) / d y_j as an (n, m, d) array."""
    diff = y[None, :, :] - x[:, None, :]
    sq = (diff * diff).sum(axis=2)
    if spec.family == "gaussian_rbf":
        k = np.exp(-sq / spec.scale)
        g = k[:, :, None] * (-2.0 / spec.scale) * diff
    elif spec.family == "imq":
        k = spec.scale / (spec.scale + sq)
        g = (-2.0 * spec.scale / (spec.scale + sq) ** 2)[:, :, None] * diff
    else:
        dim = x.shape[1]
        k = (2.0 * np.pi * spec.scale) ** (-dim / 2.0) * np.exp(-sq / (2.0 * spec.scale))
        g = k[:, :, None] * (-diff / spec.scale)
    return k, g


def mmd2_biased_grad(spec: KernelSpec, x, y):
    """V-statistic squared MMD and its gradient with respect to the y points."""
    x, y = _as_batch(x), _as_batch(y)
    n, m = len(x), len(y)
    kxx = gram(spec, x, x)
    kyy, gyy = _kernel_grad_second(spec, y, y)
    kxy, gxy = _kernel_grad_second(spec, x, y)
    value = float(kxx.mean() + kyy.mean() - 2.0 * kxy.mean())
    # d/dy_t of mean(kyy) collects a row and a column term; radial symmetry
    # folds them into twice the column sum
    grad = (2.0 / m**2) * gyy.sum(axis=0) - (2.0 / (n * m)) * gxy.sum(axis=0)
    return value, grad


def cost_matrix(x: np.ndarray, y: np.ndarray, metric: str = "l2") -> np.ndarray:
    """Pairwise ground costs under the l2 or l1 metric."""
    if metric not in GROUND_METRICS:
        raise ConfigurationError(f"unknown ground metric {metric!r}")
    x, y = _as_batch(x), _as_batch(y)
    if metric == "l2":
        return np.sqrt(squared_distances(x, y))
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    out = np.zeros((len(x), len(y)))
    for d in range(x.shape[1]):
        out += np.abs(x[:, d][:, None] - y[:, d][None, :])
    return out


def _check_weights(w, size, side):
    if w is None:
        return np.full(size, 1.0 / size)
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (size,):
        raise ShapeError(f"{side} weights must have length {size}")
    if (w < 0).any():
        raise ConfigurationError(f"{side} weights must be nonnegative")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ConfigurationError(f"{side} weights must sum to 1 (got {w.sum()!r})")
    return w


def w1_exact_plan(
    x,
    y,
    metric: str = "l2",
    weights_x=None,
    weights_y=None,
    method: str = "auto",
    support_cap: int = SUPPORT_CAP,
):
    """Optimal transport cost and plan between two discrete measures.

    Returns (cost, rows, cols, flows) with flows summing to 1. method is
    'network_simplex', 'assignment' (equal-size uniform marginals only), or
    'auto', which picks the assignment fast path when it applies.
    """
    x, y = _as_batch(x), _as_batch(y)
    n, m = len(x), len(y)
    if n == 0 or m == 0:
        raise ConfigurationError("transport needs non-empty point sets")
    if n > support_cap or m > support_cap:
        raise ConfigurationError(
            f"support sizes {n} x {m} exceed the cap {support_cap}; "
            f"subsample the inputs"
        )
    wx = _check_weights(weights_x, n, "x")
    wy = _check_weights(weights_y, m, "y")
    uniform = weights_x is None and weights_y is None and n == m
    if method == "auto":
        method = "assignment" if uniform else "network_simplex"
    if method == "assignment":
        if not uniform:
            raise ConfigurationError(
                "assignment fast path needs equal-size uniform measures"
            )
        costs = cost_matrix(x, y, metric)
        rows, cols = linear_sum_assignment(costs)
        flows = np.full(n, 1.0 / n)
        return float(costs[rows, cols].mean()), rows, cols, flows
    if method != "network_simplex":
        raise ConfigurationError(f"unknown transport method {method!r}")
    keep_x = wx > 0.0
    keep_y = wy > 0.0
    xs, ys = x[keep_x], y[keep_y]
    ws, wt = wx[keep_x], wy[keep_y]
    wt = wt * (ws.sum() / wt.sum())
    costs = cost_matrix(xs, ys, metric)
    total, rows, cols, flows = solve_transport(costs, ws, wt)
    live = flows > 0.0
    orig_x = np.flatnonzero(keep_x)
    orig_y = np.flatnonzero(keep_y)
    return float(total), orig_x[rows[live]], orig_y[cols[live]], flows[live]


def w1_discrete_exact(
    x,
    y,
    metric: str = "l2",
    weights_x=None,
    weights_y=None,
    method: str = "auto",
    support_cap: int = SUPPORT_CAP,
) -> float:
    """Exact 1-Wasserstein distance between two discrete measures."""
    total, _, _, _ = w1_exact_plan(
        x, y, metric, weights_x, weights_y, method, support_cap
    )
    return total


def w1_1d(x, y) -> float:
    """Exact W1 on the line for uniform samples.

    Equal sizes reduce to the mean absolute difference of sorted values;
    unequal sizes use the exact piecewise-quantile coupling.
    """
    x = np.sort(np.asarray(x, dtype=np.float64).reshape(-1))
    y = np.sort(np.asarray(y, dtype=np.float64).reshape(-1))
    if len(x) == 0 or len(y) == 0:
        raise ConfigurationError("w1_1d needs non-empty samples")
    if len(x) == len(y):
        return float(np.abs(x - y).mean())
    # integrate |F_x - F_y| over the merged support
    grid = np.concatenate((x, y))
    grid.sort()
    fx = np.searchsorted(x, grid[:-1], side="right") / len(x)
    fy = np.searchsorted(y, grid[:-1], side="right") / len(y)
    return float(np.sum(np.abs(fx - fy) * np.diff(grid)))


def sample_directions(dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """count unit vectors drawn uniformly on the sphere in R^dim."""
    v = rng.standard_normal((count, dim))
    norms = np.linalg.norm(v, axis=1)
    while (norms == 0.0).any():  # pragma: no cover - probability zero
        bad = norms == 0.0
        v[bad] = rng.standard_normal((int(bad.sum()), dim))
        norms = np.linalg.norm(v, axis=1)
    return v / norms[:, None]


def sliced_w1(x, y, num_projections: int, seed: int) -> float:
    """Monte Carlo sliced W1: average 1-D W1 over random unit directions."""
    if num_projections < 1:
        raise ConfigurationError("need num_projections >= 1")
    x, y = _as_batch(x), _as_batch(y)
    if len(x) == 0 or len(y) == 0:
        raise ConfigurationError("sliced_w1 needs non-empty samples")
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    dirs = sample_directions(x.shape[1], num_projections, np.random.default_rng(seed))
    return float(
        np.mean([w1_1d(x @ theta, y @ theta) for theta in dirs])
    )


@dataclass(frozen=True)
class DiscrepancySpec:
    """Choice of penalty/metric between latent distributions.

    kind 'mmd' uses `kernel`; 'w1' uses the exact solver under `metric`;
    'sliced_w1' uses `num_projections` random directions under l2.
    """

    kind: str
    kernel: KernelSpec | None = None
    metric: str = "l2"
    num_projections: int = 50

    def __post_init__(self):
        if self.kind not in ("mmd", "w1", "sliced_w1"):
            raise ConfigurationError(f"unknown discrepancy kind {self.kind!r}")
        if self.kind == "mmd" and self.kernel is None:
            raise ConfigurationError("mmd discrepancy needs a kernel")
        if self.metric not in GROUND_METRICS:
            raise ConfigurationError(f"unknown ground metric {self.metric!r}")
        if self.num_projections < 1:
            raise ConfigurationError("need num_projections >= 1")


def _matching_grad(left: np.ndarray, right: np.ndarray, metric: str):
    """W1 under an equal-size uniform coupling plus d(cost)/d(right)."""
    n = len(left)
    if left.shape[1] == 1:
        rows = np.argsort(left[:, 0], kind="stable")
        cols = np.argsort(right[:, 0], kind="stable")
    else:
        rows, cols = linear_sum_assignment(cost_matrix(left, right, metric))
    diff = right[cols] - left[rows]
    if metric == "l2":
        norms = np.linalg.norm(diff, axis=1)
        value = norms.mean()
        safe = norms > 0.0
        g = np.zeros_like(diff)
        g[safe] = diff[safe] / norms[safe, None] / n
    else:
        value = np.abs(diff).sum(axis=1).mean()
        g = np.sign(diff) / n
    grad = np.zeros_like(right)
    np.add.at(grad, cols, g)
    return float(value), grad


def penalty_with_grad(
    spec: DiscrepancySpec,
    prior_samples: np.ndarray,
    encoded: np.ndarray,
    directions: np.ndarray | None = None,
):
    """Penalty value and its gradient with respect to the encoded samples.

    For 'w1' and 'sliced_w1' the optimal coupling (resp. sorted matching per
    direction) is held fixed, which is the exact gradient wherever the
    matching is locally unique. `directions` must be supplied for
    'sliced_w1' so that an evaluation is a deterministic function.
    """
    left = _as_batch(prior_samples)
    right = _as_batch(encoded)
    if spec.kind == "mmd":
        return mmd2_biased_grad(spec.kernel, left, right)
    if spec.kind == "w1":
        return _matching_grad(left, right, spec.metric)
    if directions is None:
        raise ConfigurationError("sliced_w1 penalty needs precomputed directions")
    value = 0.0
    grad = np.zeros_like(right)
    n = len(right)
    for theta in directions:
        a = np.sort(left @ theta, kind="stable")
        order = np.argsort(right @ theta, kind="stable")
        b = (right @ theta)[order]
        value += np.abs(a - b).mean()
        signs = np.sign(b - a)
        grad[order] += signs[:, None] * theta[None, :] / n
    p = len(directions)
    return float(value / p), grad / p
