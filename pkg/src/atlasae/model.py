"""Mixture of encoder/decoder pairs glued by a partition of unity.

Encoders share their trunk (every layer but the last); decoders share
theirs (every layer but the first). Per-cluster head layers are free. All
trainable scalars live in one ParamStore so a single optimizer step updates
the whole mixture.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datasets import PointCloud
from .errors import ConfigurationError, DataFormatError, PriorCollapseError
from .nn import (
    MixtureArchitecture,
    ParamStore,
    init_layer,
    layers_forward,
)
from .partition import PartitionOfUnity, load_partition, save_partition

PRIOR_BASES = ("std_gaussian", "truncated_normal", "uniform_ball")

CHECKPOINT_SCHEMA = "atlasae-checkpoint/1"

COLLAPSE_WINDOW = 10000
COLLAPSE_RATE = 1e-3


@dataclass(frozen=True)
class Prior:
    """Latent prior for one cluster.

    `reweighted` priors rescale the base distribution by the cover weight of
    the decoded point, sampled by rejection against a frozen decoder
    snapshot held by the model.
    """

    base: str = "std_gaussian"
    radius: float = 1.0
    reweighted: bool = False

    def __post_init__(self):
        if self.base not in PRIOR_BASES:
            raise ConfigurationError(f"unknown prior base {self.base!r}")
        if self.base != "std_gaussian" and self.radius <= 0.0:
            raise ConfigurationError("prior radius must be positive")


def mixture_layout(arch: MixtureArchitecture):
    """Named segment shapes in their canonical (checkpoint) order."""
    enc = arch.encoder_dims()
    dec = arch.decoder_dims()
    layout: list[tuple[str, tuple[int, ...]]] = []
    for i in range(len(enc) - 2):
        layout.append((f"enc.trunk{i}.W", (enc[i + 1], enc[i])))
        layout.append((f"enc.trunk{i}.b", (enc[i + 1],)))
    for k in range(arch.clusters):
        layout.append((f"enc.head{k}.W", (enc[-1], enc[-2])))
        layout.append((f"enc.head{k}.b", (enc[-1],)))
    for k in range(arch.clusters):
        layout.append((f"dec.head{k}.W", (dec[1], dec[0])))
        layout.append((f"dec.head{k}.b", (dec[1],)))
    for i in range(1, len(dec) - 1):
        layout.append((f"dec.trunk{i - 1}.W", (dec[i + 1], dec[i])))
        layout.append((f"dec.trunk{i - 1}.b", (dec[i + 1],)))
    return layout


@dataclass
class MixtureModel:
    arch: MixtureArchitecture
    params: ParamStore
    priors: list[Prior]
    weights: np.ndarray
    pou: PartitionOfUnity
    bandwidth: float
    prior_snapshot: ParamStore | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        k = self.arch.clusters
        if len(self.priors) != k:
            raise ConfigurationError(f"need {k} priors, got {len(self.priors)}")
        if self.weights.shape != (k,) or (self.weights < 0).any():
            raise ConfigurationError("weights must be K nonnegative reals")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ConfigurationError("weights must sum to 1")
        if self.bandwidth < 0.0:
            raise ConfigurationError("bandwidth must be nonnegative")
        if any(p.reweighted for p in self.priors) and self.prior_snapshot is None:
            raise ConfigurationError("reweighted priors need a decoder snapshot")

    def _check_cluster(self, k: int) -> None:
        if not 0 <= k < self.arch.clusters:
            raise ConfigurationError(
                f"cluster index {k} out of range [0, {self.arch.clusters})"
            )

    def encoder_layers(self, k: int, store: ParamStore | None = None):
        self._check_cluster(k)
        store = store or self.params
        n_trunk = len(self.arch.hidden) - 1
        layers = [
            (store.view(f"enc.trunk{i}.W"), store.view(f"enc.trunk{i}.b"), "relu")
            for i in range(n_trunk + 1)
        ]
        layers.append(
            (store.view(f"enc.head{k}.W"), store.view(f"enc.head{k}.b"), "identity")
        )
        return layers

    def decoder_layers(self, k: int, store: ParamStore | None = None):
        self._check_cluster(k)
        store = store or self.params
        layers = [
            (store.view(f"dec.head{k}.W"), store.view(f"dec.head{k}.b"), "relu")
        ]
        n_trunk = len(self.arch.hidden)
        for i in range(n_trunk):
            act = "identity" if i == n_trunk - 1 else "relu"
            layers.append(
                (store.view(f"dec.trunk{i}.W"), store.view(f"dec.trunk{i}.b"), act)
            )
        return layers


def build_mixture(
    arch: MixtureArchitecture,
    pou: PartitionOfUnity,
    weights: np.ndarray,
    bandwidth: float,
    prior: Prior,
    seed: int,
) -> MixtureModel:
    """Initialize a mixture model; every cluster starts from the same prior spec."""
    rng = np.random.default_rng(seed)
    layout = mixture_layout(arch)
    segments = []
    for (w_name, w_shape), (b_name, _) in zip(layout[0::2], layout[1::2]):
        w, b = init_layer(rng, w_shape[1], w_shape[0])
        segments.append((w_name, w))
        segments.append((b_name, b))
    return MixtureModel(
        arch=arch,
        params=ParamStore(segments),
        priors=[prior] * arch.clusters,
        weights=weights,
        pou=pou,
        bandwidth=bandwidth,
    )


def encode(model: MixtureModel, k: int, x_batch) -> np.ndarray:
    """Shared trunk followed by cluster k's free output layer."""
    x = np.atleast_2d(np.asarray(x_batch, dtype=np.float64))
    return layers_forward(model.encoder_layers(k), x)


def decode(model: MixtureModel, k: int, z_batch) -> np.ndarray:
    """Cluster k's free input layer followed by the shared trunk."""
    z = np.atleast_2d(np.asarray(z_batch, dtype=np.float64))
    return layers_forward(model.decoder_layers(k), z)


def noisy_encode(model: MixtureModel, k: int, x_batch, seed: int) -> np.ndarray:
    """Encoding plus N(0, h I) noise; h = 0 reduces to encode exactly."""
    z = encode(model, k, x_batch)
    if model.bandwidth == 0.0:
        return z
    rng = np.random.default_rng(seed)
    return z + np.sqrt(model.bandwidth) * rng.standard_normal(z.shape)


def _base_proposer(prior: Prior, dim: int, rng: np.random.Generator):
    if prior.base == "std_gaussian":
        return lambda count: rng.standard_normal((count, dim))
    if prior.base == "uniform_ball":

        def draw_ball(count):
            v = rng.standard_normal((count, dim))
            norms = np.linalg.norm(v, axis=1)
            norms[norms == 0.0] = 1.0
            scale = prior.radius * rng.random(count) ** (1.0 / dim)
            return v / norms[:, None] * scale[:, None]

        return draw_ball

    def draw_truncated(count):
        out = np.empty((0, dim))
        proposed = accepted = 0
        while len(out) < count:
            chunk = rng.standard_normal((max(count, 64), dim))
            keep = np.linalg.norm(chunk, axis=1) <= prior.radius
            proposed += len(chunk)
            accepted += int(keep.sum())
            out = np.vstack((out, chunk[keep]))
            if proposed >= COLLAPSE_WINDOW and accepted < COLLAPSE_RATE * proposed:
                raise PriorCollapseError(
                    f"truncated normal radius {prior.radius} accepts "
                    f"{accepted}/{proposed} proposals",
                )
        return out[:count]

    return draw_truncated


def sample_prior(
    model: MixtureModel, k: int, m: int, rng: np.random.Generator | int
) -> np.ndarray:
    """Draw m latent samples from cluster k's prior.

    Reweighted priors propose from the base distribution and accept with
    probability equal to the cover weight of the snapshot-decoded point.
    Sustained acceptance below 1e-3 raises PriorCollapseError.
    """
    model._check_cluster(k)
    if m < 1:
        raise ConfigurationError("need m >= 1 prior samples")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    prior = model.priors[k]
    propose = _base_proposer(prior, model.arch.latent_dim, rng)
    if not prior.reweighted:
        return propose(m)
    dec_layers = model.decoder_layers(k, model.prior_snapshot)
    out = np.empty((0, model.arch.latent_dim))
    proposed = accepted = 0
    while len(out) < m:
        z = propose(max(m, 64))
        rho, _ = model.pou.evaluate_batch(
            layers_forward(dec_layers, z), allow_uncovered=True
        )
        keep = rng.random(len(z)) <= rho[:, k]
        proposed += len(z)
        accepted += int(keep.sum())
        out = np.vstack((out, z[keep]))
        if proposed >= COLLAPSE_WINDOW and accepted < COLLAPSE_RATE * proposed:
            raise PriorCollapseError(
                f"reweighted prior for cluster {k} accepts "
                f"{accepted}/{proposed} proposals",
                cluster=k,
            )
    return out[:m]


def sample_model(model: MixtureModel, m: int, seed: int) -> PointCloud:
    """Draw m points: cluster by mixture weight, latent by prior, then decode."""
    if m < 1:
        raise ConfigurationError("need m >= 1 samples")
    rng = np.random.default_rng(seed)
    ks = rng.choice(model.arch.clusters, size=m, p=model.weights)
    out = np.empty((m, model.arch.ambient_dim))
    for k in range(model.arch.clusters):
        idx = np.flatnonzero(ks == k)
        if len(idx) == 0:
            continue
        z = sample_prior(model, k, len(idx), rng)
        out[idx] = decode(model, k, z)
    return PointCloud(out)


def save_checkpoint(model: MixtureModel, prefix) -> None:
    """Write {prefix}.json plus parameter blob(s) and the partition sidecar."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    np.save(f"{prefix}.params.npy", model.params.values)
    save_partition(model.pou, f"{prefix}.partition.txt")
    snapshot_file = None
    if model.prior_snapshot is not None:
        snapshot_file = f"{prefix.name}.priorparams.npy"
        np.save(prefix.parent / snapshot_file, model.prior_snapshot.values)
    header = {
        "schema": CHECKPOINT_SCHEMA,
        "ambient_dim": model.arch.ambient_dim,
        "latent_dim": model.arch.latent_dim,
        "hidden": list(model.arch.hidden),
        "clusters": model.arch.clusters,
        "bandwidth": model.bandwidth,
        "weights": [float(w) for w in model.weights],
        "priors": [
            {"base": p.base, "radius": p.radius, "reweighted": p.reweighted}
            for p in model.priors
        ],
        "files": {
            "params": f"{prefix.name}.params.npy",
            "partition": f"{prefix.name}.partition.txt",
            "prior_params": snapshot_file,
        },
    }
    Path(f"{prefix}.json").write_text(
        json.dumps(header, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


_CHECKPOINT_FIELDS = {
    "schema",
    "ambient_dim",
    "latent_dim",
    "hidden",
    "clusters",
    "bandwidth",
    "weights",
    "priors",
    "files",
}


def load_checkpoint(prefix) -> MixtureModel:
    """Load a checkpoint; schema violations name the offending field."""
    prefix = Path(prefix)
    header_path = Path(f"{prefix}.json")
    if not header_path.exists():
        raise DataFormatError(f"missing checkpoint header {header_path}")
    header = json.loads(header_path.read_text(encoding="utf-8"))
    unknown = set(header) - _CHECKPOINT_FIELDS
    missing = _CHECKPOINT_FIELDS - set(header)
    if unknown:
        raise DataFormatError(f"checkpoint field not in schema: {sorted(unknown)[0]}")
    if missing:
        raise DataFormatError(f"checkpoint field missing: {sorted(missing)[0]}")
    if header["schema"] != CHECKPOINT_SCHEMA:
        raise DataFormatError(f"unsupported checkpoint schema {header['schema']!r}")
    try:
        arch = MixtureArchitecture(
            ambient_dim=int(header["ambient_dim"]),
            latent_dim=int(header["latent_dim"]),
            hidden=tuple(int(h) for h in header["hidden"]),
            clusters=int(header["clusters"]),
        )
        priors = [
            Prior(
                base=p["base"],
                radius=float(p["radius"]),
                reweighted=bool(p["reweighted"]),
            )
            for p in header["priors"]
        ]
    except (KeyError, TypeError, ValueError, ConfigurationError) as exc:
        raise DataFormatError(f"invalid checkpoint field: {exc}") from exc

    layout = mixture_layout(arch)
    store = ParamStore([(name, np.zeros(shape)) for name, shape in layout])
    values = np.load(prefix.parent / header["files"]["params"])
    if values.shape != store.values.shape:
        raise DataFormatError(
            f"checkpoint field files.params: expected {store.values.shape[0]} "
            f"scalars, found {values.shape}"
        )
    store.values[:] = values

    snapshot = None
    if header["files"].get("prior_params"):
        snapshot = ParamStore([(name, np.zeros(shape)) for name, shape in layout])
        snap_values = np.load(prefix.parent / header["files"]["prior_params"])
        if snap_values.shape != snapshot.values.shape:
            raise DataFormatError("checkpoint field files.prior_params: bad length")
        snapshot.values[:] = snap_values

    pou = load_partition(prefix.parent / header["files"]["partition"])
    return MixtureModel(
        arch=arch,
        params=store,
        priors=priors,
        weights=np.asarray(header["weights"], dtype=np.float64),
        pou=pou,
        bandwidth=float(header["bandwidth"]),
        prior_snapshot=snapshot,
    )
