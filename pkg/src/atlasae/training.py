"""Mixture training: rejection minibatches, objective assembly, Adam, refresh.

Each step: split the minibatch into per-cluster datasets by rejection
against the partition weights, draw equally many prior samples and noisy
encodings per surviving cluster, and take one Adam step on

    sum_k [ (p_k / |B_k|) * sum_{x in B_k} |x - G_k(Q_k(x))|^2
            + lambda_k * D(prior samples, noisy encodings) ].

Noise, prior draws and subsample picks are held fixed within a step, so the
objective is an exact deterministic function of the parameters there.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .datasets import PointCloud
from .discrepancy import DiscrepancySpec, penalty_with_grad, sample_directions, sliced_w1
from .errors import ConfigurationError, NumericError
from .model import (
    MixtureModel,
    Prior,
    build_mixture,
    sample_model,
    sample_prior,
)
from .nn import (
    AdamState,
    MixtureArchitecture,
    adam_step,
    layers_backward,
    layers_forward_trace,
)
from .partition import PartitionOfUnity, mixture_weights


@dataclass(frozen=True)
class TrainConfig:
    penalty: DiscrepancySpec
    lam: float | tuple[float, ...] = 10.0
    batch_size: int = 256
    epochs: int = 50
    bandwidth: float = 0.01
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    cost: str = "squared_l2"
    prior: Prior = field(default_factory=Prior)
    prior_refresh_rounds: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.bandwidth < 0.0:
            raise ConfigurationError("bandwidth must be >= 0")
        if self.cost != "squared_l2":
            raise ConfigurationError(f"unsupported cost {self.cost!r}")
        if self.prior_refresh_rounds < 0:
            raise ConfigurationError("prior_refresh_rounds must be >= 0")
        lam = self.lam if isinstance(self.lam, tuple) else (self.lam,)
        if any(not v > 0.0 for v in lam):
            raise ConfigurationError("every lambda must be positive")

    def lam_vector(self, clusters: int) -> np.ndarray:
        if isinstance(self.lam, tuple):
            if len(self.lam) != clusters:
                raise ConfigurationError(
                    f"lambda tuple has {len(self.lam)} entries for {clusters} clusters"
                )
            return np.asarray(self.lam, dtype=np.float64)
        return np.full(clusters, float(self.lam))


@dataclass
class EpochStats:
    epoch: int
    reconstruction: float
    penalty_raw: float
    penalty: float
    total: float
    skipped_points: int = 0
    skipped_penalties: int = 0


def partition_minibatch(points: np.ndarray, pou: PartitionOfUnity, rng):
    """Per-cluster datasets via u <= rho_k(x) rejection (exact for indicator).

    Uncovered points are skipped; their count is returned, never raised.
    """
    rho, covered = pou.evaluate_batch(points, allow_uncovered=True)
    if pou.kind == "indicator":
        include = rho > 0.0
    else:
        include = (rng.random(rho.shape) <= rho) & covered[:, None]
    tilde = [points[include[:, k]] for k in range(pou.clusters)]
    return tilde, int((~covered).sum())


def objective(
    model: MixtureModel,
    lam: np.ndarray,
    penalty: DiscrepancySpec,
    tilde,
    prior_samples,
    picks,
    noise,
    directions=None,
):
    """Loss value and gradients for one fixed draw of step randomness.

    Returns (total, reconstruction, penalty_raw, penalty_weighted, grads,
    skipped_penalties). Clusters with an empty dataset contribute nothing;
    clusters with fewer than 2 points contribute only their reconstruction
    term and are counted in skipped_penalties.
    """
    grads = model.params.zeros_like()
    recon_total = 0.0
    pen_raw = 0.0
    pen_weighted = 0.0
    skipped_penalties = 0
    sqrt_h = np.sqrt(model.bandwidth)
    for k in range(model.arch.clusters):
        xk = tilde[k]
        mk = len(xk)
        if mk == 0:
            continue
        enc_layers = model.encoder_layers(k)
        dec_layers = model.decoder_layers(k)
        enc_grads = [(w, b) for w, b, _ in model.encoder_layers(k, grads)]
        dec_grads = [(w, b) for w, b, _ in model.decoder_layers(k, grads)]

        z, enc_trace = layers_forward_trace(enc_layers, xk)
        xhat, dec_trace = layers_forward_trace(dec_layers, z)
        diff = xhat - xk
        scale = model.weights[k] / mk
        recon_total += scale * float((diff * diff).sum())
        dz = layers_backward(dec_layers, dec_trace, 2.0 * scale * diff, dec_grads)
        layers_backward(enc_layers, enc_trace, dz, enc_grads)

        if mk < 2 or prior_samples[k] is None:
            skipped_penalties += int(mk >= 1)
            continue
        picked = xk[picks[k]]
        zq, pen_trace = layers_forward_trace(enc_layers, picked)
        encoded = zq + sqrt_h * noise[k]
        value, d_encoded = penalty_with_grad(
            penalty, prior_samples[k], encoded, directions
        )
        pen_raw += value
        pen_weighted += lam[k] * value
        layers_backward(enc_layers, pen_trace, lam[k] * d_encoded, enc_grads)
    total = recon_total + pen_weighted
    return total, recon_total, pen_raw, pen_weighted, grads, skipped_penalties


def _loop_seeds(seed: int):
    init_state, loop_state = np.random.SeedSequence(seed).generate_state(2)
    return int(init_state), int(loop_state)


def train(
    data: PointCloud,
    pou: PartitionOfUnity,
    arch: MixtureArchitecture,
    config: TrainConfig,
    model: MixtureModel | None = None,
):
    """Run epochs x ceil(n / batch) Adam steps; returns (model, epoch stats).

    A warm-start model continues from its parameters with a fresh optimizer
    state. Training data must be covered by the partition.
    """
    weights = mixture_weights(pou, data)
    init_seed, loop_seed = _loop_seeds(config.seed)
    if model is None:
        model = build_mixture(
            arch, pou, weights, config.bandwidth, config.prior, seed=init_seed
        )
    else:
        model.weights = weights
    lam = config.lam_vector(arch.clusters)
    state = AdamState.fresh(
        model.params,
        lr=config.lr,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.adam_eps,
    )
    rng = np.random.default_rng(loop_seed)
    points = data.points
    n = len(data)
    history: list[EpochStats] = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        sums = np.zeros(4)
        skipped_pts = 0
        skipped_pen = 0
        n_steps = 0
        for lo in range(0, n, config.batch_size):
            batch = points[order[lo : lo + config.batch_size]]
            tilde, skipped = partition_minibatch(batch, pou, rng)
            skipped_pts += skipped
            picks, priors_z, noise = [], [], []
            for k in range(arch.clusters):
                mk = len(tilde[k])
                if mk >= 2 and lam[k] > 0.0:
                    picks.append(rng.integers(0, mk, mk))
                    priors_z.append(sample_prior(model, k, mk, rng))
                    noise.append(rng.standard_normal((mk, arch.latent_dim)))
                else:
                    picks.append(None)
                    priors_z.append(None)
                    noise.append(None)
            directions = None
            if config.penalty.kind == "sliced_w1":
                directions = sample_directions(
                    arch.latent_dim, config.penalty.num_projections, rng
                )
            total, recon, praw, pw, grads, n_skip_pen = objective(
                model, lam, config.penalty, tilde, priors_z, picks, noise, directions
            )
            if not np.isfinite(total):
                component = "reconstruction" if not np.isfinite(recon) else "penalty"
                raise NumericError(
                    f"non-finite {component} loss at step {step}",
                    step=step,
                    component=component,
                )
            adam_step(model.params, grads, state)
            sums += (recon, praw, pw, total)
            skipped_pen += n_skip_pen
            n_steps += 1
            step += 1
        means = sums / max(n_steps, 1)
        history.append(
            EpochStats(
                epoch=epoch,
                reconstruction=means[0],
                penalty_raw=means[1],
                penalty=means[2],
                total=means[3],
                skipped_points=skipped_pts,
                skipped_penalties=skipped_pen,
            )
        )
    return model, history


def history_to_csv(history, path) -> None:
    """Loss history as CSV: epoch, reconstruction, penalty, total."""
    lines = ["epoch,reconstruction,penalty,total"]
    for row in history:
        lines.append(
            f"{row.epoch},{row.reconstruction!r},{row.penalty!r},{row.total!r}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def refresh_priors(
    model: MixtureModel,
    data: PointCloud,
    config: TrainConfig,
    rounds: int,
    validation: PointCloud | None = None,
):
    """Data-driven prior refresh: reweight by the current decoders, retrain.

    Each round freezes the decoder parameters, replaces every prior with its
    reweighted version against that snapshot, and retrains from the current
    parameters. With a validation cloud, stops early once the held-out
    sliced W1 no longer improves. Returns (model, list of histories).
    """
    if rounds < 1:
        raise ConfigurationError("need rounds >= 1")
    histories = []
    best = None
    if validation is not None:
        best = _validation_metric(model, validation, config.seed)
    for rnd in range(rounds):
        snapshot = model.params.copy()
        model.prior_snapshot = snapshot
        model.priors = [
            dataclasses.replace(p, reweighted=True) for p in model.priors
        ]
        round_seed = int(
            np.random.SeedSequence([config.seed, rnd + 1]).generate_state(1)[0]
        )
        round_config = dataclasses.replace(config, seed=round_seed)
        model, hist = train(data, model.pou, model.arch, round_config, model=model)
        histories.append(hist)
        if validation is not None:
            metric = _validation_metric(model, validation, round_seed)
            if metric >= best:
                break
            best = metric
    return model, histories


def _validation_metric(model, validation, seed):
    cloud = sample_model(model, len(validation), seed=seed + 1)
    return sliced_w1(cloud.points, validation.points, num_projections=100, seed=seed + 2)
