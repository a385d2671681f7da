import numpy as np
import pytest
from helpers import central_diff

from atlasae.datasets import PointCloud, gen_spiral
from atlasae.discrepancy import DiscrepancySpec, KernelSpec, mmd2_biased_grad
from atlasae.errors import ConfigurationError, NumericError
from atlasae.model import Prior, build_mixture
from atlasae.nn import (
    AdamState,
    MixtureArchitecture,
    adam_step,
    init_layer,
    layers_backward,
    layers_forward_trace,
)
from atlasae.partition import PartitionOfUnity, build_cover, kmeans_fit
from atlasae.training import (
    EpochStats,
    TrainConfig,
    _loop_seeds,
    history_to_csv,
    objective,
    partition_minibatch,
    refresh_priors,
    train,
)

MMD_SPEC = DiscrepancySpec(kind="mmd", kernel=KernelSpec("gaussian_rbf", 2.0))


def half_half_pou(dim=2, radius=50.0):
    """Two coincident balls: rho = (1/2, 1/2) everywhere inside."""
    return PartitionOfUnity(
        kind="smooth",
        centers=np.zeros((2, dim)),
        radii=np.array([radius, radius]),
        exponent=2.0,
    )


def test_partition_minibatch_indicator_is_exact_and_consumes_no_rng():
    cloud = gen_spiral(200, seed=0)
    centers, assignments = kmeans_fit(cloud, 4, seed=0)
    pou = build_cover(cloud, assignments, centers, kind="indicator")
    rng = np.random.default_rng(1)
    before = rng.bit_generator.state["state"]["state"]
    tilde, skipped = partition_minibatch(cloud.points, pou, rng)
    after = rng.bit_generator.state["state"]["state"]
    assert before == after
    assert skipped == 0
    for k in range(4):
        assert np.array_equal(tilde[k], cloud.points[assignments == k])


def test_partition_minibatch_half_probability_binomial():
    pou = half_half_pou()
    points = np.random.default_rng(2).normal(size=(4000, 2))
    tilde, skipped = partition_minibatch(points, pou, np.random.default_rng(3))
    assert skipped == 0
    for k in range(2):
        assert abs(len(tilde[k]) / 4000 - 0.5) < 0.05


def test_partition_minibatch_inclusion_frequency_matches_rho():
    # overlapping balls of unequal radii give an asymmetric rho at the probe
    pou = PartitionOfUnity(
        kind="smooth",
        centers=np.array([[0.0, 0.0], [1.0, 0.0]]),
        radii=np.array([2.0, 3.0]),
        exponent=2.0,
    )
    probe = np.array([[0.4, 0.2]])
    rho = pou.evaluate(probe[0])
    rng = np.random.default_rng(4)
    hits = np.zeros(2)
    trials = 10000
    for _ in range(trials):
        tilde, _ = partition_minibatch(probe, pou, rng)
        for k in range(2):
            hits[k] += len(tilde[k])
    assert np.abs(hits / trials - rho).max() < 0.02
    # expected total multiplicity of a covered point is sum_k rho_k = 1
    assert abs(hits.sum() / trials - 1.0) < 0.03


def test_partition_minibatch_skips_uncovered():
    pou = PartitionOfUnity(
        kind="smooth", centers=np.zeros((1, 2)), radii=np.array([1.0]), exponent=2.0
    )
    points = np.array([[0.1, 0.0], [50.0, 0.0]])
    tilde, skipped = partition_minibatch(points, pou, np.random.default_rng(5))
    assert skipped == 1
    assert len(tilde[0]) == 1


def identity_autoencoder(shift=(0.0, 0.0), h=0.0):
    """K = 1 mixture computing Q(x) = x and G(z) = z + shift exactly."""
    arch = MixtureArchitecture(2, 2, (4,), 1)
    pou = PartitionOfUnity(
        kind="indicator", centers=np.zeros((1, 2)), radii=np.array([100.0])
    )
    model = build_mixture(
        arch, pou, np.array([1.0]), h, Prior("std_gaussian"), seed=0
    )
    eye = np.eye(2)
    model.params.view("enc.trunk0.W")[:] = np.vstack([eye, -eye])
    model.params.view("enc.trunk0.b")[:] = 0.0
    model.params.view("enc.head0.W")[:] = np.hstack([eye, -eye])
    model.params.view("enc.head0.b")[:] = 0.0
    model.params.view("dec.head0.W")[:] = np.vstack([eye, -eye])
    model.params.view("dec.head0.b")[:] = np.concatenate([shift, [-s for s in shift]])
    model.params.view("dec.trunk0.W")[:] = np.hstack([eye, -eye])
    model.params.view("dec.trunk0.b")[:] = 0.0
    return model


def test_objective_vanishes_for_perfect_autoencoder():
    model = identity_autoencoder()
    x = np.random.default_rng(6).normal(size=(8, 2))
    lam = np.array([1e-30])
    priors_z = [np.random.default_rng(7).standard_normal((8, 2))]
    picks = [np.arange(8)]
    noise = [np.zeros((8, 2))]
    total, recon, praw, pw, grads, _ = objective(
        model, lam, MMD_SPEC, [x], priors_z, picks, noise
    )
    assert recon < 1e-24
    assert total < 1e-12


def test_objective_single_point_reconstruction_term():
    model = identity_autoencoder(shift=(1.0, 0.0))
    x = np.array([[0.3, -0.7]])
    total, recon, praw, pw, grads, skipped = objective(
        model, np.array([10.0]), MMD_SPEC, [x], [None], [None], [None]
    )
    assert abs(recon - 1.0) < 1e-12
    assert pw == 0.0
    assert skipped == 1  # single point: penalty skipped


def test_objective_empty_cluster_contributes_zero():
    model = identity_autoencoder()
    total, recon, praw, pw, grads, _ = objective(
        model, np.array([10.0]), MMD_SPEC, [np.zeros((0, 2))], [None], [None], [None]
    )
    assert total == 0.0
    assert (grads.values == 0.0).all()


@pytest.mark.parametrize("seed", [0, 1])
def test_objective_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    arch = MixtureArchitecture(2, 1, (5,), 2)
    pou = half_half_pou()
    model = build_mixture(
        arch, pou, np.array([0.6, 0.4]), 0.01, Prior("std_gaussian"), seed=seed + 30
    )
    tilde = [rng.normal(size=(2, 2)), rng.normal(size=(3, 2))]
    priors_z = [rng.standard_normal((2, 1)), rng.standard_normal((3, 1))]
    picks = [np.array([1, 0]), np.array([2, 0, 1])]
    noise = [rng.standard_normal((2, 1)), rng.standard_normal((3, 1))]
    lam = np.array([100.0, 100.0])

    _, _, _, _, grads, _ = objective(
        model, lam, MMD_SPEC, tilde, priors_z, picks, noise
    )

    def total_of():
        value, *_ = objective(model, lam, MMD_SPEC, tilde, priors_z, picks, noise)
        return value

    numeric = central_diff(total_of, model.params.values)
    scale = np.maximum(np.abs(grads.values), np.abs(numeric))
    gap = np.abs(grads.values - numeric)
    assert (gap <= 1e-7 + 1e-3 * scale).all()


def spiral_setup(n=300, clusters=4, seed=0):
    cloud = gen_spiral(n, seed=seed)
    centers, assignments = kmeans_fit(cloud, clusters, seed=seed)
    pou = build_cover(cloud, assignments, centers, exponent=10.0)
    arch = MixtureArchitecture(2, 1, (16,), clusters)
    return cloud, pou, arch


def test_train_zero_epochs_returns_initialized_model():
    cloud, pou, arch = spiral_setup()
    config = TrainConfig(penalty=MMD_SPEC, epochs=0, seed=11)
    model, history = train(cloud, pou, arch, config)
    assert history == []
    init_seed, _ = _loop_seeds(11)
    from atlasae.partition import mixture_weights

    reference = build_mixture(
        arch, pou, mixture_weights(pou, cloud), config.bandwidth, config.prior,
        seed=init_seed,
    )
    assert np.array_equal(model.params.values, reference.params.values)


def test_train_deterministic_and_decomposition():
    cloud, pou, arch = spiral_setup()
    config = TrainConfig(
        penalty=MMD_SPEC, lam=100.0, epochs=3, batch_size=64, seed=12
    )
    model_a, hist_a = train(cloud, pou, arch, config)
    model_b, hist_b = train(cloud, pou, arch, config)
    assert np.array_equal(model_a.params.values, model_b.params.values)
    assert hist_a == hist_b
    for row in hist_a:
        assert abs(row.total - (row.reconstruction + 100.0 * row.penalty_raw)) < 1e-9
        assert abs(row.penalty - 100.0 * row.penalty_raw) < 1e-9


def test_train_loss_decreases_on_spiral():
    cloud, pou, arch = spiral_setup(n=400, clusters=4, seed=2)
    config = TrainConfig(
        penalty=MMD_SPEC, lam=100.0, epochs=40, batch_size=64, seed=13
    )
    model, history = train(cloud, pou, arch, config)
    assert history[-1].reconstruction < history[0].reconstruction
    assert history[-1].total < history[0].total


def test_train_loss_history_stays_stable():
    # beyond warmup, epoch-mean total loss never exceeds 1.5x its value
    # twenty epochs earlier
    cloud, pou, arch = spiral_setup(n=400, clusters=4, seed=5)
    config = TrainConfig(
        penalty=MMD_SPEC, lam=100.0, epochs=60, batch_size=64, seed=31
    )
    _, history = train(cloud, pou, arch, config)
    totals = [row.total for row in history]
    for epoch in range(30, len(totals)):
        assert totals[epoch] <= 1.5 * totals[max(1, epoch - 20)]


def test_train_aborts_on_non_finite_loss():
    cloud, pou, arch = spiral_setup()
    config = TrainConfig(penalty=MMD_SPEC, epochs=1, seed=14)
    poisoned, _ = train(cloud, pou, arch, dataclasses_replace_epochs(config, 0))
    poisoned.params.view("enc.trunk0.W")[0, 0] = np.inf
    with np.errstate(invalid="ignore"), pytest.raises(NumericError) as excinfo:
        train(cloud, pou, arch, config, model=poisoned)
    assert excinfo.value.component == "reconstruction"
    assert excinfo.value.step == 0


def dataclasses_replace_epochs(config, epochs):
    import dataclasses

    return dataclasses.replace(config, epochs=epochs)


def test_history_csv(tmp_path):
    rows = [EpochStats(0, 1.5, 0.25, 2.5, 4.0)]
    path = tmp_path / "loss.csv"
    history_to_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,reconstruction,penalty,total"
    assert lines[1].startswith("0,1.5,2.5,4.0")
    history_to_csv([], tmp_path / "empty.csv")
    assert (tmp_path / "empty.csv").read_text() == "epoch,reconstruction,penalty,total\n"


def reference_ldmae_run(cloud, pou, arch, config):
    """Plain single-pair training loop written without the mixture machinery.

    Mirrors the documented RNG protocol (init stream, then per step: epoch
    permutation, subsample picks, prior draws, encoder noise) so its
    trajectory must agree bit-for-bit with the trainer at K = 1.
    """
    init_seed, loop_seed = _loop_seeds(config.seed)
    rng = np.random.default_rng(init_seed)
    dims_enc = [arch.ambient_dim, arch.hidden[0], arch.latent_dim]
    dims_dec = [arch.latent_dim, arch.hidden[0], arch.ambient_dim]
    enc = [list(init_layer(rng, dims_enc[0], dims_enc[1])) + ["relu"]]
    enc.append(list(init_layer(rng, dims_enc[1], dims_enc[2])) + ["identity"])
    dec = [list(init_layer(rng, dims_dec[0], dims_dec[1])) + ["relu"]]
    dec.append(list(init_layer(rng, dims_dec[1], dims_dec[2])) + ["identity"])
    enc = [tuple(layer) for layer in enc]
    dec = [tuple(layer) for layer in dec]

    flat = np.concatenate(
        [w.reshape(-1) for w, b, _ in enc + dec]
        + [b for _, b, _ in enc + dec]
    )
    # rebuild parameter aliasing exactly like the mixture layout:
    # enc trunk, enc head, dec head, dec trunk with W before b per layer
    from atlasae.nn import ParamStore

    segments = []
    for tag, (w, b, _) in zip(
        ["enc.trunk0", "enc.head0", "dec.head0", "dec.trunk0"], enc + dec
    ):
        segments.append((f"{tag}.W", w))
        segments.append((f"{tag}.b", b))
    params = ParamStore(segments)
    enc_layers = [
        (params.view("enc.trunk0.W"), params.view("enc.trunk0.b"), "relu"),
        (params.view("enc.head0.W"), params.view("enc.head0.b"), "identity"),
    ]
    dec_layers = [
        (params.view("dec.head0.W"), params.view("dec.head0.b"), "relu"),
        (params.view("dec.trunk0.W"), params.view("dec.trunk0.b"), "identity"),
    ]
    state = AdamState.fresh(params, lr=config.lr)
    rng = np.random.default_rng(loop_seed)
    n = len(cloud)
    sqrt_h = np.sqrt(config.bandwidth)
    losses = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            batch = cloud.points[order[lo : lo + config.batch_size]]
            mk = len(batch)
            picks = rng.integers(0, mk, mk)
            priors_z = rng.standard_normal((mk, arch.latent_dim))
            noise = rng.standard_normal((mk, arch.latent_dim))

            grads = params.zeros_like()
            enc_grads = [
                (grads.view("enc.trunk0.W"), grads.view("enc.trunk0.b")),
                (grads.view("enc.head0.W"), grads.view("enc.head0.b")),
            ]
            dec_grads = [
                (grads.view("dec.head0.W"), grads.view("dec.head0.b")),
                (grads.view("dec.trunk0.W"), grads.view("dec.trunk0.b")),
            ]
            z, enc_trace = layers_forward_trace(enc_layers, batch)
            xhat, dec_trace = layers_forward_trace(dec_layers, z)
            diff = xhat - batch
            recon = float((diff * diff).sum()) / mk
            dz = layers_backward(dec_layers, dec_trace, 2.0 / mk * diff, dec_grads)
            layers_backward(enc_layers, enc_trace, dz, enc_grads)

            zq, pen_trace = layers_forward_trace(enc_layers, batch[picks])
            encoded = zq + sqrt_h * noise
            lam = float(config.lam)
            value, d_enc = mmd2_biased_grad(MMD_SPEC.kernel, priors_z, encoded)
            layers_backward(enc_layers, pen_trace, lam * d_enc, enc_grads)
            adam_step(params, grads, state)
            losses.append(recon + lam * value)
    return params.values, losses


def test_trainer_at_k1_matches_plain_ldmae_bit_exactly():
    cloud = gen_spiral(120, seed=21)
    centers, assignments = kmeans_fit(cloud, 1, seed=21)
    pou = build_cover(cloud, assignments, centers, kind="indicator")
    arch = MixtureArchitecture(2, 1, (8,), 1)
    config = TrainConfig(
        penalty=MMD_SPEC, lam=100.0, epochs=2, batch_size=40, seed=22
    )
    model, history = train(cloud, pou, arch, config)
    ref_values, ref_losses = reference_ldmae_run(cloud, pou, arch, config)
    assert np.array_equal(model.params.values, ref_values)
    steps_per_epoch = len(ref_losses) // config.epochs
    per_epoch = [
        float(np.mean(ref_losses[e * steps_per_epoch : (e + 1) * steps_per_epoch]))
        for e in range(config.epochs)
    ]
    assert np.array_equal([row.total for row in history], per_epoch)


def blob_setup(seed=3):
    """Two tight blobs whose cover the shift-identity decoders land inside."""
    rng = np.random.default_rng(seed)
    shifts = np.array([[-2.0, 0.0], [2.0, 0.0]])
    pts = np.vstack(
        [rng.normal(scale=0.3, size=(150, 2)) + shift for shift in shifts]
    )
    cloud = PointCloud(pts)
    centers, assignments = kmeans_fit(cloud, 2, seed=seed)
    pou = build_cover(cloud, assignments, centers, exponent=10.0)
    arch = MixtureArchitecture(2, 2, (4,), 2)
    model = build_mixture(
        arch,
        pou,
        np.array([0.5, 0.5]),
        0.01,
        Prior("truncated_normal", radius=1.0),
        seed=seed,
    )
    eye = np.eye(2)
    for k in range(2):
        model.params.view(f"dec.head{k}.W")[:] = np.vstack([eye, -eye])
        model.params.view(f"dec.head{k}.b")[:] = np.concatenate(
            [pou.centers[k], -pou.centers[k]]
        )
        model.params.view(f"enc.head{k}.W")[:] = np.hstack([eye, -eye])
        model.params.view(f"enc.head{k}.b")[:] = -pou.centers[k]
    model.params.view("dec.trunk0.W")[:] = np.hstack([eye, -eye])
    model.params.view("dec.trunk0.b")[:] = 0.0
    model.params.view("enc.trunk0.W")[:] = np.vstack([eye, -eye])
    model.params.view("enc.trunk0.b")[:] = 0.0
    return cloud, pou, arch, model


def test_refresh_priors_runs_requested_rounds():
    cloud, pou, arch, model = blob_setup()
    config = TrainConfig(
        penalty=MMD_SPEC, lam=100.0, epochs=2, batch_size=64, seed=23, lr=1e-4,
        prior=Prior("truncated_normal", radius=1.0),
    )
    model, _ = train(cloud, pou, arch, config, model=model)
    before = model.params.values.copy()
    model, histories = refresh_priors(model, cloud, config, rounds=2)
    assert len(histories) == 2
    assert all(len(h) == 2 for h in histories)
    assert all(p.reweighted for p in model.priors)
    assert not np.array_equal(model.params.values, before)


def test_refresh_priors_rejects_zero_rounds():
    cloud, pou, arch = spiral_setup(n=100, clusters=2, seed=4)
    config = TrainConfig(penalty=MMD_SPEC, epochs=1, seed=24)
    model, _ = train(cloud, pou, arch, config)
    with pytest.raises(ConfigurationError):
        refresh_priors(model, cloud, config, rounds=0)


def test_train_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(penalty=MMD_SPEC, lam=0.0)
    with pytest.raises(ConfigurationError):
        TrainConfig(penalty=MMD_SPEC, batch_size=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(penalty=MMD_SPEC, epochs=-1)
    with pytest.raises(ConfigurationError):
        TrainConfig(penalty=MMD_SPEC, cost="absolute")
    config = TrainConfig(penalty=MMD_SPEC, lam=(1.0, 2.0))
    assert np.array_equal(config.lam_vector(2), [1.0, 2.0])
    with pytest.raises(ConfigurationError):
        config.lam_vector(3)
