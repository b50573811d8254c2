import numpy as np
import pytest

from lsbmp import data, nn, training
from lsbmp.data import DynamicsDataset
from lsbmp.training import (LatentModel, ModelBundle, TrainConfig,
                            beta_schedule, build_collision_net,
                            build_latent_model, dyn_metric_loss, gramian,
                            gramian_batch, train_collision_net,
                            train_latent_model)
from lsbmp.world import WorldConfig

SMALL_WORLD = WorldConfig(image_side=16)
SMALL_TRAIN = TrainConfig(epochs=6, batch_size=32, enc_hidden=(32, 16),
                          dec_hidden=(32,), dyn_hidden=(16, 16),
                          cc_hidden=(32, 16), cc_epochs=8, seed=3)


def linear_dynamics_model(A, B, d_z=2):
    """LatentModel whose dynamics net computes z' = A z + B u exactly."""
    W = np.vstack([np.asarray(A, dtype=float).T, np.asarray(B, dtype=float).T])
    dyn = nn.Network([nn.Dense(d_z + 2, d_z, W=W, b=np.zeros(d_z))])
    enc = nn.Network([nn.Dense(4, d_z, W=np.zeros((4, d_z)), b=np.zeros(d_z))])
    dec = nn.Network([nn.Dense(d_z + 4, 4, W=np.zeros((d_z + 4, 4)), b=np.zeros(4))])
    return LatentModel(enc, dec, dyn, d_z, 2)


# ---------------------------------------------------------------------------
# gramian
# ---------------------------------------------------------------------------


def test_gramian_identity_dynamics():
    model = linear_dynamics_model(np.eye(2), np.eye(2))
    G = gramian(model, [0.3, -0.2], [0.1, 0.0], eps=1e-3)
    assert np.max(np.abs(G - 1.001 * np.eye(2))) < 1e-12


def test_gramian_diagonal_input_matrix():
    model = linear_dynamics_model(np.eye(2), np.diag([1.0, 2.0]))
    G = gramian(model, [0.0, 0.0], [0.0, 0.0], eps=1e-3)
    assert np.max(np.abs(G - np.diag([1.001, 4.001]))) < 1e-12


def test_gramian_matches_finite_differences():
    rng = np.random.default_rng(17)
    cfg = TrainConfig(dyn_hidden=(8, 8))
    model = build_latent_model(cfg, image_side=2, rng=rng)
    z = rng.standard_normal(2) * 0.3
    u = rng.standard_normal(2) * 0.3
    G = gramian(model, z, u, eps=1e-3)

    x0 = np.concatenate([z, u])
    delta = 1e-6
    J = np.empty((2, 4))
    for j in range(4):
        e = np.zeros(4)
        e[j] = delta
        J[:, j] = (model.dynamics.forward(x0 + e)
                   - model.dynamics.forward(x0 - e)) / (2 * delta)
    AB = J[:, :2] @ J[:, 2:]
    G_fd = AB @ AB.T + 1e-3 * np.eye(2)
    assert np.max(np.abs(G - G_fd)) / np.max(np.abs(G_fd)) < 1e-3


def test_gramian_symmetric_positive_definite():
    rng = np.random.default_rng(18)
    model = build_latent_model(TrainConfig(dyn_hidden=(8,)), image_side=2, rng=rng)
    for _ in range(20):
        G = gramian(model, rng.standard_normal(2), rng.standard_normal(2), 1e-3)
        assert np.max(np.abs(G - G.T)) < 1e-9
        assert np.linalg.eigvalsh(G).min() >= 1e-3 - 1e-9


def test_gramian_batch_matches_single():
    rng = np.random.default_rng(19)
    model = build_latent_model(TrainConfig(dyn_hidden=(8, 8)), image_side=2, rng=rng)
    z = rng.standard_normal((5, 2))
    u = rng.standard_normal((5, 2))
    Gb = gramian_batch(model, z, u, 1e-3)
    for i in range(5):
        assert np.allclose(Gb[i], gramian(model, z[i], u[i], 1e-3), atol=1e-12)


def test_gramian_rejects_nonpositive_eps():
    model = linear_dynamics_model(np.eye(2), np.eye(2))
    with pytest.raises(ValueError):
        gramian(model, [0, 0], [0, 0], eps=0.0)


# ---------------------------------------------------------------------------
# metric loss
# ---------------------------------------------------------------------------


def test_metric_loss_beta_zero_is_l2():
    e = np.array([0.3, -0.4])
    out = dyn_metric_loss(np.zeros(2), e, np.diag([5.0, 9.0]), beta=0.0)
    assert out == pytest.approx(0.25, abs=1e-15)


def test_metric_loss_identity_metric():
    e = np.array([0.3, -0.4])
    assert dyn_metric_loss(np.zeros(2), e, np.eye(2), beta=1.0) == pytest.approx(0.25)


def test_metric_loss_closed_form_diag():
    out = dyn_metric_loss(np.zeros(2), np.array([0.0, 1.0]),
                          np.diag([1.0, 4.0]), beta=1.0)
    assert out == pytest.approx(0.25, abs=1e-15)


def test_metric_loss_nonnegative_zero_iff_equal():
    rng = np.random.default_rng(20)
    for _ in range(50):
        zh = rng.standard_normal(2)
        zt = rng.standard_normal(2)
        A = rng.standard_normal((2, 2))
        G = A @ A.T + 1e-3 * np.eye(2)
        beta = rng.random()
        val = dyn_metric_loss(zh, zt, G, beta)
        assert val >= 0.0
        assert dyn_metric_loss(zh, zh, G, beta) == 0.0
        if np.linalg.norm(zh - zt) > 1e-12:
            assert val > 0.0


def test_metric_loss_continuous_in_beta():
    rng = np.random.default_rng(21)
    for _ in range(50):
        e = rng.standard_normal(2)
        A = rng.standard_normal((2, 2))
        G = A @ A.T + 1e-3 * np.eye(2)
        b1, b2 = sorted(rng.random(2))
        l1 = dyn_metric_loss(np.zeros(2), e, G, b1)
        l2 = dyn_metric_loss(np.zeros(2), e, G, b2)
        bound = (b2 - b1) * (e @ e + e @ np.linalg.solve(G, e)) + 1e-12
        assert abs(l2 - l1) <= bound


def test_metric_loss_anisotropy():
    # the motivating property: with G = diag(g1, g2), g1 > g2, an error along
    # the first (cheap-to-correct) axis costs less
    G = np.diag([4.0, 1.0])
    delta = 0.3
    cheap = dyn_metric_loss(np.zeros(2), np.array([delta, 0.0]), G, beta=1.0)
    dear = dyn_metric_loss(np.zeros(2), np.array([0.0, delta]), G, beta=1.0)
    assert cheap < dear


def test_metric_loss_rejects_bad_beta():
    with pytest.raises(ValueError):
        dyn_metric_loss(np.zeros(2), np.zeros(2), np.eye(2), beta=1.5)


def test_beta_schedule_shape():
    E = 40
    vals = [beta_schedule(e, E) for e in range(E)]
    assert vals[0] == 0.0
    assert all(b2 >= b1 for b1, b2 in zip(vals, vals[1:]))
    assert vals[-1] <= 1.0
    assert vals[E // 4] == 0.0 and vals[3 * E // 4] == 1.0


# ---------------------------------------------------------------------------
# latent model training
# ---------------------------------------------------------------------------


def constant_dataset(c=0.5, n=3, T=4, side=4):
    images = np.full((n, T, side, side), c, dtype=np.float32)
    controls = np.zeros((n, T - 1, 2), dtype=np.float32)
    states = np.full((n, T, 2), 0.5, dtype=np.float32)
    env_images = np.full((n, side, side), c, dtype=np.float32)
    features = np.zeros((n, 32), dtype=np.float32)
    return DynamicsDataset(images, controls, states, env_images, features, 0,
                           WorldConfig(image_side=side))


def perfect_constant_model(c=0.5, side=4):
    n_px = side * side
    d_z = 2
    enc = nn.Network([nn.Dense(n_px, d_z, W=np.zeros((n_px, d_z)), b=np.zeros(d_z))])
    logit = float(np.log(c / (1 - c)))
    dec = nn.Network([nn.Dense(d_z + n_px, n_px, W=np.zeros((d_z + n_px, n_px)),
                               b=np.full(n_px, logit)), nn.Sigmoid()])
    dyn = nn.Network([nn.Dense(d_z + 2, d_z, W=np.zeros((d_z + 2, d_z)),
                               b=np.zeros(d_z))])
    return LatentModel(enc, dec, dyn, d_z, side)


def test_perfect_model_zero_loss_at_beta_zero():
    ds = constant_dataset()
    model = perfect_constant_model()
    cfg = TrainConfig(epochs=1, batch_size=4, seed=0)
    records = train_latent_model(model, ds, cfg)
    assert records[0].beta == 0.0
    assert records[0].total == pytest.approx(0.0, abs=1e-24)


def small_real_dataset():
    return data.collect_dynamics_dataset(8, 5, 13, SMALL_WORLD)


def test_training_loss_decreases():
    # keep beta at zero through the compared epochs, as a full-length run does
    ds = small_real_dataset()
    cfg = TrainConfig(**{**SMALL_TRAIN.to_dict(), "epochs": 20})
    model = build_latent_model(cfg, image_side=16)
    records = train_latent_model(model, ds, cfg)
    assert all(r.beta == 0.0 for r in records[:5])
    assert records[4].total < records[0].total
    assert all(np.isfinite(r.total) for r in records)


def test_training_deterministic():
    ds = small_real_dataset()
    m1 = build_latent_model(SMALL_TRAIN, image_side=16)
    m2 = build_latent_model(SMALL_TRAIN, image_side=16)
    train_latent_model(m1, ds, SMALL_TRAIN)
    train_latent_model(m2, ds, SMALL_TRAIN)
    for a, b in zip(m1.params(), m2.params()):
        assert np.array_equal(a, b)


def test_trained_dynamics_zero_control_moves_less():
    ds = small_real_dataset()
    cfg = TrainConfig(**{**SMALL_TRAIN.to_dict(), "epochs": 12})
    model = build_latent_model(cfg, image_side=16)
    train_latent_model(model, ds, cfg)
    z = model.encode(ds.images.reshape(-1, 256)[:200].astype(float))
    d0 = np.linalg.norm(model.dyn_step(z, np.zeros((len(z), 2))) - z, axis=1)
    du = np.linalg.norm(
        model.dyn_step(z, np.tile([SMALL_WORLD.u_max, 0.0], (len(z), 1))) - z, axis=1)
    assert d0.mean() < du.mean()


# ---------------------------------------------------------------------------
# collision classifier
# ---------------------------------------------------------------------------


def test_collision_training_freezes_latent_model():
    ds = data.collect_collision_dataset(12, 10, 23, SMALL_WORLD)
    model = build_latent_model(SMALL_TRAIN, image_side=16)
    before = [p.copy() for p in model.params()]
    ccnet = build_collision_net(SMALL_TRAIN, ds.features.shape[1])
    metrics = train_collision_net(ccnet, model, ds, SMALL_TRAIN)
    for a, b in zip(model.params(), before):
        assert np.array_equal(a, b)
    assert set(metrics["confusion"]) == {"TP", "FP", "TN", "FN"}
    assert sum(metrics["confusion"].values()) == metrics["n"]


def test_collision_degenerate_all_free():
    cfg_world = WorldConfig(image_side=16, n_min=0, n_max=0)
    ds = data.collect_collision_dataset(6, 10, 29, cfg_world)
    assert np.all(ds.labels == 1.0)
    model = build_latent_model(SMALL_TRAIN, image_side=16)
    ccnet = build_collision_net(SMALL_TRAIN, ds.features.shape[1])
    metrics = train_collision_net(ccnet, model, ds, SMALL_TRAIN)
    assert metrics["accuracy"] == 1.0   # biased positive fits trivially


# ---------------------------------------------------------------------------
# bundle io
# ---------------------------------------------------------------------------


def test_bundle_round_trip(tmp_path):
    model = build_latent_model(SMALL_TRAIN, image_side=16)
    cc = build_collision_net(SMALL_TRAIN, 32)
    bank = np.random.default_rng(0).standard_normal((10, 2))
    bundle = ModelBundle(model=model, collision=cc, train_config=SMALL_TRAIN,
                         world_config=SMALL_WORLD, sample_bank=bank,
                         collision_metrics={"accuracy": 0.9,
                                            "confusion": {"TP": 1, "FP": 2,
                                                          "TN": 3, "FN": 4}},
                         train_seconds=1.5)
    path = tmp_path / "model.json"
    bundle.save(path)
    loaded = ModelBundle.load(path)
    x = np.random.default_rng(1).random((3, 256))
    assert np.array_equal(loaded.model.encode(x), model.encode(x))
    assert np.array_equal(loaded.sample_bank, bank)
    assert loaded.train_config == SMALL_TRAIN
    assert loaded.world_config == SMALL_WORLD
    assert loaded.collision_metrics["confusion"]["FN"] == 4


def test_bundle_rejects_unknown_format(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "something-else"}')
    with pytest.raises(ValueError, match="format"):
        ModelBundle.load(path)


def test_divergence_reports_epoch():
    ds = constant_dataset()
    model = perfect_constant_model()
    model.encoder.params()[0][:] = 1e200    # force an overflow
    cfg = TrainConfig(epochs=2, batch_size=4, lr=1e300)
    with np.errstate(all="ignore"), pytest.raises((RuntimeError, nn.NumericError)):
        train_latent_model(model, ds, cfg)
