import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csifm import autodiff as ad
from csifm.autodiff.gradcheck import check_gradients
from csifm.channel import ArrayGeometry, CarrierConfig, MultipathParamSet, ScenarioConfig
from csifm.config import load_config
from csifm.dataset import generate_scenario
from csifm.errors import ContractError
from csifm.prior import (
    AugmentConfig,
    DescriptorStats,
    ParamEncoder,
    ParamEncoderConfig,
    ParamInput,
    StructureHead,
    augment,
    build_descriptor,
    build_descriptors,
    contrastive_loss_param,
)
from csifm.training import TrainConfig, loss_sa, train_param_encoder

CFG = ParamEncoderConfig(slot_dim=16, hidden_dim=16, global_dim=4, target_dim=8, n_slots=8)


def params(n=3, seed=0):
    rng = np.random.default_rng(seed)
    return MultipathParamSet(rng.normal(size=n) + 1j * rng.normal(size=n),
                             np.sort(rng.uniform(1e-7, 5e-7, n)), rng.uniform(0, np.pi, n),
                             rng.uniform(-np.pi, np.pi, n), 90.0, True, np.zeros(2))


def random_input(batch=4, slots=8, seed=0):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(batch, slots, 5))
    valid = rng.random((batch, slots)) < 0.6
    valid[:, 0] = True
    q[~valid] = 0
    return ParamInput(q, valid, rng.normal(size=(batch, 1)))


# descriptors ------------------------------------------------------------------

def test_earliest_path_zero_delay():
    v = build_descriptor(params(4))
    assert v.q[0, np.argmin(params(4).delays), 0] == 0.0
    assert np.all(v.q[0, :, 0] >= 0)


@pytest.mark.parametrize("theta,phi,u", [(0.0, 0.3, [0, 0, 1]), (np.pi / 2, np.pi / 2, [0, 1, 0])])
def test_direction_slots(theta, phi, u):
    p = MultipathParamSet(np.array([1 + 0j]), np.array([1e-7]), np.array([theta]),
                          np.array([phi]), 80.0, True, np.zeros(2))
    np.testing.assert_allclose(build_descriptor(p).q[0, 0, 2:], u, atol=1e-15)


def test_padding_slots_zero_and_invalid():
    v = build_descriptor(params(3), n_slots=8)
    assert v.q.shape == (1, 8, 5)
    assert v.valid[0].tolist() == [True] * 3 + [False] * 5
    assert np.all(v.q[0, 3:] == 0)


def test_stats_normalisation_keeps_zero_delay():
    ds = generate_scenario(ScenarioConfig(0), 40, CarrierConfig(3.5e9, 5e6, 8, 4),
                           CarrierConfig(28e9, 5e6, 8, 8), ArrayGeometry.ula(4, 0.0857),
                           ArrayGeometry.ula(8, 0.0107), 16, (1,), 0)
    stats = DescriptorStats.fit(ds.delays, ds.gains, ds.valid, ds.path_loss_db)
    v = build_descriptors(ds.delays, ds.gains, ds.elevations, ds.azimuths, ds.valid,
                          ds.path_loss_db, stats)
    earliest = np.argmin(np.where(ds.valid, ds.delays, np.inf), axis=1)
    assert np.all(v.q[np.arange(40), earliest, 0] == 0)
    assert abs(v.g.mean()) < 1e-9


def test_empty_set_rejected():
    with pytest.raises(ContractError):
        build_descriptors(np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 2)),
                          np.zeros((1, 2), bool), [80.0])


# augmentation -----------------------------------------------------------------

def test_identity_augmentation():
    v = random_input()
    out = augment(v, np.random.default_rng(0), AugmentConfig.identity())
    np.testing.assert_array_equal(out.q, v.q)
    np.testing.assert_array_equal(out.valid, v.valid)


def test_single_path_permutation_unchanged():
    v = build_descriptor(params(1), n_slots=4)
    cfg = AugmentConfig(p_permute=1.0, p_drop_apply=0, p_mask_flip=0, p_jitter=0, p_global_dropout=0)
    out = augment(v, np.random.default_rng(0), cfg)
    np.testing.assert_array_equal(out.q, v.q)


def test_drop_binomial_mean():
    v = build_descriptor(params(4), n_slots=4)
    cfg = AugmentConfig(p_permute=0, p_drop_apply=1.0, p_drop=0.5, p_mask_flip=0.0, p_jitter=0,
                        p_global_dropout=0)
    rng = np.random.default_rng(0)
    survivors = [augment(v, rng, cfg).valid.sum() - 1 for _ in range(10_000)]
    assert abs(np.mean(survivors) - 1.5) < 0.1


def test_drop_never_removes_strongest():
    v = build_descriptor(params(5, seed=3), n_slots=5)
    strongest = np.argmax(v.q[0, :, 1])
    cfg = AugmentConfig(p_permute=0, p_drop_apply=1.0, p_drop=1.0, p_mask_flip=0.0, p_jitter=0,
                        p_global_dropout=0)
    out = augment(v, np.random.default_rng(0), cfg)
    assert out.valid[0].tolist() == [i == strongest for i in range(5)]


def test_mask_flip_leaves_ghost_slot():
    v = build_descriptor(params(4), n_slots=4)
    cfg = AugmentConfig(p_permute=0, p_drop_apply=1.0, p_drop=1.0, p_mask_flip=1.0, p_jitter=0,
                        p_global_dropout=0)
    out = augment(v, np.random.default_rng(0), cfg)
    assert out.valid.all()
    assert (np.abs(out.q[0]).sum(axis=1) == 0).sum() == 3


def test_jitter_keeps_unit_direction():
    cfg = AugmentConfig(p_permute=0, p_drop_apply=0, p_jitter=1.0, p_global_dropout=0)
    v = build_descriptor(params(6), n_slots=8)
    out = augment(v, np.random.default_rng(1), cfg)
    norms = np.linalg.norm(out.q[0, :6, 2:], axis=-1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-12)
    assert not np.array_equal(out.q, v.q)


def test_global_dropout():
    cfg = AugmentConfig(p_permute=0, p_drop_apply=0, p_jitter=0, p_global_dropout=1.0)
    assert np.all(augment(random_input(), np.random.default_rng(0), cfg).g == 0)


# encoder ----------------------------------------------------------------------

@pytest.fixture
def encoder():
    return ParamEncoder(CFG, np.random.default_rng(0))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_permutation_invariance(seed):
    enc = ParamEncoder(CFG, np.random.default_rng(0))
    v = random_input(seed=seed)
    perm = np.random.default_rng(seed + 1).permutation(8)
    h1, t1 = enc(v)
    h2, t2 = enc(ParamInput(v.q[:, perm], v.valid[:, perm], v.g))
    np.testing.assert_allclose(h1.data, h2.data, atol=1e-10)
    np.testing.assert_allclose(t1.data, t2.data, atol=1e-10)


def test_padding_invariance(encoder):
    v = random_input()
    padded = ParamInput(np.concatenate([v.q, np.zeros((4, 5, 5))], axis=1),
                        np.concatenate([v.valid, np.zeros((4, 5), bool)], axis=1), v.g)
    np.testing.assert_allclose(encoder(v)[1].data, encoder(padded)[1].data, atol=1e-12)


def test_unit_norm_targets(encoder):
    t = encoder(random_input(batch=16, seed=4))[1].data
    np.testing.assert_allclose(np.linalg.norm(t, axis=-1), 1.0, atol=1e-12)


def test_duplicate_path_finite_and_deterministic(encoder):
    v = random_input(batch=1)
    v.q[0, 1] = v.q[0, 0]
    v.valid[0, 1] = True
    a, b = encoder(v)[1].data, encoder(v)[1].data
    assert np.isfinite(a).all() and np.array_equal(a, b)


def test_all_invalid_rejected(encoder):
    v = random_input()
    v.valid[1] = False
    with pytest.raises(ContractError):
        encoder(v)


# contrastive loss -------------------------------------------------------------

def test_single_pair_zero_loss():
    t = np.array([[0.6, 0.8]])
    assert contrastive_loss_param(t, t, 0.07).item() == pytest.approx(0.0, abs=1e-12)


def test_orthonormal_pair_value():
    k = 0.07
    t = np.eye(2)
    expected = -np.log(np.exp(1 / k) / (np.exp(1 / k) + 2.0))
    assert contrastive_loss_param(t, t, k).item() == pytest.approx(expected, rel=1e-12)


def test_joint_reordering_invariance():
    rng = np.random.default_rng(0)
    t1 = rng.normal(size=(5, 4))
    t2 = rng.normal(size=(5, 4))
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 /= np.linalg.norm(t2, axis=1, keepdims=True)
    perm = rng.permutation(5)
    a = contrastive_loss_param(t1, t2).item()
    b = contrastive_loss_param(t1[perm], t2[perm]).item()
    assert a == pytest.approx(b, rel=1e-12)


def test_empty_batch_rejected():
    with pytest.raises(ContractError):
        contrastive_loss_param(np.zeros((0, 3)), np.zeros((0, 3)))


# structure head ---------------------------------------------------------------

def test_head_nonnegative():
    head = StructureHead(8, 16, np.random.default_rng(0))
    out = head(np.random.default_rng(1).normal(size=(10, 8)) * 5).data
    assert np.all(out >= 0)


def test_dead_zone():
    head = StructureHead(4, 6, np.random.default_rng(0), init_threshold=0.5)
    x = np.array([[0.5, -0.5, 0.1, -0.2, 0.0, 0.49]])
    assert np.all(head.shrink(x).data == 0)


def test_soft_threshold_values():
    head = StructureHead(4, 3, np.random.default_rng(0), init_threshold=0.25)
    out = head.shrink(np.array([[1.0, -1.0, 0.3]])).data
    np.testing.assert_allclose(out, [[0.75, 0.0, 0.05]], atol=1e-15)


def test_clamp_projects_thresholds():
    head = StructureHead(4, 3, np.random.default_rng(0))
    head.threshold.data[:] = [-0.1, 0.2, -3.0]
    head.clamp_()
    np.testing.assert_array_equal(head.threshold.data, [0.0, 0.2, 0.0])


def test_threshold_gradient_matches_fd():
    rng = np.random.default_rng(0)
    head = StructureHead(6, 12, rng, init_threshold=0.05)
    z0 = rng.normal(size=(3, 6))
    s = rng.random((3, 12))
    pre = np.abs(head.pre_threshold(z0).data[0])
    # thresholds half or one and a half times |x| keep every entry off the kink
    head.threshold.data[:] = pre * np.where(np.arange(12) % 2, 0.5, 1.5)
    assert pre.min() > 1e-3
    z0 = z0[:1]
    s = s[:1]

    errs = check_gradients(lambda: loss_sa(head(z0), s, 0.3), {"lambda": head.threshold}, step=1e-6)
    assert errs["lambda"] < 1e-4


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(0, 1000))
def test_sparsity_monotone_in_threshold(lo, hi, seed):
    lo, hi = min(lo, hi), max(lo, hi)
    rng = np.random.default_rng(seed)
    head = StructureHead(4, 20, np.random.default_rng(0))
    x = rng.normal(size=(2, 20))
    head.threshold.data[:] = lo
    n_lo = np.count_nonzero(head.shrink(x).data)
    head.threshold.data[:] = hi
    assert np.count_nonzero(head.shrink(x).data) <= n_lo


# training ---------------------------------------------------------------------

def _descriptors(n, seed=0):
    c = load_config()
    ds = generate_scenario(c.scenario(0), n, c.carrier_lo, c.carrier_hi, c.geometry_lo(),
                           c.geometry_hi(), 16, (8,), seed)
    stats = DescriptorStats.fit(ds.delays, ds.gains, ds.valid, ds.path_loss_db)
    return build_descriptors(ds.delays, ds.gains, ds.elevations, ds.azimuths, ds.valid,
                             ds.path_loss_db, stats)


def test_full_scale_param_epochs():
    cfg = load_config(__import__("csifm").__path__[0] + "/configs/full_scale.json")
    plan = cfg.plan()
    assert plan.param_epochs == 60
    _, hist = train_param_encoder(_descriptors(16), TrainConfig(batch_size=16), plan.param_epochs)
    assert len(hist) == 60 and [h["epoch"] for h in hist] == list(range(1, 61))


@pytest.mark.slow
def test_param_training_progress_and_alignment():
    from csifm.training import param_epoch_loss, new_param_encoder

    desc = _descriptors(512)
    before, after, pos_cos, neg_cos = [], [], [], []
    for seed in range(3):
        cfg = TrainConfig(seed=seed)
        before.append(param_epoch_loss(new_param_encoder(cfg), desc, cfg, 0.07, 0))
        enc, _ = train_param_encoder(desc, cfg, 15)
        after.append(param_epoch_loss(enc, desc, cfg, 0.07, 0))
        rng = np.random.default_rng(seed)
        with ad.no_grad():
            t1 = enc(augment(desc, rng, cfg.augment))[1].data
            t2 = enc(augment(desc, rng, cfg.augment))[1].data
        pos_cos.append(np.mean(np.sum(t1 * t2, axis=1)))
        sim = t1 @ t2.T
        neg_cos.append((sim.sum() - np.trace(sim)) / (len(sim) * (len(sim) - 1)))
    assert np.mean(before) > np.mean(after)
    assert np.mean(pos_cos) > np.mean(neg_cos)


def test_trained_encoder_is_frozen():
    enc, _ = train_param_encoder(_descriptors(16), TrainConfig(batch_size=16), 1)
    assert enc.trainable_parameters() == {}
    assert all(p.grad is None for p in enc.parameters().values())
