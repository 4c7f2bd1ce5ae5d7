import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csifm import autodiff as ad
from csifm import training
from csifm.autodiff.gradcheck import check_gradients
from csifm.channel import ArrayGeometry, CarrierConfig, ScenarioConfig
from csifm.checkpoint import load_checkpoint, params_digest
from csifm.dataset import generate_scenario
from csifm.errors import ConfigError, ContractError, DependencyError, NumericError
from csifm.model import EncoderConfig, batch_mask
from csifm.pipeline import PipelineConfig, make_tokens, structure_target
from csifm.prior import ParamEncoderConfig
from csifm.training import (
    LossWeights,
    PretrainData,
    Pretrainer,
    StagePlan,
    TrainConfig,
    loss_con,
    loss_mae,
    loss_pa,
    loss_rel,
    loss_sa,
    run_pretraining,
    total_loss,
    train_param_encoder,
    train_stage,
    warmup_lr,
    with_epochs,
)

ENC = EncoderConfig(n_antennas=4, n_subcarriers=8, patch_len=4, dim=8, depth=1, heads=2,
                    decoder_depth=1, decoder_dim=8, decoder_heads=2)
PRIOR = ParamEncoderConfig(slot_dim=8, hidden_dim=8, global_dim=2, target_dim=8, n_slots=8)


def toy_cfg(seed=0, **kw):
    return TrainConfig(encoder=ENC, pipeline=PipelineConfig(patch_len=4), prior=PRIOR,
                       batch_size=8, struct_hidden=8, seed=seed, **kw)


def toy_data(n=24, seed=0):
    lo = CarrierConfig(3.5e9, 5e6, 8, 4)
    hi = CarrierConfig(28e9, 5e6, 8, 8)
    ds = generate_scenario(ScenarioConfig(0, max_paths=6), n, lo, hi,
                           ArrayGeometry.ula(4, lo.wavelength), ArrayGeometry.ula(8, hi.wavelength),
                           8, (1, 8), seed)
    return PretrainData.from_dataset(ds)


def unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


# loss arithmetic ----------------------------------------------------------------

@pytest.mark.parametrize("weights,expected", [
    (LossWeights(1.0, 0.05, 0.1), 1.15),
    (LossWeights(1.0, 0.2, 0.0), 1.2),
    (LossWeights(0.0, 0.0, 0.0), 0.0),
])
def test_total_loss_unit_components(weights, expected):
    assert abs(float(total_loss({"mae": 1.0, "sa": 1.0, "pa": 1.0}, weights)) - expected) < 1e-9


def test_total_loss_requires_active_terms():
    with pytest.raises(ContractError):
        total_loss({"mae": 1.0}, LossWeights(1.0, 0.2))


def test_inactive_terms_ignored():
    assert total_loss({"mae": 2.0}, LossWeights(1.0, 0.0, 0.0)) == 2.0


def test_mae_single_token():
    e = np.array([[[1.0, -2.0, 0.5, 3.0]]])
    assert loss_mae(np.zeros_like(e), e, 1.0).item() == pytest.approx(float(np.sum(e ** 2)), abs=1e-12)
    assert loss_mae(e, e, 1.0).item() == 0.0


def test_mae_sigma_scaling():
    rng = np.random.default_rng(0)
    x, xh = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3, 4))
    assert loss_mae(xh, x, 2.0).item() == pytest.approx(loss_mae(xh, x, 1.0).item() / 4, rel=1e-12)


def test_mae_needs_masked_tokens():
    with pytest.raises(ContractError):
        loss_mae(np.zeros((1, 0, 4)), np.zeros((1, 0, 4)), 1.0)


def test_sa_unit_offset():
    s = np.random.default_rng(0).random(32)
    assert loss_sa(s + 0.3, s, 0.3).item() == pytest.approx(1.0, abs=1e-12)
    assert loss_sa(s, s, 0.3).item() == 0.0


def test_sa_gradient_closed_form_and_fd():
    rng = np.random.default_rng(1)
    s = rng.random(12)
    s_hat = ad.Tensor(rng.random(12), requires_grad=True)
    ad.backward(loss_sa(s_hat, s, 0.4))
    np.testing.assert_allclose(s_hat.grad, 2 * (s_hat.data - s) / (12 * 0.4 ** 2), rtol=1e-12)
    errs = check_gradients(lambda: loss_sa(s_hat, s, 0.4), {"s_hat": s_hat})
    assert errs["s_hat"] < 1e-5


def test_guard_flags_degenerate_sigma():
    s = np.ones(4)
    assert np.isfinite(loss_sa(s + 1.0, s, 0.0).item())


def test_rel_zero_when_aligned():
    t = unit(np.random.default_rng(2).normal(size=(5, 8)))
    assert abs(loss_rel(t, t, 0.5).item()) < 1e-12


def test_con_single_row():
    t = unit(np.random.default_rng(3).normal(size=(1, 8)))
    r = unit(np.random.default_rng(4).normal(size=(1, 8)))
    assert loss_con(r, t, 0.5).item() == 0.0


def test_pa_mix():
    rng = np.random.default_rng(5)
    r, t = unit(rng.normal(size=(6, 8))), unit(rng.normal(size=(6, 8)))
    rel, con, pa = loss_pa(r, t, LossWeights())
    assert pa.item() == pytest.approx(0.7 * rel.item() + 0.3 * con.item(), rel=1e-12)
    w = LossWeights()
    assert w.alpha * 1.0 + w.beta * 1.0 == pytest.approx(1.0, abs=1e-12)


def test_pa_empty_batch():
    with pytest.raises(ContractError):
        loss_pa(np.zeros((0, 4)), np.zeros((0, 4)), LossWeights())


def test_pa_gradient_reaches_r_only():
    rng = np.random.default_rng(6)
    r = ad.Tensor(unit(rng.normal(size=(4, 8))), requires_grad=True)
    t = ad.Tensor(unit(rng.normal(size=(4, 8))), requires_grad=True)
    ad.backward(loss_pa(r, t, LossWeights())[2])
    assert np.abs(r.grad).max() > 0 and t.grad is None


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000), st.floats(0.05, 2.0))
def test_losses_nonnegative(b, seed, kappa):
    rng = np.random.default_rng(seed)
    r, t = unit(rng.normal(size=(b, 4))), unit(rng.normal(size=(b, 4)))
    assert loss_rel(r, t, kappa).item() >= -1e-12
    assert loss_con(r, t, kappa).item() >= -1e-12
    x = rng.normal(size=(b, 2, 3))
    assert loss_mae(rng.normal(size=x.shape), x, 0.5).item() >= 0
    assert loss_sa(rng.normal(size=5), rng.normal(size=5), 0.5).item() >= 0


@pytest.mark.parametrize("kw", [{"mae": -1.0}, {"alpha": -0.1}, {"kappa_pa": 0.0}, {"kappa_par": -1.0}])
def test_weights_validated(kw):
    with pytest.raises(ConfigError):
        LossWeights(**kw)


# plans and schedule -------------------------------------------------------------

@pytest.mark.parametrize("ablation,sa,pa", [
    ("none", (0.2, 0.05), (0.0, 0.1)),
    ("no_sa", (0.0, 0.0), (0.0, 0.1)),
    ("no_pa", (0.2, 0.05), (0.0, 0.0)),
    ("plain_mae", (0.0, 0.0), (0.0, 0.0)),
])
def test_ablation_plans(ablation, sa, pa):
    plan = StagePlan.for_ablation(ablation)
    assert plan.names() == ["stage1", "stage2"]
    assert tuple(s.weights.sa for s in plan.stages) == sa
    assert tuple(s.weights.pa for s in plan.stages) == pa
    assert plan.needs_param == (pa[1] > 0)


def test_unknown_ablation():
    with pytest.raises(ConfigError):
        StagePlan.for_ablation("no_mae")


def test_warmup_then_constant():
    lrs = [warmup_lr(1e-3, k, 100, 0.05) for k in range(10)]
    np.testing.assert_allclose(lrs[:5], 1e-3 * np.arange(1, 6) / 5)
    assert all(v == 1e-3 for v in lrs[5:])


def test_with_epochs():
    plan = with_epochs(StagePlan.for_ablation(), stage1=3, param=2)
    assert [s.epochs for s in plan.stages] == [3, 20] and plan.param_epochs == 2


# model-level contracts ----------------------------------------------------------

def _batch(cfg, data, n=8, seed=0):
    tok = make_tokens(data.h[:n], cfg.pipeline)
    s = structure_target(data.h[:n], cfg.pipeline.mu).reshape(n, -1)
    plan = batch_mask(n, cfg.encoder.n_tokens, 0.5, np.random.default_rng(seed))
    return tok, s, plan


def _grads(pre, weights, tok, s, plan, t=None):
    parts = pre.batch_losses(tok.x, tok.rows, tok.segments, plan, s, t, weights)
    params = pre.trainable(weights)
    for p in params.values():
        p.grad = None
    ad.backward(parts["total"])
    return {k: None if p.grad is None else p.grad.copy() for k, p in params.items()}, parts


def test_plain_mae_bit_identical_to_prior_free_build():
    cfg, data = toy_cfg(), toy_data()
    tok, s, plan = _batch(cfg, data)
    w = StagePlan.for_ablation("plain_mae").stages[0].weights
    g_with, p_with = _grads(Pretrainer(cfg, with_prior=True), w, tok, s, plan)
    g_bare, p_bare = _grads(Pretrainer(cfg, with_prior=False), w, tok, s, plan)
    assert g_with.keys() == g_bare.keys()
    assert p_with["total"].item() == p_bare["total"].item()
    for k in g_with:
        assert np.array_equal(g_with[k], g_bare[k]), k


def test_mae_init_independent_of_prior():
    a, b = Pretrainer(toy_cfg(), True), Pretrainer(toy_cfg(), False)
    assert params_digest(a.mae.state_dict()) == params_digest(b.mae.state_dict())


def test_stage_weights_do_not_change_forward():
    cfg, data = toy_cfg(), toy_data()
    tok, s, plan = _batch(cfg, data)
    pre = Pretrainer(cfg)
    a = pre.batch_losses(tok.x, tok.rows, tok.segments, plan, s, None, LossWeights(1.0, 0.2))
    b = pre.batch_losses(tok.x, tok.rows, tok.segments, plan, s, None, LossWeights(1.0, 0.05))
    assert a["mae"].item() == b["mae"].item() and a["sa"].item() == b["sa"].item()


def test_teacher_receives_no_gradient():
    cfg, data = toy_cfg(), toy_data()
    teacher, _ = train_param_encoder(data.descriptors, cfg, epochs=1)
    tok, s, plan = _batch(cfg, data)
    t = teacher(data.descriptors.take(np.arange(8)))[1]
    w = StagePlan.for_ablation().stages[1].weights
    grads, parts = _grads(Pretrainer(cfg), w, tok, s, plan, t)
    assert np.isfinite(parts["pa"].item())
    assert any(k.startswith("align.") for k in grads)
    for _, p in teacher.named_parameters():
        assert not p.requires_grad and (p.grad is None or not np.any(p.grad))


def test_pa_without_teacher_rejected():
    cfg, data = toy_cfg(), toy_data()
    tok, s, plan = _batch(cfg, data)
    with pytest.raises(DependencyError):
        Pretrainer(cfg).batch_losses(tok.x, tok.rows, tok.segments, plan, s, None,
                                     LossWeights(1.0, 0.05, 0.1))


# driver -----------------------------------------------------------------------

def _tiny_plan(ablation="none"):
    return with_epochs(StagePlan.for_ablation(ablation), param=1, stage1=2, stage2=2)


def test_seeded_run_is_deterministic(tmp_path):
    data = toy_data()
    for name in ("a", "b"):
        run_pretraining(data, toy_cfg(), _tiny_plan(), tmp_path / name)
    for stage in ("param", "stage1", "stage2"):
        a = load_checkpoint(tmp_path / "a" / f"{stage}.ckpt")
        b = load_checkpoint(tmp_path / "b" / f"{stage}.ckpt")
        assert a.digest() == b.digest()


def test_stage_handoff_hash(tmp_path):
    out = run_pretraining(toy_data(), toy_cfg(), _tiny_plan(), tmp_path)
    s1, s2 = out["stages"]
    assert s2.encoder_digest_start == s1.encoder_digest_end
    assert load_checkpoint(tmp_path / "stage1.ckpt").digest("mae.encoder") == s1.encoder_digest_end


def test_resume_matches_uninterrupted(tmp_path):
    data, spec = toy_data(), _tiny_plan("no_pa").stages[0]
    spec = type(spec)(spec.name, 5, spec.weights)
    full = Pretrainer(toy_cfg())
    train_stage(full, data, spec, 1, out_dir=tmp_path / "full")
    part = Pretrainer(toy_cfg())
    train_stage(part, data, spec, 1, out_dir=tmp_path / "part", max_epochs=2)
    assert not (tmp_path / "part" / "stage1.ckpt").exists()
    resumed = Pretrainer(toy_cfg())
    train_stage(resumed, data, spec, 1, out_dir=tmp_path / "part")
    a = load_checkpoint(tmp_path / "full" / "stage1.ckpt")
    b = load_checkpoint(tmp_path / "part" / "stage1.ckpt")
    assert a.digest() == b.digest()


def test_stage2_requires_param_checkpoint(tmp_path):
    data = toy_data()
    run_pretraining(data, toy_cfg(), _tiny_plan("no_pa"), tmp_path, phases=("stage1",))
    with pytest.raises(DependencyError, match="param"):
        run_pretraining(data, toy_cfg(), _tiny_plan(), tmp_path, phases=("stage2",))


def test_stage2_requires_stage1(tmp_path):
    data = toy_data()
    run_pretraining(data, toy_cfg(), _tiny_plan(), tmp_path, phases=("param",))
    with pytest.raises(DependencyError, match="stage1"):
        run_pretraining(data, toy_cfg(), _tiny_plan(), tmp_path, phases=("stage2",))


def test_nan_aborts_with_last_good(tmp_path, monkeypatch):
    calls = {"n": 0}
    real = training.loss_mae

    def poisoned(*args):
        calls["n"] += 1
        out = real(*args)
        return out * float("nan") if calls["n"] > 3 else out

    monkeypatch.setattr(training, "loss_mae", poisoned)
    spec = StagePlan.for_ablation("plain_mae").stages[0]
    with pytest.raises(NumericError, match="stage1.last.ckpt"):
        train_stage(Pretrainer(toy_cfg()), toy_data(), spec, 1, out_dir=tmp_path)


def test_metrics_log(tmp_path):
    out = run_pretraining(toy_data(), toy_cfg(), _tiny_plan(), tmp_path)
    rows = (tmp_path / "metrics.csv").read_text().splitlines()
    assert rows[0].startswith("stage,epoch,loss_total")
    assert len(rows) == 1 + 1 + 2 + 2
    assert len(out["metrics"].series("stage2", "loss_pa")) == 2
    assert out["metrics"].series("stage1", "loss_pa") == []


@pytest.mark.slow
def test_toy_mae_progress():
    lo = CarrierConfig(3.5e9, 5e6, 16, 16)
    hi = CarrierConfig(28e9, 5e6, 16, 8)
    ds = generate_scenario(ScenarioConfig(0, max_paths=6), 256, lo, hi,
                           ArrayGeometry.ula(16, lo.wavelength), ArrayGeometry.ula(8, hi.wavelength),
                           8, (1,), 0)
    cfg = TrainConfig(encoder=EncoderConfig(depth=2, decoder_depth=1), prior=PRIOR, seed=0)
    spec = StagePlan.for_ablation("plain_mae").stages[0]
    res = train_stage(Pretrainer(cfg, with_prior=False), PretrainData(ds.h), spec, 1)
    series = [r["loss_mae"] for r in res.history]
    assert len(series) == 30 and series[-1] < series[0]
