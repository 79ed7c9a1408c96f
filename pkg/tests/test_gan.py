"""Adversarial objectives, the gradient penalty, and the training loop."""

import numpy as np
import pytest

from symdiv import gan, nn
from symdiv.exactdiv import f_divergence
from symdiv.funcspace import FDivGenerator, lambda_f
from symdiv.gan import (
    GanConfig,
    LossSpec,
    TrainingAborted,
    config_from_dict,
    discriminator_objective,
    empirical_lambda_nu,
    ema_vector,
    generator_objective,
    gradient_penalty,
    init_state,
    snapshot_samples,
    toy_actions,
    train,
)
from symdiv.measures import DiscreteMeasure


def tiny_config(**kw):
    base = dict(epochs=2, n_train=16, batch=8, eval_interval=1,
                eval_samples=64, init_eval_samples=64, hidden=16, seed=0)
    base.update(kw)
    return GanConfig(**base)


# ---------------------------------------------------------------------------
# config plumbing


def test_loss_spec_validation():
    with pytest.raises(ValueError):
        LossSpec(kind="hinge")
    with pytest.raises(ValueError):
        LossSpec(kind="falpha", alpha=1.0)
    with pytest.raises(ValueError):
        LossSpec(lambda2=-1.0)
    assert LossSpec(kind="wgan_gp").uses_penalty
    assert not LossSpec(kind="falpha").uses_penalty


def test_config_from_dict_round_trip():
    cfg = config_from_dict({"loss": {"kind": "wgan_gp", "lambda2": 5.0},
                            "epochs": 3, "seed": 7})
    assert cfg.loss.kind == "wgan_gp"
    assert (cfg.epochs, cfg.seed, cfg.loss.lambda2) == (3, 7, 5.0)


def test_toy_actions_shapes():
    az, ax = toy_actions(GanConfig())
    assert az.dim == 10 and ax.dim == 12
    assert az.group.order == ax.group.order == 4


# ---------------------------------------------------------------------------
# gradient penalty


def _linear_disc(a):
    rng = np.random.default_rng(0)
    layer = nn.Dense("d", a.size, 1, rng)
    layer.w.value = a.reshape(-1, 1).astype(np.float64)
    layer.b.value = np.zeros(1)
    return nn.Network([layer])


def test_gradient_penalty_zero_inside_unit_ball():
    disc = _linear_disc(np.array([0.5, 0.1]))
    pnodes = disc.make_param_nodes()
    rng = np.random.default_rng(1)
    gp = gradient_penalty(disc, pnodes, rng.standard_normal((8, 2)),
                          rng.standard_normal((8, 2)), rng)
    assert float(gp.value) == 0.0


def test_gradient_penalty_closed_form():
    # gamma = 2 x1: |grad|^2 - 1 = 3 everywhere
    disc = _linear_disc(np.array([2.0, 0.0]))
    pnodes = disc.make_param_nodes()
    rng = np.random.default_rng(2)
    gp = gradient_penalty(disc, pnodes, rng.standard_normal((8, 2)),
                          rng.standard_normal((8, 2)), rng)
    assert abs(float(gp.value) - 3.0) <= 1e-12


def test_gradient_penalty_parameter_gradcheck():
    rng = np.random.default_rng(3)
    disc = nn.Network([nn.Dense("d1", 2, 6, rng), nn.Activation("tanh"),
                       nn.Dense("d2", 6, 1, rng)])
    xr = rng.standard_normal((5, 2))
    xf = rng.standard_normal((5, 2))

    def penalty_at(vec):
        disc.set_param_vector(vec)
        pn = disc.make_param_nodes()
        return float(gradient_penalty(disc, pn, xr, xf,
                                      np.random.default_rng(9)).value)

    vec0 = disc.param_vector()
    pn = disc.make_param_nodes()
    gp = gradient_penalty(disc, pn, xr, xf, np.random.default_rng(9))
    grads = nn.backward(gp, list(pn.values()))
    flat = np.concatenate([grads[pn[p.name].serial].value.reshape(-1)
                           for p in disc.params])
    h = 1e-5
    num = np.zeros_like(vec0)
    for i in range(vec0.size):
        vp, vm = vec0.copy(), vec0.copy()
        vp[i] += h
        vm[i] -= h
        num[i] = (penalty_at(vp) - penalty_at(vm)) / (2 * h)
    disc.set_param_vector(vec0)
    denom = max(np.max(np.abs(flat)), np.max(np.abs(num)), 1e-8)
    assert np.max(np.abs(flat - num)) / denom <= 1e-3


def test_two_sided_penalty_closed_forms():
    # gamma = 2 x1: (|grad| - 1)^2 = 1 everywhere
    rng = np.random.default_rng(11)
    xr, xf = rng.standard_normal((8, 2)), rng.standard_normal((8, 2))
    disc = _linear_disc(np.array([2.0, 0.0]))
    gp = gan.gradient_penalty_two_sided(disc, disc.make_param_nodes(), xr, xf,
                                        np.random.default_rng(1))
    assert abs(float(gp.value) - 1.0) <= 1e-6
    # slopes below one are penalized too, unlike the one-sided form
    disc = _linear_disc(np.array([0.5, 0.0]))
    gp = gan.gradient_penalty_two_sided(disc, disc.make_param_nodes(), xr, xf,
                                        np.random.default_rng(1))
    assert abs(float(gp.value) - 0.25) <= 1e-6


def test_two_sided_penalty_parameter_gradcheck():
    rng = np.random.default_rng(12)
    disc = nn.Network([nn.Dense("d1", 2, 5, rng), nn.Activation("tanh"),
                       nn.Dense("d2", 5, 1, rng)])
    xr = rng.standard_normal((4, 2))
    xf = rng.standard_normal((4, 2))

    def penalty_at(vec):
        disc.set_param_vector(vec)
        pn = disc.make_param_nodes()
        return float(gan.gradient_penalty_two_sided(
            disc, pn, xr, xf, np.random.default_rng(9)).value)

    vec0 = disc.param_vector()
    pn = disc.make_param_nodes()
    gp = gan.gradient_penalty_two_sided(disc, pn, xr, xf, np.random.default_rng(9))
    grads = nn.backward(gp, list(pn.values()))
    flat = np.concatenate([grads[pn[p.name].serial].value.reshape(-1)
                           for p in disc.params])
    h = 1e-5
    num = np.zeros_like(vec0)
    for i in range(vec0.size):
        vp, vm = vec0.copy(), vec0.copy()
        vp[i] += h
        vm[i] -= h
        num[i] = (penalty_at(vp) - penalty_at(vm)) / (2 * h)
    disc.set_param_vector(vec0)
    denom = max(np.max(np.abs(flat)), np.max(np.abs(num)), 1e-8)
    assert np.max(np.abs(flat - num)) / denom <= 1e-3


def test_penalty_dispatch_by_loss_kind():
    assert gan.penalty_for(LossSpec(kind="wgan_gp")) is gan.gradient_penalty_two_sided
    assert gan.penalty_for(LossSpec(kind="lipalpha")) is gan.gradient_penalty


def test_gradient_penalty_shape_mismatch():
    disc = _linear_disc(np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        gradient_penalty(disc, disc.make_param_nodes(), np.zeros((4, 2)),
                         np.zeros((3, 2)), np.random.default_rng(0))


# ---------------------------------------------------------------------------
# objectives


def test_zero_discriminator_objectives_vanish():
    zero = nn.constant(np.zeros((6, 1)))
    for kind in ("wgan_gp", "falpha", "lipalpha"):
        spec = LossSpec(kind=kind, alpha=2.0)
        assert abs(float(discriminator_objective(spec, zero, zero).value)) <= 1e-12
        assert abs(float(generator_objective(spec, zero).value)) <= 1e-12


def test_lipalpha_constant_discriminator_objective_zero():
    for c in (-2.0, 0.0, 3.7):
        vals = nn.constant(np.full((6, 1), c))
        spec = LossSpec(kind="lipalpha", alpha=2.0)
        assert abs(float(discriminator_objective(spec, vals, vals).value)) <= 1e-9


def test_empirical_lambda_matches_shift_functional():
    # the batch objective with the tilted conjugate equals the shift
    # functional of the untilted generator on the empirical measure
    rng = np.random.default_rng(4)
    spec = LossSpec(kind="lipalpha", alpha=2.0)
    gen = FDivGenerator("alpha", 2.0)
    gamma = rng.standard_normal(8) * 1.5
    nu = empirical_lambda_nu(spec, gamma)
    batch_val = nu + float(np.mean(gan._centered_conjugate_vals(spec, gamma - nu)))
    ref, _ = lambda_f(gen, gamma, DiscreteMeasure(np.full(8, 1 / 8)))
    assert abs(batch_val - ref) <= 1e-8


def test_falpha_objective_recovers_divergence_at_witness():
    # empirical two-point surrogate: at the optimal discriminator the
    # variational objective equals the alpha-divergence
    gen = FDivGenerator("alpha", 2.0)
    q = np.array([0.75, 0.25])
    p = np.array([0.5, 0.5])
    tilt = float(gen.f_prime(1.0))
    gamma_star = gen.f_prime(q / p) - tilt  # tilted witness
    # batches whose empirical laws are exactly q and p
    real_vals = nn.constant(np.array([gamma_star[0]] * 3 + [gamma_star[1]]).reshape(-1, 1))
    fake_vals = nn.constant(np.array([gamma_star[0], gamma_star[1]]).reshape(-1, 1))
    spec = LossSpec(kind="falpha", alpha=2.0)
    obj = float(discriminator_objective(spec, real_vals, fake_vals).value)
    expected = f_divergence(DiscreteMeasure(q), DiscreteMeasure(p), gen).value
    assert abs(obj - expected) <= 1e-12


def test_centered_conjugate_node_matches_vals():
    spec = LossSpec(kind="lipalpha", alpha=3.0)
    y = np.linspace(-2, 2, 9).reshape(3, 3)
    node = gan._centered_conjugate_node(spec, nn.constant(y))
    assert np.allclose(node.value, gan._centered_conjugate_vals(spec, y), atol=1e-12)


def test_invariant_discriminator_blind_to_augmentation():
    # sample-level mode-collapse identity: an invariant discriminator's
    # objective is unchanged when the fake batch is group-augmented
    from symdiv.measures import SampleSet, augment_samples

    cfg = tiny_config()
    state = init_state(cfg)
    rng = np.random.default_rng(5)
    xr = state.train_set.data[:8]
    xf = rng.standard_normal((8, 12)) * 3.0
    aug = augment_samples(SampleSet(xf), state.action_x, rng).data
    pn = state.discriminator.make_param_nodes()
    spec = LossSpec(kind="lipalpha", alpha=2.0)
    base = discriminator_objective(
        spec, state.discriminator.apply(nn.constant(xr), pn),
        state.discriminator.apply(nn.constant(xf), pn)).value
    moved = discriminator_objective(
        spec, state.discriminator.apply(nn.constant(xr), pn),
        state.discriminator.apply(nn.constant(aug), pn)).value
    assert abs(float(base) - float(moved)) <= 1e-10


# ---------------------------------------------------------------------------
# training loop


def test_zero_epochs_initial_metrics_only():
    state = train(tiny_config(epochs=0))
    assert state.history["epoch"] == [0]
    assert state.epoch == 0


def test_train_records_history_and_is_deterministic():
    a = train(tiny_config())
    b = train(tiny_config())
    assert a.history["epoch"] == [0, 1, 2]
    for key in a.history:
        assert a.history[key] == b.history[key]
    assert np.array_equal(a.generator.param_vector(), b.generator.param_vector())


def test_train_seed_changes_outcome():
    a = train(tiny_config())
    b = train(tiny_config(seed=1))
    assert not np.array_equal(a.generator.param_vector(), b.generator.param_vector())


def test_ema_used_for_sampling_only():
    cfg = tiny_config()
    state = train(cfg)
    raw = state.generator.param_vector().copy()
    _ = snapshot_samples(state, 16, np.random.default_rng(0))
    assert np.array_equal(state.generator.param_vector(), raw)  # restored
    assert not np.array_equal(ema_vector(state), raw)  # EMA lags training


def test_ema_vector_before_any_step_is_raw():
    state = init_state(tiny_config())
    assert np.array_equal(ema_vector(state), state.generator.param_vector())


def test_snapshot_shapes():
    state = init_state(tiny_config())
    s = snapshot_samples(state, 10, np.random.default_rng(1))
    assert s.data.shape == (10, 12)


def test_nan_aborts_with_snapshot():
    cfg = tiny_config()
    state = init_state(cfg)
    state.history["epoch"].append(0)  # skip the initial evaluation
    vec = state.generator.param_vector()
    vec[0] = np.nan
    state.generator.set_param_vector(vec)
    with pytest.raises(TrainingAborted) as exc:
        train(cfg, state=state)
    assert "epoch" in exc.value.snapshot


@pytest.mark.parametrize("kind", ["wgan_gp", "falpha", "lipalpha"])
def test_all_losses_train_one_epoch(kind):
    cfg = tiny_config(epochs=1, loss=LossSpec(kind=kind, alpha=2.0))
    state = train(cfg)
    assert len(state.history["epoch"]) == 2
    assert np.isfinite(state.history["loss"][-1])


def test_train_all_generator_variants():
    for variant, sym in (("vanilla", False), ("eqv", False),
                         ("ieqv", False), ("ieqv", True)):
        cfg = tiny_config(epochs=1, generator_variant=variant, sym_layer=sym)
        state = train(cfg)
        assert state.epoch == 1
