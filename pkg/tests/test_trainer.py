"""Trainer tests: schedule shape, optimization behavior, determinism, and the
binary checkpoint format (round trip, corruption, bitwise resume)."""

import numpy as np
import pytest

from amanet.ama import soft_revenue
from amanet.autodiff import Graph, Tensor, finite_difference_check
from amanet.menunet import config_for_setting
from amanet.settings import SettingSpec, sample
from amanet.training import (Adam, Checkpoint, NumericalError, TrainConfig,
                             Trainer, clip_gradients, desk_preset, fit,
                             fit_seeds, load, lr_schedule,
                             model_from_checkpoint, save)


def small_config(**overrides):
    base = dict(menu_size=4, menu_temperature=5.0, iterations=4,
                samples_per_iter=64, batch=32, eval_every=2, eval_samples=128,
                seed=0)
    base.update(overrides)
    return TrainConfig(**base)


def small_model_config(spec):
    return config_for_setting(spec, 4, 5.0, d=16, d_hidden=16, heads=2,
                              interaction_modules=1, conv_hidden=16,
                              init_std=0.2, boost_init_scale=0.1)


# -- learning-rate schedule ----------------------------------------------------------


def test_lr_schedule_endpoints_and_floor():
    config = small_config()
    assert lr_schedule(0, config) == 1e-8
    assert lr_schedule(100, config) == pytest.approx(3e-4, abs=1e-18)
    # midpoint of the warmup endpoints: (1e-8 + 3e-4) / 2
    assert lr_schedule(50, config) == pytest.approx(1.50005e-4, abs=1e-12)
    assert lr_schedule(101, config) == 3e-4
    assert lr_schedule(3000, config) == 3e-4
    assert lr_schedule(3001, config) == 5e-5
    assert lr_schedule(7999, config) == 5e-5
    with pytest.raises(ValueError):
        lr_schedule(-1, config)


def test_config_validation():
    with pytest.raises(ValueError):
        small_config(iterations=0)
    with pytest.raises(ValueError):
        small_config(iterations=9000)
    with pytest.raises(ValueError):
        small_config(samples_per_iter=65, batch=32)  # batch must divide
    with pytest.raises(ValueError):
        small_config(tau_a=0.0)


# -- stepping ------------------------------------------------------------------------


def test_loss_is_negative_soft_revenue_exactly():
    spec = SettingSpec("C", 2, 2)
    config = small_config()
    trainer = Trainer(spec, config, small_model_config(spec))
    batch = sample(spec, 32, 5)
    params_before = trainer.model.forward_classic_tensors(2, 2).detach()
    loss = trainer.train_step(batch, learning_rate=1e-6)
    expected = -soft_revenue(batch.V, params_before, config.tau_a,
                             ir_cap=config.soft_ir_cap).item()
    assert loss == expected


def test_gradients_reset_after_step():
    spec = SettingSpec("C", 2, 2)
    trainer = Trainer(spec, small_config(), small_model_config(spec))
    trainer.train_step(sample(spec, 32, 6), learning_rate=1e-6)
    assert all(p.grad is None for p in trainer.parameters.values())


def test_zero_valuation_batch_gives_zero_loss_and_gradient():
    spec = SettingSpec("C", 2, 2)
    config = small_config()
    trainer = Trainer(spec, config, small_model_config(spec))
    params = trainer.model.forward_classic_tensors(2, 2)
    loss = -soft_revenue(np.zeros((16, 2, 2)), params, config.tau_a)
    assert loss.item() == 0.0
    trainer.model.zero_grad()
    loss.backward()
    boost_params = trainer.model.boost_mlp.named_parameters()
    worst = max(0.0 if p.grad is None else np.abs(p.grad).max()
                for p in boost_params.values())
    assert worst <= 1e-6


def test_train_step_gradient_on_two_parameter_probe():
    """The training loss gradient agrees with central differences on a probe
    with two free boost parameters."""
    rng = np.random.default_rng(0)
    bids = rng.uniform(0, 1, (16, 2, 1))
    menu = Tensor(np.array([[[1.0], [0.0]], [[0.0], [1.0]], [[0.0], [0.0]]]))
    weights = Tensor(np.array([1.0, 1.0]))
    probe = Tensor(np.array([0.1, -0.2]), requires_grad=True)

    def loss():
        from amanet.ama import TensorParams
        from amanet.autodiff import concat
        boosts = concat([probe, Tensor(np.zeros(1))], axis=0)
        return -soft_revenue(bids, TensorParams(menu, weights, boosts),
                             tau_a=25.0, ir_cap=True)

    graph = Graph({"probe": probe}, loss)
    assert finite_difference_check(graph, epsilon=1e-5) < 1e-4


def test_toy_batch_loss_decreases_across_windows():
    """On a fixed toy batch, 200 steps of Adam strictly decrease the loss over
    every 50-step window, for every one of 5 seeds."""
    spec = SettingSpec("C", 2, 2)
    batch = sample(spec, 256, 123)
    passing = 0
    for seed in range(5):
        config = small_config(iterations=1, samples_per_iter=256, batch=256,
                              tau_a=50.0, seed=seed)
        trainer = Trainer(spec, config, small_model_config(spec))
        losses = np.array([trainer.train_step(batch, 3e-3) for _ in range(200)])
        if all(losses[t + 50] < losses[t] for t in range(150)):
            passing += 1
    assert passing >= np.ceil(0.9 * 5)


def test_non_finite_loss_aborts_with_diagnostics():
    spec = SettingSpec("C", 2, 2)
    trainer = Trainer(spec, small_config(), small_model_config(spec))
    trainer.model.boost_mlp.second.weight.data[0, 0] = np.nan
    with pytest.raises(NumericalError) as err:
        trainer.train_step(sample(spec, 32, 7))
    assert "boosts range" in str(err.value)
    assert "bid range" in str(err.value)


def test_gradient_clipping_bounds_global_norm():
    params = {"a": Tensor(np.zeros(3), requires_grad=True),
              "b": Tensor(np.zeros(2), requires_grad=True)}
    params["a"].grad = np.array([3.0, 0.0, 0.0])
    params["b"].grad = np.array([0.0, 4.0])
    norm = clip_gradients(params, max_norm=1.0)
    assert norm == pytest.approx(5.0)
    total = np.sqrt(sum((p.grad ** 2).sum() for p in params.values()))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_adam_moves_against_gradient():
    p = Tensor(np.array([1.0]), requires_grad=True)
    adam = Adam({"p": p}, learning_rate=0.1)
    p.grad = np.array([2.0])
    adam.step()
    assert p.data[0] < 1.0


# -- determinism and checkpoints --------------------------------------------------------


def test_fit_is_deterministic(tmp_path):
    spec = SettingSpec("D", 3, 1)
    config = small_config()
    curves = []
    checkpoints = []
    for run in range(2):
        path = tmp_path / f"curve{run}.csv"
        ckpt = fit(spec, config, small_model_config(spec), curve_path=str(path))
        curves.append(path.read_bytes())
        checkpoints.append(ckpt)
    assert curves[0] == curves[1]
    for name in checkpoints[0].parameters:
        assert np.array_equal(checkpoints[0].parameters[name],
                              checkpoints[1].parameters[name])


def test_training_reports_harness_revenue(tmp_path):
    from amanet.evaluation import MenuNetMechanism, estimate_revenue
    spec = SettingSpec("C", 2, 2)
    config = small_config()
    ckpt = fit(spec, config, small_model_config(spec))
    mech = MenuNetMechanism(model_from_checkpoint(ckpt))
    mean, _ = estimate_revenue(mech, spec, config.eval_samples,
                               seed=np.random.SeedSequence([config.seed, 0xE7A]))
    assert abs(ckpt.revenue_estimate - mean) < 1e-9


def test_checkpoint_roundtrip_bitwise(tmp_path):
    spec = SettingSpec("C", 2, 2)
    config = small_config()
    ckpt = fit(spec, config, small_model_config(spec))
    model = model_from_checkpoint(ckpt)
    before = model.forward_classic(2, 2)
    path = str(tmp_path / "model.ckpt")
    save(ckpt, path)
    loaded = load(path)
    assert loaded.iteration == ckpt.iteration
    assert loaded.setting == spec
    assert loaded.train_config == config
    for name in ckpt.parameters:
        assert np.array_equal(loaded.parameters[name], ckpt.parameters[name])
        assert np.array_equal(loaded.adam_m[name], ckpt.adam_m[name])
    after = model_from_checkpoint(loaded).forward_classic(2, 2)
    assert np.array_equal(before.menu.entries, after.menu.entries)
    assert np.array_equal(before.weights, after.weights)
    assert np.array_equal(before.boosts, after.boosts)


def test_checkpoint_rejects_garbage_and_truncation(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ValueError):
        load(str(bad))

    spec = SettingSpec("C", 2, 2)
    ckpt = fit(spec, small_config(iterations=1),
               small_model_config(spec))
    path = tmp_path / "model.ckpt"
    save(ckpt, str(path))
    raw = path.read_bytes()
    path.write_bytes(raw[:len(raw) - 100])
    with pytest.raises(ValueError):
        load(str(path))


def test_checkpoint_rejects_version_mismatch(tmp_path):
    spec = SettingSpec("C", 2, 2)
    ckpt = fit(spec, small_config(iterations=1), small_model_config(spec))
    path = tmp_path / "model.ckpt"
    save(ckpt, str(path))
    raw = bytearray(path.read_bytes())
    raw[8] = 99  # version field sits right after the 8 magic bytes
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError) as err:
        load(str(path))
    assert "version" in str(err.value)


def test_resume_matches_uninterrupted_run():
    spec = SettingSpec("D", 3, 1)
    model_config = small_model_config(spec)
    full = fit(spec, small_config(iterations=6), model_config)
    half = fit(spec, small_config(iterations=3), model_config)
    resumed = fit(spec, small_config(iterations=6), model_config, resume=half)
    assert resumed.iteration == full.iteration == 6
    for name in full.parameters:
        assert np.array_equal(full.parameters[name], resumed.parameters[name])
    assert np.array_equal(
        np.asarray(full.rng_state["state"]["counter"]),
        np.asarray(resumed.rng_state["state"]["counter"]))


def test_desk_presets_cover_headline_settings():
    for tag, n, m in (("D", 3, 1), ("E", 1, 2), ("F", 1, 2), ("A", 2, 2),
                      ("B", 5, 2), ("C", 2, 5)):
        spec = SettingSpec(tag, n, m)
        config, model_config = desk_preset(spec)
        assert config.menu_size == model_config.menu_size
        assert model_config.menu_temperature == config.menu_temperature


def test_fit_seeds_runs_and_orders_results():
    spec = SettingSpec("D", 3, 1)
    results = fit_seeds(spec, seeds=[0, 1], eval_samples=256,
                        overrides={"iterations": 2, "samples_per_iter": 64,
                                   "batch": 32, "eval_every": 1,
                                   "eval_samples": 64})
    assert [r[0] for r in results] == [0, 1]
    for _, revenue, stderr, ckpt in results:
        assert np.isfinite(revenue) and stderr >= 0.0
        assert isinstance(ckpt, Checkpoint)
