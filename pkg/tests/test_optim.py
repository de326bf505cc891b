import numpy as np
import pytest

from adglab.optim import SGD, SgdConfig, StepDecay, clip_by_global_norm, global_norm, sgd_step


def plain(lr=0.1, clip=float("inf")):
    return SgdConfig(learning_rate=lr, momentum=0.0, weight_decay=0.0, gradient_clip=clip)


def test_zero_gradient_leaves_params_unchanged():
    p = {"w": np.array([1.0, 2.0])}
    sgd_step(p, {"w": np.zeros(2)}, plain())
    assert np.array_equal(p["w"], [1.0, 2.0])


def test_plain_sgd_arithmetic():
    p = {"w": np.array(1.0)}
    sgd_step(p, {"w": np.array(2.0)}, plain(lr=0.1))
    assert p["w"] == pytest.approx(0.8)


def test_clipped_update_has_norm_lr():
    p = {"w": np.zeros(4)}
    g = {"w": np.array([5.0, 5.0, 5.0, 5.0])}  # norm 10
    sgd_step(p, g, plain(lr=0.01, clip=1.0))
    assert np.linalg.norm(p["w"]) == pytest.approx(0.01)


def test_ascent_sign_flips_direction():
    p = {"w": np.array(0.0)}
    sgd_step(p, {"w": np.array(1.0)}, plain(), sign=-1)
    assert p["w"] == pytest.approx(0.1)


def test_weight_decay_shrinks_even_when_ascending():
    cfg = SgdConfig(learning_rate=0.1, momentum=0.0, weight_decay=0.5, gradient_clip=float("inf"))
    p = {"w": np.array(2.0)}
    sgd_step(p, {"w": np.array(0.0)}, cfg, sign=-1)
    assert p["w"] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)


def test_momentum_accumulates():
    cfg = SgdConfig(learning_rate=1.0, momentum=0.5, weight_decay=0.0, gradient_clip=float("inf"))
    p = {"w": np.array(0.0)}
    opt = SGD(p, cfg)
    opt.step({"w": np.array(1.0)})
    opt.step({"w": np.array(1.0)})
    assert p["w"] == pytest.approx(-(1.0 + 1.5))


def test_only_named_parameters_move():
    p = {"a": np.array(1.0), "b": np.array(1.0)}
    SGD(p, plain(), names=["a"]).step({"a": np.array(1.0), "b": np.array(1.0)})
    assert p["b"] == 1.0 and p["a"] != 1.0


def test_bad_config_rejected():
    with pytest.raises(ValueError):
        SgdConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        SgdConfig(momentum=1.0)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        SGD({"w": np.zeros(2)}, plain()).step({"w": np.zeros(3)})


def test_clip_noop_below_threshold():
    g = {"w": np.array([0.3, 0.4])}
    assert clip_by_global_norm(g, 1.0) is g
    assert global_norm(g) == pytest.approx(0.5)


def test_step_decay():
    sched = StepDecay(0.01, 100, 0.96)
    assert sched(99) == 0.01
    assert sched(100) == pytest.approx(0.0096)
    assert sched(250) == pytest.approx(0.01 * 0.96**2)


def test_identical_runs_are_bit_identical():
    rng = np.random.default_rng(3)
    grads = [{"w": rng.standard_normal(5)} for _ in range(20)]

    def run():
        p = {"w": np.ones(5)}
        opt = SGD(p, SgdConfig())
        for g in grads:
            opt.step(g)
        return p["w"]

    assert np.array_equal(run(), run())
