import numpy as np
import pytest

from oracles import central_difference, max_relative_error
from pc3.head import (
    HeadParameters,
    backward_batch,
    forward_batch,
    head_init,
    load_checkpoint,
    optimizer_step,
    s_theta_backward,
    s_theta_forward,
    save_checkpoint,
)
from pc3.types import NumericError, ValidationError


def unit_net():
    p = {
        "W1": np.ones((2, 1)), "b1": np.zeros(1),
        "W2": np.ones((1, 1)), "b2": np.zeros(1),
        "W3": np.ones((1, 1)), "b3": np.zeros(1),
    }
    return HeadParameters(p)


def random_net(rng, d, h1, h2):
    params = head_init(d, (h1, h2), rng)
    for k in ("b1", "b2", "b3"):
        params.params[k][:] = rng.normal(scale=0.3, size=params.params[k].shape)
    return params


def test_init_deterministic_and_zero_bias():
    a = head_init(5, (4, 3), np.random.default_rng(0))
    b = head_init(5, (4, 3), np.random.default_rng(0))
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])
    for k in ("b1", "b2", "b3"):
        assert not a.params[k].any()
    assert a.step == 0 and not any(m.any() for m in a.m.values())
    assert a.params["W1"].shape == (5, 4) and a.params["W2"].shape == (4, 3) and a.params["W3"].shape == (3, 1)


def test_init_weights_centered():
    w = head_init(100, (100, 1), np.random.default_rng(5)).params["W1"].ravel()
    assert w.size == 10_000
    se = w.std(ddof=1) / np.sqrt(w.size)
    assert abs(w.mean()) < 3 * se


def test_init_rejects_zero_dims():
    with pytest.raises(ValidationError):
        head_init(0, (3, 2), np.random.default_rng(0))
    with pytest.raises(ValidationError):
        head_init(3, (3, 0), np.random.default_rng(0))


def test_identical_inputs_score_zero_at_init():
    params = head_init(6, (8, 4), np.random.default_rng(1))
    x = np.random.default_rng(2).normal(size=6)
    score, _ = s_theta_forward(params, x, x)
    assert score == 0.0


def test_hand_evaluated_tiny_net():
    score, _ = s_theta_forward(unit_net(), [1.0, 1.0], [0.0, 0.0])
    assert score == 2.0


def test_not_antisymmetric():
    rng = np.random.default_rng(3)
    params = random_net(rng, 4, 5, 3)
    x, r = rng.normal(size=4), rng.normal(size=4)
    a, _ = s_theta_forward(params, x, r)
    b, _ = s_theta_forward(params, r, x)
    assert not np.isclose(a, -b)


def test_forward_rejects_dimension_mismatch():
    params = head_init(3, (2, 2), np.random.default_rng(0))
    with pytest.raises(ValidationError):
        s_theta_forward(params, np.zeros(3), np.zeros(4))
    with pytest.raises(ValidationError):
        s_theta_forward(params, np.zeros(4), np.zeros(4))


def test_forward_is_pure():
    rng = np.random.default_rng(4)
    params = random_net(rng, 4, 3, 2)
    before = {k: v.copy() for k, v in params.params.items()}
    forward_batch(params, rng.normal(size=(7, 4)))
    for k in before:
        assert np.array_equal(before[k], params.params[k])


@pytest.mark.parametrize("draw", range(100))
def test_backward_matches_finite_differences(draw):
    rng = np.random.default_rng(1000 + draw)
    d, h1, h2 = rng.integers(1, 9), rng.integers(1, 5), rng.integers(1, 5)
    params = random_net(rng, d, h1, h2)
    x, r = rng.normal(size=d), rng.normal(size=d)
    _, tape = s_theta_forward(params, x, r)
    analytic = s_theta_backward(params, tape, 1.0)
    numeric = central_difference(lambda: s_theta_forward(params, x, r)[0], params.params)
    assert max_relative_error(analytic, numeric) < 1e-4


def test_backward_linearity():
    rng = np.random.default_rng(8)
    params = random_net(rng, 5, 4, 3)
    _, tape = s_theta_forward(params, rng.normal(size=5), rng.normal(size=5))
    zero = s_theta_backward(params, tape, 0.0)
    one = s_theta_backward(params, tape, 1.5)
    two = s_theta_backward(params, tape, 3.0)
    for k in zero:
        assert not zero[k].any()
        np.testing.assert_allclose(two[k], 2 * one[k], rtol=0, atol=1e-15)


def test_batch_backward_sums_single_pairs():
    rng = np.random.default_rng(9)
    params = random_net(rng, 4, 3, 3)
    diff = rng.normal(size=(5, 4))
    up = rng.normal(size=5)
    _, tape = forward_batch(params, diff)
    total = backward_batch(params, tape, up)
    for k in total:
        parts = sum(backward_batch(params, forward_batch(params, diff[i : i + 1])[1], up[i : i + 1])[k] for i in range(5))
        np.testing.assert_allclose(total[k], parts, atol=1e-12)


def test_stale_tape_rejected():
    rng = np.random.default_rng(10)
    params = random_net(rng, 3, 2, 2)
    _, tape = s_theta_forward(params, rng.normal(size=3), rng.normal(size=3))
    grads = s_theta_backward(params, tape, 1.0)
    newer = optimizer_step(params, grads, 1e-3)
    with pytest.raises(ValidationError, match="different head parameters"):
        s_theta_backward(newer, tape, 1.0)


def test_optimizer_zero_gradients():
    params = head_init(3, (2, 2), np.random.default_rng(0))
    zeros = {k: np.zeros_like(v) for k, v in params.params.items()}
    new = optimizer_step(params, zeros, 1e-3)
    assert new.step == 1
    for k in params.params:
        assert np.array_equal(new.params[k], params.params[k])
        assert not new.m[k].any() and not new.v[k].any()


def test_optimizer_first_step_magnitude():
    # t=1, g=1: m=0.1, v=0.001, bias-corrected m_hat=v_hat=1, step = lam / (1 + 1e-8)
    lam = 1e-4
    p = HeadParameters({"W1": np.zeros((1, 1)), "b1": np.zeros(1), "W2": np.zeros((1, 1)),
                        "b2": np.zeros(1), "W3": np.zeros((1, 1)), "b3": np.zeros(1)})
    grads = {k: np.zeros_like(v) for k, v in p.params.items()}
    grads["b3"] = np.array([1.0])
    new = optimizer_step(p, grads, lam)
    assert new.params["b3"][0] == pytest.approx(-lam / (1 + 1e-8), rel=1e-12)
    assert new.m["b3"][0] == pytest.approx(0.1) and new.v["b3"][0] == pytest.approx(0.001)
    assert p.params["b3"][0] == 0.0


def test_optimizer_rejects_nonfinite():
    params = head_init(2, (2, 2), np.random.default_rng(0))
    grads = {k: np.zeros_like(v) for k, v in params.params.items()}
    grads["W2"][0, 0] = np.nan
    with pytest.raises(NumericError, match="W2"):
        optimizer_step(params, grads, 1e-3)


def test_optimizer_trajectories_reproducible():
    def trajectory():
        rng = np.random.default_rng(21)
        params = random_net(rng, 4, 3, 2)
        diff = rng.normal(size=(6, 4))
        for _ in range(20):
            _, tape = forward_batch(params, diff)
            params = optimizer_step(params, backward_batch(params, tape, np.ones(6)), 1e-2)
        return params

    a, b = trajectory(), trajectory()
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    params = random_net(rng, 4, 3, 2)
    _, tape = forward_batch(params, rng.normal(size=(3, 4)))
    params = optimizer_step(params, backward_batch(params, tape, np.ones(3)), 1e-3)
    save_checkpoint(params, tmp_path / "head.json")
    back = load_checkpoint(tmp_path / "head.json")
    assert back.step == params.step
    for k in params.params:
        assert np.array_equal(back.params[k], params.params[k])
        assert np.array_equal(back.m[k], params.m[k])
        assert np.array_equal(back.v[k], params.v[k])
