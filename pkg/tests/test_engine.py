import numpy as np
import pytest

from oracles import central_difference, max_relative_error
from pc3.engine import (
    batch_loss,
    calibrate,
    loss_gradient,
    mu_update,
    relative_quality,
    sample_references,
    theta_epoch,
)
from pc3.head import HeadParameters, head_init, optimizer_step
from pc3.sos import ground_truth, synthesize_sos
from pc3.types import CalibrationConfig, FeatureTable, ValidationError, denormalize_labels, normalize_labels, seeded_rng


def constant_head(d, value):
    """A head whose output is ``value`` for every input."""
    p = {"W1": np.zeros((d, 2)), "b1": np.zeros(2), "W2": np.zeros((2, 2)), "b2": np.zeros(2),
         "W3": np.zeros((2, 1)), "b3": np.array([value])}
    return HeadParameters(p)


def toy_problem(seed, n=4, d=4, hidden=(3, 2)):
    rng = np.random.default_rng(seed)
    feats = FeatureTable(tuple(f"i{k}" for k in range(n)), rng.normal(size=(n, d)))
    params = head_init(d, hidden, rng)
    for k in ("b1", "b2", "b3"):
        params.params[k][:] = rng.normal(scale=0.3, size=params.params[k].shape)
    sos = rng.uniform(size=n)
    mu = rng.uniform(size=n)
    refs = sample_references(n, rng)
    return feats, params, sos, mu, refs


def test_sample_references_two_items():
    rng = seeded_rng(0)
    for _ in range(50):
        assert sample_references(2, rng).tolist() == [1, 0]


def test_sample_references_needs_two_items():
    with pytest.raises(ValidationError):
        sample_references(1, seeded_rng(0))


def test_sample_references_uniform_over_others():
    rng = seeded_rng(1)
    draws = np.stack([sample_references(3, rng) for _ in range(30_000)])
    for n, others in enumerate([(1, 2), (0, 2), (0, 1)]):
        for o in others:
            assert abs(np.mean(draws[:, n] == o) - 0.5) < 0.02


def test_sample_references_never_self():
    rng = seeded_rng(2)
    n = 10
    draws = np.stack([sample_references(n, rng) for _ in range(10_000)])
    assert not np.any(draws == np.arange(n))
    assert draws.min() == 0 and draws.max() == n - 1


def test_batch_loss_hand_value():
    feats = FeatureTable(("x", "r"), [[0.0], [1.0]])
    params = constant_head(1, 0.1)
    sos = np.array([0.5, 0.9])
    mu = np.array([0.5, 0.3])
    refs = np.array([1, 0])
    bl = batch_loss(params, feats, sos, mu, refs, [0], 1 / 9)
    assert bl.loss == pytest.approx(0.01 * 10 / 9, abs=1e-15)
    assert bl.data_fit == pytest.approx(0.01) and bl.constraint == pytest.approx(0.01)


def test_batch_loss_warmup_terms_equal_and_beta_zero():
    feats, params, sos, _, refs = toy_problem(0)
    bl = batch_loss(params, feats, sos, sos.copy(), refs, np.arange(4), 0.3)
    assert bl.data_fit == bl.constraint
    bl0 = batch_loss(params, feats, sos, np.zeros(4), refs, np.arange(4), 0.0)
    assert bl0.loss == bl0.data_fit


@pytest.mark.parametrize("draw", range(20))
def test_loss_gradient_matches_finite_differences(draw):
    feats, params, sos, mu, refs = toy_problem(100 + draw)
    beta = 1 / 9
    batch = np.arange(4)
    bl = batch_loss(params, feats, sos, mu, refs, batch, beta)
    analytic = loss_gradient(params, bl, beta)
    numeric = central_difference(lambda: batch_loss(params, feats, sos, mu, refs, batch, beta).loss, params.params)
    assert max_relative_error(analytic, numeric) < 1e-4


def test_loss_descends_on_frozen_batch():
    rng = np.random.default_rng(5)
    feats = FeatureTable(tuple(map(str, range(32))), rng.normal(size=(32, 6)))
    sos = rng.uniform(size=32)
    mu = sos.copy()
    refs = sample_references(32, rng)
    params = head_init(6, (16, 8), rng)
    batch = np.arange(32)
    losses = []
    for _ in range(51):
        bl = batch_loss(params, feats, sos, mu, refs, batch, 0.0)
        losses.append(bl.data_fit)
        params = optimizer_step(params, loss_gradient(params, bl, 0.0), 1e-3)
    decreases = sum(b < a for a, b in zip(losses, losses[1:]))
    assert decreases >= 45


def test_theta_epoch_keeps_mu_and_lambda_zero_freezes():
    feats, params, sos, mu, refs = toy_problem(3, n=10)
    mu_before = mu.copy()
    cfg = CalibrationConfig(lam=0.0, batch_size=3)
    new = theta_epoch(params, feats, sos, mu, refs, cfg, seeded_rng(0))
    assert np.array_equal(mu, mu_before)
    assert new.step == params.step + 4
    for k in params.params:
        assert np.array_equal(new.params[k], params.params[k])
    moved = theta_epoch(params, feats, sos, mu, refs, cfg.replace(lam=1e-2), seeded_rng(0))
    assert any(not np.array_equal(moved.params[k], params.params[k]) for k in params.params)


def test_mu_update_alpha_zero_is_identity():
    feats, params, sos, mu, refs = toy_problem(4)
    out = mu_update(mu, params, feats, refs, sos, CalibrationConfig(alpha=0.0), epoch=5)
    assert np.array_equal(out, mu)


def test_mu_update_hand_value():
    feats = FeatureTable(("x", "r"), [[0.0], [1.0]])
    params = constant_head(1, 0.2)
    mu = np.array([0.5, 0.5])
    out = mu_update(mu, params, feats, np.array([1, 0]), mu, CalibrationConfig(alpha=0.1), epoch=1)
    assert out[0] == pytest.approx(0.52, abs=1e-15)


def test_mu_update_warmup_returns_sos():
    feats, params, sos, mu, refs = toy_problem(6)
    out = mu_update(mu, params, feats, refs, sos, CalibrationConfig(warmup_epochs=1), epoch=0)
    assert np.array_equal(out, sos)


def test_mu_update_is_synchronous_and_convex():
    feats, params, sos, mu, refs = toy_problem(7, n=8)
    cfg = CalibrationConfig(alpha=0.3)
    out = mu_update(mu, params, feats, refs, sos, cfg, epoch=3)
    target = relative_quality(params, feats, refs) + mu[refs]
    np.testing.assert_allclose(out, 0.7 * mu + 0.3 * target, atol=1e-15)
    lo = np.minimum(mu, target) - 1e-15
    hi = np.maximum(mu, target) + 1e-15
    assert np.all((out >= lo) & (out <= hi))


@pytest.fixture(scope="module")
def benchmark_small():
    from pc3.synthetic import SyntheticSpec, generate

    feats, records = generate(SyntheticSpec(n_items=120, feature_dim=8, seed=2))
    sos = synthesize_sos(records, "raw-sample", seeded_rng(2))
    return feats, records, sos


def test_calibrate_alpha_zero_returns_sos(benchmark_small):
    feats, _, sos = benchmark_small
    lv = normalize_labels(sos)
    res = calibrate(feats, lv, CalibrationConfig(alpha=0.0, total_epochs=5))
    assert np.array_equal(res.labels.values, lv.values)
    np.testing.assert_allclose(res.calibrated_raw(), sos, atol=1e-9)
    assert np.array_equal(res.calibrated_raw(sos), sos)


def test_calibrate_warmup_never_ends(benchmark_small):
    feats, _, sos = benchmark_small
    lv = normalize_labels(sos)
    res = calibrate(feats, lv, CalibrationConfig(total_epochs=4, warmup_epochs=4))
    assert np.array_equal(res.labels.values, lv.values)


def test_calibrate_trace_consistency_and_determinism(benchmark_small):
    feats, _, sos = benchmark_small
    lv = normalize_labels(sos)
    cfg = CalibrationConfig(total_epochs=6, seed=9)
    a = calibrate(feats, lv, cfg)
    b = calibrate(feats, lv, cfg)
    assert np.array_equal(a.labels.values, b.labels.values)
    assert a.trace == b.trace
    assert [t.epoch for t in a.trace] == list(range(6))
    for t in a.trace:
        assert abs(t.total_loss - (t.data_fit_loss + cfg.beta * t.constraint_loss)) <= 1e-12
    # warm-up epoch: estimates equal the labels, so both loss terms coincide
    assert a.trace[0].data_fit_loss == a.trace[0].constraint_loss


def test_calibrate_step_bound_and_warmup_on_trace(benchmark_small):
    feats, _, sos = benchmark_small
    lv = normalize_labels(sos)
    cfg = CalibrationConfig(total_epochs=8, alpha=0.5, warmup_epochs=2, seed=1)
    seen = []

    def watch(t, state, params, refs):
        seen.append((t, state.mu.copy(), np.max(np.abs(relative_quality(params, feats, refs)))))

    calibrate(feats, lv, cfg, on_epoch=watch)
    for t, mu, _ in seen[:2]:
        assert np.array_equal(mu, lv.values)
    # |mu_{t+1}| <= (1-a)|mu_t| + a(|S| + |mu_r|) <= max|mu_t| + a * max|S|
    for (_, prev, _), (_, cur, bound) in zip(seen, seen[1:]):
        assert np.max(np.abs(cur)) <= np.max(np.abs(prev)) + cfg.alpha * bound + 1e-12


def test_calibrate_improves_on_synthetic_benchmark():
    from pc3.synthetic import SyntheticSpec, generate

    feats, records = generate(SyntheticSpec(seed=4))
    truth = ground_truth(records)
    sos = synthesize_sos(records, "raw-sample", seeded_rng(4))
    cal = calibrate(feats, normalize_labels(sos), CalibrationConfig(seed=4)).calibrated_raw()
    assert np.mean((cal - truth) ** 2) < np.mean((sos - truth) ** 2)


def test_calibrate_checks_lengths(benchmark_small):
    feats, _, sos = benchmark_small
    with pytest.raises(ValidationError):
        calibrate(feats, normalize_labels(sos[:-1]), CalibrationConfig(total_epochs=1))
    with pytest.raises(ValidationError):
        calibrate(feats, normalize_labels(sos), CalibrationConfig(total_epochs=1), head_init(3, (2, 2), seeded_rng(0)))
