"""Tests for error signals and the RBF droop surrogate."""
import numpy as np
import pytest

from orra.aie import (
    AieInputs,
    IllConditioningError,
    InfillViolationError,
    RbfSurrogate,
    build_gram,
    compute_ace,
    compute_aie_bus,
    compute_aie_total,
    corrected_aie,
    fit_weights,
    gaussian_basis,
)


def test_compute_ace_values():
    assert compute_ace(0, 20, 0) == 0
    assert compute_ace(1.0, 20, -0.05) == pytest.approx(0.0)
    assert compute_ace(2.5, 30, 0.01) == pytest.approx(2.8)


def test_aie_inputs_validation():
    with pytest.raises(ValueError):
        AieInputs(0, 0, 10, [0.5, 0.4], [0, 0], [0, 0])
    with pytest.raises(ValueError):
        AieInputs(0, 0, 10, [1.5, -0.5], [0, 0], [0, 0])


def make_inputs(**kw):
    defaults = dict(
        dPtie=2.0, df=-0.1, D_prime=10.0, sigma=[1.0], du_gov=[0.5], dPm=[0.3]
    )
    defaults.update(kw)
    return AieInputs(**defaults)


def test_aie_bus_hand_value():
    assert compute_aie_bus(make_inputs(), 0) == pytest.approx(1.2)


def test_aie_bus_non_generator_is_zero():
    assert compute_aie_bus(make_inputs(), 0, is_generator=False) == 0.0


def test_aie_bus_cancellation():
    inputs = make_inputs(dPtie=1.0, df=-0.1, du_gov=[0.3], dPm=[0.3])
    assert compute_aie_bus(inputs, 0) == pytest.approx(0.0)


def test_aie_total_equals_bus_sum():
    rng = np.random.default_rng(4)
    for _ in range(30):
        n = int(rng.integers(1, 6))
        sigma = rng.uniform(0.1, 1, size=n)
        sigma /= sigma.sum()
        inputs = AieInputs(
            dPtie=float(rng.normal()),
            df=float(rng.normal(0, 0.03)),
            D_prime=float(rng.uniform(5, 20)),
            sigma=sigma,
            du_gov=rng.normal(size=n),
            dPm=rng.normal(size=n),
        )
        total = sum(compute_aie_bus(inputs, i) for i in range(n))
        assert total == pytest.approx(compute_aie_total(inputs), abs=1e-12)


def test_gaussian_basis_values():
    assert gaussian_basis(0.0, 5.0) == 1.0
    assert gaussian_basis(1.0, 1.0) == pytest.approx(np.exp(-1))
    assert gaussian_basis(0.1, 100.0) == pytest.approx(np.exp(-1))
    with pytest.raises(ValueError):
        gaussian_basis(1.0, 0.0)


def test_build_gram_structure():
    assert np.allclose(build_gram([0.02], 100.0), [[1.0]])
    g = build_gram([0.0, 0.1], 100.0)
    assert g[0, 1] == pytest.approx(np.exp(-1))
    rng = np.random.default_rng(6)
    xs = np.cumsum(rng.uniform(0.01, 0.05, size=6))
    g = build_gram(xs, 300.0)
    assert np.allclose(g, g.T)
    assert np.allclose(np.diag(g), 1.0)


def test_build_gram_rejects_duplicates():
    with pytest.raises(InfillViolationError):
        build_gram([0.01, 0.05, 0.01], 100.0)


def test_fit_weights_trivial_cases():
    assert fit_weights([[1.0]], [3.0]) == pytest.approx([3.0])
    g = build_gram([0.0, 0.02, 0.04], 3000.0)
    assert fit_weights(g, [0.0, 0.0, 0.0]) == pytest.approx([0.0, 0.0, 0.0])


def test_fit_weights_interpolates_random_samples():
    rng = np.random.default_rng(12)
    for _ in range(20):
        xs = np.sort(rng.choice(np.arange(-0.05, 0.05, 0.008), 4, replace=False))
        vals = rng.normal(size=4)
        g = build_gram(xs, 3000.0)
        w = fit_weights(g, vals)
        for x, v in zip(xs, vals):
            pred = float(gaussian_basis(x - xs, 3000.0) @ w)
            assert pred == pytest.approx(v, abs=1e-8)


def test_fit_weights_raises_on_ill_conditioning():
    g = build_gram([0.0, 1e-9], 3000.0)
    with pytest.raises(IllConditioningError):
        fit_weights(g, [1.0, 1.0])


def test_infill_decide_thresholds():
    s = RbfSurrogate(d_min=0.005)
    assert s.infill_decide(0.123)
    s.add_sample(0.010, 1.0)
    assert not s.infill_decide(0.012)
    assert s.infill_decide(0.020)


def test_add_sample_too_close_raises():
    s = RbfSurrogate(d_min=0.005)
    s.add_sample(0.010, 1.0)
    with pytest.raises(InfillViolationError):
        s.add_sample(0.011, 1.0)


def test_corrected_aie_empty_and_single():
    s = RbfSurrogate()
    assert corrected_aie(2.5, s, 0.01) == 2.5
    s.add_sample(0.02, 0.8)
    assert corrected_aie(2.5, s, 0.02) == pytest.approx(3.3)


def test_surrogate_exactness_after_every_refit():
    s = RbfSurrogate()
    rng = np.random.default_rng(3)
    for x in np.arange(-0.05, 0.06, 0.0075):
        s.add_sample(float(x), float(rng.normal()))
        for xs, v in zip(s.sample_df, s.sample_dP):
            assert s.evaluate(xs) == pytest.approx(v, abs=1e-8)


def test_gram_stays_positive_definite_along_ladder():
    s = RbfSurrogate(max_samples=50)
    for i in range(50):
        s.add_sample(i * (s.d_min + 1e-5), float(np.sin(i)))
        assert np.linalg.eigvalsh(s.gram()).min() > 0


def test_eviction_keeps_boundary_points():
    s = RbfSurrogate(max_samples=4, d_min=0.005)
    for x in (0.0, 0.01, 0.02, 0.03):
        s.add_sample(x, x)
    s.add_sample(0.045, 0.045)
    # 0.01 was the oldest interior sample; the extremes 0.0 and 0.03 survive
    assert 0.0 in s.sample_df and 0.03 in s.sample_df
    assert 0.01 not in s.sample_df
    assert s.m == 4


def test_off_sample_accuracy_on_sectional_droop():
    # ground truth: deadbanded piecewise-linear droop measurement
    def truth(df):
        mag = max(0.0, abs(df) - 0.01)
        return np.sign(df) * 40.0 * mag

    s = RbfSurrogate()
    sweep = np.concatenate(
        [
            np.linspace(0, -0.05, 300),
            np.linspace(-0.05, 0.05, 600),
            np.linspace(0.05, 0, 300),
        ]
    )
    for df in sweep:
        if s.infill_decide(df):
            s.add_sample(float(df), truth(float(df)))
    assert s.m >= 5
    grid = np.linspace(-0.05, 0.05, 501)
    errs = np.array([abs(s.evaluate(x) - truth(x)) for x in grid])
    scale = max(abs(truth(x)) for x in grid)
    assert errs.max() <= 0.10 * scale
