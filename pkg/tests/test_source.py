import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fluctqkd import (
    AykiSourceParams,
    FluctuationBounds,
    FockDistribution,
    PulseEnsembleSpec,
    TailTooLarge,
    ayki_split,
    coherent_fock,
    draw_fluctuation,
    fluctuation_grid,
    gamma,
    pdc_number_dist,
    realized_intensities,
)
from fluctqkd.errors import DegenerateSource, GridTooCoarse
from fluctqkd.source import FluctuationGrid, cutoff_for, random_grid


def poisson_tail_by_summation(mu, J):
    # independent of scipy: 1 minus the head, summed with exact rational steps
    head = math.fsum(math.exp(-mu) * mu**k / math.factorial(k) for k in range(J + 1))
    return 1.0 - head


# ---------------------------------------------------------------- coherent


def test_coherent_vacuum():
    d = coherent_fock(0.0, 4)
    assert d.weights.tolist() == [1.0, 0.0, 0.0, 0.0, 0.0]
    assert d.tail_mass == 0.0
    assert d.truncation == 4


def test_coherent_half_photon():
    d = coherent_fock(0.5, 20)
    assert d[0] == pytest.approx(0.6065306597126334, abs=1e-15)
    assert d[0] == pytest.approx(math.exp(-0.5), rel=1e-15)
    assert d.tail_mass < 1e-12


def test_coherent_tail_too_large():
    tail = poisson_tail_by_summation(5.0, 3)
    assert tail > 1e-12
    with pytest.raises(TailTooLarge) as exc:
        coherent_fock(5.0, 3)
    assert exc.value.cutoff == 3
    assert exc.value.tail_mass == pytest.approx(tail, rel=1e-12)


def test_coherent_large_cutoff_no_underflow():
    d = coherent_fock(0.5, 400)
    assert np.all(np.isfinite(d.weights))
    assert d.weights.sum() == pytest.approx(1.0, abs=1e-15)


@given(mu=st.floats(0.0, 5.0), extra=st.integers(0, 5))
def test_coherent_normalised(mu, extra):
    J = cutoff_for(mu, "coherent") + extra
    d = coherent_fock(mu, J)
    assert abs(d.weights.sum() + d.tail_mass - 1.0) <= 1e-12
    assert d.tail_mass <= 1e-12
    assert np.all(d.weights >= 0)


def test_cutoff_is_minimal():
    J = cutoff_for(0.7, "coherent")
    coherent_fock(0.7, J)
    with pytest.raises(TailTooLarge):
        coherent_fock(0.7, J - 1)


# ---------------------------------------------------------------- down-conversion


def test_pdc_vacuum():
    d = pdc_number_dist(0.0, 5)
    assert d.weights.tolist() == [1.0, 0, 0, 0, 0, 0]
    assert d.tail_mass == 0.0


def test_pdc_unit_intensity_weights():
    d = pdc_number_dist(1.0, 10, tol=1.0)
    assert d[0] == 0.5
    assert d[1] == 0.25
    np.testing.assert_allclose(d.weights, 2.0 ** -(np.arange(11) + 1), rtol=1e-15)


def test_pdc_unit_intensity_tail():
    assert pdc_number_dist(1.0, 10, tol=1.0).tail_mass == pytest.approx(2.0**-11, rel=1e-14)
    with pytest.raises(TailTooLarge):
        pdc_number_dist(1.0, 10)


@given(mu=st.floats(0.0, 2.0))
def test_pdc_normalised(mu):
    d = pdc_number_dist(mu, cutoff_for(mu, "pdc"))
    assert abs(d.weights.sum() + d.tail_mass - 1.0) <= 1e-12


def test_fock_distribution_validates():
    with pytest.raises(ValueError):
        FockDistribution([0.5, 0.4], 0.0)
    with pytest.raises(ValueError):
        FockDistribution([1.1, -0.1], 0.0)


# ---------------------------------------------------------------- herald


def test_gamma_examples():
    assert gamma(0, 0.01, 0.5) == pytest.approx(0.01, abs=1e-16)
    assert gamma(1, 0.0, 0.5) == 0.5
    assert gamma(2, 0.0, 1.0) == 1.0


def test_ayki_split_perfect_herald_has_no_signal_vacuum():
    params = AykiSourceParams(mu_nominal=1.0, mu_fluct=0.0, eta_A=1.0, d_A=0.0, truncation=60)
    _, _, _, signal = ayki_split(params, 1.0)
    assert signal[0] == 0.0


def test_ayki_split_selection_probability():
    params = AykiSourceParams(mu_nominal=1.0, mu_fluct=0.0, eta_A=0.5, d_A=0.01, truncation=60)
    p_i, p_prime, _, _ = ayki_split(params, 1.0)
    assert p_i == pytest.approx(0.99 / 1.5, rel=1e-15)
    assert p_i == pytest.approx(0.66, abs=1e-15)
    assert p_i + p_prime == pytest.approx(1.0, abs=1e-15)


@given(mu_i=st.floats(0.01, 1.0), eta=st.floats(0.01, 1.0), d=st.floats(0.0, 0.1))
def test_ayki_decomposition_identity(mu_i, eta, d):
    params = AykiSourceParams(mu_nominal=mu_i, mu_fluct=0.0, eta_A=eta, d_A=d)
    p_i, p_prime, dec, sig = ayki_split(params, mu_i)
    X = np.array([mu_i**k / (1 + mu_i) ** (k + 1) for k in range(params.J + 1)])
    np.testing.assert_allclose(p_i * dec.weights + p_prime * sig.weights, X, rtol=0, atol=1e-12)
    assert abs(p_i + p_prime - 1) <= 1e-12
    for dist in (dec, sig):
        assert abs(dist.weights.sum() + dist.tail_mass - 1) <= 1e-12


def test_ayki_ratio_constant_over_intensities(rng):
    params = AykiSourceParams(mu_nominal=0.3, mu_fluct=0.2, eta_A=0.5, d_A=1e-6)
    J = params.J
    g = np.array([1 - (1 - 1e-6) * 0.5**k for k in range(J + 1)])
    expected = (1 - g) / g
    for mu_i in rng.uniform(0.8 * 0.3, 1.2 * 0.3, 100):
        p_i, p_prime, dec, sig = ayki_split(params, mu_i, J)
        ratio = p_i * dec.weights / (p_prime * sig.weights)
        np.testing.assert_allclose(ratio, expected, rtol=1e-12)


def test_ayki_split_degenerate():
    params = AykiSourceParams(mu_nominal=0.3, mu_fluct=0.0, eta_A=0.5, d_A=0.0)
    with pytest.raises(DegenerateSource):
        ayki_split(params, 0.0)


def test_ayki_params_validation():
    with pytest.raises(ValueError):
        AykiSourceParams(mu_nominal=0.3, eta_A=0.0)
    with pytest.raises(ValueError):
        AykiSourceParams(mu_nominal=0.3, d_A=1.0)


# ---------------------------------------------------------------- fluctuation draws


def test_draw_zero_bounds():
    rng = np.random.default_rng(1)
    b = FluctuationBounds()
    for _ in range(10):
        assert draw_fluctuation(b, rng) == (0.0, 0.0, 0.0)


@pytest.mark.parametrize("law", ["uniform", "clipped-normal", "drift"])
def test_draw_support(law):
    b = FluctuationBounds(delta=0.06, eps_d=0.02, eps_s=0.03, draw_law=law)
    d, ed, es = draw_fluctuation(b, np.random.default_rng(2), 100_000, index=np.arange(100_000))
    assert np.max(np.abs(d)) <= 0.06
    assert np.max(np.abs(ed)) <= 0.02
    assert np.max(np.abs(es)) <= 0.03


def test_draw_uniform_mean():
    b = FluctuationBounds(delta=0.06)
    d, _, _ = draw_fluctuation(b, np.random.default_rng(3), 100_000)
    se = 0.06 / math.sqrt(3) / math.sqrt(d.size)
    assert abs(d.mean()) <= 5 * se


def test_draw_deterministic():
    b = FluctuationBounds(delta=0.06, eps_d=0.01, eps_s=0.01)
    a = draw_fluctuation(b, np.random.default_rng(7), 1000)
    c = draw_fluctuation(b, np.random.default_rng(7), 1000)
    for x, y in zip(a, c):
        np.testing.assert_array_equal(x, y)


def test_drift_follows_index():
    b = FluctuationBounds(delta=0.1, draw_law="drift", drift_period=8)
    d, _, _ = draw_fluctuation(b, np.random.default_rng(0), 8, index=np.arange(8))
    np.testing.assert_allclose(d, 0.1 * np.sin(2 * np.pi * np.arange(8) / 8), atol=1e-17)


def test_bounds_validation():
    with pytest.raises(ValueError):
        FluctuationBounds(eps_s=1.0)
    with pytest.raises(ValueError):
        FluctuationBounds(delta=-0.1)
    with pytest.raises(ValueError):
        FluctuationBounds(draw_law="cauchy")


# ---------------------------------------------------------------- intensities


def _spec(**kw):
    return PulseEnsembleSpec(p=0.3, p_prime=0.6, p_0=0.1, mu=0.2, mu_prime=0.6, **kw)


def test_realized_zero_draw():
    assert realized_intensities(_spec(), (0.0, 0.0, 0.0)) == (0.2, 0.6)


def test_realized_product():
    mu_i, _ = realized_intensities(_spec(), (0.05, 0.02, 0.0))
    assert mu_i == pytest.approx(0.2142, abs=1e-15)


def test_realized_minimum_corner():
    spec = _spec(fluctuation=FluctuationBounds(delta=0.06, eps_d=0.03, eps_s=0.02))
    mu_i, _ = realized_intensities(spec, (-0.06, -0.03, 0.0))
    assert mu_i == pytest.approx(0.2 * 0.94 * 0.97, rel=1e-15)
    assert mu_i == pytest.approx(spec.mu_range[0], rel=1e-15)


@given(
    base=st.tuples(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5)),
    axis=st.integers(0, 2),
    step=st.floats(0.0, 0.4),
)
def test_realized_monotone(base, axis, step):
    spec = _spec()
    bumped = list(base)
    bumped[axis] += step
    lo, hi = realized_intensities(spec, base), realized_intensities(spec, bumped)
    assert hi[0] >= lo[0] and hi[1] >= lo[1]


def test_spec_probabilities_must_sum_to_one():
    with pytest.raises(ValueError):
        PulseEnsembleSpec(p=0.3, p_prime=0.6, mu=0.2, mu_prime=0.6)


# ---------------------------------------------------------------- quadrature grids


def test_zero_fluctuation_grid_is_one_point():
    g = fluctuation_grid(FluctuationBounds(), 8)
    assert len(g) == 1
    assert g.points.tolist() == [[0.0, 0.0, 0.0]]
    assert g.weights.tolist() == [1.0]


def test_uniform_grid_second_moment():
    # Gauss-Legendre is exact for polynomials: E[x^2] = b^2 / 3 under uniform
    g = fluctuation_grid(FluctuationBounds(delta=0.06, eps_d=0.02, eps_s=0.01), 6)
    assert g.weights @ g.points[:, 0] ** 2 == pytest.approx(0.06**2 / 3, rel=1e-13)
    assert g.weights @ g.points[:, 2] ** 4 == pytest.approx(0.01**4 / 5, rel=1e-12)


def test_drift_grid_matches_arcsine_law():
    # for x = b sin(theta), theta uniform: E[x^2] = b^2/2, E[x^4] = 3 b^4 / 8
    g = fluctuation_grid(FluctuationBounds(delta=0.1, draw_law="drift"), 8)
    x = g.points[:, 0]
    assert g.weights @ x**2 == pytest.approx(0.01 / 2, rel=1e-13)
    assert g.weights @ x**4 == pytest.approx(3 * 1e-4 / 8, rel=1e-12)


def test_clipped_normal_grid_matches_sampling():
    b = FluctuationBounds(delta=0.1, draw_law="clipped-normal", sigma_frac=0.8)
    g = fluctuation_grid(b, 24)
    x = np.clip(np.random.default_rng(5).normal(0, 0.08, 2_000_000), -0.1, 0.1)
    m2 = g.weights @ g.points[:, 0] ** 2
    se = np.std(x**2) / math.sqrt(x.size)
    assert abs(m2 - np.mean(x**2)) <= 5 * se


def test_grid_check_rejects_bad_mass():
    g = FluctuationGrid(np.zeros((2, 3)), np.array([0.5, 0.4]))
    with pytest.raises(GridTooCoarse):
        g.check()


def test_grid_check_rejects_points_outside_box():
    g = FluctuationGrid(np.array([[0.2, 0.0, 0.0]]), np.array([1.0]))
    with pytest.raises(GridTooCoarse):
        g.check(FluctuationBounds(delta=0.1))


def test_random_grid_inside_box(rng):
    b = FluctuationBounds(delta=0.06, eps_d=0.02, eps_s=0.02)
    g = random_grid(b, rng, 40)
    assert abs(g.weights.sum() - 1) < 1e-12
    assert np.all(np.abs(g.points) <= [0.06, 0.02, 0.02])
