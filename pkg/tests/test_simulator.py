import csv
import math

import numpy as np
import pytest
from conftest import peng_spec
from hypothesis import given
from hypothesis import strategies as st

from fluctqkd import (
    AykiSourceParams,
    ChannelParams,
    FluctuationBounds,
    GridTooCoarse,
    PulseEnsembleSpec,
    observe,
    run_expectation,
    run_monte_carlo,
    yield_k,
)
from fluctqkd.simulator import ObservedStats, Tally, write_pulse_records
from fluctqkd.source import FluctuationGrid, fluctuation_grid, random_grid


def _tally_equal(a, b):
    for k, v in a.as_dict().items():
        assert v == b.as_dict()[k], k


def _integer_identities(t):
    assert t.N_d == t.n_kd.sum() and t.N_s == t.n_ks.sum()
    np.testing.assert_array_equal(t.n_k, t.n_kd + t.n_ks)
    assert t.M == t.M_d + t.M_s + t.M_0
    assert t.N_kd.sum() == t.M_d and t.N_ks.sum() == t.M_s
    assert t.err_d <= t.N_d and t.err_s <= t.N_s
    assert t.err_1d <= t.n_kd[1] and t.err_1s <= t.n_ks[1]
    t.check()


# ---------------------------------------------------------------- Monte Carlo


def test_vacuum_only_without_dark_counts():
    spec = PulseEnsembleSpec(p=0.0, p_prime=0.0, p_0=1.0, mu=0.2, mu_prime=0.6)
    t, _ = run_monte_carlo(spec, ChannelParams(d_B=0.0), 10_000, seed=1)
    assert t.M_0 == 10_000 and t.N_0 == 0
    assert t.n_k.sum() == 0


def test_unit_transmittance_click_rate():
    spec = PulseEnsembleSpec(p=0.0, p_prime=1.0, mu=0.2, mu_prime=0.6)
    ch = ChannelParams(distance_km=0, eta_bob=1.0, d_B=0.0)
    t, _ = run_monte_carlo(spec, ch, 1_000_000, seed=3)
    q = 1 - math.exp(-0.6)
    sigma = math.sqrt(t.M_s * q * (1 - q))
    assert abs(t.N_s - t.M_s * q) <= 5 * sigma


def test_fixed_seed_is_reproducible(peng_channel):
    spec = peng_spec(delta=0.05, eps=0.01)
    a, ra = run_monte_carlo(spec, peng_channel, 300_000, seed=11, keep_records=50)
    b, rb = run_monte_carlo(spec, peng_channel, 300_000, seed=11, keep_records=50)
    _tally_equal(a, b)
    assert ra == rb
    c, _ = run_monte_carlo(spec, peng_channel, 300_000, seed=12)
    assert c.as_dict() != a.as_dict()


def test_workers_do_not_change_result(peng_channel):
    spec = peng_spec(delta=0.03)
    a, _ = run_monte_carlo(spec, peng_channel, 600_000, seed=4, workers=1)
    b, _ = run_monte_carlo(spec, peng_channel, 600_000, seed=4, workers=3)
    _tally_equal(a, b)


@pytest.mark.parametrize("source", [
    peng_spec(delta=0.06, eps=0.02),
    peng_spec(delta=0.06, draw_law="drift"),
    AykiSourceParams(mu_nominal=0.3, mu_fluct=0.2, eta_A=0.5, d_A=1e-6),
])
def test_tally_identities_monte_carlo(source, peng_channel):
    t, _ = run_monte_carlo(source, peng_channel, 200_000, seed=9)
    _integer_identities(t)


def test_tally_merge_associative_and_commutative(peng_channel):
    spec = peng_spec(delta=0.02)
    parts = [run_monte_carlo(spec, peng_channel, 10_000, seed=s)[0] for s in range(3)]
    x, y, z = parts
    _tally_equal((x + y) + z, x + (y + z))
    _tally_equal(x + y, y + x)


def test_records_bounded_and_consistent(peng_channel, tmp_path):
    spec = peng_spec(delta=0.05, eps=0.01)
    _, rec = run_monte_carlo(spec, peng_channel, 1000, seed=1, keep_records=100)
    assert len(rec) == 100
    assert [r.i for r in rec] == list(range(100))
    for r in rec:
        if r.source == "vacuum":
            assert r.k == 0
        if r.error:
            assert r.clicked
        assert 0.2 * 0.95 * 0.99 <= r.mu_i <= 0.2 * 1.05 * 1.01
    path = tmp_path / "rec.csv"
    write_pulse_records(rec, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["i", "source", "k", "clicked", "error", "mu_i", "mu_prime_i"]
    assert len(rows) == 101


def test_records_span_chunks(peng_channel):
    spec = peng_spec()
    _, rec = run_monte_carlo(spec, peng_channel, 100, seed=1, keep_records=30, chunk_size=16)
    assert [r.i for r in rec] == list(range(30))


def test_monte_carlo_converges_as_inverse_sqrt(peng_channel):
    spec = peng_spec(delta=0.03)
    exp = run_expectation(spec, peng_channel, 1.0)

    def rms_rel(M):
        devs = [run_monte_carlo(spec, peng_channel, M, seed=s)[0].N_s / M / exp.N_s - 1 for s in range(30)]
        return math.sqrt(np.mean(np.square(devs)))

    ratio = rms_rel(10_000) / rms_rel(1_000_000)
    # ideal 10; a 30-seed rms estimate scatters by ~13% on each side
    assert 5.0 < ratio < 20.0


def test_ayki_monte_carlo_matches_expectation(peng_channel):
    src = AykiSourceParams(mu_nominal=0.3, mu_fluct=0.2, eta_A=0.5, d_A=1e-6)
    M = 1_000_000
    t, _ = run_monte_carlo(src, peng_channel, M, seed=5)
    e = run_expectation(src, peng_channel, M)
    for name in ("M_d", "M_s", "N_d", "N_s"):
        q = getattr(e, name) / M
        assert abs(getattr(t, name) - M * q) <= 5 * math.sqrt(M * q * (1 - q)), name


# ---------------------------------------------------------------- expectation


def test_zero_fluctuation_single_photon_count(peng_channel):
    spec = peng_spec()
    M = 1e9
    t = run_expectation(spec, peng_channel, M)
    Y1 = 1 - (1 - 1e-5) * (1 - 0.045 * 10 ** (-1.0))
    assert t.n_ks[1] == pytest.approx(M * spec.p_prime * math.exp(-0.6) * 0.6 * Y1, rel=1e-13)
    assert t.n_kd[1] == pytest.approx(M * spec.p * math.exp(-0.2) * 0.2 * Y1, rel=1e-13)
    assert t.N_0 == pytest.approx(M * 0.1 * 1e-5, rel=1e-13)


def test_one_point_grid_is_zero_fluctuation(peng_channel):
    grid = FluctuationGrid(np.zeros((1, 3)), np.ones(1))
    a = run_expectation(peng_spec(delta=0.06, eps=0.02), peng_channel, 1e6, grid=grid)
    b = run_expectation(peng_spec(), peng_channel, 1e6)
    _tally_equal(a, b)


def test_bad_grid_rejected(peng_channel):
    grid = FluctuationGrid(np.zeros((2, 3)), np.array([0.3, 0.3]))
    with pytest.raises(GridTooCoarse):
        run_expectation(peng_spec(delta=0.06), peng_channel, 1.0, grid=grid)


@pytest.mark.parametrize("law", ["uniform", "clipped-normal", "drift"])
def test_expectation_identities(law, peng_channel):
    t = run_expectation(peng_spec(delta=0.06, eps=0.02, draw_law=law), peng_channel, 1e6)
    assert t.exact
    rel = 1e-10
    assert t.N_d == pytest.approx(t.n_kd.sum(), rel=rel)
    assert t.N_s == pytest.approx(t.n_ks.sum(), rel=rel)
    assert t.M == pytest.approx(t.M_d + t.M_s + t.M_0, rel=rel)
    t.check()


def test_expectation_posterior_identity(peng_channel, rng):
    # E[n_kd] / E[n_k] equals the grid average of p a_k over that of (p a_k + p' a'_k)
    spec = peng_spec(delta=0.08, eps=0.03)
    grid = random_grid(spec.fluctuation, rng, 30)
    t = run_expectation(spec, peng_channel, 1.0, grid=grid)
    J = spec.truncation
    k = np.arange(J + 1)
    fact = np.array([math.factorial(int(j)) for j in k], dtype=float)
    num = np.zeros(J + 1)
    tot = np.zeros(J + 1)
    for (d, ed, es), w in zip(grid.points, grid.weights):
        md, ms = 0.2 * (1 + d) * (1 + ed), 0.6 * (1 + d) * (1 + es)
        pa = spec.p * np.exp(-md) * md**k / fact
        pb = spec.p_prime * np.exp(-ms) * ms**k / fact
        num += w * pa
        tot += w * (pa + pb)
    sel = tot > 1e-200
    np.testing.assert_allclose((t.n_kd / t.n_k)[sel], (num / tot)[sel], rtol=1e-10)


def test_drift_monte_carlo_matches_expectation(peng_channel):
    spec = peng_spec(delta=0.1, draw_law="drift")
    M = 1_000_000
    t, _ = run_monte_carlo(spec, peng_channel, M, seed=2)
    e = run_expectation(spec, peng_channel, M)
    for name in ("N_d", "N_s", "N_0"):
        q = getattr(e, name) / M
        assert abs(getattr(t, name) - M * q) <= 5 * math.sqrt(M * q * (1 - q)), name


channels = st.builds(
    ChannelParams,
    distance_km=st.floats(0, 150),
    eta_bob=st.floats(0.01, 1.0),
    d_B=st.floats(0, 1e-4),
    e_det=st.floats(0, 0.05),
)


@given(ch=channels, delta=st.floats(0, 0.1), eps=st.floats(0, 0.05))
def test_expectation_scales_linearly_in_M(ch, delta, eps):
    spec = peng_spec(delta=delta, eps=eps)
    a = run_expectation(spec, ch, 1.0, n_nodes=3)
    b = run_expectation(spec, ch, 1e6, n_nodes=3)
    assert b.N_s == pytest.approx(1e6 * a.N_s, rel=1e-12)
    assert b.err_1d == pytest.approx(1e6 * a.err_1d, rel=1e-12)


# ---------------------------------------------------------------- observation


def test_observe_projects_counts(peng_channel):
    t, _ = run_monte_carlo(peng_spec(delta=0.02), peng_channel, 100_000, seed=3)
    o = observe(t)
    assert o.N_d == t.N_d and o.N_s == t.N_s and o.N_0 == t.N_0 and o.M == t.M
    assert o.QBER_s == t.err_s / t.N_s
    assert (o.p, o.p_prime, o.p_0) == pytest.approx((0.3, 0.6, 0.1))


def test_observe_zero_clicks_gives_nan():
    spec = PulseEnsembleSpec(p=0.5, p_prime=0.5, mu=0.2, mu_prime=0.6)
    t, _ = run_monte_carlo(spec, ChannelParams(eta_bob=0.0, d_B=0.0), 1000, seed=0)
    o = observe(t)
    assert t.N_d == 0 and t.N_s == 0
    assert math.isnan(o.QBER_d) and math.isnan(o.QBER_s)


def test_observed_stats_hide_ground_truth(peng_channel):
    o = observe(run_expectation(peng_spec(), peng_channel, 1e6))
    for hidden in ("n_kd", "n_ks", "n_k", "N_kd", "N_ks", "err_1d", "err_1s"):
        assert not hasattr(o, hidden)


def test_observed_text_round_trip(peng_channel):
    import configparser

    o = observe(run_expectation(peng_spec(delta=0.02), peng_channel, 1e6))
    p = configparser.ConfigParser()
    p.optionxform = str
    p.read_string(o.to_text())
    assert ObservedStats.from_mapping(dict(p.items("observed"))) == o


def test_tally_merge_rejects_shape_mismatch(peng_channel):
    a = run_expectation(peng_spec(), peng_channel, 1.0)
    b = run_expectation(
        PulseEnsembleSpec(p=0.3, p_prime=0.6, p_0=0.1, mu=0.2, mu_prime=0.6, truncation=20), peng_channel, 1.0
    )
    with pytest.raises(ValueError):
        a + b
    assert isinstance(a + a, Tally)
