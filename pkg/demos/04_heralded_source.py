"""
Heralded source with a fluctuating pump
=======================================

The passive heralded protocol needs no intensity modulation; its bound uses
only the herald click probabilities.
"""
import dataclasses

from fluctqkd import AykiSourceParams, ChannelParams, ayki_delta1, observe, run_expectation, run_monte_carlo

channel = ChannelParams(distance_km=50)
base = AykiSourceParams(mu_nominal=0.3, mu_fluct=0.0, eta_A=0.5, d_A=1e-6)

for fluct in (0.0, 0.1, 0.2):
    src = dataclasses.replace(base, mu_fluct=fluct)
    t = run_expectation(src, channel, 1e10)
    bound = ayki_delta1(observe(t), src, t.n_kd[0])
    print(f"pump fluctuation {fluct:4.0%}: single-photon fraction {t.n_ks[1] / t.N_s:.4f}, bound {bound:.4f}")

# Same observables, different assumed fluctuation: identical bound.
t = run_expectation(dataclasses.replace(base, mu_fluct=0.2), channel, 1e10)
obs = observe(t)
print(ayki_delta1(obs, base, 100.0) == ayki_delta1(obs, dataclasses.replace(base, mu_fluct=0.2), 100.0))

# A Monte-Carlo run for comparison
mc, _ = run_monte_carlo(dataclasses.replace(base, mu_fluct=0.2), channel, 2_000_000, seed=1)
print(f"Monte Carlo: N_d = {mc.N_d}, N_s = {mc.N_s} (expected {t.N_d / 5e3:.1f}, {t.N_s / 5e3:.1f})")
