"""
Photon statistics of fluctuating sources
========================================

Coherent pulses cut from a fluctuating father pulse, and a heralded
down-conversion source split by Alice's local detector.
"""
import numpy as np

from fluctqkd import (AykiSourceParams, FluctuationBounds, PulseEnsembleSpec, ayki_split, coherent_fock,
                      draw_fluctuation, realized_intensities)

# A coherent pulse of mean photon number 0.6, truncated at 12 photons. The
# mass above the cutoff is kept explicitly.
d = coherent_fock(0.6, 12)
print("a_k  =", np.round(d.weights[:5], 5), " tail =", d.tail_mass)

# Per-pulse fluctuation: father pulse within 5%, each attenuator within 1%.
spec = PulseEnsembleSpec(p=0.3, p_prime=0.6, p_0=0.1, mu=0.2, mu_prime=0.6,
                         fluctuation=FluctuationBounds(delta=0.05, eps_d=0.01, eps_s=0.01))
rng = np.random.default_rng(0)
draw = draw_fluctuation(spec.fluctuation, rng, size=5)
mu_i, mu_prime_i = realized_intensities(spec, draw)
print("mu_i  =", np.round(mu_i, 4))
print("mu'_i =", np.round(mu_prime_i, 4))
# The father pulse moves both would-be intensities together
print("mu'_i / mu_i =", np.round(mu_prime_i / mu_i, 4))

# Heralded source: the no-click branch is the decoy, the click branch the signal.
params = AykiSourceParams(mu_nominal=0.3, mu_fluct=0.2, eta_A=0.5, d_A=1e-6)
for m in (0.24, 0.30, 0.36):
    p_i, p_prime, dec, sig = ayki_split(params, m)
    ratio = p_i * dec.weights[:4] / (p_prime * sig.weights[:4])
    print(f"mu_i = {m:.2f}: decoy/signal ratio per photon number {np.round(ratio, 6)}")
# the ratio does not move with the pump intensity
