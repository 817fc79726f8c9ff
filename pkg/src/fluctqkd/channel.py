"""Honest lossy fiber channel with Bob's threshold detector.

This is the ground-truth physics used by the simulator. The estimator never
reads it: bounds are built from observed counts only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ChannelParams:
    distance_km: float = 50.0
    alpha_db_per_km: float = 0.2
    eta_bob: float = 0.045
    d_B: float = 1.0e-5
    e_det: float = 0.015
    e_0: float = 0.5

    def __post_init__(self):
        if self.distance_km < 0 or self.alpha_db_per_km < 0:
            raise ValueError("distance and attenuation must be non-negative")
        for name in ("eta_bob", "d_B", "e_det", "e_0"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def transmittance(params: ChannelParams) -> float:
    """Overall single-photon transmittance: fiber loss times Bob's efficiency."""
    return params.eta_bob * 10.0 ** (-params.alpha_db_per_km * params.distance_km / 10.0)


def yield_k(k, params: ChannelParams):
    """Click probability for a ``k``-photon pulse, dark counts included."""
    return params.d_B + (1.0 - params.d_B) * _signal_click(k, params)


def _signal_click(k, params):
    # 1 - (1 - eta)^k without cancellation at small eta
    eta = transmittance(params)
    k = np.asarray(k, dtype=float)
    if eta >= 1.0:
        return np.where(k > 0, 1.0, 0.0)
    return -np.expm1(k * np.log1p(-eta))


def error_prob_k(k, params: ChannelParams):
    """Bit-error probability of a click caused by a ``k``-photon pulse.

    Dark clicks are random (``e_0``); signal clicks flip with ``e_det``.
    Where the yield vanishes the click is a pure dark count, so ``e_0`` is
    returned.
    """
    y = np.asarray(yield_k(k, params))
    # mix by the dark share d_B / Y; stays monotone even for subnormal yields
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(y > 0, np.minimum(params.d_B / np.where(y > 0, y, 1.0), 1.0), 1.0)
    e = np.where(w >= 1.0, params.e_0, params.e_det + (params.e_0 - params.e_det) * w)
    return float(e) if e.ndim == 0 else e
