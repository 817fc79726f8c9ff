"""Photon-number distributions and fluctuating source models.

Two source families are supported:

* attenuated coherent light, where decoy and signal pulses are cut from a
  common father pulse whose intensity fluctuates, and each attenuator adds its
  own device fluctuation;
* the passive heralded (AYKI) source, where a parametric down-conversion pair
  is split by Alice's local detector into a no-click (decoy) and a click
  (signal) branch.

All probabilities are evaluated in log space so that large photon numbers do
not underflow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammainc, gammaln, xlogy

from .errors import DegenerateSource, GridTooCoarse, TailTooLarge

DEFAULT_TAIL_TOL = 1e-12
DRAW_LAWS = ("uniform", "clipped-normal", "drift")


@dataclass(frozen=True)
class FockDistribution:
    """Truncated photon-number distribution ``a_k`` for ``k = 0..J``.

    The probability mass beyond the cutoff is kept in ``tail_mass`` so that
    ``weights.sum() + tail_mass == 1``.
    """

    weights: np.ndarray
    tail_mass: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if w.ndim != 1 or w.size < 2:
            raise ValueError("weights must be a 1-d array with J >= 1")
        if np.any(w < 0) or self.tail_mass < 0:
            raise ValueError("probabilities must be non-negative")
        if abs(w.sum() + self.tail_mass - 1.0) > 1e-12:
            raise ValueError("weights + tail_mass must sum to 1")

    @property
    def truncation(self) -> int:
        return self.weights.size - 1

    def __getitem__(self, k):
        return self.weights[k]


def _finish(weights, tail, J, tol):
    tail = max(float(tail), 0.0)
    if tail > tol:
        raise TailTooLarge(J, tail, tol)
    return FockDistribution(weights, tail)


def poisson_weights(mu, J):
    """Poisson pmf ``e^-mu mu^k / k!`` for ``k = 0..J``; broadcasts over ``mu``."""
    mu = np.asarray(mu, dtype=float)[..., None]
    k = np.arange(J + 1)
    return np.exp(xlogy(k, mu) - mu - gammaln(k + 1))


def pdc_weights(mu, J):
    """Thermal pair statistics ``mu^k (1+mu)^-(k+1)``; broadcasts over ``mu``."""
    mu = np.asarray(mu, dtype=float)[..., None]
    k = np.arange(J + 1)
    return np.exp(xlogy(k, mu) - (k + 1) * np.log1p(mu))


def coherent_fock(mu: float, J: int, tol: float = DEFAULT_TAIL_TOL) -> FockDistribution:
    """Poissonian photon-number distribution of an attenuated laser pulse.

    Raises
    ------
    TailTooLarge
        If the mass beyond ``J`` exceeds ``tol``.
    """
    if mu < 0 or J < 1:
        raise ValueError("need mu >= 0 and J >= 1")
    w = poisson_weights(mu, J)
    # regularised lower gamma P(J+1, mu) is the Poisson tail beyond J, no cancellation
    tail = 0.0 if mu == 0 else float(gammainc(J + 1, mu))
    return _finish(w, tail, J, tol)


def pdc_number_dist(mu_i: float, J: int, tol: float = DEFAULT_TAIL_TOL) -> FockDistribution:
    """Photon-number distribution of one arm of a down-conversion pair."""
    if mu_i < 0 or J < 1:
        raise ValueError("need mu_i >= 0 and J >= 1")
    w = pdc_weights(mu_i, J)
    tail = (mu_i / (1.0 + mu_i)) ** (J + 1)
    return _finish(w, tail, J, tol)


def gamma(k, d_A, eta_A):
    """Probability that Alice's herald detector clicks on a ``k``-photon pulse."""
    return 1.0 - (1.0 - d_A) * (1.0 - eta_A) ** np.asarray(k)


def cutoff_for(mu_max: float, family: str = "coherent", tol: float = DEFAULT_TAIL_TOL) -> int:
    """Smallest cutoff ``J`` whose tail stays below ``tol`` at intensity ``mu_max``."""
    J = 1
    while True:
        try:
            if family == "coherent":
                coherent_fock(mu_max, J, tol)
            else:
                pdc_number_dist(mu_max, J, tol)
            return J
        except TailTooLarge:
            J += 1
            if J > 2000:
                raise


# --------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class FluctuationBounds:
    """Per-pulse relative fluctuation bounds.

    ``delta`` bounds the father pulse, ``eps_d`` and ``eps_s`` the decoy and
    signal attenuators. ``draw_law`` selects how per-pulse values are drawn
    inside the bounds: ``uniform`` (independent), ``clipped-normal`` (normal
    with std ``sigma_frac * bound``, clipped to the bound) or ``drift`` (the
    father pulse follows a slow sinusoid of period ``drift_period`` pulses,
    attenuators uniform).
    """

    delta: float = 0.0
    eps_d: float = 0.0
    eps_s: float = 0.0
    draw_law: str = "uniform"
    sigma_frac: float = 0.5
    drift_period: int = 10_000

    def __post_init__(self):
        for name in ("delta", "eps_d", "eps_s"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")
        if self.draw_law not in DRAW_LAWS:
            raise ValueError(f"unknown draw law {self.draw_law!r}; choose from {DRAW_LAWS}")
        if self.sigma_frac <= 0 or self.drift_period < 1:
            raise ValueError("sigma_frac and drift_period must be positive")

    @property
    def is_zero(self) -> bool:
        return self.delta == 0 and self.eps_d == 0 and self.eps_s == 0


@dataclass(frozen=True)
class PulseEnsembleSpec:
    """Coherent-state decoy protocol: selection probabilities and intensities.

    ``p_0 = 0`` gives the 2-intensity protocol, ``p_0 > 0`` adds a vacuum
    source (3-intensity protocol).
    """

    p: float
    p_prime: float
    mu: float
    mu_prime: float
    p_0: float = 0.0
    fluctuation: FluctuationBounds = field(default_factory=FluctuationBounds)
    truncation: int = 30

    def __post_init__(self):
        probs = (self.p, self.p_prime, self.p_0)
        if any(not 0.0 <= x <= 1.0 for x in probs):
            raise ValueError("selection probabilities must lie in [0, 1]")
        if abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError(f"p + p_prime + p_0 must be 1, got {sum(probs)!r}")
        if self.mu < 0 or self.mu_prime <= 0:
            raise ValueError("intensities must be non-negative")
        if self.truncation < 1:
            raise ValueError("truncation must be >= 1")

    @property
    def mu_range(self):
        f = self.fluctuation
        return self.mu * (1 - f.delta) * (1 - f.eps_d), self.mu * (1 + f.delta) * (1 + f.eps_d)

    @property
    def mu_prime_range(self):
        f = self.fluctuation
        return (
            self.mu_prime * (1 - f.delta) * (1 - f.eps_s),
            self.mu_prime * (1 + f.delta) * (1 + f.eps_s),
        )


@dataclass(frozen=True)
class AykiSourceParams:
    """Heralded down-conversion source with a fluctuating pump.

    The realised pair intensity is ``mu_nominal * (1 + delta_i)`` with
    ``|delta_i| <= mu_fluct``.
    """

    mu_nominal: float
    mu_fluct: float = 0.20
    eta_A: float = 0.5
    d_A: float = 1e-6
    draw_law: str = "uniform"
    truncation: int | None = None

    def __post_init__(self):
        if self.mu_nominal <= 0:
            raise ValueError("mu_nominal must be positive")
        if not 0.0 <= self.mu_fluct < 1.0:
            raise ValueError("mu_fluct must lie in [0, 1)")
        if not 0.0 <= self.d_A < 1.0:
            raise ValueError("d_A must lie in [0, 1)")
        if not 0.0 < self.eta_A <= 1.0:
            raise ValueError("eta_A must lie in (0, 1]")

    @property
    def fluctuation(self) -> FluctuationBounds:
        return FluctuationBounds(delta=self.mu_fluct, draw_law=self.draw_law)

    @property
    def mu_range(self):
        return self.mu_nominal * (1 - self.mu_fluct), self.mu_nominal * (1 + self.mu_fluct)

    @property
    def J(self) -> int:
        if self.truncation is not None:
            return self.truncation
        return max(cutoff_for(self.mu_range[1], "pdc"), 2)


def ayki_split(params: AykiSourceParams, mu_i: float, J: int | None = None, tol=DEFAULT_TAIL_TOL):
    """Split a heralded pair into Alice's no-click (decoy) and click (signal) branch.

    Returns ``(p_i, p_i_prime, decoy, signal)`` where the two distributions
    are the photon-number statistics of the sent mode conditioned on each
    herald outcome.
    """
    J = params.J if J is None else J
    d_A, eta_A = params.d_A, params.eta_A
    denom_click = d_A + mu_i * eta_A
    if denom_click <= 0:
        raise DegenerateSource("herald never clicks (d_A = 0 and mu_i * eta_A = 0)")
    p_i = (1.0 - d_A) / (1.0 + mu_i * eta_A)
    p_prime = denom_click / (1.0 + mu_i * eta_A)
    X = pdc_weights(mu_i, J)
    g = gamma(np.arange(J + 1), d_A, eta_A)
    a = (1.0 + mu_i * eta_A) / (1.0 - d_A) * X * (1.0 - g)
    a_prime = (1.0 + mu_i * eta_A) / denom_click * X * g
    x_tail = (mu_i / (1.0 + mu_i)) ** (J + 1)
    if x_tail > tol:
        raise TailTooLarge(J, x_tail, tol)
    decoy = FockDistribution(a, max(1.0 - a.sum(), 0.0))
    signal = FockDistribution(a_prime, max(1.0 - a_prime.sum(), 0.0))
    return p_i, p_prime, decoy, signal


# --------------------------------------------------------------------------
# fluctuation draws


def draw_fluctuation(bounds: FluctuationBounds, rng: np.random.Generator, size=None, index=None):
    """Draw ``(delta_i, eps_id, eps_is)`` inside ``bounds``.

    ``index`` holds the pulse indices and is only used by the ``drift`` law.
    """
    shape = () if size is None else size

    def component(bound):
        if bound == 0:
            return np.zeros(shape)
        if bounds.draw_law == "clipped-normal":
            return np.clip(rng.normal(0.0, bounds.sigma_frac * bound, shape), -bound, bound)
        return rng.uniform(-bound, bound, shape)

    if bounds.draw_law == "drift":
        idx = np.zeros(shape) if index is None else np.asarray(index, dtype=float)
        delta_i = bounds.delta * np.sin(2 * np.pi * idx / bounds.drift_period)
    else:
        delta_i = component(bounds.delta)
    eps_d = component(bounds.eps_d)
    eps_s = component(bounds.eps_s)
    if size is None:
        return float(delta_i), float(eps_d), float(eps_s)
    return delta_i, eps_d, eps_s


def realized_intensities(spec: PulseEnsembleSpec, draw):
    """Would-be decoy and signal intensities of a pulse for one fluctuation draw."""
    delta_i, eps_id, eps_is = draw
    father = 1 + np.asarray(delta_i)
    mu_i = spec.mu * father * (1 + np.asarray(eps_id))
    mu_prime_i = spec.mu_prime * father * (1 + np.asarray(eps_is))
    if np.ndim(mu_i) == 0:
        return float(mu_i), float(mu_prime_i)
    return mu_i, mu_prime_i


@dataclass(frozen=True)
class FluctuationGrid:
    """Finite quadrature over the fluctuation box: ``points`` (G, 3), ``weights`` (G,)."""

    points: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return self.weights.size

    def check(self, bounds: FluctuationBounds | None = None, atol=1e-12):
        if self.points.ndim != 2 or self.points.shape[1] != 3 or len(self.points) != self.weights.size:
            raise GridTooCoarse("grid points must have shape (G, 3) matching the weights")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > atol:
            raise GridTooCoarse(f"grid weights sum to {self.weights.sum()!r}, not 1")
        if bounds is not None:
            lim = np.array([bounds.delta, bounds.eps_d, bounds.eps_s])
            if np.any(np.abs(self.points) > lim * (1 + 1e-12)):
                raise GridTooCoarse("grid points leave the fluctuation box")
        return self


def _axis_rule(bound, law, n, sigma_frac):
    if bound == 0:
        return np.zeros(1), np.ones(1)
    if law == "drift":
        # sin of a uniform phase follows the arcsine law: Gauss-Chebyshev is exact for it
        j = np.arange(1, n + 1)
        return bound * np.cos((2 * j - 1) * np.pi / (2 * n)), np.full(n, 1.0 / n)
    x, w = np.polynomial.legendre.leggauss(n)
    if law == "uniform":
        return bound * x, w / 2
    sigma = sigma_frac * bound
    from scipy.stats import norm

    tail = float(norm.sf(bound / sigma))
    dens = w * norm.pdf(bound * x / sigma)
    dens *= (1 - 2 * tail) / dens.sum()
    return np.concatenate([[-bound], bound * x, [bound]]), np.concatenate([[tail], dens, [tail]])


def fluctuation_grid(bounds: FluctuationBounds, n: int = 8) -> FluctuationGrid:
    """Tensor quadrature whose weights follow ``bounds.draw_law``.

    Axes with zero bound collapse to a single node, so zero fluctuation gives
    a one-point grid.
    """
    rules = [
        _axis_rule(bounds.delta, "drift" if bounds.draw_law == "drift" else bounds.draw_law, n, bounds.sigma_frac),
        _axis_rule(bounds.eps_d, "uniform" if bounds.draw_law == "drift" else bounds.draw_law, n, bounds.sigma_frac),
        _axis_rule(bounds.eps_s, "uniform" if bounds.draw_law == "drift" else bounds.draw_law, n, bounds.sigma_frac),
    ]
    mesh = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wmesh = np.meshgrid(*[r[1] for r in rules], indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    weights = np.prod(np.stack([w.ravel() for w in wmesh], axis=1), axis=1)
    weights = weights / math.fsum(weights)
    return FluctuationGrid(points, weights).check(bounds)


def random_grid(bounds: FluctuationBounds, rng: np.random.Generator, size: int = 50) -> FluctuationGrid:
    """Random points inside the box with random weights: an arbitrary fluctuation pattern."""
    lim = np.array([bounds.delta, bounds.eps_d, bounds.eps_s])
    pts = rng.uniform(-1, 1, (size, 3)) * lim
    # pin some mass on the corners, where the envelope is attained
    corners = rng.choice([-1.0, 1.0], (max(size // 10, 1), 3)) * lim
    pts = np.vstack([pts, corners])
    w = rng.exponential(size=len(pts))
    return FluctuationGrid(pts, w / w.sum()).check(bounds)
