"""Worst-case bounds on single-photon counts from observed statistics.

Every bound here is a function of :class:`~fluctqkd.simulator.ObservedStats`
and a :class:`RatioEnvelope`, i.e. of quantities an experiment actually knows:
the observed counts and the known bounds on the source parameters.

The envelope bounds the per-pulse ratio ``r_k = p_j a_kj / (p'_j a'_kj)``
between the probability that a ``k``-photon pulse came from the decoy source
and that it came from the signal source. The *economic* envelope maximises
that ratio jointly over the fluctuation box; the *normal* one maximises the
numerator and minimises the denominator independently, which is looser.
"""
from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConditionViolated,
    DegenerateDenominator,
    DegenerateSource,
    MissingVacuumSource,
)
from .simulator import ObservedStats, Tally
from .source import AykiSourceParams, PulseEnsembleSpec, gamma, poisson_weights

DENOMINATOR_FLOOR = 1e-15
DEFAULT_F_EC = 1.16
DEFAULT_SIFTING = 0.5


@dataclass(frozen=True)
class RatioEnvelope:
    """Bounds on ``p_j a_kj / (p'_j a'_kj)`` over all pulses ``j``.

    ``r_max[k]`` is an upper bound for ``k = 0..K``; ``r1_min`` a lower bound
    at ``k = 1``.
    """

    r_max: np.ndarray
    r1_min: float
    provenance: str = "user-supplied"

    def __post_init__(self):
        r = np.asarray(self.r_max, dtype=float)
        r.setflags(write=False)
        object.__setattr__(self, "r_max", r)
        if r.ndim != 1 or r.size < 3:
            raise ValueError("r_max needs entries for k = 0, 1, 2 at least")
        if np.any(r < 0) or self.r1_min < 0:
            raise ValueError("ratios are non-negative")
        if self.r1_min > r[1] * (1 + 1e-12):
            raise ValueError("r1_min exceeds r_max[1]")

    @property
    def K(self):
        return self.r_max.size - 1

    @property
    def r1(self):
        return float(self.r_max[1])

    @property
    def r2(self):
        return float(self.r_max[2])


def _require_observed(obs):
    if isinstance(obs, Tally) or not isinstance(obs, ObservedStats):
        raise TypeError("bounds take ObservedStats only; project a Tally with observe() first")


# --------------------------------------------------------------------------
# envelopes


def _coherent_log_ratio(spec: PulseEnsembleSpec, k, s, x, y):
    mu_i = spec.mu * (1 + s) * (1 + x)
    mu_p = spec.mu_prime * (1 + s) * (1 + y)
    with np.errstate(divide="ignore"):
        base = k * (np.log(mu_i) - np.log(mu_p)) if k else 0.0
    return math.log(spec.p / spec.p_prime) + base + mu_p - mu_i


def _coherent_ratio_extremum(spec: PulseEnsembleSpec, k: int, sense: str) -> float:
    """Exact max/min of the k-photon ratio over the fluctuation box.

    For a fixed father-pulse deviation the log-ratio is linear in it and
    separates into a concave function of the decoy attenuator deviation and a
    convex one of the signal deviation, so the extremum sits on a finite set
    of candidates: box edges and the clipped stationary points.
    """
    f = spec.fluctuation
    if spec.p_prime == 0:
        raise DegenerateSource("signal source is never selected")
    if spec.p == 0 or (spec.mu == 0 and k > 0):
        return 0.0
    best = []
    for s in {-f.delta, f.delta}:
        xs = {-f.eps_d, f.eps_d}
        ys = {-f.eps_s, f.eps_s}
        if k > 0:
            xs.add(min(max(k / ((1 + s) * spec.mu) - 1, -f.eps_d), f.eps_d))
            ys.add(min(max(k / ((1 + s) * spec.mu_prime) - 1, -f.eps_s), f.eps_s))
        best.extend(_coherent_log_ratio(spec, k, s, x, y) for x, y in itertools.product(xs, ys))
    return math.exp(max(best) if sense == "max" else min(best))


def coherent_ratio_max_closed_form(spec: PulseEnsembleSpec, k: int) -> float:
    """Corner formula for the maximal ratio, valid for ``k >= 1`` while the ratio
    grows with the decoy attenuator and shrinks with the signal attenuator."""
    f = spec.fluctuation
    lo_sig = spec.mu_prime * (1 - f.eps_s)
    hi_dec = spec.mu * (1 + f.eps_d)
    return spec.p / spec.p_prime * (hi_dec / lo_sig) ** k * math.exp((1 + f.delta) * (lo_sig - hi_dec))


def coherent_envelope_condition(spec: PulseEnsembleSpec) -> bool:
    """Largest decoy/signal intensity ratio stays below 1, so r_max decays in k."""
    f = spec.fluctuation
    return spec.mu * (1 + f.eps_d) < spec.mu_prime * (1 - f.eps_s)


def coherent_ratio_envelope(spec: PulseEnsembleSpec, K: int = 2, check: bool = True) -> RatioEnvelope:
    """Economic envelope for attenuated coherent pulses.

    The ratio at photon number ``k`` depends on the pulse only through
    ``mu_i / mu'_i`` (father-pulse fluctuation cancels) and ``mu'_i - mu_i``.
    Both extrema are computed exactly over the fluctuation box.
    """
    if check and not coherent_envelope_condition(spec):
        raise ConditionViolated(
            "need mu (1 + eps_d) < mu' (1 - eps_s) for the ratio to decrease with photon number"
        )
    K = max(K, 2)
    r_max = np.array([_coherent_ratio_extremum(spec, k, "max") for k in range(K + 1)])
    r1_min = _coherent_ratio_extremum(spec, 1, "min")
    return RatioEnvelope(r_max, r1_min, "coherent-closed-form")


def _pmf_extremum_on_interval(k, lo, hi, sense):
    # the Poisson pmf in mu is unimodal with its peak at mu = k
    cands = [lo, hi]
    if sense == "max":
        cands.append(min(max(float(k), lo), hi))
    vals = poisson_weights(np.array(cands), k)[:, k]
    return float(vals.max() if sense == "max" else vals.min())


def normal_worstcase_envelope(spec: PulseEnsembleSpec, K: int = 2, check: bool = True) -> RatioEnvelope:
    """Envelope from independent worst cases of numerator and denominator.

    ``r_max[k] = p max_i a_ki / (p' min_i a'_ki)`` with the decoy and signal
    intensities ranging independently over their fluctuation intervals.
    """
    lo_d, hi_d = spec.mu_range
    lo_s, hi_s = spec.mu_prime_range
    if check and not hi_d < lo_s:
        raise ConditionViolated("normal worst case needs the decoy intensity range below the signal range")
    if spec.p_prime == 0:
        raise DegenerateSource("signal source is never selected")
    K = max(K, 2)
    c = spec.p / spec.p_prime
    r_max = np.array([
        c * _pmf_extremum_on_interval(k, lo_d, hi_d, "max") / _pmf_extremum_on_interval(k, lo_s, hi_s, "min")
        for k in range(K + 1)
    ])
    r1_min = c * _pmf_extremum_on_interval(1, lo_d, hi_d, "min") / _pmf_extremum_on_interval(1, lo_s, hi_s, "max")
    return RatioEnvelope(r_max, min(r1_min, r_max[1]), "normal-worst-case")


def ayki_ratio_envelope(params: AykiSourceParams, K: int = 2) -> RatioEnvelope:
    """Heralded-source envelope: the ratio is ``(1 - gamma_k) / gamma_k`` for every pulse."""
    K = max(K, 2)
    g = gamma(np.arange(K + 1), params.d_A, params.eta_A)
    if g[1] <= 0:
        raise DegenerateSource("gamma_1 = 0: the herald never clicks on a single photon")
    with np.errstate(divide="ignore"):
        r = np.where(g > 0, (1 - g) / np.where(g > 0, g, 1.0), np.inf)
    return RatioEnvelope(r, float(r[1]), "ayki-constant")


def check_condition(env: RatioEnvelope, K: int | None = None) -> bool:
    """``r_max[k] <= r_max[2] <= r_max[1]`` for every ``2 <= k <= K``."""
    K = env.K if K is None else min(K, env.K)
    if K < 2:
        raise ValueError("K must be >= 2")
    r = env.r_max
    return bool(r[2] <= r[1] and np.all(r[2:K + 1] <= r[2]))


# --------------------------------------------------------------------------
# vacuum-count bounds


def bound_vacuum_3intensity(obs: ObservedStats, spec: PulseEnsembleSpec):
    """``(n0d_ub, n0s_lb)`` from the vacuum-source click count ``N_0``."""
    _require_observed(obs)
    if spec.p_0 <= 0:
        raise MissingVacuumSource("vacuum bounds need a vacuum source (p_0 > 0)")
    mu_min = spec.mu_range[0]
    mu_prime_max = spec.mu_prime_range[1]
    n0d = spec.p / spec.p_0 * math.exp(-mu_min) * obs.N_0
    n0s = spec.p_prime / spec.p_0 * math.exp(-mu_prime_max) * obs.N_0
    return min(max(n0d, 0.0), obs.N_d), min(max(n0s, 0.0), obs.N_s)


def bound_vacuum_worstcase(obs: ObservedStats, source, y0_upper: float, y0_lower: float = 0.0):
    """Vacuum bounds without a vacuum source, from an assumed background-yield range.

    ``n0d <= M max_i(p_i a_0i) y0_upper`` and ``n0s >= M min_i(p'_i a'_0i) y0_lower``.
    """
    _require_observed(obs)
    if isinstance(source, AykiSourceParams):
        lo, hi = source.mu_range
        d = source.d_A
        max_pa0 = (1 - d) / (1 + lo)
        min_ppa0 = d / (1 + hi)
    else:
        max_pa0 = source.p * math.exp(-source.mu_range[0])
        min_ppa0 = source.p_prime * math.exp(-source.mu_prime_range[1])
    n0d = obs.M * max_pa0 * y0_upper
    n0s = obs.M * min_ppa0 * y0_lower
    return min(n0d, obs.N_d), min(n0s, obs.N_s)


# --------------------------------------------------------------------------
# single-photon bounds


def n1s_terms(obs: ObservedStats, env: RatioEnvelope, n0d_ub: float, n0s_lb: float):
    """Numerator and denominator of the single-photon signal-count bound."""
    _require_observed(obs)
    if not check_condition(env):
        raise ConditionViolated("ratio envelope is not nonincreasing in photon number")
    den = env.r1 - env.r2
    if den < DENOMINATOR_FLOOR:
        raise DegenerateDenominator(f"r_max[1] - r_max[2] = {den!r}")
    num = obs.N_d - env.r2 * obs.N_s + env.r2 * n0s_lb - n0d_ub
    return num, den


def bound_n1s(obs: ObservedStats, env: RatioEnvelope, n0d_ub: float, n0s_lb: float = 0.0) -> float:
    """Lower bound on the number of single-photon counts from the signal source.

    Clamped to ``[0, N_s]``.
    """
    num, den = n1s_terms(obs, env, n0d_ub, n0s_lb)
    return min(max(num / den, 0.0), obs.N_s)


def bound_delta1_decoy(delta1s_lb: float, env: RatioEnvelope, obs: ObservedStats | None = None) -> float:
    """Lower bound on the single-photon fraction of decoy counts.

    Each single-photon count splits as ``n_1d >= r1_min n_1s``, so
    ``Delta_1 >= r1_min Delta'_1 N_s / N_d``. Without ``obs`` the bare
    ratio form ``r1_min Delta'_1`` is returned.
    """
    raw = float(env.r1_min * delta1s_lb)
    if obs is None:
        return raw
    _require_observed(obs)
    if obs.N_d <= 0:
        return 0.0
    return float(min(raw * obs.N_s / obs.N_d, 1.0))


def bound_e1s(e1d: float, env: RatioEnvelope):
    """Sandwich for the single-photon error rate of the signal source."""
    if not 0.0 <= e1d <= 1.0:
        raise ValueError("e1d must lie in [0, 1]")
    if e1d == 0:
        return 0.0, 0.0
    if env.r1_min <= 0:
        return 0.0, 1.0
    if env.r1_min == env.r1:
        return e1d, e1d
    spread = env.r1 / env.r1_min
    return e1d / spread, min(e1d * spread, 1.0)


def ayki_delta1(obs: ObservedStats, params: AykiSourceParams, n0d: float) -> float:
    """Single-photon fraction bound of the passive heralded protocol.

    Depends on the pulses only through ``gamma_1``, ``gamma_2`` and ``d_A``;
    the pump fluctuation never enters. Clamped to ``[0, 1]``.
    """
    _require_observed(obs)
    g1, g2 = gamma(1, params.d_A, params.eta_A), gamma(2, params.d_A, params.eta_A)
    if g1 <= 0 or g2 <= 0:
        raise DegenerateSource("herald click probability vanishes")
    r1, r2 = (1 - g1) / g1, (1 - g2) / g2
    den = obs.N_s * (r1 - r2)
    if not den > DENOMINATOR_FLOOR:
        raise DegenerateDenominator("gamma_1 == gamma_2 (eta_A = 0) or no signal counts")
    ratio_0 = params.d_A / (1 - params.d_A)
    num = obs.N_d - r2 * obs.N_s - (1 - r2 * ratio_0) * n0d
    return min(max(num / den, 0.0), 1.0)


# --------------------------------------------------------------------------
# report and key rate


@dataclass(frozen=True)
class BoundReport:
    variant: str
    provenance: str
    condition_ok: bool
    r0_max: float
    r1_max: float
    r2_max: float
    r1_min: float
    n0d_ub: float
    n0s_lb: float
    numerator: float
    denominator: float
    n1s_lb: float
    delta1s_lb: float
    delta1d_lb: float
    delta1d_lb_ratio_form: float
    e1d: float
    e1s_lb: float
    e1s_ub: float
    clamped: str = ""

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.as_dict().items())

    def as_dict(self):
        return dataclasses.asdict(self)

    def csv_row(self):
        return [_fmt(v) for v in self.as_dict().values()]


REPORT_COLUMNS = tuple(f.name for f in dataclasses.fields(BoundReport))


def _fmt(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def estimate(obs: ObservedStats, source, variant: str = "economic", e1d: float | None = None,
             y0_upper: float | None = None, y0_lower: float = 0.0) -> BoundReport:
    """Run the full estimation for one envelope variant.

    ``e1d`` is the single-photon error rate of decoy counts; without it the
    observed decoy QBER is used as a proxy. ``y0_upper`` / ``y0_lower`` bound
    the background yield for protocols without a vacuum source.
    """
    _require_observed(obs)
    if variant not in ("economic", "normal"):
        raise ValueError(f"unknown variant {variant!r}")
    if e1d is None:
        e1d = 0.0 if math.isnan(obs.QBER_d) else obs.QBER_d
    clamped = []

    if isinstance(source, AykiSourceParams):
        env = ayki_ratio_envelope(source)
        if y0_upper is None:
            n0d_hi = obs.N_d
        else:
            n0d_hi = bound_vacuum_worstcase(obs, source, y0_upper)[0]
        coef = 1 - env.r2 * source.d_A / (1 - source.d_A)
        n0d = n0d_hi if coef >= 0 else 0.0
        n0s = n0d * source.d_A / (1 - source.d_A)
        den = obs.N_s * (env.r1 - env.r2)
        num = obs.N_d - env.r2 * obs.N_s - coef * n0d
        delta1s = ayki_delta1(obs, source, n0d)
        if num / den != delta1s:
            clamped.append("delta1s")
        n1s = delta1s * obs.N_s
        cond = check_condition(env)
    else:
        env = (coherent_ratio_envelope if variant == "economic" else normal_worstcase_envelope)(source)
        if source.p_0 > 0:
            n0d, n0s = bound_vacuum_3intensity(obs, source)
        elif y0_upper is not None:
            n0d, n0s = bound_vacuum_worstcase(obs, source, y0_upper, y0_lower)
        else:
            n0d, n0s = obs.N_d, 0.0
        cond = check_condition(env)
        num, den = n1s_terms(obs, env, n0d, n0s)
        n1s = bound_n1s(obs, env, n0d, n0s)
        if n1s != num / den:
            clamped.append("n1s")
        delta1s = n1s / obs.N_s if obs.N_s > 0 else 0.0

    e_lo, e_hi = bound_e1s(e1d, env)
    return BoundReport(
        variant=variant, provenance=env.provenance, condition_ok=cond,
        r0_max=float(env.r_max[0]), r1_max=env.r1, r2_max=env.r2, r1_min=float(env.r1_min),
        n0d_ub=float(n0d), n0s_lb=float(n0s), numerator=float(num), denominator=float(den),
        n1s_lb=float(n1s), delta1s_lb=float(delta1s),
        delta1d_lb=bound_delta1_decoy(delta1s, env, obs),
        delta1d_lb_ratio_form=bound_delta1_decoy(delta1s, env),
        e1d=float(e1d), e1s_lb=float(e_lo), e1s_ub=float(e_hi), clamped="|".join(clamped),
    )


def binary_entropy(x):
    """Shannon entropy of a biased coin, in bits; arguments above 1/2 are capped at 1/2."""
    x = np.minimum(np.clip(np.asarray(x, dtype=float), 0.0, 1.0), 0.5)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -x * np.log2(x) - (1 - x) * np.log2(1 - x)
    h = np.where((x <= 0) | (x >= 1), 0.0, h)
    return float(h) if h.ndim == 0 else h


def key_rate(obs: ObservedStats, report: BoundReport, f: float = DEFAULT_F_EC, q: float = DEFAULT_SIFTING) -> float:
    """Secret-key rate per pulse sent, GLLP style, clamped at zero.

    ``R = q [Q Delta'_1 (1 - H2(e1s_ub)) - Q f H2(E)]`` with ``Q = N_s / M``
    and ``E`` the observed signal QBER.
    """
    _require_observed(obs)
    if not report.condition_ok:
        return 0.0
    Q = obs.N_s / obs.M if obs.M > 0 else 0.0
    E = 0.0 if math.isnan(obs.QBER_s) else obs.QBER_s
    rate = q * (Q * report.delta1s_lb * (1 - binary_entropy(report.e1s_ub)) - Q * f * binary_entropy(E))
    return max(rate, 0.0)
