"""Exact verification of the single-photon bound on explicit pulse sets.

A :class:`MicroInstance` lists every pulse: its selection probability, both
photon-number distributions, and which photon-number classes caused a click.
Clicks are given directly (they may be chosen adversarially), either as a
definite 0/1 membership per pulse or as fractional weights ``w[i, k]`` meaning
"pulse ``i`` is a ``k``-photon pulse that clicked" with that probability. All
identities are linear in those weights, so both forms are checked the same
way.

Nothing here is sampled: every count is an exact sum.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConditionViolated
from .simulator import Tally

ATOL = 1e-12
MAX_PULSES = 10_000
MAX_J = 6


@dataclass(frozen=True)
class MicroInstance:
    p: np.ndarray
    a: np.ndarray
    a_prime: np.ndarray
    clicks: np.ndarray
    e1: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        a, ap = np.atleast_2d(self.a).astype(float), np.atleast_2d(self.a_prime).astype(float)
        w = np.atleast_2d(self.clicks).astype(float)
        e1 = np.broadcast_to(np.asarray(self.e1, dtype=float), p.shape).copy()
        M, width = a.shape
        if M > MAX_PULSES or width - 1 > MAX_J:
            raise ValueError(f"micro instances are capped at M <= {MAX_PULSES}, J <= {MAX_J}")
        if p.shape != (M,) or ap.shape != a.shape or w.shape != a.shape:
            raise ValueError("inconsistent array shapes")
        if np.any((p < 0) | (p > 1)) or np.any(a < 0) or np.any(ap < 0):
            raise ValueError("probabilities must be non-negative")
        if not (np.allclose(a.sum(1), 1, atol=1e-12) and np.allclose(ap.sum(1), 1, atol=1e-12)):
            raise ValueError("each photon-number distribution must sum to 1")
        if np.any((w < 0) | (w > 1)) or np.any((e1 < 0) | (e1 > 1)):
            raise ValueError("click weights and error probabilities must lie in [0, 1]")
        if np.any((w > 0) & (self._mix(p, a, ap) == 0)):
            raise ValueError("a pulse clicks in a photon-number class it cannot occupy")
        for name, v in (("p", p), ("a", a), ("a_prime", ap), ("clicks", w), ("e1", e1)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @staticmethod
    def _mix(p, a, ap):
        return p[:, None] * a + (1 - p)[:, None] * ap

    @classmethod
    def from_pulses(cls, p, a, a_prime, photon_numbers, clicked, e1=0.0):
        """Definite instance: pulse ``i`` holds ``photon_numbers[i]`` photons."""
        a = np.atleast_2d(a)
        k = np.asarray(photon_numbers, dtype=int)
        w = np.zeros(a.shape)
        w[np.arange(len(k)), k] = np.asarray(clicked, dtype=float)
        return cls(p, a, a_prime, w, e1)

    @property
    def M(self):
        return self.p.size

    @property
    def J(self):
        return self.a.shape[1] - 1

    @property
    def p_prime(self):
        return 1.0 - self.p

    @property
    def mix(self):
        return self._mix(self.p, self.a, self.a_prime)

    @property
    def d(self):
        """``d_ki = 1 / (p_i a_ki + p'_i a'_ki)``, infinite where the class is empty."""
        with np.errstate(divide="ignore"):
            return 1.0 / self.mix

    @property
    def ratios(self):
        """Per-pulse ``p_i a_ki / (p'_i a'_ki)`` (inf where the signal term is 0)."""
        num = self.p[:, None] * self.a
        den = self.p_prime[:, None] * self.a_prime
        with np.errstate(divide="ignore", invalid="ignore"):
            r = num / den
        return np.where(den > 0, r, np.where(num > 0, np.inf, np.nan))


def click_sets(inst: MicroInstance):
    """``(C, {k: c_k})`` as sets of 1-based pulse indices."""
    member = inst.clicks > 0
    C = {int(i) + 1 for i in np.flatnonzero(member.any(axis=1))}
    ck = {k: {int(i) + 1 for i in np.flatnonzero(member[:, k])} for k in range(inst.J + 1)}
    return C, ck


def _decoy_signal_posteriors(inst):
    d = np.where(inst.mix > 0, inst.d, 0.0)
    return inst.p[:, None] * inst.a * d, inst.p_prime[:, None] * inst.a_prime * d


def exact_counts(inst: MicroInstance) -> Tally:
    """Exact count bookkeeping: ``n_kd = sum over c_k of P_{di|k}`` and likewise for signal.

    Only single-photon errors are modelled, so ``err_d`` / ``err_s`` equal
    ``err_1d`` / ``err_1s``.
    """
    Pd, Ps = _decoy_signal_posteriors(inst)
    w = inst.clicks
    n_kd, n_ks = (w * Pd).sum(0), (w * Ps).sum(0)
    err_1d = float(np.sum(w[:, 1] * Pd[:, 1] * inst.e1))
    err_1s = float(np.sum(w[:, 1] * Ps[:, 1] * inst.e1))
    return Tally(
        M=float(inst.M), M_d=float(inst.p.sum()), M_s=float(inst.p_prime.sum()), M_0=0.0,
        N_d=float(n_kd.sum()), N_s=float(n_ks.sum()), N_0=0.0,
        n_kd=n_kd, n_ks=n_ks,
        N_kd=(inst.p[:, None] * inst.a).sum(0), N_ks=(inst.p_prime[:, None] * inst.a_prime).sum(0),
        err_1d=err_1d, err_1s=err_1s, err_d=err_1d, err_s=err_1s, err_0=0.0,
        protocol="micro", exact=True,
    )


def class_maxima(inst: MicroInstance, over: str = "c_k"):
    """Max ratio per photon number, over ``c_k`` or over the whole click set ``C``.

    Empty classes give NaN.
    """
    r = inst.ratios
    member = inst.clicks > 0
    if over == "C":
        member = np.repeat(member.any(axis=1, keepdims=True), inst.J + 1, axis=1)
    out = np.full(inst.J + 1, np.nan)
    for k in range(inst.J + 1):
        if member[:, k].any():
            out[k] = np.max(r[member[:, k], k])
    return out


def class_minima(inst: MicroInstance, over: str = "c_k"):
    r = inst.ratios
    member = inst.clicks > 0
    if over == "C":
        member = np.repeat(member.any(axis=1, keepdims=True), inst.J + 1, axis=1)
    out = np.full(inst.J + 1, np.nan)
    for k in range(inst.J + 1):
        if member[:, k].any():
            out[k] = np.min(r[member[:, k], k])
    return out


def condition_holds(R) -> bool:
    """Ordering ``R_k <= R_2 <= R_1`` for every populated ``k >= 2``."""
    R = np.asarray(R)
    if R.size < 3 or np.isnan(R[1]) or np.isnan(R[2]) or not np.isfinite(R[1]):
        return False
    rest = R[2:][~np.isnan(R[2:])]
    return bool(R[2] <= R[1] and np.all(rest <= R[2]))


@dataclass(frozen=True)
class SlackTerms:
    xi1: float
    xi2: float
    xi3: float
    N1s_tilde: float
    Lambda: float
    Lambda_prime: float
    Lambda_tilde: float
    R: np.ndarray = field(repr=False)


def slack_terms(inst: MicroInstance) -> SlackTerms:
    """Slack terms of the derivation, each a sum of termwise non-negative pieces."""
    R = class_maxima(inst)
    if not condition_holds(R):
        raise ConditionViolated(f"class maxima {R} violate R_k <= R_2 <= R_1")
    Pd, Ps = _decoy_signal_posteriors(inst)
    w = inst.clicks
    R1, R2 = R[1], R[2]
    multi = slice(2, None)
    Rk = np.where(np.isnan(R), 0.0, R)[multi]
    wm = w[:, multi]
    N1s_tilde = float(np.sum(w[:, 1] / (1 + R1)))
    xi1 = float(np.sum(w[:, 1] * (Ps[:, 1] - 1 / (1 + R1))))
    Lambda = float(np.sum(wm * Pd[:, multi]))
    Lambda_prime = float(np.sum(wm * Ps[:, multi]))
    Lambda_tilde = float(np.sum(wm / (1 + Rk)))
    xi2 = float(np.sum(wm * (Ps[:, multi] - 1 / (1 + Rk))))
    xi3 = float(np.sum(wm * (R2 - Rk) / (1 + Rk)))
    return SlackTerms(xi1, xi2, xi3, N1s_tilde, Lambda, Lambda_prime, Lambda_tilde, R)


@dataclass
class Step:
    name: str
    passed: bool | None
    residual: float
    detail: str = ""


@dataclass
class AuditRecord:
    steps: list

    @property
    def passed(self) -> bool:
        return all(s.passed is not False for s in self.steps)

    def failures(self):
        return [s for s in self.steps if s.passed is False]

    def __str__(self):
        lines = []
        for s in self.steps:
            mark = {True: "ok  ", False: "FAIL", None: "n/a "}[s.passed]
            lines.append(f"[{mark}] {s.name:<40s} residual={s.residual: .3e} {s.detail}".rstrip())
        return "\n".join(lines)


def main_bound(N_d, N_s, n0d, n0s, R1, R2):
    return (N_d - R2 * N_s + R2 * n0s - n0d) / (R1 - R2)


def verify_chain(inst: MicroInstance, atol: float = ATOL) -> AuditRecord:
    """Check every step from the count decomposition to the final bound.

    Identity residuals are normalised by the total count so ``atol`` applies
    on the probability scale. A step that does not apply to the instance
    (the all-pulse relaxation when its ordering condition fails) is marked
    ``None``.
    """
    T = exact_counts(inst)
    st = slack_terms(inst)
    R1, R2 = st.R[1], st.R[2]
    n0d, n0s = T.n_kd[0], T.n_ks[0]
    n1d, n1s = T.n_kd[1], T.n_ks[1]
    scale = max(1.0, T.N_d + T.N_s)
    steps = []

    def ineq(name, lhs_minus_rhs, detail=""):
        r = lhs_minus_rhs / scale
        steps.append(Step(name, bool(r >= -atol), r, detail))

    def ident(name, diff):
        r = diff / scale
        steps.append(Step(name, bool(abs(r) <= atol), r))

    ineq("n1s >= N1s~", n1s - st.N1s_tilde)
    ineq("n1d <= R1 N1s~", R1 * st.N1s_tilde - n1d)
    ident("n1d + n1s - N1s~ == R1 N1s~", n1d + n1s - st.N1s_tilde - R1 * st.N1s_tilde)
    ident("xi1 == n1s - N1s~", st.xi1 - (n1s - st.N1s_tilde))
    ident("N_d decomposition", T.N_d - (n0d + R1 * st.N1s_tilde + st.Lambda - st.xi1))
    ident("N_s decomposition", T.N_s - (n0s + st.N1s_tilde + st.Lambda_prime + st.xi1))
    ineq("Lambda' >= Lambda~", st.Lambda_prime - st.Lambda_tilde)
    ident("xi2 == Lambda' - Lambda~", st.xi2 - (st.Lambda_prime - st.Lambda_tilde))
    ineq("xi1 >= 0", st.xi1)
    ineq("xi2 >= 0", st.xi2)
    ineq("xi3 >= 0", st.xi3)
    ident("Lambda == R2 Lambda~ - xi2 - xi3", st.Lambda - (R2 * st.Lambda_tilde - st.xi2 - st.xi3))
    ident("rearranged N_d", T.N_d - (n0d + R1 * st.N1s_tilde + R2 * st.Lambda_tilde - st.xi1 - st.xi2 - st.xi3))
    ident("rearranged N_s", T.N_s - (n0s + st.N1s_tilde + st.Lambda_tilde + st.xi1 + st.xi2))
    if R1 > R2:
        exact = (T.N_d - R2 * T.N_s + R2 * n0s - n0d + R2 * (st.xi1 + st.xi2) + st.xi1 + st.xi2 + st.xi3) / (R1 - R2)
        ident("N1s~ solved from the system", st.N1s_tilde - exact)
        bound = main_bound(T.N_d, T.N_s, n0d, n0s, R1, R2)
        ineq("N1s~ >= bound over c_k", st.N1s_tilde - bound)
        ineq("n1s >= bound over c_k", n1s - bound)
    else:
        steps.append(Step("N1s~ solved from the system", None, 0.0, "R1 == R2"))
        steps.append(Step("N1s~ >= bound over c_k", None, 0.0, "R1 == R2"))
        steps.append(Step("n1s >= bound over c_k", None, 0.0, "R1 == R2"))

    G = class_maxima(inst, over="C")
    if condition_holds(G) and G[1] > G[2]:
        relaxed = main_bound(T.N_d, T.N_s, n0d, n0s, G[1], G[2])
        ineq("n1s >= bound over C", n1s - relaxed)
    else:
        steps.append(Step("n1s >= bound over C", None, 0.0, "ordering fails over C"))
    return AuditRecord(steps)


def single_photon_error_rates(inst: MicroInstance):
    """``(e_1d, e_1s)``: single-photon error rates of decoy and signal counts."""
    T = exact_counts(inst)
    e1d = T.err_1d / T.n_kd[1] if T.n_kd[1] > 0 else np.nan
    e1s = T.err_1s / T.n_ks[1] if T.n_ks[1] > 0 else np.nan
    return float(e1d), float(e1s)


def error_bound_check(inst: MicroInstance, atol: float = ATOL) -> bool:
    """Does ``(min/max) e_1d <= e_1s <= (max/min) e_1d`` hold, over c_1 and over C?"""
    e1d, e1s = single_photon_error_rates(inst)
    if np.isnan(e1d) or np.isnan(e1s):
        return True
    for over in ("c_k", "C"):
        hi, lo = class_maxima(inst, over)[1], class_minima(inst, over)[1]
        if not lo > 0:
            continue
        if e1s < lo / hi * e1d - atol or e1s > hi / lo * e1d + atol:
            return False
    return True


def hwang_yields(inst: MicroInstance):
    """Per-source yields ``s_k = n_kd / N_kd`` and ``s'_k = n_ks / N_ks``."""
    T = exact_counts(inst)
    with np.errstate(divide="ignore", invalid="ignore"):
        return T.n_kd / T.N_kd, T.n_ks / T.N_ks


# --------------------------------------------------------------------------
# instance generators


def _truncated_poisson(mu, J):
    k = np.arange(J + 1)
    from scipy.special import gammaln, xlogy

    w = np.exp(xlogy(k, np.asarray(mu)[:, None]) - gammaln(k + 1))
    return w / w.sum(1, keepdims=True)


def _repair(inst: MicroInstance, rng) -> MicroInstance | None:
    """Drop clicks until the class ordering holds (clicks are adversary-chosen)."""
    w = np.array(inst.clicks)
    r = inst.ratios
    for _ in range(2):
        member = w > 0
        if not member[:, 1].any() or not member[:, 2].any():
            return None
        R1 = np.max(r[member[:, 1], 1])
        if not np.isfinite(R1):
            w[member[:, 1] & ~np.isfinite(r[:, 1]), 1] = 0
            continue
        bad2 = member[:, 2] & (r[:, 2] > R1)
        w[bad2, 2] = 0
        if not (w[:, 2] > 0).any():
            return None
        R2 = np.max(r[w[:, 2] > 0, 2])
        w[:, 3:][(w[:, 3:] > 0) & (r[:, 3:] > R2)] = 0
    out = MicroInstance(inst.p, inst.a, inst.a_prime, w, inst.e1)
    return out if condition_holds(class_maxima(out)) else None


FAMILIES = ("coherent", "weighted", "dirichlet", "adversarial")


def random_instance(rng: np.random.Generator, family: str | None = None, M: int | None = None,
                    J: int | None = None) -> MicroInstance:
    """Random instance satisfying the class ordering.

    ``coherent``: fluctuating coherent pulses with definite photon numbers and
    random clicks. ``weighted``: fractional clicks with pulse-dependent
    yields. ``dirichlet``: arbitrary photon-number distributions. ``adversarial``:
    only pulses whose decoy/signal ratio is above the median click.
    """
    family = family or FAMILIES[rng.integers(len(FAMILIES))]
    for _ in range(200):
        m = int(M or rng.integers(8, 200))
        j = int(J or rng.integers(2, MAX_J + 1))
        p = rng.uniform(0.05, 0.95, m)
        e1 = rng.uniform(0, 0.2, m)
        if family == "dirichlet":
            a = rng.dirichlet(np.full(j + 1, 0.7), m)
            ap = rng.dirichlet(np.full(j + 1, 0.7), m)
        else:
            mu_s = rng.uniform(0.2, 1.2, m)
            mu_d = mu_s * rng.uniform(0.05, 0.9, m)
            a, ap = _truncated_poisson(mu_d, j), _truncated_poisson(mu_s, j)
        mix = p[:, None] * a + (1 - p)[:, None] * ap
        if family == "weighted":
            Y = rng.uniform(0, 1, (m, j + 1)) ** 2
            w = np.clip(mix * Y, 0, 1)
            inst = MicroInstance(p, a, ap, w, e1)
        else:
            u = rng.random((m, 1))
            k = np.minimum((u > np.cumsum(mix, axis=1)).sum(1), j)
            if family == "adversarial":
                r = (p[:, None] * a / ((1 - p)[:, None] * ap))[np.arange(m), k]
                clicked = r >= np.median(r)
            else:
                clicked = rng.random(m) < rng.uniform(0.2, 1.0)
            inst = MicroInstance.from_pulses(p, a, ap, k, clicked, e1)
        inst = _repair(inst, rng) if not condition_holds(class_maxima(inst)) else inst
        if inst is not None and class_maxima(inst)[1] > class_maxima(inst)[2]:
            return inst
    raise RuntimeError(f"could not draw a valid {family} instance")


def ten_pulse_instance(p=0.5, mu=0.2, mu_prime=0.6, J=6) -> MicroInstance:
    """Ten pulses holding 0,0,1,2,0,1,3,2,1,0 photons, with pulses 2,3,5,6,9,10 clicking."""
    photons = [0, 0, 1, 2, 0, 1, 3, 2, 1, 0]
    clicked = np.zeros(10, dtype=bool)
    clicked[[1, 2, 4, 5, 8, 9]] = True
    a = _truncated_poisson(np.full(10, mu), J)
    ap = _truncated_poisson(np.full(10, mu_prime), J)
    return MicroInstance.from_pulses(np.full(10, p), a, ap, photons, clicked)


def hwang_witness() -> MicroInstance:
    """Clicks correlated with the source pattern: per-source yields differ, yet the
    class ordering (and therefore the bound) still holds."""
    J = 4
    p = np.array([0.5, 0.5, 0.5, 0.5])
    mu_d = np.array([0.10, 0.10, 0.35, 0.35])
    mu_s = np.array([0.60, 0.60, 0.50, 0.50])
    a, ap = _truncated_poisson(mu_d, J), _truncated_poisson(mu_s, J)
    # pulses 3 and 4 carry relatively more decoy light; the channel favours them
    Y = np.array([[0.0, 0.05, 0.1, 0.15, 0.2], [0.0, 0.05, 0.1, 0.15, 0.2],
                  [0.0, 0.9, 0.95, 0.99, 1.0], [0.0, 0.9, 0.95, 0.99, 1.0]])
    mix = p[:, None] * a + (1 - p)[:, None] * ap
    e1 = np.array([0.01, 0.01, 0.05, 0.05])
    return MicroInstance(p, a, ap, mix * Y, e1)


def constant_ratio_instance(M=20, J=4, e1=None, rng=None) -> MicroInstance:
    """Every pulse has the same ratio per photon number (stable source)."""
    rng = rng or np.random.default_rng(0)
    a = _truncated_poisson(np.full(M, 0.2), J)
    ap = _truncated_poisson(np.full(M, 0.6), J)
    Y = rng.uniform(0.01, 1, J + 1)
    p = np.full(M, 0.4)
    mix = p[:, None] * a + (1 - p)[:, None] * ap
    e1 = rng.uniform(0, 0.2, M) if e1 is None else e1
    return MicroInstance(p, a, ap, mix * Y, e1)


@dataclass
class BatchSummary:
    count: int
    chain_failures: int
    slack_failures: int
    error_failures: int
    relaxed_applicable: int
    min_slack: float

    @property
    def passed(self):
        return self.chain_failures == 0 and self.slack_failures == 0 and self.error_failures == 0


def check_batch(count: int, seed: int = 0) -> BatchSummary:
    """Verify ``count`` random instances; used by the ``oracle-check`` command."""
    rng = np.random.default_rng(seed)
    chain = slack = err = relaxed = 0
    min_slack = np.inf
    for i in range(count):
        inst = random_instance(rng, FAMILIES[i % len(FAMILIES)])
        audit = verify_chain(inst)
        st = slack_terms(inst)
        low = min(st.xi1, st.xi2, st.xi3)
        min_slack = min(min_slack, low)
        chain += not audit.passed
        slack += low < -ATOL
        err += not error_bound_check(inst)
        relaxed += audit.steps[-1].passed is not None
    return BatchSummary(count, chain, slack, err, relaxed, float(min_slack))
