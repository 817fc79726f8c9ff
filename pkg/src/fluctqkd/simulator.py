"""Ground-truth protocol runs: Monte-Carlo and exact-expectation engines.

Both engines produce a :class:`Tally` holding everything that happened,
including the per-photon-number counts that no experiment can see.
:func:`observe` projects a tally onto the :class:`ObservedStats` that Alice
and Bob actually know; the estimator only ever accepts the latter.
"""
from __future__ import annotations

import csv
import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .channel import ChannelParams, error_prob_k, yield_k
from .source import (
    AykiSourceParams,
    FluctuationGrid,
    PulseEnsembleSpec,
    coherent_fock,
    draw_fluctuation,
    fluctuation_grid,
    gamma,
    pdc_number_dist,
    pdc_weights,
    poisson_weights,
    realized_intensities,
)

Source = Union[PulseEnsembleSpec, AykiSourceParams]

SOURCE_TAGS = ("decoy", "signal", "vacuum")
# named sub-streams; the order is part of the reproducibility contract
STREAMS = ("fluctuation", "source-choice", "photon-number", "click", "error")
CHUNK_SIZE = 1 << 18


@dataclass
class Tally:
    """Count bookkeeping of a run.

    Integer-valued for Monte-Carlo runs, real-valued expectations for
    :func:`run_expectation`. ``n_kd[k]`` / ``n_ks[k]`` are clicks caused by
    ``k``-photon decoy / signal pulses, ``N_kd`` / ``N_ks`` the number of such
    pulses emitted, ``M_d`` / ``M_s`` / ``M_0`` the pulses sent per source.
    """

    M: float
    M_d: float
    M_s: float
    M_0: float
    N_d: float
    N_s: float
    N_0: float
    n_kd: np.ndarray
    n_ks: np.ndarray
    N_kd: np.ndarray
    N_ks: np.ndarray
    err_1d: float
    err_1s: float
    err_d: float
    err_s: float
    err_0: float
    protocol: str = ""
    selection: tuple = (math.nan, math.nan, math.nan)
    exact: bool = False

    @property
    def n_k(self):
        return self.n_kd + self.n_ks

    @property
    def J(self):
        return self.n_kd.size - 1

    def __add__(self, other: "Tally") -> "Tally":
        if self.J != other.J or self.protocol != other.protocol:
            raise ValueError("cannot merge tallies of different shape or protocol")
        merged = {}
        for f in dataclasses.fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            merged[f.name] = a if f.name in ("protocol", "selection", "exact") else a + b
        merged["exact"] = self.exact and other.exact
        return Tally(**merged)

    def check(self, rtol=1e-10):
        """Assert the bookkeeping identities; returns ``self``."""
        def close(a, b):
            return abs(a - b) <= rtol * max(abs(a), abs(b), 1.0)

        assert close(self.N_d, float(np.sum(self.n_kd))), "N_d != sum n_kd"
        assert close(self.N_s, float(np.sum(self.n_ks))), "N_s != sum n_ks"
        assert close(self.M, self.M_d + self.M_s + self.M_0), "pulse totals disagree"
        assert np.all(self.n_kd <= self.N_kd * (1 + rtol) + rtol)
        assert np.all(self.n_ks <= self.N_ks * (1 + rtol) + rtol)
        for name in ("N_d", "N_s", "N_0", "err_d", "err_s"):
            assert 0 <= getattr(self, name) <= self.M * (1 + rtol)
        return self

    def as_dict(self):
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


@dataclass(frozen=True)
class ObservedStats:
    """What the experiment reveals: per-source counts and error rates only."""

    M: float
    M_d: float
    M_s: float
    M_0: float
    N_d: float
    N_s: float
    N_0: float
    QBER_d: float
    QBER_s: float
    p: float = math.nan
    p_prime: float = math.nan
    p_0: float = math.nan
    protocol: str = ""

    def to_text(self) -> str:
        lines = ["[observed]"]
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)!r}".replace("'", ""))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, data) -> "ObservedStats":
        kw = {}
        for f in dataclasses.fields(cls):
            if f.name not in data:
                continue
            kw[f.name] = data[f.name] if f.name == "protocol" else float(data[f.name])
        return cls(**kw)


@dataclass(frozen=True)
class PulseRecord:
    i: int
    source: str
    k: int
    clicked: bool
    error: bool
    mu_i: float
    mu_prime_i: float


PULSE_CSV_HEADER = ("i", "source", "k", "clicked", "error", "mu_i", "mu_prime_i")


def write_pulse_records(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PULSE_CSV_HEADER)
        for r in records:
            w.writerow([r.i, r.source, r.k, int(r.clicked), int(r.error), repr(r.mu_i), repr(r.mu_prime_i)])


# --------------------------------------------------------------------------
# source plumbing shared by both engines


def protocol_name(source: Source) -> str:
    if isinstance(source, AykiSourceParams):
        return "ayki"
    return "three-intensity-coherent" if source.p_0 > 0 else "two-intensity-coherent"


def source_cutoff(source: Source) -> int:
    """Photon-number cutoff, validated against the largest reachable intensity."""
    if isinstance(source, AykiSourceParams):
        J = source.J
        pdc_number_dist(source.mu_range[1], J)
        return J
    J = source.truncation
    coherent_fock(max(source.mu_range[1], source.mu_prime_range[1]), J)
    return J


def _intensities(source: Source, points):
    """Would-be (decoy, signal) intensities at fluctuation points of shape (..., 3)."""
    points = np.asarray(points, dtype=float)
    if isinstance(source, AykiSourceParams):
        mu = source.mu_nominal * (1 + points[..., 0])
        return mu, mu
    return realized_intensities(source, (points[..., 0], points[..., 1], points[..., 2]))


def branch_probabilities(source: Source, mu_d, mu_s, J):
    """Joint probabilities of (source choice, photon number) at given intensities.

    Returns ``(P_d, P_s, P_0, sel_d, sel_s)``: ``P_d[..., k] = p_i a_ki``,
    ``P_s[..., k] = p'_i a'_ki``, the vacuum-source probability, and the
    total decoy / signal selection probabilities (tail included).
    """
    if isinstance(source, AykiSourceParams):
        X = pdc_weights(mu_d, J)
        g = gamma(np.arange(J + 1), source.d_A, source.eta_A)
        mu = np.asarray(mu_d, dtype=float)
        sel_s = (source.d_A + mu * source.eta_A) / (1 + mu * source.eta_A)
        return X * (1 - g), X * g, np.zeros_like(mu), 1 - sel_s, sel_s
    P_d = source.p * poisson_weights(mu_d, J)
    P_s = source.p_prime * poisson_weights(mu_s, J)
    ones = np.ones(np.shape(mu_d))
    return P_d, P_s, source.p_0 * ones, source.p * ones, source.p_prime * ones


def _selection(source: Source):
    if isinstance(source, AykiSourceParams):
        return (math.nan, math.nan, 0.0)
    return (source.p, source.p_prime, source.p_0)


# --------------------------------------------------------------------------
# expectation engine


def run_expectation(source: Source, channel: ChannelParams, M: float = 1.0, grid: FluctuationGrid | None = None,
                    n_nodes: int = 8) -> Tally:
    """Exact expected counts, averaging the fluctuation over a quadrature grid.

    With the default grid the weights follow the source's draw law, so the
    result is the expectation of :func:`run_monte_carlo` for the same source.
    """
    bounds = source.fluctuation
    grid = fluctuation_grid(bounds, n_nodes) if grid is None else grid
    grid.check(bounds)
    J = source_cutoff(source)
    mu_d, mu_s = _intensities(source, grid.points)
    P_d, P_s, P_0, sel_d, sel_s = branch_probabilities(source, mu_d, mu_s, J)
    w = grid.weights
    Pd, Ps = w @ P_d, w @ P_s
    ks = np.arange(J + 1)
    Y, E = yield_k(ks, channel), error_prob_k(ks, channel)
    n_kd, n_ks = M * Pd * Y, M * Ps * Y
    M_0 = M * float(w @ P_0)
    N_0 = M_0 * float(Y[0])
    M_d, M_s = M * float(w @ sel_d), M * float(w @ sel_s)
    return Tally(
        M=float(M), M_d=M_d, M_s=M_s, M_0=M_0,
        N_d=float(n_kd.sum()), N_s=float(n_ks.sum()), N_0=N_0,
        n_kd=n_kd, n_ks=n_ks, N_kd=M * Pd, N_ks=M * Ps,
        err_1d=float(n_kd[1] * E[1]), err_1s=float(n_ks[1] * E[1]),
        err_d=float(n_kd @ E), err_s=float(n_ks @ E), err_0=N_0 * float(E[0]),
        protocol=protocol_name(source), selection=_selection(source), exact=True,
    )


# --------------------------------------------------------------------------
# Monte-Carlo engine


def _streams(seed: int, chunk: int):
    return {
        name: np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chunk, s)))
        for s, name in enumerate(STREAMS)
    }


def _run_chunk(source: Source, channel: ChannelParams, J: int, seed: int, chunk: int, start: int, size: int,
               keep: int):
    rng = _streams(seed, chunk)
    index = np.arange(start, start + size)
    draws = draw_fluctuation(source.fluctuation, rng["fluctuation"], size, index=index)
    mu_d, mu_s = _intensities(source, np.stack(draws, axis=-1))
    u = rng["source-choice"].random(size)
    if isinstance(source, AykiSourceParams):
        k = rng["photon-number"].geometric(1.0 / (1.0 + mu_d)) - 1
        herald = u < gamma(k, source.d_A, source.eta_A)
        tag = np.where(herald, 1, 0)
    else:
        tag = np.where(u < source.p, 0, np.where(u < source.p + source.p_prime, 1, 2))
        lam = np.where(tag == 0, mu_d, np.where(tag == 1, mu_s, 0.0))
        k = rng["photon-number"].poisson(lam)
    # mass beyond J is below the tail tolerance; fold it into the top class
    k = np.minimum(k, J)
    ks = np.arange(J + 1)
    Y, E = yield_k(ks, channel), error_prob_k(ks, channel)
    clicked = rng["click"].random(size) < Y[k]
    error = clicked & (rng["error"].random(size) < E[k])

    def count(mask):
        return np.bincount(k[mask], minlength=J + 1).astype(np.int64)

    dec, sig, vac = tag == 0, tag == 1, tag == 2
    n_kd, n_ks = count(dec & clicked), count(sig & clicked)
    tally = Tally(
        M=size, M_d=int(dec.sum()), M_s=int(sig.sum()), M_0=int(vac.sum()),
        N_d=int(n_kd.sum()), N_s=int(n_ks.sum()), N_0=int((vac & clicked).sum()),
        n_kd=n_kd, n_ks=n_ks, N_kd=count(dec), N_ks=count(sig),
        err_1d=int((dec & error & (k == 1)).sum()), err_1s=int((sig & error & (k == 1)).sum()),
        err_d=int((dec & error).sum()), err_s=int((sig & error).sum()), err_0=int((vac & error).sum()),
        protocol=protocol_name(source), selection=_selection(source),
    )
    records = [
        PulseRecord(int(index[j]), SOURCE_TAGS[tag[j]], int(k[j]), bool(clicked[j]), bool(error[j]),
                    float(mu_d[j]), float(mu_s[j]))
        for j in range(min(keep, size))
    ]
    return tally, records


def run_monte_carlo(source: Source, channel: ChannelParams, M: int, seed: int = 0, keep_records: int = 0,
                    workers: int = 1, chunk_size: int = CHUNK_SIZE):
    """Simulate ``M`` pulses one by one (vectorised in chunks).

    Every chunk draws from its own seed-derived sub-streams, so the result
    depends only on ``(seed, chunk_size)``, never on ``workers``. The first
    ``keep_records`` pulses are returned as :class:`PulseRecord` objects.

    Returns ``(tally, records)``.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    J = source_cutoff(source)
    jobs = []
    start = 0
    for chunk in range(math.ceil(M / chunk_size)):
        size = min(chunk_size, M - start)
        jobs.append((chunk, start, size, max(keep_records - start, 0)))
        start += size

    def job(args):
        return _run_chunk(source, channel, J, seed, *args)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(job, jobs))
    else:
        results = [job(a) for a in jobs]
    tally = results[0][0]
    records = list(results[0][1])
    for t, r in results[1:]:
        tally = tally + t
        records.extend(r)
    return tally, records


# --------------------------------------------------------------------------
# projection


def observe(tally: Tally) -> ObservedStats:
    """Drop everything an experiment cannot see. Zero-click QBERs are NaN."""
    def ratio(a, b):
        return a / b if b > 0 else math.nan

    p, p_prime, p_0 = tally.selection
    return ObservedStats(
        M=float(tally.M), M_d=float(tally.M_d), M_s=float(tally.M_s), M_0=float(tally.M_0),
        N_d=float(tally.N_d), N_s=float(tally.N_s), N_0=float(tally.N_0),
        QBER_d=ratio(tally.err_d, tally.N_d), QBER_s=ratio(tally.err_s, tally.N_s),
        p=p, p_prime=p_prime, p_0=p_0, protocol=tally.protocol,
    )
