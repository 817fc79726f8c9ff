"""Decoy-state QKD with fluctuating sources: simulation, worst-case bounds, exact oracle."""

__version__ = "0.1.0"

from .channel import ChannelParams, error_prob_k, transmittance, yield_k
from .errors import (
    ConditionViolated,
    ConfigError,
    DegenerateDenominator,
    DegenerateSource,
    GridTooCoarse,
    MissingVacuumSource,
    TailTooLarge,
)
from .estimator import (
    BoundReport,
    RatioEnvelope,
    ayki_delta1,
    ayki_ratio_envelope,
    bound_delta1_decoy,
    bound_e1s,
    bound_n1s,
    bound_vacuum_3intensity,
    check_condition,
    coherent_ratio_envelope,
    estimate,
    key_rate,
    normal_worstcase_envelope,
)
from .simulator import ObservedStats, PulseRecord, Tally, observe, run_expectation, run_monte_carlo
from .source import (
    AykiSourceParams,
    FluctuationBounds,
    FockDistribution,
    PulseEnsembleSpec,
    ayki_split,
    coherent_fock,
    draw_fluctuation,
    fluctuation_grid,
    gamma,
    pdc_number_dist,
    realized_intensities,
)
