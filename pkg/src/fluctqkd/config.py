"""Run configuration: an INI-style ``key = value`` file with sections.

Sections: ``[run]``, ``[source]``, ``[channel]``, ``[estimate]``, ``[sweep]``.
A ``preset`` in ``[run]`` fills every section with a named parameter set;
explicit keys override it. See README.md for the full schema.
"""
from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field

from .channel import ChannelParams
from .errors import ConfigError
from .source import DRAW_LAWS, AykiSourceParams, FluctuationBounds, PulseEnsembleSpec

PROTOCOLS = ("two-intensity-coherent", "three-intensity-coherent", "ayki")
ENGINES = {"monte-carlo": "monte-carlo", "mc": "monte-carlo", "expectation": "expectation", "exp": "expectation"}
VARIANTS = ("economic", "normal", "both")

# Representative 50 km fibre link with a 0.2/0.6 decoy/signal pair. Not a
# reproduction of any published data set.
PRESETS = {
    "peng50km-like": {
        "run": {"protocol": "three-intensity-coherent"},
        "source": {"p": "0.3", "p_prime": "0.6", "p_0": "0.1", "mu": "0.2", "mu_prime": "0.6"},
        "channel": {"distance_km": "50", "alpha_db_per_km": "0.2", "eta_bob": "0.045",
                    "d_B": "1.0e-5", "e_det": "0.015"},
        "sweep": {"delta": "0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06", "eps": "0"},
    },
    "ayki-like": {
        "run": {"protocol": "ayki"},
        "source": {"mu_nominal": "0.3", "mu_fluct": "0.2", "eta_A": "0.5", "d_A": "1e-6"},
        "channel": {"distance_km": "50", "alpha_db_per_km": "0.2", "eta_bob": "0.045",
                    "d_B": "1.0e-5", "e_det": "0.015"},
        "sweep": {"delta": "0, 0.05, 0.1, 0.2", "eps": "0"},
    },
}


@dataclass(frozen=True)
class RunConfig:
    protocol: str
    source: object
    channel: ChannelParams
    pulses: int = 1_000_000
    seed: int = 0
    engine: str = "expectation"
    variant: str = "both"
    records: int = 0
    grid_nodes: int = 8
    f_ec: float = 1.16
    sifting: float = 0.5
    e1d: float | None = None
    y0_upper: float | None = None
    y0_lower: float = 0.0
    sweep_delta: tuple = (0.0,)
    sweep_eps: tuple = (0.0,)

    def with_fluctuation(self, delta: float, eps: float):
        """Source with the father-pulse bound set to ``delta`` and both device bounds to ``eps``."""
        if isinstance(self.source, AykiSourceParams):
            return dataclasses.replace(self.source, mu_fluct=delta)
        fl = dataclasses.replace(self.source.fluctuation, delta=delta, eps_d=eps, eps_s=eps)
        return dataclasses.replace(self.source, fluctuation=fl)


def _line_of(text: str, section: str, key: str) -> int | None:
    current = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[(.+)\]", s)
        if m:
            current = m.group(1).strip().lower()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", s, re.IGNORECASE):
            return n
    return None


class _Reader:
    def __init__(self, parser, text, origin):
        self.parser, self.text, self.origin = parser, text, origin

    def fail(self, section, key, msg):
        line = _line_of(self.text, section, key)
        where = f"{self.origin}:{line}" if line else self.origin
        raise ConfigError(f"{where}: [{section}] {key}: {msg}")

    def get(self, section, key, conv=str, default=None, required=False):
        if not self.parser.has_option(section, key):
            if required:
                self.fail(section, key, "missing required key")
            return default
        raw = self.parser.get(section, key).strip()
        if raw == "" and not required:
            return default
        try:
            return conv(raw)
        except ValueError as e:
            self.fail(section, key, f"cannot parse {raw!r} ({e})")

    def floats(self, section, key, default):
        raw = self.get(section, key, str, None)
        if raw is None:
            return default
        try:
            vals = tuple(float(v) for v in raw.replace(";", ",").split(",") if v.strip())
        except ValueError:
            self.fail(section, key, f"expected a comma-separated list of numbers, got {raw!r}")
        if not vals:
            self.fail(section, key, "sweep grid is empty")
        return vals


def parse_config(text: str, origin: str = "<config>") -> RunConfig:
    """Parse configuration text; raises :class:`ConfigError` with file:line context."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=origin)
    except configparser.Error as e:
        raise ConfigError(f"{origin}: {e}") from None
    for sec in ("run", "source", "channel", "estimate", "sweep"):
        if not parser.has_section(sec):
            parser.add_section(sec)
    preset = parser.get("run", "preset", fallback="").strip()
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"{origin}:{_line_of(text, 'run', 'preset')}: unknown preset {preset!r}; "
                              f"choose from {sorted(PRESETS)}")
        for sec, vals in PRESETS[preset].items():
            for k, v in vals.items():
                if not parser.has_option(sec, k):
                    parser.set(sec, k, v)
    r = _Reader(parser, text, origin)

    protocol = r.get("run", "protocol", required=True)
    if protocol not in PROTOCOLS:
        r.fail("run", "protocol", f"unknown protocol {protocol!r}; choose from {PROTOCOLS}")
    engine = r.get("run", "engine", default="expectation")
    if engine not in ENGINES:
        r.fail("run", "engine", f"unknown engine {engine!r}; choose from {sorted(ENGINES)}")
    variant = r.get("run", "variant", default="both")
    if variant not in VARIANTS:
        r.fail("run", "variant", f"unknown variant {variant!r}; choose from {VARIANTS}")
    draw_law = r.get("source", "draw_law", default="uniform")
    if draw_law not in DRAW_LAWS:
        r.fail("source", "draw_law", f"unknown draw law {draw_law!r}; choose from {DRAW_LAWS}")

    try:
        if protocol == "ayki":
            source = AykiSourceParams(
                mu_nominal=r.get("source", "mu_nominal", float, required=True),
                mu_fluct=r.get("source", "mu_fluct", float, 0.2),
                eta_A=r.get("source", "eta_A", float, required=True),
                d_A=r.get("source", "d_A", float, required=True),
                draw_law=draw_law,
                truncation=r.get("source", "truncation", int, None),
            )
        else:
            p_0 = r.get("source", "p_0", float, 0.0)
            if protocol == "two-intensity-coherent" and p_0 != 0:
                r.fail("source", "p_0", "two-intensity protocol has no vacuum source; set p_0 = 0")
            if protocol == "three-intensity-coherent" and p_0 <= 0:
                r.fail("source", "p_0", "three-intensity protocol needs p_0 > 0")
            source = PulseEnsembleSpec(
                p=r.get("source", "p", float, required=True),
                p_prime=r.get("source", "p_prime", float, required=True),
                p_0=p_0,
                mu=r.get("source", "mu", float, required=True),
                mu_prime=r.get("source", "mu_prime", float, required=True),
                fluctuation=FluctuationBounds(
                    delta=r.get("source", "delta", float, 0.0),
                    eps_d=r.get("source", "eps_d", float, 0.0),
                    eps_s=r.get("source", "eps_s", float, 0.0),
                    draw_law=draw_law,
                ),
                truncation=r.get("source", "truncation", int, 30),
            )
    except ValueError as e:
        raise ConfigError(f"{origin}: [source] {e}") from None

    ch_defaults = ChannelParams()
    try:
        channel = ChannelParams(**{
            f.name: r.get("channel", f.name, float, getattr(ch_defaults, f.name))
            for f in dataclasses.fields(ChannelParams)
        })
    except ValueError as e:
        raise ConfigError(f"{origin}: [channel] {e}") from None

    pulses = r.get("run", "pulses", lambda s: int(float(s)), 1_000_000)
    if pulses < 1:
        r.fail("run", "pulses", "must be >= 1")
    return RunConfig(
        protocol=protocol, source=source, channel=channel, pulses=pulses,
        seed=r.get("run", "seed", int, 0), engine=ENGINES[engine], variant=variant,
        records=r.get("run", "records", int, 0), grid_nodes=r.get("run", "grid_nodes", int, 8),
        f_ec=r.get("estimate", "f_ec", float, 1.16), sifting=r.get("estimate", "sifting", float, 0.5),
        e1d=r.get("estimate", "e1d", float, None),
        y0_upper=r.get("estimate", "y0_upper", float, None),
        y0_lower=r.get("estimate", "y0_lower", float, 0.0),
        sweep_delta=r.floats("sweep", "delta", (0.0,)),
        sweep_eps=r.floats("sweep", "eps", (0.0,)),
    )


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    return parse_config(text, str(path))
