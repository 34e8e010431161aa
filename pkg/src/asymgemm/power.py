"""Power traces and energy accounting: instantaneous per-domain watt
samples, trapezoidal integration over a run window, and the pluggable
samplers the benchmark uses (constant mock, trace replay, or none).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

# Sensor domains of the big.LITTLE board the trace format mirrors.
DOMAINS = ("fast-cluster", "slow-cluster", "dram", "other")
NOMINAL_PERIOD_S = 0.25

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class PowerSample:
    """Instantaneous per-domain power readings at one moment."""

    t: float  # seconds, monotonic
    watts: Mapping[str, float]

    def __post_init__(self):
        for domain, w in self.watts.items():
            if w < 0:
                raise ValueError(f"negative power for {domain}: {w}")
        object.__setattr__(self, "watts", dict(self.watts))

    @property
    def total(self) -> float:
        return sum(self.watts.values())


@dataclass(frozen=True)
class EnergyReport:
    per_domain: Mapping[str, float]  # joules
    total: float


def _check_trace(trace: Sequence[PowerSample]) -> None:
    for a, b in zip(trace, trace[1:]):
        if not a.t < b.t:
            raise ValueError(f"timestamps must be strictly increasing "
                             f"({a.t} then {b.t})")


def integrate_energy(trace: Sequence[PowerSample], t0: float, t1: float
                     ) -> Optional[EnergyReport]:
    """Trapezoidal integral of the trace over [t0, t1], per domain and
    total. Outside the sampled span the edge values are held (clamped
    extrapolation). An empty trace yields None: energy is simply absent.
    """
    if not trace:
        return None
    if not t0 < t1:
        raise ValueError(f"need t0 < t1, got [{t0}, {t1}]")
    _check_trace(trace)
    times = np.array([s.t for s in trace])
    inside = (times > t0) & (times < t1)
    ts = np.concatenate(([t0], times[inside], [t1]))
    domains = list(dict.fromkeys(
        [d for d in DOMAINS if any(d in s.watts for s in trace)] +
        sorted({d for s in trace for d in s.watts if d not in DOMAINS})))
    per_domain = {}
    for d in domains:
        vals = np.array([s.watts.get(d, 0.0) for s in trace])
        per_domain[d] = float(_trapezoid(np.interp(ts, times, vals), ts))
    return EnergyReport(per_domain=per_domain,
                        total=sum(per_domain.values()))


def parse_trace(text: str, name: str = "<trace>") -> list[PowerSample]:
    """Trace file format: one sample per line,
    ``<timestamp_s> <fast_W> <slow_W> <dram_W> <other_W>``."""
    samples = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"{name}:{lineno}: expected 5 columns, got {len(parts)}")
        try:
            t, *watts = (float(p) for p in parts)
        except ValueError:
            raise ValueError(f"{name}:{lineno}: non-numeric field in {raw!r}")
        samples.append(PowerSample(t, dict(zip(DOMAINS, watts))))
    _check_trace(samples)
    return samples


def load_trace(path: Union[str, Path]) -> list[PowerSample]:
    path = Path(path)
    return parse_trace(path.read_text(), name=str(path))


class ConstantPowerSampler:
    """Mock sampler reporting a constant total draw; makes
    GFLOPS/W == GFLOPS / watts an exact identity."""

    def __init__(self, watts: float, domain: str = "other"):
        if watts < 0:
            raise ValueError("watts must be >= 0")
        self.watts = watts
        self.domain = domain
        self._t0: Optional[float] = None

    def start(self, t: float) -> None:
        self._t0 = t

    def stop(self, t: float) -> list[PowerSample]:
        if self._t0 is None:
            raise RuntimeError("sampler stopped before start")
        levels = {d: 0.0 for d in DOMAINS}
        levels[self.domain] = self.watts
        trace = [PowerSample(self._t0, levels), PowerSample(t, levels)]
        self._t0 = None
        return trace


class ReplayPowerSampler:
    """Replays a recorded trace against the run window: sample
    timestamps are interpreted relative to the start of the run."""

    def __init__(self, trace: Sequence[PowerSample]):
        _check_trace(trace)
        self.trace = list(trace)
        self._t0: Optional[float] = None

    def start(self, t: float) -> None:
        self._t0 = t

    def stop(self, t: float) -> list[PowerSample]:
        if self._t0 is None:
            raise RuntimeError("sampler stopped before start")
        t0 = self._t0
        self._t0 = None
        return [PowerSample(t0 + s.t, s.watts) for s in self.trace]


class NullPowerSampler:
    """No sensor: runs carry no energy figures."""

    def start(self, t: float) -> None:
        pass

    def stop(self, t: float) -> list[PowerSample]:
        return []
