"""Experiment protocols: static grid, step campaigns, open-loop schedules."""
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError

OMEGA_BOX = (2000.0, 6000.0)   # RPM
BETA_BOX = (-10.0, 10.0)       # deg, mechanism travel
BETA_OPERATIONAL = (-5.0, 10.0)


@dataclass(frozen=True)
class StaticGridSpec:
    omega_range: tuple = OMEGA_BOX
    beta_range: tuple = BETA_BOX
    n_omega: int = 10
    n_beta: int = 10
    settle_time: float = 3.0
    sample_rate: float = 250.0
    n_samples: int = 5000
    fit_beta_range: tuple = BETA_OPERATIONAL

    def __post_init__(self):
        if self.n_omega < 2 or self.n_beta < 2:
            raise InvalidParameterError("static grid must be at least 2 x 2")
        for lo, hi in (self.omega_range, self.beta_range, self.fit_beta_range):
            if not lo < hi:
                raise InvalidParameterError("ranges must be ordered (lo < hi)")
        if (self.fit_beta_range[0] < self.beta_range[0]
                or self.fit_beta_range[1] > self.beta_range[1]):
            raise InvalidParameterError("fit truncation must lie inside the measured range")
        if self.n_samples < 1 or self.settle_time < 0 or self.sample_rate <= 0:
            raise InvalidParameterError("invalid acquisition settings")

    @property
    def omegas(self):
        return np.linspace(*self.omega_range, self.n_omega)

    @property
    def betas(self):
        return np.linspace(*self.beta_range, self.n_beta)


@dataclass(frozen=True)
class StepProtocol:
    """Five steps of one channel in one direction, at a fixed level of the other.

    Levels are physical (RPM for ``omega``, degrees for ``beta``).
    """

    channel: str
    direction: str
    start_level: float
    end_levels: tuple
    hold_level: float
    pre_step: float = 5.0
    post_step: float = 5.0

    def __post_init__(self):
        if self.channel not in ("omega", "beta"):
            raise InvalidParameterError(f"unknown step channel {self.channel!r}")
        if self.direction not in ("up", "down"):
            raise InvalidParameterError(f"unknown step direction {self.direction!r}")
        if len(self.end_levels) != 5:
            raise InvalidParameterError("a step protocol has exactly 5 amplitudes")
        box = OMEGA_BOX if self.channel == "omega" else BETA_BOX
        other = BETA_BOX if self.channel == "omega" else OMEGA_BOX
        for level in (self.start_level, *self.end_levels):
            if not box[0] - 1e-9 <= level <= box[1] + 1e-9:
                raise InvalidParameterError(
                    f"{self.channel} level {level} outside operating box {box}")
            if self.direction == "up" and level < self.start_level:
                raise InvalidParameterError("up-step ends below its start level")
            if self.direction == "down" and level > self.start_level:
                raise InvalidParameterError("down-step ends above its start level")
        if not other[0] - 1e-9 <= self.hold_level <= other[1] + 1e-9:
            raise InvalidParameterError(f"hold level {self.hold_level} outside box {other}")
        if self.pre_step <= 0 or self.post_step <= 0:
            raise InvalidParameterError("step phases must have positive duration")


def default_step_protocols(omega_holds=None, beta_holds=None):
    """Full campaign: both channels, both directions, five hold levels each."""
    omega_holds = np.linspace(2000.0, 6000.0, 5) if omega_holds is None else omega_holds
    beta_holds = np.linspace(-5.0, 10.0, 5) if beta_holds is None else beta_holds
    protos = []
    for hold in beta_holds:
        protos.append(StepProtocol("omega", "up", 2000.0,
                                   tuple(np.linspace(2500.0, 6000.0, 5)), float(hold)))
        protos.append(StepProtocol("omega", "down", 6000.0,
                                   tuple(np.linspace(5500.0, 2000.0, 5)), float(hold)))
    for hold in omega_holds:
        protos.append(StepProtocol("beta", "up", -10.0,
                                   tuple(np.linspace(-6.0, 10.0, 5)), float(hold)))
        protos.append(StepProtocol("beta", "down", 10.0,
                                   tuple(np.linspace(6.0, -10.0, 5)), float(hold)))
    return protos


@dataclass(frozen=True)
class OpenLoopSchedule:
    """Piecewise-constant reference schedule ``(duration s, RPM, deg)``."""

    segments: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not self.segments:
            raise InvalidParameterError("schedule has no segments")
        for dur, w, b in self.segments:
            if dur <= 0:
                raise InvalidParameterError("segment durations must be positive")
            if not OMEGA_BOX[0] - 1e-9 <= w <= OMEGA_BOX[1] + 1e-9:
                raise InvalidParameterError(f"omega_ref {w} RPM outside box {OMEGA_BOX}")
            if not BETA_BOX[0] - 1e-9 <= b <= BETA_BOX[1] + 1e-9:
                raise InvalidParameterError(f"beta_ref {b} deg outside box {BETA_BOX}")

    @property
    def duration(self):
        return float(sum(s[0] for s in self.segments))

    def sample(self, dt):
        """Reference arrays on a grid of step ``dt``."""
        n = int(round(self.duration / dt))
        t = dt * np.arange(n)
        edges = np.cumsum([s[0] for s in self.segments])
        idx = np.minimum(np.searchsorted(edges, t + 1e-9 * dt, side="right"),
                         len(self.segments) - 1)
        w = np.array([s[1] for s in self.segments])[idx]
        b = np.array([s[2] for s in self.segments])[idx]
        return w, b


def default_open_loop_schedule(seed=0, n_per_part=8, hold=2.5,
                               omega_fixed=4500.0, beta_fixed=4.0):
    """Three parts: RPM-only steps, pitch-only steps, simultaneous steps.

    Levels are drawn uniformly from the operational box with ``seed``.
    """
    rng = np.random.default_rng(seed)
    w_lo, w_hi = OMEGA_BOX
    b_lo, b_hi = BETA_OPERATIONAL
    segs = [(hold, omega_fixed, beta_fixed)]
    for w in rng.uniform(w_lo, w_hi, n_per_part):
        segs.append((hold, round(float(w), 1), beta_fixed))
    segs.append((hold, omega_fixed, beta_fixed))
    for b in rng.uniform(b_lo, b_hi, n_per_part):
        segs.append((hold, omega_fixed, round(float(b), 2)))
    for w, b in zip(rng.uniform(w_lo, w_hi, n_per_part), rng.uniform(b_lo, b_hi, n_per_part)):
        segs.append((hold, round(float(w), 1), round(float(b), 2)))
    return OpenLoopSchedule(tuple(segs))
