"""Nonlinear cell model: three series voltage contributions and its state form.

A cell is the series of a quasi-stationary dipole (nonlinear capacitor whose
voltage-dependent capacitance is the cell's "internal shape"), a dynamic
dipole (N first-order RC groups) and an instantaneous dipole (nonlinear
resistor). Terminal voltage is the plain sum of the three contributions.

Sign convention: positive current charges the cell.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .curves import MonotoneCurve
from .errors import (
    ConfigurationError,
    InvalidInputError,
    InvalidParametersError,
    OutOfRangeWarning,
    SaturationWarning,
)

# Tolerated quasi-stationary excursion (volts) past [v_min, v_max] before the
# state is clamped; lets an estimator recover from a bad initialization.
DEFAULT_VQST_GUARD = 0.05


@dataclass(frozen=True)
class RcGroup:
    """One first-order relaxation branch: dv/dt = (r*i - v)/tau."""

    r: float
    tau: float

    def __post_init__(self):
        if not (math.isfinite(self.r) and self.r > 0.0):
            raise InvalidParametersError(f"rc group resistance must be > 0, got {self.r}")
        if not (math.isfinite(self.tau) and self.tau > 0.0):
            raise InvalidParametersError(f"rc group time constant must be > 0, got {self.tau}")


@dataclass(frozen=True, eq=False)
class CellParameters:
    """Full identified model of one cell.

    capacitance maps quasi-stationary voltage [v_min, v_max] to farads, the
    resistor curve maps current to its instantaneous voltage drop (through
    (0, 0), nondecreasing), delta_q is the total charge stored across the
    voltage window, and nominal_voltage_v_n marks the capacitance peak.
    """

    v_min: float
    v_max: float
    capacitance: MonotoneCurve
    rc_groups: tuple[RcGroup, ...]
    resistor: MonotoneCurve
    delta_q: float
    nominal_capacity_c_n: float
    nominal_voltage_v_n: float

    def __post_init__(self):
        if not (math.isfinite(self.v_min) and math.isfinite(self.v_max) and self.v_min < self.v_max):
            raise InvalidParametersError("voltage window must satisfy v_min < v_max")
        cap = self.capacitance
        if cap.x_min != self.v_min or cap.x_max != self.v_max:
            raise InvalidParametersError("capacitance curve must span exactly [v_min, v_max]")
        if np.any(cap.values <= 0.0):
            raise InvalidParametersError("capacitance must be strictly positive everywhere")
        groups = tuple(self.rc_groups)
        if len(groups) < 1:
            raise InvalidParametersError("at least one RC group is required")
        taus = [g.tau for g in groups]
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise InvalidParametersError("RC time constants must be strictly increasing")
        object.__setattr__(self, "rc_groups", groups)
        res = self.resistor
        if res.eval(0.0) != 0.0:
            raise InvalidParametersError("resistor curve must pass through (0, 0) exactly")
        if np.any(np.diff(res.values) < 0.0):
            raise InvalidParametersError("resistor curve must be nondecreasing")
        integral = cap.integrate(self.v_min, self.v_max)
        if not math.isfinite(self.delta_q) or abs(self.delta_q - integral) > 1e-9 * abs(integral):
            raise InvalidParametersError(
                f"delta_q ({self.delta_q}) must equal the capacitance integral ({integral})"
            )
        if not (math.isfinite(self.nominal_capacity_c_n) and self.nominal_capacity_c_n > 0.0):
            raise InvalidParametersError("nominal capacity must be positive")
        v_n = float(cap.grid[int(np.argmax(cap.values))])
        if self.nominal_voltage_v_n != v_n:
            raise InvalidParametersError(
                f"nominal voltage ({self.nominal_voltage_v_n}) must sit at the capacitance "
                f"maximum ({v_n})"
            )
        # Hot-path caches; treat the arrays as read-only.
        object.__setattr__(self, "_taus", np.array([g.tau for g in groups]))
        object.__setattr__(self, "_rs", np.array([g.r for g in groups]))

    @classmethod
    def from_curves(
        cls,
        v_min: float,
        v_max: float,
        capacitance: MonotoneCurve,
        rc_groups,
        resistor: MonotoneCurve,
        nominal_capacity: float | None = None,
    ) -> "CellParameters":
        """Build parameters with delta_q and v_n derived from the curves.

        nominal_capacity defaults to delta_q (the charge the window holds).
        """
        delta_q = capacitance.integrate(v_min, v_max)
        v_n = float(capacitance.grid[int(np.argmax(capacitance.values))])
        return cls(
            v_min=v_min,
            v_max=v_max,
            capacitance=capacitance,
            rc_groups=tuple(rc_groups),
            resistor=resistor,
            delta_q=delta_q,
            nominal_capacity_c_n=delta_q if nominal_capacity is None else nominal_capacity,
            nominal_voltage_v_n=v_n,
        )

    @property
    def n_rc(self) -> int:
        return len(self.rc_groups)

    @property
    def taus(self) -> np.ndarray:
        return self._taus

    @property
    def rs(self) -> np.ndarray:
        return self._rs

    @property
    def tau_min(self) -> float:
        return self.rc_groups[0].tau

    @property
    def dt_guard(self) -> float:
        """Largest admissible integration step (stability guard)."""
        return self.tau_min / 5.0


@dataclass(eq=False)
class CellState:
    """Physical state of one cell: quasi-stationary voltage plus the RC voltages."""

    v_qst: float
    v_dyn_components: np.ndarray

    def __post_init__(self):
        comps = np.array(self.v_dyn_components, dtype=float).reshape(-1)
        # A non-finite entry poisons the sum, so one scalar check suffices.
        if not math.isfinite(self.v_qst) or not math.isfinite(float(np.sum(comps))):
            raise InvalidInputError("cell state must be finite")
        self.v_dyn_components = comps

    def copy(self) -> "CellState":
        return CellState(self.v_qst, self.v_dyn_components.copy())

    @classmethod
    def rest(cls, v_qst: float, n_rc: int) -> "CellState":
        """Relaxed state (all RC voltages zero) at the given level."""
        return cls(v_qst, np.zeros(n_rc))

    def as_vector(self) -> np.ndarray:
        return np.concatenate(([self.v_qst], self.v_dyn_components))

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "CellState":
        x = np.asarray(x, dtype=float)
        return cls(float(x[0]), x[1:].copy())


@dataclass(frozen=True, eq=False)
class Trace:
    """Time-aligned samples of current (and optionally voltage).

    Current profiles carry voltage=None; measured traces carry all three
    columns. Timestamps are strictly increasing seconds.
    """

    timestamps: np.ndarray
    current: np.ndarray
    voltage: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        i = np.asarray(self.current, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise InvalidParametersError("trace needs at least two samples")
        if i.shape != t.shape:
            raise InvalidParametersError("current must match timestamps in length")
        if not np.all(np.isfinite(t)) or not np.all(np.isfinite(i)):
            raise InvalidParametersError("trace samples must be finite")
        if not np.all(np.diff(t) > 0.0):
            raise InvalidParametersError("timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "current", i)
        if self.voltage is not None:
            v = np.asarray(self.voltage, dtype=float)
            if v.shape != t.shape or not np.all(np.isfinite(v)):
                raise InvalidParametersError("voltage must be finite and match timestamps")
            object.__setattr__(self, "voltage", v)

    def __len__(self) -> int:
        return self.timestamps.size

    def require_voltage(self) -> np.ndarray:
        if self.voltage is None:
            raise InvalidInputError("trace has no voltage column")
        return self.voltage

    def slice(self, start: int, stop: int) -> "Trace":
        v = None if self.voltage is None else self.voltage[start:stop]
        return Trace(self.timestamps[start:stop], self.current[start:stop], v)


def _check_finite(**named) -> None:
    for name, value in named.items():
        if not math.isfinite(value):
            raise InvalidInputError(f"{name} must be finite, got {value}")


def output_voltage(state: CellState, params: CellParameters, current: float) -> float:
    """Terminal voltage: v_qst + sum of RC voltages + instantaneous drop.

    Currents outside the resistor grid are clamped (with a warning), so the
    result stays defined during estimator recovery.
    """
    _check_finite(current=current)
    if state.v_dyn_components.size != params.n_rc:
        raise InvalidInputError(
            f"state has {state.v_dyn_components.size} RC components, parameters define {params.n_rc}"
        )
    res = params.resistor
    if current < res.x_min or current > res.x_max:
        # Static message so repeated clamps deduplicate under the default filter.
        warnings.warn(
            f"current outside the resistor curve range [{res.x_min}, {res.x_max}] A, clamped",
            OutOfRangeWarning,
            stacklevel=2,
        )
    return state.v_qst + float(np.sum(state.v_dyn_components)) + res.eval(current)


def _advance(
    state: CellState,
    params: CellParameters,
    current: float,
    dt: float,
    guard: float,
) -> tuple[CellState, bool]:
    """One integration step without guard-rails; returns (state, saturated)."""
    v = state.v_qst
    c0 = params.capacitance.eval(v)
    v_half = v + 0.5 * dt * current / c0
    v_new = v + dt * current / params.capacitance.eval(v_half)
    lo = params.v_min - guard
    hi = params.v_max + guard
    saturated = v_new < lo or v_new > hi
    if saturated:
        v_new = lo if v_new < lo else hi
    decay = np.exp(-dt / params.taus)
    v_dyn = state.v_dyn_components * decay + params.rs * current * (1.0 - decay)
    return CellState(v_new, v_dyn), saturated


def step(
    state: CellState,
    params: CellParameters,
    current: float,
    dt: float,
    guard: float = DEFAULT_VQST_GUARD,
) -> CellState:
    """Advance the state by ``dt`` seconds under a constant current.

    The quasi-stationary voltage uses the midpoint rule on
    dv/dt = i / C(v); each RC voltage uses the exact zero-order-hold map.
    ``dt`` must satisfy the stability guard dt <= tau_min / 5.
    """
    _check_finite(current=current, dt=dt)
    if dt <= 0.0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    if dt > params.dt_guard * (1.0 + 1e-12):
        raise ConfigurationError(
            f"dt = {dt} s violates the stability guard tau_min/5 = {params.dt_guard} s"
        )
    new_state, saturated = _advance(state, params, current, dt, guard)
    if saturated:
        warnings.warn(
            f"v_qst left [{params.v_min}, {params.v_max}] beyond the {guard} V guard; clamped",
            SaturationWarning,
            stacklevel=2,
        )
    return new_state


def v_dyn_steady(params: CellParameters, current: float) -> float:
    """Dynamic-dipole voltage after the transient: (sum of R_i) * current."""
    _check_finite(current=current)
    return float(np.sum(params.rs)) * current


def soc_from_vqst(params: CellParameters, v_qst: float) -> float:
    """State of charge from the capacitance curve, integrated over voltage.

    Returns the fraction of delta_q stored between v_min and v_qst; inputs
    outside the window are clamped with a warning.
    """
    _check_finite(v_qst=v_qst)
    if params.delta_q <= 0.0:
        raise InvalidParametersError("delta_q must be positive")
    if v_qst < params.v_min or v_qst > params.v_max:
        # Static message so repeated clamps deduplicate under the default filter.
        warnings.warn(
            f"v_qst outside [{params.v_min}, {params.v_max}] V, clamped",
            OutOfRangeWarning,
            stacklevel=2,
        )
        v_qst = min(max(v_qst, params.v_min), params.v_max)
    return params.capacitance.integrate(params.v_min, v_qst) / params.delta_q


def vqst_from_soc(params: CellParameters, soc: float) -> float:
    """Inverse of soc_from_vqst: the voltage at which the window holds soc*delta_q."""
    _check_finite(soc=soc)
    if soc < 0.0 or soc > 1.0:
        warnings.warn("soc outside [0, 1], clamped", OutOfRangeWarning, stacklevel=2)
        soc = min(max(soc, 0.0), 1.0)
    target = soc * params.delta_q
    cap = params.capacitance
    knots = cap._knot_integrals
    idx = int(np.searchsorted(knots, target, side="right")) - 1
    idx = min(max(idx, 0), cap.grid.size - 2)
    q = target - knots[idx]
    g0, g1 = cap.grid[idx], cap.grid[idx + 1]
    c0, c1 = cap.values[idx], cap.values[idx + 1]
    s = (c1 - c0) / (g1 - g0)
    # Solve c0*u + s*u^2/2 = q for the offset u within the segment; this root
    # form is cancellation-free and valid for any slope sign including zero.
    u = 2.0 * q / (c0 + math.sqrt(max(c0 * c0 + 2.0 * s * q, 0.0)))
    return float(min(max(g0 + u, params.v_min), params.v_max))


def coulomb_count(trace: Trace, c_n: float, soc0: float) -> np.ndarray:
    """Reference SoC by trapezoidal current integration scaled by 1/c_n.

    Values are deliberately not clamped to [0, 1]; leaving the range only
    raises a warning, since the definition itself does not clamp.
    """
    if not (math.isfinite(c_n) and c_n > 0.0):
        raise InvalidInputError(f"nominal capacity must be positive, got {c_n}")
    if not (math.isfinite(soc0) and 0.0 <= soc0 <= 1.0):
        raise InvalidInputError(f"initial SoC must be within [0, 1], got {soc0}")
    dt = np.diff(trace.timestamps)
    increments = 0.5 * (trace.current[1:] + trace.current[:-1]) * dt
    soc = soc0 + np.concatenate(([0.0], np.cumsum(increments))) / c_n
    if np.any(soc < 0.0) or np.any(soc > 1.0):
        warnings.warn(
            f"coulomb-counting SoC leaves [0, 1] (range [{soc.min():.4f}, {soc.max():.4f}])",
            OutOfRangeWarning,
            stacklevel=2,
        )
    return soc


def interval_currents(current: np.ndarray) -> np.ndarray:
    """Effective current over each sample interval (mean of the endpoints).

    This is the trapezoid-consistent reading of a sampled profile and is used
    by every routine that integrates a trace, so model charge bookkeeping and
    coulomb counting agree.
    """
    current = np.asarray(current, dtype=float)
    return 0.5 * (current[:-1] + current[1:])


def reconstruct_v_dyn(
    timestamps: np.ndarray,
    current: np.ndarray,
    rc_groups,
    initial: np.ndarray | None = None,
) -> np.ndarray:
    """RC voltages driven by a sampled current, one row per sample.

    Exact zero-order-hold integration of each group with the interval current
    convention; starts from rest unless ``initial`` is given.
    """
    t = np.asarray(timestamps, dtype=float)
    groups = tuple(rc_groups)
    taus = np.array([g.tau for g in groups])
    rs = np.array([g.r for g in groups])
    i_eff = interval_currents(current)
    out = np.zeros((t.size, len(groups)))
    if initial is not None:
        out[0] = np.asarray(initial, dtype=float)
    dts = np.diff(t)
    for k in range(1, t.size):
        decay = np.exp(-dts[k - 1] / taus)
        out[k] = out[k - 1] * decay + rs * i_eff[k - 1] * (1.0 - decay)
    return out


@dataclass(eq=False)
class SimulationResult:
    """Forward-simulation output: the measured-like trace plus the state log."""

    trace: Trace
    v_qst: np.ndarray
    v_dyn: np.ndarray
    saturation_events: list = field(default_factory=list)

    @property
    def final_state(self) -> CellState:
        return CellState(float(self.v_qst[-1]), self.v_dyn[-1].copy())


def simulate(
    params: CellParameters,
    profile: Trace,
    initial: CellState,
    guard: float = DEFAULT_VQST_GUARD,
) -> SimulationResult:
    """Integrate the cell along a current profile and record terminal voltage.

    Intervals longer than the stability guard are sub-stepped internally.
    Saturation events (time, clamped value) are collected on the result, and a
    single warning summarizes any currents clamped by the resistor curve.
    """
    t = profile.timestamps
    current = profile.current
    if initial.v_dyn_components.size != params.n_rc:
        raise InvalidInputError("initial state does not match the parameter set")
    n = t.size
    taus = params.taus
    rs = params.rs
    cap = params.capacitance
    res = params.resistor
    lo = params.v_min - guard
    hi = params.v_max + guard

    v_qst = np.empty(n)
    v_dyn = np.empty((n, params.n_rc))
    v = initial.v_qst
    comps = initial.v_dyn_components.copy()
    v_qst[0] = v
    v_dyn[0] = comps
    events: list[tuple[float, float]] = []
    i_eff = interval_currents(current)
    dts = np.diff(t)
    guard_dt = params.dt_guard

    for k in range(1, n):
        dt_k = dts[k - 1]
        i_k = i_eff[k - 1]
        m = max(1, int(math.ceil(dt_k / guard_dt - 1e-12)))
        dt_sub = dt_k / m
        decay = np.exp(-dt_sub / taus)
        forced = rs * i_k * (1.0 - decay)
        saturated = False
        for _ in range(m):
            c0 = cap.eval(v)
            v_half = v + 0.5 * dt_sub * i_k / c0
            v = v + dt_sub * i_k / cap.eval(v_half)
            if v < lo or v > hi:
                v = lo if v < lo else hi
                saturated = True
            comps = comps * decay + forced
        if saturated:
            events.append((float(t[k]), float(v)))
        v_qst[k] = v
        v_dyn[k] = comps

    total = v_qst + v_dyn.sum(axis=1) + res.eval(current)
    oor = np.count_nonzero((current < res.x_min) | (current > res.x_max))
    if oor:
        warnings.warn(
            f"{oor} profile samples outside the resistor curve range were clamped",
            OutOfRangeWarning,
            stacklevel=2,
        )
    out_trace = Trace(t, current, total)
    return SimulationResult(out_trace, v_qst, v_dyn, events)
