"""Single-engine multi-cell estimation: one EKF time-sliced by round-robin.

Each cell owns a memory slot (filter state plus last service time). Every
t_slot seconds the scheduler services the next cell in fixed circular order:
it loads the slot, predicts over the per-cell elapsed time (a full revolution,
N * t_slot), corrects with that cell's freshest measurement and stores the
slot back. All other slots are untouched, so cells are isolated by
construction and the arithmetic is identical to N independent filters each
stepped at period N * t_slot.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    BudgetExceededError,
    InvalidInputError,
    InvalidParametersError,
    SchedulingViolationError,
    SchedulingWarning,
)
from .estimator import (
    EkfConfig,
    EkfState,
    correct,
    estimate_soc,
    make_filter,
    predict,
    predicted_output,
)
from .model import CellParameters, coulomb_count


def max_cells(f_max: float, t_slot: float) -> int:
    """Nyquist cell budget: floor(1 / (2 * f_max * t_slot)).

    The highest frequency present in the current draw dictates how rarely a
    cell may be sampled, hence how many cells one engine can serve.
    """
    if not (math.isfinite(f_max) and f_max > 0.0):
        raise InvalidInputError(f"f_max must be positive, got {f_max}")
    if not (math.isfinite(t_slot) and t_slot > 0.0):
        raise InvalidInputError(f"t_slot must be positive, got {t_slot}")
    # The 1e-12 nudge absorbs representation dust when the bound is an integer.
    return int(math.floor(1.0 / (2.0 * f_max * t_slot) + 1e-12))


@dataclass(frozen=True)
class SchedulerConfig:
    """Round-robin schedule: slice length, fixed cell order, signal bandwidth."""

    t_slot: float
    cells: tuple[str, ...]
    f_max: float

    def __post_init__(self):
        if not (math.isfinite(self.t_slot) and self.t_slot > 0.0):
            raise InvalidParametersError(f"t_slot must be positive, got {self.t_slot}")
        if not (math.isfinite(self.f_max) and self.f_max > 0.0):
            raise InvalidParametersError(f"f_max must be positive, got {self.f_max}")
        cells = tuple(self.cells)
        if not cells:
            raise InvalidParametersError("at least one cell is required")
        if len(set(cells)) != len(cells):
            raise InvalidParametersError("cell ids must be unique")
        object.__setattr__(self, "cells", cells)
        budget = max_cells(self.f_max, self.t_slot)
        if len(cells) > budget:
            raise BudgetExceededError(
                f"{len(cells)} cells exceed the budget: floor(1 / (2 * {self.f_max} Hz * "
                f"{self.t_slot} s)) = {budget}"
            )


@dataclass(eq=False)
class CellSlot:
    """Per-cell memory: filter state, parameter reference, last service time."""

    cell_id: str
    ekf: EkfState
    params_ref: CellParameters
    ekf_config: EkfConfig
    last_serviced_t: float


@dataclass(frozen=True)
class Measurement:
    cell_id: str
    current: float
    voltage: float


@dataclass(eq=False)
class TickResult:
    cell_id: str
    time: float
    soc: float
    innovation: float


@dataclass(eq=False)
class CellSeries:
    """Per-cell output of a scheduled run."""

    times: np.ndarray
    soc_est: np.ndarray
    soc_ref: np.ndarray
    innovations: np.ndarray


class MultiCellEkf:
    """The scheduler plus its memory slots; strictly single-threaded by design."""

    def __init__(self, config: SchedulerConfig, cell_setups, start_time: float = 0.0):
        """``cell_setups`` maps cell_id -> (CellParameters, EkfConfig).

        Slots are back-dated by one revolution so the first service of every
        cell, like all later ones, predicts over exactly N * t_slot (the slot
        content handed to prediction is always one revolution old).
        """
        self.config = config
        self.start_time = float(start_time)
        n = len(config.cells)
        self.slots: dict[str, CellSlot] = {}
        for j, cell_id in enumerate(config.cells):
            try:
                params, ekf_cfg = cell_setups[cell_id]
            except KeyError:
                raise InvalidInputError(f"no setup provided for cell {cell_id!r}") from None
            self.slots[cell_id] = CellSlot(
                cell_id=cell_id,
                ekf=make_filter(ekf_cfg),
                params_ref=params,
                ekf_config=ekf_cfg,
                last_serviced_t=self.start_time + (j + 1 - n) * config.t_slot,
            )
        self._ring = 0

    @property
    def due_cell(self) -> str:
        return self.config.cells[self._ring]

    def tick(self, now: float, measurement: Measurement) -> TickResult:
        """Service the due cell: predict over its elapsed time, correct, store.

        Out-of-order measurements are refused; a measurement older than two
        revolutions is accepted with a degraded-update warning.
        """
        expected = self.due_cell
        if measurement.cell_id != expected:
            raise SchedulingViolationError(
                f"measurement for {measurement.cell_id!r} but {expected!r} is due"
            )
        slot = self.slots[expected]
        dt = now - slot.last_serviced_t
        if dt <= 0.0:
            raise SchedulingViolationError(
                f"service time {now} does not advance past {slot.last_serviced_t}"
            )
        revolution = len(self.config.cells) * self.config.t_slot
        if dt > 2.0 * revolution * (1.0 + 1e-9):
            warnings.warn(
                f"cell {expected!r} serviced after {dt:.6g} s (> 2 revolutions); "
                "update quality degraded",
                SchedulingWarning,
                stacklevel=2,
            )
        ekf = predict(slot.ekf, slot.params_ref, measurement.current, dt, slot.ekf_config)
        innovation = measurement.voltage - predicted_output(ekf, slot.params_ref, measurement.current)
        ekf = correct(ekf, slot.params_ref, measurement.voltage, measurement.current, slot.ekf_config)
        slot.ekf = ekf
        slot.last_serviced_t = now
        self._ring = (self._ring + 1) % len(self.config.cells)
        return TickResult(expected, now, estimate_soc(ekf, slot.params_ref), innovation)

    def run(self, traces, ref_soc0=None) -> dict[str, CellSeries]:
        """Execute the schedule over the shared horizon of the given traces.

        ``traces`` maps cell_id -> measured Trace; each trace is decimated to
        its cell's service instants by zero-order hold. ``ref_soc0`` (scalar or
        per-cell mapping) seeds the coulomb-counting reference series; without
        it the reference column is NaN.
        """
        cells = self.config.cells
        n = len(cells)
        for cell_id in cells:
            if cell_id not in traces:
                raise InvalidInputError(f"no trace provided for cell {cell_id!r}")
            traces[cell_id].require_voltage()
        horizon = min(float(traces[c].timestamps[-1]) for c in cells)
        refs = {}
        for cell_id in cells:
            if ref_soc0 is None:
                refs[cell_id] = np.full(len(traces[cell_id]), np.nan)
            else:
                soc0 = ref_soc0 if np.isscalar(ref_soc0) else ref_soc0[cell_id]
                refs[cell_id] = coulomb_count(
                    traces[cell_id], self.slots[cell_id].params_ref.nominal_capacity_c_n, soc0
                )

        out: dict[str, list[tuple[float, float, float, float]]] = {c: [] for c in cells}
        k = 0
        while True:
            now = self.start_time + (k + 1) * self.config.t_slot
            if now > horizon:
                break
            cell_id = cells[k % n]
            trace = traces[cell_id]
            # Slight forward nudge so a sample nominally at `now` is picked up
            # despite last-ulp differences in how the two times were computed.
            pick = now + 1e-9 * self.config.t_slot
            idx = int(np.searchsorted(trace.timestamps, pick, side="right")) - 1
            if idx < 0:
                raise InvalidInputError(
                    f"trace for {cell_id!r} starts after its first service instant {now}"
                )
            meas = Measurement(cell_id, float(trace.current[idx]), float(trace.voltage[idx]))
            result = self.tick(now, meas)
            out[cell_id].append((now, result.soc, float(refs[cell_id][idx]), result.innovation))
            k += 1

        series = {}
        for cell_id in cells:
            rows = np.array(out[cell_id]).reshape(-1, 4)
            series[cell_id] = CellSeries(rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3])
        return series
