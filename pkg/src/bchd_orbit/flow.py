"""Adaptive integration of fields and of the switched system over one period."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .jets import DomainError
from .lie import VectorField


@dataclass(frozen=True)
class ToleranceConfig:
    rtol: float = 1e-10
    atol: float = 1e-12
    max_step: float | None = None
    max_steps: int = 1_000_000
    min_step: float = 1e-14

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")


class IntegrationError(RuntimeError):
    """Integration failed; carries the last accepted state."""

    def __init__(self, message, t=None, x=None, segment=None):
        super().__init__(message)
        self.t = t
        self.x = None if x is None else np.array(x)
        self.segment = segment


@dataclass
class Trajectory:
    t: np.ndarray  # (K,)
    x: np.ndarray  # (K, n)
    segment: np.ndarray  # (K,) 1-based control segment of each sample
    switch_indices: list = field(default_factory=list)
    poincare: np.ndarray | None = None  # (periods + 1, n)
    metadata: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.x[-1]

    def to_csv(self, path) -> None:
        n = self.x.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + ["segment"])
            for t, x, s in zip(self.t, self.x, self.segment):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in x] + [int(s)])


@dataclass(frozen=True)
class SwitchingSchedule:
    """Bang-bang schedule on ``[0, tau]``: control ``controls[k]`` on
    ``[breakpoints[k] tau, breakpoints[k+1] tau)``."""

    tau: float
    breakpoints: tuple
    controls: tuple

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        b = tuple(float(v) for v in self.breakpoints)
        if len(b) < 2 or b[0] != 0.0 or b[-1] != 1.0:
            raise ValueError("breakpoints must start at 0 and end at 1")
        if any(b1 <= b0 for b0, b1 in zip(b, b[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        ctrl = tuple(tuple(float(c) for c in np.atleast_1d(u)) for u in self.controls)
        if len(ctrl) != len(b) - 1:
            raise ValueError(f"{len(b) - 1} segments but {len(ctrl)} control values")
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "controls", ctrl)
        object.__setattr__(self, "tau", float(self.tau))

    @classmethod
    def from_fractions(cls, tau: float, fractions: Sequence[float], controls) -> "SwitchingSchedule":
        fr = np.asarray(fractions, dtype=float)
        if np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-12:
            raise ValueError("fractions must be positive and sum to 1")
        b = np.concatenate([[0.0], np.cumsum(fr)])
        b[-1] = 1.0
        return cls(tau, tuple(b), tuple(controls))

    @property
    def N(self) -> int:
        return len(self.controls)

    @property
    def fractions(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    @property
    def switch_times(self) -> np.ndarray:
        return self.tau * np.asarray(self.breakpoints)

    def with_tau(self, tau: float) -> "SwitchingSchedule":
        return SwitchingSchedule(tau, self.breakpoints, self.controls)

    def check_controls(self, control_box) -> None:
        box = np.asarray(control_box, dtype=float)
        for k, u in enumerate(self.controls):
            u = np.asarray(u)
            if u.shape != (box.shape[0],):
                raise ValueError(f"control {k + 1} has {u.size} entries, model has {box.shape[0]} inputs")
            if np.any(u < box[:, 0] - 1e-12) or np.any(u > box[:, 1] + 1e-12):
                raise ValueError(f"control {k + 1} = {u.tolist()} lies outside the control box")


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = _B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
# continuous extension, y(t + s h) = y + h * sum_i k_i * sum_j P[i, j] s^(j+1)
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_SAFETY = 0.9
_BETA = 0.04  # PI controller weight on the previous error
_EXPO = 0.2 - 0.75 * _BETA
_FAC_MIN, _FAC_MAX = 0.2, 10.0


def _err_norm(err, y0, y1, tol):
    scale = tol.atol + tol.rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(f, t0, y0, f0, direction, tol, span):
    scale = tol.atol + tol.rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    try:
        f1 = f(y0 + direction * h0 * f0)
        d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    except DomainError:
        return h0 * 0.1
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span)


def integrate(
    field: VectorField,
    x0,
    t0: float,
    t1: float,
    tol: ToleranceConfig | None = None,
    sample_times: Sequence[float] | None = None,
    segment: int = 1,
) -> Trajectory:
    """Solve ``x' = field(x)`` on ``[t0, t1]`` with an embedded 5(4) pair.

    Samples are the accepted steps plus any ``sample_times`` (dense output);
    the last sample is exactly at ``t1``.
    """
    tol = tol or ToleranceConfig()
    if not t1 > t0:
        raise ValueError("integrate needs t1 > t0")
    y = np.array(x0, dtype=float)
    if y.shape != (field.dim,):
        raise ValueError(f"initial state must have shape ({field.dim},)")
    f = field
    span = t1 - t0
    max_step = min(tol.max_step or span, span)
    try:
        k0 = f(y)
    except DomainError as exc:
        raise IntegrationError(f"initial state outside the domain: {exc}", t0, y, segment) from exc

    pending = sorted(float(s) for s in (() if sample_times is None else sample_times) if t0 < s < t1)
    ts, xs = [t0], [y.copy()]
    t = t0
    h = min(_initial_step(f, t0, y, k0, 1.0, tol, span), max_step)
    err_old = 1e-4
    steps = 0
    K = np.empty((7, y.size))
    while t < t1:
        steps += 1
        if steps > tol.max_steps:
            raise IntegrationError(f"too many steps ({tol.max_steps})", t, y, segment)
        last = t + h >= t1 - 1e-14 * max(1.0, abs(t1))
        if last:
            h = t1 - t
        if h < tol.min_step * max(1.0, abs(t)):
            raise IntegrationError(f"step size underflow at t={t!r}", t, y, segment)
        K[0] = k0
        try:
            for s in range(1, 7):
                ys = y + h * (np.asarray(_A[s]) @ K[:s])
                K[s] = f(ys)
        except DomainError:
            h *= 0.25
            continue
        y_new = y + h * (_B[:6] @ K[:6])
        err = _err_norm(h * (_E @ K), y, y_new, tol)
        if not np.isfinite(err):
            h *= 0.25
            continue
        if err <= 1.0:
            t_new = t1 if last else t + h
            while pending and pending[0] < t_new:
                s_frac = (pending[0] - t) / h
                powers = s_frac ** np.arange(1, 5)
                ts.append(pending.pop(0))
                xs.append(y + h * ((_P @ powers) @ K))
            t, y, k0 = t_new, y_new, K[6].copy()
            ts.append(t)
            xs.append(y.copy())
            fac = max(err, 1e-10) ** _EXPO / err_old**_BETA
            fac = min(1 / _FAC_MIN, max(1 / _FAC_MAX, fac / _SAFETY))
            err_old = max(err, 1e-4)
            h = min(h / fac, max_step)
        else:
            fac = min(1 / _FAC_MIN, max(1.0, err**_EXPO / _SAFETY))
            h = h / fac
    t_arr = np.array(ts)
    return Trajectory(
        t=t_arr,
        x=np.array(xs),
        segment=np.full(t_arr.size, segment, dtype=int),
        metadata={"rtol": tol.rtol, "atol": tol.atol, "steps": steps},
    )


def flow_autonomous(F: VectorField, x0, T: float = 1.0, tol: ToleranceConfig | None = None) -> np.ndarray:
    """Endpoint ``exp(T F) x0``."""
    if T == 0:
        return np.array(x0, dtype=float)
    return integrate(F, x0, 0.0, T, tol).final


def _segment_fields(system, schedule):
    schedule.check_controls(system.control_box)
    return [system.frozen_field(u, name=f"f{k + 1}") for k, u in enumerate(schedule.controls)]


def _period(system, schedule, x0, tol, fields, t_offset=0.0, samples_per_segment=0):
    times = schedule.switch_times
    pieces = []
    y = np.array(x0, dtype=float)
    for k, fk in enumerate(fields):
        a, b = times[k], times[k + 1]
        seg_tol = tol if tol.max_step else ToleranceConfig(tol.rtol, tol.atol, schedule.tau / 50, tol.max_steps, tol.min_step)
        samples = None
        if samples_per_segment:
            samples = np.linspace(a, b, samples_per_segment + 1)[1:-1] - a
        try:
            tr = integrate(fk, y, 0.0, b - a, seg_tol, samples, segment=k + 1)
        except IntegrationError as exc:
            exc.segment = k + 1
            exc.args = (f"segment {k + 1}: {exc.args[0]}",)
            raise
        tr.t = tr.t + a + t_offset
        pieces.append(tr)
        y = tr.final
    return pieces


def compose_flows(system, schedule: SwitchingSchedule, x0, tol: ToleranceConfig | None = None) -> np.ndarray:
    """Period map ``x0 -> x(tau)``: frozen fields integrated segment by segment."""
    tol = tol or ToleranceConfig()
    fields = _segment_fields(system, schedule)
    return _period(system, schedule, x0, tol, fields)[-1].final


def simulate_periods(
    system,
    schedule: SwitchingSchedule,
    x0,
    n_periods: int,
    tol: ToleranceConfig | None = None,
    samples_per_segment: int = 0,
) -> Trajectory:
    """Repeat the period map, keeping the whole path and the Poincare samples."""
    if n_periods < 1:
        raise ValueError("n_periods must be >= 1")
    tol = tol or ToleranceConfig()
    fields = _segment_fields(system, schedule)
    y = np.array(x0, dtype=float)
    ts, xs, segs, switches = [np.array([0.0])], [y[None]], [np.array([1])], []
    poincare = [y.copy()]
    count = 1
    for p in range(n_periods):
        pieces = _period(system, schedule, y, tol, fields, t_offset=p * schedule.tau, samples_per_segment=samples_per_segment)
        for k, tr in enumerate(pieces):
            if k > 0 or p > 0:
                switches.append(count - 1)
                segs[-1][-1] = tr.segment[0]
            ts.append(tr.t[1:])
            xs.append(tr.x[1:])
            segs.append(tr.segment[1:].copy())
            count += tr.t.size - 1
        y = pieces[-1].final
        poincare.append(y.copy())
    return Trajectory(
        t=np.concatenate(ts),
        x=np.concatenate(xs),
        segment=np.concatenate(segs),
        switch_indices=switches,
        poincare=np.array(poincare),
        metadata={"rtol": tol.rtol, "atol": tol.atol, "tau": schedule.tau, "periods": n_periods},
    )
