"""Newton solvers for ``F(x) = 0`` and for the periodic shooting problem."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bchd import bind, build_series
from .flow import IntegrationError, SwitchingSchedule, ToleranceConfig, compose_flows
from .jets import DomainError
from .lie import VectorField, jacobian

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    tol_residual: float = 1e-10
    max_iter: int = 50
    fd_step_scale: float = 1e-6
    damping: float = 0.5
    armijo: float = 1e-4
    min_step: float = 1e-10
    max_condition: float = 1e12

    def __post_init__(self):
        if not self.tol_residual > 0:
            raise ValueError("tol_residual must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 < self.damping < 1:
            raise ValueError("damping must lie in (0, 1)")


@dataclass
class EquilibriumReport:
    x_star: np.ndarray
    residual_norm: float
    iterations: int
    jacobian_eigenvalues: np.ndarray
    converged: bool
    message: str = ""
    label: str = ""
    kind: str = "equilibrium"
    history: list = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            f"label={self.label}",
            f"kind={self.kind}",
            f"converged={str(self.converged).lower()}",
            f"iterations={self.iterations}",
            f"residual_norm={self.residual_norm!r}",
            "x_star=" + ",".join(repr(float(v)) for v in self.x_star),
            "eigenvalues=" + ",".join(_fmt_complex(z) for z in self.jacobian_eigenvalues),
            f"message={self.message}",
        ]
        return "\n".join(lines) + "\n"

    CSV_HEADER = ("label", "kind", "converged", "iterations", "residual_norm", "x_star", "eigenvalues")

    def csv_row(self) -> list:
        return [
            self.label,
            self.kind,
            int(self.converged),
            self.iterations,
            repr(self.residual_norm),
            " ".join(repr(float(v)) for v in self.x_star),
            " ".join(_fmt_complex(z) for z in self.jacobian_eigenvalues),
        ]


def _fmt_complex(z) -> str:
    z = complex(z)
    if z.imag == 0:
        return repr(z.real)
    return f"{z.real!r}{z.imag:+.17g}j"


def reports_to_csv(reports: Sequence[EquilibriumReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EquilibriumReport.CSV_HEADER)
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def _damped_newton(
    residual: Callable,
    jac: Callable,
    x0,
    cfg: SolverConfig,
    kind: str,
) -> EquilibriumReport:
    x = np.array(x0, dtype=float)
    try:
        r = residual(x)
    except (DomainError, IntegrationError) as exc:
        return EquilibriumReport(x, np.inf, 0, np.array([]), False, f"initial guess invalid: {exc}", kind=kind)
    norm = float(np.linalg.norm(r))
    history = [norm]
    J = None
    for it in range(cfg.max_iter + 1):
        if norm <= cfg.tol_residual:
            J = jac(x)
            return EquilibriumReport(x, norm, it, np.linalg.eigvals(J), True, "converged", kind=kind, history=history)
        if it == cfg.max_iter:
            break
        J = jac(x)
        cond = np.linalg.cond(J)
        if not np.isfinite(cond) or cond > cfg.max_condition:
            return EquilibriumReport(
                x, norm, it, np.linalg.eigvals(J), False, f"singular Jacobian (cond={cond:.3g})", kind=kind, history=history
            )
        dx = np.linalg.solve(J, -r)
        lam = 1.0
        while True:
            x_try = x + lam * dx
            try:
                r_try = residual(x_try)
                n_try = float(np.linalg.norm(r_try))
                if n_try**2 <= (1.0 - 2.0 * cfg.armijo * lam) * norm**2 or n_try <= cfg.tol_residual:
                    break
            except (DomainError, IntegrationError):
                # outside the model domain: pull the step back
                pass
            lam *= cfg.damping
            if lam < cfg.min_step:
                eig = np.linalg.eigvals(J)
                return EquilibriumReport(x, norm, it, eig, False, "line search failed", kind=kind, history=history)
        x, r, norm = x_try, r_try, n_try
        history.append(norm)
        log.debug("%s newton it=%d |r|=%.3e step=%.3g", kind, it + 1, norm, lam)
    eig = np.linalg.eigvals(J) if J is not None else np.array([])
    return EquilibriumReport(x, norm, cfg.max_iter, eig, False, "max_iter exceeded", kind=kind, history=history)


def find_equilibrium(F: VectorField, x_guess, cfg: SolverConfig | None = None) -> EquilibriumReport:
    """Damped Newton on ``F(x) = 0`` with the jet Jacobian of ``F``."""
    cfg = cfg or SolverConfig()
    return _damped_newton(F, lambda x: jacobian(F, x), x_guess, cfg, "equilibrium")


def poincare_jacobian(system, schedule: SwitchingSchedule, x, cfg: SolverConfig, tol: ToleranceConfig | None = None, base=None):
    """Central-difference Jacobian of the period map (the monodromy matrix)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    J = np.empty((n, n))
    for i in range(n):
        h = cfg.fd_step_scale * max(1.0, abs(x[i]))
        e = np.zeros(n)
        e[i] = h
        J[:, i] = (compose_flows(system, schedule, x + e, tol) - compose_flows(system, schedule, x - e, tol)) / (2 * h)
    return J


def solve_shooting(
    system,
    schedule: SwitchingSchedule,
    x_guess,
    cfg: SolverConfig | None = None,
    tol: ToleranceConfig | None = None,
) -> EquilibriumReport:
    """Newton on ``G(x) = P(x) - x`` where ``P`` is the period map.

    Reported eigenvalues are those of the monodromy matrix ``dP/dx``.
    """
    cfg = cfg or SolverConfig()

    def G(x):
        return compose_flows(system, schedule, x, tol) - x

    def JG(x):
        return poincare_jacobian(system, schedule, x, cfg, tol) - np.eye(x.size)

    rep = _damped_newton(G, JG, x_guess, cfg, "shooting")
    rep.jacobian_eigenvalues = rep.jacobian_eigenvalues + 1.0 if rep.jacobian_eigenvalues.size else rep.jacobian_eigenvalues
    return rep


def bchd_field(system, schedule: SwitchingSchedule, order: int, method: str = "auto"):
    """The truncated series field for ``system`` under ``schedule``."""
    schedule.check_controls(system.control_box)
    fields = [system.frozen_field(u, name=f"f{k + 1}") for k, u in enumerate(schedule.controls)]
    series = build_series(schedule.N, order, method)
    return bind(series, fields, schedule.fractions, schedule.tau)


def refine_chain(
    system,
    schedule: SwitchingSchedule,
    orders: Sequence[int],
    cfg: SolverConfig | None = None,
    x_guess=None,
    method: str = "auto",
    polish: bool = False,
    tol: ToleranceConfig | None = None,
) -> list:
    """Zeros of the truncated fields for each order, each warm-started from the last.

    With ``polish=True`` a shooting solve started from the final zero is appended.
    """
    if not orders:
        raise ValueError("orders must be non-empty")
    cfg = cfg or SolverConfig()
    x = np.zeros(system.n) if x_guess is None else np.asarray(x_guess, dtype=float)
    reports = []
    for M in orders:
        F = bchd_field(system, schedule, M, method)
        rep = find_equilibrium(F, x, cfg)
        rep.label = f"M={M}"
        reports.append(rep)
        log.info("order %d: x*=%s |F|=%.2e iters=%d", M, rep.x_star, rep.residual_norm, rep.iterations)
        if rep.converged:
            x = rep.x_star
    if polish:
        rep = solve_shooting(system, schedule, x, cfg, tol)
        rep.label = "shooting"
        reports.append(rep)
    return reports


def steady_state(system, u, x_guess, cfg: SolverConfig | None = None) -> EquilibriumReport:
    """Equilibrium of the system under the constant control ``u``."""
    rep = find_equilibrium(system.frozen_field(u), x_guess, cfg)
    rep.label = "steady"
    return rep
