"""Sampled certificates: divergence sign scans, Lyapunov metrics and contraction checks.

All certificates here are checked on grids and are labelled "sampled"; they
are numerical evidence, not proofs.
"""

from __future__ import annotations

import csv
import io
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .flow import SwitchingSchedule, ToleranceConfig, simulate_periods
from .jets import DomainError
from .lie import VectorField, jacobian

log = logging.getLogger(__name__)

CHUNK = 4096
MAX_DOMAIN_FAILURE_FRACTION = 1e-3


class LyapunovError(ValueError):
    pass


@dataclass(frozen=True)
class BoxRegion:
    lower: np.ndarray
    upper: np.ndarray
    grid: tuple

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        grid = tuple(int(g) for g in np.broadcast_to(np.asarray(self.grid), lo.shape))
        if lo.shape != hi.shape:
            raise ValueError("lower and upper must have the same length")
        if not np.all(lo < hi):
            raise ValueError("need lower < upper in every coordinate")
        if min(grid) < 2:
            raise ValueError("grid counts must be >= 2")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "grid", grid)

    @property
    def n(self) -> int:
        return self.lower.size

    @property
    def size(self) -> int:
        return int(np.prod(self.grid))

    def axes(self) -> list:
        return [np.linspace(a, b, g) for a, b, g in zip(self.lower, self.upper, self.grid)]

    def points(self) -> np.ndarray:
        """All grid points as an ``(n, K)`` array (first axis varies slowest)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh])

    @classmethod
    def around(cls, center, delta, grid=20, relative: bool = True) -> "BoxRegion":
        """``|x_i - c_i| <= delta_i * |c_i|`` (or ``<= delta_i`` when not relative)."""
        c = np.asarray(center, dtype=float)
        d = np.broadcast_to(np.asarray(delta, dtype=float), c.shape)
        half = d * np.abs(c) if relative else d
        return cls(c - half, c + half, grid)

    def describe(self) -> str:
        return "x".join(str(g) for g in self.grid) + " grid on [" + ", ".join(
            f"{float(a)!r}..{float(b)!r}" for a, b in zip(self.lower, self.upper)
        ) + "]"


def _chunks(total: int, size: int = CHUNK):
    for start in range(0, total, size):
        yield slice(start, min(total, start + size))


def _map_chunks(fn, pts: np.ndarray, threads: int):
    """Apply ``fn`` to column chunks of ``pts``; results keep grid order."""
    slices = list(_chunks(pts.shape[1]))
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda s: fn(pts[:, s]), slices))
    else:
        parts = [fn(pts[:, s]) for s in slices]
    return parts


# -- divergence ------------------------------------------------------------------

def divergence(F: VectorField, x) -> np.ndarray:
    """Trace of the Jacobian of ``F`` at ``x`` (a point or an ``(n, K)`` batch)."""
    J = jacobian(F, x)
    return np.trace(J, axis1=0, axis2=1)


def _divergence_tolerant(F: VectorField, pts: np.ndarray) -> np.ndarray:
    try:
        return divergence(F, pts)
    except DomainError:
        out = np.full(pts.shape[1], np.nan)
        for k in range(pts.shape[1]):
            try:
                out[k] = divergence(F, pts[:, k])
            except DomainError:
                pass
        return out


@dataclass
class DulacReport:
    rho_sign: int
    min_abs_divergence: float
    sign_uniform: bool
    region: BoxRegion
    inconclusive: bool = False
    max_divergence: float = np.nan
    min_divergence: float = np.nan
    samples_checked: int = 0
    domain_failures: int = 0
    values: np.ndarray | None = field(default=None, repr=False)
    label: str = ""

    @property
    def certified(self) -> bool:
        """Uniform and bounded away from zero on the sampled grid."""
        return self.sign_uniform and not self.inconclusive

    def to_text(self) -> str:
        lines = [
            f"label={self.label}",
            "kind=dulac-scan (sampled)",
            f"region={self.region.describe()}",
            f"samples_checked={self.samples_checked}",
            f"domain_failures={self.domain_failures}",
            f"rho_sign={self.rho_sign}",
            f"sign_uniform={str(self.sign_uniform).lower()}",
            f"inconclusive={str(self.inconclusive).lower()}",
            f"certified={str(self.certified).lower()}",
            f"min_divergence={self.min_divergence!r}",
            f"max_divergence={self.max_divergence!r}",
            f"min_abs_divergence={self.min_abs_divergence!r}",
        ]
        return "\n".join(lines) + "\n"

    def samples_csv(self) -> str:
        """Grid dump with columns ``x1..xn,divergence``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.region.n
        w.writerow([f"x{i + 1}" for i in range(n)] + ["divergence"])
        pts = self.region.points()
        for k in range(pts.shape[1]):
            w.writerow([repr(float(v)) for v in pts[:, k]] + [repr(float(self.values[k]))])
        return buf.getvalue()


def dulac_scan(F: VectorField, region: BoxRegion, threads: int = 1, zero_tol: float = 1e-12) -> DulacReport:
    """Sample ``div F`` on ``region`` and report whether its sign is uniform (rho = +-1).

    Points where ``F`` cannot be evaluated are excluded when they are fewer
    than 0.1% of the grid; otherwise the scan is not uniform.
    """
    if region.n != F.dim:
        raise ValueError(f"region has dimension {region.n}, field has {F.dim}")
    if F.dim != 2:
        warnings.warn("the divergence criterion excludes closed orbits only for planar systems", stacklevel=2)
    pts = region.points()
    vals = np.concatenate(_map_chunks(lambda p: _divergence_tolerant(F, p), pts, threads))
    ok = np.isfinite(vals)
    failures = int(np.count_nonzero(~ok))
    good = vals[ok]
    if good.size == 0:
        raise DomainError("divergence could not be evaluated anywhere in the region")
    vmin, vmax = float(good.min()), float(good.max())
    min_abs = float(np.abs(good).min())
    scale = max(1.0, float(np.abs(good).max()))
    inconclusive = min_abs <= zero_tol * scale
    rho = -1 if vmax < 0 or (vmax <= 0 and vmin < 0) else 1
    uniform = bool(np.all(good < 0) or np.all(good > 0) or np.all(good == 0))
    if failures > MAX_DOMAIN_FAILURE_FRACTION * vals.size:
        uniform = False
    if failures:
        log.warning("dulac_scan: %d of %d samples outside the domain", failures, vals.size)
    return DulacReport(
        rho_sign=rho,
        min_abs_divergence=min_abs,
        sign_uniform=uniform,
        region=region,
        inconclusive=bool(inconclusive),
        max_divergence=vmax,
        min_divergence=vmin,
        samples_checked=int(good.size),
        domain_failures=failures,
        values=vals,
    )


# -- Lyapunov equation ---------------------------------------------------------

def solve_lyapunov(A, Q=None, max_condition: float = 1e12) -> np.ndarray:
    """Solve ``M A + A^T M = -Q`` for symmetric positive definite ``M``.

    ``A`` must be Hurwitz.  The equation is vectorised with Kronecker
    products (column-major ``vec``) and solved densely, which is fine for
    small ``n``.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("A must be square")
    Q = np.eye(n) if Q is None else np.asarray(Q, dtype=float)
    if Q.shape != (n, n):
        raise ValueError("Q must match A")
    if not np.allclose(Q, Q.T, rtol=0, atol=1e-12 * max(1.0, np.abs(Q).max())):
        raise ValueError("Q must be symmetric")
    eig = np.linalg.eigvals(A)
    if not np.all(eig.real < 0):
        raise LyapunovError(f"A is not Hurwitz (max real part {eig.real.max():.4g})")
    I = np.eye(n)
    # vec(M A) = (A^T kron I) vec M and vec(A^T M) = (I kron A^T) vec M
    K = np.kron(A.T, I) + np.kron(I, A.T)
    cond = np.linalg.cond(K)
    if not np.isfinite(cond) or cond > max_condition:
        raise LyapunovError(f"Kronecker system is ill-conditioned (cond={cond:.3g})")
    vecM = np.linalg.solve(K, -Q.reshape(-1, order="F"))
    M = vecM.reshape((n, n), order="F")
    M = 0.5 * (M + M.T)
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise LyapunovError("solution is not positive definite") from exc
    return M


def lyapunov_residual(M, A, Q=None) -> float:
    A = np.asarray(A, dtype=float)
    Q = np.eye(A.shape[0]) if Q is None else np.asarray(Q, dtype=float)
    return float(np.linalg.norm(M @ A + A.T @ M + Q, "fro"))


# -- contraction -----------------------------------------------------------------

def _check_spd(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("metric must be a square matrix")
    if not np.allclose(M, M.T, rtol=1e-12, atol=0):
        raise ValueError("metric must be symmetric")
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise ValueError("metric must be positive definite") from exc
    return 0.5 * (M + M.T)


@dataclass
class ContractionCertificate:
    metric_M: np.ndarray
    beta: float
    region: BoxRegion
    worst_eigenvalue: float
    samples_checked: int
    vertex_controls_checked: int
    worst_point: np.ndarray | None = None
    worst_control: np.ndarray | None = None
    u_independent: bool = False
    domain_failures: int = 0
    label: str = ""

    @property
    def valid(self) -> bool:
        return bool(self.worst_eigenvalue <= 0.0) and self.domain_failures == 0

    def to_text(self) -> str:
        note = "jacobian independent of u (constant input fields)" if self.u_independent else (
            f"{self.vertex_controls_checked} control-box vertices (condition affine in u)"
        )
        lines = [
            f"label={self.label}",
            "kind=contraction-certificate (sampled)",
            f"valid={str(self.valid).lower()}",
            f"beta={self.beta!r}",
            "metric_M=" + ";".join(",".join(repr(float(v)) for v in row) for row in self.metric_M),
            f"region={self.region.describe()}",
            f"samples_checked={self.samples_checked}",
            f"controls={note}",
            f"domain_failures={self.domain_failures}",
            f"worst_eigenvalue={self.worst_eigenvalue!r}",
            "worst_point=" + ("" if self.worst_point is None else ",".join(repr(float(v)) for v in self.worst_point)),
            "worst_control=" + ("" if self.worst_control is None else ",".join(repr(float(v)) for v in self.worst_control)),
        ]
        return "\n".join(lines) + "\n"


def _max_sym_eig(M: np.ndarray, J: np.ndarray) -> np.ndarray:
    """Largest eigenvalue of ``M J + J^T M`` for a batch ``J`` of shape ``(n, n, K)``."""
    Jb = np.moveaxis(J, -1, 0)
    MJ = M @ Jb
    S = MJ + np.swapaxes(MJ, 1, 2)
    return np.linalg.eigvalsh(S)[:, -1]


def _field_jacobian(field: VectorField, pts: np.ndarray) -> tuple:
    """Jacobians on a batch; points outside the domain come back as NaN."""
    try:
        return jacobian(field, pts), 0
    except DomainError:
        n = pts.shape[0]
        J = np.full((n, n, pts.shape[1]), np.nan)
        bad = 0
        for k in range(pts.shape[1]):
            try:
                J[:, :, k] = jacobian(field, pts[:, k])
            except DomainError:
                bad += 1
        return J, bad


def contraction_check(system, M, beta: float, region: BoxRegion, threads: int = 1) -> ContractionCertificate:
    """Largest eigenvalue of ``M J + J^T M + beta I`` over the grid and the control vertices.

    The condition is affine in ``u``, so the vertices of the control box
    cover all admissible controls.  With constant input fields only the
    drift Jacobian is sampled.
    """
    M = _check_spd(M)
    if not beta > 0:
        raise ValueError("beta must be positive")
    if region.n != system.n:
        raise ValueError("region dimension does not match the system")
    if system.constant_g:
        fields, controls = [system.f0], [None]
    else:
        controls = system.control_vertices()
        fields = [system.frozen_field(u) for u in controls]
    pts = region.points()

    worst, worst_pt, worst_u, failures = -np.inf, None, None, 0
    for fld, u in zip(fields, controls):

        def chunk(p, fld=fld):
            J, bad = _field_jacobian(fld, p)
            lam = np.full(p.shape[1], np.nan)
            ok = np.all(np.isfinite(J), axis=(0, 1))
            if np.any(ok):
                lam[ok] = _max_sym_eig(M, J[:, :, ok])
            return lam, bad

        parts = _map_chunks(chunk, pts, threads)
        lam = np.concatenate([p[0] for p in parts])
        failures += sum(p[1] for p in parts)
        if np.all(np.isnan(lam)):
            continue
        k = int(np.nanargmax(lam))
        if lam[k] > worst:
            worst, worst_pt, worst_u = float(lam[k]), pts[:, k].copy(), u
    if failures:
        log.warning("contraction_check: %d samples outside the domain", failures)
    return ContractionCertificate(
        metric_M=M,
        beta=float(beta),
        region=region,
        worst_eigenvalue=worst + float(beta),
        samples_checked=pts.shape[1],
        vertex_controls_checked=len(controls) if controls[0] is not None else 0,
        worst_point=worst_pt,
        worst_control=None if worst_u is None else np.asarray(worst_u),
        u_independent=controls[0] is None,
        domain_failures=failures,
    )


def max_beta(system, M, region: BoxRegion, threads: int = 1) -> float:
    """Largest ``beta`` for which the sampled certificate holds (may be <= 0).

    The eigenvalues of ``S + beta I`` are those of ``S`` shifted by ``beta``,
    so the answer is ``-max lambda_max(M J + J^T M)`` directly.
    """
    cert = contraction_check(system, M, 1.0, region, threads)
    return -(cert.worst_eigenvalue - 1.0)


# -- attraction ------------------------------------------------------------------

@dataclass
class AttractivityResult:
    x0: np.ndarray
    distances: np.ndarray  # per period, index 0 is the start
    poincare: np.ndarray

    @property
    def ratios(self) -> np.ndarray:
        d = self.distances
        with np.errstate(divide="ignore", invalid="ignore"):
            return d[1:] / d[:-1]


def attractivity_probe(
    system,
    schedule: SwitchingSchedule,
    x0_list: Sequence,
    n_periods: int,
    x_star,
    metric=None,
    tol: ToleranceConfig | None = None,
) -> list:
    """Distance of ``x(k tau)`` to the periodic point ``x_star`` for ``k = 0..n_periods``.

    Distances are Euclidean, or ``sqrt(e^T M e)`` when a metric is given.
    """
    x_star = np.asarray(x_star, dtype=float)
    W = None if metric is None else _check_spd(metric)
    out = []
    for x0 in x0_list:
        traj = simulate_periods(system, schedule, x0, n_periods, tol)
        e = traj.poincare - x_star
        if W is None:
            d = np.linalg.norm(e, axis=1)
        else:
            d = np.sqrt(np.einsum("ki,ij,kj->k", e, W, e))
        out.append(AttractivityResult(np.asarray(x0, dtype=float), d, traj.poincare))
    return out
