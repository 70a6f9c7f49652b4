"""Command-line front end: ``bchd-orbit {series,find,certify,simulate,reproduce-paper}``.

Every command reads a run configuration (TOML, ``schema_version = 1``) and
writes plain-text reports and CSV files into the output directory.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np
import tomli_w

from . import __version__
from .analysis import BoxRegion, contraction_check, dulac_scan, solve_lyapunov, lyapunov_residual, attractivity_probe
from .bchd import METHODS, build_series, canonicalize, coefficient_checksum, dump_series
from .flow import IntegrationError, SwitchingSchedule, ToleranceConfig, simulate_periods
from .models import ControlAffineSystem, load_model, reference_control
from .solve import SolverConfig, refine_chain, reports_to_csv, solve_shooting, steady_state

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger("bchd_orbit")

RUN_SCHEMA_VERSION = 1
PIPELINES = ("series", "find", "certify", "simulate")
SCENARIOS = ("symmetric-bang-bang", "explicit")
BUNDLED_CONFIGS = ("cstr2", "cstr3")

EXIT_OK, EXIT_FAILURE, EXIT_INVALID_CERTIFICATE = 0, 1, 2


class ConfigError(ValueError):
    pass


# -- configuration ---------------------------------------------------------------

@dataclass
class ScheduleConfig:
    tau: float = 1.0
    scenario: str = "symmetric-bang-bang"
    breakpoints: list = field(default_factory=list)
    controls: list = field(default_factory=list)


@dataclass
class SeriesConfig:
    N: int = 2
    order: int = 4
    method: str = "auto"
    # canonical form makes dumps from different methods comparable byte for byte
    canonical: bool = True


@dataclass
class FindConfig:
    orders: list = field(default_factory=lambda: [1, 2, 3, 4])
    # a point, or "steady" for the equilibrium under the mid-box control
    x_guess: object = "steady"
    polish: bool = True


@dataclass
class DulacConfig:
    enabled: bool = False
    orders: list = field(default_factory=lambda: [2, 3, 4])
    lower: list = field(default_factory=list)
    upper: list = field(default_factory=list)
    grid: int = 200


@dataclass
class ContractionConfig:
    enabled: bool = False
    # "lyapunov" (solve M A + A^T M = -I at the steady state) or an explicit matrix
    metric: object = "lyapunov"
    beta: float = 0.1
    delta: list = field(default_factory=list)
    relative: bool = True
    grid: int = 20


@dataclass
class SimulateConfig:
    # a list of points, or "shooting" for the periodic point of each tau
    starts: object = "shooting"
    taus: list = field(default_factory=list)
    periods: int = 10
    samples_per_segment: int = 20


@dataclass
class RunConfig:
    model: str = "cstr2"
    pipelines: list = field(default_factory=lambda: ["find"])
    output_dir: str = "out"
    seed: int = 0
    steady_guess: list | None = None
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    series: SeriesConfig = field(default_factory=SeriesConfig)
    find: FindConfig = field(default_factory=FindConfig)
    dulac: DulacConfig = field(default_factory=DulacConfig)
    contraction: ContractionConfig = field(default_factory=ContractionConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    integrator: ToleranceConfig = field(default_factory=ToleranceConfig)
    schema_version: int = RUN_SCHEMA_VERSION
    base_dir: str = field(default=".", compare=False)

    def validate(self) -> None:
        if self.schema_version != RUN_SCHEMA_VERSION:
            raise ConfigError(f"unsupported run schema_version {self.schema_version!r}")
        bad = [p for p in self.pipelines if p not in PIPELINES]
        if bad:
            raise ConfigError(f"unknown pipelines {bad}; choose from {PIPELINES}")
        if not self.schedule.tau > 0:
            raise ConfigError("schedule.tau must be positive")
        if self.schedule.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.schedule.scenario!r}")
        if self.series.method not in METHODS + ("auto",):
            raise ConfigError(f"unknown series method {self.series.method!r}")
        if not self.find.orders:
            raise ConfigError("find.orders must be non-empty")
        if any(t <= 0 for t in self.simulate.taus):
            raise ConfigError("simulate.taus must be positive")
        if self.simulate.periods < 1:
            raise ConfigError("simulate.periods must be >= 1")


_SECTIONS = {
    "schedule": ScheduleConfig,
    "series": SeriesConfig,
    "find": FindConfig,
    "dulac": DulacConfig,
    "contraction": ContractionConfig,
    "simulate": SimulateConfig,
    "solver": SolverConfig,
    "integrator": ToleranceConfig,
}


def _section(cls, data: dict, name: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"[{name}] has unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def config_from_dict(doc: dict, base_dir: str = ".") -> RunConfig:
    doc = dict(doc)
    kwargs = {"base_dir": base_dir}
    for name, cls in _SECTIONS.items():
        if name in doc:
            kwargs[name] = _section(cls, doc.pop(name), name)
    top = {f.name for f in fields(RunConfig)} - set(_SECTIONS) - {"base_dir"}
    unknown = set(doc) - top
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    kwargs.update(doc)
    cfg = RunConfig(**kwargs)
    cfg.validate()
    return cfg


def _drop_none(obj):
    if isinstance(obj, dict):
        return {k: _drop_none(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, (list, tuple)):
        return [_drop_none(v) for v in obj]
    return obj


def config_to_dict(cfg: RunConfig) -> dict:
    doc = asdict(cfg)
    doc.pop("base_dir")
    return _drop_none(doc)


def load_config(ref) -> RunConfig:
    """Read a run configuration from a path or a bundled name (``cstr2``, ``cstr3``)."""
    if isinstance(ref, str) and ref in BUNDLED_CONFIGS:
        text = resources.files("bchd_orbit.data").joinpath(f"run_{ref}.toml").read_text(encoding="utf-8")
        base = "."
    else:
        path = Path(ref)
        text = path.read_text(encoding="utf-8")
        base = str(path.parent)
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {ref}: {exc}") from exc
    return config_from_dict(doc, base)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(tomli_w.dumps(config_to_dict(cfg)), encoding="utf-8")


# -- helpers -----------------------------------------------------------------------

def resolve_model(cfg: RunConfig) -> ControlAffineSystem:
    ref = cfg.model
    if ref not in ("cstr2", "cstr3"):
        ref = str(Path(cfg.base_dir) / ref)
    return load_model(ref)


def make_schedule(cfg: RunConfig, system: ControlAffineSystem, tau: float | None = None) -> SwitchingSchedule:
    s = cfg.schedule
    tau = s.tau if tau is None else tau
    if s.scenario == "symmetric-bang-bang":
        sched = system.symmetric_bang_bang(tau)
    else:
        sched = SwitchingSchedule(tau, tuple(s.breakpoints), tuple(tuple(u) for u in s.controls))
    try:
        sched.check_controls(system.control_box)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return sched


def _steady(system, cfg: RunConfig):
    """Equilibrium under the mid-box control, started from ``steady_guess``."""
    guess = np.zeros(system.n) if cfg.steady_guess is None else np.asarray(cfg.steady_guess, dtype=float)
    rep = steady_state(system, reference_control(system), guess, cfg.solver)
    if not rep.converged:
        raise RuntimeError(f"steady state not found: {rep.message}")
    return rep


def _x_guess(system, cfg: RunConfig):
    g = cfg.find.x_guess
    if isinstance(g, str):
        if g == "steady":
            return _steady(system, cfg).x_star
        if g == "zero":
            return np.zeros(system.n)
        raise ConfigError(f"unknown find.x_guess {g!r}")
    return np.asarray(g, dtype=float)


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)
    return path


# -- commands ----------------------------------------------------------------------

def cmd_series(cfg: RunConfig, out: Path) -> int:
    s = cfg.series
    series = build_series(s.N, s.order, s.method)
    if s.canonical:
        series = canonicalize(series)
    _write(out, f"series_N{s.N}_M{s.order}_{s.method}.txt", dump_series(series))
    print(f"series N={s.N} order={s.order} method={s.method} terms={len(series)} checksum={coefficient_checksum(series)}")
    return EXIT_OK


def cmd_find(cfg: RunConfig, out: Path) -> int:
    system = resolve_model(cfg)
    sched = make_schedule(cfg, system)
    x0 = _x_guess(system, cfg)
    reports = refine_chain(system, sched, cfg.find.orders, cfg.solver, x0, polish=cfg.find.polish, tol=cfg.integrator)
    _write(out, "equilibria.txt", "\n".join(r.to_text() for r in reports))
    _write(out, "equilibria.csv", reports_to_csv(reports))
    for r in reports:
        coords = ", ".join(f"{v:.7g}" for v in r.x_star)
        print(f"{r.label:>9}: x* = ({coords})  |res| = {r.residual_norm:.2e}  converged={r.converged}")
    return EXIT_OK if all(r.converged for r in reports) else EXIT_FAILURE


def _dulac(cfg: RunConfig, system, out: Path, threads: int) -> bool:
    from .solve import bchd_field

    d = cfg.dulac
    sched = make_schedule(cfg, system)
    lower = d.lower or [-0.999] * system.n
    upper = d.upper or [0.999] * system.n
    region = BoxRegion(lower, upper, d.grid)
    ok = True
    for M in d.orders:
        rep = dulac_scan(bchd_field(system, sched, M), region, threads=threads)
        rep.label = f"M={M}"
        _write(out, f"dulac_M{M}.txt", rep.to_text())
        _write(out, f"dulac_M{M}.csv", rep.samples_csv())
        sign = "negative" if rep.rho_sign < 0 else "positive"
        print(f"divergence M={M}: uniform={rep.sign_uniform} sign={sign} certified={rep.certified} "
              f"range=[{rep.min_divergence:.4g}, {rep.max_divergence:.4g}]")
        ok &= rep.certified
    return ok


def _contraction(cfg: RunConfig, system, out: Path, threads: int) -> bool:
    c = cfg.contraction
    xbar = _steady(system, cfg).x_star
    if isinstance(c.metric, str):
        if c.metric != "lyapunov":
            raise ConfigError(f"unknown contraction.metric {c.metric!r}")
        A = system.state_jacobian(xbar, reference_control(system))
        M = solve_lyapunov(A)
        _write(out, "lyapunov.txt", "residual=" + repr(lyapunov_residual(M, A)) + "\nM=" +
               ";".join(",".join(repr(float(v)) for v in row) for row in M) + "\n")
    else:
        M = np.asarray(c.metric, dtype=float)
    delta = c.delta or [0.1] * system.n
    region = BoxRegion.around(xbar, delta, c.grid, relative=c.relative)
    cert = contraction_check(system, M, c.beta, region, threads=threads)
    cert.label = system.name
    _write(out, "contraction.txt", cert.to_text())
    print(f"contraction: valid={cert.valid} worst eigenvalue={cert.worst_eigenvalue:.6g} samples={cert.samples_checked}")
    return cert.valid


def cmd_certify(cfg: RunConfig, out: Path, threads: int = 1) -> int:
    system = resolve_model(cfg)
    ok = True
    ran = False
    if cfg.dulac.enabled:
        ok &= _dulac(cfg, system, out, threads)
        ran = True
    if cfg.contraction.enabled:
        ok &= _contraction(cfg, system, out, threads)
        ran = True
    if not ran:
        raise ConfigError("certify needs [dulac] or [contraction] with enabled = true")
    return EXIT_OK if ok else EXIT_INVALID_CERTIFICATE


def _shooting_start(cfg: RunConfig, system, sched):
    x0 = _x_guess(system, cfg)
    reports = refine_chain(system, sched, cfg.find.orders, cfg.solver, x0, polish=True, tol=cfg.integrator)
    if not reports[-1].converged:
        raise RuntimeError(f"no periodic point for tau={sched.tau}: {reports[-1].message}")
    return reports[-1].x_star


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    system = resolve_model(cfg)
    sim = cfg.simulate
    taus = sim.taus or [cfg.schedule.tau]
    status = EXIT_OK
    poincare_rows = ["trajectory,tau,period," + ",".join(f"x{i + 1}" for i in range(system.n))]
    k = 0
    for tau in taus:
        sched = make_schedule(cfg, system, tau)
        if isinstance(sim.starts, str):
            if sim.starts != "shooting":
                raise ConfigError(f"unknown simulate.starts {sim.starts!r}")
            starts = [_shooting_start(cfg, system, sched)]
        else:
            starts = [np.asarray(s, dtype=float) for s in sim.starts]
        for x0 in starts:
            k += 1
            try:
                traj = simulate_periods(system, sched, x0, sim.periods, cfg.integrator, sim.samples_per_segment)
            except IntegrationError as exc:
                log.error("trajectory %d (tau=%g) failed: %s", k, tau, exc)
                _write(out, f"trajectory_{k}.error.txt", f"tau={tau!r}\nx0={list(map(float, x0))}\nerror={exc}\n")
                status = EXIT_FAILURE
                continue
            path = out / f"trajectory_{k}.csv"
            out.mkdir(parents=True, exist_ok=True)
            traj.to_csv(path)
            for p, xp in enumerate(traj.poincare):
                poincare_rows.append(f"{k},{tau!r},{p}," + ",".join(repr(float(v)) for v in xp))
            print(f"trajectory {k}: tau={tau:g} start={np.round(x0, 6).tolist()} end={np.round(traj.final, 6).tolist()}")
    _write(out, "poincare.csv", "\n".join(poincare_rows) + "\n")
    return status


def _combine(codes) -> int:
    if EXIT_FAILURE in codes:
        return EXIT_FAILURE
    return max(codes, default=EXIT_OK)


def cmd_reproduce(out: Path, threads: int = 1) -> int:
    """Both case studies end to end: chains, shooting, scans, certificates, attraction."""
    codes = []
    summary = []
    for name in BUNDLED_CONFIGS:
        cfg = load_config(name)
        sub = out / name
        print(f"== {name} ==")
        stage = [cmd_find(cfg, sub)]
        if cfg.dulac.enabled or cfg.contraction.enabled:
            stage.append(cmd_certify(cfg, sub, threads))
        if "simulate" in cfg.pipelines:
            stage.append(cmd_simulate(cfg, sub))
        if name == "cstr3":
            stage.append(_attraction(cfg, sub))
        codes.append(_combine(stage))
        summary.append(f"{name}: exit={codes[-1]}")
    _write(out, "summary.txt", "\n".join(summary) + "\n")
    return _combine(codes)


def _attraction(cfg: RunConfig, out: Path) -> int:
    system = resolve_model(cfg)
    sched = make_schedule(cfg, system)
    rep = solve_shooting(system, sched, _x_guess(system, cfg), cfg.solver, cfg.integrator)
    if not rep.converged:
        return EXIT_FAILURE
    metric = cfg.contraction.metric
    W = None if isinstance(metric, str) else np.asarray(metric, dtype=float)
    start = [0.0, 0.0, 350.0]
    res = attractivity_probe(system, sched, [start], 20, rep.x_star, metric=W, tol=cfg.integrator)[0]
    rows = ["period,distance"] + [f"{p},{d!r}" for p, d in enumerate(res.distances)]
    _write(out, "attraction.csv", "\n".join(rows) + "\n")
    print(f"attraction from {tuple(start)}: distance after 20 periods = {res.distances[-1]:.3e}")
    return EXIT_OK


# -- entry point -----------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bchd-orbit", description="Periodic orbits of bang-bang controlled systems via Lie series.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("series", "find", "certify", "simulate", "reproduce-paper"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="run configuration file, or a bundled name (cstr2, cstr3)")
        sp.add_argument("--out", default=None, help="output directory (default: output_dir from the config)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for grid scans")
        sp.add_argument("--order", type=int, default=None, help="series order M (find: chain 1..M)")
        sp.add_argument("--method", choices=METHODS + ("auto",), default=None)
        if name == "series":
            sp.add_argument("--N", type=int, default=None, help="number of switching intervals")
            sp.add_argument("--raw", action="store_true", help="dump the series as built, not in canonical form")
    return p


def _setup_logging():
    level = os.environ.get("BCHD_ORBIT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = _parser().parse_args(argv)
    try:
        if args.command == "reproduce-paper":
            return cmd_reproduce(Path(args.out or "case-studies"), args.threads)
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.order is not None:
            cfg.series = replace(cfg.series, order=args.order)
            cfg.find = replace(cfg.find, orders=list(range(1, args.order + 1)))
        if args.method is not None:
            cfg.series = replace(cfg.series, method=args.method)
        if getattr(args, "N", None) is not None:
            cfg.series = replace(cfg.series, N=args.N)
        if getattr(args, "raw", False):
            cfg.series = replace(cfg.series, canonical=False)
        cfg.validate()
        out = Path(args.out or cfg.output_dir)
        if args.command == "series":
            return cmd_series(cfg, out)
        if args.command == "find":
            return cmd_find(cfg, out)
        if args.command == "certify":
            return cmd_certify(cfg, out, args.threads)
        return cmd_simulate(cfg, out)
    except (ConfigError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
