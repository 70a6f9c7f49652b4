"""Control-affine systems: the two reactor models and synthetic oracles.

Parameter sets for the built-in reactors live in ``data/*.toml`` and are read
through :func:`load_model`; nothing numeric is hard-coded here.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from itertools import product
from pathlib import Path
from typing import Sequence

import numpy as np

from .flow import SwitchingSchedule
from .jets import exp
from .lie import VectorField, jacobian
from .units import Quantity, unit

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

MODEL_SCHEMA_VERSION = 1
BUILTIN_MODELS = ("cstr2", "cstr3")


@dataclass(frozen=True)
class ControlAffineSystem:
    """``x' = f0(x) + sum_j u_j g_j(x)`` with box constraints on ``u``."""

    name: str
    f0: VectorField
    g: tuple
    control_box: np.ndarray  # (m, 2) rows [u_min, u_max]
    domain_box: np.ndarray | None = None  # (n, 2), open bounds
    state_labels: tuple = ()
    control_labels: tuple = ()
    state_units: tuple = ()
    control_units: tuple = ()
    params: object = None

    def __post_init__(self):
        g = tuple(self.g)
        object.__setattr__(self, "g", g)
        box = np.asarray(self.control_box, dtype=float).reshape(len(g), 2)
        if np.any(~np.isfinite(box)) or np.any(box[:, 0] > box[:, 1]):
            raise ValueError("control box must be finite with u_min <= u_max")
        object.__setattr__(self, "control_box", box)
        if any(gj.dim != self.f0.dim for gj in g):
            raise ValueError("all fields must share the state dimension")

    @property
    def n(self) -> int:
        return self.f0.dim

    @property
    def m(self) -> int:
        return len(self.g)

    @property
    def constant_g(self) -> bool:
        return all(gj.constant for gj in self.g)

    @property
    def u_min(self) -> np.ndarray:
        return self.control_box[:, 0]

    @property
    def u_max(self) -> np.ndarray:
        return self.control_box[:, 1]

    def frozen_field(self, u, name: str = "") -> VectorField:
        """``f0 + sum_j u_j g_j`` for a constant control value ``u``."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if u.shape != (self.m,):
            raise ValueError(f"control must have {self.m} entries")
        f0, g = self.f0, self.g
        active = [(float(uj), gj) for uj, gj in zip(u, g) if uj != 0.0]

        def f(x):
            out = list(f0.func(x))
            for uj, gj in active:
                gv = gj.func(x)
                out = [o + uj * c for o, c in zip(out, gv)]
            return out

        return VectorField(self.n, f, domain_box=self.domain_box, name=name or f"f(u={u.tolist()})")

    def rhs(self, x, u) -> np.ndarray:
        return self.frozen_field(u)(x)

    def control_vertices(self) -> list:
        return [np.array(v) for v in product(*[tuple(r) for r in self.control_box])]

    def state_jacobian(self, x, u=None) -> np.ndarray:
        """``d f(x, u) / dx``; ``u`` may be omitted when the g's are constant."""
        if u is None:
            if not self.constant_g:
                raise ValueError("control needed: input fields are state dependent")
            return jacobian(self.f0, x)
        return jacobian(self.frozen_field(u), x)

    def symmetric_bang_bang(self, tau: float) -> SwitchingSchedule:
        """Half period at ``u_max``, half at ``u_min``."""
        return SwitchingSchedule(tau, (0.0, 0.5, 1.0), (tuple(self.u_max), tuple(self.u_min)))


def _const(vec, dim, name):
    return VectorField.constant_field(np.asarray(vec, dtype=float).reshape(dim), name=name)


@dataclass(frozen=True)
class Cstr2Params:
    n_bar: float
    phi1: float
    phi2: float
    k1: float
    k2: float
    kappa: float
    u1_max: float
    u2_max: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")


@dataclass(frozen=True)
class Cstr3Params:
    F: float
    V: float
    R: float
    k10: float
    k20: float
    E1: float
    E2: float
    dH1: float
    dH2: float
    rho_cp: float
    u1_ref: float
    u2_ref: float
    u1_amp: float
    u2_amp: float

    def __post_init__(self):
        for name in ("F", "V", "R", "k10", "k20", "E1", "E2", "rho_cp", "u1_ref", "u2_ref"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.dH1 >= 0 or self.dH2 >= 0:
            raise ValueError("reaction enthalpies must be negative (exothermic)")
        if self.u1_amp < 0 or self.u2_amp < 0:
            raise ValueError("modulation amplitudes must be non-negative")

    UNITS = {
        "F": "L/min", "V": "L", "R": "J/(mol*K)", "k10": "1/min", "k20": "1/min",
        "E1": "J/mol", "E2": "J/mol", "dH1": "J/mol", "dH2": "J/mol",
        "rho_cp": "J/(L*K)", "u1_ref": "mol/L", "u2_ref": "K", "u1_amp": "mol/L", "u2_amp": "K",
    }


def cstr2_drift(p: Cstr2Params):
    ek = math.exp(-p.kappa)

    def f0(x):
        x1, x2 = x[0], x[1]
        # k e^-kappa - k (x1+1)^n e^(-kappa/(x2+1)), regrouped to avoid cancellation
        rate = 1.0 - (x1 + 1.0) ** p.n_bar * exp(p.kappa * x2 / (x2 + 1.0))
        return [-p.phi1 * x1 + p.k1 * ek * rate, -p.phi2 * x2 + p.k2 * ek * rate]

    return f0


def build_cstr2(p: Cstr2Params) -> ControlAffineSystem:
    domain = np.array([[-1.0, np.inf], [-1.0, np.inf]])
    f0 = VectorField(2, cstr2_drift(p), domain_box=domain, name="f0")
    return ControlAffineSystem(
        name="cstr2",
        f0=f0,
        g=(_const([1, 0], 2, "g1"), _const([0, 1], 2, "g2")),
        control_box=[[-p.u1_max, p.u1_max], [-p.u2_max, p.u2_max]],
        domain_box=domain,
        state_labels=("x1", "x2"),
        control_labels=("u1", "u2"),
        state_units=("1", "1"),
        control_units=("1", "1"),
        params=p,
    )


def cstr3_drift(p):
    """Drift of the three-state reactor; ``p`` may carry :class:`Quantity` values."""

    def f0(x):
        x1, x2, x3 = x[0], x[1], x[2]
        dil = p.F / p.V
        r1 = p.k10 * exp(-p.E1 / (p.R * x3))
        r2 = p.k20 * exp(-p.E2 / (p.R * x3))
        return [
            -((dil + r1) * x1),
            -((dil + r2) * x2 - r1 * x1),
            -(dil * x3 + p.dH1 * r1 * x1 / p.rho_cp + p.dH2 * r2 * x2 / p.rho_cp),
        ]

    return f0


def audit_cstr3_units(p: Cstr3Params) -> list:
    """Evaluate the drift on unit-tagged values; return the component units.

    Raises :class:`~bchd_orbit.units.UnitError` on any inconsistent sum or a
    dimensional exponent.
    """
    tagged = type("TaggedParams", (), {k: Quantity(getattr(p, k), unit(u)) for k, u in Cstr3Params.UNITS.items()})
    x = [Quantity(0.4, unit("mol/L")), Quantity(0.6, unit("mol/L")), Quantity(357.0, unit("K"))]
    out = cstr3_drift(tagged)(x)
    expected = [unit("mol/(L*min)"), unit("mol/(L*min)"), unit("K/min")]
    for i, (q, e) in enumerate(zip(out, expected)):
        if q.dims != e:
            raise ValueError(f"component {i + 1} of the drift has units {q.dims}, expected {e}")
    return [q.dims for q in out]


def build_cstr3(p: Cstr3Params, audit_units: bool = True) -> ControlAffineSystem:
    if audit_units:
        audit_cstr3_units(p)
    domain = np.array([[-np.inf, np.inf], [-np.inf, np.inf], [0.0, np.inf]])
    f0 = VectorField(3, cstr3_drift(p), domain_box=domain, name="f0")
    dil = p.F / p.V
    return ControlAffineSystem(
        name="cstr3",
        f0=f0,
        g=(_const([dil, 0, 0], 3, "g1"), _const([0, 0, dil], 3, "g2")),
        control_box=[
            [p.u1_ref - p.u1_amp, p.u1_ref + p.u1_amp],
            [p.u2_ref - p.u2_amp, p.u2_ref + p.u2_amp],
        ],
        domain_box=domain,
        state_labels=("cA", "cB", "T"),
        control_labels=("cA_in", "T_in"),
        state_units=("mol/L", "mol/L", "K"),
        control_units=("mol/L", "K"),
        params=p,
    )


def synthetic_linear(A, B, control_box=None, name: str = "linear") -> ControlAffineSystem:
    """``x' = A x + B u``; every quantity has a closed form."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    if B.ndim == 1:
        B = B[:, None]
    if B.shape[0] != A.shape[0]:
        raise ValueError(f"B has {B.shape[0]} rows, A has {A.shape[0]}")
    n, m = B.shape
    if control_box is None:
        control_box = [[-1.0, 1.0]] * m
    return ControlAffineSystem(
        name=name,
        f0=VectorField.linear(A, name="f0"),
        g=tuple(_const(B[:, j], n, f"g{j + 1}") for j in range(m)),
        control_box=control_box,
        state_labels=tuple(f"x{i + 1}" for i in range(n)),
        control_labels=tuple(f"u{j + 1}" for j in range(m)),
    )


def harmonic_oscillator() -> VectorField:
    """``(x2, -x1)``: divergence-free, every orbit closed."""
    return VectorField(2, lambda x: [x[1], -x[0]], name="harmonic")


# -- model files -------------------------------------------------------------------

_PARAM_TYPES = {"cstr2": Cstr2Params, "cstr3": Cstr3Params}


def _read_toml(ref) -> dict:
    if isinstance(ref, str) and ref in BUILTIN_MODELS:
        text = resources.files("bchd_orbit.data").joinpath(f"{ref}.toml").read_text(encoding="utf-8")
        return tomllib.loads(text)
    return tomllib.loads(Path(ref).read_text(encoding="utf-8"))


def model_document(ref) -> dict:
    doc = _read_toml(ref)
    version = doc.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema_version {version!r}")
    for section in ("system", "params", "controls"):
        if section not in doc:
            raise ValueError(f"model file lacks the [{section}] section")
    return doc


def params_from_document(doc: dict):
    kind = doc["system"].get("kind")
    if kind not in _PARAM_TYPES:
        raise ValueError(f"unknown model kind {kind!r}")
    cls = _PARAM_TYPES[kind]
    p = dict(doc["params"])
    if kind == "cstr2":
        lo, hi = doc["controls"]["u_min"], doc["controls"]["u_max"]
        if any(abs(a + b) > 1e-15 for a, b in zip(lo, hi)):
            raise ValueError("cstr2 control box must be symmetric")
        p["u1_max"], p["u2_max"] = hi
    names = {f.name for f in fields(cls)}
    unknown = set(p) - names
    missing = names - set(p)
    if unknown or missing:
        raise ValueError(f"{kind} params: unknown {sorted(unknown)}, missing {sorted(missing)}")
    return cls(**{k: float(v) for k, v in p.items()})


def load_model(ref="cstr2", **overrides) -> ControlAffineSystem:
    """Build a system from a built-in name or a model file path.

    Keyword overrides replace individual parameters (e.g. ``k1=6e7``).
    """
    doc = model_document(ref)
    p = params_from_document(doc)
    if overrides:
        p = replace(p, **overrides)
    if isinstance(p, Cstr2Params):
        system = build_cstr2(p)
    else:
        system = build_cstr3(p)
        box = np.array([doc["controls"]["u_min"], doc["controls"]["u_max"]], dtype=float).T
        if not np.allclose(box, system.control_box):
            raise ValueError("cstr3 control box disagrees with reference +/- amplitude")
    if "domain" in doc:
        lower = np.asarray(doc["domain"]["lower"], dtype=float)
        upper = np.asarray(doc["domain"]["upper"], dtype=float)
        if lower.shape != (system.n,) or upper.shape != (system.n,):
            raise ValueError("domain bounds have the wrong length")
    return system


def builtin_cstr2() -> ControlAffineSystem:
    return load_model("cstr2")


def builtin_cstr3() -> ControlAffineSystem:
    return load_model("cstr3")


def reference_control(system: ControlAffineSystem) -> np.ndarray:
    """Mid-point of the control box (the steady operating input)."""
    return system.control_box.mean(axis=1)
