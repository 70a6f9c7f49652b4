"""Truncated multivariate Taylor arithmetic (forward-mode jets).

A :class:`Jet` holds the Taylor coefficients of a scalar function of ``n``
seed variables around a base point, truncated at total degree ``d``.
Coefficients live in an array of shape ``(ncoef, *batch)`` so that a whole
grid of base points is propagated at once.  Monomials are stored in graded
order: index 0 is the constant term and indices ``1..n`` are the linear
terms ``h_0..h_{n-1}``; truncating a jet to a lower degree is a slice.
"""

from __future__ import annotations

from functools import lru_cache
from itertools import combinations_with_replacement
from math import factorial

import numpy as np


class DomainError(ValueError):
    """A field produced a non-finite value (point outside its domain)."""


class JetSpace:
    """Index tables for jets in ``n`` variables truncated at degree ``d``."""

    def __init__(self, n: int, d: int):
        if n < 1 or d < 0:
            raise ValueError(f"invalid jet space n={n}, d={d}")
        self.n = n
        self.d = d
        exps = []
        for deg in range(d + 1):
            for combo in combinations_with_replacement(range(n), deg):
                e = [0] * n
                for v in combo:
                    e[v] += 1
                exps.append(tuple(e))
        self.exponents = np.array(exps, dtype=int).reshape(len(exps), n)
        self.degrees = self.exponents.sum(axis=1)
        self.ncoef = len(exps)
        index = {e: k for k, e in enumerate(exps)}
        self._index = index

        pairs = []
        for i, a in enumerate(exps):
            for j, b in enumerate(exps):
                if sum(a) + sum(b) <= d:
                    k = index[tuple(x + y for x, y in zip(a, b))]
                    pairs.append((k, i, j))
        pairs.sort()
        k_arr = np.array([p[0] for p in pairs])
        self._left = np.array([p[1] for p in pairs])
        self._right = np.array([p[2] for p in pairs])
        # every monomial is hit at least by (alpha, 0), so reduceat is safe
        self._starts = np.searchsorted(k_arr, np.arange(self.ncoef))

        self._deriv = []
        for v in range(n):
            src, dst, fac = [], [], []
            for k, e in enumerate(exps):
                if e[v] > 0:
                    lowered = list(e)
                    lowered[v] -= 1
                    src.append(k)
                    dst.append(index[tuple(lowered)])
                    fac.append(float(e[v]))
            self._deriv.append((np.array(src, dtype=int), np.array(dst, dtype=int), np.array(fac)))

    def index(self, exponent) -> int:
        return self._index[tuple(exponent)]

    def ncoef_upto(self, order: int) -> int:
        """Number of monomials of total degree <= ``order``."""
        if order > self.d:
            raise ValueError(f"order {order} exceeds jet degree {self.d}")
        return int(np.count_nonzero(self.degrees <= order))

    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Truncated product of coefficient arrays (leading axis = monomial)."""
        prod = a[self._left] * b[self._right]
        return np.add.reduceat(prod, self._starts, axis=0)

    def deriv(self, a: np.ndarray, var: int) -> np.ndarray:
        """Partial derivative along seed variable ``var``.

        The top-degree coefficients of the result are zero, i.e. the result is
        valid only up to degree ``d - 1``.
        """
        src, dst, fac = self._deriv[var]
        out = np.zeros_like(a)
        if src.size:
            shape = (-1,) + (1,) * (a.ndim - 1)
            out[dst] = a[src] * fac.reshape(shape)
        return out

    def constant(self, value, batch_shape=()) -> np.ndarray:
        c = np.zeros((self.ncoef,) + tuple(batch_shape))
        c[0] = value
        return c

    def seed(self, x: np.ndarray) -> list["Jet"]:
        """Jets for the coordinate functions around base point(s) ``x``.

        ``x`` has shape ``(n, *batch)``.
        """
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n:
            raise ValueError(f"expected a point of dimension {self.n}, got {x.shape[0]}")
        out = []
        for v in range(self.n):
            c = np.zeros((self.ncoef,) + x.shape[1:])
            c[0] = x[v]
            if self.d >= 1:
                c[1 + v] = 1.0
            out.append(Jet(self, c))
        return out


@lru_cache(maxsize=None)
def jet_space(n: int, d: int) -> JetSpace:
    return JetSpace(n, d)


class Jet:
    """Scalar truncated Taylor expansion; supports + - * / ** and exp/log."""

    __slots__ = ("space", "c")
    # keep numpy scalars from swallowing jets into object arrays
    __array_ufunc__ = None

    def __init__(self, space: JetSpace, coeffs: np.ndarray):
        self.space = space
        self.c = coeffs

    @property
    def value(self) -> np.ndarray:
        return self.c[0]

    def _lift(self, other) -> np.ndarray:
        if isinstance(other, Jet):
            if other.space is not self.space:
                raise ValueError("jets from different spaces")
            return other.c
        c = np.zeros_like(self.c)
        c[0] = other
        return c

    def __add__(self, other):
        if isinstance(other, Jet):
            return Jet(self.space, self.c + self._lift(other))
        c = self.c.copy()
        c[0] = c[0] + other
        return Jet(self.space, c)

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.space, -self.c)

    def __pos__(self):
        return self

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            return Jet(self.space, self.space.mul(self.c, self._lift(other)))
        return Jet(self.space, self.c * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        return Jet(self.space, self.c / other)

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p):
        if isinstance(p, Jet):
            return (self.log() * p).exp()
        if float(p).is_integer() and p >= 0:
            return self._ipow(int(p))
        return self._series(_power_coeffs(float(p)))

    def __rpow__(self, base):
        return (self * np.log(base)).exp()

    def _ipow(self, k: int) -> "Jet":
        result = Jet(self.space, self.space.constant(1.0, self.c.shape[1:]))
        base = self
        while k:
            if k & 1:
                result = result * base
            k >>= 1
            if k:
                base = base * base
        return result

    def _series(self, coeff_fn) -> "Jet":
        """Compose with a univariate function given its scaled derivatives.

        ``coeff_fn(a0, d)`` returns ``[f(a0), f'(a0), f''(a0)/2!, ...]`` up to
        index ``d``; the nilpotent part of the jet is substituted into this
        Taylor polynomial.
        """
        a0 = self.c[0]
        coeffs = coeff_fn(a0, self.space.d)
        nil = self.c.copy()
        nil[0] = 0.0
        out = self.space.constant(0.0, self.c.shape[1:])
        out[0] = coeffs[0]
        power = nil
        for k in range(1, self.space.d + 1):
            out = out + coeffs[k] * power
            if k < self.space.d:
                power = self.space.mul(power, nil)
        return Jet(self.space, out)

    def exp(self) -> "Jet":
        def coeffs(a0, d):
            e = np.exp(a0)
            return [e / factorial(k) for k in range(d + 1)]

        return self._series(coeffs)

    def log(self) -> "Jet":
        def coeffs(a0, d):
            with np.errstate(divide="ignore", invalid="ignore"):
                out = [np.log(a0)]
                for k in range(1, d + 1):
                    out.append((-1.0) ** (k + 1) / (k * a0**k))
            return out

        return self._series(coeffs)

    def reciprocal(self) -> "Jet":
        def coeffs(a0, d):
            with np.errstate(divide="ignore", invalid="ignore"):
                return [(-1.0) ** k / a0 ** (k + 1) for k in range(d + 1)]

        return self._series(coeffs)

    def sqrt(self) -> "Jet":
        return self**0.5

    def sin(self) -> "Jet":
        def coeffs(a0, d):
            s, c = np.sin(a0), np.cos(a0)
            cycle = [s, c, -s, -c]
            return [cycle[k % 4] / factorial(k) for k in range(d + 1)]

        return self._series(coeffs)

    def cos(self) -> "Jet":
        def coeffs(a0, d):
            s, c = np.sin(a0), np.cos(a0)
            cycle = [c, -s, -c, s]
            return [cycle[k % 4] / factorial(k) for k in range(d + 1)]

        return self._series(coeffs)

    def __repr__(self):
        return f"Jet(n={self.space.n}, d={self.space.d}, value={self.c[0]!r})"


def _power_coeffs(p: float):
    def coeffs(a0, d):
        out = []
        binom = 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            for k in range(d + 1):
                out.append(binom * a0 ** (p - k))
                binom *= (p - k) / (k + 1)
        return out

    return coeffs


def _dispatch(name, np_fn):
    def fn(v):
        method = getattr(type(v), name, None)
        if method is not None:
            return method(v)
        return np_fn(v)

    fn.__name__ = name
    fn.__doc__ = f"``{name}`` for floats, arrays, jets and anything defining ``.{name}()``."
    return fn


exp = _dispatch("exp", np.exp)
log = _dispatch("log", np.log)
sqrt = _dispatch("sqrt", np.sqrt)
sin = _dispatch("sin", np.sin)
cos = _dispatch("cos", np.cos)
