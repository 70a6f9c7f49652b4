"""Just enough dimensional analysis to audit model right-hand sides."""

from __future__ import annotations

import math
import re

BASE = ("mol", "L", "min", "K", "J")
DIMENSIONLESS = (0,) * len(BASE)


class UnitError(ValueError):
    pass


def _combine(a, b, sign=1):
    return tuple(x + sign * y for x, y in zip(a, b))


def unit(text: str) -> tuple:
    """Parse ``"J/(mol*K)"``-style unit strings into base-dimension exponents."""
    tokens = re.findall(r"[A-Za-z]+|\d+|[*/()]", text.replace(" ", ""))
    pos = 0

    def factor():
        nonlocal pos
        tok = tokens[pos]
        pos += 1
        if tok == "(":
            d = expr()
            if tokens[pos] != ")":
                raise UnitError(f"unbalanced parentheses in {text!r}")
            pos += 1
            return d
        if tok == "1":
            return DIMENSIONLESS
        if tok not in BASE:
            raise UnitError(f"unknown unit {tok!r}")
        d = [0] * len(BASE)
        d[BASE.index(tok)] = 1
        return tuple(d)

    def expr():
        nonlocal pos
        d = factor()
        while pos < len(tokens) and tokens[pos] in "*/":
            op = tokens[pos]
            pos += 1
            d = _combine(d, factor(), 1 if op == "*" else -1)
        return d

    result = expr()
    if pos != len(tokens):
        raise UnitError(f"trailing tokens in unit {text!r}")
    return result


class Quantity:
    __slots__ = ("value", "dims")

    def __init__(self, value, dims=DIMENSIONLESS):
        self.value = value
        self.dims = tuple(dims)

    @staticmethod
    def _wrap(other):
        return other if isinstance(other, Quantity) else Quantity(other)

    def _same(self, other, op):
        if self.dims != other.dims:
            raise UnitError(f"cannot {op} {self.dims} and {other.dims}")

    def __add__(self, other):
        other = self._wrap(other)
        self._same(other, "add")
        return Quantity(self.value + other.value, self.dims)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._wrap(other)
        self._same(other, "subtract")
        return Quantity(self.value - other.value, self.dims)

    def __rsub__(self, other):
        return self._wrap(other) - self

    def __neg__(self):
        return Quantity(-self.value, self.dims)

    def __mul__(self, other):
        other = self._wrap(other)
        return Quantity(self.value * other.value, _combine(self.dims, other.dims))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._wrap(other)
        return Quantity(self.value / other.value, _combine(self.dims, other.dims, -1))

    def __rtruediv__(self, other):
        return self._wrap(other) / self

    def __pow__(self, p):
        return Quantity(self.value**p, tuple(p * d for d in self.dims))

    def exp(self):
        if self.dims != DIMENSIONLESS:
            raise UnitError(f"exp of a dimensional quantity {self.dims}")
        return Quantity(math.exp(self.value))

    def __repr__(self):
        return f"Quantity({self.value!r}, {self.dims})"
