"""Vector fields, Jacobians and nested Lie brackets evaluated with jets.

Bracket words are plain nested tuples: a leaf is a positive ``int`` naming a
generator (1-based, ``1`` means ``fields[0]``) and ``(left, right)`` is the
commutator ``[left, right]``.  The bracket convention is

    [X, Y](x) = dY(x) X(x) - dX(x) Y(x),

so that ``[L_X, L_Y] = L_[X,Y]`` for the Lie derivatives along the fields and
the flow of ``X`` followed by the flow of ``Y`` is ``exp(B(X, Y))``.
"""

from __future__ import annotations

import re
from functools import lru_cache
from typing import Callable, Sequence, Union

import numpy as np

from .jets import DomainError, Jet, JetSpace, jet_space

Word = Union[int, tuple]


class VectorField:
    """An evaluable vector field on R^n.

    ``func`` receives a list of ``n`` components (floats, arrays or
    :class:`~bchd_orbit.jets.Jet` objects) and returns ``n`` components.  It
    must only use arithmetic and the dispatching helpers in
    :mod:`bchd_orbit.jets` so that the same code serves plain evaluation and
    Taylor expansion.
    """

    def __init__(self, dim: int, func: Callable, domain_box=None, name: str = "", constant: bool = False):
        if dim < 1:
            raise ValueError("dimension must be positive")
        self.dim = dim
        self.func = func
        self.domain_box = None if domain_box is None else np.asarray(domain_box, dtype=float)
        self.name = name
        self.constant = constant

    def __repr__(self):
        return f"VectorField(dim={self.dim}, name={self.name!r})"

    def _check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[0] != self.dim:
            raise ValueError(f"{self.name or 'field'}: expected point of dimension {self.dim}, got shape {x.shape}")
        if self.domain_box is not None:
            box = self.domain_box.reshape((self.dim, 2) + (1,) * (x.ndim - 1))
            if not (np.all(x > box[:, 0]) and np.all(x < box[:, 1])):
                raise DomainError(f"{self.name or 'field'}: point outside the domain box")
        return x

    def __call__(self, x) -> np.ndarray:
        """Field value at ``x`` (shape ``(n,)`` or ``(n, *batch)``)."""
        x = self._check_point(x)
        with np.errstate(all="ignore"):
            out = self.func([x[i] for i in range(self.dim)])
        vals = np.empty(x.shape, dtype=float)
        for i in range(self.dim):
            vals[i] = _plain(out[i])
        if not np.all(np.isfinite(vals)):
            raise DomainError(f"{self.name or 'field'} is not finite at the given point(s)")
        return vals

    def taylor(self, x, order: int) -> np.ndarray:
        """Taylor coefficients of the field at ``x`` up to total degree ``order``.

        Returns an array of shape ``(ncoef, n, *batch)`` laid out as in
        ``jet_space(n, order)``.
        """
        x = self._check_point(x)
        space = jet_space(self.dim, order)
        with np.errstate(all="ignore"):
            out = self.func(space.seed(x))
        coeffs = np.zeros((space.ncoef, self.dim) + x.shape[1:])
        for i in range(self.dim):
            comp = out[i]
            if isinstance(comp, Jet):
                coeffs[:, i] = comp.c
            else:
                coeffs[0, i] = comp
        if not np.all(np.isfinite(coeffs)):
            raise DomainError(f"{self.name or 'field'} is not finite at the given point(s)")
        return coeffs

    @classmethod
    def constant_field(cls, vector, name: str = "const") -> "VectorField":
        v = np.asarray(vector, dtype=float)
        comps = [float(c) for c in v]
        return cls(len(comps), lambda x: comps, name=name, constant=True)

    @classmethod
    def linear(cls, A, name: str = "linear") -> "VectorField":
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("linear field needs a square matrix")
        n = A.shape[0]

        def f(x):
            out = []
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    if A[i, j] != 0.0:
                        acc = acc + A[i, j] * x[j]
                out.append(acc)
            return out

        return cls(n, f, name=name, constant=not np.any(A))


def _plain(comp):
    if isinstance(comp, Jet):
        return comp.value
    return comp


# -- bracket words -----------------------------------------------------------

def is_leaf(word: Word) -> bool:
    return isinstance(word, (int, np.integer))


@lru_cache(maxsize=None)
def word_length(word: Word) -> int:
    """Number of leaves."""
    if is_leaf(word):
        return 1
    return word_length(word[0]) + word_length(word[1])


@lru_cache(maxsize=None)
def word_depth(word: Word) -> int:
    """Nesting depth; a leaf has depth 0."""
    if is_leaf(word):
        return 0
    return 1 + max(word_depth(word[0]), word_depth(word[1]))


def word_letters(word: Word) -> tuple:
    """Leaf indices read left to right."""
    if is_leaf(word):
        return (int(word),)
    return word_letters(word[0]) + word_letters(word[1])


def right_nested(letters: Sequence) -> Word:
    """``[a1, [a2, ... [a_{k-1}, a_k]]]`` built from words or leaves."""
    if not letters:
        raise ValueError("empty word")
    w = letters[-1]
    for a in reversed(letters[:-1]):
        w = (a, w)
    return w


def word_str(word: Word, prefix: str = "f") -> str:
    if is_leaf(word):
        return f"{prefix}{int(word)}"
    return f"[{word_str(word[0], prefix)},{word_str(word[1], prefix)}]"


_TOKEN = re.compile(r"\s*(\[|\]|,|[A-Za-z_]*\d+)")


def parse_word(text: str) -> Word:
    """Inverse of :func:`word_str` (the generator prefix is ignored)."""
    tokens = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ValueError(f"cannot parse bracket word {text!r} at {pos}")
        tokens.append(m.group(1))
        pos = m.end()

    def parse(i):
        if i >= len(tokens):
            raise ValueError(f"unexpected end of bracket word {text!r}")
        tok = tokens[i]
        if tok == "[":
            left, i = parse(i + 1)
            if i >= len(tokens) or tokens[i] != ",":
                raise ValueError(f"expected ',' in {text!r}")
            right, i = parse(i + 1)
            if i >= len(tokens) or tokens[i] != "]":
                raise ValueError(f"expected ']' in {text!r}")
            return (left, right), i + 1
        digits = re.search(r"\d+$", tok)
        if not digits:
            raise ValueError(f"bad leaf {tok!r}")
        idx = int(digits.group())
        if idx < 1:
            raise ValueError("leaf indices start at 1")
        return idx, i + 1

    word, end = parse(0)
    if end != len(tokens):
        raise ValueError(f"trailing tokens in {text!r}")
    return word


def check_word(word: Word, n_generators: int) -> None:
    for k in word_letters(word):
        if not 1 <= k <= n_generators:
            raise IndexError(f"leaf index {k} outside 1..{n_generators}")


# -- evaluation ----------------------------------------------------------------

def bracket_taylor(space: JetSpace, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Taylor coefficients of ``[L, R] = dR L - dL R``.

    Inputs have shape ``(ncoef, n, *batch)``; the result is valid one degree
    lower than the inputs.
    """
    n = left.shape[1]
    d_right = np.stack([space.deriv(right, j) for j in range(n)], axis=2)
    d_left = np.stack([space.deriv(left, j) for j in range(n)], axis=2)
    term = space.mul(d_right, left[:, None]) - space.mul(d_left, right[:, None])
    return term.sum(axis=2)


def _common_dim(fields: Sequence[VectorField]) -> int:
    dims = {f.dim for f in fields}
    if len(dims) != 1:
        raise ValueError(f"fields have mismatched dimensions {sorted(dims)}")
    return dims.pop()


class WordEvaluator:
    """Evaluates many bracket words at one (batch of) point(s), sharing subwords."""

    def __init__(self, fields: Sequence[VectorField], x, degree: int):
        self.fields = list(fields)
        self.n = _common_dim(self.fields)
        self.x = np.asarray(x, dtype=float)
        self.space = jet_space(self.n, degree)
        self._leaf = {}
        self._memo = {}

    def leaf(self, k: int) -> np.ndarray:
        if k not in self._leaf:
            if not 1 <= k <= len(self.fields):
                raise IndexError(f"leaf index {k} outside 1..{len(self.fields)}")
            self._leaf[k] = self.fields[k - 1].taylor(self.x, self.space.d)
        return self._leaf[k]

    def word(self, word: Word) -> np.ndarray:
        if is_leaf(word):
            return self.leaf(int(word))
        cached = self._memo.get(word)
        if cached is not None:
            return cached
        left, right = word
        if left == right:
            out = np.zeros((self.space.ncoef, self.n) + self.x.shape[1:])
        else:
            out = bracket_taylor(self.space, self.word(left), self.word(right))
            if not np.all(np.isfinite(out)):
                raise DomainError(f"non-finite value in bracket {word_str(word)}")
        self._memo[word] = out
        return out


def eval_bracket_word(word: Word, fields: Sequence[VectorField], x, order: int = 0) -> np.ndarray:
    """Evaluate a commutator tree of ``fields`` at ``x``.

    With ``order=0`` the vector value is returned (shape ``(n, *batch)``);
    otherwise the Taylor coefficients up to ``order`` (shape
    ``(ncoef, n, *batch)`` in ``jet_space(n, order)``).
    """
    check_word(word, len(fields))
    ev = WordEvaluator(fields, x, word_depth(word) + order)
    coeffs = ev.word(word)
    if order == 0:
        return coeffs[0]
    return coeffs[: ev.space.ncoef_upto(order)]


def jacobian(X: VectorField, x) -> np.ndarray:
    """Jacobian matrix ``dX/dx`` at ``x`` (shape ``(n, n, *batch)``)."""
    coeffs = X.taylor(x, 1)
    n = X.dim
    return np.moveaxis(coeffs[1 : n + 1], 0, 1)


def lie_bracket(X: VectorField, Y: VectorField, x) -> np.ndarray:
    """``[X, Y](x) = dY(x) X(x) - dX(x) Y(x)``."""
    return eval_bracket_word((1, 2), [X, Y], x)


def bracket_field(X: VectorField, Y: VectorField) -> VectorField:
    """The commutator ``[X, Y]`` as a :class:`VectorField` usable in further brackets."""
    n = _common_dim([X, Y])
    return WordField((1, 2), [X, Y], name=f"[{X.name},{Y.name}]", dim=n)


class WordField(VectorField):
    """A bracket word of given fields, packaged as a vector field."""

    def __init__(self, word: Word, fields: Sequence[VectorField], name: str = "", dim: int | None = None):
        n = dim or _common_dim(fields)
        check_word(word, len(fields))
        super().__init__(n, func=None, name=name or word_str(word))
        self.word = word
        self.fields = list(fields)

    def __call__(self, x) -> np.ndarray:
        x = self._check_point(x)
        return eval_bracket_word(self.word, self.fields, x)

    def taylor(self, x, order: int) -> np.ndarray:
        x = self._check_point(x)
        if order == 0:
            return eval_bracket_word(self.word, self.fields, x)[None]
        return eval_bracket_word(self.word, self.fields, x, order)
