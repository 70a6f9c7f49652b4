"""Truncated BCHD series for products of exponentials of vector fields.

A :class:`LieSeries` is a finite sum of terms

    coeff * alpha_1^e_1 ... alpha_N^e_N * tau^d * word

where ``word`` is a bracket word over generators ``f_1..f_N`` with ``d``
leaves and ``coeff`` is an exact rational.  It represents ``log`` of

    exp(alpha_1 tau f_1) exp(alpha_2 tau f_2) ... exp(alpha_N tau f_N)

with flows applied left to right (``f_1`` first).  The alpha exponents of a
term always equal the letter multiplicities of its word.
"""

from __future__ import annotations

import logging
import re
import warnings
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import combinations, permutations
from math import factorial
from typing import Iterable, Sequence

import numpy as np

from .lie import (
    VectorField,
    Word,
    WordEvaluator,
    is_leaf,
    parse_word,
    right_nested,
    word_depth,
    word_length,
    word_letters,
    word_str,
)

log = logging.getLogger(__name__)

DEFAULT_MAX_ORDER = 6
APPENDIX_MAX_ORDER = 6


class UnsupportedOrder(ValueError):
    pass


@dataclass(frozen=True)
class LieSeriesTerm:
    coeff: Fraction
    alpha: tuple
    word: Word

    @property
    def tau_degree(self) -> int:
        return word_length(self.word)

    def __str__(self):
        return format_term(self)


@dataclass(frozen=True)
class LieSeries:
    """Immutable, merged, deterministically ordered list of terms."""

    N: int
    order: int
    terms: tuple

    @classmethod
    def from_mapping(cls, N: int, order: int, mapping) -> "LieSeries":
        """Build from ``{(word, alpha): coeff}``; zero and over-order terms are dropped."""
        terms = []
        for (word, alpha), c in mapping.items():
            if c == 0 or word_length(word) > order:
                continue
            terms.append(LieSeriesTerm(Fraction(c), tuple(alpha), word))
        terms.sort(key=_term_sort_key)
        return cls(N, order, tuple(terms))

    @classmethod
    def from_terms(cls, N: int, order: int, terms: Iterable[LieSeriesTerm]) -> "LieSeries":
        acc = defaultdict(Fraction)
        for t in terms:
            sign, w = canonical_word(t.word)
            if sign:
                acc[(w, tuple(t.alpha))] += sign * t.coeff
        return cls.from_mapping(N, order, acc)

    def as_mapping(self) -> dict:
        return {(t.word, t.alpha): t.coeff for t in self.terms}

    def truncate(self, order: int) -> "LieSeries":
        return LieSeries(self.N, order, tuple(t for t in self.terms if t.tau_degree <= order))

    def degree_part(self, k: int) -> "LieSeries":
        """Homogeneous part of tau-degree ``k`` (the ``F^(k)`` of the expansion)."""
        return LieSeries(self.N, self.order, tuple(t for t in self.terms if t.tau_degree == k))

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def dump(self) -> str:
        return dump_series(self)


def _term_sort_key(t: LieSeriesTerm):
    return (t.tau_degree, tuple(-e for e in t.alpha), word_key(t.word))


# -- canonical words ------------------------------------------------------------

@lru_cache(maxsize=None)
def word_key(word: Word) -> tuple:
    """Total order on words: shorter first, leaves by index, then left/right keys."""
    if is_leaf(word):
        return (1, int(word))
    return (word_length(word), word_key(word[0]), word_key(word[1]))


@lru_cache(maxsize=None)
def canonical_word(word: Word) -> tuple:
    """Normalize by antisymmetry only.

    Returns ``(sign, word)`` with children ordered by :func:`word_key`;
    ``sign`` is 0 when the word contains a bracket of identical subtrees.
    """
    if is_leaf(word):
        return 1, int(word)
    sl, left = canonical_word(word[0])
    sr, right = canonical_word(word[1])
    if sl == 0 or sr == 0 or left == right:
        return 0, None
    if word_key(left) > word_key(right):
        return -sl * sr, (right, left)
    return sl * sr, (left, right)


@lru_cache(maxsize=None)
def associative_expansion(word: Word) -> dict:
    """Image of a bracket word in the free associative algebra (``[a,b] = ab - ba``)."""
    if is_leaf(word):
        return {(int(word),): 1}
    left = associative_expansion(word[0])
    right = associative_expansion(word[1])
    out = defaultdict(int)
    for u, a in left.items():
        for v, b in right.items():
            out[u + v] += a * b
            out[v + u] -= a * b
    return {k: v for k, v in out.items() if v}


class _Echelon:
    """Incremental exact row reduction over dict-vectors, tracking combinations."""

    def __init__(self):
        self.rows = []  # (pivot, vec, combo)

    def reduce(self, vec: dict, combo: dict):
        vec = dict(vec)
        combo = dict(combo)
        for pivot, rvec, rcombo in self.rows:
            f = vec.get(pivot)
            if not f:
                continue
            f = Fraction(f) / rvec[pivot]
            for k, v in rvec.items():
                nv = vec.get(k, 0) - f * v
                if nv:
                    vec[k] = nv
                else:
                    vec.pop(k, None)
            for k, v in rcombo.items():
                nv = combo.get(k, 0) - f * v
                if nv:
                    combo[k] = nv
                else:
                    combo.pop(k, None)
        return vec, combo

    def add(self, vec: dict, label) -> bool:
        vec, combo = self.reduce(vec, {label: Fraction(1)})
        if not vec:
            return False
        pivot = min(vec)
        self.rows.append((pivot, vec, combo))
        return True


@lru_cache(maxsize=None)
def _basis_for(letters: tuple) -> tuple:
    """Deterministic basis of the Lie polynomials with the given letter multiset.

    Greedy choice among canonical right-nested words ordered by :func:`word_key`.
    """
    candidates = set()
    for perm in set(permutations(letters)):
        sign, w = canonical_word(right_nested(list(perm)))
        if sign:
            candidates.add(w)
    echelon = _Echelon()
    basis = []
    for w in sorted(candidates, key=word_key):
        if echelon.add(associative_expansion(w), len(basis)):
            basis.append(w)
    return tuple(basis), echelon


def canonicalize(series: LieSeries) -> LieSeries:
    """Rewrite a series in a fixed basis of bracket words (modulo Jacobi).

    Two series represent the same Lie element iff their canonical forms are
    identical term for term.
    """
    groups = defaultdict(dict)
    for t in series.terms:
        groups[t.alpha][t.word] = t.coeff
    out = {}
    for alpha, words in groups.items():
        target = defaultdict(Fraction)
        for w, c in words.items():
            for assoc, k in associative_expansion(w).items():
                target[assoc] += c * k
        target = {k: v for k, v in target.items() if v}
        if not target:
            continue
        letters = tuple(sorted(word_letters(next(iter(words)))))
        basis, echelon = _basis_for(letters)
        residual, combo = echelon.reduce(target, {})
        if residual:
            raise ArithmeticError("series term is not a Lie element")
        for idx, c in combo.items():
            # reduce() subtracts, so the coordinates are the negated combination
            if c:
                out[(basis[idx], alpha)] = -c
    return LieSeries.from_mapping(series.N, series.order, out)


def series_equal(a: LieSeries, b: LieSeries) -> bool:
    return a.N == b.N and canonicalize(a).terms == canonicalize(b).terms


# -- constructions ---------------------------------------------------------------

def _unit(N: int, i: int) -> tuple:
    e = [0] * N
    e[i - 1] = 1
    return tuple(e)


def _alpha(N: int, *indices: int) -> tuple:
    e = [0] * N
    for i in indices:
        e[i - 1] += 1
    return tuple(e)


def generator(N: int, k: int) -> LieSeries:
    """The single-term series ``tau * alpha_k * f_k``."""
    if not 1 <= k <= N:
        raise IndexError(f"generator {k} outside 1..{N}")
    return LieSeries(N, 1, (LieSeriesTerm(Fraction(1), _unit(N, k), k),))


def terms_general(N: int, order: int) -> LieSeries:
    """Closed-form series for any ``N`` up to tau^3."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if not 1 <= order <= 3:
        raise UnsupportedOrder("closed form is available for orders 1..3; use recursive_F")
    acc = defaultdict(Fraction)

    def add(c, word, *idx):
        sign, w = canonical_word(word)
        if sign:
            acc[(w, _alpha(N, *idx))] += sign * Fraction(c)

    for i in range(1, N + 1):
        add(1, i, i)
    if order >= 2:
        for i, j in combinations(range(1, N + 1), 2):
            add(Fraction(1, 2), (i, j), i, j)
    if order >= 3:
        for i, j in combinations(range(1, N + 1), 2):
            add(Fraction(1, 12), (i, (i, j)), i, i, j)
            add(Fraction(-1, 12), (j, (i, j)), i, j, j)
        for i, j, k in combinations(range(1, N + 1), 3):
            add(Fraction(-1, 4), (k, (i, j)), i, j, k)
            add(Fraction(1, 12), (i, (j, k)), i, j, k)
            add(Fraction(1, 12), (j, (i, k)), i, j, k)
    return LieSeries.from_mapping(N, order, acc)


_APPENDIX = """
1 * alpha^(1,0) * tau^1 * f1
1 * alpha^(0,1) * tau^1 * f2
1/2 * alpha^(1,1) * tau^2 * [f1,f2]
1/12 * alpha^(2,1) * tau^3 * [f1,[f1,f2]]
-1/12 * alpha^(1,2) * tau^3 * [f2,[f1,f2]]
-1/24 * alpha^(2,2) * tau^4 * [f2,[f1,[f1,f2]]]
-1/720 * alpha^(1,4) * tau^5 * [f2,[f2,[f2,[f2,f1]]]]
-1/720 * alpha^(4,1) * tau^5 * [f1,[f1,[f1,[f1,f2]]]]
1/360 * alpha^(2,3) * tau^5 * [f1,[f2,[f2,[f2,f1]]]]
1/360 * alpha^(3,2) * tau^5 * [f2,[f1,[f1,[f1,f2]]]]
1/120 * alpha^(2,3) * tau^5 * [f2,[f1,[f2,[f1,f2]]]]
1/120 * alpha^(3,2) * tau^5 * [f1,[f2,[f1,[f2,f1]]]]
1/240 * alpha^(3,3) * tau^6 * [f1,[f2,[f1,[f2,[f1,f2]]]]]
1/720 * alpha^(4,2) * tau^6 * [f1,[f2,[f1,[f1,[f1,f2]]]]]
-1/720 * alpha^(3,3) * tau^6 * [f1,[f1,[f2,[f2,[f1,f2]]]]]
1/1440 * alpha^(2,4) * tau^6 * [f1,[f2,[f2,[f2,[f1,f2]]]]]
-1/1440 * alpha^(4,2) * tau^6 * [f1,[f1,[f2,[f1,[f1,f2]]]]]
"""


def terms_n2_appendix(order: int) -> LieSeries:
    """Tabulated two-generator series through tau^6."""
    if not 1 <= order <= APPENDIX_MAX_ORDER:
        raise UnsupportedOrder(f"tabulated N=2 series covers orders 1..{APPENDIX_MAX_ORDER}")
    full = parse_series(_APPENDIX, N=2, order=APPENDIX_MAX_ORDER)
    return full.truncate(order)


@lru_cache(maxsize=None)
def _dynkin_letter_coefficients(max_len: int) -> dict:
    """Coefficient of each right-nested X/Y letter string in Dynkin's formula.

    Letters are 0 (X) and 1 (Y).  Strings whose two innermost letters agree
    vanish and are omitted.
    """
    acc = defaultdict(Fraction)

    def rec(seq, n_blocks, fact):
        if n_blocks:
            m = len(seq)
            acc[seq] += Fraction((-1) ** (n_blocks - 1), n_blocks) / (m * fact)
        room = max_len - len(seq)
        for size in range(1, room + 1):
            for r in range(size + 1):
                s = size - r
                rec(seq + (0,) * r + (1,) * s, n_blocks + 1, fact * factorial(r) * factorial(s))

    rec((), 0, 1)
    out = {}
    for seq, c in acc.items():
        if c == 0:
            continue
        if len(seq) >= 2 and seq[-1] == seq[-2]:
            continue
        out[seq] = c
    return out


def dynkin_product(A: LieSeries, B: LieSeries, order: int, max_order: int = DEFAULT_MAX_ORDER) -> LieSeries:
    """Truncation of ``B(A, B) = log(exp(A) exp(B))`` at tau-degree ``order``.

    Series are substituted multilinearly into Dynkin's formula; words are
    normalized by antisymmetry and merged, without Jacobi rewriting.
    """
    if A.N != B.N:
        raise ValueError(f"generator sets differ: N={A.N} vs N={B.N}")
    if order > max_order:
        raise UnsupportedOrder(f"order {order} exceeds the cap {max_order}")
    if order > DEFAULT_MAX_ORDER:
        warnings.warn(f"Dynkin expansion at order {order}: term counts grow combinatorially", RuntimeWarning)
    parts = (
        [t for t in A.terms if t.tau_degree <= order],
        [t for t in B.terms if t.tau_degree <= order],
    )
    min_deg = [min((t.tau_degree for t in p), default=order + 1) for p in parts]
    acc = defaultdict(Fraction)
    for seq, c in _dynkin_letter_coefficients(order).items():
        if sum(min_deg[s] for s in seq) > order:
            continue
        tail_min = [0] * (len(seq) + 1)
        for pos in range(len(seq) - 1, -1, -1):
            tail_min[pos] = tail_min[pos + 1] + min_deg[seq[pos]]

        def expand(pos, budget, words, coeff, alpha):
            if pos == len(seq):
                sign, w = canonical_word(right_nested(words))
                if sign:
                    acc[(w, alpha)] += sign * coeff
                return
            for t in parts[seq[pos]]:
                deg = t.tau_degree
                if deg + tail_min[pos + 1] > budget:
                    continue
                expand(
                    pos + 1,
                    budget - deg,
                    words + [t.word],
                    coeff * t.coeff,
                    tuple(a + b for a, b in zip(alpha, t.alpha)),
                )

        expand(0, order, [], c, (0,) * A.N)
    result = LieSeries.from_mapping(A.N, order, acc)
    log.debug("dynkin_product: %d x %d terms -> %d terms at order %d", len(A), len(B), len(result), order)
    return result


def recursive_F(N: int, order: int, max_order: int = DEFAULT_MAX_ORDER) -> LieSeries:
    """``F_2 = B(g_1, g_2)``, ``F_k = B(F_{k-1}, g_k)`` with ``g_k = tau alpha_k f_k``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if N == 1:
        return LieSeries(1, order, generator(1, 1).terms)
    F = dynkin_product(generator(N, 1), generator(N, 2), order, max_order)
    for k in range(3, N + 1):
        F = dynkin_product(F, generator(N, k), order, max_order)
    return F


METHODS = ("general", "appendix", "recursive")


def build_series(N: int, order: int, method: str = "auto") -> LieSeries:
    """Series by name; ``auto`` picks the tabulated form for N=2, the closed
    form up to order 3 and the (canonicalized) recursive construction otherwise."""
    if method == "auto":
        if N == 2 and order <= APPENDIX_MAX_ORDER:
            method = "appendix"
        elif order <= 3:
            method = "general"
        else:
            method = "recursive"
    if method == "general":
        return terms_general(N, order)
    if method == "appendix":
        if N != 2:
            raise UnsupportedOrder("the tabulated series exists only for N=2")
        return terms_n2_appendix(order)
    if method == "recursive":
        return canonicalize(recursive_F(N, order))
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


# -- text format -------------------------------------------------------------------

def format_term(t: LieSeriesTerm) -> str:
    alpha = ",".join(str(e) for e in t.alpha)
    return f"{t.coeff} * alpha^({alpha}) * tau^{t.tau_degree} * {word_str(t.word)}"


def dump_series(series: LieSeries) -> str:
    header = f"# N={series.N} order={series.order} terms={len(series)}\n"
    return header + "".join(format_term(t) + "\n" for t in series.terms)


_LINE = re.compile(
    r"^\s*(?P<coeff>[-+]?\d+(?:/\d+)?)\s*\*\s*alpha\^\((?P<alpha>[\d,\s]*)\)\s*\*\s*tau\^(?P<deg>\d+)\s*\*\s*(?P<word>.+?)\s*$"
)


def parse_series(text: str, N: int | None = None, order: int | None = None) -> LieSeries:
    """Parse the dump format (comment lines start with ``#``)."""
    terms = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = re.search(r"N=(\d+)\s+order=(\d+)", line)
            if m:
                N = N or int(m.group(1))
                order = order or int(m.group(2))
            continue
        m = _LINE.match(line)
        if not m:
            raise ValueError(f"cannot parse series line: {line!r}")
        word = parse_word(m.group("word"))
        alpha = tuple(int(a) for a in m.group("alpha").split(",") if a.strip())
        deg = int(m.group("deg"))
        if deg != word_length(word):
            raise ValueError(f"tau degree {deg} does not match word length in {line!r}")
        letters = word_letters(word)
        expected = tuple(letters.count(i + 1) for i in range(len(alpha)))
        if alpha != expected:
            raise ValueError(f"alpha exponents {alpha} do not match letters of {line!r}")
        terms.append(LieSeriesTerm(Fraction(m.group("coeff")), alpha, word))
    if not terms:
        raise ValueError("empty series")
    N = N or len(terms[0].alpha)
    order = order or max(t.tau_degree for t in terms)
    return LieSeries.from_terms(N, order, terms)


def coefficient_checksum(series: LieSeries) -> Fraction:
    """Sum of |coefficients|, a cheap fingerprint printed by the CLI."""
    return sum((abs(t.coeff) for t in series.terms), Fraction(0))


# -- binding to concrete fields ------------------------------------------------------

class BoundSeries(VectorField):
    """A :class:`LieSeries` evaluated on concrete fields, weights and period."""

    def __init__(self, series: LieSeries, fields: Sequence[VectorField], alphas: Sequence[float], tau: float):
        fields = list(fields)
        if len(fields) != series.N:
            raise ValueError(f"series has N={series.N} generators but {len(fields)} fields were given")
        if len(alphas) != series.N:
            raise ValueError(f"expected {series.N} alpha values, got {len(alphas)}")
        if tau <= 0:
            raise ValueError("tau must be positive")
        dims = {f.dim for f in fields}
        if len(dims) != 1:
            raise ValueError(f"fields have mismatched dimensions {sorted(dims)}")
        super().__init__(dims.pop(), func=None, name=f"F~{series.order}")
        self.series = series
        self.fields = fields
        self.alphas = np.asarray(alphas, dtype=float)
        self.tau = float(tau)
        weights = []
        for t in series.terms:
            w = float(t.coeff) * float(np.prod(self.alphas ** np.asarray(t.alpha))) * self.tau**t.tau_degree
            if w != 0.0:
                weights.append((w, t.word))
        self.weighted = weights
        self.max_depth = max((word_depth(w) for _, w in weights), default=0)

    def taylor(self, x, order: int) -> np.ndarray:
        x = self._check_point(x)
        ev = WordEvaluator(self.fields, x, self.max_depth + order)
        ncoef = ev.space.ncoef_upto(order)
        out = np.zeros((ncoef, self.dim) + x.shape[1:])
        for w, word in self.weighted:
            out += w * ev.word(word)[:ncoef]
        return out

    def __call__(self, x) -> np.ndarray:
        return self.taylor(x, 0)[0]


def bind(series: LieSeries, fields: Sequence[VectorField], alphas: Sequence[float], tau: float) -> BoundSeries:
    """Evaluable field ``x -> sum coeff * prod(alpha^e) * tau^d * word(x)``."""
    return BoundSeries(series, fields, alphas, tau)
