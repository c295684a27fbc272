"""Noncommutative polynomials in the symbols D (sub-Laplacian) and N.

Words are strings over {"D", "N"}; a word acts on functions with its
rightmost symbol first, so "DN" means D(N phi).  Coefficients are exact
fractions.
"""
from __future__ import annotations

import re
from fractions import Fraction
from functools import lru_cache
from typing import Dict, Iterable, Optional

import numpy as np

from . import jets as J
from . import models as M

ALPHABET = ("D", "N")
WEIGHT = {"D": 2, "N": 1}
MAX_K = 6

_SUP = str.maketrans("0123456789", "⁰¹²³⁴⁵⁶⁷⁸⁹")
_UNSUP = str.maketrans("⁰¹²³⁴⁵⁶⁷⁸⁹", "0123456789")


class OpAlgError(ValueError):
    pass


def _word_key(w: str):
    # graded by weighted degree (highest first), then lexicographic with D < N
    return (-sum(WEIGHT[c] for c in w), w)


class OpPoly:
    __slots__ = ("terms",)

    def __init__(self, terms: Optional[Dict[str, object]] = None):
        self.terms: Dict[str, Fraction] = {}
        for w, c in (terms or {}).items():
            if any(ch not in ALPHABET for ch in w):
                raise OpAlgError(f"bad word {w!r}")
            c = Fraction(c)
            if c != 0:
                self.terms[w] = self.terms.get(w, Fraction(0)) + c
                if self.terms[w] == 0:
                    del self.terms[w]

    @classmethod
    def symbol(cls, s: str) -> "OpPoly":
        return cls({s: 1})

    @classmethod
    def one(cls) -> "OpPoly":
        return cls({"": 1})

    @classmethod
    def zero(cls) -> "OpPoly":
        return cls()

    @classmethod
    def parse(cls, text: str) -> "OpPoly":
        """Read forms like "6·ND − N³ − 2·DN", "6*ND - N^3 - 2*DN" or "4Δ + N²"."""
        s = text.replace("Δ", "D").replace("−", "-").replace("·", "*").replace(" ", "")
        s = s.translate(_UNSUP)
        if not s:
            raise OpAlgError("empty expression")
        if s[0] not in "+-":
            s = "+" + s
        out = cls()
        pos = 0
        term = re.compile(r"([+-])(\d+(?:/\d+)?)?\*?((?:[DN](?:\^?\d+)?)*)")
        while pos < len(s):
            mt = term.match(s, pos)
            if mt is None or mt.end() == pos or (mt.group(2) is None and not mt.group(3)):
                raise OpAlgError(f"cannot parse {text!r} near position {pos}")
            sign = -1 if mt.group(1) == "-" else 1
            coef = Fraction(mt.group(2)) if mt.group(2) else Fraction(1)
            word = "".join(sym * int(p or 1) for sym, p in re.findall(r"([DN])\^?(\d+)?", mt.group(3)))
            out = out + cls({word: sign * coef})
            pos = mt.end()
        return out

    # arithmetic -------------------------------------------------------------
    def __add__(self, other):
        other = _coerce(other)
        t = dict(self.terms)
        for w, c in other.terms.items():
            t[w] = t.get(w, Fraction(0)) + c
        return OpPoly(t)

    __radd__ = __add__

    def __neg__(self):
        return OpPoly({w: -c for w, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-_coerce(other))

    def __rsub__(self, other):
        return _coerce(other) - self

    def __mul__(self, other):
        if isinstance(other, (int, Fraction)):
            return OpPoly({w: c * other for w, c in self.terms.items()})
        other = _coerce(other)
        t: Dict[str, Fraction] = {}
        for w1, c1 in self.terms.items():
            for w2, c2 in other.terms.items():
                w = w1 + w2
                t[w] = t.get(w, Fraction(0)) + c1 * c2
        return OpPoly(t)

    def __rmul__(self, other):
        if isinstance(other, (int, Fraction)):
            return self * other
        return _coerce(other) * self

    def __eq__(self, other):
        try:
            return self.terms == _coerce(other).terms
        except OpAlgError:
            return NotImplemented

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def __bool__(self):
        return bool(self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def words(self):
        return sorted(self.terms, key=_word_key)

    def max_length(self) -> int:
        return max((len(w) for w in self.terms), default=0)

    def degree(self) -> int:
        return max((sum(WEIGHT[c] for c in w) for w in self.terms), default=0)

    # printing ---------------------------------------------------------------
    def pretty(self, order: Optional[Iterable[str]] = None) -> str:
        """Canonical text, e.g. "4·D − N²".  `order` lists words to print first."""
        if not self.terms:
            return "0"
        words = self.words()
        if order is not None:
            first = [w for w in order if w in self.terms]
            words = first + [w for w in words if w not in first]
        parts = []
        for i, w in enumerate(words):
            c = self.terms[w]
            sign = "−" if c < 0 else "+"
            a = abs(c)
            body = _pretty_word(w)
            if a == 1 and w:
                s = body
            elif not w:
                s = str(a)
            else:
                s = f"{a}·{body}"
            if i == 0:
                parts.append(("−" if c < 0 else "") + s)
            else:
                parts.append(f" {sign} {s}")
        return "".join(parts)

    def __str__(self):
        return self.pretty()

    def __repr__(self):
        return f"OpPoly({self.pretty()!r})"


def _pretty_word(w: str) -> str:
    out = []
    for run in re.finditer(r"D+|N+", w):
        r = run.group(0)
        out.append(r[0] + (str(len(r)).translate(_SUP) if len(r) > 1 else ""))
    return "".join(out)


def _coerce(x) -> OpPoly:
    if isinstance(x, OpPoly):
        return x
    if isinstance(x, (int, Fraction)):
        return OpPoly({"": x})
    if isinstance(x, str):
        return OpPoly.parse(x)
    raise OpAlgError(f"cannot use {type(x).__name__} as an operator polynomial")


D = OpPoly.symbol("D")
N = OpPoly.symbol("N")


class OpMatrix:
    """2x2 matrix ((Q, S), (P, R)) of OpPoly; products keep left-right order."""

    __slots__ = ("e",)

    def __init__(self, q, s, p, r):
        self.e = ((_coerce(q), _coerce(s)), (_coerce(p), _coerce(r)))

    @classmethod
    def zero(cls):
        return cls(0, 0, 0, 0)

    @classmethod
    def identity(cls):
        return cls(1, 0, 0, 1)

    def entry(self, i: int, j: int) -> OpPoly:
        """1-based (row, column) entry."""
        return self.e[i - 1][j - 1]

    Q = property(lambda self: self.e[0][0])
    S = property(lambda self: self.e[0][1])
    P = property(lambda self: self.e[1][0])
    R = property(lambda self: self.e[1][1])

    def __add__(self, other):
        return OpMatrix(*(self.e[i][j] + other.e[i][j] for i in range(2) for j in range(2)))

    def __sub__(self, other):
        return OpMatrix(*(self.e[i][j] - other.e[i][j] for i in range(2) for j in range(2)))

    def __mul__(self, other):
        if isinstance(other, (int, Fraction)):
            return OpMatrix(*(self.e[i][j] * other for i in range(2) for j in range(2)))
        a, b = self.e, other.e
        return OpMatrix(*(a[i][0] * b[0][j] + a[i][1] * b[1][j] for i in range(2) for j in range(2)))

    def __eq__(self, other):
        return isinstance(other, OpMatrix) and self.e == other.e

    def __hash__(self):
        return hash(self.e)

    def is_zero(self) -> bool:
        return all(x.is_zero() for row in self.e for x in row)

    def max_length(self) -> int:
        return max(x.max_length() for row in self.e for x in row)

    def pretty(self) -> str:
        return "(" + "; ".join(", ".join(x.pretty() for x in row) for row in self.e) + ")"

    def __repr__(self):
        return f"OpMatrix{self.pretty()}"


def seed_matrices():
    """(M10, M11) with M10 = (D, DN; -N, -N^2 + D) and M11 = (0, -N; 0, 0)."""
    m10 = OpMatrix(D, D * N, -N, -(N * N) + D)
    m11 = OpMatrix(0, -N, 0, 0)
    return m10, m11


@lru_cache(maxsize=None)
def _level(k: int) -> tuple:
    if k == 0:
        return (OpMatrix.identity(),)
    m10, m11 = seed_matrices()
    prev = _level(k - 1)
    out = []
    for j in range(k + 1):
        acc = OpMatrix.zero()
        if j <= k - 1:
            acc = acc + m10 * prev[j]
        if j >= 1:
            acc = acc + m11 * prev[j - 1]
        out.append(acc)
    return tuple(out)


def recursion(k: int, cap: int = MAX_K) -> dict:
    """{j: M_kj for 0 <= j <= k} from M_kj = M10 M_{k-1,j} + M11 M_{k-1,j-1}."""
    if k < 1:
        raise OpAlgError("k must be >= 1")
    if k > cap:
        raise OpAlgError(f"k = {k} exceeds the cap {cap} (word lengths grow like 2k)")
    return dict(enumerate(_level(k)))


def matrix(k: int, j: int, cap: int = MAX_K) -> OpMatrix:
    """M_kj, zero outside 0 <= j <= k."""
    if j < 0 or j > k or k < 0:
        return OpMatrix.zero()
    if k == 0:
        return OpMatrix.identity()
    return recursion(k, cap)[j]


def expansion_coefficient_operators() -> dict:
    """Operator combinations of the iterated Duhamel expansions, built from
    recursion entries.

    N = -P10, N^2 = Q21, D = Q10; the third-order combination is assembled as
    N(4D - N^2) + 2(ND - DN).
    """
    m1 = recursion(1)
    m2 = recursion(2)
    d = m1[0].Q
    n = -m1[0].P
    n2 = m2[1].Q
    n3 = n * n2
    four_minus = 4 * d - n2
    four_plus = 4 * d + n2
    third = n * four_minus + 2 * (n * d - d * n)
    return {"N": n, "N2": n2, "N3": n3, "4D-N2": four_minus, "4D+N2": four_plus,
            "6ND-N3-2DN": third}


# ---------------------------------------------------------------------------
# evaluation hook

def _word_cost(w: str) -> int:
    return sum(WEIGHT[c] for c in w)


def evaluate(poly: OpPoly, m: M.ModelSpace, dom, phi, x) -> np.ndarray:
    """Apply poly to phi at points x (rightmost symbol first).

    D uses the jet sub-Laplacian, N the jet version of models.operator_N.
    """
    poly = _coerce(poly)
    x = np.asarray(x, dtype=float)
    if not np.all(dom.in_band(x)):
        raise M.ModelError("point outside the tubular band of the domain")
    out = np.zeros(x.shape[:-1])
    for w, c in poly.terms.items():
        k = _word_cost(w)
        # N at position i sees a jet of order cost(w[:i+1]) and needs delta one order higher
        need = max((_word_cost(w[:i + 1]) + 1 for i, s in enumerate(w) if s == "N"), default=0)
        if max(k, need) > J.MAX_ORDER:
            raise J.JetError(f"word {w} needs jet order beyond {J.MAX_ORDER}")
        g = M._as_jet(phi, x, k)
        delta = dom.delta(x, need) if need else None
        for s in reversed(w):
            if s == "D":
                g = M.lap_jet(m, g)
            else:
                g = M.n_jet(m, g, delta.truncate(g.order + 1))
        out = out + float(c) * g.value
    return out
