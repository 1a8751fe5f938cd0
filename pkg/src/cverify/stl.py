"""STL formulas: concrete syntax, Boolean satisfaction, and robustness.

The monitor works in discrete time: sup/inf in the temporal semantics range
over the signal's sample times that fall inside the operator interval, with
the empty-set conventions inf {} = +inf and sup {} = -inf.  Robustness
values are plain floats (+-inf representable); `true` has robustness +inf.

Concrete syntax::

    phi  := "true" | pred | "not" phi | phi "and" phi | phi "or" phi
          | ("F"|"G") "[" num "," num "]" phi
          | phi "U" "[" num "," num "]" phi
          | "(" phi ")"
    pred := "x" index cmp num | "abs" "(" "x" index ")" cmp num
    cmp  := "<" | "<=" | ">" | ">="

Precedence: not and the temporal unaries bind tightest, then "and", then
"or", then "U".  ``abs(xi) < c`` desugars to ``xi < c and xi > -c``.
"""

from __future__ import annotations

import math
import re
from collections import deque
from dataclasses import dataclass

import numpy as np

from .signals import OutOfDomain, Signal

INF = math.inf


class ParseError(ValueError):
    """Syntax error; carries the offending position and the expected tokens."""

    def __init__(self, message: str, position: int, expected: set[str] | None = None):
        super().__init__(f"{message} (at position {position})")
        self.position = position
        self.expected = expected or set()


class IntervalError(ValueError):
    """Temporal interval violates 0 <= a <= b."""


class InsufficientHorizon(ValueError):
    """Signal too short to evaluate the formula at the requested time."""


# ---------------------------------------------------------------------------
# Abstract syntax
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Formula:
    def robustness(self, sig: Signal, t: float = None) -> float:
        return robustness(self, sig, t)

    def __and__(self, other: "Formula") -> "Formula":
        return And(self, other)

    def __or__(self, other: "Formula") -> "Formula":
        return Or(self, other)

    def __invert__(self) -> "Formula":
        return Not(self)


@dataclass(frozen=True)
class TrueF(Formula):
    def __str__(self):
        return "true"


@dataclass(frozen=True)
class Pred(Formula):
    """Coordinate predicate  x_index cmp threshold."""

    index: int
    op: str  # one of < <= > >=
    threshold: float

    def __post_init__(self):
        if self.op not in ("<", "<=", ">", ">="):
            raise ValueError(f"bad comparator {self.op!r}")
        if self.index < 0:
            raise ValueError("coordinate index must be nonnegative")

    def __str__(self):
        return f"x{self.index} {self.op} {self.threshold:g}"


@dataclass(frozen=True)
class Not(Formula):
    child: Formula

    def __str__(self):
        return f"not ({self.child})"


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula

    def __str__(self):
        return f"({self.left}) and ({self.right})"


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula

    def __str__(self):
        return f"({self.left}) or ({self.right})"


def _check_interval(a: float, b: float) -> None:
    if a < 0 or b < 0:
        raise IntervalError(f"interval bounds must be nonnegative, got [{a}, {b}]")
    if a > b:
        raise IntervalError(f"interval lower bound exceeds upper: [{a}, {b}]")


@dataclass(frozen=True)
class Eventually(Formula):
    a: float
    b: float
    child: Formula

    def __post_init__(self):
        _check_interval(self.a, self.b)

    def __str__(self):
        return f"F[{self.a:g},{self.b:g}] ({self.child})"


@dataclass(frozen=True)
class Always(Formula):
    a: float
    b: float
    child: Formula

    def __post_init__(self):
        _check_interval(self.a, self.b)

    def __str__(self):
        return f"G[{self.a:g},{self.b:g}] ({self.child})"


@dataclass(frozen=True)
class Until(Formula):
    a: float
    b: float
    left: Formula
    right: Formula

    def __post_init__(self):
        _check_interval(self.a, self.b)

    def __str__(self):
        return f"({self.left}) U[{self.a:g},{self.b:g}] ({self.right})"


def horizon(phi: Formula) -> float:
    """Largest lookahead the formula needs beyond its evaluation time."""
    if isinstance(phi, (TrueF, Pred)):
        return 0.0
    if isinstance(phi, Not):
        return horizon(phi.child)
    if isinstance(phi, (And, Or)):
        return max(horizon(phi.left), horizon(phi.right))
    if isinstance(phi, (Eventually, Always)):
        return phi.b + horizon(phi.child)
    if isinstance(phi, Until):
        return phi.b + max(horizon(phi.left), horizon(phi.right))
    raise TypeError(f"not a formula node: {phi!r}")


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""\s*(?:
        (?P<num>-?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
      | (?P<xvar>x\d+)
      | (?P<word>[A-Za-z_]\w*)
      | (?P<cmp><=|>=|<|>)
      | (?P<punct>[\[\](),])
    )""",
    re.VERBOSE,
)

_KEYWORDS = {"true", "not", "and", "or", "F", "G", "U", "abs"}


def _tokenize(text: str) -> list[tuple[str, object, int]]:
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            at = len(text) - len(stripped)
            raise ParseError(f"unexpected character {text[at]!r}", at)
        pos = m.end()
        start = m.start(m.lastgroup)
        if m.lastgroup == "num":
            toks.append(("num", float(m.group("num")), start))
        elif m.lastgroup == "xvar":
            toks.append(("xvar", int(m.group("xvar")[1:]), start))
        elif m.lastgroup == "word":
            word = m.group("word")
            if word not in _KEYWORDS:
                raise ParseError(
                    f"unknown word {word!r}", start, expected=_KEYWORDS
                )
            toks.append((word, word, start))
        elif m.lastgroup == "cmp":
            toks.append(("cmp", m.group("cmp"), start))
        else:
            p = m.group("punct")
            toks.append((p, p, start))
    toks.append(("eof", None, len(text)))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def _peek(self):
        return self.toks[self.i]

    def _next(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def _expect(self, kind: str):
        tok = self._next()
        if tok[0] != kind:
            raise ParseError(
                f"expected {kind!r}, found {tok[0]!r}", tok[2], expected={kind}
            )
        return tok

    def _interval(self) -> tuple[float, float]:
        self._expect("[")
        a = self._expect("num")[1]
        self._expect(",")
        b = self._expect("num")[1]
        self._expect("]")
        return a, b

    def parse(self) -> Formula:
        phi = self._until()
        tok = self._peek()
        if tok[0] != "eof":
            raise ParseError(
                f"trailing input starting with {tok[0]!r}", tok[2], expected={"eof"}
            )
        return phi

    def _until(self) -> Formula:
        left = self._or()
        if self._peek()[0] == "U":
            self._next()
            a, b = self._interval()
            right = self._until()
            return Until(a, b, left, right)
        return left

    def _or(self) -> Formula:
        node = self._and()
        while self._peek()[0] == "or":
            self._next()
            node = Or(node, self._and())
        return node

    def _and(self) -> Formula:
        node = self._unary()
        while self._peek()[0] == "and":
            self._next()
            node = And(node, self._unary())
        return node

    def _unary(self) -> Formula:
        kind = self._peek()[0]
        if kind == "not":
            self._next()
            return Not(self._unary())
        if kind == "F":
            self._next()
            a, b = self._interval()
            return Eventually(a, b, self._unary())
        if kind == "G":
            self._next()
            a, b = self._interval()
            return Always(a, b, self._unary())
        return self._atom()

    def _atom(self) -> Formula:
        tok = self._next()
        if tok[0] == "true":
            return TrueF()
        if tok[0] == "(":
            phi = self._until()
            self._expect(")")
            return phi
        if tok[0] == "xvar":
            op = self._expect("cmp")[1]
            c = self._expect("num")[1]
            return Pred(tok[1], op, c)
        if tok[0] == "abs":
            self._expect("(")
            idx = self._expect("xvar")[1]
            self._expect(")")
            op = self._expect("cmp")[1]
            c = self._expect("num")[1]
            if op in ("<", "<="):
                flip = ">" if op == "<" else ">="
                return And(Pred(idx, op, c), Pred(idx, flip, -c))
            flip = "<" if op == ">" else "<="
            return Or(Pred(idx, op, c), Pred(idx, flip, -c))
        raise ParseError(
            f"expected a formula, found {tok[0]!r}",
            tok[2],
            expected={"true", "not", "F", "G", "(", "x<i>", "abs"},
        )


def parse(text: str) -> Formula:
    """Parse concrete STL syntax into a Formula AST."""
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# Quantitative semantics
# ---------------------------------------------------------------------------

def _window_bounds(times: np.ndarray, t: float, a: float, b: float) -> tuple[int, int]:
    """Index range [lo, hi] of sample times inside [t+a, t+b] (hi < lo if empty)."""
    lo = int(np.searchsorted(times, t + a, side="left"))
    hi = int(np.searchsorted(times, t + b, side="right")) - 1
    return lo, hi


def _sliding_extreme(vals, los, his, take_max: bool):
    # Monotone-deque sweep; windows are index ranges that only move rightward.
    T = vals.shape[0]
    empty = -INF if take_max else INF
    out = np.full(T, empty)
    dq: deque[int] = deque()
    nxt = 0
    for i in range(T):
        hi = his[i]
        while nxt <= hi:
            v = vals[nxt]
            if take_max:
                while dq and vals[dq[-1]] <= v:
                    dq.pop()
            else:
                while dq and vals[dq[-1]] >= v:
                    dq.pop()
            dq.append(nxt)
            nxt += 1
        lo = los[i]
        while dq and dq[0] < lo:
            dq.popleft()
        if dq and dq[0] <= hi:
            out[i] = vals[dq[0]]
    return out


def _until_scan(phi_vals, psi_vals, los, his):
    # rho(U, t_i) = max over j in window of min(psi[j], min phi over [i, j)).
    T = phi_vals.shape[0]
    out = np.full(T, -INF)
    for i in range(T):
        lo, hi = los[i], his[i]
        best = -INF
        runmin = INF
        nxt = i
        for j in range(lo, hi + 1):
            while nxt < j:
                v = phi_vals[nxt]
                if v < runmin:
                    runmin = v
                nxt += 1
            cand = psi_vals[j] if psi_vals[j] < runmin else runmin
            if cand > best:
                best = cand
        out[i] = best
    return out


def _grid(phi: Formula, sig: Signal, cache: dict) -> np.ndarray:
    """Robustness of phi at every sample time of sig."""
    key = id(phi)
    hit = cache.get(key)
    if hit is not None:
        return hit
    times = sig.times
    T = times.shape[0]
    if isinstance(phi, TrueF):
        out = np.full(T, INF)
    elif isinstance(phi, Pred):
        if phi.index >= sig.dim:
            raise IndexError(
                f"predicate x{phi.index} exceeds signal dimension {sig.dim}"
            )
        col = sig.values[:, phi.index]
        out = col - phi.threshold if phi.op in (">", ">=") else phi.threshold - col
    elif isinstance(phi, Not):
        out = -_grid(phi.child, sig, cache)
    elif isinstance(phi, And):
        out = np.minimum(_grid(phi.left, sig, cache), _grid(phi.right, sig, cache))
    elif isinstance(phi, Or):
        out = np.maximum(_grid(phi.left, sig, cache), _grid(phi.right, sig, cache))
    elif isinstance(phi, (Eventually, Always)):
        child = _grid(phi.child, sig, cache)
        los = np.searchsorted(times, times + phi.a, side="left")
        his = np.searchsorted(times, times + phi.b, side="right") - 1
        out = _sliding_extreme(child, los, his, take_max=isinstance(phi, Eventually))
    elif isinstance(phi, Until):
        lv = _grid(phi.left, sig, cache)
        rv = _grid(phi.right, sig, cache)
        los = np.searchsorted(times, times + phi.a, side="left")
        his = np.searchsorted(times, times + phi.b, side="right") - 1
        out = _until_scan(lv, rv, los, his)
    else:
        raise TypeError(f"not a formula node: {phi!r}")
    cache[key] = out
    return out


def _rho_at(phi: Formula, sig: Signal, t: float, cache: dict) -> float:
    times = sig.times
    k = int(np.searchsorted(times, t, side="left"))
    if k < times.shape[0] and times[k] == t:
        return float(_grid(phi, sig, cache)[k])
    # t between samples: predicates read the left sample, temporal operators
    # still quantify over sample times inside [t+a, t+b].
    if isinstance(phi, TrueF):
        return INF
    if isinstance(phi, Pred):
        v = float(sig.value_at(t)[phi.index])
        return v - phi.threshold if phi.op in (">", ">=") else phi.threshold - v
    if isinstance(phi, Not):
        return -_rho_at(phi.child, sig, t, cache)
    if isinstance(phi, And):
        return min(_rho_at(phi.left, sig, t, cache), _rho_at(phi.right, sig, t, cache))
    if isinstance(phi, Or):
        return max(_rho_at(phi.left, sig, t, cache), _rho_at(phi.right, sig, t, cache))
    if isinstance(phi, (Eventually, Always)):
        child = _grid(phi.child, sig, cache)
        lo, hi = _window_bounds(times, t, phi.a, phi.b)
        if hi < lo:
            return -INF if isinstance(phi, Eventually) else INF
        seg = child[lo : hi + 1]
        return float(seg.max() if isinstance(phi, Eventually) else seg.min())
    if isinstance(phi, Until):
        lv = _grid(phi.left, sig, cache)
        rv = _grid(phi.right, sig, cache)
        lo, hi = _window_bounds(times, t, phi.a, phi.b)
        start = int(np.searchsorted(times, t, side="left"))
        best = -INF
        runmin = INF
        nxt = start
        for j in range(lo, hi + 1):
            while nxt < j:
                runmin = min(runmin, lv[nxt])
                nxt += 1
            best = max(best, min(float(rv[j]), runmin))
        return best
    raise TypeError(f"not a formula node: {phi!r}")


def _check_evaluable(phi: Formula, sig: Signal, t: float) -> float:
    if t is None:
        t = float(sig.times[0])
    if t < sig.times[0] or t > sig.times[-1]:
        raise OutOfDomain(
            f"t={t} outside signal domain [{sig.times[0]}, {sig.times[-1]}]"
        )
    need = t + horizon(phi)
    if need > sig.times[-1]:
        raise InsufficientHorizon(
            f"formula needs samples up to t={need} but signal ends at {sig.times[-1]}"
        )
    return t


def robustness(phi: Formula, sig: Signal, t: float = None) -> float:
    """Quantitative satisfaction degree of phi on sig at time t (default: start)."""
    t = _check_evaluable(phi, sig, t)
    return _rho_at(phi, sig, t, {})


# ---------------------------------------------------------------------------
# Boolean semantics
# ---------------------------------------------------------------------------

_CMP = {
    "<": lambda v, c: v < c,
    "<=": lambda v, c: v <= c,
    ">": lambda v, c: v > c,
    ">=": lambda v, c: v >= c,
}


def _sat_at(phi: Formula, sig: Signal, t: float, memo: dict) -> bool:
    key = (id(phi), t)
    hit = memo.get(key)
    if hit is not None:
        return hit
    times = sig.times
    if isinstance(phi, TrueF):
        out = True
    elif isinstance(phi, Pred):
        out = _CMP[phi.op](float(sig.value_at(t)[phi.index]), phi.threshold)
    elif isinstance(phi, Not):
        out = not _sat_at(phi.child, sig, t, memo)
    elif isinstance(phi, And):
        out = _sat_at(phi.left, sig, t, memo) and _sat_at(phi.right, sig, t, memo)
    elif isinstance(phi, Or):
        out = _sat_at(phi.left, sig, t, memo) or _sat_at(phi.right, sig, t, memo)
    elif isinstance(phi, (Eventually, Always)):
        lo, hi = _window_bounds(times, t, phi.a, phi.b)
        picks = (
            _sat_at(phi.child, sig, float(times[j]), memo) for j in range(lo, hi + 1)
        )
        out = any(picks) if isinstance(phi, Eventually) else all(picks)
    elif isinstance(phi, Until):
        lo, hi = _window_bounds(times, t, phi.a, phi.b)
        start = int(np.searchsorted(times, t, side="left"))
        out = False
        for j in range(lo, hi + 1):
            if not _sat_at(phi.right, sig, float(times[j]), memo):
                continue
            if all(
                _sat_at(phi.left, sig, float(times[k]), memo) for k in range(start, j)
            ):
                out = True
                break
    else:
        raise TypeError(f"not a formula node: {phi!r}")
    memo[key] = out
    return out


def boolean_sat(phi: Formula, sig: Signal, t: float = None) -> bool:
    """Boolean satisfaction of phi on sig at time t (default: start)."""
    t = _check_evaluable(phi, sig, t)
    return _sat_at(phi, sig, t, {})
