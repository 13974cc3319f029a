"""Symbolic expressions over chart coordinates.

Expressions are plain sympy objects.  This module adds the pieces sympy does
not give us directly: a small fixed grammar, a canonical form that is unique
for rational functions with square-root and trigonometric generators, a
smooth step node that only evaluates numerically, and deterministic sampled
comparison.
"""
from __future__ import annotations

import math
import re
from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import sympy as sp
from scipy.stats import qmc
from sympy.printing.str import StrPrinter

FUNCTIONS = {
    "sin": sp.sin,
    "cos": sp.cos,
    "atan": sp.atan,
    "sqrt": sp.sqrt,
    "exp": sp.exp,
}


class ParseError(ValueError):
    def __init__(self, message, pos=None):
        self.pos = pos
        if pos is not None:
            message = f"{message} at position {pos}"
        super().__init__(message)


class EvaluationError(ArithmeticError):
    def __init__(self, message, subterm=None):
        self.subterm = subterm
        super().__init__(message)


# ---------------------------------------------------------------------------
# smooth step: 0 for u <= 0, 1 for u >= 1, C-infinity in between


def _psi(t):
    return sp.exp(-1 / t)


_u = sp.Dummy("u")
_STEP_INTERIOR = _psi(_u) / (_psi(_u) + _psi(1 - _u))


@lru_cache(maxsize=None)
def _step_derivative_numeric(order):
    expr = sp.diff(_STEP_INTERIOR, _u, order) if order else _STEP_INTERIOR
    return sp.lambdify(_u, expr, modules="numpy")


def step_numeric(u, order=0):
    u = np.asarray(u, dtype=float)
    inside = (u > 0) & (u < 1)
    safe = np.where(inside, u, 0.5)
    with np.errstate(all="ignore"):
        vals = np.asarray(_step_derivative_numeric(order)(safe), dtype=float)
    vals = np.broadcast_to(vals, u.shape)
    if order == 0:
        outside = np.where(u >= 1, 1.0, 0.0)
    else:
        outside = np.zeros_like(u)
    out = np.where(inside, vals, outside)
    return out if out.ndim else float(out)


class StepDerivative(sp.Function):
    """order-th derivative of the smooth step; numeric only."""

    nargs = 2

    @classmethod
    def eval(cls, order, u):
        if u.is_Number:
            if u <= 0 or u >= 1:
                return sp.S.Zero

    def fdiff(self, argindex=2):
        if argindex != 2:
            raise sp.ArgumentIndexError(self, argindex)
        return StepDerivative(self.args[0] + 1, self.args[1])

    @staticmethod
    def _imp_(order, u):
        return step_numeric(u, int(order))


class Step(sp.Function):
    """Smooth monotone step from 0 (u <= 0) to 1 (u >= 1).

    Symbolic work is only meaningful on the two plateaus, see `on_plateau`.
    """

    nargs = 1

    @classmethod
    def eval(cls, u):
        if u.is_Number:
            if u <= 0:
                return sp.S.Zero
            if u >= 1:
                return sp.S.One

    def fdiff(self, argindex=1):
        if argindex != 1:
            raise sp.ArgumentIndexError(self, argindex)
        return StepDerivative(1, self.args[0])

    @staticmethod
    def _imp_(u):
        return step_numeric(u, 0)


def has_step(e):
    return bool(sp.sympify(e).atoms(Step, StepDerivative))


def on_plateau(e, value):
    """Replace step nodes by their constant plateau value (0 or 1)."""
    e = sp.sympify(e)
    reps = {s: sp.Integer(value) for s in e.atoms(Step)}
    reps.update({s: sp.S.Zero for s in e.atoms(StepDerivative)})
    return e.xreplace(reps)


# ---------------------------------------------------------------------------
# opaque functions


class OpaqueFunction(sp.Function):
    _arg_symbols: tuple = ()
    _derivatives: tuple = ()

    def fdiff(self, argindex=1):
        if not self._derivatives:
            raise sp.ArgumentIndexError(self, argindex)
        d = self._derivatives[argindex - 1]
        return sp.sympify(d).xreplace(dict(zip(self._arg_symbols, self.args)))


def opaque_function(name, arg_names, derivatives, numeric=None):
    """Declare a function known only through its partial derivatives.

    `derivatives` are expressions in the dummy argument symbols `arg_names`.
    `numeric` is an optional numpy-compatible implementation.
    """
    args = tuple(sp.Symbol(a, real=True) for a in arg_names)
    derivs = tuple(sp.sympify(d, locals={a.name: a for a in args}) for d in derivatives)
    attrs = {"nargs": len(args), "_arg_symbols": args, "_derivatives": derivs}
    if numeric is not None:
        attrs["_imp_"] = staticmethod(numeric)
    return type(name, (OpaqueFunction,), attrs)


# ---------------------------------------------------------------------------
# charts


@dataclass
class Chart:
    name: str
    coords: tuple
    params: tuple = ()
    derived: dict = field(default_factory=dict)
    opaque: dict = field(default_factory=dict)
    box: tuple | None = None
    singular: tuple = ()

    def __post_init__(self):
        self.coords = tuple(self.coords)
        if not self.coords:
            raise ValueError("a chart needs at least one coordinate")
        if len(set(self.coords)) != len(self.coords):
            raise ValueError(f"duplicate coordinate names in chart {self.name}")
        self.params = tuple(self.params)
        self.symbols = tuple(sp.Symbol(c, real=True) for c in self.coords)
        self.param_symbols = tuple(sp.Symbol(p, real=True) for p in self.params)
        if self.box is None:
            self.box = tuple((-1.5, 1.5) for _ in self.coords)
        self.derived = dict(self.derived)
        self.singular = tuple(self.singular)

    @property
    def dim(self):
        return len(self.coords)

    def symbol(self, name):
        return self.symbols[self.coords.index(name)]

    def namespace(self):
        ns = {"pi": sp.pi}
        ns.update({p.name: p for p in self.param_symbols})
        ns.update(self.derived)
        ns.update({s.name: s for s in self.symbols})
        return ns

    def add_radius(self, name="r"):
        """Declare `name` as the euclidean radius sqrt(sum of squares)."""
        self.derived[name] = sp.sqrt(sum(s**2 for s in self.symbols))
        return self.derived[name]

    def parse(self, text):
        return parse_expr(text, self)


# ---------------------------------------------------------------------------
# parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*|\.\d+|\d+)|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(text):
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, text, chart):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.ns = chart.namespace() if chart is not None else {"pi": sp.pi}
        self.funcs = dict(FUNCTIONS)
        self.funcs["step"] = Step
        self.funcs["dstep"] = StepDerivative
        if chart is not None:
            self.funcs.update(chart.opaque)

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, op):
        kind, val, pos = self.take()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r}, found {val or 'end of input'!r}", pos)

    def parse(self):
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", pos)
        return e

    def expr(self):
        e = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.take()
                rhs = self.term()
                e = e + rhs if val == "+" else e - rhs
            else:
                return e

    def term(self):
        e = self.unary()
        while True:
            kind, val, pos = self.peek()
            if kind == "op" and val in "*/":
                self.take()
                rhs = self.unary()
                if val == "*":
                    e = e * rhs
                else:
                    if rhs == 0:
                        raise ParseError("division by literal zero", pos)
                    e = e / rhs
            else:
                return e

    def unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return -self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.take()
            return base ** self.unary()
        return base

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return sp.Rational(val)
        if kind == "ident":
            nk, nv, _ = self.peek()
            if nk == "op" and nv == "(":
                self.take()
                args = [self.expr()]
                while self.peek()[0] == "op" and self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if val not in self.funcs:
                    raise ParseError(f"unknown function {val!r}", pos)
                try:
                    return self.funcs[val](*args)
                except TypeError as exc:
                    raise ParseError(f"wrong number of arguments for {val!r}", pos) from exc
            if val not in self.ns:
                raise ParseError(f"unknown symbol {val!r}", pos)
            return self.ns[val]
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ParseError(f"unexpected token {val or 'end of input'!r}", pos)


def parse_expr(text, chart=None):
    """Parse `text` in the fixed grammar into a sympy expression."""
    return _Parser(text, chart).parse()


# ---------------------------------------------------------------------------
# printing


class _GrammarPrinter(StrPrinter):
    def _print_Exp1(self, expr):
        return "exp(1)"

    def _print_Pow(self, expr, rational=False):
        return super()._print_Pow(expr, rational).replace("**", "^")

    def _print_Mul(self, expr):
        return super()._print_Mul(expr).replace("**", "^")

    def _print_Rational(self, expr):
        if expr.q == 1:
            return str(expr.p)
        return f"{expr.p}/{expr.q}"

    def _print_Float(self, expr):
        return self._print_Rational(sp.Rational(str(expr)))

    def _print_Step(self, expr):
        return f"step({self._print(expr.args[0])})"

    def _print_StepDerivative(self, expr):
        return f"dstep({self._print(expr.args[0])}, {self._print(expr.args[1])})"


def to_text(e):
    """Render an expression in the input grammar."""
    s = _GrammarPrinter().doprint(sp.sympify(e))
    return s.replace("**", "^")


def stable_text(e, chart=None, rounds=6):
    """Text that parses back to an expression printing identically (a fixed point of print o parse)."""
    text = to_text(e)
    for _ in range(rounds):
        again = to_text(parse_expr(text, chart))
        if again == text:
            return text
        text = again
    raise ValueError(f"expression text does not stabilise: {text[:80]}")


# ---------------------------------------------------------------------------
# canonical form


class _Extension:
    """Tower of algebraic generators introduced while canonicalizing."""

    def __init__(self):
        self.atoms = {}  # key -> placeholder symbol
        self.back = {}  # placeholder -> original expression
        self.relations = []  # (generator, degree, value): generator**degree == value
        self.counter = 0

    def _fresh(self):
        self.counter += 1
        return sp.Dummy(f"g{self.counter}")

    def atom_for(self, key, original):
        if key not in self.atoms:
            s = self._fresh()
            self.atoms[key] = s
            self.back[s] = original
        return self.atoms[key]

    def root(self, base, q):
        key = ("root", q, sp.srepr(base))
        if key not in self.atoms:
            s = self._fresh()
            self.atoms[key] = s
            self.back[s] = _restore(base, self) ** sp.Rational(1, q)
            self.relations.append((s, q, base))
        return self.atoms[key]


def _lift(e, ext):
    """Rewrite e as a rational expression in coordinates and placeholders."""
    if e.is_Atom:
        return e
    if e.is_Add:
        return sp.Add(*[_lift(a, ext) for a in e.args])
    if e.is_Mul:
        return sp.Mul(*[_lift(a, ext) for a in e.args])
    if e.is_Pow:
        base, ex = e.args
        if ex.is_Integer:
            return _lift(base, ext) ** ex
        if ex.is_Rational:
            lb = _reduce_full(_lift(base, ext), ext)
            if lb == 0:
                return sp.S.Zero
            if lb.is_Number and lb > 0:
                root_val = lb ** sp.Rational(1, ex.q)
                if root_val.is_Rational:
                    return root_val ** ex.p
            num, den = sp.fraction(sp.cancel(lb))
            # sqrt(N/D) = sqrt(N*D)/D keeps the generator polynomial
            g = ext.root(sp.expand(num * den ** (ex.q - 1)), ex.q)
            return (g / den) ** ex.p
        # symbolic exponent: treat as opaque atom
        la = _lift(base, ext)
        le = _lift(ex, ext)
        back = _restore(la, ext) ** _restore(le, ext)
        return ext.atom_for(("pow", sp.srepr(back)), back)
    if isinstance(e, sp.Function) or isinstance(e, sp.Derivative):
        lifted_args = [_canonical_lifted(_lift(a, ext), ext) for a in e.args]
        restored = [_restore(a, ext) for a in lifted_args]
        func = e.func
        if func is sp.sin:
            # sin(u)^2 = 1 - cos(u)^2
            cos_atom = ext.atom_for(_fkey("cos", restored), sp.cos(restored[0]))
            key = ("root", 2) + _fkey("sin", restored)
            if key not in ext.atoms:
                s = ext._fresh()
                ext.atoms[key] = s
                ext.back[s] = sp.sin(restored[0])
                ext.relations.append((s, 2, 1 - cos_atom**2))
            return ext.atoms[key]
        original = func(*restored)
        if original.is_Atom or not isinstance(original, (sp.Function, sp.Derivative)) or original.func is not func:
            return _lift(original, ext)
        return ext.atom_for(_fkey(func.__name__, restored), original)
    raise TypeError(f"unsupported expression node {type(e).__name__}")


def _fkey(name, args):
    return (name, tuple(sp.srepr(a) for a in args))


def _restore(e, ext):
    return e.xreplace(ext.back) if ext.back else e


def _reduce(poly_expr, ext):
    """Reduce every generator power below its degree."""
    e = sp.expand(poly_expr)
    for gen, deg, value in reversed(ext.relations):
        if not e.has(gen):
            continue
        p = sp.Poly(e, gen)
        out = sp.S.Zero
        for (k,), coeff in p.terms():
            q, r = divmod(k, deg)
            out += coeff * value**q * gen**r
        e = sp.expand(out)
    return e


def _reduce_full(e, ext):
    return _canonical_lifted(e, ext)


def _canonical_lifted(e, ext):
    e = sp.together(e)
    num, den = sp.fraction(e)
    num = _reduce(num, ext)
    den = _reduce(den, ext)
    for gen, deg, value in reversed(ext.relations):
        if not den.has(gen):
            continue
        if deg == 2:
            p = sp.Poly(den, gen)
            a = p.coeff_monomial(1)
            b = p.coeff_monomial(gen)
            conj = a - b * gen
            num = _reduce(num * conj, ext)
            den = _reduce(a**2 - b**2 * value, ext)
        # higher roots are left in the denominator
    if den == 0:
        raise ZeroDivisionError("expression has an identically vanishing denominator")
    return sp.cancel(num / den)


def canonical(e):
    """Normal form: equal inputs (within the supported class) map to equal outputs."""
    e = sp.sympify(e)
    ext = _Extension()
    lifted = _canonical_lifted(_lift(e, ext), ext)
    return _restore(lifted, ext)


def is_zero(e):
    e = sp.sympify(e)
    if e == 0:
        return True
    ext = _Extension()
    return _canonical_lifted(_lift(e, ext), ext) == 0


def diff(e, coord):
    """Exact partial derivative, returned in canonical form."""
    return canonical(sp.diff(sp.sympify(e), coord))


def substitute(e, mapping):
    """Simultaneous substitution of coordinates, then canonical form."""
    mapping = {k: sp.sympify(v) for k, v in mapping.items()}
    return canonical(sp.sympify(e).xreplace(mapping))


# ---------------------------------------------------------------------------
# numerics

TRANSCENDENTAL = (sp.atan, sp.exp, sp.sin, sp.cos, Step, StepDerivative, OpaqueFunction)


def is_transcendental(e):
    e = sp.sympify(e)
    return any(isinstance(a, TRANSCENDENTAL) for a in sp.preorder_traversal(e)) or e.has(sp.pi)


def _variables(chart):
    return list(chart.symbols) + list(chart.param_symbols)


def compile_numeric(e, chart):
    """Vectorized evaluator f(coords..., params...)."""
    return sp.lambdify(_variables(chart), sp.sympify(e), modules="numpy")


def eval_at(e, point, params=None, chart=None):
    """Evaluate at a point given as {coordinate: value}; raise on singular subterms."""
    e = sp.sympify(e)
    subs = {}
    params = params or {}
    for key, val in list(point.items()) + list(params.items()):
        sym = key if isinstance(key, sp.Symbol) else sp.Symbol(str(key), real=True)
        subs[sym] = float(val)
    missing = [s for s in e.free_symbols if s not in subs]
    if missing:
        raise EvaluationError(f"no value for {sorted(map(str, missing))}")
    order = sorted(subs, key=lambda s: s.name)
    f = sp.lambdify(order, e, modules="numpy")
    with np.errstate(all="ignore"):
        try:
            val = complex(f(*[subs[s] for s in order]))
        except ZeroDivisionError:
            val = complex("nan")
    if not (math.isfinite(val.real) and abs(val.imag) < 1e-14 * max(1.0, abs(val.real))):
        bad = _offending_subterm(e, subs)
        raise EvaluationError(f"singular value at {subs}: offending subterm {bad}", bad)
    return val.real


def _offending_subterm(e, subs):
    worst = e
    for sub in sp.preorder_traversal(e):
        if sub.is_Atom:
            continue
        order = sorted(sub.free_symbols, key=lambda s: s.name)
        with np.errstate(all="ignore"):
            try:
                v = complex(sp.lambdify(order, sub, modules="numpy")(*[subs[s] for s in order]))
            except ZeroDivisionError:
                v = complex("nan")
        if not math.isfinite(v.real) or not math.isfinite(v.imag) or abs(v.imag) > 1e-14:
            worst = sub
    return worst


_SAMPLING = {"points": None, "offset": 0}


@contextmanager
def sampling(points=None, seed=0):
    """Override the sample count and the Halton offset for every sampled comparison in the block."""
    old = dict(_SAMPLING)
    _SAMPLING.update(points=points, offset=int(seed))
    try:
        yield
    finally:
        _SAMPLING.update(old)


def halton_points(box, count=32, offset=None):
    """Deterministic unscrambled Halton points in an axis-aligned box."""
    box = np.asarray(box, dtype=float)
    sampler = qmc.Halton(d=len(box), scramble=False)
    offset = _SAMPLING["offset"] if offset is None else offset
    sampler.fast_forward(1 + offset)  # skip the corner
    unit = sampler.random(count)
    return box[:, 0] + unit * (box[:, 1] - box[:, 0])


def sample_points(chart, count=32, box=None, avoid=None, delta=1e-3):
    """Halton points in the chart box (plus parameters in [0.5, 1.5]) away from singular loci."""
    box = list(box if box is not None else chart.box)
    box += [(0.5, 1.5)] * len(chart.param_symbols)
    count = _SAMPLING["points"] or count
    pts = halton_points(box, count)
    singular = list(chart.singular) + list(avoid or [])
    if singular:
        keep = np.ones(len(pts), dtype=bool)
        for s in singular:
            f = compile_numeric(s, chart)
            with np.errstate(all="ignore"):
                vals = np.broadcast_to(np.asarray(f(*pts.T), dtype=float), (len(pts),))
            keep &= np.isfinite(vals) & (np.abs(vals) > delta)
        pts = pts[keep]
    return pts


def evaluate_many(e, chart, pts):
    f = compile_numeric(e, chart)
    with np.errstate(all="ignore"):
        try:
            vals = f(*np.asarray(pts).T)
        except ZeroDivisionError:
            vals = np.full(len(pts), np.nan)
    vals = np.asarray(vals, dtype=complex)
    vals = np.broadcast_to(vals, (len(pts),)).copy()
    bad = ~np.isfinite(vals) | (np.abs(vals.imag) > 1e-12 * np.maximum(1.0, np.abs(vals.real)))
    out = vals.real
    out[bad] = np.nan
    return out


@dataclass
class Comparison:
    equal: bool | None
    mode: str
    witness: dict | None = None
    max_error: float = 0.0
    points_used: int = 0

    @property
    def inconclusive(self):
        return self.equal is None

    def __bool__(self):
        return self.equal is True


def close(a, b, tol):
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


# transcendental expressions beyond this many operations skip straight to sampling in auto mode
AUTO_CANONICAL_BUDGET = 150


def equal(e1, e2, mode="canonical", chart=None, points=32, tol=1e-9, box=None, pts=None):
    """Compare two expressions canonically or at deterministic sample points.

    mode "auto" tries the canonical form and falls back to sampling when
    transcendental or step nodes are involved.
    """
    e1, e2 = sp.sympify(e1), sp.sympify(e2)
    if mode in ("canonical", "auto"):
        diff_expr = e1 - e2
        transcendental = is_transcendental(diff_expr) or has_step(diff_expr)
        if mode == "auto" and transcendental and chart is not None \
                and sp.count_ops(diff_expr) > AUTO_CANONICAL_BUDGET:
            return equal(e1, e2, "sampled", chart, points, tol, box, pts)
        if not has_step(diff_expr) and is_zero(diff_expr):
            return Comparison(True, "canonical")
        if mode == "canonical" or not transcendental:
            if chart is None:
                return Comparison(False, "canonical")
            # find a witness point for the report
            res = equal(e1, e2, "sampled", chart, points, tol, box, pts)
            if res.equal is False:
                res.mode = "canonical"
                return res
            return Comparison(False, "canonical")
    if chart is None:
        raise ValueError("sampled comparison needs a chart")
    if pts is None:
        pts = sample_points(chart, points, box)
    v1 = evaluate_many(e1, chart, pts)
    v2 = evaluate_many(e2, chart, pts)
    ok = np.isfinite(v1) & np.isfinite(v2)
    if not ok.any():
        return Comparison(None, "sampled", points_used=0)
    worst = 0.0
    for k in np.nonzero(ok)[0]:
        a, b = v1[k], v2[k]
        err = abs(a - b) / max(1.0, abs(a), abs(b))
        worst = max(worst, err)
        if err > tol:
            names = [s.name for s in _variables(chart)]
            return Comparison(False, "sampled", dict(zip(names, map(float, pts[k]))), err, int(ok.sum()))
    return Comparison(True, "sampled", None, worst, int(ok.sum()))
