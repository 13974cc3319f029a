"""Exterior and tensor calculus on a single chart.

Conventions: a p-form stores only components with strictly increasing
indices and those numbers are the tensor components, so that
dx^i ^ dx^j = dx^i (x) dx^j - dx^j (x) dx^i.  Interior products contract
the first slot.
"""
from __future__ import annotations

from itertools import combinations

import sympy as sp

from . import expr as ex

MAX_DEGREE = 3


def _perm_sign(seq):
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


def _sorted_with_sign(idx):
    """(sign, increasing tuple) or (0, None) for repeated indices."""
    if len(set(idx)) != len(idx):
        return 0, None
    return _perm_sign(idx), tuple(sorted(idx))


class VectorField:
    def __init__(self, chart, comps):
        comps = tuple(sp.sympify(c) for c in comps)
        if len(comps) != chart.dim:
            raise ValueError(f"vector field needs {chart.dim} components, got {len(comps)}")
        self.chart = chart
        self.comps = comps

    def __getitem__(self, i):
        return self.comps[i]

    def __add__(self, other):
        return VectorField(self.chart, [a + b for a, b in zip(self.comps, other.comps)])

    def __sub__(self, other):
        return VectorField(self.chart, [a - b for a, b in zip(self.comps, other.comps)])

    def __neg__(self):
        return VectorField(self.chart, [-a for a in self.comps])

    def __mul__(self, f):
        f = sp.sympify(f)
        return VectorField(self.chart, [f * a for a in self.comps])

    __rmul__ = __mul__

    def apply(self, f):
        """Directional derivative v(f)."""
        return sum((c * sp.diff(f, s) for c, s in zip(self.comps, self.chart.symbols)), sp.S.Zero)

    def components(self):
        return {(i,): c for i, c in enumerate(self.comps)}

    def __repr__(self):
        return f"VectorField({self.chart.name}, {list(self.comps)})"


class DifferentialForm:
    """Antisymmetric covariant tensor of degree 0..3 with sparse increasing storage."""

    def __init__(self, chart, degree, comps=None, overflow=False):
        if degree < 0 or (degree > min(chart.dim, MAX_DEGREE) and not overflow):
            raise ValueError(f"degree {degree} not supported on a {chart.dim}-dimensional chart")
        self.chart = chart
        self.degree = degree
        self.overflow = overflow
        store = {}
        for idx, val in (comps or {}).items():
            idx = tuple(idx) if not isinstance(idx, int) else (idx,)
            if len(idx) != degree:
                raise ValueError(f"index {idx} does not match degree {degree}")
            sign, key = _sorted_with_sign(idx)
            if sign == 0:
                continue
            val = sp.sympify(val) * sign
            store[key] = store.get(key, sp.S.Zero) + val
        self.comps = {k: v for k, v in store.items() if v != 0}

    @classmethod
    def scalar(cls, chart, f):
        return cls(chart, 0, {(): f})

    @classmethod
    def one_form(cls, chart, comps):
        return cls(chart, 1, {(i,): c for i, c in enumerate(comps)})

    @classmethod
    def zero(cls, chart, degree):
        return cls(chart, degree, {})

    def component(self, *idx):
        if len(idx) == 1 and isinstance(idx[0], tuple):
            idx = idx[0]
        sign, key = _sorted_with_sign(idx)
        if sign == 0:
            return sp.S.Zero
        return sign * self.comps.get(key, sp.S.Zero)

    def keys(self):
        return list(combinations(range(self.chart.dim), self.degree))

    def components(self):
        return {k: self.comps.get(k, sp.S.Zero) for k in self.keys()}

    def as_list(self):
        """1-form components as a list."""
        if self.degree != 1:
            raise ValueError("as_list is only for 1-forms")
        return [self.component(i) for i in range(self.chart.dim)]

    @property
    def value(self):
        if self.degree != 0:
            raise ValueError("value is only for 0-forms")
        return self.comps.get((), sp.S.Zero)

    def _check(self, other):
        if not isinstance(other, DifferentialForm) or other.degree != self.degree:
            raise ValueError("forms of different degree cannot be added")

    def __add__(self, other):
        self._check(other)
        out = dict(self.comps)
        for k, v in other.comps.items():
            out[k] = out.get(k, sp.S.Zero) + v
        return DifferentialForm(self.chart, self.degree, out)

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return DifferentialForm(self.chart, self.degree, {k: -v for k, v in self.comps.items()})

    def __mul__(self, f):
        f = sp.sympify(f)
        return DifferentialForm(self.chart, self.degree, {k: f * v for k, v in self.comps.items()})

    __rmul__ = __mul__

    def map(self, fn):
        return DifferentialForm(self.chart, self.degree, {k: fn(v) for k, v in self.comps.items()})

    def __repr__(self):
        return f"DifferentialForm({self.chart.name}, deg={self.degree}, {self.comps})"


class SymmetricTensor:
    """Symmetric covariant 2-tensor, stored as a full sympy matrix."""

    def __init__(self, chart, matrix):
        m = sp.Matrix(matrix)
        if m.shape != (chart.dim, chart.dim):
            raise ValueError("symmetric tensor has the wrong shape")
        for i in range(chart.dim):
            for j in range(i + 1, chart.dim):
                if m[i, j] != m[j, i] and not ex.is_zero(m[i, j] - m[j, i]):
                    raise ValueError(f"matrix is not symmetric at ({i}, {j})")
        self.chart = chart
        self.matrix = m

    def __getitem__(self, ij):
        return self.matrix[ij]

    def components(self):
        n = self.chart.dim
        return {(i, j): self.matrix[i, j] for i in range(n) for j in range(i, n)}

    def __add__(self, other):
        return SymmetricTensor(self.chart, self.matrix + other.matrix)

    def __sub__(self, other):
        return SymmetricTensor(self.chart, self.matrix - other.matrix)

    def __neg__(self):
        return SymmetricTensor(self.chart, -self.matrix)

    def __mul__(self, f):
        return SymmetricTensor(self.chart, sp.sympify(f) * self.matrix)

    __rmul__ = __mul__

    @classmethod
    def zero(cls, chart):
        return cls(chart, sp.zeros(chart.dim, chart.dim))

    def __repr__(self):
        return f"SymmetricTensor({self.chart.name}, {self.matrix.tolist()})"


class MetricField(SymmetricTensor):
    def __init__(self, chart, matrix, signature="riemannian"):
        super().__init__(chart, matrix)
        det = self.matrix.det(method="berkowitz")
        if ex.is_zero(det):
            raise ValueError("metric determinant vanishes identically")
        self.signature = signature
        self._inverse = None

    @classmethod
    def diagonal(cls, chart, entries, signature="riemannian"):
        return cls(chart, sp.diag(*entries), signature)

    @classmethod
    def flat(cls, chart):
        return cls(chart, sp.eye(chart.dim))

    @property
    def inverse(self):
        if self._inverse is None:
            inv = self.matrix.inv()
            self._inverse = inv.applyfunc(sp.cancel)
        return self._inverse


# ---------------------------------------------------------------------------
# algebraic operations


def wedge(a, b):
    """Graded-antisymmetric product, alpha ^ beta = alpha (x) beta - beta (x) alpha on 1-forms."""
    if a.chart is not b.chart and a.chart.coords != b.chart.coords:
        raise ValueError("forms live on different charts")
    chart = a.chart
    p, q = a.degree, b.degree
    deg = p + q
    if deg > min(chart.dim, MAX_DEGREE):
        return DifferentialForm(chart, deg, {}, overflow=True)
    out = {}
    for idx in combinations(range(chart.dim), deg):
        total = sp.S.Zero
        for left in combinations(range(deg), p):
            right = tuple(k for k in range(deg) if k not in left)
            sign = _perm_sign(left + right)
            ia = tuple(idx[k] for k in left)
            ib = tuple(idx[k] for k in right)
            va = a.comps.get(ia)
            vb = b.comps.get(ib)
            if va is None or vb is None:
                continue
            total += sign * va * vb
        if total != 0:
            out[idx] = total
    return DifferentialForm(chart, deg, out)


def sym_product(a, b):
    """alpha v beta = alpha (x) beta + beta (x) alpha."""
    al, bl = a.as_list(), b.as_list()
    n = a.chart.dim
    m = sp.Matrix(n, n, lambda i, j: al[i] * bl[j] + al[j] * bl[i])
    return SymmetricTensor(a.chart, m)


def exterior_derivative(a):
    chart = a.chart
    p = a.degree
    if p + 1 > min(chart.dim, MAX_DEGREE):
        return DifferentialForm(chart, p + 1, {}, overflow=True)
    out = {}
    syms = chart.symbols
    for idx in combinations(range(chart.dim), p + 1):
        total = sp.S.Zero
        for k in range(p + 1):
            rest = idx[:k] + idx[k + 1:]
            c = a.comps.get(rest)
            if c is not None:
                total += (-1) ** k * sp.diff(c, syms[idx[k]])
        if total != 0:
            out[idx] = total
    return DifferentialForm(chart, p + 1, out)


d = exterior_derivative


def interior_product(v, a):
    """Contraction of a vector field into the first slot of a form or a symmetric tensor."""
    chart = v.chart
    if isinstance(a, SymmetricTensor):
        comps = [sum((v[i] * a.matrix[i, j] for i in range(chart.dim)), sp.S.Zero) for j in range(chart.dim)]
        return DifferentialForm.one_form(chart, comps)
    if a.degree == 0:
        raise ValueError("cannot contract a vector field into a function")
    out = {}
    for rest in combinations(range(chart.dim), a.degree - 1):
        total = sp.S.Zero
        for i in range(chart.dim):
            c = a.component((i,) + rest)
            if c != 0:
                total += v[i] * c
        if total != 0:
            out[rest] = total
    return DifferentialForm(chart, a.degree - 1, out)


iota = interior_product


def lie_bracket(v, w):
    """[v, w]^i = v^j d_j w^i - w^j d_j v^i."""
    return VectorField(v.chart, [v.apply(w[i]) - w.apply(v[i]) for i in range(v.chart.dim)])


def lie_derivative(v, t):
    """Lie derivative of a function, form, vector field or symmetric tensor."""
    if isinstance(t, VectorField):
        return lie_bracket(v, t)
    if isinstance(t, SymmetricTensor):
        chart = v.chart
        n = chart.dim
        g = t.matrix
        dv = [[sp.diff(v[k], s) for s in chart.symbols] for k in range(n)]  # dv[k][i] = d_i v^k

        def entry(i, j):
            val = v.apply(g[i, j])
            for k in range(n):
                val += g[k, j] * dv[k][i] + g[i, k] * dv[k][j]
            return val

        return SymmetricTensor(chart, sp.Matrix(n, n, entry))
    if not isinstance(t, DifferentialForm):
        return v.apply(t)
    if t.degree == 0:
        return DifferentialForm.scalar(t.chart, v.apply(t.value))
    out = interior_product(v, exterior_derivative(t)) if not exterior_derivative(t).overflow else None
    dio = exterior_derivative(interior_product(v, t))
    return dio if out is None else out + dio


def christoffel(g):
    """Levi-Civita symbols as gamma[k][i][j] = Gamma^k_{ij}."""
    chart = g.chart
    n = chart.dim
    inv = g.inverse
    syms = chart.symbols
    dg = [[[sp.diff(g.matrix[i, j], syms[k]) for k in range(n)] for j in range(n)] for i in range(n)]
    gamma = [[[sp.S.Zero] * n for _ in range(n)] for _ in range(n)]
    for k in range(n):
        for i in range(n):
            for j in range(i, n):
                val = sp.S.Zero
                for l in range(n):
                    if inv[k, l] == 0:
                        continue
                    val += inv[k, l] * (dg[l][j][i] + dg[l][i][j] - dg[i][j][l])
                val = val / 2
                gamma[k][i][j] = gamma[k][j][i] = val
    return gamma


# ---------------------------------------------------------------------------
# charts and transport


class ChartTransition:
    """Coordinate change between two charts.

    `source_in_target` expresses every source coordinate through target
    coordinates, `target_in_source` is the inverse.  `domain` is a list of
    expressions over the target chart that must be positive on the overlap.
    """

    def __init__(self, source, target, source_in_target, target_in_source, domain=()):
        self.source = source
        self.target = target
        self.fwd = [sp.sympify(source_in_target[c]) for c in source.coords]
        self.inv = [sp.sympify(target_in_source[c]) for c in target.coords]
        self.domain = tuple(domain)
        self._jac = None
        self._jac_inv = None

    def reversed(self):
        return ChartTransition(
            self.target, self.source,
            dict(zip(self.target.coords, self.inv)),
            dict(zip(self.source.coords, self.fwd)),
        )

    def pull(self, e):
        """Express a source-chart function through target coordinates."""
        return sp.sympify(e).xreplace(dict(zip(self.source.symbols, self.fwd)))

    @property
    def jacobian(self):
        """d(source coords)/d(target coords) as a function of target coords."""
        if self._jac is None:
            self._jac = sp.Matrix(self.source.dim, self.target.dim,
                                  lambda i, j: sp.diff(self.fwd[i], self.target.symbols[j]))
        return self._jac

    @property
    def jacobian_inverse(self):
        """d(target coords)/d(source coords), expressed through target coords."""
        if self._jac_inv is None:
            m = sp.Matrix(self.target.dim, self.source.dim,
                          lambda i, j: sp.diff(self.inv[i], self.source.symbols[j]))
            self._jac_inv = m.applyfunc(self.pull)
        return self._jac_inv

    def roundtrip_residuals(self):
        """forward after inverse minus identity, per target coordinate."""
        back = dict(zip(self.target.symbols, self.inv))
        return [sp.sympify(f).xreplace(back) - s for f, s in zip(self.fwd, self.source.symbols)]


def chart_transport(t, tr):
    """Move a field from tr.source to tr.target (pullback for covariant fields)."""
    tgt = tr.target
    if isinstance(t, DifferentialForm):
        if t.degree == 0:
            return DifferentialForm.scalar(tgt, tr.pull(t.value))
        jac = tr.jacobian
        out = {}
        for jdx in combinations(range(tgt.dim), t.degree):
            total = sp.S.Zero
            for idx, val in t.comps.items():
                minor = jac.extract(list(idx), list(jdx)).det()
                if minor != 0:
                    total += tr.pull(val) * minor
            total = ex.canonical(total)
            if total != 0:
                out[jdx] = total
        return DifferentialForm(tgt, t.degree, out)
    if isinstance(t, SymmetricTensor):
        jac = tr.jacobian
        pulled = t.matrix.applyfunc(tr.pull)
        m = (jac.T * pulled * jac).applyfunc(ex.canonical)
        if isinstance(t, MetricField):
            return MetricField(tgt, m, t.signature)
        return SymmetricTensor(tgt, m)
    if isinstance(t, VectorField):
        jinv = tr.jacobian_inverse
        comps = [tr.pull(c) for c in t.comps]
        return VectorField(tgt, [sum((jinv[j, i] * comps[i] for i in range(tr.source.dim)), sp.S.Zero)
                                 for j in range(tgt.dim)])
    return tr.pull(t)


def identity_transition(chart):
    m = {c: s for c, s in zip(chart.coords, chart.symbols)}
    return ChartTransition(chart, chart, m, m)


# ---------------------------------------------------------------------------
# comparison helpers


def components_of(t):
    """Flat {index: expression} view of any field."""
    if isinstance(t, (DifferentialForm, SymmetricTensor, VectorField)):
        return t.components()
    return {(): sp.sympify(t)}


def field_residual(t, chart=None, mode="auto", tol=1e-9, points=32, pts=None):
    """Compare every component of t against zero; returns (ok, worst, witness, failing)."""
    chart = chart or t.chart
    failing = []
    witness = None
    verdict = True
    worst = 0.0
    for idx, val in components_of(t).items():
        res = ex.equal(val, 0, mode=mode, chart=chart, tol=tol, points=points, pts=pts)
        worst = max(worst, float(res.max_error))
        if res.equal is False:
            verdict = False
            failing.append(idx)
            if witness is None:
                witness = res.witness
        elif res.equal is None and verdict is True:
            verdict = None
    return verdict, worst, witness, failing


def fields_equal(a, b, mode="auto", tol=1e-9, points=32, pts=None):
    return field_residual(_difference(a, b), a.chart, mode, tol, points, pts)[0] is True


def _difference(a, b):
    if isinstance(a, DifferentialForm) and isinstance(b, DifferentialForm):
        return a - b
    if isinstance(a, SymmetricTensor):
        return SymmetricTensor(a.chart, a.matrix - b.matrix)
    if isinstance(a, VectorField):
        return a - b
    return sp.sympify(a) - sp.sympify(b)
