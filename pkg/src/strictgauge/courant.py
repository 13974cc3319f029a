"""H-twisted generalized tangent bundle TM + T*M and lifts sigma = (rho, alpha)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import sympy as sp

from . import expr as ex
from .calculus import (DifferentialForm, VectorField, exterior_derivative, field_residual,
                       interior_product, lie_bracket, lie_derivative)
from .residuals import ConditionReport, evaluate_family


@dataclass
class GenSection:
    vector: VectorField
    form: DifferentialForm

    def __post_init__(self):
        if self.form.degree != 1:
            raise ValueError("the form part of a generalized section is a 1-form")

    @property
    def chart(self):
        return self.vector.chart

    def __add__(self, other):
        return GenSection(self.vector + other.vector, self.form + other.form)

    def __sub__(self, other):
        return GenSection(self.vector - other.vector, self.form - other.form)

    def __mul__(self, f):
        return GenSection(self.vector * f, self.form * f)

    __rmul__ = __mul__

    @classmethod
    def zero(cls, chart):
        return cls(VectorField(chart, [0] * chart.dim), DifferentialForm.zero(chart, 1))


def pairing(s1, s2):
    """iota_v w' + iota_v' w."""
    return interior_product(s1.vector, s2.form).value + interior_product(s2.vector, s1.form).value


def _require_closed(H, mode="auto"):
    if H is None:
        return
    dH = exterior_derivative(H)
    if dH.overflow:
        return
    if field_residual(dH, H.chart, mode)[0] is False:
        raise ValueError("twisting 3-form is not closed")


def dorfman_bracket(s1, s2, H=None, check_closed=True):
    """[v + w, v' + w'] = [v, v'] + (L_v w' - iota_v' dw - iota_v iota_v' H)."""
    if check_closed:
        _require_closed(H)
    form = lie_derivative(s1.vector, s2.form) - interior_product(s2.vector, exterior_derivative(s1.form))
    if H is not None:
        form = form - interior_product(s1.vector, interior_product(s2.vector, H))
    return GenSection(lie_bracket(s1.vector, s2.vector), form)


class Lift:
    """sigma(e_a) = v_a + alpha_a over an anchored bundle, twisted by a closed H."""

    def __init__(self, bundle, alphas, H=None, check_closed=True):
        if len(alphas) != bundle.rank:
            raise ValueError(f"need {bundle.rank} lift 1-forms, got {len(alphas)}")
        self.bundle = bundle
        self.alphas = list(alphas)
        self.H = H
        if check_closed:
            _require_closed(H)

    @property
    def chart(self):
        return self.bundle.chart

    def section(self, a):
        return GenSection(self.bundle.frame[a], self.alphas[a])


def isotropy_residuals(bundle, alphas):
    out = {}
    for a in range(bundle.rank):
        for b in range(a, bundle.rank):
            out[(a, b)] = (interior_product(bundle.frame[a], alphas[b]).value
                           + interior_product(bundle.frame[b], alphas[a]).value)
    return out


def closure_residuals(bundle, alphas, H):
    """L_{v_a} alpha_b - C^c_ab alpha_c - iota_{v_b}(d alpha_a - iota_{v_a} H)."""
    out = {}
    r = bundle.rank
    for a in range(r):
        da = exterior_derivative(alphas[a])
        if H is not None:
            da = da - interior_product(bundle.frame[a], H)
        for b in range(r):
            res = lie_derivative(bundle.frame[a], alphas[b]) - interior_product(bundle.frame[b], da)
            for c in range(r):
                coeff = bundle.structure[c][a][b]
                if coeff != 0:
                    res = res - alphas[c] * coeff
            out[(a, b)] = res
    return out


def exactness_residuals(bundle, alphas):
    """sum_a t^a_I alpha_a for every kernel generator I."""
    out = {}
    for I, row in enumerate(bundle.kernel):
        res = DifferentialForm.zero(bundle.chart, 1)
        for a, coeff in enumerate(row):
            if coeff != 0:
                res = res + alphas[a] * coeff
        out[I] = res
    return out


def check_isotropy(lift, mode="auto", tol=1e-9):
    rep = ConditionReport()
    rep.add(evaluate_family("isotropy", isotropy_residuals(lift.bundle, lift.alphas), lift.chart, mode, tol))
    return rep


def check_involutive_image(lift, mode="auto", tol=1e-9):
    rep = ConditionReport()
    rep.add(evaluate_family("involutive_image", closure_residuals(lift.bundle, lift.alphas, lift.H),
                            lift.chart, mode, tol))
    return rep


def check_lift_exactness(lift, mode="auto", tol=1e-9):
    rep = ConditionReport()
    rep.add(evaluate_family("exactness", exactness_residuals(lift.bundle, lift.alphas), lift.chart, mode, tol))
    rep.strictness = "strict" if rep.passed else "non-strict"
    return rep


def is_small_dirac(lift, mode="auto", tol=1e-9):
    return check_isotropy(lift, mode, tol).passed and check_involutive_image(lift, mode, tol).passed


def pointwise_image_rank(lift, points, tol=1e-10):
    """Rank of sigma(E) inside TM + T*M at sample points (may vary with the point)."""
    chart = lift.chart
    n = chart.dim
    fns = []
    for a in range(lift.bundle.rank):
        comps = list(lift.bundle.frame[a].comps) + lift.alphas[a].as_list()
        fns.append([ex.compile_numeric(c, chart) for c in comps])
    ranks = []
    for x in np.atleast_2d(points):
        M = np.array([[float(f(*x)) for f in row] for row in fns]).reshape(-1, 2 * n)
        ranks.append(int(np.linalg.matrix_rank(M, tol=tol)) if M.size else 0)
    return ranks


def dorfman_image_residual(lift, a, b):
    """[sigma(e_a), sigma(e_b)] - C^c_ab sigma(e_c), vector and form part."""
    br = dorfman_bracket(lift.section(a), lift.section(b), lift.H, check_closed=False)
    for c in range(lift.bundle.rank):
        coeff = lift.bundle.structure[c][a][b]
        if coeff != 0:
            br = br - lift.section(c) * coeff
    return br


def leibniz_anomaly(s, s2, f, H=None):
    """[f s, s'] - f [s, s'] + (rho(s') f) s, which should equal 0 + (s, s') df."""
    return (dorfman_bracket(s * f, s2, H) - dorfman_bracket(s, s2, H) * f
            + s * s2.vector.apply(f))


def right_leibniz_defect(s, s2, f, H=None):
    """[s, f s'] - f [s, s'] - (rho(s) f) s', identically zero for the Dorfman bracket."""
    return dorfman_bracket(s, s2 * f, H) - dorfman_bracket(s, s2, H) * f - s2 * s.vector.apply(f)


def pairing_term(s, s2, f):
    """0 + (s, s') df."""
    chart = s.chart
    df = exterior_derivative(DifferentialForm.scalar(chart, sp.sympify(f)))
    return GenSection(VectorField(chart, [0] * chart.dim), df * pairing(s, s2))
