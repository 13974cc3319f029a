"""Existence and strictness conditions for gauging a sigma model along a foliation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from . import expr as ex
from .calculus import (DifferentialForm, SymmetricTensor, christoffel, exterior_derivative,
                       field_residual, interior_product, lie_derivative, sym_product, wedge)
from .courant import closure_residuals, exactness_residuals, isotropy_residuals
from .residuals import ConditionReport, evaluate_family

EUCLIDEAN = 1
LORENTZIAN = -1


@dataclass
class ConnectionData:
    """omega[a][b][i] = omega^a_{b i}; phi has the same layout."""

    omega: list
    phi: list

    @classmethod
    def zero(cls, rank, dim):
        z = [[[sp.S.Zero] * dim for _ in range(rank)] for _ in range(rank)]
        return cls(z, [[[sp.S.Zero] * dim for _ in range(rank)] for _ in range(rank)])

    def validate(self, rank, dim):
        for arr in (self.omega, self.phi):
            if len(arr) != rank or any(len(row) != rank for row in arr) or \
                    any(len(c) != dim for row in arr for c in row):
                raise ValueError(f"connection data must have shape ({rank}, {rank}, {dim})")

    def omega_form(self, chart, upper, lower):
        """The 1-form omega^upper_lower."""
        return DifferentialForm.one_form(chart, self.omega[upper][lower])

    def phi_form(self, chart, upper, lower):
        return DifferentialForm.one_form(chart, self.phi[upper][lower])

    def is_zero(self):
        return all(c == 0 for arr in (self.omega, self.phi) for row in arr for col in row for c in col)


@dataclass
class GeneralAnsatz:
    """Extra fields of the enlarged ansatz.  r[b][a] = r^b_a, s likewise, chi[c][a][b] = chi^c_ab, psi likewise."""

    alpha_tilde: list
    gamma_tilde: list
    r: list
    s: list
    chi: list
    psi: list


class GaugingProblem:
    def __init__(self, chart, metric, bundle, B=None, H=None, alphas=None, connection=None,
                 sign=EUCLIDEAN, name="", mode="auto", ansatz=None):
        if B is None and H is None:
            B = DifferentialForm.zero(chart, 2)
        self.chart = chart
        self.metric = metric
        self.bundle = bundle
        self.B = B
        if B is not None:
            dB = exterior_derivative(B)
            if dB.overflow:
                dB = None
            if H is not None and dB is not None and field_residual(dB - H, chart, mode)[0] is False:
                raise ValueError("dB does not match the given H")
            H = H if H is not None else dB
        if H is not None and not exterior_derivative(H).overflow:
            if field_residual(exterior_derivative(H), chart, mode)[0] is False:
                raise ValueError("H is not closed")
        self.H = H
        self.minimal = alphas is None
        if alphas is None:
            if B is None:
                raise ValueError("minimal coupling needs a B-field")
            alphas = [-interior_product(v, B) for v in bundle.frame]
        self.alphas = list(alphas)
        if len(self.alphas) != bundle.rank:
            raise ValueError("one lift 1-form per frame element is required")
        self.connection = connection or ConnectionData.zero(bundle.rank, chart.dim)
        self.connection.validate(bundle.rank, chart.dim)
        if sign not in (EUCLIDEAN, LORENTZIAN):
            raise ValueError("sign must be +1 (euclidean) or -1 (lorentzian)")
        self.sign = sign
        self.name = name
        self.ansatz = ansatz

    @property
    def rank(self):
        return self.bundle.rank

    @property
    def frame(self):
        return self.bundle.frame

    def gamma(self, a, b):
        """gamma_ab = iota_{v_a} alpha_b."""
        return interior_product(self.frame[a], self.alphas[b]).value

    def rho_bar(self, a):
        """iota_{v_a} g."""
        return interior_product(self.frame[a], self.metric)

    def with_(self, **kw):
        args = dict(chart=self.chart, metric=self.metric, bundle=self.bundle, B=self.B, H=self.H,
                    alphas=None if self.minimal else self.alphas, connection=self.connection,
                    sign=self.sign, name=self.name, ansatz=self.ansatz)
        args.update(kw)
        return GaugingProblem(**args)


# ---------------------------------------------------------------------------
# residual builders


def _sum_forms(terms, chart, degree):
    out = DifferentialForm.zero(chart, degree)
    for t in terms:
        out = out + t
    return out


def _sum_sym(terms, chart):
    out = SymmetricTensor.zero(chart)
    for t in terms:
        out = out + t
    return out


def minimal_residuals(p):
    """L_{v_a}g - w^b_a v iota_b g + phi^b_a v iota_b B  and  L_{v_a}B - w^b_a ^ iota_b B -+ phi^b_a ^ iota_b g."""
    ch, conn = p.chart, p.connection
    one, two = {}, {}
    for a in range(p.rank):
        r1 = lie_derivative(p.frame[a], p.metric)
        r2 = lie_derivative(p.frame[a], p.B)
        for b in range(p.rank):
            w = conn.omega_form(ch, b, a)
            f = conn.phi_form(ch, b, a)
            ib_g = p.rho_bar(b)
            ib_B = interior_product(p.frame[b], p.B)
            if w.comps:
                r1 = r1 - sym_product(w, ib_g)
                r2 = r2 - wedge(w, ib_B)
            if f.comps:
                r1 = r1 + sym_product(f, ib_B)
                r2 = r2 - wedge(f, ib_g) * p.sign
        one[a] = r1
        two[a] = r2
    return one, two


def wz_residuals(p):
    """Residuals of the two invariance equations for g and H with lift forms alpha."""
    ch, conn = p.chart, p.connection
    one, two = {}, {}
    for a in range(p.rank):
        r1 = lie_derivative(p.frame[a], p.metric)
        r2 = -exterior_derivative(p.alphas[a])
        if p.H is not None:
            r2 = r2 + interior_product(p.frame[a], p.H)
        for b in range(p.rank):
            w = conn.omega_form(ch, b, a)
            f = conn.phi_form(ch, b, a)
            if w.comps:
                r1 = r1 - sym_product(w, p.rho_bar(b))
                r2 = r2 + wedge(w, p.alphas[b])
            if f.comps:
                r1 = r1 - sym_product(f, p.alphas[b])
                r2 = r2 - wedge(f, p.rho_bar(b)) * p.sign
        one[a] = r1
        two[a] = r2
    return one, two


def check_minimal_gB(p, mode="auto", tol=1e-9, strictness=True):
    rep = ConditionReport()
    one, two = minimal_residuals(p)
    rep.add(evaluate_family("condition1gB", one, p.chart, mode, tol))
    rep.add(evaluate_family("condition2gB", two, p.chart, mode, tol))
    if strictness:
        _attach_strictness(rep, p, mode, tol)
    return rep


def check_wz_gauging(p, mode="auto", tol=1e-9, strictness=True):
    rep = ConditionReport()
    one, two = wz_residuals(p)
    rep.add(evaluate_family("condition1gH", one, p.chart, mode, tol))
    rep.add(evaluate_family("condition2gH", two, p.chart, mode, tol))
    rep.add(evaluate_family("gamma_antisymmetry", isotropy_residuals(p.bundle, p.alphas), p.chart, mode, tol))
    rep.add(evaluate_family("Calpha", closure_residuals(p.bundle, p.alphas, p.H), p.chart, mode, tol))
    if strictness:
        _attach_strictness(rep, p, mode, tol)
    return rep


def check_gauging(p, mode="auto", tol=1e-9):
    """Minimal-coupling conditions when no lift was supplied, the WZ conditions otherwise."""
    if p.minimal:
        return check_minimal_gB(p, mode, tol)
    return check_wz_gauging(p, mode, tol)


@dataclass
class StrictnessResult:
    strict: bool | None
    residuals: dict
    family: object = None

    @property
    def verdict(self):
        return {True: "strict", False: "non-strict", None: "inconclusive"}[self.strict]

    def freezing_constraints(self):
        """The 1-forms t^a_I alpha_a whose pullback the field equations set to zero."""
        return {I: f for I, f in self.residuals.items() if f.comps}


def check_strictness(p, mode="auto", tol=1e-9):
    res = exactness_residuals(p.bundle, p.alphas)
    fam = evaluate_family("strictness", res, p.chart, mode, tol)
    return StrictnessResult(fam.verdict, res, fam)


def _attach_strictness(rep, p, mode, tol):
    st = check_strictness(p, mode, tol)
    rep.strictness = st.verdict if st.strict is not None else "not-checked"
    rep.strictness_residuals = st.family.summary()


# ---------------------------------------------------------------------------
# frame-independent reformulation


def _nabla_rho_bar(p, gamma_lc):
    """(nabla rho_bar)_{a, kj} as nested lists [a][k][j]."""
    ch, n, conn = p.chart, p.chart.dim, p.connection
    rb = [p.rho_bar(a).as_list() for a in range(p.rank)]
    out = []
    for a in range(p.rank):
        m = [[sp.S.Zero] * n for _ in range(n)]
        for k in range(n):
            for j in range(n):
                val = sp.diff(rb[a][j], ch.symbols[k])
                for l in range(n):
                    if gamma_lc[l][k][j] != 0:
                        val -= gamma_lc[l][k][j] * rb[a][l]
                for b in range(p.rank):
                    w = conn.omega[b][a][k]
                    if w != 0:
                        val -= w * rb[b][j]
                m[k][j] = val
        out.append(m)
    return out


def _sym(m, n):
    return sp.Matrix(n, n, lambda k, j: m[k][j] + m[j][k])


def _alt(m, n, chart):
    return DifferentialForm(chart, 2, {(k, j): m[k][j] - m[j][k] for k in range(n) for j in range(k + 1, n)})


def frame_independent_forms(p, mode="auto", tol=1e-9):
    """Sym/Alt (minimal coupling) or their lift analogues, computed through Christoffel symbols."""
    ch, n, conn = p.chart, p.chart.dim, p.connection
    nab = _nabla_rho_bar(p, christoffel(p.metric))
    rb = [p.rho_bar(a).as_list() for a in range(p.rank)]
    sym_res, alt_res = {}, {}
    if p.minimal:
        iB = [interior_product(v, p.B).as_list() for v in p.frame]
    al = [x.as_list() for x in p.alphas]
    for a in range(p.rank):
        # phi-contractions: phi^b_{a k} X_{b j}
        def phi_contract(X):
            return [[sum((conn.phi[b][a][k] * X[b][j] for b in range(p.rank)), sp.S.Zero)
                     for j in range(n)] for k in range(n)]

        if p.minimal:
            sym_res[a] = SymmetricTensor(ch, _sym(nab[a], n) + _sym(phi_contract(iB), n))
            cov = exterior_derivative(interior_product(p.frame[a], p.B))
            for b in range(p.rank):
                cov = cov - wedge(DifferentialForm.one_form(ch, conn.omega[b][a]), interior_product(p.frame[b], p.B))
            lhs = interior_product(p.frame[a], exterior_derivative(p.B)) + cov
            alt_res[a] = lhs - _alt(phi_contract(rb), n, ch) * p.sign
        else:
            sym_res[a] = SymmetricTensor(ch, _sym(nab[a], n) - _sym(phi_contract(al), n))
            cov = exterior_derivative(p.alphas[a])
            for b in range(p.rank):
                cov = cov - wedge(DifferentialForm.one_form(ch, conn.omega[b][a]), p.alphas[b])
            lhs = interior_product(p.frame[a], p.H) if p.H is not None else DifferentialForm.zero(ch, 2)
            alt_res[a] = lhs - cov - _alt(phi_contract(rb), n, ch) * p.sign
    rep = ConditionReport()
    if p.minimal:
        rep.add(evaluate_family("Sym", sym_res, ch, mode, tol))
        rep.add(evaluate_family("Alt", alt_res, ch, mode, tol))
    else:
        rep.add(evaluate_family("barrholambda", sym_res, ch, mode, tol))
        rep.add(evaluate_family("iotaHlambda", alt_res, ch, mode, tol))
    return rep


# ---------------------------------------------------------------------------
# gauge variation of the action


@dataclass
class GaugeVariation:
    line_coefficients: dict
    epsilon_part: dict
    lambda_part: DifferentialForm
    chart: object = None

    def epsilon_vanishes(self, mode="auto", tol=1e-9):
        for fam in self.line_coefficients.values():
            for t in fam.values():
                if field_residual(t, self.chart, mode, tol)[0] is not True:
                    return False
        return True


def gauge_variation_integrand(p, epsilon=None, lam=None):
    """Coefficients of the epsilon-variation of the gauged functional, and the lambda leftover.

    The five line coefficients (per frame index) must each vanish for
    epsilon-invariance.  `epsilon` are functions on the target (composed with
    X), `lam` formal coefficients of the kernel-valued 1-forms lambda^I.
    The lambda part is sum_I lam_I t^a_I alpha_a.
    """
    ch, conn, r = p.chart, p.connection, p.rank
    gam = [[sp.Rational(1, 2) * (p.gamma(a, b) - p.gamma(b, a)) for b in range(r)] for a in range(r)]
    ia = [[p.gamma(a, b) for b in range(r)] for a in range(r)]  # iota_{v_a} alpha_b
    line1, line2, line3, line4, line5 = {}, {}, {}, {}, {}
    for a in range(r):
        t1 = lie_derivative(p.frame[a], p.metric)
        iaH_da = -exterior_derivative(p.alphas[a])
        if p.H is not None:
            iaH_da = iaH_da + interior_product(p.frame[a], p.H)
        t2 = iaH_da
        for b in range(r):
            w = conn.omega_form(ch, b, a)
            f = conn.phi_form(ch, b, a)
            t1 = t1 - sym_product(w, p.rho_bar(b)) - sym_product(f, p.alphas[b])
            t2 = t2 + wedge(w, p.alphas[b]) - wedge(f, p.rho_bar(b)) * p.sign
        line1[a] = t1 * sp.Rational(1, 2)
        line2[a] = t2 * sp.Rational(1, 2)
        for b in range(r):
            t3 = lie_derivative(p.frame[a], p.alphas[b]) + interior_product(p.frame[b], iaH_da)
            for c in range(r):
                if p.bundle.structure[c][a][b] != 0:
                    t3 = t3 - p.alphas[c] * p.bundle.structure[c][a][b]
            for dd in range(r):
                coeff = gam[b][dd] - ia[b][dd]
                if coeff != 0:
                    t3 = t3 + conn.omega_form(ch, dd, a) * coeff
            line3[(a, b)] = -t3
            line5[(a, b)] = gam[a][b] - ia[a][b]
        for b in range(r):
            for c in range(r):
                val = sp.Rational(1, 2) * p.frame[a].apply(gam[b][c])
                for dd in range(r):
                    val += p.bundle.structure[dd][a][b] * gam[c][dd]
                    val += (gam[b][dd] - ia[b][dd]) * interior_product(p.frame[c], conn.omega_form(ch, dd, a)).value
                ib = interior_product(p.frame[b], iaH_da)
                val -= sp.Rational(1, 2) * interior_product(p.frame[c], ib).value
                line4[(a, b, c)] = val
    # only the part antisymmetric in (b, c) multiplies A^b ^ A^c
    line4 = {(a, b, c): (line4[(a, b, c)] - line4[(a, c, b)]) / 2
             for a in range(r) for b in range(r) for c in range(b + 1, r)}
    coeffs = {"DX^*DX": line1, "DX^DX": line2, "dX^A": line3, "A^A": line4, "deps^A": line5}
    eps = [sp.sympify(e) for e in (epsilon if epsilon is not None else sp.symbols(f"eps0:{r}"))]
    eps_part = {
        "DX^*DX": _sum_sym([line1[a] * eps[a] for a in range(r)], ch),
        "DX^DX": _sum_forms([line2[a] * eps[a] for a in range(r)], ch, 2),
        "dX^A": {b: _sum_forms([line3[(a, b)] * eps[a] for a in range(r)], ch, 1) for b in range(r)},
        "A^A": {(b, c): sum((line4[(a, b, c)] * eps[a] for a in range(r)), sp.S.Zero)
                for b in range(r) for c in range(b + 1, r)},
        "deps^A": dict(line5),
    }
    lam = [sp.sympify(x) for x in (lam if lam is not None else sp.symbols(f"lam0:{max(p.bundle.kernel_rank, 1)}"))]
    lpart = DifferentialForm.zero(ch, 1)
    for I, form in exactness_residuals(p.bundle, p.alphas).items():
        lpart = lpart + form * lam[I]
    return GaugeVariation(coeffs, eps_part, lpart, ch)


# ---------------------------------------------------------------------------
# general ansatz


def general_ansatz_residuals(p, an):
    """The two generalized invariance conditions and the seven constraints."""
    ch, r, conn, sg = p.chart, p.rank, p.connection, p.sign
    v, al, at = p.frame, p.alphas, an.alpha_tilde
    C = p.bundle.structure
    gam = [[p.gamma(a, b) for b in range(r)] for a in range(r)]
    gt = an.gamma_tilde
    H = p.H
    w = lambda up, lo: conn.omega_form(ch, up, lo)  # noqa: E731
    f = lambda up, lo: conn.phi_form(ch, up, lo)  # noqa: E731
    ip = lambda vec, form: interior_product(vec, form)  # noqa: E731

    def ipv(vec, form):
        return interior_product(vec, form).value

    fam = {k: {} for k in ("gencondition1", "gencondition2", "constraint1", "constraint2", "constraint3",
                           "constraint4", "constraint5", "constraint6", "constraint7")}
    for a in range(r):
        lg = lie_derivative(v[a], p.metric)
        g1 = lg
        for b in range(r):
            g1 = g1 + sym_product(w(b, a), at[b]) - sym_product(f(b, a), al[b])
        fam["gencondition1"][a] = g1
        ra = _sum_forms([al[b] * an.r[b][a] for b in range(r)], ch, 1)
        sa = _sum_forms([at[b] * an.s[b][a] for b in range(r)], ch, 1)
        g2 = ip(v[a], H) if H is not None else DifferentialForm.zero(ch, 2)
        g2 = g2 - exterior_derivative(ra) - exterior_derivative(sa) * sg
        for b in range(r):
            g2 = g2 + wedge(w(b, a), al[b]) + wedge(f(b, a), at[b]) * sg
        fam["gencondition2"][a] = g2
        fam["constraint5"][a] = (_sum_forms([al[b] * an.s[b][a] for b in range(r)], ch, 1)
                                 - _sum_forms([at[b] * an.r[b][a] for b in range(r)], ch, 1)
                                 - ip(v[a], p.metric))
        for b in range(r):
            c1 = sum((an.r[c][a] * gam[c][b] + sg * an.s[c][a] * gt[c][b] for c in range(r)), sp.S.Zero)
            fam["constraint1"][(a, b)] = c1 - ipv(v[a], al[b])
            c2 = sum((an.s[c][a] * gam[c][b] - an.r[c][a] * gt[c][b] for c in range(r)), sp.S.Zero)
            fam["constraint2"][(a, b)] = c2 - ipv(v[a], at[b])
            # constraint 3
            rhs = ip(v[b], exterior_derivative(ra + sa * sg))
            if H is not None:
                rhs = rhs + ip(v[a], ip(v[b], H))
            for c in range(r):
                rhs = rhs + al[c] * (C[c][a][b] - an.chi[c][b][a]) - at[c] * (sg * an.psi[c][b][a])
                rhs = rhs + w(c, a) * (gam[c][b] + ipv(v[b], al[c]))
                rhs = rhs + f(c, a) * (sg * (gt[c][b] + ipv(v[b], at[c])))
            fam["constraint3"][(a, b)] = lie_derivative(v[a], al[b]) - rhs
            # constraint 4
            rhs = -ip(v[b], lg)
            for c in range(r):
                rhs = rhs + at[c] * (C[c][a][b] - an.chi[c][b][a]) + al[c] * an.psi[c][b][a]
                rhs = rhs - w(c, a) * (gt[c][b] + ipv(v[b], at[c]))
                rhs = rhs + f(c, a) * (gam[c][b] + ipv(v[b], al[c]))
            fam["constraint4"][(a, b)] = lie_derivative(v[a], at[b]) - rhs
        for c in range(r):
            for b in range(c + 1, r):
                def anti(fn):
                    return (fn(c, b) - fn(b, c)) / 2

                rhs6 = anti(lambda cc, bb: sum((gam[dd][cc] * (C[dd][bb][a] + an.chi[dd][bb][a])
                                                + sg * gt[dd][cc] * an.psi[dd][bb][a]
                                                - gam[dd][cc] * ipv(v[bb], w(dd, a))
                                                - sg * gt[dd][cc] * ipv(v[bb], f(dd, a)) for dd in range(r)),
                                               sp.S.Zero))
                fam["constraint6"][(a, c, b)] = sp.Rational(1, 2) * v[a].apply(gam[c][b]) - rhs6
                rhs7 = anti(lambda cc, bb: sum((-gt[dd][cc] * (C[dd][bb][a] + an.chi[dd][bb][a])
                                                + gam[dd][cc] * an.psi[dd][bb][a]
                                                + gt[dd][cc] * ipv(v[bb], w(dd, a))
                                                - gam[dd][cc] * ipv(v[bb], f(dd, a)) for dd in range(r)),
                                               sp.S.Zero))
                fam["constraint7"][(a, c, b)] = sp.Rational(1, 2) * v[a].apply(gt[c][b]) - rhs7
    return fam


def check_general_ansatz(p, an=None, mode="auto", tol=1e-9):
    an = an or p.ansatz
    if an is None:
        raise ValueError("general ansatz fields are missing")
    rep = ConditionReport()
    for name, res in general_ansatz_residuals(p, an).items():
        rep.add(evaluate_family(name, res, p.chart, mode, tol))
    return rep


def main_ansatz(p):
    """r = identity, s = chi = psi = 0, alpha~ = -iota_v g, gamma~_ab = iota_a iota_b g."""
    r, ch = p.rank, p.chart
    eye = [[sp.S.One if a == b else sp.S.Zero for b in range(r)] for a in range(r)]
    zero2 = [[sp.S.Zero] * r for _ in range(r)]
    zero3 = [[[sp.S.Zero] * r for _ in range(r)] for _ in range(r)]
    at = [-p.rho_bar(a) for a in range(r)]
    gt = [[interior_product(p.frame[a], p.rho_bar(b)).value for b in range(r)] for a in range(r)]
    del ch
    return GeneralAnsatz(at, gt, eye, zero2, zero3, [[row[:] for row in m] for m in zero3])


# ---------------------------------------------------------------------------
# pointwise connection solver


@dataclass
class PointSolution:
    point: np.ndarray
    omega: np.ndarray  # [a, b, i]
    phi: np.ndarray
    residual: float
    nullity: int
    matrix: np.ndarray = field(repr=False, default=None)
    rhs: np.ndarray = field(repr=False, default=None)

    def distance_to_solutions(self, omega, phi):
        """Distance of a candidate (omega, phi) from the affine solution set, measured in the
        component orthogonal to the kernel of the linear system."""
        u = np.concatenate([np.ravel(omega), np.ravel(phi)])
        u0 = np.concatenate([self.omega.ravel(), self.phi.ravel()])
        proj = np.linalg.pinv(self.matrix, rcond=1e-10) @ (self.matrix @ (u - u0))
        return float(np.linalg.norm(proj))

    def candidate_residual(self, omega, phi):
        u = np.concatenate([np.ravel(omega), np.ravel(phi)])
        return float(np.linalg.norm(self.matrix @ u - self.rhs))


def _numeric(e, chart, x):
    e = sp.sympify(e)
    if e.is_Number:
        return float(e)
    return float(ex.compile_numeric(e, chart)(*x))


def connection_system(p, x):
    """Linear system M u = rhs for u = (omega, phi) at the point x."""
    ch, n, r, sg = p.chart, p.chart.dim, p.rank, p.sign
    wz = not p.minimal
    if wz:
        one, two = wz_residuals(p.with_(connection=ConnectionData.zero(r, n)))
    else:
        one, two = minimal_residuals(p.with_(connection=ConnectionData.zero(r, n)))
    rb = np.array([[_numeric(c, ch, x) for c in p.rho_bar(a).as_list()] for a in range(r)])
    if wz:
        other = np.array([[_numeric(c, ch, x) for c in p.alphas[a].as_list()] for a in range(r)])
    else:
        other = np.array([[_numeric(c, ch, x) for c in interior_product(p.frame[a], p.B).as_list()]
                          for a in range(r)])
    sym_idx = [(k, j) for k in range(n) for j in range(k, n)]
    alt_idx = [(k, j) for k in range(n) for j in range(k + 1, n)]
    rows = r * (len(sym_idx) + len(alt_idx))
    nunk = 2 * r * r * n
    M = np.zeros((rows, nunk))
    rhs = np.zeros(rows)

    def uidx(which, up, lo, i):
        return which * r * r * n + (up * r + lo) * n + i

    row = 0
    for a in range(r):
        const1 = one[a].matrix
        for (k, j) in sym_idx:
            rhs[row] = -_numeric(const1[k, j], ch, x)
            for b in range(r):
                for i in range(n):
                    # sym product (e_i v X)_{kj} = delta_ik X_j + delta_ij X_k
                    def sp_coeff(X):
                        return (X[j] if i == k else 0.0) + (X[k] if i == j else 0.0)

                    M[row, uidx(0, b, a, i)] += -sp_coeff(rb[b])
                    M[row, uidx(1, b, a, i)] += (-sp_coeff(other[b]) if wz else sp_coeff(other[b]))
            row += 1
        for (k, j) in alt_idx:
            rhs[row] = -_numeric(two[a].component(k, j), ch, x)
            for b in range(r):
                for i in range(n):
                    def wedge_coeff(X):
                        return (X[j] if i == k else 0.0) - (X[k] if i == j else 0.0)

                    M[row, uidx(0, b, a, i)] += (wedge_coeff(other[b]) if wz else -wedge_coeff(other[b]))
                    M[row, uidx(1, b, a, i)] += -sg * wedge_coeff(rb[b])
            row += 1
    return M, rhs


def solve_connection_pointwise(p, points, tikhonov=1e-12):
    """Minimal-norm (omega, phi) at each point solving the two invariance conditions."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if len(pts) == 0:
        raise ValueError("no sample points")
    r, n = p.rank, p.chart.dim
    out = []
    for x in pts:
        M, rhs = connection_system(p, x)
        if not np.all(np.isfinite(M)) or not np.all(np.isfinite(rhs)):
            continue
        A = M.T @ M + tikhonov * np.eye(M.shape[1])
        u = np.linalg.solve(A, M.T @ rhs)
        res = float(np.linalg.norm(M @ u - rhs))
        rank = np.linalg.matrix_rank(M, tol=1e-9)
        half = r * r * n
        out.append(PointSolution(x, u[:half].reshape(r, r, n), u[half:].reshape(r, r, n), res,
                                 M.shape[1] - rank, M, rhs))
    if not out:
        raise ValueError("every sample point is singular")
    return out


def solve_connection_symbolic(p):
    """Exact (omega, phi) solving the two invariance conditions; free parameters set to zero.

    Returns None when the linear system has no solution.
    """
    r, n = p.rank, p.chart.dim
    om = [[[sp.Symbol(f"w_{a}_{b}_{i}") for i in range(n)] for b in range(r)] for a in range(r)]
    ph = [[[sp.Symbol(f"f_{a}_{b}_{i}") for i in range(n)] for b in range(r)] for a in range(r)]
    trial = p.with_(connection=ConnectionData(om, ph))
    one, two = wz_residuals(trial) if not p.minimal else minimal_residuals(trial)
    eqs = []
    for a in range(r):
        eqs.extend(one[a].components().values())
        eqs.extend(two[a].components().values())
    unknowns = [s for arr in (om, ph) for row in arr for col in row for s in col]
    eqs = [sp.expand(e) for e in eqs if e != 0]
    sol = sp.linsolve(eqs, unknowns)
    if not sol:
        return None
    values = next(iter(sol))
    zero = {u: 0 for u in unknowns}
    vals = [sp.cancel(sp.sympify(v).xreplace(zero)) for v in values]
    it = iter(vals)
    omega = [[[next(it) for _ in range(n)] for _ in range(r)] for _ in range(r)]
    phi = [[[next(it) for _ in range(n)] for _ in range(r)] for _ in range(r)]
    return ConnectionData(omega, phi)
