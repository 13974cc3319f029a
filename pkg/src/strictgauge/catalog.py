"""Worked examples as ready-to-check gauging problems."""
from __future__ import annotations

from dataclasses import dataclass, field

import sympy as sp

from . import expr as ex
from .bundle import build_bundle
from .calculus import (ChartTransition, DifferentialForm, MetricField, VectorField, chart_transport,
                       christoffel, exterior_derivative, interior_product)
from .expr import Chart, Step
from .courant import exactness_residuals
from .gauge import EUCLIDEAN, LORENTZIAN, ConnectionData, GaugingProblem, solve_connection_symbolic

NAMES = (
    "toy_rotation",
    "toy_rotation:polar",
    "toy_rotation_extended",
    "r3_flux:good",
    "r3_flux:bad",
    "r3_flux:wrong",
    "su2:gg",
    "su2:strict_north",
    "su2:strict_south",
    "su2:almost_strict",
    "poisson:3_1",
    "poisson:3_2",
    "poisson:3_3",
    "poisson:3_4",
    "poisson:3_5",
    "full_tangent",
    "full_tangent:with_B",
)


@dataclass
class CatalogEntry:
    name: str
    problem: GaugingProblem
    transversal: object = None  # leaf-invariant function used for freezing diagnostics
    charts: dict = field(default_factory=dict)
    transitions: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)


class CatalogError(ValueError):
    pass


def _eps3(a, b, c):
    return sp.LeviCivita(a, b, c)


def plane_chart():
    return Chart("plane", ("x", "y"), box=((-1.5, 1.5), (-1.5, 1.5)))


def space_chart(name="R3", coords=("x", "y", "z"), radius=None, singular_radius=False):
    c = Chart(name, coords, box=((-1.2, 1.3),) * 3)
    if radius:
        r = c.add_radius(radius)
        if singular_radius:
            c.singular = (r,)
    return c


def rotation_frame(chart):
    """rho_a = -eps_abc x^b d_c, so that [rho_a, rho_b] = eps_abc rho_c."""
    xs = chart.symbols
    return [VectorField(chart, [-sum(_eps3(a, b, c) * xs[b] for b in range(3)) for c in range(3)])
            for a in range(3)]


def so3_bundle(chart, mode="auto"):
    xs = chart.symbols
    C = [[[_eps3(a, b, c) for b in range(3)] for a in range(3)] for c in range(3)]
    return build_bundle(chart, rotation_frame(chart), C, [list(xs)], mode=mode)


# ---------------------------------------------------------------------------
# plane rotation


def toy_rotation():
    ch = plane_chart()
    x, y = ch.symbols
    b = build_bundle(ch, [VectorField(ch, [-y, x])], [[[0]]], [])
    p = GaugingProblem(ch, MetricField.flat(ch), b, B=DifferentialForm.zero(ch, 2), name="toy_rotation")
    return CatalogEntry("toy_rotation", p, transversal=sp.sqrt(x**2 + y**2))


def toy_rotation_polar():
    """The rotation model in the adapted chart (r, phi): g = dr^2 + r^2 dphi^2, frame d_phi."""
    ch = Chart("polar", ("r", "phi"), box=((0.5, 1.5), (-3.0, 3.0)))
    r, phi = ch.symbols
    ch.singular = (r,)
    b = build_bundle(ch, [VectorField(ch, [0, 1])], [[[0]]], [])
    p = GaugingProblem(ch, MetricField.diagonal(ch, [1, r**2]), b, B=DifferentialForm.zero(ch, 2),
                       name="toy_rotation:polar")
    return CatalogEntry("toy_rotation:polar", p, transversal=r)


def toy_rotation_extended():
    ch = plane_chart()
    x, y = ch.symbols
    b = build_bundle(ch, [VectorField(ch, [-y, x]), VectorField(ch, [0, 0])],
                     [[[0, 0], [0, 0]], [[0, 0], [0, 0]]], [[0, 1]])
    alphas = [DifferentialForm.zero(ch, 1), DifferentialForm.one_form(ch, [2 * x, 2 * y])]
    p = GaugingProblem(ch, MetricField.flat(ch), b, B=DifferentialForm.zero(ch, 2), alphas=alphas,
                       name="toy_rotation_extended")
    return CatalogEntry("toy_rotation_extended", p, transversal=sp.sqrt(x**2 + y**2))


# ---------------------------------------------------------------------------
# R^3 with constant flux


def r3_binv(chart):
    x, y, z = chart.symbols
    return DifferentialForm(chart, 2, {(1, 2): x / 3, (2, 0): y / 3, (0, 1): z / 3})


def r3_fxyz(chart):
    x, y, z = chart.symbols
    return [x * (y**2 + z**2) / 3, -y * (x**2 + z**2) / 6, -z * (x**2 + y**2) / 6]


def r3_betas(chart, shift=False):
    """beta_a with L_{rho_a} B = d beta_a, built from the explicit f_a."""
    x, y, z = chart.symbols
    f = r3_fxyz(chart)
    if shift:
        f = [f[0] + x, f[1] + y, f[2] + z]
    base = [DifferentialForm.zero(chart, 1),
            DifferentialForm.one_form(chart, [0, (z**2 - x**2) / 2, 0]),
            DifferentialForm.one_form(chart, [0, 0, (y**2 - x**2) / 2])]
    return [base[a] + exterior_derivative(DifferentialForm.scalar(chart, f[a])) for a in range(3)]


def r3_flux(variant="good"):
    if variant not in ("good", "bad", "wrong"):
        raise CatalogError(f"unknown r3_flux variant {variant!r}")
    ch = space_chart()
    x, y, z = ch.symbols
    bundle = so3_bundle(ch)
    B = DifferentialForm(ch, 2, {(1, 2): x})
    H = DifferentialForm(ch, 3, {(0, 1, 2): 1})
    binv = r3_binv(ch)
    if variant == "wrong":
        alphas = [-interior_product(v, B) for v in bundle.frame]
    else:
        alphas = [-interior_product(v, binv) for v in bundle.frame]
        if variant == "bad":
            alphas = [alphas[a] + DifferentialForm.one_form(ch, [1 if i == a else 0 for i in range(3)])
                      for a in range(3)]
    p = GaugingProblem(ch, MetricField.flat(ch), bundle, B=B, H=H, alphas=alphas, name=f"r3_flux:{variant}")
    return CatalogEntry(f"r3_flux:{variant}", p, transversal=sp.sqrt(x**2 + y**2 + z**2),
                        extras={"B_inv": binv, "beta": r3_betas(ch)})


# ---------------------------------------------------------------------------
# SU(2) WZW in stereographic charts


def su2_charts():
    north = space_chart("N", ("x", "y", "z"), radius="r", singular_radius=True)
    south = space_chart("S", ("xb", "yb", "zb"), radius="rb", singular_radius=True)
    rb2 = sum(s**2 for s in south.symbols)
    r2 = sum(s**2 for s in north.symbols)
    tr = ChartTransition(north, south,
                         {c: s / rb2 for c, s in zip(north.coords, south.symbols)},
                         {c: s / r2 for c, s in zip(south.coords, north.symbols)})
    return north, south, tr


def su2_h(r):
    return (r**2 - 1) / (r**2 * (r**2 + 1) ** 2) + sp.atan(r) / r**3


def su2_background(chart):
    r = chart.derived[[k for k in chart.derived][0]]
    g = MetricField(chart, sp.eye(3) * 4 / (r**2 + 1) ** 2)
    H = DifferentialForm(chart, 3, {(0, 1, 2): 16 / (r**2 + 1) ** 3})
    return g, H


def su2_gamma(chart, sign=1):
    """gamma_a(x) = 2 h(r) (r^2 dx^a - x^a x^b dx^b)."""
    xs = chart.symbols
    r = chart.derived[[k for k in chart.derived][0]]
    h = su2_h(r)
    return [DifferentialForm.one_form(chart, [sign * 2 * h * ((r**2 if i == a else 0) - xs[a] * xs[i])
                                              for i in range(3)]) for a in range(3)]


def su2_alpha_gg(chart):
    xs = chart.symbols
    r = chart.derived[[k for k in chart.derived][0]]
    return [DifferentialForm.one_form(chart, [4 / (r**2 + 1) ** 2 * ((r**2 if i == a else 0) - xs[a] * xs[i])
                                              - (2 / (r**2 + 1) if i == a else 0) for i in range(3)])
            for a in range(3)]


def su2_binv_north(chart):
    xs = chart.symbols
    r = chart.derived["r"]
    h = su2_h(r)
    comps = {}
    for a in range(3):
        for b in range(3):
            for c in range(3):
                e = _eps3(a, b, c)
                if e:
                    comps[(b, c)] = comps.get((b, c), 0) + h * e * xs[a]
    # comps holds both orderings; the form constructor folds (c, b) onto (b, c)
    return DifferentialForm(chart, 2, comps)


def _bump_defect(chart, eps):
    """d(pi F(rb) x^a / rb) with F a smooth step from 0 (rb <= eps/2) to 1 (rb >= eps)."""
    rb = chart.derived["rb"]
    F = Step(2 * rb / eps - 1)
    return [exterior_derivative(DifferentialForm.scalar(chart, sp.pi * F * s / rb)) for s in chart.symbols]


def su2(variant="gg", eps=None):
    north, south, tr = su2_charts()
    if variant in ("gg", "strict_north"):
        ch = north
        g, H = su2_background(ch)
        bundle = so3_bundle(ch)
        alphas = su2_alpha_gg(ch) if variant == "gg" else su2_gamma(ch)
        B = su2_binv_north(ch)
        p = GaugingProblem(ch, g, bundle, B=B, H=H, alphas=alphas, name=f"su2:{variant}")
        return CatalogEntry(f"su2:{variant}", p, transversal=ch.derived["r"],
                            charts={"N": north, "S": south}, transitions={"N->S": tr},
                            extras={"B_inv": B})
    if variant not in ("strict_south", "almost_strict"):
        raise CatalogError(f"unknown su2 variant {variant!r}")
    ch = south
    gN, HN = su2_background(north)
    g = chart_transport(gN, tr)
    H = chart_transport(HN, tr)
    xs = ch.symbols
    bundle = build_bundle(ch, rotation_frame(ch), [[[_eps3(a, b, c) for b in range(3)] for a in range(3)]
                                                   for c in range(3)], [list(xs)])
    gam = su2_gamma(ch)
    if variant == "strict_south":
        rb = ch.derived["rb"]
        defect = [exterior_derivative(DifferentialForm.scalar(ch, sp.pi * s / rb)) for s in xs]
        alphas = [-gam[a] + defect[a] for a in range(3)]
        name = "su2:strict_south"
    else:
        if eps is None:
            eps = sp.Rational(1, 10)
        eps = sp.nsimplify(eps)
        if not (0 < eps < 1):
            raise CatalogError("almost_strict needs 0 < eps < 1")
        # sample at the scale of the shell so the defect is actually seen
        ch.box = ((-float(eps), float(eps)),) * 3
        defect = _bump_defect(ch, eps)
        alphas = [-gam[a] + defect[a] for a in range(3)]
        name = "su2:almost_strict"
    p = GaugingProblem(ch, g, bundle, H=H, alphas=alphas, name=name)
    return CatalogEntry(name, p, transversal=ch.derived["rb"], charts={"N": north, "S": south},
                        transitions={"N->S": tr}, extras={"eps": eps})


# ---------------------------------------------------------------------------
# Poisson examples


def poisson_chart(n=3):
    names = ("x", "y", "z", "w")[:n]
    return Chart(f"poisson{n}", names, box=((-0.9, 0.9),) * n)


def poisson_metric(chart, kind="leaf_invariant"):
    s = chart.symbols
    n = chart.dim
    if kind == "leaf_invariant":
        z = s[2]
        m = sp.Matrix([[1 + z**2, z / 2, z], [z / 2, 1, 0], [z, 0, 2]])
        if n == 4:
            m = sp.Matrix([[1 + z**2, z / 2, z, 0], [z / 2, 1, 0, z / 4], [z, 0, 2, 0], [0, z / 4, 0, 1 + z**2]])
    elif kind == "generic":
        x, y, z = s[:3]
        m = sp.Matrix([[2 + x**2, x * y / 4, z / 3], [x * y / 4, 2 + y**2, x / 4], [z / 3, x / 4, 1 + z**2]])
    else:
        raise CatalogError(f"unknown metric kind {kind!r}")
    return MetricField(chart, m)


def darboux(chart):
    n = chart.dim
    P = sp.zeros(n, n)
    P[0, 1], P[1, 0] = 1, -1
    return P


def cotangent_bundle(chart, Pi):
    """E = T*M with rho(dx^k) = Pi^{kj} d_j; constant Pi gives vanishing structure functions."""
    n = chart.dim
    frame = [VectorField(chart, [Pi[k, j] for j in range(n)]) for k in range(n)]
    zero = [[[0] * n for _ in range(n)] for _ in range(n)]
    kernel = [[1 if a == k else 0 for a in range(n)] for k in range(2, n)]
    return build_bundle(chart, frame, zero, kernel)


def poisson_closed_form_connection(g, Pi):
    """Closed-form (omega, phi) for the graph of Pi (lorentzian sign).

    The frame of T*M is dx^a, so the displayed coefficients are read in the dual frame:
    omega[b][a][k] = -Gamma^a_{kb} + (g Pi)_b^m phi^a_{mk} and phi[b][a][k] = phi^a_{bk} with
    phi^j_{ik} = -[(1 - g Pi g Pi)^-1]_i^l g_lm nabla_k Pi^{mj}.
    """
    ch = g.chart
    n = ch.dim
    G = g.matrix
    gam = christoffel(g)
    # nab[m][j][k] = nabla_k Pi^{mj}
    nab = [[[sp.diff(Pi[m, j], ch.symbols[k])
             + sum(gam[m][k][l] * Pi[l, j] + gam[j][k][l] * Pi[m, l] for l in range(n))
             for k in range(n)] for j in range(n)] for m in range(n)]
    K = (sp.eye(n) - G * Pi * G * Pi).inv().applyfunc(sp.cancel)
    gpi = G * Pi
    disp = [[[-sum(K[i, l] * G[l, m] * nab[m][j][k] for l in range(n) for m in range(n))
              for k in range(n)] for i in range(n)] for j in range(n)]  # disp[j][i][k] = phi^j_{ik}
    phi = [[[disp[a][b][k] for k in range(n)] for a in range(n)] for b in range(n)]
    omega = [[[-gam[a][k][b] + sum(gpi[b, m] * disp[a][m][k] for m in range(n))
               for k in range(n)] for a in range(n)] for b in range(n)]
    return ConnectionData(omega, phi)


def poisson(variant="3_1", metric="leaf_invariant", connection=None, sign=EUCLIDEAN):
    if variant not in ("3_1", "3_2", "3_3", "3_4", "3_5"):
        raise CatalogError(f"unknown poisson variant {variant!r}")
    n = 4 if variant == "3_4" else 3
    ch = poisson_chart(n)
    g = poisson_metric(ch, metric)
    Pi = darboux(ch)
    name = f"poisson:{variant}"
    z = ch.symbols[2]
    if variant == "3_5":
        frame = [VectorField(ch, [1 if i == k else 0 for i in range(n)]) for k in range(2)]
        bundle = build_bundle(ch, frame, [[[0, 0], [0, 0]], [[0, 0], [0, 0]]], [])
        alphas = [DifferentialForm.zero(ch, 1) for _ in range(2)]
    else:
        bundle = cotangent_bundle(ch, Pi)
        ginv = g.inverse
        if variant == "3_1":
            alphas = [DifferentialForm.one_form(ch, [1 if i == a else 0 for i in range(n)]) for a in range(n)]
        elif variant == "3_2":
            alphas = [_conormal_projection(ch, ginv, a, range(2, n)) for a in range(n)]
        elif variant == "3_4":
            alphas = [_conormal_projection(ch, ginv, a, [2]) for a in range(n)]
        else:
            alphas = [DifferentialForm.zero(ch, 1) for _ in range(n)]
    p = GaugingProblem(ch, g, bundle, B=DifferentialForm.zero(ch, 2), alphas=alphas, name=name, sign=sign)
    if connection == "closed_form":
        if variant != "3_1":
            raise CatalogError("the closed-form connection is only known for variant 3_1")
        p = p.with_(connection=poisson_closed_form_connection(g, Pi), sign=LORENTZIAN)
    elif connection == "solve":
        conn = solve_connection_symbolic(p)
        if conn is not None:
            p = p.with_(connection=conn)
    return CatalogEntry(name, p, transversal=z, extras={"Pi": Pi})


def _conormal_projection(chart, ginv, a, kernel_dirs):
    """alpha(dx^a): g-orthogonal projection of dx^a onto the span of the kept conormal directions."""
    n = chart.dim
    kd = list(kernel_dirs)
    Gk = sp.Matrix(len(kd), len(kd), lambda i, j: ginv[kd[i], kd[j]])
    rhs = sp.Matrix([ginv[a, k] for k in kd])
    coeff = (Gk.inv() * rhs).applyfunc(sp.cancel)
    comps = [sp.S.Zero] * n
    for c, k in zip(coeff, kd):
        comps[k] = c
    return DifferentialForm.one_form(chart, comps)


# ---------------------------------------------------------------------------
# full tangent bundle


def full_tangent(with_B=False):
    ch = plane_chart()
    x, y = ch.symbols
    g = MetricField(ch, sp.Matrix([[1 + y**2, x * y / 4], [x * y / 4, 1 + x**2]]))
    frame = [VectorField(ch, [1, 0]), VectorField(ch, [0, 1])]
    bundle = build_bundle(ch, frame, [[[0, 0], [0, 0]], [[0, 0], [0, 0]]], [])
    name = "full_tangent:with_B" if with_B else "full_tangent"
    if not with_B:
        gam = christoffel(g)
        omega = [[[gam[b][a][k] for k in range(2)] for a in range(2)] for b in range(2)]
        conn = ConnectionData(omega, [[[0, 0], [0, 0]], [[0, 0], [0, 0]]])
        p = GaugingProblem(ch, g, bundle, B=DifferentialForm.zero(ch, 2),
                           alphas=[DifferentialForm.zero(ch, 1)] * 2, connection=conn, name=name)
        return CatalogEntry(name, p, transversal=None)
    B = DifferentialForm(ch, 2, {(0, 1): x * y + x})
    p = GaugingProblem(ch, g, bundle, B=B, name=name)
    conn = solve_connection_symbolic(p)
    if conn is None:
        raise CatalogError("no connection found for the full tangent bundle with B")
    return CatalogEntry(name, p.with_(connection=conn), transversal=None)


def make(name, **params):
    """Build a catalog example by name, e.g. "r3_flux:good" or "su2:almost_strict" with eps=0.1."""
    base, _, variant = name.partition(":")
    variant = variant or params.get("variant", "")
    if base == "toy_rotation" and not variant:
        return toy_rotation()
    if base == "toy_rotation" and variant == "polar":
        return toy_rotation_polar()
    if base == "toy_rotation_extended" and not variant:
        return toy_rotation_extended()
    if base == "r3_flux":
        return r3_flux(variant or "good")
    if base == "su2":
        return su2(variant or "gg", params.get("eps"))
    if base == "poisson":
        return poisson(variant or "3_1", params.get("metric", "leaf_invariant"), params.get("connection"),
                       params.get("sign", EUCLIDEAN))
    if base == "full_tangent":
        if variant not in ("", "with_B"):
            raise CatalogError(f"unknown full_tangent variant {variant!r}")
        return full_tangent(variant == "with_B" or bool(params.get("with_B", False)))
    raise CatalogError(f"unknown example {name!r}; known: {', '.join(NAMES)}")


def strictness_profile(entry, radii, directions=None):
    """Largest |t^a_I alpha_a| component along rays, one value per radius (south-chart radius for su2)."""
    import numpy as np

    p = entry.problem
    ch = p.chart
    res = exactness_residuals(p.bundle, p.alphas)
    fns = [ex.compile_numeric(c, ch) for f in res.values() for c in f.as_list()]
    if directions is None:
        directions = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1], [1, -2, 0.5]], dtype=float)
    directions = directions / np.linalg.norm(directions, axis=1)[:, None]
    out = []
    for rad in radii:
        worst = 0.0
        for u in directions:
            x = rad * u
            worst = max(worst, max((abs(float(f(*x))) for f in fns), default=0.0))
        out.append(worst)
    return np.array(out)
