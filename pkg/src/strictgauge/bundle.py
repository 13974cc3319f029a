"""Anchored bundles F -> E -> TM given by an anchor frame, structure functions and kernel data."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from . import expr as ex
from .calculus import VectorField, field_residual, lie_bracket


class BundleError(ValueError):
    def __init__(self, message, where=None):
        self.where = where
        super().__init__(message)


@dataclass
class AnchoredBundle:
    """Frame v_a = rho(e_a), structure functions C^c_ab stored as C[c][a][b], kernel t^a_I stored as t[I][a]."""

    chart: object
    frame: list
    structure: list
    kernel: list = field(default_factory=list)

    @property
    def rank(self):
        return len(self.frame)

    @property
    def kernel_rank(self):
        return len(self.kernel)

    def anchor_matrix(self):
        """n x r matrix of anchor components v_a^i."""
        return sp.Matrix(self.chart.dim, self.rank, lambda i, a: self.frame[a][i])

    def section_image(self, coeffs):
        """rho of the section sum_a coeffs[a] e_a."""
        comps = [sum((coeffs[a] * self.frame[a][i] for a in range(self.rank)), sp.S.Zero)
                 for i in range(self.chart.dim)]
        return VectorField(self.chart, comps)


def build_bundle(chart, frame, structure=None, kernel=None, mode="auto"):
    """Validate and assemble a bundle.  Raises BundleError when rho(t) != 0 or C is not antisymmetric."""
    frame = [f if isinstance(f, VectorField) else VectorField(chart, f) for f in frame]
    r = len(frame)
    if structure is None:
        structure = [[[0] * r for _ in range(r)] for _ in range(r)]
    structure = [[[sp.sympify(structure[c][a][b]) for b in range(r)] for a in range(r)] for c in range(r)]
    if len(structure) != r:
        raise BundleError("structure functions have the wrong shape")
    kernel = [[sp.sympify(t) for t in row] for row in (kernel or [])]
    for I, row in enumerate(kernel):
        if len(row) != r:
            raise BundleError(f"kernel generator {I} has {len(row)} entries, rank is {r}")
    for c in range(r):
        for a in range(r):
            for b in range(a, r):
                s = structure[c][a][b] + structure[c][b][a]
                if s != 0 and not ex.equal(s, 0, mode=mode, chart=chart):
                    raise BundleError(f"C^{c}_({a}{b}) is not antisymmetric", (c, a, b))
    b = AnchoredBundle(chart, frame, structure, kernel)
    for I, row in enumerate(kernel):
        img = b.section_image(row)
        for i, comp in enumerate(img.comps):
            if comp != 0 and not ex.equal(comp, 0, mode=mode, chart=chart):
                raise BundleError(f"anchor does not annihilate kernel generator {I} (component {i})", (I, i))
    return b


@dataclass
class InvolutivityReport:
    residuals: dict
    verdict: bool | None
    worst: float
    failing: list
    witness: dict | None
    jacobi_warnings: list = field(default_factory=list)

    @property
    def passed(self):
        return self.verdict is True


def bracket_residual(b, a1, a2):
    """[v_a, v_b] - C^c_ab v_c."""
    br = lie_bracket(b.frame[a1], b.frame[a2])
    for c in range(b.rank):
        coeff = b.structure[c][a1][a2]
        if coeff != 0:
            br = br - b.frame[c] * coeff
    return br


def check_involutivity(b, mode="auto", tol=1e-9, jacobi=True):
    residuals = {}
    failing = []
    worst = 0.0
    witness = None
    verdict = True
    for a1 in range(b.rank):
        for a2 in range(a1 + 1, b.rank):
            res = bracket_residual(b, a1, a2)
            residuals[(a1, a2)] = res
            ok, w, wit, _ = field_residual(res, b.chart, mode, tol)
            worst = max(worst, w)
            if ok is False:
                verdict = False
                failing.append((a1, a2))
                witness = witness or wit
            elif ok is None and verdict is True:
                verdict = None
    warnings = []
    if jacobi and b.rank >= 3:
        warnings = _projected_jacobi(b, mode, tol)
    return InvolutivityReport(residuals, verdict, worst, failing, witness, warnings)


def _projected_jacobi(b, mode, tol):
    """rho applied to the Jacobiator of the bracket defined by C; warning level only."""
    out = []
    r = b.rank
    for a1 in range(r):
        for a2 in range(a1 + 1, r):
            for a3 in range(a2 + 1, r):
                total = VectorField(b.chart, [0] * b.chart.dim)
                for (p, q, s) in ((a1, a2, a3), (a2, a3, a1), (a3, a1, a2)):
                    # [[e_p, e_q], e_s] = [C^d_pq e_d, e_s]
                    for dd in range(r):
                        cpq = b.structure[dd][p][q]
                        if cpq == 0:
                            continue
                        coeff = [cpq * b.structure[e][dd][s] - b.frame[s].apply(cpq) * (1 if e == dd else 0)
                                 for e in range(r)]
                        total = total + b.section_image(coeff)
                ok = field_residual(total, b.chart, mode, tol)[0]
                if ok is False:
                    out.append((a1, a2, a3))
    return out


@dataclass
class StructureSolution:
    points: np.ndarray
    constants: np.ndarray  # [point, c, a, b]
    residual: np.ndarray  # [point]
    nullity: np.ndarray  # [point]
    collapsed: bool


def solve_structure_constants(frame, chart, points):
    """Least-squares C^c_ab at each point; minimal-norm representative where the frame is dependent."""
    frame = [f if isinstance(f, VectorField) else VectorField(chart, f) for f in frame]
    r = len(frame)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    brackets = {}
    for a in range(r):
        for b in range(a + 1, r):
            brackets[(a, b)] = lie_bracket(frame[a], frame[b])
    anchor = [[ex.compile_numeric(frame[a][i], chart) for i in range(chart.dim)] for a in range(r)]
    brk = {k: [ex.compile_numeric(v[i], chart) for i in range(chart.dim)] for k, v in brackets.items()}
    consts = np.zeros((len(pts), r, r, r))
    resid = np.zeros(len(pts))
    nullity = np.zeros(len(pts), dtype=int)
    for p, x in enumerate(pts):
        V = np.array([[float(anchor[a][i](*x)) for a in range(r)] for i in range(chart.dim)])
        rank = np.linalg.matrix_rank(V, tol=1e-10) if V.size else 0
        nullity[p] = r - rank
        worst = 0.0
        for (a, b), fs in brk.items():
            rhs = np.array([float(f(*x)) for f in fs])
            sol, *_ = np.linalg.lstsq(V, rhs, rcond=1e-12)
            consts[p, :, a, b] = sol
            consts[p, :, b, a] = -sol
            worst = max(worst, float(np.linalg.norm(V @ sol - rhs)))
        resid[p] = worst
    collapsed = bool(np.all(nullity == r))
    return StructureSolution(pts, consts, resid, nullity, collapsed)
