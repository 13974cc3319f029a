"""Lattice worldsheet dynamics for gauged sigma models.

Fields live on the sites of a doubly periodic N_sigma x N_tau grid.  The
kinetic term sits on links and uses the site values of V = rho(A) at both
ends; two-form terms sit on plaquettes and average the four corners, each
corner evaluating its couplings at its own site.  Keeping every coupling
product site-local makes the lambda-shift invariance of strict problems and
the pullback identity with the universal action hold to round-off.  Each
plaquette corner differentiates X along its two adjacent edges.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np
import sympy as sp
from scipy.optimize import minimize

from . import expr as ex

jax.config.update("jax_enable_x64", True)

SCHEMA = "strictgauge.lattice/1"
FROZEN_VARIANCE = 1e-8
PROPAGATING_FRACTION = 1e-3


class LatticeError(ValueError):
    def __init__(self, message, sites=None):
        self.sites = [] if sites is None else [tuple(int(v) for v in s) for s in sites]
        super().__init__(message)


class RelaxationDiverged(RuntimeError):
    def __init__(self, message, history):
        self.history = list(history)
        super().__init__(message)


@dataclass(frozen=True)
class Lattice:
    n_sigma: int
    n_tau: int
    length_sigma: float = 2 * math.pi
    length_tau: float = 2 * math.pi
    signature: str = "euclidean"

    def __post_init__(self):
        if self.n_sigma < 4 or self.n_tau < 4:
            raise ValueError("lattice needs at least 4 sites in each direction")
        if self.signature not in ("euclidean", "lorentzian"):
            raise ValueError(f"unknown worldsheet signature {self.signature!r}")

    @property
    def shape(self):
        return (self.n_sigma, self.n_tau)

    @property
    def h_sigma(self):
        return self.length_sigma / self.n_sigma

    @property
    def h_tau(self):
        return self.length_tau / self.n_tau

    @property
    def cell(self):
        return self.h_sigma * self.h_tau

    def coordinates(self):
        s = np.arange(self.n_sigma) * self.h_sigma
        t = np.arange(self.n_tau) * self.h_tau
        return np.meshgrid(s, t, indexing="ij")

    def to_dict(self):
        return {"n_sigma": self.n_sigma, "n_tau": self.n_tau, "length_sigma": self.length_sigma,
                "length_tau": self.length_tau, "signature": self.signature}


@dataclass
class FieldConfig:
    """X[i, j, k] target coordinates, A[i, j, a, mu] gauge field components (mu = sigma, tau)."""

    X: np.ndarray
    A: np.ndarray

    def validate(self, lat, n, r):
        if self.X.shape != (*lat.shape, n):
            raise ValueError(f"X has shape {self.X.shape}, expected {(*lat.shape, n)}")
        if self.A.shape != (*lat.shape, r, 2):
            raise ValueError(f"A has shape {self.A.shape}, expected {(*lat.shape, r, 2)}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.A))):
            raise ValueError("field configuration contains non-finite values")

    def copy(self):
        return FieldConfig(np.array(self.X), np.array(self.A))


@dataclass
class GenFieldConfig:
    """Fields of the universal model: X plus vector- and covector-valued 1-forms V, W."""

    X: np.ndarray
    V: np.ndarray
    W: np.ndarray


# ---------------------------------------------------------------------------
# compiling couplings


def _entry_fn(e, chart, params):
    e = sp.sympify(e)
    if params:
        e = e.xreplace({sp.Symbol(k, real=True): v for k, v in params.items()})
    if ex.has_step(e):
        raise LatticeError("step-function couplings have no lattice evaluation")
    free = e.free_symbols - set(chart.symbols)
    if free:
        raise LatticeError(f"coupling depends on unset parameters {sorted(map(str, free))}")
    if not e.free_symbols:
        val = float(e)
        return lambda *xs: jnp.full(jnp.shape(xs[0]), val)
    f = sp.lambdify(chart.symbols, e, modules="jax")
    return lambda *xs: jnp.broadcast_to(f(*xs), jnp.shape(xs[0]))


def _array_fn(entries, chart, params, shape):
    """Compile a nested list of expressions into X[..., n] -> array[..., *shape]."""
    flat = list(np.array(entries, dtype=object).reshape(-1)) if shape else [entries]
    fns = [_entry_fn(e, chart, params) for e in flat]

    def call(X):
        xs = [X[..., k] for k in range(X.shape[-1])]
        vals = jnp.stack([f(*xs) for f in fns], axis=-1)
        return vals.reshape(X.shape[:-1] + tuple(shape))
    return call


class CompiledProblem:
    """Numeric couplings of a gauging problem, ready for lattice evaluation."""

    def __init__(self, p, B=None, params=None, transversal=None):
        ch = p.chart
        self.problem = p
        self.n = ch.dim
        self.r = p.rank
        n, r = self.n, self.r
        self.g = _array_fn(p.metric.matrix.tolist(), ch, params, (n, n))
        self.rho = _array_fn([[p.frame[a][i] for a in range(r)] for i in range(n)], ch, params, (n, r))
        self.alpha = _array_fn([p.alphas[a].as_list() for a in range(r)], ch, params, (r, n))
        self.gamma = _array_fn([[p.gamma(a, b) for b in range(r)] for a in range(r)], ch, params, (r, r))
        B = B if B is not None else p.B
        self.has_B = B is not None
        if B is not None:
            full = [[B.component(i, j) if i != j else 0 for j in range(n)] for i in range(n)]
            self.B = _array_fn(full, ch, params, (n, n))
        kern = p.bundle.kernel
        self.s = len(kern)
        self.kernel = _array_fn(kern, ch, params, (self.s, r)) if kern else None
        self.transversal = None
        if transversal is not None:
            self.transversal = _array_fn(transversal, ch, params, ())


def _roll(a, shift, axis):
    return jnp.roll(a, -shift, axis=axis)


def _corners(a):
    """Site field rolled onto the four corners of the plaquette anchored at each site."""
    return (a, _roll(a, 1, 0), _roll(a, 1, 1), _roll(_roll(a, 1, 0), 1, 1))


def _kinetic(X, V, g, lat):
    total = 0.0
    for axis, h in ((0, lat.h_sigma), (1, lat.h_tau)):
        dX = (_roll(X, 1, axis) - X) / h
        d_here = dX - V[..., axis]
        d_there = dX - _roll(V, 1, axis)[..., axis]
        e_here = jnp.einsum("...i,...ij,...j->...", d_here, g, d_here)
        e_there = jnp.einsum("...i,...ij,...j->...", d_there, _roll(g, 1, axis), d_there)
        total = total + 0.25 * jnp.sum(e_here + e_there)
    return total * lat.cell


def _corner_derivatives(X, lat):
    """Per-corner (d_sigma X, d_tau X) from the two plaquette edges meeting at that corner.

    Averaging over corners is second order; using edges instead of the
    plaquette mean keeps constraints like d(R^2) = 0 free of alternating modes.
    """
    c00, c10, c01, c11 = _corners(X)
    bottom, top = (c10 - c00) / lat.h_sigma, (c11 - c01) / lat.h_sigma
    left, right = (c01 - c00) / lat.h_tau, (c11 - c10) / lat.h_tau
    return ((bottom, left), (bottom, right), (top, left), (top, right))


def _b_term(cp, X, derivs):
    total = 0.0
    for Bc, (ds, dt) in zip(_corners(cp.B(X)), derivs):
        total = total + jnp.einsum("...ij,...i,...j->...", Bc, ds, dt)
    return 0.25 * total


def _require_euclidean(lat):
    if lat.signature != "euclidean":
        raise LatticeError("lattice dynamics is implemented for euclidean worldsheets only")


def _check_chart_region(cp, X):
    g = np.asarray(cp.g(jnp.asarray(X)))
    bad = ~np.all(np.isfinite(g.reshape(*g.shape[:2], -1)), axis=-1)
    if bad.any():
        raise LatticeError("configuration leaves the region where the couplings are defined",
                           np.argwhere(bad)[:10])


def _action_jax(cp, X, A, lat):
    g = cp.g(X)
    rho = cp.rho(X)
    V = jnp.einsum("...ia,...am->...im", rho, A)
    out = _kinetic(X, V, g, lat)
    derivs = _corner_derivatives(X, lat)
    two = 0.0
    if cp.has_B:
        two = two + _b_term(cp, X, derivs)
    alpha = cp.alpha(X)
    gamma = cp.gamma(X)
    corner = 0.0
    for al, ga, Ac, (ds, dt) in zip(_corners(alpha), _corners(gamma), _corners(A), derivs):
        # A^a ^ alpha_a(dX) + 1/2 gamma_ab A^a ^ A^b, coefficient of dsigma ^ dtau
        corner = corner + jnp.einsum("...a,...ai,...i->...", Ac[..., 0], al, dt) \
            - jnp.einsum("...a,...ai,...i->...", Ac[..., 1], al, ds) \
            + jnp.einsum("...a,...ab,...b->...", Ac[..., 0], ga, Ac[..., 1])
    two = two + 0.25 * corner
    return out + jnp.sum(two) * lat.cell


def _universal_jax(cp, X, V, W, lat):
    g = cp.g(X)
    out = _kinetic(X, V, g, lat)
    derivs = _corner_derivatives(X, lat)
    two = 0.0
    if cp.has_B:
        two = two + _b_term(cp, X, derivs)
    corner = 0.0
    for Vc, Wc, (ds, dt) in zip(_corners(V), _corners(W), derivs):
        # W_i ^ (dX^i - V^i / 2)
        corner = corner + jnp.einsum("...i,...i->...", Wc[..., 0], dt - 0.5 * Vc[..., 1]) \
            - jnp.einsum("...i,...i->...", Wc[..., 1], ds - 0.5 * Vc[..., 0])
    two = two + 0.25 * corner
    return out + jnp.sum(two) * lat.cell


def _compiled(p, B=None, params=None):
    if isinstance(p, CompiledProblem):
        return p
    return CompiledProblem(p, B=B, params=params)


def _needs_primitive(cp):
    p = cp.problem
    if not cp.has_B and p.H is not None and p.H.comps:
        raise LatticeError("a local primitive B with dB = H is needed for the lattice WZ term")


def discrete_action(p, cfg, lat, B=None, params=None):
    """Discretized gauged action: kinetic g(DX, DX) on links, X*B + A^alpha + gamma A^A on plaquettes."""
    _require_euclidean(lat)
    cp = _compiled(p, B, params)
    _needs_primitive(cp)
    cfg.validate(lat, cp.n, cp.r)
    _check_chart_region(cp, cfg.X)
    return float(_action_jax(cp, jnp.asarray(cfg.X), jnp.asarray(cfg.A), lat))


def lift_fields(p, cfg, params=None):
    """sigma o a: V^i = rho^i_a A^a and W_i = alpha_ai A^a at every site."""
    cp = _compiled(p, None, params)
    X = jnp.asarray(cfg.X)
    V = jnp.einsum("...ia,...am->...im", cp.rho(X), jnp.asarray(cfg.A))
    W = jnp.einsum("...ai,...am->...im", cp.alpha(X), jnp.asarray(cfg.A))
    return GenFieldConfig(np.asarray(cfg.X), np.asarray(V), np.asarray(W))


def universal_action_value(p, gcfg, lat, B=None, params=None):
    """Universal functional: kinetic g(dX - V, dX - V) plus X*B plus W ^ (dX - V/2).

    gcfg may be a GenFieldConfig or a FieldConfig (then V, W are built from the lift).
    """
    _require_euclidean(lat)
    cp = _compiled(p, B, params)
    _needs_primitive(cp)
    if isinstance(gcfg, FieldConfig):
        gcfg = lift_fields(cp, gcfg)
    X = jnp.asarray(gcfg.X)
    _check_chart_region(cp, gcfg.X)
    return float(_universal_jax(cp, X, jnp.asarray(gcfg.V), jnp.asarray(gcfg.W), lat))


def random_config(p, lat, seed=0, radius=(0.3, 1.2), a_scale=0.5, params=None):
    """Smooth-ish random fields with |X| inside the given shell."""
    rng = np.random.default_rng(seed)
    n, r = p.chart.dim, p.rank
    sig, tau = lat.coordinates()
    X = np.zeros((*lat.shape, n))
    for k in range(n):
        for m in range(1, 3):
            a, b = rng.normal(size=2) / m
            X[..., k] += a * np.cos(m * 2 * np.pi * sig / lat.length_sigma + rng.uniform(0, 6)) \
                + b * np.sin(m * 2 * np.pi * tau / lat.length_tau + rng.uniform(0, 6))
        X[..., k] += rng.normal()
    norm = np.linalg.norm(X, axis=-1, keepdims=True)
    lo, hi = radius
    target = lo + (hi - lo) * (0.5 + 0.5 * np.tanh(norm - norm.mean()))
    X = X / norm * target
    A = a_scale * rng.normal(size=(*lat.shape, r, 2))
    return FieldConfig(X, A)


# ---------------------------------------------------------------------------
# pins and relaxation


@dataclass
class Pins:
    """Hard pins fix X on masked sites; soft pins pull a transversal invariant towards targets."""

    hard_mask: np.ndarray | None = None
    hard_values: np.ndarray | None = None
    soft_mask: np.ndarray | None = None
    soft_targets: np.ndarray | None = None
    stiffness: float = 100.0


@dataclass
class RelaxResult:
    config: FieldConfig
    history: list
    converged: bool
    grad_norm: float
    iterations: int
    multipliers: np.ndarray | None = None
    constraint_norm: float = 0.0
    message: str = ""


def _is_strict(p):
    from .gauge import check_strictness

    return check_strictness(p).strict is not False


def _projector(cp, X):
    """Fiberwise projector onto the complement of the kernel directions t_I."""
    t = cp.kernel(X)  # [..., s, r]
    gram = jnp.einsum("...ia,...ja->...ij", t, t)
    coeff = jnp.linalg.solve(gram, t)  # [..., s, r]
    return jnp.eye(cp.r) - jnp.einsum("...ia,...ib->...ab", t, coeff)


def _kron_fiber(P):
    """Fiber projector P_ab lifted to the flattened (a, mu) index."""
    r = P.shape[-1]
    return jnp.einsum("...ab,mn->...ambn", P, jnp.eye(2)).reshape(P.shape[:-2] + (2 * r, 2 * r))


def _site_gauge_solve(cp, X, lat):
    """Solve the A field equation site by site.

    Every term of the discrete action is linear or quadratic in the A of a
    single site, so the A-Hessian is block diagonal; 2r Hessian-vector probes
    recover all blocks at once.  Kernel directions t_I are projected out.
    Returns (A, dS/dA at A=0, blocks).
    """
    r = cp.r
    shape = (*lat.shape, r, 2)
    grad = jax.grad(lambda A: _action_jax(cp, X, A, lat))
    zero = jnp.zeros(shape)
    b = grad(zero)
    cols = []
    for k in range(2 * r):
        probe = zero.at[..., k // 2, k % 2].set(1.0)
        cols.append(jax.jvp(grad, (zero,), (probe,))[1].reshape(*lat.shape, 2 * r))
    H = jnp.stack(cols, -1)
    bf = b.reshape(*lat.shape, 2 * r)
    if cp.s:
        Pf = _kron_fiber(_projector(cp, X))
        M = Pf @ H @ Pf + jnp.eye(2 * r) - Pf
        rhs = -jnp.einsum("...ij,...j->...i", Pf, bf)
    else:
        M, rhs = H, -bf
    A = jnp.linalg.solve(M, rhs[..., None])[..., 0]
    return A.reshape(shape), b, H


def _kernel_constraint(cp, X, b, lat):
    """dS/dlambda per unit cell; S is linear in the kernel part of A."""
    return jnp.einsum("...Ia,...am->...Im", cp.kernel(X), b) / lat.cell


class _Objective:
    """Objective over packed variables.

    gauge="solve": variables are X only, A is solved from its algebraic field
    equation at every evaluation.  gauge="joint": variables are (X, A).
    """

    def __init__(self, cp, lat, pins, multipliers, gauge="solve"):
        if gauge not in ("solve", "joint"):
            raise ValueError(f"unknown gauge-field treatment {gauge!r}")
        self.cp, self.lat, self.pins = cp, lat, pins
        self.alm = multipliers
        self.gauge = gauge
        n, r = cp.n, cp.r
        self.nX = lat.n_sigma * lat.n_tau * n
        self.shapeX = (*lat.shape, n)
        self.shapeA = (*lat.shape, r, 2)
        free = np.ones(self.shapeX)
        if pins and pins.hard_mask is not None:
            free[pins.hard_mask] = 0.0
        self.free = free.ravel()
        if gauge == "joint":
            self.free = np.concatenate([self.free, np.ones(int(np.prod(self.shapeA)))])
        self.lam = None
        self.mu = 10.0
        self.message = ""
        self.success = False
        self._build()

    def _penalty(self, X):
        pins = self.pins
        if pins is None or pins.soft_mask is None:
            return 0.0
        f = self.cp.transversal(X)
        diff = jnp.where(pins.soft_mask, f - pins.soft_targets, 0.0)
        return 0.5 * pins.stiffness * jnp.sum(diff ** 2) * self.lat.cell

    def _fields(self, u):
        """(X, A without multiplier part, constraint) for packed variables."""
        cp, lat = self.cp, self.lat
        X = u[:self.nX].reshape(self.shapeX)
        if self.gauge == "solve":
            A, b, _ = _site_gauge_solve(cp, X, lat)
            A = jax.lax.stop_gradient(A)
            c = _kernel_constraint(cp, X, b, lat) if self.alm else None
            return X, A, c
        A = u[self.nX:].reshape(self.shapeA)
        if not self.alm:
            return X, A, None
        A = jnp.einsum("...ab,...bm->...am", _projector(cp, X), A)
        b = jax.grad(lambda a: _action_jax(cp, X, a, lat))(A)
        return X, A, _kernel_constraint(cp, X, b, lat)

    def _build(self):
        cp, lat = self.cp, self.lat

        def total(u, lam, mu):
            X, A, c = self._fields(u)
            val = _action_jax(cp, X, A, lat) + self._penalty(X)
            if self.alm:
                val = val + jnp.sum(lam * c) * lat.cell + 0.5 * mu * jnp.sum(c ** 2) * lat.cell
            return val

        self._vg = jax.jit(jax.value_and_grad(total))
        self._val = jax.jit(total)
        self._con = jax.jit(lambda u: self._fields(u)[2]) if self.alm else None
        self._gauge = jax.jit(lambda u: self._fields(u)[1])

    def lam_array(self):
        if self.lam is None:
            self.lam = jnp.zeros((*self.lat.shape, self.cp.s, 2))
        return self.lam

    def value_grad(self, u):
        v, gr = self._vg(jnp.asarray(u), self.lam_array() if self.alm else 0.0, self.mu)
        return float(v), np.asarray(gr) * self.free

    def value(self, u):
        return float(self._val(jnp.asarray(u), self.lam_array() if self.alm else 0.0, self.mu))

    def pack(self, cfg):
        u = np.asarray(cfg.X, float).ravel()
        if self.gauge == "joint":
            u = np.concatenate([u, np.asarray(cfg.A, float).ravel()])
        return u

    def unpack(self, u):
        X = np.asarray(u[:self.nX]).reshape(self.shapeX)
        A = self._gauge(jnp.asarray(u))
        if self.alm:
            A = A + jnp.einsum("...Ia,...Im->...am", self.cp.kernel(jnp.asarray(X)), self.lam_array())
        return FieldConfig(np.array(X), np.array(A))


def _lbfgs(obj, u, steps, tol, history):
    gtol = tol * obj.lat.cell

    def fun(v):
        val, gr = obj.value_grad(v)
        return val, gr
    res = minimize(fun, u, jac=True, method="L-BFGS-B",
                   options={"maxiter": steps, "gtol": gtol, "ftol": 0.0, "maxcor": 30, "maxls": 50},
                   callback=lambda v: history.append(obj.value(v)))
    _, gr = obj.value_grad(res.x)
    obj.message = str(res.message)
    obj.success = bool(res.success)
    return res.x, float(np.max(np.abs(gr))) / obj.lat.cell, res.nit


def _gradient_descent(obj, u, steps, step_size, momentum, tol, history):
    val, gr = obj.value_grad(u)
    vel = np.zeros_like(u)
    rises = 0
    it = 0
    for it in range(1, steps + 1):
        gnorm = float(np.max(np.abs(gr))) / obj.lat.cell
        if gnorm < tol:
            break
        vel = momentum * vel - step_size * gr / obj.lat.cell
        trial = u + vel
        tval, tgr = obj.value_grad(trial)
        if not np.isfinite(tval) or tval > val:
            rises += 1
            if rises >= 10:
                raise RelaxationDiverged(f"action rose on {rises} consecutive steps", history)
            vel[:] = 0.0
            step_size *= 0.5
            continue
        rises = 0
        u, val, gr = trial, tval, tgr
        history.append(val)
    gnorm = float(np.max(np.abs(gr))) / obj.lat.cell
    obj.success = gnorm < tol
    obj.message = "gradient below tolerance" if obj.success else "step budget exhausted"
    return u, gnorm, it


def relax(p, cfg0, lat, steps=5000, step_size=1e-2, method="lbfgs", momentum=0.9, tol=1e-9,
          pins=None, multipliers="auto", B=None, params=None, alm_rounds=25, constraint_tol=1e-9,
          transversal=None, penalty=1e3, gauge="solve"):
    """Drive (X, A) towards a stationary point of the discrete action.

    Strict problems are minimised directly.  Non-strict problems contain the
    kernel part of A as Lagrange multipliers; these are split off and handled
    by an augmented Lagrangian loop.
    """
    _require_euclidean(lat)
    cp = CompiledProblem(p, B=B, params=params, transversal=transversal)
    _needs_primitive(cp)
    cfg0.validate(lat, cp.n, cp.r)
    if pins is not None and pins.soft_mask is not None and cp.transversal is None:
        raise ValueError("soft pins need a transversal invariant")
    use_alm = (not _is_strict(p)) if multipliers == "auto" else bool(multipliers)
    use_alm = use_alm and cp.s > 0
    obj = _Objective(cp, lat, pins, use_alm, gauge)
    obj.mu = float(penalty)
    u = obj.pack(cfg0)
    if pins is not None and pins.hard_mask is not None:
        X = np.array(cfg0.X)
        X[pins.hard_mask] = pins.hard_values
        u[:obj.nX] = X.ravel()
    history = [obj.value(u)]

    def inner(u):
        if method == "lbfgs":
            return _lbfgs(obj, u, steps, tol, history)
        if method == "gd":
            return _gradient_descent(obj, u, steps, step_size, momentum, tol, history)
        raise ValueError(f"unknown relaxation method {method!r}")

    cnorm = 0.0
    iters = 0
    if not use_alm:
        u, gnorm, iters = inner(u)
    else:
        previous = np.inf
        for _ in range(alm_rounds):
            u, gnorm, it = inner(u)
            iters += it
            c = np.asarray(obj._con(jnp.asarray(u)))
            cnorm = float(np.max(np.abs(c)))
            if cnorm < constraint_tol:
                break
            obj.lam = obj.lam_array() + obj.mu * c
            if cnorm > 0.25 * previous:
                obj.mu *= 10.0
            previous = cnorm
    cfg = obj.unpack(u)
    converged = (obj.success or gnorm < tol) and (not use_alm or cnorm < constraint_tol * 10)
    return RelaxResult(cfg, history, bool(converged), gnorm, iters,
                       np.asarray(obj.lam) if use_alm else None, cnorm, obj.message)


# ---------------------------------------------------------------------------
# gauge-field elimination


def _site_quadratic(cp, x):
    """Per-site quadratic form of A in the continuum action: [[K, gamma], [-gamma, K]] with K = rho^T g rho."""
    X = jnp.asarray(x, dtype=float)[None, :]
    g = np.asarray(cp.g(X))[0]
    rho = np.asarray(cp.rho(X))[0]
    gam = np.asarray(cp.gamma(X))[0]
    K = rho.T @ g @ rho
    return K, gam


def o_operator(p, x, signature="lorentzian", params=None):
    """The operator O = rho^T g rho * + gamma acting on A, split into its two chiral blocks.

    Lorentzian: * = -1 on A_+ and +1 on A_-.  Euclidean: * = -i on A_z and +i on A_zbar.
    Blocks are restricted to the complement of ker rho.  Returns (blocks, smallest singular values).
    """
    cp = _compiled(p, None, params)
    K, gam = _site_quadratic(cp, x)
    w, U = np.linalg.eigh(K)
    keep = w > 1e-12 * max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
    Q = U[:, keep]
    Kr, Gr = Q.T @ K @ Q, Q.T @ gam @ Q
    if signature == "lorentzian":
        blocks = (-Kr + Gr, Kr + Gr)
    elif signature == "euclidean":
        blocks = (-1j * Kr + Gr, 1j * Kr + Gr)
    else:
        raise ValueError(f"unknown signature {signature!r}")
    sv = [float(np.linalg.svd(b, compute_uv=False).min()) if b.size else float("inf") for b in blocks]
    return blocks, sv


def eliminate_gauge_field(p, cfg, lat, B=None, params=None):
    """Replace A by the solution of its own (linear, site-local) field equation; kernel part set to zero."""
    _require_euclidean(lat)
    cp = _compiled(p, B, params)
    _needs_primitive(cp)
    cfg.validate(lat, cp.n, cp.r)
    X = jnp.asarray(cfg.X)
    A, _, H = _site_gauge_solve(cp, X, lat)
    H = np.asarray(H)
    if cp.s:
        Pf = np.asarray(_kron_fiber(_projector(cp, X)))
        H = Pf @ H @ Pf + np.eye(2 * cp.r) - Pf
    sv = np.linalg.svd(H, compute_uv=False)
    scale = np.maximum(sv[..., 0], 1e-300)
    bad = np.argwhere(~np.isfinite(sv[..., -1]) | (sv[..., -1] < 1e-12 * scale))
    # directions with rho(e) = 0 outside the declared kernel leave the block singular too
    if len(bad):
        raise LatticeError("gauge-field equation is degenerate at some sites", bad[:10])
    return FieldConfig(np.array(cfg.X), np.asarray(A))


# ---------------------------------------------------------------------------
# reduced couplings


@dataclass
class ReducedCouplings:
    transversal: tuple
    leaf: tuple
    E: sp.Matrix
    M_plus: sp.Matrix
    M_minus: sp.Matrix
    E_red: sp.Matrix
    leaf_independent: bool
    chart: object = field(repr=False, default=None)

    @property
    def g_red(self):
        return ((self.E_red + self.E_red.T) / 2).applyfunc(ex.canonical)

    @property
    def B_red(self):
        return ((self.E_red - self.E_red.T) / 2).applyfunc(ex.canonical)


def reduced_couplings(metric, transversal, leaf, B=None, mode="canonical"):
    """E_red = E_IJ - E_Ia E^ab E_bJ for E = g + B in an adapted chart.

    transversal, leaf: coordinate indices (X^I label leaves, X^alpha move along them).
    """
    chart = metric.chart
    n = chart.dim
    G = metric.matrix
    Bm = sp.zeros(n, n)
    if B is not None:
        for i in range(n):
            for j in range(n):
                if i != j:
                    Bm[i, j] = B.component(i, j)
    E = G + Bm
    I, L = list(transversal), list(leaf)
    if sorted(I + L) != list(range(n)):
        raise ValueError("transversal and leaf indices must partition the coordinates")
    E_LL = E.extract(L, L)
    det = E_LL.det(method="berkowitz")
    if ex.is_zero(det):
        raise ValueError("E restricted to the leaf directions is singular")
    E_inv = E_LL.inv().applyfunc(ex.canonical)
    M_plus = (E.extract(I, L) * E_inv).applyfunc(ex.canonical)
    M_minus = (E_inv * E.extract(L, I)).applyfunc(ex.canonical)
    E_red = (E.extract(I, I) - E.extract(I, L) * E_inv * E.extract(L, I)).applyfunc(ex.canonical)
    independent = True
    for e in E_red:
        for a in L:
            d = sp.diff(e, chart.symbols[a])
            if d != 0 and not ex.equal(d, 0, mode=mode if not ex.is_transcendental(d) else "auto", chart=chart):
                independent = False
    return ReducedCouplings(tuple(I), tuple(L), E, M_plus, M_minus, E_red, independent, chart)


def reduced_action_value(red, Y, lat):
    """Lattice action of the reduced model for transversal fields Y[i, j, k], same link scheme."""
    chart = red.chart
    fns = [[_entry_fn(red.g_red[a, b], chart, None) for b in range(len(red.transversal))]
           for a in range(len(red.transversal))]
    # the reduced couplings depend only on the transversal coordinates; feed zeros for the rest
    full = np.zeros((*lat.shape, chart.dim))
    full[..., list(red.transversal)] = Y
    xs = [jnp.asarray(full[..., k]) for k in range(chart.dim)]
    g = jnp.stack([jnp.stack([f(*xs) for f in row], -1) for row in fns], -2)
    Yj = jnp.asarray(Y)
    zero = jnp.zeros(Yj.shape + (2,))
    return float(_kinetic(Yj, zero, g, lat))


# ---------------------------------------------------------------------------
# diagnostics


def _radius(cfg, delta):
    X = np.asarray(cfg.X)
    if X.shape[-1] < 2:
        raise ValueError("radial diagnostics need a target with at least two components")
    R = np.hypot(X[..., 0], X[..., 1])
    bad = np.argwhere(R <= delta)
    if len(bad):
        raise LatticeError("configuration crosses the origin", bad[:10])
    return R


def laplacian(f, lat):
    return ((np.roll(f, -1, 0) + np.roll(f, 1, 0) - 2 * f) / lat.h_sigma ** 2
            + (np.roll(f, -1, 1) + np.roll(f, 1, 1) - 2 * f) / lat.h_tau ** 2)


def radial_wave_residual(cfg, lat, delta=1e-3, exclude=None):
    """Max-norm of the five-point Laplacian of sqrt(X^2 + Y^2), skipping sites in `exclude`."""
    R = _radius(cfg, delta)
    res = np.abs(laplacian(R, lat))
    if exclude is not None:
        res = np.where(exclude, 0.0, res)
    return float(res.max())


def winding_number(cfg, row=0, delta=1e-3):
    """Winding of (X^0, X^1) around the origin along the sigma cycle at tau index `row`."""
    X = np.asarray(cfg.X)[:, row, :2]
    R = np.hypot(X[:, 0], X[:, 1])
    bad = np.nonzero(R <= delta)[0]
    if len(bad):
        raise LatticeError("loop crosses the origin", [(i, row) for i in bad])
    ang = np.arctan2(X[:, 1], X[:, 0])
    inc = np.diff(np.concatenate([ang, ang[:1]]))
    inc = (inc + np.pi) % (2 * np.pi) - np.pi
    amb = np.nonzero(np.abs(inc) >= np.pi - 1e-12)[0]
    if len(amb):
        raise LatticeError("angle increment of pi or more on a link; winding is ambiguous",
                           [(i, row) for i in amb])
    return int(round(inc.sum() / (2 * np.pi)))


def holonomy(cfg, lat, component=0, row=0, kind="arcsin"):
    """Lattice version of the loop integral of A^component along sigma at tau index `row`.

    With site-local couplings a rigid rotation by delta per link is absorbed by
    h A = sin(delta), so kind="arcsin" sums arcsin(h A) and returns the exact
    angle; kind="sum" is the plain Riemann sum h * sum A.
    """
    a = np.asarray(cfg.A)[:, row, component, 0] * lat.h_sigma
    if kind == "sum":
        return float(a.sum())
    if kind == "arcsin":
        if np.any(np.abs(a) > 1):
            raise LatticeError("|h A| exceeds 1; lattice too coarse for the arcsin holonomy")
        return float(np.arcsin(a).sum())
    raise ValueError(f"unknown holonomy kind {kind!r}")


# ---------------------------------------------------------------------------
# freezing


@dataclass
class FreezingVerdict:
    verdict: str  # "propagating", "frozen" or "undetermined"
    directions: list
    variances: list
    initial_variances: list
    profiles: list
    results: list = field(default_factory=list, repr=False)

    @property
    def frozen(self):
        return self.verdict == "frozen"


def row_pins(lat, rows_targets, stiffness=100.0):
    mask = np.zeros(lat.shape, dtype=bool)
    targets = np.zeros(lat.shape)
    for row, value in rows_targets:
        mask[:, row] = True
        targets[:, row] = value
    return Pins(soft_mask=mask, soft_targets=targets, stiffness=stiffness)


def radial_initial(p, lat, low, high, seed=0, wobble=0.05):
    """Initial data X = R(sigma, tau) n with one random direction n and R interpolating low..high.

    Leaf directions are pure gauge; a common direction keeps the lattice from
    drifting along them, while R carries a random smooth perturbation.
    """
    rng = np.random.default_rng(seed)
    n, r = p.chart.dim, p.rank
    sig, tau = lat.coordinates()
    ks, kt = 2 * np.pi / lat.length_sigma, 2 * np.pi / lat.length_tau
    R = 0.5 * (low + high) - 0.5 * (high - low) * np.cos(kt * tau)
    for m in (1, 2):
        R = R + wobble / m * (rng.normal() * np.cos(m * ks * sig + rng.uniform(0, 6))
                              + rng.normal() * np.sin(m * kt * tau + rng.uniform(0, 6)))
    direction = rng.normal(size=n)
    direction /= np.linalg.norm(direction)
    A = 0.1 * rng.normal(size=(*lat.shape, r, 2))
    return FieldConfig(R[..., None] * direction, A)


def transversal_values(p, cfg, transversal):
    fn = _entry_fn(transversal, p.chart, None)
    X = jnp.asarray(cfg.X)
    return np.asarray(fn(*[X[..., k] for k in range(X.shape[-1])]))


def detect_freezing(p, lat, transversal, trials=2, low=1.0, high=1.5, stiffness=100.0, seed=0,
                    steps=4000, tol=1e-8, reference=None, B=None):
    """Relax from data whose transversal invariant varies and see whether that variation survives."""
    from .gauge import check_strictness

    st = check_strictness(p)
    directions = [I for I, f in st.freezing_constraints().items()]
    half = lat.n_tau // 2
    pins = row_pins(lat, [(0, low), (half, high)], stiffness)
    variances, initial, profiles, results = [], [], [], []
    for k in range(trials):
        cfg0 = radial_initial(p, lat, low, high, seed=seed + k)
        f0 = transversal_values(p, cfg0, transversal)
        res = relax(p, cfg0, lat, steps=steps, tol=tol, pins=pins, B=B, transversal=transversal)
        f = transversal_values(p, res.config, transversal)
        variances.append(float(np.var(f)))
        initial.append(float(np.var(f0)))
        profiles.append(f.mean(axis=0))
        results.append(res)
    if not any(r.converged for r in results) and all(not np.isfinite(v) for v in variances):
        raise RuntimeError("relaxation failed in every trial")
    ref_ok = True
    if reference is not None:
        ref = detect_freezing(reference, lat, transversal, trials=1, low=low, high=high,
                              stiffness=stiffness, seed=seed, steps=steps, tol=tol)
        ref_ok = ref.verdict == "propagating"
    if all(v < FROZEN_VARIANCE for v in variances) and ref_ok:
        verdict = "frozen"
    elif all(v >= PROPAGATING_FRACTION * v0 for v, v0 in zip(variances, initial)):
        verdict = "propagating"
    else:
        verdict = "undetermined"
    return FreezingVerdict(verdict, directions if verdict == "frozen" else [], variances, initial,
                           profiles, results)


def reduced_radial_profile(lat, low=1.0, high=1.5, stiffness=100.0):
    """One-dimensional oracle: discrete free field R(tau) on the quotient with the same soft pins."""
    N = lat.n_tau
    ht = lat.h_tau
    weight = lat.n_sigma * lat.h_sigma
    M = np.zeros((N, N))
    rhs = np.zeros(N)
    for j in range(N):
        k = (j + 1) % N
        # 1/2 (R_k - R_j)^2 / ht^2 * ht * weight
        c = weight / ht
        M[j, j] += c
        M[k, k] += c
        M[j, k] -= c
        M[k, j] -= c
    for row, value in ((0, low), (N // 2, high)):
        c = stiffness * weight * ht
        M[row, row] += c
        rhs[row] += c * value
    return np.linalg.solve(M, rhs)


# ---------------------------------------------------------------------------
# dumps


def config_to_csv(cfg, lat, chart_name="", stream=None):
    """Site-major CSV with a JSON header line; returns the text when no stream is given."""
    out = stream or io.StringIO()
    n = cfg.X.shape[-1]
    r = cfg.A.shape[-2]
    header = {"schema": SCHEMA, "lattice": lat.to_dict(), "chart": chart_name, "n": n, "rank": r}
    out.write("# " + json.dumps(header, sort_keys=True) + "\n")
    w = csv.writer(out, lineterminator="\n")
    cols = ["i", "j"] + [f"X{k}" for k in range(n)] + [f"A{a}_{m}" for a in range(r) for m in ("s", "t")]
    w.writerow(cols)
    for i in range(lat.n_sigma):
        for j in range(lat.n_tau):
            row = [i, j] + [repr(float(v)) for v in cfg.X[i, j]] + \
                  [repr(float(cfg.A[i, j, a, m])) for a in range(r) for m in range(2)]
            w.writerow(row)
    if stream is None:
        return out.getvalue()
    return None


def config_from_csv(text):
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# "):
        raise ValueError("missing JSON header line")
    header = json.loads(lines[0][2:])
    lat = Lattice(**header["lattice"])
    n, r = header["n"], header["rank"]
    X = np.zeros((*lat.shape, n))
    A = np.zeros((*lat.shape, r, 2))
    rows = list(csv.reader(lines[1:]))
    for row in rows[1:]:
        i, j = int(row[0]), int(row[1])
        vals = [float(v) for v in row[2:]]
        X[i, j] = vals[:n]
        A[i, j] = np.array(vals[n:]).reshape(r, 2)
    return FieldConfig(X, A), lat, header


def series_to_csv(columns, header=None):
    """Plot-ready CSV for profiles or residual histories: {name: sequence}."""
    out = io.StringIO()
    if header is not None:
        out.write("# " + json.dumps(header, sort_keys=True) + "\n")
    names = list(columns)
    w = csv.writer(out, lineterminator="\n")
    w.writerow(names)
    length = max(len(v) for v in columns.values()) if columns else 0
    for k in range(length):
        w.writerow([repr(float(columns[c][k])) if k < len(columns[c]) else "" for c in names])
    return out.getvalue()


def lambda_shift(p, cfg, lam):
    """A -> A + t(lambda) with lam[i, j, I, mu]."""
    cp = _compiled(p)
    if not cp.s:
        return cfg.copy()
    t = np.asarray(cp.kernel(jnp.asarray(cfg.X)))
    return FieldConfig(np.array(cfg.X), cfg.A + np.einsum("...Ia,...Im->...am", t, lam))

