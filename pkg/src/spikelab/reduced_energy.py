"""Reduced energy of spike configurations and its critical points.

Two evaluations of ``F_p(xi) ~ J_p(U_xi)`` are provided: quadrature of the
energy functional on the assembled ansatz, and the two-term expansion

    F_p = e/(2p) sum_i c_i a(xi_i) [1 - 2 log p/p + (K+2)/p
                                    - c_i H(xi_i, xi_i)/p - sum_k c_k G(xi_i, xi_k)/p].

Critical points are searched in two regimes.  Separated spikes use normal
coordinates ``xi_i = x(s_i) - (t_i/p) nu(s_i)`` and the explicit objective

    8 pi sum_{interior} [a(s) + (4 a(s) log t - t d_nu a(s))/p] + 4 pi sum_{boundary} a(s).

Clustered spikes near a boundary maximum ``xi*`` of ``a`` maximize the
explicit leading part of ``F_p`` assembled from finite element Green's data.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import warnings

import numpy as np
from scipy.optimize import least_squares, minimize

from .ansatz import AnsatzField
from .bubble import constants
from .fem.mesh import build_mesh
from .fem.operator import MeshedOperator
from .greens import GreenCache, GreensError, SourceKind, green_eval
from .mu_solver import SpikeConfig
from .quadrature import TRI_BARY, TRI_WEIGHTS, subdivided_rule

SQRT_E = float(np.sqrt(np.e))


class LandscapeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# energy evaluations

def energy_quadrature(op: MeshedOperator, af: AnsatzField, levels=2, near=30.0):
    """``J_p(U_xi) = 1/2 int a (|grad U|^2 + U^2) - 1/(p+1) int a U_+^{p+1}``.

    Elements whose centroid lies within ``near * delta_i`` of a spike use the
    seven point rule on ``4**levels`` subtriangles; the rest use it once.
    """
    cfg = af.cfg
    p = cfg.p
    cen = op.P0 + (op.e1 + op.e2) / 3
    fine = np.zeros(len(cen), bool)
    for i in range(cfg.m):
        fine |= np.linalg.norm(cen - cfg.points[i], axis=1) < near * cfg.delta[i]
    total = 0.0
    for mask, (bary, wts) in ((~fine, (TRI_BARY, TRI_WEIGHTS)), (fine, subdivided_rule(levels))):
        tri = np.nonzero(mask)[0]
        if tri.size == 0:
            continue
        for chunk in np.array_split(tri, max(1, tri.size * len(wts) // 400000 + 1)):
            x = op.map_points(chunk, bary)
            a = op.weight.value(x)
            u = af.values_on_elements(chunk, bary)
            g = af.gradients_on_elements(chunk, bary)
            umax = float(np.max(u))
            # u^{p+1} stays in range when u <= 2 sqrt(e) and p <= 200
            assert umax <= 2 * SQRT_E and p <= 200, f"ansatz peak {umax:.3g} out of range"
            up = np.maximum(u, 0.0)
            dens = 0.5 * a * (np.sum(g * g, axis=-1) + u * u) - a * up ** (p + 1) / (p + 1)
            total += float(np.sum(op.area[chunk, None] * wts[None, :] * dens))
    return total


def energy_expansion(cfg: SpikeConfig, robin, G, weight, K=None):
    """Two-term expansion of the reduced energy.

    Parameters
    ----------
    robin : array_like (m,)
        ``H(xi_i, xi_i)``.
    G : array_like (m, m)
        ``G[i, k] = G(xi_i, xi_k)``; the diagonal is ignored.
    weight : WeightField
    """
    p = cfg.p
    if K is None:
        K = constants()["K"]
    c = cfg.c
    a = weight.value(cfg.points)
    G = np.array(G, dtype=float)
    np.fill_diagonal(G, 0.0)
    inter = G @ c
    bracket = (1 - 2 * np.log(p) / p + (K + 2) / p - c * np.asarray(robin) / p - inter / p)
    return float(np.e / (2 * p) * np.sum(c * a * bracket))


@dataclass
class LandscapePoint:
    """Reduced energy at one configuration.

    ``gradient`` is taken in the admissible coordinates of the regime.
    """

    xi: np.ndarray
    kinds: tuple
    value_expansion: float
    value_quadrature: float
    gradient: np.ndarray | None = None

    def __post_init__(self):
        if not (np.isfinite(self.value_expansion) and np.isfinite(self.value_quadrature)):
            raise LandscapeError("non-finite reduced energy")


def landscape_point(dom, weight, points, kinds, p, h=0.05, mirror=False, gradient=None):
    """Both energy evaluations at ``points`` (builds meshes and ansatz)."""
    from .pipeline import ansatz_for, prepare

    setup = prepare(dom, weight, points, kinds, p, h=h, mirror=mirror)
    setup.cfg.check_admissible(dom)
    af = ansatz_for(setup)
    q = energy_quadrature(setup.op, af)
    e = energy_expansion(setup.cfg, setup.robin, setup.G, weight)
    return LandscapePoint(setup.cfg.points, setup.cfg.kinds, e, q, gradient)


# ---------------------------------------------------------------------------
# separated regime

def boundary_extrema(dom, weight, n=4096):
    """Local extrema of ``a`` along the boundary as ``(s, kind)`` pairs."""
    s = np.arange(n) / n
    v = weight.value(dom.point(s))
    out = []
    span = np.ptp(v)
    if span <= 1e-14 * max(1.0, float(np.abs(v).max())):
        return out
    for j in range(n):
        lo, mid, hi = v[j - 1], v[j], v[(j + 1) % n]
        if mid > lo and mid >= hi:
            kind = "max"
        elif mid < lo and mid <= hi:
            kind = "min"
        else:
            continue
        sign = -1.0 if kind == "max" else 1.0
        f = lambda x: sign * float(weight.value(dom.point(x)))
        a, b = (j - 1) / n, (j + 1) / n
        gr = (np.sqrt(5) - 1) / 2
        for _ in range(80):
            c1, c2 = b - gr * (b - a), a + gr * (b - a)
            if f(c1) < f(c2):
                b = c2
            else:
                a = c1
        out.append((float((0.5 * (a + b)) % 1.0), kind))
    return out


class SeparatedObjective:
    """Explicit reduced objective in normal coordinates.

    Variables ``z = (s_1, ..., s_m, t_1, ..., t_l)``; the first ``l`` spikes
    are interior at ``x(s) - (t/p) nu(s)``, the rest on the boundary.

    Parameters
    ----------
    d_sep : float, optional
        Minimal distance ``2 d_sep`` between the boundary feet; defaults to
        ``0.1 diam``.
    d_t : float
        Depth window ``d_t < t < 1/d_t``.
    """

    def __init__(self, dom, weight, m, l, p, d_sep=None, d_t=0.01):
        if not 0 <= l <= m:
            raise ValueError("need 0 <= l <= m")
        self.dom, self.weight = dom, weight
        self.m, self.l, self.p = int(m), int(l), float(p)
        self.d_sep = 0.1 * dom.diameter if d_sep is None else float(d_sep)
        self.d_t = float(d_t)

    @property
    def kinds(self):
        return ("interior",) * self.l + ("boundary",) * (self.m - self.l)

    def split(self, z):
        z = np.asarray(z, dtype=float)
        return z[: self.m], z[self.m:]

    def points(self, z):
        s, t = self.split(z)
        x = self.dom.point(s)
        x[: self.l] -= (t / self.p)[:, None] * self.dom.normal(s[: self.l])
        return x

    def _a_terms(self, s):
        """``a``, ``da/ds``, ``d_nu a`` and ``d(d_nu a)/ds`` along the curve."""
        dom, w = self.dom, self.weight
        x, d1 = dom.point(s), dom.d1(s)
        nu, dnu = dom.normal(s), dom.normal_derivative(s)
        a, g, H = w.value(x), w.grad(x), w.hess(x)
        da = np.sum(g * d1, axis=-1)
        an = np.sum(g * nu, axis=-1)
        dan = np.einsum("...i,...ij,...j->...", d1, H, nu) + np.sum(g * dnu, axis=-1)
        return a, da, an, dan

    def t_star(self, s):
        """Depth optimum ``4 a(s) / d_nu a(s)``.

        Raises
        ------
        LandscapeError
            If ``d_nu a(s) <= 0``: an interior spike needs an increasing
            weight towards the boundary.
        """
        a, _, an, _ = self._a_terms(np.atleast_1d(np.asarray(s, dtype=float)))
        if np.any(an <= 0):
            raise LandscapeError(
                "interior spike requested where the outward normal derivative of a is "
                f"not positive (d_nu a = {an.min():.3g}); no depth optimum exists")
        return 4 * a / an

    def value(self, z):
        s, t = self.split(z)
        a, _, an, _ = self._a_terms(s)
        l, p = self.l, self.p
        if np.any(t <= 0):
            return -np.inf
        inner = a[:l] + (4 * a[:l] * np.log(t) - t * an[:l]) / p
        return float(8 * np.pi * np.sum(inner) + 4 * np.pi * np.sum(a[l:]))

    def gradient(self, z):
        s, t = self.split(z)
        a, da, an, dan = self._a_terms(s)
        l, p = self.l, self.p
        gs = 4 * np.pi * da
        gs[:l] = 8 * np.pi * (da[:l] + (4 * da[:l] * np.log(t) - t * dan[:l]) / p)
        gt = 8 * np.pi * (4 * a[:l] / t - an[:l]) / p
        return np.concatenate([gs, gt])

    def hessian(self, z, step=1e-5):
        """Central differences of the analytic gradient (symmetrized)."""
        z = np.asarray(z, dtype=float)
        n = z.size
        Hm = np.empty((n, n))
        for j in range(n):
            hj = step * max(1.0, abs(z[j])) if j >= self.m else step
            e = np.zeros(n)
            e[j] = hj
            Hm[:, j] = (self.gradient(z + e) - self.gradient(z - e)) / (2 * hj)
        return 0.5 * (Hm + Hm.T)

    def feasible(self, z):
        """Membership in ``Lambda_d``: separated feet and ``d_t < t < 1/d_t``."""
        s, t = self.split(z)
        x = self.dom.point(s)
        for i in range(self.m):
            for k in range(i + 1, self.m):
                if np.linalg.norm(x[i] - x[k]) <= 2 * self.d_sep:
                    return False
        return bool(np.all((t > self.d_t) & (t < 1 / self.d_t)))

    def seed(self, s):
        """Seed vector with interior depths at ``t*(s_i)``."""
        s = np.asarray(s, dtype=float)
        t = self.t_star(s[: self.l]) if self.l else np.zeros(0)
        return np.concatenate([s, t])


@dataclass
class CriticalPoint:
    """Critical point of the separated objective."""

    z: np.ndarray
    points: np.ndarray
    kinds: tuple
    value: float
    grad_norm: float
    eigenvalues: np.ndarray
    classification: str
    converged: bool
    feasible: bool
    iterations: int
    seed: np.ndarray = field(repr=False, default=None)

    @property
    def s(self):
        return self.z[: len(self.kinds)]

    @property
    def t(self):
        return self.z[len(self.kinds):]


def classify(eigs, scale, rel=1e-8):
    """``max``, ``min``, ``saddle`` or ``degenerate`` from Hessian eigenvalues."""
    eigs = np.asarray(eigs)
    if eigs.size == 0:
        return "degenerate"
    if np.any(np.abs(eigs) <= rel * scale):
        return "degenerate"
    if np.all(eigs < 0):
        return "max"
    if np.all(eigs > 0):
        return "min"
    return "saddle"


def find_critical_separated(obj: SeparatedObjective, seeds, tol=1e-11, max_iter=200):
    """Damped Newton on the gradient with a trust-region fallback.

    Parameters
    ----------
    seeds : sequence of array_like
        Starting vectors ``z``; see :meth:`SeparatedObjective.seed`.

    Returns
    -------
    list of CriticalPoint
        One entry per seed; unconverged seeds are reported, not dropped.
    """
    if obj.l:
        for z0 in seeds:
            obj.t_star(np.asarray(z0, dtype=float)[: obj.l])
    a_scale = 8 * np.pi * float(np.max(np.abs(obj.weight.value(obj.dom.point(np.linspace(0, 1, 64))))))
    out = []
    for z0 in seeds:
        z = np.array(z0, dtype=float)
        g = obj.gradient(z)
        it = 0
        ok = np.linalg.norm(g) <= tol
        while not ok and it < max_iter:
            Hm = obj.hessian(z)
            try:
                dz = -np.linalg.solve(Hm, g)
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(dz)):
                break
            gn = np.linalg.norm(g)
            lam = 1.0
            while lam > 1e-8:
                zc = z + lam * dz
                gc = obj.gradient(zc)
                if np.all(zc[obj.m:] > 0) and np.linalg.norm(gc) < gn:
                    break
                lam *= 0.5
            else:
                break
            z, g = zc, gc
            it += 1
            ok = np.linalg.norm(g) <= tol
        if not ok:
            lo = np.concatenate([np.full(obj.m, -np.inf), np.full(obj.l, 1e-12)])
            res = least_squares(obj.gradient, z, jac=obj.hessian, method="trf",
                                bounds=(lo, np.inf), xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                max_nfev=max_iter)
            z, g = res.x, obj.gradient(res.x)
            it += int(res.nfev)
            ok = np.linalg.norm(g) <= max(tol, 1e-9)
        z = z.copy()
        s = np.mod(z[: obj.m], 1.0)
        z[: obj.m] = np.where(s > 1.0 - 1e-14, 0.0, s)
        eigs = np.linalg.eigvalsh(obj.hessian(z))
        out.append(CriticalPoint(z, obj.points(z), obj.kinds, obj.value(z),
                                 float(np.linalg.norm(obj.gradient(z))), eigs,
                                 classify(eigs, a_scale), bool(ok), obj.feasible(z), it,
                                 np.asarray(z0, dtype=float)))
    return out


# ---------------------------------------------------------------------------
# clustered regime

class ClusteredObjective:
    """Leading part of ``F_p`` for spikes clustering at a boundary point.

    Interior spike ``i`` is parametrized by ``(s_i, d_i)`` with
    ``xi_i = x(s_i) - d_i nu(s_i)``; boundary spikes by ``s_k``.  The value is

        e/(2p^2) { 8 pi sum_i a_i [p - 2 log p - 8 pi H_ii - 8 pi sum_{k<=l} G_ik]
                   - 64 pi^2 sum_{i<=l<k} a_k G_ki
                   + 4 pi sum_{k>l} a_k [p - 2 log p + 4 sum_{j>l} log|xi_k - xi_j|] }.

    Parameters
    ----------
    cache : GreenCache
        Green's data on a mesh graded at ``xi_star``.
    ball : float
        Radius of the neighbourhood ``B_d(xi_star)``; defaults to ``0.25 diam``.
    """

    def __init__(self, dom, weight, m, l, p, xi_star, cache: GreenCache, ball=None):
        if not 0 <= l <= m:
            raise ValueError("need 0 <= l <= m")
        self.dom, self.weight = dom, weight
        self.m, self.l, self.p = int(m), int(l), float(p)
        self.cache = cache
        s0, sd = dom.project(np.asarray(xi_star, dtype=float)[None, :])
        self.s_star = float(s0[0])
        self.xi_star = dom.point(self.s_star)
        self.ball = 0.25 * dom.diameter if ball is None else float(ball)
        self.kappa = 2 * (self.m**2 + 1)
        self.sep_min = self.p ** (-self.kappa)
        mesh = cache.op.mesh
        self.depth_floor = 3.0 * float(mesh.local_size(self.xi_star)[0])
        self.depth_min = max(self.sep_min, self.depth_floor)
        self.n_evals = 0
        nu = dom.normal(self.s_star)
        an = float(np.sum(weight.grad(self.xi_star) * nu))
        if abs(an) > 1e-6 * max(1.0, float(np.abs(weight.grad(self.xi_star)).max())):
            warnings.warn(f"d_nu a(xi*) = {an:.3g} is not zero; the clustered regime "
                          "assumes a critical weight at xi*", RuntimeWarning, stacklevel=2)

    @property
    def kinds(self):
        return ("interior",) * self.l + ("boundary",) * (self.m - self.l)

    def bounds(self):
        ds = 0.95 * self.ball / float(self.dom.speed(self.s_star))
        b = [(self.s_star - ds, self.s_star + ds)] * self.m
        b += [(self.depth_min, 0.9 * self.ball)] * self.l
        return b

    def points(self, z):
        z = np.asarray(z, dtype=float)
        s, d = z[: self.m], z[self.m:]
        x = self.dom.point(s)
        x[: self.l] -= d[:, None] * self.dom.normal(s[: self.l])
        return x

    def value_at_points(self, x):
        """Leading part of ``F_p`` at explicit positions."""
        self.n_evals += 1
        l, m, p = self.l, self.m, self.p
        a = self.weight.value(x)
        lead = p - 2 * np.log(p)
        gds = [self.cache.get(x[i], SourceKind.INTERIOR) for i in range(l)]
        tot = 0.0
        for i in range(l):
            br = lead - 8 * np.pi * gds[i].robin
            for k in range(l):
                if k != i:
                    br -= 8 * np.pi * float(green_eval(gds[k], x[i])[0])
            tot += 8 * np.pi * a[i] * br
            for k in range(l, m):
                tot -= 64 * np.pi**2 * a[k] * float(green_eval(gds[i], x[k])[0])
        for k in range(l, m):
            br = lead
            for j in range(l, m):
                if j != k:
                    br += 4 * np.log(np.linalg.norm(x[k] - x[j]))
            tot += 4 * np.pi * a[k] * br
        return float(np.e / (2 * p * p) * tot)

    def value(self, z):
        return self.value_at_points(self.points(z))

    def initial(self, rho=1.0):
        """The lower-bound configuration: depths ``t_i/sqrt(p)``, boundary
        spacing ``rho/sqrt(p)``."""
        sq = np.sqrt(self.p)
        sp = float(self.dom.speed(self.s_star))
        s = np.empty(self.m)
        s[: self.l] = self.s_star
        nb = self.m - self.l
        offs = (np.arange(nb) - (nb - 1) / 2) * rho / sq
        if self.l and nb:
            offs = (np.arange(nb) + 1) * rho / sq
        s[self.l:] = self.s_star + offs / sp
        d = rho * (np.arange(self.l) + 1) / sq
        return np.clip(np.concatenate([s, d]), *np.array(self.bounds()).T)


@dataclass
class ClusteredResult:
    """Best configuration of the clustered search."""

    z: np.ndarray
    points: np.ndarray
    kinds: tuple
    value: float
    value_initial: float
    separation: float
    boundary_trapped: bool
    resolution_trapped: bool
    start_values: list
    seed: int
    n_green_solves: int


def clustered_cache(dom, weight, xi_star, h=0.05, h_star=0.002, grading=0.25, mirror=False):
    """Green's cache on a mesh graded at ``xi_star``."""
    mesh = build_mesh(dom, h, [(np.asarray(xi_star, dtype=float), h_star)], grading=grading,
                      mirror=mirror)
    return GreenCache(MeshedOperator(mesh, weight))


def find_critical_clustered(obj: ClusteredObjective, n_starts=16, seed=0, spread=0.3,
                            fd_quanta=10.0, max_iter=100, ftol=1e-9):
    """Maximize the clustered objective with box-constrained multistart.

    Starts are the lower-bound configuration and ``n_starts - 1`` random
    perturbations of it of relative size ``spread`` (seeded).  Gradients are
    central differences with steps of ``fd_quanta`` cache quanta.

    Returns
    -------
    ClusteredResult
        ``boundary_trapped`` flags a maximizer on the constraint set's
        boundary; ``resolution_trapped`` flags an interior spike stopped by
        the mesh depth floor instead.
    """
    rng = np.random.default_rng(seed)
    bnds = np.array(obj.bounds())
    z0 = obj.initial()
    sq = np.sqrt(obj.p)
    sp = float(obj.dom.speed(obj.s_star))
    scale = np.concatenate([np.full(obj.m, 1 / (sq * sp)), np.full(obj.l, 1 / sq)])
    step_phys = fd_quanta * obj.cache.quantum
    steps = np.concatenate([np.full(obj.m, step_phys / sp), np.full(obj.l, step_phys)])
    starts = [z0] + [np.clip(z0 + spread * scale * rng.standard_normal(z0.size), bnds[:, 0], bnds[:, 1])
                     for _ in range(n_starts - 1)]

    v0 = obj.value(z0)
    # sources too close to the boundary for the local mesh size are
    # penalized with a value worse than the initial configuration
    penalty = -v0 + abs(v0) + 1.0

    def neg(z):
        try:
            return -obj.value(z)
        except GreensError:
            return penalty

    def neg_grad(z):
        g = np.empty(z.size)
        for j in range(z.size):
            zp, zm = z.copy(), z.copy()
            zp[j] = min(z[j] + steps[j], bnds[j, 1])
            zm[j] = max(z[j] - steps[j], bnds[j, 0])
            g[j] = (neg(zp) - neg(zm)) / (zp[j] - zm[j])
        return g

    best, vals = None, []
    for zs in starts:
        res = minimize(neg, zs, jac=neg_grad, method="L-BFGS-B", bounds=bnds,
                       options={"maxiter": max_iter, "ftol": ftol, "gtol": 1e-8})
        vals.append(float(-res.fun))
        if best is None or res.fun < best.fun:
            best = res
    z = best.x
    x = obj.points(z)
    dist = [np.linalg.norm(x[i] - x[k]) for i in range(obj.m) for k in range(i + 1, obj.m)]
    sep = float(min(dist)) if dist else float("nan")
    tol = 1e-6 * (bnds[:, 1] - bnds[:, 0])
    at_lo = np.abs(z - bnds[:, 0]) <= tol
    at_hi = np.abs(z - bnds[:, 1]) <= tol
    mesh = obj.cache.op.mesh
    depth = z[obj.m:]
    res_trap = bool(obj.depth_floor > obj.sep_min and np.any(at_lo[obj.m:]))
    res_trap |= bool(np.any(depth < 2.5 * mesh.local_size(x[: obj.l])))
    ball_trap = bool(np.any(at_hi) or np.any(at_lo[: obj.m]))
    if obj.depth_floor <= obj.sep_min:
        ball_trap |= bool(np.any(at_lo[obj.m:]))
    ball_trap |= bool(dist and sep <= obj.sep_min * (1 + 1e-6))
    ball_trap |= bool(np.any(np.linalg.norm(x - obj.xi_star, axis=1) >= obj.ball * (1 - 1e-6)))
    return ClusteredResult(z, x, obj.kinds, float(-best.fun), float(v0), sep, ball_trap,
                           res_trap, vals, int(seed), len(obj.cache))
