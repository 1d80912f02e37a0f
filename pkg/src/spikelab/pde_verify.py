"""Full nonlinear solves of ``-div(a grad u) + a u = a u^p`` and spike diagnostics."""
from __future__ import annotations

from dataclasses import dataclass, field
import time

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .fem.operator import MeshedOperator
from .greens import SourceKind
from .quadrature import TRI_BARY

P_MAX = 200


@dataclass
class SolutionField:
    """Result of :func:`newton_solve`."""

    p: float
    op: MeshedOperator
    u: np.ndarray
    converged: bool
    newton_iters: int
    residual_norm: float
    history: list = field(default_factory=list)
    message: str = ""
    spikes: list = field(default_factory=list)


def _power_guard(p):
    if not 1 < p <= P_MAX:
        raise ValueError(f"exponent p={p} outside the supported range (1, {P_MAX}]")


def nonlinear_terms(op: MeshedOperator, u, p, jacobian=True):
    """``N_j = int a u_+^p phi_j`` and (optionally) ``int a p u_+^{p-1} phi_i phi_j``."""
    T = op.mesh.triangles
    uq = np.maximum(op.nodal_at_quad(u), 0.0)
    wa = op.qw * op.qa
    up1 = uq ** (p - 1)
    N_loc = np.einsum("mq,qi->mi", wa * up1 * uq, TRI_BARY)
    N = np.zeros(op.mesh.n_nodes)
    np.add.at(N, T.ravel(), N_loc.ravel())
    if not jacobian:
        return N, None
    J_loc = np.einsum("mq,qi,qj->mij", wa * p * up1, TRI_BARY, TRI_BARY)
    n = op.mesh.n_nodes
    J = sp.csr_matrix((J_loc.ravel(), (op._rows, op._cols)), shape=(n, n))
    return N, J


def scaled_residual(op, u, p):
    """Componentwise relative residual ``|A u - N| / (|A| |u| + |N|)``."""
    N, _ = nonlinear_terms(op, u, p, jacobian=False)
    R = op.A @ u - N
    scale = abs(op.A) @ np.abs(u) + np.abs(N)
    return R, float(np.max(np.abs(R) / np.maximum(scale, 1e-300)))


def newton_solve(op: MeshedOperator, u0, p, tol=1e-9, max_iter=60, max_halvings=30):
    """Damped Newton iteration for the weak form.

    The residual is ``int a (grad u . grad v + u v) - int a u_+^p v``; the
    step is halved until the residual norm decreases.

    Returns
    -------
    SolutionField
        ``converged`` is False if the line search stalls or the iteration
        budget is exhausted.
    """
    _power_guard(p)
    u = np.array(u0, dtype=float)
    if np.any(u <= 0):
        raise ValueError("initial field must be positive")
    hist = []
    R, rel = scaled_residual(op, u, p)
    hist.append(rel)
    it = 0
    msg = ""
    while rel > tol and it < max_iter:
        N, Jn = nonlinear_terms(op, u, p)
        J = (op.A - Jn).tocsc()
        try:
            du = splu(J).solve(-R)
        except RuntimeError as exc:
            msg = f"singular Jacobian: {exc}"
            break
        nr = np.linalg.norm(R)
        t = 1.0
        for _ in range(max_halvings):
            cand = u + t * du
            Rc, relc = scaled_residual(op, cand, p)
            if np.linalg.norm(Rc) < nr:
                break
            t *= 0.5
        else:
            msg = "line search stalled"
            break
        u, R, rel = cand, Rc, relc
        it += 1
        hist.append(rel)
    converged = rel <= tol
    if converged and np.any(u <= 0):
        msg = "converged to a sign-changing field"
        converged = False
    if not converged and not msg:
        msg = "iteration budget exhausted"
    return SolutionField(p, op, u, bool(converged), it, rel, hist, msg)


def energy(op: MeshedOperator, u, p):
    """``J_p(u)`` for a nodal P1 field."""
    _power_guard(p)
    Ku = op.K @ u
    Mu = op.M @ u
    quad = 0.5 * float(u @ (Ku + Mu))
    uq = np.maximum(op.nodal_at_quad(u), 0.0)
    return quad - float(np.sum(op.qw * op.qa * uq ** (p + 1))) / (p + 1)


def spike_metrics(sol: SolutionField, centers, d=None):
    """Per-spike peak, location and mass ``p int_{B_d} u^{p+1}``.

    Parameters
    ----------
    centers : array_like (m, 2)
        Nominal spike locations.
    d : float, optional
        Ball radius; defaults to half the smallest inter-spike distance, or
        ``0.1 diam`` for a single spike.

    Returns
    -------
    dict
        ``spikes`` (list of dicts) and ``outside_sup``.
    """
    op = sol.op
    mesh = op.mesh
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    m = len(centers)
    if d is None:
        if m > 1:
            dist = np.linalg.norm(centers[:, None] - centers[None, :], axis=2)
            d = 0.5 * dist[~np.eye(m, dtype=bool)].min()
        else:
            d = 0.1 * mesh.dom.diameter
    for i in range(m):
        for k in range(i + 1, m):
            if np.linalg.norm(centers[i] - centers[k]) < 2 * d:
                raise ValueError("metric balls overlap")
    u = sol.u
    X = mesh.nodes
    cen = op.P0 + (op.e1 + op.e2) / 3
    uq = np.maximum(op.nodal_at_quad(u), 0.0)
    inside_any = np.zeros(len(X), bool)
    out = []
    for c in centers:
        ball = np.linalg.norm(X - c, axis=1) < d
        inside_any |= ball
        k = np.nonzero(ball)[0][np.argmax(u[ball])]
        el = np.linalg.norm(cen - c, axis=1) < d
        mass = sol.p * float(np.sum(op.qw[el] * uq[el] ** (sol.p + 1)))
        out.append({"location": X[k].copy(), "peak": float(u[k]), "mass": mass,
                    "core_width": core_width(mesh, u, X[k], sol.p)})
    outside = float(u[~inside_any].max()) if np.any(~inside_any) else 0.0
    return {"spikes": out, "outside_sup": outside, "radius": float(d)}


def core_width(mesh, u, center, p):
    """Radius where ``u`` has dropped by ``2 log 2 u_max / (p + log 8)``.

    For the profile ``u ~ (p + U_{1,0}(x/delta)) u_max / (p + log 8)`` this
    radius equals ``delta``.
    """
    r = np.linalg.norm(mesh.nodes - center, axis=1)
    order = np.argsort(r)
    umax = u[order[0]]
    drop = 2 * np.log(2) * umax / (p + np.log(8))
    below = np.nonzero(u[order] < umax - drop)[0]
    if below.size == 0:
        return float("nan")
    j = below[0]
    r1, r0 = r[order[j]], r[order[j - 1]]
    v1, v0 = u[order[j]], u[order[j - 1]]
    lvl = umax - drop
    return float(r0 + (r1 - r0) * (v0 - lvl) / (v0 - v1)) if v0 != v1 else float(r1)


@dataclass
class BranchStage:
    p: float
    solution: SolutionField
    metrics: dict
    mu: np.ndarray
    delta: np.ndarray
    n_nodes: int
    seconds: float


def continuation_in_p(dom, weight, points, kinds, p_schedule, h=0.05, grading=0.25,
                      resolution=8.0, mirror=False, predictor="ansatz", d=None,
                      locate=None):
    """Follow a spike branch along an increasing ``p`` schedule.

    Each stage re-solves ``mu``, re-grades the mesh at the new ``delta`` and
    runs Newton.  ``predictor="ansatz"`` starts every stage from the ansatz
    at the new exponent; ``predictor="previous"`` starts from the previous
    solution interpolated onto the new mesh.  ``locate(p)`` may supply spike
    positions per stage (for example interior depths ``t/p``).

    Returns
    -------
    list of BranchStage
        Truncated at the first stage that fails to converge.
    """
    from .pipeline import ansatz_for, prepare

    ps = list(p_schedule)
    if any(b <= a for a, b in zip(ps, ps[1:])):
        raise ValueError("p schedule must increase")
    stages = []
    prev = None
    for p in ps:
        t0 = time.perf_counter()
        pts = locate(p) if locate is not None else points
        setup = prepare(dom, weight, pts, kinds, p, h=h, grading=grading,
                        resolution=resolution, mirror=mirror)
        af = ansatz_for(setup)
        u0 = af.nodal_values
        if predictor == "previous" and prev is not None:
            u0 = prev.op.mesh.interpolate(prev.u, setup.op.mesh.nodes)
            u0 = np.maximum(u0, 1e-3)
        sol = newton_solve(setup.op, u0, p)
        if not sol.converged:
            stages.append(BranchStage(p, sol, {}, setup.cfg.mu, setup.cfg.delta,
                                      setup.op.mesh.n_nodes, time.perf_counter() - t0))
            break
        met = spike_metrics(sol, setup.cfg.points, d)
        sol.spikes = met["spikes"]
        stages.append(BranchStage(p, sol, met, setup.cfg.mu, setup.cfg.delta,
                                  setup.op.mesh.n_nodes, time.perf_counter() - t0))
        prev = sol
    return stages


def lift_identity_check(k1, k2, u, x, p=3.0, h=1e-3):
    """Residual between the divergence form and the lifted radial form.

    ``[-div(a grad u) + a u - a u^p] - a [-Delta_N v + v - v^p]`` with
    ``a = x1^k1 x2^k2`` and ``v(y) = u(|y_A|, |y_B|)`` the lift of ``u`` to
    ``R^(k1+1) x R^(k2+1)``.  Since ``Delta_N v = Delta u + sum k_i/x_i d_i u``
    the residual vanishes up to difference errors.

    The divergence form uses the analytic gradient of ``a`` and planar
    differences of ``u``; the lifted form takes second differences of ``v``
    along all ``N = k1 + k2 + 2`` axes.  Both use fourth order stencils.

    Parameters
    ----------
    u : callable
        Smooth test field of points ``(..., 2)``.
    x : array_like (2,) or (n, 2)
        Points in the open positive quadrant.
    h : float
        Relative difference step.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if np.any(x <= 0):
        raise ValueError("lift identity needs x1, x2 > 0")
    if k1 < 0 or k2 < 0 or int(k1) != k1 or int(k2) != k2:
        raise ValueError("exponents must be nonnegative integers")
    k1, k2 = int(k1), int(k2)
    hs = h * np.maximum(1.0, np.abs(x))

    def d1(f, pts, i):
        e = np.zeros(pts.shape[1])
        e[i] = 1.0
        hh = hs[:, i:i + 1] * e
        return (-f(pts + 2 * hh) + 8 * f(pts + hh) - 8 * f(pts - hh) + f(pts - 2 * hh)) / (12 * hs[:, i])

    def d2(f, pts, i, hi):
        e = np.zeros(pts.shape[1])
        e[i] = 1.0
        hh = hi[:, None] * e
        return (-f(pts + 2 * hh) + 16 * f(pts + hh) - 30 * f(pts) + 16 * f(pts - hh)
                - f(pts - 2 * hh)) / (12 * hi**2)

    # planar divergence form with analytic grad a
    a = x[:, 0] ** k1 * x[:, 1] ** k2
    ga = np.column_stack([k1 * x[:, 0] ** max(k1 - 1, 0) * x[:, 1] ** k2,
                          k2 * x[:, 0] ** k1 * x[:, 1] ** max(k2 - 1, 0)])
    du = np.column_stack([d1(u, x, 0), d1(u, x, 1)])
    lap = d2(u, x, 0, hs[:, 0]) + d2(u, x, 1, hs[:, 1])
    uv = u(x)
    up = np.maximum(uv, 0.0) ** p if p != int(p) else uv ** int(p)
    div_form = -(a * lap + np.sum(ga * du, axis=1)) + a * uv - a * up

    # lifted field on R^(k1+1) x R^(k2+1), evaluated at (x1, 0.., x2, 0..)
    n1 = k1 + 1

    def v(y):
        return u(np.stack([np.linalg.norm(y[:, :n1], axis=1),
                           np.linalg.norm(y[:, n1:], axis=1)], axis=-1))

    y = np.zeros((len(x), n1 + k2 + 1))
    y[:, 0], y[:, n1] = x[:, 0], x[:, 1]
    lap_N = np.zeros(len(x))
    for j in range(y.shape[1]):
        lap_N += d2(v, y, j, hs[:, 0] if j < n1 else hs[:, 1])
    lifted = -lap_N + uv - up
    return np.abs(div_form - a * lifted)
