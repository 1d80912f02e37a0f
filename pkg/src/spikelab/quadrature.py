"""Quadrature rules shared by the radial and finite element code.

One-dimensional integrals use a vectorized adaptive Gauss-Kronrod (7, 15)
pair applied panel by panel.  Triangle integrals use the degree-5 seven
point rule, with a Duffy transform for vertex singularities and uniform
subdivision for near-singular elements.
"""
from __future__ import annotations

import numpy as np

# Kronrod 15-point abscissae (non-negative half) and weights.
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
# Gauss 7-point weights for abscissae _XGK[1], _XGK[3], _XGK[5], _XGK[7].
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

GK_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
GK_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
_G_WEIGHTS = np.zeros(15)
_G_WEIGHTS[[1, 3, 5, 7, 9, 11, 13]] = np.concatenate([_WG[:-1], _WG[::-1]])


class QuadratureError(RuntimeError):
    """Raised when an adaptive rule cannot reach its tolerance."""


def gk15(f, a, b):
    """Apply the Gauss-Kronrod (7, 15) pair on each panel ``[a_k, b_k]``.

    Parameters
    ----------
    f : callable
        Vectorized integrand.
    a, b : array_like
        Panel end points.

    Returns
    -------
    integral, error : ndarray
        Kronrod estimate and ``|K15 - G7|`` per panel.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    c = 0.5 * (a + b)
    hw = 0.5 * (b - a)
    x = c[:, None] + hw[:, None] * GK_NODES[None, :]
    fx = np.asarray(f(x), dtype=float).reshape(x.shape)
    k = hw * (fx @ GK_WEIGHTS)
    g = hw * (fx @ _G_WEIGHTS)
    return k, np.abs(k - g)


def adaptive_panels(f, edges, tol=1e-10, max_depth=40):
    """Integrate ``f`` over each interval of ``edges`` adaptively.

    Every panel whose error estimate exceeds ``tol`` is bisected until the
    estimate passes or ``max_depth`` bisections have been made.

    Parameters
    ----------
    f : callable
        Vectorized integrand accepting arrays of any shape.
    edges : array_like
        Increasing break points ``e_0 < e_1 < ... < e_n``.
    tol : float
        Absolute tolerance per original panel.

    Returns
    -------
    ndarray
        Integral over each of the ``n`` original panels.

    Raises
    ------
    QuadratureError
        If some subinterval still fails after ``max_depth`` levels; the
        message names the offending subinterval.
    """
    edges = np.asarray(edges, dtype=float)
    n = edges.size - 1
    out = np.zeros(n)
    owner = np.arange(n)
    a, b = edges[:-1].copy(), edges[1:].copy()
    loc_tol = np.full(n, tol)
    for _ in range(max_depth):
        val, err = gk15(f, a, b)
        ok = err <= np.maximum(loc_tol, 1e-15 * np.abs(val))
        np.add.at(out, owner[ok], val[ok])
        if ok.all():
            return out
        bad = ~ok
        a, b, owner, loc_tol = a[bad], b[bad], owner[bad], loc_tol[bad]
        m = 0.5 * (a + b)
        a, b = np.concatenate([a, m]), np.concatenate([m, b])
        owner = np.concatenate([owner, owner])
        loc_tol = np.concatenate([loc_tol, loc_tol]) / np.sqrt(2.0)
    raise QuadratureError(
        f"adaptive quadrature failed on [{a[0]:.6g}, {b[0]:.6g}]")


def integrate(f, a, b, tol=1e-10, n_init=8):
    """Adaptive integral of ``f`` over a finite interval ``[a, b]``."""
    edges = np.linspace(a, b, n_init + 1)
    return float(adaptive_panels(f, edges, tol / n_init).sum())


def integrate_halfline(f, a=0.0, tol=1e-10):
    """Integral of ``f`` over ``[a, inf)`` with ``a >= 0``.

    The piece beyond ``max(a, 1)`` is mapped by ``t -> 1/t`` onto a
    bounded interval, so integrands decaying like ``log^k t / t^2`` or
    faster are handled.
    """
    split = max(a, 1.0)
    head = integrate(f, a, split, tol / 2) if split > a else 0.0

    def g(u):
        out = np.zeros_like(u)
        pos = u > 0
        t = 1.0 / u[pos]
        out[pos] = f(t) * t * t
        return out

    edges = np.concatenate([[0.0], np.geomspace(1e-12, 1.0 / split, 48)])
    tail = float(adaptive_panels(g, edges, tol / 2 / 48).sum())
    return head + tail


# Seven point, degree five rule on the reference triangle (barycentric).
_a1, _b1 = (6 - np.sqrt(15)) / 21, (9 + 2 * np.sqrt(15)) / 21
_a2, _b2 = (6 + np.sqrt(15)) / 21, (9 - 2 * np.sqrt(15)) / 21
_w1, _w2 = (155 - np.sqrt(15)) / 1200, (155 + np.sqrt(15)) / 1200
TRI_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_a1, _a1, _b1], [_a1, _b1, _a1], [_b1, _a1, _a1],
    [_a2, _a2, _b2], [_a2, _b2, _a2], [_b2, _a2, _a2],
])
TRI_WEIGHTS = np.array([9 / 40, _w1, _w1, _w1, _w2, _w2, _w2])


def duffy_rule(n=8):
    """Tensor Gauss rule collapsed onto vertex 0 of the reference triangle.

    Returns barycentric points ``(n*n, 3)`` and weights summing to one.
    The Jacobian factor ``u`` cancels ``1/r`` singularities at vertex 0.
    """
    g, w = np.polynomial.legendre.leggauss(n)
    g = 0.5 * (g + 1)
    w = 0.5 * w
    u, v = np.meshgrid(g, g, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    u, v, wu, wv = u.ravel(), v.ravel(), wu.ravel(), wv.ravel()
    # x = P0 + u (P1 - P0) + u v (P2 - P1)
    l1 = u * (1 - v)
    l2 = u * v
    bary = np.column_stack([1 - u, l1, l2])
    weights = 2.0 * wu * wv * u
    return bary, weights


def subdivided_rule(levels=3):
    """The seven point rule repeated on ``4**levels`` congruent subtriangles."""
    tris = [np.eye(3)]
    for _ in range(levels):
        nxt = []
        for t in tris:
            m01, m12, m20 = (t[0] + t[1]) / 2, (t[1] + t[2]) / 2, (t[2] + t[0]) / 2
            nxt += [np.array([t[0], m01, m20]), np.array([m01, t[1], m12]),
                    np.array([m20, m12, t[2]]), np.array([m12, m20, m01])]
        tris = nxt
    pts = np.concatenate([TRI_BARY @ t for t in tris])
    wts = np.tile(TRI_WEIGHTS, len(tris)) / len(tris)
    return pts, wts


def gauss_line(n=5):
    """Gauss-Legendre points on ``[0, 1]`` and weights summing to one."""
    g, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (g + 1), 0.5 * w
