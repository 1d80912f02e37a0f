"""Assembly and solution of ``int a (grad u . grad v + u v) = int a f v + oint a g v``."""
from __future__ import annotations

import warnings

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ..quadrature import TRI_BARY, TRI_WEIGHTS, duffy_rule, gauss_line, subdivided_rule
from .mesh import Mesh
from .weights import WeightField

_DUFFY = duffy_rule(8)
_SUBDIV = subdivided_rule(3)


def wrap_param(ds):
    """Map a parameter difference into ``[-1/2, 1/2]`` without touching small ones."""
    ds = np.asarray(ds, dtype=float)
    return np.where(np.abs(ds) > 0.5, (ds + 0.5) % 1.0 - 0.5, ds)


class SolveError(RuntimeError):
    pass


class MeshedOperator:
    """Weighted Neumann operator ``-Delta_a + 1`` on a mesh.

    Parameters
    ----------
    mesh : Mesh
    weight : WeightField
    n_line : int
        Gauss points per boundary edge.

    Notes
    -----
    Boundary integrals run along the true curve between consecutive boundary
    nodes, parametrized by the curve parameter.
    """

    def __init__(self, mesh: Mesh, weight: WeightField, n_line=5):
        self.mesh = mesh
        self.weight = weight
        X, T = mesh.nodes, mesh.triangles
        P = X[T]
        self.P0 = P[:, 0]
        self.e1 = P[:, 1] - P[:, 0]
        self.e2 = P[:, 2] - P[:, 0]
        det = self.e1[:, 0] * self.e2[:, 1] - self.e1[:, 1] * self.e2[:, 0]
        if np.any(det <= 0):
            raise ValueError("mesh has non-positive triangle areas")
        self.area = 0.5 * det
        # gradients of the barycentric basis
        g1 = np.column_stack([self.e2[:, 1], -self.e2[:, 0]]) / det[:, None]
        g2 = np.column_stack([-self.e1[:, 1], self.e1[:, 0]]) / det[:, None]
        self.grads = np.stack([-g1 - g2, g1, g2], axis=1)
        self.qx = self.map_points(np.arange(len(T)), TRI_BARY)
        self.qw = self.area[:, None] * TRI_WEIGHTS[None, :]
        self.qa = weight.value(self.qx)
        if np.any(weight.value(X) <= 0):
            raise ValueError("weight must be positive at every mesh node")

        n = mesh.n_nodes
        a_int = np.sum(self.qw * self.qa, axis=1)
        Kloc = a_int[:, None, None] * np.einsum("mik,mjk->mij", self.grads, self.grads)
        Mloc = np.einsum("mq,qi,qj->mij", self.qw * self.qa, TRI_BARY, TRI_BARY)
        rows = np.repeat(T, 3, axis=1).ravel()
        cols = np.tile(T, (1, 3)).ravel()
        self.K = sp.csr_matrix((Kloc.ravel(), (rows, cols)), shape=(n, n))
        self.M = sp.csr_matrix((Mloc.ravel(), (rows, cols)), shape=(n, n))
        self.A = (self.K + self.M).tocsc()
        self._rows, self._cols = rows, cols
        self._lu = None

        # boundary quadrature along the curve
        E = mesh.boundary_edges
        s0 = mesh.bparam[E[:, 0]]
        ds = wrap_param(mesh.bparam[E[:, 1]] - s0)
        t, w = gauss_line(n_line)
        self.bs = s0[:, None] + ds[:, None] * t[None, :]
        self.bx = mesh.dom.point(self.bs)
        self.bnu = mesh.dom.normal(self.bs)
        self.bw = np.abs(ds)[:, None] * mesh.dom.speed(self.bs) * w[None, :]
        self.bphi = np.stack([1 - t, t], axis=1)
        self.ba = weight.value(self.bx)
        self.bs0 = s0
        self.bds = ds

    # geometry helpers -----------------------------------------------------
    def map_points(self, tri, bary):
        """Physical points for barycentric coordinates on triangles ``tri``."""
        bary = np.asarray(bary)
        return (self.P0[tri][:, None, :] + bary[None, :, 1:2] * self.e1[tri][:, None, :]
                + bary[None, :, 2:3] * self.e2[tri][:, None, :])

    def integrate(self, values_q):
        """Integral of a field sampled at the element quadrature points."""
        return float(np.sum(self.qw * values_q))

    def nodal_at_quad(self, u):
        """Values of the P1 interpolant of ``u`` at the quadrature points."""
        return u[self.mesh.triangles] @ TRI_BARY.T

    # loads ----------------------------------------------------------------
    def _scatter(self, local):
        b = np.zeros(self.mesh.n_nodes)
        np.add.at(b, self.mesh.triangles.ravel(), local.ravel())
        return b

    def load_interior(self, f, singular_point=None):
        """``int a f phi_j`` for a callable ``f(x)`` or nodal array ``f``.

        With ``singular_point`` the elements touching it use the Duffy rule
        and elements within three diameters use a 3-level subdivision.
        """
        if not callable(f):
            fq = self.nodal_at_quad(np.asarray(f, dtype=float))
            return self._scatter(np.einsum("mq,qi->mi", self.qw * self.qa * fq, TRI_BARY))
        special = np.zeros(len(self.area), bool)
        extra = np.zeros((0, 3))
        extra_tri = np.zeros(0, int)
        if singular_point is not None:
            special, extra_tri, extra = self._singular_load(f, np.asarray(singular_point, float))
        fq = np.zeros_like(self.qa)
        reg = ~special
        fq[reg] = f(self.qx[reg])
        local = np.einsum("mq,qi->mi", self.qw * self.qa * fq, TRI_BARY)
        local[special] = 0.0
        b = self._scatter(local)
        if extra_tri.size:
            np.add.at(b, self.mesh.triangles[extra_tri].ravel(), extra.ravel())
        return b

    def _singular_load(self, f, y):
        mesh = self.mesh
        T = mesh.triangles
        cen = self.P0 + (self.e1 + self.e2) / 3
        diam = np.maximum(np.linalg.norm(self.e1, axis=1), np.linalg.norm(self.e2, axis=1))
        diam = np.maximum(diam, np.linalg.norm(self.e2 - self.e1, axis=1))
        near = np.linalg.norm(cen - y, axis=1) < 3 * diam
        idx = np.nonzero(near)[0]
        lam = mesh.barycentric(idx, np.broadcast_to(y, (len(idx), 2)))
        inside = lam.min(axis=1) >= -1e-14
        out_tri, out_val = [], []
        for k in np.nonzero(inside)[0]:
            tri = idx[k]
            verts = mesh.nodes[T[tri]]
            # split at y into up to three triangles with y as vertex 0
            vals = np.zeros(3)
            for j in range(3):
                q1, q2 = verts[(j + 1) % 3], verts[(j + 2) % 3]
                sub_area = 0.5 * ((q1[0] - y[0]) * (q2[1] - y[1]) - (q1[1] - y[1]) * (q2[0] - y[0]))
                if sub_area <= 1e-300:
                    continue
                bary, w = _DUFFY
                x = y + bary[:, 1:2] * (q1 - y) + bary[:, 2:3] * (q2 - y)
                w = w * sub_area
                val = self._f_at(f, x) * self.weight.value(x) * w
                phi = mesh.barycentric(np.full(len(x), tri), x)
                vals += val @ phi
            out_tri.append(tri)
            out_val.append(vals)
        far = idx[~inside]
        if far.size:
            # subdivided rule on all nearby elements at once
            bary, w = _SUBDIV
            x = self.map_points(far, bary)
            val = self._f_at(f, x) * self.weight.value(x) * (w[None, :] * self.area[far, None])
            out_tri += list(far)
            out_val += list(val @ bary)
        special = np.zeros(len(T), bool)
        special[out_tri] = True
        return special, np.array(out_tri, int), np.array(out_val)

    @staticmethod
    def _f_at(f, x):
        return np.asarray(f(x), dtype=float)

    def load_boundary(self, g):
        """``oint a g phi_j``.

        ``g`` is a nodal array or a callable ``g(x, nu, s)`` receiving curve
        points, outward normals and curve parameters of shape ``(B, q, ...)``.
        """
        E = self.mesh.boundary_edges
        if callable(g):
            gq = np.asarray(g(self.bx, self.bnu, self.bs), dtype=float)
        else:
            g = np.asarray(g, dtype=float)
            gq = g[E] @ self.bphi.T
        loc = (self.bw * self.ba * gq) @ self.bphi
        b = np.zeros(self.mesh.n_nodes)
        np.add.at(b, E.ravel(), loc.ravel())
        return b

    # solves ---------------------------------------------------------------
    @property
    def lu(self):
        if self._lu is None:
            self._lu = splu(self.A)
        return self._lu

    def solve_system(self, b, rtol=1e-10, max_refine=5):
        """Solve ``A u = b`` with iterative refinement."""
        u = self.lu.solve(b)
        nb = np.linalg.norm(b, np.inf)
        if nb == 0:
            return u
        for _ in range(max_refine):
            r = b - self.A @ u
            if np.linalg.norm(r, np.inf) <= rtol * nb:
                return u
            u = u + self.lu.solve(r)
        r = b - self.A @ u
        if np.linalg.norm(r, np.inf) > rtol * nb:
            warnings.warn(f"linear residual {np.linalg.norm(r, np.inf) / nb:.2e} above {rtol:g}")
        return u

    def relative_residual(self, u, b):
        return float(np.linalg.norm(b - self.A @ u, np.inf) / max(np.linalg.norm(b, np.inf), 1e-300))

    def l2_error(self, u, exact):
        """``L^2`` (unweighted) distance between the P1 field ``u`` and ``exact``."""
        diff = self.nodal_at_quad(u) - exact(self.qx)
        return float(np.sqrt(np.sum(self.qw * diff**2)))

    def mass_matrix_unweighted(self):
        n = self.mesh.n_nodes
        Mloc = np.einsum("mq,qi,qj->mij", self.qw, TRI_BARY, TRI_BARY)
        return sp.csr_matrix((Mloc.ravel(), (self._rows, self._cols)), shape=(n, n))


def neumann_solve(op: MeshedOperator, f=None, g=None, singular_point=None, return_load=False):
    """Solve the weighted Neumann problem ``-Delta_a u + u = f``, ``du/dnu = g``.

    Parameters
    ----------
    op : MeshedOperator
    f : callable or ndarray, optional
        Interior source (callable of points, or nodal values).
    g : callable or ndarray, optional
        Boundary flux (callable ``g(x, nu, s)`` or nodal values).
    singular_point : array_like, optional
        Location of an integrable singularity of ``f``.

    Returns
    -------
    ndarray
        Nodal solution (and the load vector when ``return_load``).
    """
    b = np.zeros(op.mesh.n_nodes)
    if f is not None:
        b += op.load_interior(f, singular_point)
    if g is not None:
        b += op.load_boundary(g)
    u = op.solve_system(b)
    return (u, b) if return_load else u
