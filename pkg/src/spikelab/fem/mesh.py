"""Graded Delaunay triangulations of a smooth domain.

Boundary nodes lie exactly on the curve; element size follows

    size(x) = min(h, min_c (h_c + g |x - c|))

for grading centers ``c`` with local size ``h_c`` and slope ``g``, so the
size grows by the factor ``1 + g`` from one ring of elements to the next.
Interior vertices come from concentric rings around each center and from
Triangle's quality and area refinement.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import triangle
from scipy.sparse import csr_matrix
from scipy.spatial import cKDTree

from ..geometry import DomainGeometry

_EPS = np.finfo(float).eps


class MeshError(ValueError):
    pass


def resolution_floor(dom: DomainGeometry) -> float:
    """Smallest admissible element size for double precision coordinates.

    Coordinates of magnitude ``X`` are only resolved to ``eps X``; elements
    are refused below ``32 eps max(1, X)``.
    """
    lo, hi = dom.bbox
    return 32 * _EPS * max(1.0, float(np.max(np.abs(np.concatenate([lo, hi])))))


@dataclass
class Mesh:
    """Triangulation with boundary bookkeeping.

    Attributes
    ----------
    nodes : ndarray (N, 2)
    triangles : ndarray (M, 3)
        Counterclockwise vertex triples.
    boundary_edges : ndarray (B, 2)
        Boundary edges oriented with the domain on the left.
    boundary_normals : ndarray (B, 2)
        Outward unit normals of the boundary chords.
    bparam : ndarray (N,)
        Curve parameter of boundary nodes (unwrapped, NaN inside).
    centers : list of (point, h_min)
        Grading centers after snapping boundary centers onto the curve.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_normals: np.ndarray
    bparam: np.ndarray
    centers: list
    h: float
    dom: DomainGeometry
    _node_tri: csr_matrix = field(init=False, repr=False)
    _tree: cKDTree = field(init=False, repr=False)
    _node_size: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        M = len(self.triangles)
        rows = self.triangles.ravel()
        cols = np.repeat(np.arange(M), 3)
        self._node_tri = csr_matrix((np.ones(3 * M), (rows, cols)),
                                    shape=(len(self.nodes), M))
        self._tree = cKDTree(self.nodes)

    @property
    def n_nodes(self):
        return len(self.nodes)

    def areas(self):
        P = self.nodes[self.triangles]
        e1, e2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def edges(self):
        T = self.triangles
        e = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def edge_lengths(self):
        e = self.edges()
        return np.linalg.norm(self.nodes[e[:, 1]] - self.nodes[e[:, 0]], axis=1)

    def min_angle(self):
        P = self.nodes[self.triangles]
        ang = []
        for i in range(3):
            u = P[:, (i + 1) % 3] - P[:, i]
            v = P[:, (i + 2) % 3] - P[:, i]
            c = np.sum(u * v, 1) / np.linalg.norm(u, axis=1) / np.linalg.norm(v, axis=1)
            ang.append(np.degrees(np.arccos(np.clip(c, -1, 1))))
        return float(np.min(ang))

    def node_size(self):
        """Longest incident edge length per node (cached; meshes are not mutated)."""
        if self._node_size is not None:
            return self._node_size
        e = self.edges()
        L = np.linalg.norm(self.nodes[e[:, 1]] - self.nodes[e[:, 0]], axis=1)
        out = np.zeros(self.n_nodes)
        np.maximum.at(out, e[:, 0], L)
        np.maximum.at(out, e[:, 1], L)
        self._node_size = out
        return out

    def local_size(self, x):
        """Mesh size near ``x`` (longest edge at the nearest node)."""
        _, i = self._tree.query(np.atleast_2d(x))
        return self.node_size()[i]

    def nearest_node(self, x):
        d, i = self._tree.query(np.asarray(x, dtype=float))
        return i, d

    def boundary_nodes(self):
        return np.nonzero(~np.isnan(self.bparam))[0]

    def boundary_loop_length(self):
        e = self.boundary_edges
        return float(np.linalg.norm(self.nodes[e[:, 1]] - self.nodes[e[:, 0]], axis=1).sum())

    def barycentric(self, tri, x):
        P = self.nodes[self.triangles[tri]]
        e1, e2 = P[..., 1, :] - P[..., 0, :], P[..., 2, :] - P[..., 0, :]
        d = x - P[..., 0, :]
        det = e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0]
        l1 = (d[..., 0] * e2[..., 1] - d[..., 1] * e2[..., 0]) / det
        l2 = (e1[..., 0] * d[..., 1] - e1[..., 1] * d[..., 0]) / det
        return np.stack([1 - l1 - l2, l1, l2], axis=-1)

    def locate(self, x, k=8):
        """Containing triangle and barycentric coordinates for points ``x``.

        Points marginally outside the mesh (between a boundary chord and the
        curve) are assigned to the triangle with the least negative
        coordinate.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        k = min(k, self.n_nodes)
        _, near = self._tree.query(x, k=k)
        near = near.reshape(len(x), -1)
        best_tri = np.full(len(x), -1)
        best_val = np.full(len(x), -np.inf)
        indptr, indices = self._node_tri.indptr, self._node_tri.indices
        for j in range(near.shape[1]):
            nodes = near[:, j]
            deg = indptr[nodes + 1] - indptr[nodes]
            for t in range(deg.max()):
                ok = t < deg
                if not ok.any():
                    break
                tri = indices[indptr[nodes[ok]] + t]
                lam = self.barycentric(tri, x[ok])
                val = lam.min(axis=1)
                idx = np.nonzero(ok)[0]
                better = val > best_val[idx]
                best_val[idx[better]] = val[better]
                best_tri[idx[better]] = tri[better]
            if np.all(best_val >= -1e-12):
                break
        lam = self.barycentric(best_tri, x)
        return best_tri, lam

    def interpolate(self, values, x):
        """Piecewise linear interpolation of nodal ``values`` at ``x``."""
        tri, lam = self.locate(x)
        return np.sum(values[self.triangles[tri]] * lam, axis=1)

    def export(self, path):
        """Plain text: header ``nodes N / triangles M``, coordinates, triples."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"nodes {self.n_nodes} / triangles {len(self.triangles)}\n")
            for p in self.nodes:
                fh.write(f"{p[0]:.17g} {p[1]:.17g}\n")
            for t in self.triangles:
                fh.write(f"{t[0]} {t[1]} {t[2]}\n")


class _SizeField:
    def __init__(self, h, centers, grading):
        self.h = h
        self.g = grading
        self.pts = np.array([c for c, _ in centers], dtype=float).reshape(-1, 2)
        self.hc = np.array([hc for _, hc in centers], dtype=float)

    def per_center(self, x):
        x = np.atleast_2d(x)
        if len(self.hc) == 0:
            return np.full((len(x), 0), self.h)
        d = np.linalg.norm(x[:, None, :] - self.pts[None, :, :], axis=2)
        return self.hc[None, :] + self.g * d

    def __call__(self, x):
        x = np.atleast_2d(x)
        out = np.full(len(x), self.h)
        if len(self.hc):
            out = np.minimum(out, self.per_center(x).min(axis=1))
        return out


def _equidistribute(dom, size, a, b, extra_offsets, target_min=3):
    """Boundary parameters on the arc ``[a, b]`` (``b > a``) with spacing ~ size.

    Returns parameters strictly between ``a`` and ``b``; values in the first
    half are computed as ``a + sigma``, the rest as ``b - tau`` so that
    parameters close to either anchor keep full relative precision.
    """
    L = b - a
    geo = np.geomspace(1e-16 * max(1.0, abs(a), abs(b)) + 1e-300, L / 2, 600)
    sig = np.concatenate([[0.0], np.linspace(0, L, 4097)[1:-1], geo] +
                         [o for o in extra_offsets if o.size])
    sig = np.unique(sig[(sig >= 0) & (sig <= L / 2)])
    tau_side = np.unique(np.concatenate([np.linspace(0, L, 4097)[1:-1], geo] +
                                        [L - o for o in extra_offsets if o.size]))
    tau_side = tau_side[(tau_side > 0) & (tau_side < L / 2)]
    # samples in increasing sigma: first half exact sigma, second half exact tau
    params = np.concatenate([a + sig, (b - tau_side)[::-1], [b]])
    sigma = np.concatenate([sig, (L - tau_side)[::-1], [L]])
    tau = np.concatenate([L - sig, tau_side[::-1], [0.0]])
    dens = dom.speed(params) / size(dom.point(params))
    N = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(sigma))])
    n = max(target_min, int(np.rint(N[-1])))
    levels = N[-1] * np.arange(1, n) / n
    first = levels <= N[-1] / 2
    out = np.empty(n - 1)
    out[first] = a + np.interp(levels[first], N, sigma)
    out[~first] = b - np.interp(N[-1] - levels[~first], (N[-1] - N)[::-1], tau[::-1])
    return out


def _ring_points(center, hc, grading, h, rotate):
    pts = [np.asarray(center, dtype=float)[None, :]]
    sizes = [hc]
    r = hc
    k = 0
    while True:
        s = hc + grading * r
        n = max(6, int(np.ceil(2 * np.pi * r / s)))
        ang = 2 * np.pi * (np.arange(n) + (0.5 if (k % 2 and rotate) else 0.0)) / n
        pts.append(center + r * np.column_stack([np.cos(ang), np.sin(ang)]))
        sizes.append(np.full(n, s))
        if s >= h:
            break
        r = r + s
        k += 1
    return np.concatenate(pts), np.concatenate([np.atleast_1d(x) for x in sizes])


def build_mesh(dom: DomainGeometry, h: float, centers=(), grading=0.25,
               min_angle=25.0, mirror=False, max_refine=40) -> Mesh:
    """Graded triangulation of ``dom``.

    Parameters
    ----------
    dom : DomainGeometry
    h : float
        Background element size.
    centers : sequence of (point, h_min)
        Grading centers inside or on the boundary.  Centers within ``h_min``
        of the boundary are snapped onto it and become boundary nodes.
    grading : float
        Size slope ``g``; neighbouring rings differ by the factor ``1 + g``.
    mirror : bool
        Build a mesh symmetric under ``x2 -> 2 c2 - x2`` where ``c2`` is the
        second coordinate of ``dom.point(0)``.  Requires ``dom.point(0)`` and
        ``dom.point(0.5)`` on that axis and a symmetric curve.

    Raises
    ------
    MeshError
        For sizes below :func:`resolution_floor` or centers outside the
        domain.
    """
    floor = resolution_floor(dom)
    centers = [(np.asarray(c, dtype=float), float(hc)) for c, hc in centers]
    if not 0 < grading <= 0.5:
        raise MeshError("grading slope must lie in (0, 0.5] (ring growth <= 1.5)")
    for c, hc in centers:
        if hc < floor:
            raise MeshError(f"grading size {hc:.3g} below the double precision "
                            f"floor {floor:.3g}")
        if hc > h:
            raise MeshError("h_min must not exceed h")

    axis = None
    if mirror:
        p0, p5 = dom.point(0.0), dom.point(0.5)
        axis = float(p0[1])
        if abs(p5[1] - axis) > 1e-12 * max(1.0, abs(axis)):
            raise MeshError("mirror mode needs point(0) and point(0.5) on one horizontal axis")

    # classify and snap centers
    anchors = []
    snapped = []
    on_boundary = []
    near_bd = []
    for c, hc in centers:
        s, sd = dom.project(c[None, :])
        s, sd = float(s[0]), float(sd[0])
        if sd > hc:
            raise MeshError(f"grading center {c.tolist()} lies outside the domain")
        if abs(sd) <= hc:
            if mirror and abs(dom.point(s)[1] - axis) < 1e-9:
                s = 0.0 if abs(((s + 0.5) % 1.0) - 0.5) < 0.25 else 0.5
            anchors.append(s)
            c = dom.point(s)
            if mirror and s in (0.0, 0.5):
                c = np.array([c[0], axis])
        else:
            near_bd.append((s, -sd, hc))
        snapped.append((c, hc))
        on_boundary.append(abs(sd) <= hc)
    all_centers = list(snapped)
    all_on_bd = list(on_boundary)
    if mirror:
        for (c, hc), ob in zip(snapped, on_boundary):
            if abs(c[1] - axis) > 1e-14:
                all_centers.append((np.array([c[0], 2 * axis - c[1]]), hc))
                all_on_bd.append(ob)
    size = _SizeField(h, all_centers, grading)

    # boundary parameters
    if mirror:
        anchors = sorted(set(anchors) | {0.0, 0.5})
    elif not anchors:
        anchors = [0.0]
    anchors = sorted(set(float(a) % 1.0 for a in anchors))
    arcs = list(zip(anchors, anchors[1:] + [anchors[0] + 1.0]))
    if mirror:
        arcs = [(a, b) for a, b in arcs if b <= 0.5 + 1e-15]
    bparams = []
    for a, b in arcs:
        extra = []
        for s, depth, hc in near_bd:
            for shift in (-1.0, 0.0, 1.0):
                off = s + shift - a
                if 0 < off < b - a:
                    spread = np.geomspace(max(depth, hc) * 1e-2, 0.5, 200) / max(dom.speed(s), 1e-300)
                    extra.append(np.clip(np.concatenate([off - spread, off + spread]), 0, b - a))
        bparams.append(np.array([a]))
        bparams.append(_equidistribute(dom, size, a, b, extra))
    if mirror:
        bparams.append(np.array([0.5]))
    bparams = np.concatenate(bparams)
    bnodes = dom.point(bparams)
    if mirror:
        bnodes[(bparams == 0.0) | (bparams == 0.5), 1] = axis

    # axis nodes for the mirrored half
    axis_nodes = np.zeros((0, 2))
    if mirror:
        xl, xr = float(dom.point(0.5)[0]), float(dom.point(0.0)[0])
        on_axis = sorted({float(c[0]) for c, _ in snapped
                          if abs(c[1] - axis) < 1e-14 and xl < c[0] < xr})
        stops = [xl] + on_axis + [xr]
        xs = []
        for u, v in zip(stops[:-1], stops[1:]):
            t = np.unique(np.concatenate([np.linspace(u, v, 2001),
                                          u + np.geomspace(1e-300 + 1e-16 * (v - u), (v - u) / 2, 400),
                                          v - np.geomspace(1e-300 + 1e-16 * (v - u), (v - u) / 2, 400)]))
            dens = 1.0 / size(np.column_stack([t, np.full_like(t, axis)]))
            N = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(t))])
            n = max(2, int(np.rint(N[-1])))
            lev = N[-1] * np.arange(1, n) / n
            xs.append(np.interp(lev, N, t))
            if v != xr:
                xs.append([v])
        xs = np.concatenate(xs) if xs else np.zeros(0)
        axis_nodes = np.column_stack([xs, np.full(len(xs), axis)])

    # ring points
    ring = []
    for j, (c, hc) in enumerate(all_centers):
        P, s_loc = _ring_points(c, hc, grading, h, rotate=not mirror)
        own = size.per_center(P)
        keep = own[:, j] <= own.min(axis=1) * 1.0001
        _, sd = dom.project(P)
        keep &= sd < -0.5 * s_loc
        # the center itself is a vertex unless it already is a boundary node
        keep[0] = not all_on_bd[j]
        if mirror:
            up = P[:, 1] - axis
            keep &= up > 0.5 * s_loc
            if abs(c[1] - axis) > 1e-14 and c[1] < axis:
                keep[:] = False
        ring.append(P[keep])
    ring = np.concatenate(ring) if ring else np.zeros((0, 2))

    if mirror:
        outline = np.concatenate([bnodes, axis_nodes])
    else:
        outline = bnodes
    nb = len(outline)
    segs = np.column_stack([np.arange(nb), (np.arange(nb) + 1) % nb])
    verts = np.concatenate([outline, ring])
    opts = f"pq{min_angle:g}Y"
    out = triangle.triangulate({"vertices": verts, "segments": segs}, opts)
    for _ in range(max_refine):
        X, T = out["vertices"], out["triangles"]
        c = X[T].mean(axis=1)
        e = X[T] - X[T][:, [1, 2, 0]]
        L = np.sqrt((e**2).sum(-1)).max(axis=1)
        target = size(c)
        bad = L > 1.5 * target
        if not bad.any():
            break
        out = triangle.triangulate(
            {"vertices": X, "triangles": T, "segments": out["segments"],
             "triangle_max_area": np.where(bad, 0.45 * target**2, 0.0)},
            f"rpq{min_angle:g}aY")
    X, T = out["vertices"].copy(), out["triangles"].copy()
    # Triangle keeps input vertices first and in order
    n_bd = len(bnodes)
    bp = np.full(len(X), np.nan)
    bp[:n_bd] = bparams

    if mirror:
        on_axis = np.abs(X[:, 1] - axis) == 0.0
        idx = np.arange(len(X))
        new = ~on_axis
        mapping = idx.copy()
        mapping[new] = len(X) + np.arange(new.sum())
        Xm = X[new].copy()
        Xm[:, 1] = 2 * axis - Xm[:, 1]
        Tm = mapping[T][:, [0, 2, 1]]
        bpm = -bp[new]
        X = np.concatenate([X, Xm])
        T = np.concatenate([T, Tm])
        bp = np.concatenate([bp, bpm])

    # orientation
    P = X[T]
    e1, e2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
    area = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    T[area < 0] = T[area < 0][:, [0, 2, 1]]

    # boundary edges: directed edges without a twin
    de = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
    key = de[:, 0].astype(np.int64) * len(X) + de[:, 1]
    twin = de[:, 1].astype(np.int64) * len(X) + de[:, 0]
    bedges = de[~np.isin(key, twin)]
    if np.any(np.isnan(bp[bedges])):
        raise MeshError("boundary edge with a node off the curve")
    d = X[bedges[:, 1]] - X[bedges[:, 0]]
    normals = np.column_stack([d[:, 1], -d[:, 0]]) / np.linalg.norm(d, axis=1)[:, None]
    mesh = Mesh(X, T, bedges, normals, bp, snapped, h, dom)
    return mesh
