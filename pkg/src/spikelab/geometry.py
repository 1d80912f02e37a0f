"""Planar domains bounded by a smooth closed curve.

The boundary is a 1-periodic counterclockwise map ``s -> c(s)``.  Normals
point outward, ``nu = (c_y', -c_x') / |c'|``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple
import warnings

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

_N_SAMPLES = 4096


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class BoundaryPoint:
    """Point of the boundary with its frame."""

    param: float
    position: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray


class Projection(NamedTuple):
    distance: float
    nearest: BoundaryPoint
    unique: bool


class _Pieces:
    """Arc-length parametrized chain of segments and circular arcs."""

    def __init__(self, pieces):
        # piece: ("line", p0, direction) or ("arc", center, radius, angle0)
        self.pieces = pieces
        self.lengths = np.array([pc[-1] for pc in pieces])
        self.total = self.lengths.sum()
        self.starts = np.concatenate([[0.0], np.cumsum(self.lengths)[:-1]])

    def __call__(self, s, order=0):
        s = np.asarray(s, dtype=float)
        sig = np.mod(s, 1.0) * self.total
        idx = np.clip(np.searchsorted(self.starts, sig, side="right") - 1, 0, len(self.pieces) - 1)
        out = np.zeros(s.shape + (2,))
        P = self.total
        for k, pc in enumerate(self.pieces):
            sel = idx == k
            if not sel.any():
                continue
            loc = sig[sel] - self.starts[k]
            if pc[0] == "line":
                p0, d = pc[1], pc[2]
                if order == 0:
                    out[sel] = p0 + loc[:, None] * d
                elif order == 1:
                    out[sel] = P * d
                else:
                    out[sel] = 0.0
            else:
                c, rad, th0 = pc[1], pc[2], pc[3]
                th = th0 + loc / rad
                cs, sn = np.cos(th), np.sin(th)
                if order == 0:
                    out[sel] = c + rad * np.column_stack([cs, sn])
                elif order == 1:
                    out[sel] = P * np.column_stack([-sn, cs])
                else:
                    out[sel] = -(P * P / rad) * np.column_stack([cs, sn])
        return out


@dataclass(frozen=True)
class DomainGeometry:
    """Smooth bounded planar domain.

    Use the constructors :meth:`disk`, :meth:`ellipse`,
    :meth:`smoothed_rect` and :meth:`spline`.
    """

    kind: str
    params: dict
    _curve: object = field(repr=False, compare=False)
    _samples: np.ndarray = field(init=False, repr=False, compare=False)
    _tree: cKDTree = field(init=False, repr=False, compare=False)
    d0_override: float | None = None

    def __post_init__(self):
        s = np.arange(_N_SAMPLES) / _N_SAMPLES
        pts = self.point(s)
        object.__setattr__(self, "_samples", pts)
        object.__setattr__(self, "_tree", cKDTree(pts))
        if self.self_intersects():
            raise GeometryError(f"{self.kind} boundary curve self-intersects")
        d1 = self.d1(s)
        area = 0.5 * np.sum(pts[:, 0] * d1[:, 1] - pts[:, 1] * d1[:, 0]) / _N_SAMPLES
        if area <= 0:
            raise GeometryError("boundary curve must be counterclockwise")

    # constructors ---------------------------------------------------------
    @classmethod
    def disk(cls, center=(0.0, 0.0), radius=1.0):
        c = np.asarray(center, dtype=float)
        R = float(radius)
        tp = 2 * np.pi

        def curve(s, order=0):
            th = tp * np.asarray(s, dtype=float)
            cs, sn = np.cos(th), np.sin(th)
            if order == 0:
                return np.stack([c[0] + R * cs, c[1] + R * sn], axis=-1)
            if order == 1:
                return tp * R * np.stack([-sn, cs], axis=-1)
            return -tp * tp * R * np.stack([cs, sn], axis=-1)

        return cls("disk", {"center": c.tolist(), "radius": R}, curve)

    @classmethod
    def ellipse(cls, center=(0.0, 0.0), a=2.0, b=1.0):
        c = np.asarray(center, dtype=float)
        tp = 2 * np.pi

        def curve(s, order=0):
            th = tp * np.asarray(s, dtype=float)
            cs, sn = np.cos(th), np.sin(th)
            if order == 0:
                return np.stack([c[0] + a * cs, c[1] + b * sn], axis=-1)
            if order == 1:
                return tp * np.stack([-a * sn, b * cs], axis=-1)
            return -tp * tp * np.stack([a * cs, b * sn], axis=-1)

        return cls("ellipse", {"center": c.tolist(), "a": float(a), "b": float(b)}, curve)

    @classmethod
    def smoothed_rect(cls, center=(0.0, 0.0), width=2.0, height=1.0, corner=0.2):
        """Rectangle with quarter-circle corners, parametrized by arc length.

        The parameter origin is the midpoint of the right edge.
        """
        cx, cy = map(float, center)
        W, H, r = float(width), float(height), float(corner)
        if not 0 < r <= min(W, H) / 2:
            raise GeometryError("corner radius must lie in (0, min(width, height)/2]")
        hw, hh = W / 2, H / 2
        o = np.array([cx, cy])
        up, left, down, right = (np.array(v, dtype=float) for v in ((0, 1), (-1, 0), (0, -1), (1, 0)))
        q = np.pi * r / 2
        pieces = [
            ("line", o + [hw, 0], up, hh - r),
            ("arc", o + [hw - r, hh - r], r, 0.0, q),
            ("line", o + [hw - r, hh], left, W - 2 * r),
            ("arc", o + [-hw + r, hh - r], r, np.pi / 2, q),
            ("line", o + [-hw, hh - r], down, H - 2 * r),
            ("arc", o + [-hw + r, -hh + r], r, np.pi, q),
            ("line", o + [-hw + r, -hh], right, W - 2 * r),
            ("arc", o + [hw - r, -hh + r], r, 3 * np.pi / 2, q),
            ("line", o + [hw, -hh + r], up, hh - r),
        ]
        pieces = [pc for pc in pieces if pc[-1] > 0]
        chain = _Pieces(pieces)
        return cls("smoothed_rect", {"center": [cx, cy], "width": W, "height": H,
                                     "corner": r}, chain)

    @classmethod
    def spline(cls, points):
        """Periodic cubic spline through ``points`` (counterclockwise)."""
        pts = np.asarray(points, dtype=float)
        closed = np.vstack([pts, pts[:1]])
        seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
        t = np.concatenate([[0.0], np.cumsum(seg)]) / seg.sum()
        sp = CubicSpline(t, closed, bc_type="periodic")

        def curve(s, order=0):
            return sp(np.mod(np.asarray(s, dtype=float), 1.0), order)

        return cls("spline", {"points": pts.tolist()}, curve)

    def translated(self, shift):
        """Copy of the domain shifted by ``shift``."""
        shift = np.asarray(shift, dtype=float)
        base = self._curve

        def curve(s, order=0):
            out = base(s, order)
            return out + shift if order == 0 else out

        params = dict(self.params)
        params["translation"] = (np.asarray(params.get("translation", [0.0, 0.0])) + shift).tolist()
        return DomainGeometry(self.kind, params, curve, d0_override=self.d0_override)

    # curve data -----------------------------------------------------------
    def point(self, s):
        return self._curve(s, 0)

    def d1(self, s):
        return self._curve(s, 1)

    def d2(self, s):
        return self._curve(s, 2)

    def speed(self, s):
        return np.linalg.norm(self.d1(s), axis=-1)

    def tangent(self, s):
        d = self.d1(s)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def normal(self, s):
        t = self.tangent(s)
        return np.stack([t[..., 1], -t[..., 0]], axis=-1)

    def curvature(self, s):
        """Signed curvature, positive for convex arcs."""
        d, dd = self.d1(s), self.d2(s)
        return (d[..., 0] * dd[..., 1] - d[..., 1] * dd[..., 0]) / np.linalg.norm(d, axis=-1) ** 3

    def normal_derivative(self, s):
        """``d nu / d s``."""
        d, dd = self.d1(s), self.d2(s)
        sp = np.linalg.norm(d, axis=-1, keepdims=True)
        rd = np.stack([d[..., 1], -d[..., 0]], axis=-1)
        rdd = np.stack([dd[..., 1], -dd[..., 0]], axis=-1)
        dot = np.sum(d * dd, axis=-1, keepdims=True)
        return rdd / sp - rd * dot / sp**3

    def chord_data(self, s, s0, cutoff=1e-5):
        """Cancellation-free ``(c(s) - c(s0)) . nu(s)`` and ``|c(s) - c(s0)|^2``.

        For nearby parameters the differences are taken from the second
        order Taylor expansion about ``s``; elsewhere they are computed
        directly.
        """
        s = np.asarray(s, dtype=float)
        ds = s - s0
        ds = np.where(np.abs(ds) > 0.5, (ds + 0.5) % 1.0 - 0.5, ds)
        d1, d2 = self.d1(s), self.d2(s)
        nu = self.normal(s)
        diff = self.point(s) - self.point(s0)
        dnu = np.sum(diff * nu, axis=-1)
        dist2 = np.sum(diff * diff, axis=-1)
        close = np.abs(ds) * np.linalg.norm(d1, axis=-1) < cutoff
        if np.any(close):
            dsc = ds[close]
            c1, c2, n = d1[close], d2[close], nu[close]
            dnu[close] = -0.5 * np.sum(c2 * n, axis=-1) * dsc**2
            v = c1 * dsc[..., None] - 0.5 * c2 * (dsc**2)[..., None]
            dist2[close] = np.sum(v * v, axis=-1)
        return dnu, dist2

    def boundary_point(self, s) -> BoundaryPoint:
        s = float(s)
        return BoundaryPoint(s, self.point(s), self.normal(s), self.tangent(s))

    @property
    def bbox(self):
        pts = self._samples
        return pts.min(axis=0), pts.max(axis=0)

    @property
    def diameter(self):
        lo, hi = self.bbox
        return float(np.linalg.norm(hi - lo))

    def perimeter(self, n=20000):
        s = (np.arange(n) + 0.5) / n
        return float(self.speed(s).mean())

    def area(self, n=20000):
        s = np.arange(n) / n
        p, d = self.point(s), self.d1(s)
        return float(0.5 * np.mean(p[:, 0] * d[:, 1] - p[:, 1] * d[:, 0]))

    @property
    def tubular_radius(self):
        """``d0 = 0.45 / max |curvature|`` unless overridden."""
        if self.d0_override is not None:
            return float(self.d0_override)
        s = np.arange(_N_SAMPLES) / _N_SAMPLES
        return 0.45 / float(np.max(np.abs(self.curvature(s))))

    def in_positive_quadrant(self):
        lo, _ = self.bbox
        return bool(np.all(lo > 0))

    # topology checks ------------------------------------------------------
    def self_intersects(self, n=512):
        s = np.arange(n) / n
        p = self.point(s)
        q = np.roll(p, -1, axis=0)
        i, j = np.triu_indices(n, 2)
        keep = ~((i == 0) & (j == n - 1))
        i, j = i[keep], j[keep]

        def orient(a, b, c):
            return np.sign((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                           - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

        o1 = orient(p[i], q[i], p[j])
        o2 = orient(p[i], q[i], q[j])
        o3 = orient(p[j], q[j], p[i])
        o4 = orient(p[j], q[j], q[i])
        return bool(np.any((o1 * o2 < 0) & (o3 * o4 < 0)))

    def winding_number(self, y, n=_N_SAMPLES):
        s = np.arange(n + 1) / n
        p = self.point(s) - np.asarray(y, dtype=float)
        ang = np.arctan2(p[:, 1], p[:, 0])
        dang = np.diff(ang)
        dang = (dang + np.pi) % (2 * np.pi) - np.pi
        return int(np.rint(dang.sum() / (2 * np.pi)))

    # projections ----------------------------------------------------------
    def project(self, points, iters=12):
        """Vectorized nearest-boundary parameter for many points.

        Starts from the nearest dense sample and polishes with Newton on
        ``phi(s) = |c(s) - y|^2 / 2``.  Returns ``(params, signed_distance)``
        with negative distances inside the domain.
        """
        y = np.atleast_2d(np.asarray(points, dtype=float))
        _, idx = self._tree.query(y)
        s = idx / _N_SAMPLES
        ds_max = 1.0 / _N_SAMPLES
        s0 = s.copy()
        for _ in range(iters):
            c, d, dd = self.point(s), self.d1(s), self.d2(s)
            r = c - y
            g = np.sum(r * d, axis=1)
            hss = np.sum(d * d, axis=1) + np.sum(r * dd, axis=1)
            step = np.where(hss > 0, -g / np.where(hss > 0, hss, 1.0), 0.0)
            s = np.clip(s + step, s0 - ds_max, s0 + ds_max)
        c = self.point(s)
        nu = self.normal(s)
        signed = np.sum((y - c) * nu, axis=1)
        return s, signed

    def contains(self, points):
        """Strict interior test based on the signed distance."""
        _, sd = self.project(points)
        return sd < 0

    def _refine(self, y, s0, ds):
        def phi(s):
            r = self.point(s) - y
            return 0.5 * float(r @ r)

        s = s0
        for _ in range(50):
            c, d, dd = self.point(s), self.d1(s), self.d2(s)
            r = c - y
            g, h = r @ d, d @ d + r @ dd
            if h <= 0:
                break
            step = -g / h
            s = s + step
            if abs(s - s0) > ds:
                break
            if abs(step) < 1e-16:
                return s % 1.0
        else:
            return s % 1.0
        return _golden(phi, s0 - ds, s0 + ds) % 1.0

    def dist_to_boundary(self, y) -> Projection:
        """Distance from ``y`` to the boundary with its nearest point.

        Newton on the squared distance from every local minimum of a dense
        sampling, with golden-section fallback.  If two distinct boundary
        points realize the minimum within tolerance the smaller parameter is
        returned and ``unique`` is False.
        """
        y = np.asarray(y, dtype=float)
        dist = np.linalg.norm(self._samples - y, axis=1)
        n = dist.size
        loc = np.nonzero((dist <= np.roll(dist, 1)) & (dist <= np.roll(dist, -1)))[0]
        if loc.size > 64:
            loc = loc[np.argsort(dist[loc])[:64]]
        cands = []
        for k in loc:
            s = self._refine(y, k / n, 1.5 / n)
            cands.append((float(np.linalg.norm(self.point(s) - y)), s))
        cands.sort()
        dmin, smin = cands[0]
        tol = 1e-9 * max(1.0, dmin)
        ties = [s for d, s in cands if d - dmin <= tol]
        unique = True
        if len(ties) > 1:
            pts = self.point(np.array(ties))
            if np.max(np.linalg.norm(pts - pts[0], axis=1)) > 1e-6:
                unique = False
                smin = min(ties)
        return Projection(dmin, self.boundary_point(smin), unique)

    def reflect_across_boundary(self, y):
        """Reflection ``y* = y + 2 dist(y) nu(nearest)``.

        Raises
        ------
        GeometryError
            If ``y`` lies outside the tubular neighbourhood of radius ``d0``.
        """
        d0 = self.tubular_radius
        proj = self.dist_to_boundary(y)
        if proj.distance >= d0:
            raise GeometryError(
                f"point at distance {proj.distance:.4g} is outside the tubular "
                f"neighbourhood d0 = {d0:.4g}")
        if not proj.unique:
            warnings.warn("reflection uses a non-unique nearest point")
        return np.asarray(y, dtype=float) + 2 * proj.distance * proj.nearest.normal


def _golden(f, a, b, tol=1e-15):
    """Golden-section minimization of a unimodal ``f`` on ``[a, b]``."""
    g = (np.sqrt(5.0) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol * max(1.0, abs(a)):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def ellipse_perimeter(a, b):
    """Exact perimeter ``4 a E(1 - b^2/a^2)`` through the complete elliptic integral."""
    from scipy.special import ellipe
    a, b = max(a, b), min(a, b)
    return 4 * a * ellipe(1 - (b / a) ** 2)
