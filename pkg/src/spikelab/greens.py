"""Neumann Green's function of ``-Delta_a + 1`` and its regular part.

For a source ``y`` of kind ``c`` (``8 pi`` inside, ``4 pi`` on the
boundary) the regular part ``H(., y) = G(., y) + (4/c) log|. - y|`` solves

    -Delta_a H + H = (4/c) log|x - y| - (4/c) (x - y) . grad log a / |x - y|^2
    dH/dnu = (4/c) (x - y) . nu / |x - y|^2

and ``H(y, y)`` is the Robin function.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .fem.operator import MeshedOperator, neumann_solve


class GreensError(ValueError):
    pass


class SourceKind(Enum):
    INTERIOR = "interior"
    BOUNDARY = "boundary"

    @property
    def c(self) -> float:
        return 8 * np.pi if self is SourceKind.INTERIOR else 4 * np.pi

    @property
    def log_coeff(self) -> float:
        return 1 / (2 * np.pi) if self is SourceKind.INTERIOR else 1 / np.pi

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


@dataclass(frozen=True)
class GreenData:
    """Regular part of the Green's function for one source.

    Attributes
    ----------
    source : ndarray
        Source point (snapped to the boundary node for boundary kind).
    kind : SourceKind
    H_field : ndarray
        Nodal values of ``H(., y)``.
    robin : float
        ``H(y, y)`` from a local quadratic fit.
    robin_err : float
        Difference between the quadratic and linear fit values at ``y``.
    residual : float
        Relative residual of the linear system.
    h_source : float
        Local mesh size at the source.
    """

    source: np.ndarray
    kind: SourceKind
    H_field: np.ndarray
    robin: float
    robin_err: float
    residual: float
    h_source: float
    op: MeshedOperator

    def H(self, x):
        return self.op.mesh.interpolate(self.H_field, np.atleast_2d(x))

    def G(self, x):
        return green_eval(self, x)


def _snap_boundary(op, y):
    mesh = op.mesh
    bn = mesh.boundary_nodes()
    d = np.linalg.norm(mesh.nodes[bn] - y, axis=1)
    k = bn[np.argmin(d)]
    if d.min() > mesh.h:
        raise GreensError(f"boundary source {y.tolist()} is farther than h from the boundary")
    return k


def regular_part(op: MeshedOperator, y, kind) -> GreenData:
    """Solve for ``H(., y)`` on ``op``'s mesh.

    Raises
    ------
    GreensError
        If an interior source is closer to the boundary than two local
        element sizes, or a boundary source is not near the boundary.
    """
    kind = SourceKind.parse(kind)
    mesh = op.mesh
    dom = mesh.dom
    y = np.asarray(y, dtype=float)
    coef = 4.0 / kind.c
    grad_log = op.weight.grad_log

    if kind is SourceKind.BOUNDARY:
        k = _snap_boundary(op, y)
        y = mesh.nodes[k].copy()
        s_y = mesh.bparam[k]
        hs = float(mesh.node_size()[k])

        def g(x, nu, s):
            dnu, d2 = dom.chord_data(s, s_y)
            with np.errstate(divide="ignore", invalid="ignore"):
                out = coef * dnu / d2
            # limit at the source itself: half the curvature
            return np.where(d2 > 0, out, 0.5 * coef * dom.curvature(s))
    else:
        hs = float(mesh.local_size(y)[0])
        depth = -float(dom.project(y[None, :])[1][0])
        if depth <= 0:
            raise GreensError(f"interior source {y.tolist()} is not inside the domain")
        if depth < 2 * hs:
            raise GreensError(
                f"interior source at depth {depth:.3g} is closer to the boundary than two "
                f"local element sizes ({hs:.3g}); grade the mesh finer at the source")

        def g(x, nu, s):
            d = x - y
            return coef * np.sum(d * nu, axis=-1) / np.sum(d * d, axis=-1)

    def f(x):
        d = x - y
        r2 = np.sum(d * d, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = coef * (0.5 * np.log(r2) - np.sum(d * grad_log(x), axis=-1) / r2)
        return np.where(r2 > 0, out, 0.0)

    H, b = neumann_solve(op, f, g, singular_point=y, return_load=True)
    robin, err = _local_fit(mesh, H, y, hs)
    return GreenData(y, kind, H, robin, err, op.relative_residual(H, b), hs, op)


def _local_fit(mesh, values, y, hs, n_min=12):
    """Value at ``y`` of least-squares quadratic and linear fits."""
    rad = 5 * hs
    while True:
        idx = mesh._tree.query_ball_point(y, rad)
        if len(idx) >= n_min:
            break
        rad *= 1.5
    idx = np.array(idx)
    d = (mesh.nodes[idx] - y) / rad
    v = values[idx]
    quad = np.column_stack([np.ones(len(d)), d[:, 0], d[:, 1], d[:, 0] ** 2,
                            d[:, 0] * d[:, 1], d[:, 1] ** 2])
    cq, *_ = np.linalg.lstsq(quad, v, rcond=None)
    cl, *_ = np.linalg.lstsq(quad[:, :3], v, rcond=None)
    return float(cq[0]), float(abs(cq[0] - cl[0]))


def green_eval(gd: GreenData, x):
    """``G(x, y) = H(x, y) - log_coeff log|x - y|`` at points ``x``.

    Raises
    ------
    GreensError
        If some ``x`` is within ``h_min / 10`` of the source.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r = np.linalg.norm(x - gd.source, axis=1)
    if np.any(r < gd.h_source / 10):
        raise GreensError("evaluation point too close to the source for the kernel")
    return gd.H(x) - gd.kind.log_coeff * np.log(r)


def robin_function(op: MeshedOperator, y, kind):
    """``(H(y, y), error estimate)``."""
    gd = regular_part(op, y, kind)
    return gd.robin, gd.robin_err


class GreenCache:
    """Memoized :func:`regular_part` keyed by quantized source position.

    Entries are immutable; the cache only grows.
    """

    def __init__(self, op: MeshedOperator, quantum=None):
        self.op = op
        self.quantum = quantum if quantum is not None else 1e-4 * op.mesh.dom.diameter
        self._store: dict = {}

    def key(self, y, kind):
        q = np.rint(np.asarray(y, dtype=float) / self.quantum).astype(np.int64)
        return (int(q[0]), int(q[1]), SourceKind.parse(kind).value)

    def get(self, y, kind) -> GreenData:
        k = self.key(y, kind)
        gd = self._store.get(k)
        if gd is None:
            yq = np.array(k[:2], dtype=float) * self.quantum
            if SourceKind.parse(kind) is SourceKind.BOUNDARY:
                yq = np.asarray(y, dtype=float)
            gd = regular_part(self.op, yq, kind)
            self._store[k] = gd
        return gd

    def __len__(self):
        return len(self._store)


def green_matrix(greens: list[GreenData]):
    """``(robin, G)`` with ``G[i, k] = G(xi_i, xi_k)`` (zero diagonal).

    Row ``i`` evaluates the field of source ``k`` at ``xi_i``.
    """
    m = len(greens)
    robin = np.array([g.robin for g in greens])
    G = np.zeros((m, m))
    for k, gk in enumerate(greens):
        for i, gi in enumerate(greens):
            if i != k:
                G[i, k] = float(green_eval(gk, gi.source)[0])
    return robin, G
