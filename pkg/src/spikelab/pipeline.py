"""Glue between meshes, Green's data, the mu system and the ansatz."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ansatz import AnsatzField, build_ansatz
from .fem.mesh import build_mesh
from .fem.operator import MeshedOperator
from .greens import GreenData, SourceKind, green_matrix, regular_part
from .mu_solver import SpikeConfig, solve_mu


@dataclass
class SpikeSetup:
    """Everything needed to evaluate the ansatz at one exponent."""

    cfg: SpikeConfig
    op: MeshedOperator
    greens: list
    robin: np.ndarray
    G: np.ndarray
    green_op: MeshedOperator


def snap_points(dom, points, kinds):
    """Move boundary spikes exactly onto the curve."""
    pts = np.atleast_2d(np.asarray(points, dtype=float)).copy()
    for i, k in enumerate(kinds):
        if SourceKind.parse(k) is SourceKind.BOUNDARY:
            s, _ = dom.project(pts[i][None, :])
            pts[i] = dom.point(float(s[0]))
    return pts


def green_data(op, cfg: SpikeConfig):
    gds = [regular_part(op, cfg.points[i], cfg.kinds[i]) for i in range(cfg.m)]
    robin, G = green_matrix(gds)
    return gds, robin, G


def prepare(dom, weight, points, kinds, p, h=0.05, grading=0.25, resolution=8.0,
            green_h=None, mirror=False, omega2_free=False) -> SpikeSetup:
    """Solve ``mu`` and build the spike-resolving operator.

    A first mesh graded to ``h/10`` at the spikes provides the Green's data
    for the mu system; a second mesh graded to ``delta_i / resolution`` is
    used for the ansatz.
    """
    kinds = tuple(SourceKind.parse(k) for k in kinds)
    pts = snap_points(dom, points, kinds)
    gh = green_h if green_h is not None else h / 10
    centers = [(pt, gh) for pt in pts]
    gmesh = build_mesh(dom, h, centers, grading=grading, mirror=mirror)
    gop = MeshedOperator(gmesh, weight)
    cfg = SpikeConfig(p, pts, kinds)
    gds, robin, G = green_data(gop, cfg)
    mu = solve_mu(cfg, robin, G)
    cfg = cfg.with_mu(mu)
    centers = [(pt, d / resolution) for pt, d in zip(pts, cfg.delta)]
    mesh = build_mesh(dom, h, centers, grading=grading, mirror=mirror)
    op = MeshedOperator(mesh, weight)
    return SpikeSetup(cfg, op, gds, robin, G, gop)


def ansatz_for(setup: SpikeSetup, omega2="default") -> AnsatzField:
    return build_ansatz(setup.op, setup.cfg, omega2)
