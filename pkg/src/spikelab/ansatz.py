"""Spike ansatz ``U_xi = sum_i (U_i + H_i)``.

``U_i`` is the scaled bubble with radial corrections and ``H_i`` the
projection correction restoring the Neumann condition,

    -Delta_a H_i + H_i = grad log a . grad U_i - U_i,   dH_i/dnu = -dU_i/dnu.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bubble import U0, constants, dU0, domega1, omega1, omega2_profile
from .fem.operator import MeshedOperator, neumann_solve
from .greens import SourceKind
from .mu_solver import SpikeConfig
from .quadrature import TRI_BARY


class AnsatzError(ValueError):
    pass


def spike_scale(cfg: SpikeConfig, i):
    """``1 / (gamma mu_i^{2/(p-1)})``."""
    return 1.0 / (cfg.gamma * cfg.mu[i] ** (2.0 / (cfg.p - 1)))


def _radial_parts(cfg, r, omega2):
    p = cfg.p
    val = U0(r) + omega1(r) / p
    if omega2 is not None:
        val = val + omega2(r) / p**2
    return val


def _radial_slope(cfg, r, omega2):
    """``(dU0 + domega1/p + domega2/p^2)(r) / r``, finite at ``r = 0``."""
    p = cfg.p
    rr = np.maximum(r, 1e-7)
    out = (dU0(rr) + domega1(rr) / p) / rr
    if omega2 is not None:
        out = out + omega2.derivative(rr) / (p * p * rr)
    return out


def bubble_with_corrections(cfg: SpikeConfig, i, x, omega2="default"):
    """``U_i(x)`` for spike ``i``.

    ``omega2="default"`` uses the cached second correction; ``None`` drops
    it.
    """
    if isinstance(omega2, str):
        omega2 = omega2_profile()
    x = np.asarray(x, dtype=float)
    delta = cfg.delta[i]
    r = np.linalg.norm(x - cfg.points[i], axis=-1) / delta
    return spike_scale(cfg, i) * (_radial_parts(cfg, r, omega2) - 2.0 * np.log(delta))


def bubble_gradient(cfg: SpikeConfig, i, x, omega2="default"):
    """``grad U_i(x)``."""
    if isinstance(omega2, str):
        omega2 = omega2_profile()
    x = np.asarray(x, dtype=float)
    delta = cfg.delta[i]
    d = x - cfg.points[i]
    r = np.linalg.norm(d, axis=-1) / delta
    return spike_scale(cfg, i) * (_radial_slope(cfg, r, omega2) / delta**2)[..., None] * d


def bubble_flux(cfg: SpikeConfig, i, dom, x, nu, s, s_spike=None, omega2="default"):
    """``dU_i/dnu`` on the boundary.

    For a boundary spike at curve parameter ``s_spike`` the chord data
    ``(x - xi) . nu`` and ``|x - xi|^2`` come from the curve expansion, which
    avoids cancellation at distances comparable with ``delta``.
    """
    if isinstance(omega2, str):
        omega2 = omega2_profile()
    delta = cfg.delta[i]
    if s_spike is not None:
        dnu, d2 = dom.chord_data(s, s_spike)
    else:
        d = x - cfg.points[i]
        dnu, d2 = np.sum(d * nu, axis=-1), np.sum(d * d, axis=-1)
    r = np.sqrt(d2) / delta
    return spike_scale(cfg, i) * _radial_slope(cfg, r, omega2) / delta**2 * dnu


def spike_param(mesh, xi):
    """Curve parameter of the boundary node at ``xi``."""
    k, dist = mesh.nearest_node(xi)
    if np.isnan(mesh.bparam[k]) or dist > 0:
        s, _ = mesh.dom.project(np.asarray(xi, dtype=float)[None, :])
        return float(s[0])
    return float(mesh.bparam[k])


def projection_correction(op: MeshedOperator, cfg: SpikeConfig, i, omega2="default"):
    """Nodal ``H_i`` by one Neumann solve.

    Raises
    ------
    AnsatzError
        If the mesh size at the spike exceeds ``delta_i / 2``.
    """
    if isinstance(omega2, str):
        omega2 = omega2_profile()
    mesh = op.mesh
    xi = cfg.points[i]
    hloc = float(mesh.local_size(xi)[0])
    if cfg.delta[i] < 2 * hloc:
        raise AnsatzError(f"spike {i}: delta = {cfg.delta[i]:.3g} is below twice the "
                          f"local mesh size {hloc:.3g}; regrade the mesh")
    grad_log = op.weight.grad_log
    s_sp = spike_param(mesh, xi) if cfg.kinds[i] is SourceKind.BOUNDARY else None

    def f(x):
        return (np.sum(grad_log(x) * bubble_gradient(cfg, i, x, omega2), axis=-1)
                - bubble_with_corrections(cfg, i, x, omega2))

    def g(x, nu, s):
        return -bubble_flux(cfg, i, mesh.dom, x, nu, s, s_sp, omega2)

    return neumann_solve(op, f, g)


def correction_expansion(cfg: SpikeConfig, i, H_field):
    """Asymptotic ``H_i`` from the regular part ``H(., xi_i)`` (nodal)."""
    k = constants()
    p = cfg.p
    A = 1 - k["C1"] / (4 * p) - k["C2"] / (4 * p * p)
    B = k["C1"] / p + k["C2"] / (p * p)
    d = cfg.delta[i]
    return spike_scale(cfg, i) * (A * cfg.c[i] * H_field - np.log(8 * d * d) + B * np.log(d))


@dataclass
class AnsatzField:
    """Assembled ansatz on a mesh.

    Attributes
    ----------
    cfg : SpikeConfig
    nodal_values : ndarray
    per_spike : list of (U_i nodal, H_i nodal)
    defect : ndarray
        Near-spike profile defect per spike.
    defect_radius : ndarray
        Ball radius used for the defect.
    """

    cfg: SpikeConfig
    op: MeshedOperator
    nodal_values: np.ndarray
    per_spike: list
    defect: np.ndarray
    defect_radius: np.ndarray
    omega2: object = field(repr=False, default=None)

    def values_on_elements(self, tri, bary):
        """``U_xi`` at barycentric points ``bary`` of elements ``tri``.

        Bubbles are evaluated analytically, ``H_i`` by P1 interpolation.
        Returns an array of shape ``(len(tri), len(bary))``.
        """
        x = self.op.map_points(tri, bary)
        T = self.op.mesh.triangles[tri]
        out = np.zeros(x.shape[:-1])
        for i, (_, H) in enumerate(self.per_spike):
            out += bubble_with_corrections(self.cfg, i, x, self.omega2)
            out += H[T] @ np.asarray(bary).T
        return out

    def gradients_on_elements(self, tri, bary):
        x = self.op.map_points(tri, bary)
        out = np.zeros(x.shape)
        grads = self.op.grads[tri]
        T = self.op.mesh.triangles[tri]
        for i, (_, H) in enumerate(self.per_spike):
            out += bubble_gradient(self.cfg, i, x, self.omega2)
            out += np.einsum("mj,mjk->mk", H[T], grads)[:, None, :]
        return out


def build_ansatz(op: MeshedOperator, cfg: SpikeConfig, omega2="default") -> AnsatzField:
    """Sum of projected bubbles with the near-spike profile defect."""
    if cfg.mu is None:
        raise AnsatzError("solve mu before building the ansatz")
    if isinstance(omega2, str):
        omega2 = omega2_profile()
    mesh = op.mesh
    X = mesh.nodes
    pieces = []
    total = np.zeros(mesh.n_nodes)
    for i in range(cfg.m):
        Ui = bubble_with_corrections(cfg, i, X, omega2)
        Hi = projection_correction(op, cfg, i, omega2)
        pieces.append((Ui, Hi))
        total += Ui + Hi
    p = cfg.p
    defect = np.zeros(cfg.m)
    radius = np.zeros(cfg.m)
    for i in range(cfg.m):
        xi = cfg.points[i]
        rad = max(p ** (-2 * cfg.kappa), 10 * float(mesh.local_size(xi)[0]))
        near = np.linalg.norm(X - xi, axis=1) < rad
        z = np.linalg.norm(X[near] - xi, axis=1) / cfg.delta[i]
        prof = U0(z) + omega1(z) / p
        if omega2 is not None:
            prof = prof + omega2(z) / p**2
        defect[i] = np.max(np.abs(total[near] / spike_scale(cfg, i) - p - prof))
        radius[i] = rad
    return AnsatzField(cfg, op, total, pieces, defect, radius, omega2)


def near_spike_offset(af: AnsatzField, i):
    """Mean of ``gamma mu^{2/(p-1)} U_xi - [p + U0 + omega/p...]`` near spike ``i``.

    With ``mu`` from the matching system the constant part vanishes.
    """
    cfg = af.cfg
    X = af.op.mesh.nodes
    xi = cfg.points[i]
    near = np.linalg.norm(X - xi, axis=1) < af.defect_radius[i]
    z = np.linalg.norm(X[near] - xi, axis=1) / cfg.delta[i]
    p = cfg.p
    prof = U0(z) + omega1(z) / p
    if af.omega2 is not None:
        prof = prof + af.omega2(z) / p**2
    return float(np.mean(af.nodal_values[near] / spike_scale(cfg, i) - p - prof))


def quad_values(af: AnsatzField):
    """``U_xi`` at all element quadrature points (shape ``(M, 7)``)."""
    return af.values_on_elements(np.arange(len(af.op.area)), TRI_BARY)
