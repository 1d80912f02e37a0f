"""Spike configurations and the concentration parameter system.

For spikes ``xi_i`` of kinds ``c_i`` the parameters ``mu_i`` solve

    log(8 mu_i^4) = A c_i H_ii + (C1/p + C2/p^2) log(eps mu_i)
                    + A sum_{k != i} (mu_i/mu_k)^{2/(p-1)} c_k G_ik

with ``A = 1 - C1/(4p) - C2/(4p^2)``; as ``p -> inf``
``mu_i -> exp(-3/4 + c_i H_ii / 4 + sum_k c_k G_ik / 4)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .bubble import constants
from .greens import SourceKind

MU_BOUND_C = 1e3


class MuSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SpikeConfig:
    """Spike positions, kinds and exponent; ``mu`` is filled by :func:`solve_mu`.

    The first ``l`` spikes are interior.
    """

    p: float
    points: np.ndarray
    kinds: tuple
    mu: np.ndarray | None = None
    params: tuple = field(default=(), compare=False)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        object.__setattr__(self, "points", pts)
        kinds = tuple(SourceKind.parse(k) for k in self.kinds)
        object.__setattr__(self, "kinds", kinds)
        if len(kinds) != len(pts):
            raise ValueError("one kind per spike point is required")
        if self.p <= 1:
            raise ValueError("exponent p must exceed 1")
        seen_bd = False
        for k in kinds:
            if k is SourceKind.BOUNDARY:
                seen_bd = True
            elif seen_bd:
                raise ValueError("interior spikes must come first")
        if self.mu is not None:
            object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))

    @property
    def m(self):
        return len(self.kinds)

    @property
    def l(self):
        return sum(k is SourceKind.INTERIOR for k in self.kinds)

    @property
    def eps(self):
        return float(np.exp(-self.p / 4))

    @property
    def gamma(self):
        p = self.p
        return float(p ** (p / (p - 1)) * np.exp(-p / (2 * (p - 1))))

    @property
    def gamma_via_eps(self):
        """Same constant written as ``p^{p/(p-1)} eps^{2/(p-1)}``."""
        p = self.p
        return float(p ** (p / (p - 1)) * self.eps ** (2 / (p - 1)))

    @property
    def kappa(self):
        return 2 * (self.m**2 + 1)

    @property
    def c(self):
        return np.array([k.c for k in self.kinds])

    @property
    def delta(self):
        if self.mu is None:
            raise ValueError("mu not solved")
        return self.eps * self.mu

    def with_mu(self, mu):
        return replace(self, mu=np.asarray(mu, dtype=float))

    def with_points(self, points):
        return replace(self, points=np.asarray(points, dtype=float), mu=None)

    def check_admissible(self, dom):
        """Separation ``> p^{-kappa}`` and interior clearance ``> p^{-kappa}``."""
        lim = self.p ** (-self.kappa)
        pts = self.points
        for i in range(self.m):
            for k in range(i + 1, self.m):
                if np.linalg.norm(pts[i] - pts[k]) <= lim:
                    raise ValueError(f"spikes {i} and {k} closer than p^-kappa")
        for i in range(self.l):
            if dom.dist_to_boundary(pts[i]).distance <= lim:
                raise ValueError(f"interior spike {i} closer than p^-kappa to the boundary")
        return True


def limit_mu(cfg: SpikeConfig, robin, G):
    """``p -> inf`` limit ``exp(-3/4 + c_i H_ii/4 + sum_k c_k G_ik/4)``."""
    c = cfg.c
    robin = np.asarray(robin, dtype=float)
    G = np.asarray(G, dtype=float)
    inter = (G * c[None, :]).sum(axis=1) - np.diag(G) * c
    return np.exp(-0.75 + 0.25 * c * robin + 0.25 * inter)


def mu_residual(cfg: SpikeConfig, mu, robin, G, C1=None, C2=None):
    """Residual ``log(8 mu_i^4) - rhs_i`` of the matching system."""
    p = cfg.p
    if C1 is None or C2 is None:
        k = constants()
        C1, C2 = k["C1"], k["C2"]
    A = 1 - C1 / (4 * p) - C2 / (4 * p * p)
    B = C1 / p + C2 / (p * p)
    c = cfg.c
    mu = np.asarray(mu, dtype=float)
    G = np.array(G, dtype=float)
    np.fill_diagonal(G, 0.0)
    ratio = (mu[:, None] / mu[None, :]) ** (2 / (p - 1))
    rhs = A * c * robin + B * np.log(cfg.eps * mu) + A * np.sum(ratio * c[None, :] * G, axis=1)
    return np.log(8 * mu**4) - rhs


def solve_mu(cfg: SpikeConfig, robin, G, damping=0.5, tol=1e-13, max_iter=500,
             full_output=False):
    """Damped fixed point iteration for ``mu`` in log coordinates.

    Parameters
    ----------
    cfg : SpikeConfig
    robin : array_like (m,)
        ``H(xi_i, xi_i)``.
    G : array_like (m, m)
        ``G[i, k] = G(xi_i, xi_k)``; the diagonal is ignored.
    full_output : bool
        Also return the residual history.

    Returns
    -------
    ndarray
        ``mu`` with residual below ``tol`` (and the history list when
        ``full_output``).

    Raises
    ------
    MuSolverError
        If the residual grows three iterations in a row.
    """
    k = constants()
    C1, C2 = k["C1"], k["C2"]
    p = cfg.p
    A = 1 - C1 / (4 * p) - C2 / (4 * p * p)
    B = C1 / p + C2 / (p * p)
    c = cfg.c
    G = np.array(G, dtype=float)
    np.fill_diagonal(G, 0.0)
    robin = np.asarray(robin, dtype=float)
    log_eps = -p / 4

    lm = np.log(limit_mu(cfg, robin, G))
    history = []
    grow = 0
    for it in range(max_iter):
        mu = np.exp(lm)
        ratio = (mu[:, None] / mu[None, :]) ** (2 / (p - 1))
        inter = A * np.sum(ratio * c[None, :] * G, axis=1)
        # log(8 mu^4) = A c H + B (log eps + log mu) + inter, solved for the
        # explicit log mu on the left
        target = (A * c * robin + B * log_eps + inter - np.log(8)) / (4 - B)
        # equation residual log(8 mu^4) - rhs
        res = float(np.max(np.abs(lm - target))) * (4 - B)
        history.append(res)
        if res <= tol:
            break
        if it > 0 and res > history[-2]:
            grow += 1
            if grow >= 3:
                raise MuSolverError("mu iteration is not contracting; increase p "
                                    "or separate the spikes further")
        else:
            grow = 0
        lm = (1 - damping) * lm + damping * target
    else:
        raise MuSolverError(f"mu iteration stalled at residual {history[-1]:.3e}")
    mu = np.exp(lm)
    bound = MU_BOUND_C * p ** cfg.kappa
    if np.any(mu < 1 / MU_BOUND_C) or np.any(mu > bound):
        raise MuSolverError("mu outside the bounds 1/C <= mu <= C p^kappa")
    return (mu, history) if full_output else mu
