"""Standard bubble, radial corrections and the constants C1, C2, K.

All radial functions here are written in the blow-up variable
``r = |z|`` with ``z = (x - xi) / delta``.  The linearized Liouville
operator ``w'' + w'/r + V w`` with ``V = 8 / (1 + r^2)^2`` has the bounded
kernel ``Z0 = (r^2 - 1)/(r^2 + 1)`` and the log-growing companion
``Y0 = Z0 log r - 1``; their Wronskian is exactly ``1/r``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.special import spence

from .quadrature import QuadratureError, adaptive_panels, gk15, integrate_halfline

LOG8 = np.log(8.0)
C1_EXACT = 12.0 - 4.0 * LOG8
R_MAX = 1e6


def standard_bubble(delta, xi, x):
    """Evaluate ``U_{delta,xi}(x) = log(8 delta^2 / (delta^2 + |x - xi|^2)^2)``.

    Parameters
    ----------
    delta : float
        Positive scale.
    xi : array_like, shape (2,)
        Center.
    x : array_like, shape (..., 2)
        Evaluation points.
    """
    d = np.asarray(x, dtype=float) - np.asarray(xi, dtype=float)
    r2 = np.sum(d * d, axis=-1)
    # written through log1p so that the far field keeps full precision
    return LOG8 - 2.0 * np.log(delta) - 2.0 * np.log1p(r2 / delta**2)


def U0(r):
    """Radial standard bubble ``U_{1,0}``."""
    r = np.asarray(r, dtype=float)
    return LOG8 - 2.0 * np.log1p(r * r)


def dU0(r):
    r = np.asarray(r, dtype=float)
    return -4.0 * r / (1.0 + r * r)


def d2U0(r):
    r = np.asarray(r, dtype=float)
    q = 1.0 + r * r
    return -4.0 / q + 8.0 * r * r / q**2


def potential(r):
    """Linearized potential ``V = e^{U_{1,0}} = 8 / (1 + r^2)^2``."""
    r = np.asarray(r, dtype=float)
    return 8.0 / (1.0 + r * r) ** 2


def Z0(r):
    r = np.asarray(r, dtype=float)
    return (r * r - 1.0) / (r * r + 1.0)


def dZ0(r):
    r = np.asarray(r, dtype=float)
    return 4.0 * r / (1.0 + r * r) ** 2


def Y0(r):
    """Log-growing homogeneous solution ``Z0 log r - 1`` (singular at 0)."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        return Z0(r) * np.log(r) - 1.0


def dY0(r):
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        return dZ0(r) * np.log(r) + Z0(r) / r


def _tail_log_integral(rho):
    """``I(rho) = int_rho^inf log((s+1)/s) / (s+1) ds``.

    Uses ``I = -Li2(-1/rho) - log^2(1 + 1/rho) / 2`` with ``Li2(w) =
    spence(1 - w)``; ``I(0) = pi^2/6``.
    """
    rho = np.asarray(rho, dtype=float)
    out = np.full(rho.shape, np.pi**2 / 6)
    pos = rho > 0
    y = 1.0 / rho[pos]
    out[pos] = -spence(1.0 + y) - 0.5 * np.log1p(y) ** 2
    return out


def _omega1_brace(rho):
    L = np.log1p(rho)
    with np.errstate(divide="ignore", invalid="ignore"):
        lr = np.where(rho > 0, np.log(np.where(rho > 0, rho, 1.0)), 0.0)
    return -0.5 * LOG8**2 + 2 * L**2 + 4 * _tail_log_integral(rho) - 4 * lr * L


def omega1(r):
    """Closed-form first correction ``omega_1(r)``.

    Solves ``w'' + w'/r + V w = V U0^2 / 2`` with ``w'(0) = 0`` and
    ``w = (C1/2) log(1 + r^2) + O(log r / r^2)`` at infinity.
    """
    r = np.asarray(r, dtype=float)
    rho = r * r
    L = np.log1p(rho)
    Z = (rho - 1) / (rho + 1)
    return (0.5 * U0(r) ** 2 + 6 * L + (2 * LOG8 - 10) / (rho + 1)
            + Z * _omega1_brace(rho))


def domega1(r):
    """Radial derivative of :func:`omega1`."""
    r = np.asarray(r, dtype=float)
    rho = r * r
    L = np.log1p(rho)
    q = 1.0 + rho
    Z = (rho - 1) / q
    with np.errstate(divide="ignore", invalid="ignore"):
        last = np.where(rho > 0, 4 * Z * L / np.where(rho > 0, rho, 1.0), -4.0)
    d_rho = (-2 * U0(r) / q + 6 / q - (2 * LOG8 - 10) / q**2
             + 2 / q**2 * _omega1_brace(rho) - last)
    return 2 * r * d_rho


def f1(r):
    """Source of the first correction, ``U0^2 / 2``."""
    return 0.5 * U0(r) ** 2


def f2(r):
    """Source of the second correction."""
    u = U0(r)
    w = omega1(r)
    return w * u - u**3 / 3 - 0.5 * w**2 - u**4 / 8 + 0.5 * w * u**2


def constant_Cj(f, tol=1e-8):
    """``C_j = 8 int_0^inf t (t^2 - 1)/(t^2 + 1)^3 f(t) dt``.

    The tail beyond ``t = 1`` is mapped by ``t -> 1/t``.

    Raises
    ------
    QuadratureError
        If the adaptive rule does not reach ``tol``.
    """
    def g(t):
        return 8 * t * (t * t - 1) / (t * t + 1) ** 3 * f(t)
    return integrate_halfline(g, 0.0, tol=tol)


def bubble_mass(tol=1e-10):
    """``int_{R^2} e^{U_{1,0}}`` by radial quadrature (equals ``8 pi``)."""
    return 2 * np.pi * integrate_halfline(lambda r: potential(r) * r, 0.0, tol)


def laplacian_omega1(r):
    """``Delta omega_1`` from the ODE: ``V (f1 - omega_1)``."""
    return potential(r) * (f1(r) - omega1(r))


def constant_K(n_panels=None, tol=1e-10):
    """Energy constant ``K = (1/8pi) int [V U0 - Delta omega_1] dz``.

    Parameters
    ----------
    n_panels : int, optional
        If given, a fixed composite Gauss-Kronrod rule on ``n_panels``
        log-spaced panels up to ``R_MAX`` is used instead of the adaptive
        rule (for grid-doubling checks).  The tail beyond ``R_MAX`` is below
        ``1e-20`` and is dropped.
    """
    def g(r):
        return 0.25 * r * (potential(r) * U0(r) - laplacian_omega1(r))

    if n_panels is None:
        return integrate_halfline(g, 0.0, tol)
    n1 = max(n_panels // 4, 1)
    edges = np.concatenate([np.linspace(0, 1, n1 + 1),
                            np.geomspace(1, R_MAX, n_panels - n1 + 1)[1:]])
    val, _ = gk15(g, edges[:-1], edges[1:])
    return float(val.sum())


@dataclass(frozen=True)
class RadialProfile:
    """Tabulated radial solution with asymptotic continuation.

    Attributes
    ----------
    grid : ndarray
        Increasing radii starting at 0.
    values, derivs : ndarray
        ``omega`` and ``omega'`` on ``grid``.
    C : float
        Asymptotic constant ``C`` in ``omega ~ (C/2) log(1 + r^2)``.
    C_fit : float
        ``C`` fitted by least squares on the outer third (in log radius) of
        the grid, with ``log^k r / r^2`` remainder terms in the model.
    offset : float
        Constant ``b`` in ``omega - (C/2) log(1 + r^2) -> b`` (zero with the
        default normalization).
    """

    grid: np.ndarray
    values: np.ndarray
    derivs: np.ndarray
    C: float
    C_fit: float
    offset: float
    _spline: CubicHermiteSpline = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_spline",
                           CubicHermiteSpline(self.grid, self.values, self.derivs))

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.empty(r.shape)
        inside = r <= self.grid[-1]
        out[inside] = self._spline(r[inside])
        far = r[~inside]
        out[~inside] = 0.5 * self.C * np.log1p(far * far) + self.offset
        return out

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        out = np.empty(r.shape)
        inside = r <= self.grid[-1]
        out[inside] = self._spline(r[inside], 1)
        far = r[~inside]
        out[~inside] = self.C * far / (1 + far * far)
        return out


def radial_grid(n=4000, r_max=R_MAX, n_inner=500):
    """Uniform on ``[0, 1]`` and log-spaced on ``[1, r_max]``."""
    inner = np.linspace(0.0, 1.0, n_inner + 1)
    outer = np.geomspace(1.0, r_max, n - n_inner + 1)[1:]
    return np.concatenate([inner, outer])


def solve_radial(f, normalization="infinity", grid=None, tol=1e-10):
    """Solve ``w'' + w'/r + V w = V f`` by variation of parameters.

    The particular solution regular at the origin is
    ``w = Y0 A - Z0 B`` with ``A = int_0^r Z0 s V f ds`` and
    ``B = int_0^r Y0 s V f ds``; it satisfies ``w(0) = w'(0) = 0``.

    Parameters
    ----------
    f : callable
        Radial source, growing at most polylogarithmically.
    normalization : {"infinity", "origin"}
        ``"origin"`` returns the solution above (zero ``Z0`` content at the
        origin).  ``"infinity"`` adds the multiple of ``Z0`` that removes the
        constant in ``w - (C/2) log(1 + r^2)`` as ``r -> inf``, which is the
        normalization of the closed-form ``omega_1``.
    grid : ndarray, optional
        Radii, default :func:`radial_grid`.

    Returns
    -------
    RadialProfile
    """
    if normalization not in ("infinity", "origin"):
        raise ValueError(f"unknown normalization {normalization!r}")
    r = radial_grid() if grid is None else np.asarray(grid, dtype=float)

    def ga(s):
        return Z0(s) * s * potential(s) * f(s)

    def gb(s):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(s > 0, Y0(s) * s * potential(s) * f(s), 0.0)

    try:
        A = np.concatenate([[0.0], np.cumsum(adaptive_panels(ga, r, tol))])
        B = np.concatenate([[0.0], np.cumsum(adaptive_panels(gb, r, tol))])
    except QuadratureError as exc:
        raise QuadratureError(f"radial solve: {exc}") from None
    A_inf = A[-1] + integrate_halfline(ga, r[-1], tol)
    B_inf = B[-1] + integrate_halfline(gb, r[-1], tol)

    w = np.zeros_like(r)
    dw = np.zeros_like(r)
    pos = r > 0
    w[pos] = Y0(r[pos]) * A[pos] - Z0(r[pos]) * B[pos]
    dw[pos] = dY0(r[pos]) * A[pos] - dZ0(r[pos]) * B[pos]
    C = A_inf
    shift = C + B_inf if normalization == "infinity" else 0.0
    w = w + shift * Z0(r)
    dw = dw + shift * dZ0(r)
    offset = -C - B_inf + shift

    outer = r >= r[-1] ** (2.0 / 3.0)
    rr = r[outer]
    lr = np.log(rr)
    # remainder of a polylogarithmic source decays like log^k r / r^2
    cols = [0.5 * np.log1p(rr * rr), np.ones_like(rr)]
    cols += [lr**k / rr**2 for k in range(5)]
    design = np.column_stack(cols)
    scale = np.abs(design).max(axis=0)
    coef, *_ = np.linalg.lstsq(design / scale, w[outer], rcond=None)
    coef = coef / scale
    return RadialProfile(r, w, dw, float(C), float(coef[0]), float(offset))


def solve_omega2(normalization="infinity", grid=None):
    """Second radial correction ``omega_2`` (source :func:`f2`)."""
    return solve_radial(f2, normalization=normalization, grid=grid)


@lru_cache(maxsize=4)
def omega2_profile(normalization="infinity"):
    """Cached :func:`solve_omega2` result shared read-only."""
    return solve_omega2(normalization)


@lru_cache(maxsize=1)
def constants():
    """Dictionary of ``C1``, ``C2``, ``K`` and the bubble mass."""
    return {
        "C1": constant_Cj(f1),
        "C2": constant_Cj(f2),
        "K": constant_K(),
        "bubble_mass": bubble_mass(),
    }
