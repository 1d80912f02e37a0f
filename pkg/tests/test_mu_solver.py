import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st

from spikelab.bubble import constants
from spikelab.fem.mesh import build_mesh
from spikelab.fem.operator import MeshedOperator
from spikelab.mu_solver import MU_BOUND_C, MuSolverError, SpikeConfig, limit_mu, mu_residual, solve_mu
from spikelab.pipeline import green_data


@pytest.fixture(scope="module")
def two_spike_data(unit_disk, const_weight):
    pts = np.array([[0.0, 0.0], [1.0, 0.0]])
    op = MeshedOperator(build_mesh(unit_disk, 0.05, [(p, 0.005) for p in pts]), const_weight)
    cfg = SpikeConfig(50.0, pts, ["interior", "boundary"])
    _, robin, G = green_data(op, cfg)
    return cfg, robin, G


def test_config_validation():
    with pytest.raises(ValueError, match="first"):
        SpikeConfig(30, [[1, 0], [0, 0]], ["boundary", "interior"])
    with pytest.raises(ValueError, match="exceed 1"):
        SpikeConfig(1.0, [[0, 0]], ["interior"])
    with pytest.raises(ValueError, match="one kind"):
        SpikeConfig(30, [[0, 0], [0.5, 0]], ["interior"])
    cfg = SpikeConfig(30, [[0, 0], [1, 0]], ["interior", "boundary"])
    assert cfg.m == 2 and cfg.l == 1 and cfg.kappa == 10
    assert np.allclose(cfg.c, [8 * np.pi, 4 * np.pi])
    with pytest.raises(ValueError, match="not solved"):
        cfg.delta


@given(st.floats(1.5, 200.0))
def test_gamma_two_forms(p):
    cfg = SpikeConfig(p, [[0, 0]], ["interior"])
    assert cfg.gamma == pytest.approx(cfg.gamma_via_eps, rel=1e-14)


def test_single_spike_limits():
    robin, G = np.array([0.2]), np.zeros((1, 1))
    ci = SpikeConfig(40, [[0, 0]], ["interior"])
    cb = SpikeConfig(40, [[1, 0]], ["boundary"])
    assert limit_mu(ci, robin, G)[0] == pytest.approx(np.exp(-0.75 + 2 * np.pi * 0.2))
    assert limit_mu(cb, robin, G)[0] == pytest.approx(np.exp(-0.75 + np.pi * 0.2))


def test_gap_to_limit_is_log2p_over_p():
    robin, G = np.array([0.2]), np.zeros((1, 1))
    ratios = []
    for p in (20, 40, 80, 160):
        cfg = SpikeConfig(p, [[0, 0]], ["interior"])
        mu = solve_mu(cfg, robin, G)
        ratios.append(abs(mu[0] - limit_mu(cfg, robin, G)[0]) / (np.log(p) ** 2 / p))
    assert max(ratios) < 1.0
    gaps = [r * np.log(p) ** 2 / p for r, p in zip(ratios, (20, 40, 80, 160))]
    assert np.all(np.diff(gaps) < 0)


def test_two_spikes_against_independent_root(two_spike_data):
    cfg, robin, G = two_spike_data
    mu, hist = solve_mu(cfg, robin, G, full_output=True)
    assert np.max(np.abs(mu_residual(cfg, mu, robin, G))) <= 1e-12
    # fixed-point residual decreases monotonically after the first iterations
    assert np.all(np.diff(hist[3:]) < 0)

    # the system written out again with 30 digits and solved by mpmath
    with mp.workdps(30):
        root = _mp_root(cfg, robin, G, mu)
    assert np.allclose(mu, root, rtol=1e-12)


def _mp_root(cfg, robin, G, mu):
    k = constants()
    p = mp.mpf(cfg.p)
    A = 1 - mp.mpf(k["C1"]) / (4 * p) - mp.mpf(k["C2"]) / (4 * p * p)
    Bc = mp.mpf(k["C1"]) / p + mp.mpf(k["C2"]) / (p * p)
    c = [8 * mp.pi, 4 * mp.pi]
    Hm = [mp.mpf(float(x)) for x in robin]
    Gm = [[mp.mpf(float(G[i, j])) for j in range(2)] for i in range(2)]

    def eqs(m1, m2):
        m = [m1, m2]
        out = []
        for i in range(2):
            j = 1 - i
            rhs = (A * c[i] * Hm[i] + Bc * mp.log(mp.exp(-p / 4) * m[i])
                   + A * c[j] * (m[i] / m[j]) ** (2 / (p - 1)) * Gm[i][j])
            out.append(mp.log(8 * m[i] ** 4) - rhs)
        return out

    root = mp.findroot(eqs, [mp.mpf(float(mu[0])) * 1.01, mp.mpf(float(mu[1])) * 0.99])
    return [float(root[0]), float(root[1])]


def test_bounds_hold(two_spike_data):
    cfg, robin, G = two_spike_data
    mu = solve_mu(cfg, robin, G)
    assert np.all(mu >= 1 / MU_BOUND_C) and np.all(mu <= MU_BOUND_C * cfg.p ** cfg.kappa)


def test_sensitivity_bounded(shifted_disk, x1_weight):
    p = 40.0
    h = 1e-3
    pts = [np.array([2.5, 0.1]), np.array([2.5 + h, 0.1]), np.array([2.5 - h, 0.1])]
    op = MeshedOperator(build_mesh(shifted_disk, 0.05, [(q, 2e-4) for q in pts]), x1_weight)
    logs = []
    for q in pts:
        cfg = SpikeConfig(p, [q], ["interior"])
        _, robin, G = green_data(op, cfg)
        logs.append(np.log(solve_mu(cfg, robin, G)[0]))
    deriv = abs(logs[1] - logs[2]) / (2 * h)
    assert deriv <= MU_BOUND_C * p ** 4


def test_non_contracting_system_raises():
    # strongly coupled interaction with a small exponent diverges
    cfg = SpikeConfig(1.5, [[0, 0], [0.1, 0]], ["interior", "interior"])
    with pytest.raises(MuSolverError):
        solve_mu(cfg, np.array([0.1, 0.1]), np.array([[0, 50.0], [50.0, 0]]), damping=1.0)


def test_admissibility(unit_disk):
    cfg = SpikeConfig(2.0, [[0, 0], [0.1, 0]], ["interior", "interior"])
    assert cfg.check_admissible(unit_disk)
    with pytest.raises(ValueError, match="closer"):
        SpikeConfig(2.0, [[0, 0], [1e-5, 0]], ["interior", "interior"]).check_admissible(unit_disk)
