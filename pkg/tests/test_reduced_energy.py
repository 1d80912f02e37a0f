import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikelab.bubble import constants
from spikelab.fem.mesh import build_mesh
from spikelab.fem.operator import MeshedOperator
from spikelab.fem.weights import BumpWeight, ConstantWeight
from spikelab.mu_solver import SpikeConfig
from spikelab.pipeline import green_data
from spikelab.reduced_energy import (ClusteredObjective, LandscapeError, SeparatedObjective,
                                     boundary_extrema, clustered_cache, energy_expansion,
                                     energy_quadrature, find_critical_clustered,
                                     find_critical_separated, landscape_point)


class _ConstantField:
    """Stand-in for an ansatz that is constant in space."""

    def __init__(self, cfg, value):
        self.cfg, self.value = cfg, value

    def values_on_elements(self, tri, bary):
        return np.full((len(tri), len(bary)), float(self.value))

    def gradients_on_elements(self, tri, bary):
        return np.zeros((len(tri), len(bary), 2))


@pytest.mark.parametrize("value", [0.0, 1.0])
def test_quadrature_of_constant_field(unit_disk, const_weight, value):
    p = 30.0
    op = MeshedOperator(build_mesh(unit_disk, 0.1), const_weight)
    cfg = SpikeConfig(p, [[0.0, 0.0]], ["interior"], mu=[1.0])
    J = energy_quadrature(op, _ConstantField(cfg, value))
    expect = op.area.sum() * value * (0.5 - 1 / (p + 1))
    assert J == pytest.approx(expect, rel=1e-12, abs=1e-14)


def test_expansion_single_interior_spike(x1_weight):
    p = 40.0
    cfg = SpikeConfig(p, [[2.2, 0.3]], ["interior"])
    H = 0.17
    K = constants()["K"]
    expect = np.e / (2 * p) * 8 * np.pi * 2.2 * (1 - 2 * np.log(p) / p + (K + 2) / p
                                                  - 8 * np.pi * H / p)
    assert energy_expansion(cfg, [H], np.zeros((1, 1)), x1_weight) == pytest.approx(expect, rel=1e-14)


def test_expansion_permutation_invariant(const_weight):
    pts = np.array([[0.0, 0.0], [0.3, 0.2], [1.0, 0.0]])
    kinds = ["interior", "interior", "boundary"]
    robin = np.array([0.1, 0.2, 0.3])
    G = np.array([[0, 0.5, 0.2], [0.5, 0, 0.4], [0.2, 0.4, 0]])
    e = energy_expansion(SpikeConfig(30.0, pts, kinds), robin, G, const_weight)
    perm = [1, 0, 2]
    e2 = energy_expansion(SpikeConfig(30.0, pts[perm], kinds), robin[perm],
                          G[np.ix_(perm, perm)], const_weight)
    assert e == pytest.approx(e2, rel=1e-14)


def test_boundary_interaction_lowers_energy(unit_disk, const_weight):
    # closer boundary spikes have larger G and a smaller reduced energy
    vals = []
    for th in (1.2, 0.6, 0.3):
        pts = np.array([[np.cos(th), np.sin(th)], [np.cos(th), -np.sin(th)]])
        op = MeshedOperator(build_mesh(unit_disk, 0.05, [(q, 0.005) for q in pts]), const_weight)
        cfg = SpikeConfig(40.0, pts, ["boundary", "boundary"])
        _, robin, G = green_data(op, cfg)
        vals.append((G[0, 1], energy_expansion(cfg, robin, G, const_weight)))
    g, e = np.array(vals).T
    assert np.all(np.diff(g) > 0) and np.all(np.diff(e) < 0)


def test_expansion_against_quadrature(unit_disk, const_weight):
    gaps = []
    for p in (20, 40, 80):
        lp = landscape_point(unit_disk, const_weight, [[1.0, 0.0]], ["boundary"], p, mirror=True)
        gaps.append(abs(lp.value_expansion - lp.value_quadrature) / abs(lp.value_expansion))
    c = gaps[0] * 20
    assert all(g <= c / p * (1 + 1e-12) for g, p in zip(gaps, (20, 40, 80)))
    assert np.all(np.diff(gaps) <= 0)


# ---------------------------------------------------------------------------
# separated regime

def test_depth_optimum(shifted_disk, x1_weight):
    obj = SeparatedObjective(shifted_disk, x1_weight, 1, 1, 40.0)
    for s in (0.0, 0.1, 0.2):
        ts = float(obj.t_star([s])[0])
        z = np.array([s, ts])
        assert abs(obj.gradient(z)[1]) < 1e-12
        h = 1e-4 * ts
        d2 = (obj.value([s, ts + h]) - 2 * obj.value(z) + obj.value([s, ts - h])) / h**2
        assert d2 < 0


def test_constant_weight_has_no_depth(unit_disk, const_weight):
    obj = SeparatedObjective(unit_disk, const_weight, 1, 1, 40.0)
    with pytest.raises(LandscapeError, match="normal derivative"):
        obj.t_star([0.0])
    with pytest.raises(LandscapeError):
        find_critical_separated(obj, [[0.0, 1.0]])


@settings(max_examples=30, deadline=None)
@given(s1=st.floats(-0.2, 0.2), s2=st.floats(0.3, 0.7), t=st.floats(1.0, 30.0))
def test_separated_gradient_matches_fd(shifted_disk, x1_weight, s1, s2, t):
    obj = SeparatedObjective(shifted_disk, x1_weight, 2, 1, 40.0)
    z = np.array([s1, s2, t])
    g = obj.gradient(z)
    fd = np.empty(3)
    for j in range(3):
        h = 1e-6 * max(1.0, abs(z[j]))
        e = np.zeros(3)
        e[j] = h
        fd[j] = (obj.value(z + e) - obj.value(z - e)) / (2 * h)
    assert np.allclose(g, fd, rtol=1e-6, atol=1e-6 * np.abs(g).max())


def test_boundary_extrema_of_x1(shifted_disk, x1_weight):
    ext = sorted(boundary_extrema(shifted_disk, x1_weight), key=lambda e: e[0])
    assert [k for _, k in ext] == ["max", "min"]
    assert min(ext[0][0], 1 - ext[0][0]) < 1e-8 and abs(ext[1][0] - 0.5) < 1e-8


def test_boundary_spikes_at_extrema(shifted_disk, x1_weight):
    obj = SeparatedObjective(shifted_disk, x1_weight, 1, 0, 40.0)
    res = find_critical_separated(obj, [[0.03], [0.46]])
    assert all(r.converged for r in res)
    assert min(res[0].s[0], 1 - res[0].s[0]) < 1e-8 and res[0].classification == "max"
    assert abs(res[1].s[0] - 0.5) < 1e-8 and res[1].classification == "min"


def test_interior_depth_analytic(shifted_disk, x1_weight):
    p = 40.0
    obj = SeparatedObjective(shifted_disk, x1_weight, 2, 1, p)
    cp = find_critical_separated(obj, [obj.seed([0.02, 0.47])])
    for r in cp:
        assert r.converged and r.feasible and r.grad_norm <= 1e-8
        s = r.s[0]
        foot = shifted_disk.point(s)
        nu = shifted_disk.normal(s)
        assert r.t[0] == pytest.approx(4 * foot[0] / nu[0], abs=1e-6)
        assert np.allclose(r.points[0], foot - r.t[0] / p * nu)


def test_radial_weight_is_degenerate(unit_disk):
    w = BumpWeight([0.0, 0.0], 1.0, 0.7, 1.0)
    obj = SeparatedObjective(unit_disk, w, 1, 0, 40.0)
    assert boundary_extrema(unit_disk, w) == []
    res = find_critical_separated(obj, [[0.1], [0.6]])
    assert all(r.classification == "degenerate" and r.converged for r in res)


def test_separated_rejects_bad_counts(unit_disk):
    with pytest.raises(ValueError):
        SeparatedObjective(unit_disk, ConstantWeight(), 1, 2, 40.0)


# ---------------------------------------------------------------------------
# clustered regime

@pytest.fixture(scope="module")
def bump_setup(unit_disk):
    w = BumpWeight([1.0, 0.0], 1.0, 0.5, 1.0)
    return w, clustered_cache(unit_disk, w, [1.0, 0.0], mirror=True)


def test_single_boundary_spike_finds_bump(unit_disk, bump_setup):
    w, cache = bump_setup
    obj = ClusteredObjective(unit_disk, w, 1, 0, 30.0, [1.0, 0.0], cache)
    res = find_critical_clustered(obj, n_starts=4, seed=1)
    assert np.linalg.norm(res.points[0] - [1.0, 0.0]) < 1e-3
    assert res.value >= res.value_initial
    assert not res.boundary_trapped


def test_clustered_search_is_seeded(unit_disk, bump_setup):
    w, cache = bump_setup
    obj = ClusteredObjective(unit_disk, w, 2, 0, 30.0, [1.0, 0.0], cache)
    r1 = find_critical_clustered(obj, n_starts=3, seed=5)
    r2 = find_critical_clustered(obj, n_starts=3, seed=5)
    assert np.array_equal(r1.z, r2.z) and r1.value == r2.value
    assert r1.value >= r1.value_initial
    # two boundary spikes repel through the log interaction
    near = obj.value_at_points(obj.dom.point(obj.s_star + np.array([-1e-3, 1e-3])))
    assert near < r1.value


def test_clustered_warns_off_critical(unit_disk, bump_setup):
    _, cache = bump_setup
    with pytest.warns(RuntimeWarning, match="not zero"):
        ClusteredObjective(unit_disk, BumpWeight([0.5, 0.0]), 1, 0, 30.0, [1.0, 0.0], cache)
