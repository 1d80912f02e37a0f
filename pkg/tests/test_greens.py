import numpy as np
import pytest

from spikelab.fem.mesh import build_mesh
from spikelab.fem.operator import MeshedOperator
from spikelab.greens import GreenCache, GreensError, SourceKind, green_matrix, regular_part, robin_function

# Neumann Green's function of -Delta + 1 on the unit disk by its Bessel
# series (mpmath, 25 digits, 60 terms):
#   G = (1/2pi) [K0(|x-y|) - sum_n eps_n K_n'(1)/I_n'(1) I_n(|x|) I_n(|y|) cos(n theta)]
ROBIN_CENTER = 0.18795468840869870   # (1/2pi)[log 2 - gamma_E + K1(1)/I1(1)]
ROBIN_03 = 0.20697462804651017      # H((0.3,0), (0.3,0))
G_03_M05 = 0.25751540596697464       # G((-0.5,0), (0.3,0))


def _op(dom, weight, h, pts, hc=None):
    hc = h / 10 if hc is None else hc
    return MeshedOperator(build_mesh(dom, h, [(np.asarray(p, float), hc) for p in pts]), weight)


def test_robin_disk_center(unit_disk, const_weight):
    op = _op(unit_disk, const_weight, 0.05, [[0, 0]])
    val, err = robin_function(op, [0.0, 0.0], "interior")
    assert val == pytest.approx(ROBIN_CENTER, abs=1e-3)
    assert err < 1e-3


def test_green_off_center_converges(unit_disk, const_weight):
    y, x = np.array([0.3, 0.0]), np.array([-0.5, 0.0])
    errs_r, errs_g = [], []
    for h in (0.1, 0.05, 0.025):
        op = _op(unit_disk, const_weight, h, [y, x], hc=h / 4)
        gd = regular_part(op, y, "interior")
        errs_r.append(abs(gd.robin - ROBIN_03))
        errs_g.append(abs(gd.G(x)[0] - G_03_M05))
    assert errs_g[-1] < 1e-4 and errs_r[-1] < 1e-3
    assert errs_g[0] > errs_g[-1] and errs_r[0] > errs_r[-1]


def test_fine_mesh_oracle(unit_disk, const_weight):
    y, x = np.array([0.3, 0.0]), np.array([-0.5, 0.0])
    g = [regular_part(_op(unit_disk, const_weight, h, [y, x], hc=h / 4), y, "interior").G(x)[0]
         for h in (0.05, 0.0125)]
    assert abs(g[0] - g[1]) < 1e-3


def test_discrete_solve_residual_and_positivity(unit_disk, const_weight):
    op = _op(unit_disk, const_weight, 0.05, [[0.2, 0.1]])
    gd = regular_part(op, [0.2, 0.1], "interior")
    assert gd.residual < 1e-8
    X = op.mesh.nodes
    far = np.linalg.norm(X - gd.source, axis=1) > 1e-9
    assert np.all(gd.G(X[far]) > 0)
    rng = np.random.default_rng(3)
    r = np.sqrt(rng.uniform(0, 0.95**2, 1000))
    th = rng.uniform(0, 2 * np.pi, 1000)
    pts = np.column_stack([r * np.cos(th), r * np.sin(th)])
    pts = pts[np.linalg.norm(pts - gd.source, axis=1) > gd.h_source]
    assert np.all(gd.G(pts) > 0)


def test_symmetry_constant_weight(unit_disk, const_weight):
    a, b = np.array([0.4, -0.2]), np.array([-0.3, 0.5])
    op = _op(unit_disk, const_weight, 0.05, [a, b], hc=0.025)
    assert regular_part(op, a, "interior").G(b)[0] == pytest.approx(
        regular_part(op, b, "interior").G(a)[0], rel=1e-3)


def test_weighted_reciprocity(shifted_disk, x1_weight):
    a, b = np.array([1.6, 0.3]), np.array([2.5, -0.4])
    op = _op(shifted_disk, x1_weight, 0.05, [a, b], hc=0.025)
    lhs = a[0] * regular_part(op, b, "interior").G(a)[0]
    rhs = b[0] * regular_part(op, a, "interior").G(b)[0]
    assert lhs == pytest.approx(rhs, rel=5e-3)


def test_boundary_robin_rotation_invariant(unit_disk, const_weight):
    pts = [[1.0, 0.0], [-1.0, 0.0]]
    op = _op(unit_disk, const_weight, 0.05, pts)
    r = [robin_function(op, p, "boundary")[0] for p in pts]
    assert r[0] == pytest.approx(r[1], abs=1e-3)


def test_robin_boundary_blowup(unit_disk, const_weight):
    depths = np.array([0.2, 0.1, 0.05, 0.025])
    ys = [np.array([1.0 - d, 0.0]) for d in depths]
    op = _op(unit_disk, const_weight, 0.05, ys, hc=0.002)
    z = [regular_part(op, y, "interior").robin - np.log(1 / (2 * d)) / (2 * np.pi)
         for d, y in zip(depths, ys)]
    assert np.ptp(z) < 0.1


def test_interior_source_approaches_boundary_kind(unit_disk, const_weight):
    # G(x, y_t) for y_t -> (1, 0) tends to the boundary-source Green's function
    x = np.array([-0.3, 0.2])
    depths = [0.1, 0.05, 0.025]
    ys = [np.array([1.0 - d, 0.0]) for d in depths]
    op = _op(unit_disk, const_weight, 0.05, ys + [np.array([1.0, 0.0])], hc=0.002)
    gb = regular_part(op, [1.0, 0.0], "boundary").G(x)[0]
    gaps = [abs(regular_part(op, y, "interior").G(x)[0] - gb) for y in ys]
    assert np.all(np.diff(gaps) < 0)


def test_green_matrix_layout(unit_disk, const_weight):
    pts = [np.array([0.0, 0.0]), np.array([1.0, 0.0])]
    op = _op(unit_disk, const_weight, 0.05, pts)
    gds = [regular_part(op, pts[0], "interior"), regular_part(op, pts[1], "boundary")]
    robin, G = green_matrix(gds)
    assert G[0, 0] == 0 and G[1, 1] == 0
    assert G[0, 1] == pytest.approx(gds[1].G(pts[0])[0])
    assert robin.tolist() == [gds[0].robin, gds[1].robin]


def test_errors(unit_disk, const_weight):
    op = _op(unit_disk, const_weight, 0.1, [[0.0, 0.0]])
    with pytest.raises(GreensError, match="depth"):
        regular_part(op, [0.99, 0.0], "interior")
    with pytest.raises(GreensError, match="not inside"):
        regular_part(op, [1.2, 0.0], "interior")
    with pytest.raises(GreensError, match="farther"):
        regular_part(op, [0.5, 0.0], "boundary")
    gd = regular_part(op, [0.0, 0.0], "interior")
    with pytest.raises(GreensError, match="too close"):
        gd.G([0.0, 0.0])
    with pytest.raises(ValueError):
        SourceKind.parse("edge")


def test_kind_constants():
    assert SourceKind.INTERIOR.c == pytest.approx(8 * np.pi)
    assert SourceKind.BOUNDARY.c == pytest.approx(4 * np.pi)
    for k in SourceKind:
        assert k.log_coeff == pytest.approx(4 / k.c)


def test_cache_reuses_quantized_entries(unit_disk, const_weight):
    op = _op(unit_disk, const_weight, 0.1, [[0.0, 0.0]])
    cache = GreenCache(op)
    a = cache.get([0.1, 0.2], "interior")
    b = cache.get([0.1 + 0.2 * cache.quantum, 0.2], "interior")
    assert a is b and len(cache) == 1
    cache.get([0.1 + 2 * cache.quantum, 0.2], "interior")
    assert len(cache) == 2
