import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from spikelab.fem.mesh import MeshError, build_mesh, resolution_floor
from spikelab.fem.operator import MeshedOperator, neumann_solve
from spikelab.fem.weights import BumpWeight, ConstantWeight, MonomialWeight, ProductWeight, weight_from_spec
from spikelab.geometry import DomainGeometry, ellipse_perimeter


# ---------------------------------------------------------------------------
# meshes

def test_uniform_disk_mesh(unit_disk):
    mesh = build_mesh(unit_disk, 0.1)
    L = mesh.edge_lengths()
    assert L.min() >= 0.05 and L.max() <= 0.15
    assert mesh.min_angle() > 20
    assert np.all(mesh.areas() > 0)
    assert mesh.areas().sum() == pytest.approx(np.pi, rel=2e-3)


def test_graded_center_on_boundary(unit_disk):
    mesh = build_mesh(unit_disk, 0.1, [((1.0, 0.0), 1e-4)])
    k, d = mesh.nearest_node([1.0, 0.0])
    assert d < 1e-12
    assert mesh.node_size()[k] <= 2e-4
    assert k in set(mesh.boundary_nodes().tolist())


def test_ellipse_boundary_length():
    dom = DomainGeometry.ellipse((0, 0), 2.0, 1.0)
    mesh = build_mesh(dom, 0.05)
    assert mesh.boundary_loop_length() == pytest.approx(ellipse_perimeter(2, 1), rel=1e-2)


def test_mesh_rejects_bad_input(unit_disk):
    with pytest.raises(MeshError, match="floor"):
        build_mesh(unit_disk, 0.1, [((0.0, 0.0), resolution_floor(unit_disk) / 2)])
    with pytest.raises(MeshError, match="outside"):
        build_mesh(unit_disk, 0.1, [((2.0, 0.0), 0.01)])
    with pytest.raises(MeshError, match="grading"):
        build_mesh(unit_disk, 0.1, grading=0.9)


def test_mirror_mesh_is_symmetric(unit_disk):
    mesh = build_mesh(unit_disk, 0.1, [((1.0, 0.0), 0.005)], mirror=True)
    X = mesh.nodes
    flipped = X * [1, -1]
    _, d = mesh.nearest_node(flipped)
    assert d.max() < 1e-12


def test_locate_and_interpolate(unit_disk):
    mesh = build_mesh(unit_disk, 0.1)
    f = lambda x: 1 + 2 * x[..., 0] - 3 * x[..., 1]
    rng = np.random.default_rng(1)
    x = rng.uniform(-0.6, 0.6, (50, 2))
    assert np.allclose(mesh.interpolate(f(mesh.nodes), x), f(x), atol=1e-12)


# ---------------------------------------------------------------------------
# weights

WEIGHTS = [ConstantWeight(2.0), MonomialWeight(1, 0), MonomialWeight(2, 3),
           BumpWeight([1.0, 0.0], 1.0, 0.5, 1.0),
           ProductWeight([MonomialWeight(1, 1), BumpWeight([2.0, 1.0], 0.5, 0.3, 1.0)])]


@pytest.mark.parametrize("w", WEIGHTS, ids=lambda w: type(w).__name__)
@settings(max_examples=20, deadline=None)
@given(x1=st.floats(0.3, 2.5), x2=st.floats(0.3, 2.5))
def test_weight_derivatives(w, x1, x2):
    x = np.array([[x1, x2]])
    h = 1e-6
    e = np.eye(2)
    fd_g = np.array([(w.value(x + h * e[i]) - w.value(x - h * e[i]))[0] / (2 * h) for i in range(2)])
    assert np.allclose(w.grad(x)[0], fd_g, rtol=1e-6, atol=1e-8)
    fd_h = np.array([(w.grad(x + h * e[i]) - w.grad(x - h * e[i]))[0] / (2 * h) for i in range(2)])
    assert np.allclose(w.hess(x)[0], fd_h, rtol=1e-5, atol=1e-7)
    assert np.allclose(w.grad_log(x)[0], w.grad(x)[0] / w.value(x)[0], rtol=1e-12)


def test_monomial_with_zero_exponent_is_finite_on_axis():
    w = MonomialWeight(1, 0)
    x = np.array([[2.0, 0.0]])
    assert np.all(np.isfinite(w.hess(x))) and np.all(np.isfinite(w.grad_log(x)))
    assert w.positive_on(np.array([1.0, -1.0]))
    assert not MonomialWeight(1, 1).positive_on(np.array([1.0, -1.0]))


def test_weight_from_spec_roundtrip():
    for w in WEIGHTS:
        w2 = weight_from_spec(w.spec())
        x = np.array([[0.7, 1.3], [1.5, 0.4]])
        assert np.allclose(w.value(x), w2.value(x))
    with pytest.raises(ValueError, match="unknown"):
        weight_from_spec({"kind": "gaussian"})


# ---------------------------------------------------------------------------
# Neumann solves

def test_constant_solution(unit_disk, const_weight):
    op = MeshedOperator(build_mesh(unit_disk, 0.1), const_weight)
    u = neumann_solve(op, lambda x: np.ones(x.shape[:-1]), None)
    assert np.max(np.abs(u - 1)) < 1e-10


def _manufactured(dom, weight, u_expr, hs):
    x1, x2 = sp.symbols("x1 x2")
    a_expr = {"ConstantWeight": sp.Integer(1), "MonomialWeight": x1}[type(weight).__name__]
    flux = [a_expr * sp.diff(u_expr, v) for v in (x1, x2)]
    f_expr = sp.simplify((-(sp.diff(flux[0], x1) + sp.diff(flux[1], x2)) + a_expr * u_expr) / a_expr)
    u_f = sp.lambdify((x1, x2), u_expr, "numpy")
    f_f = sp.lambdify((x1, x2), f_expr, "numpy")
    du = [sp.lambdify((x1, x2), sp.diff(u_expr, v), "numpy") for v in (x1, x2)]

    def exact(x):
        return u_f(x[..., 0], x[..., 1]) + 0 * x[..., 0]

    def f(x):
        return f_f(x[..., 0], x[..., 1]) + 0 * x[..., 0]

    def g(x, nu, s):
        return (du[0](x[..., 0], x[..., 1]) * nu[..., 0]
                + du[1](x[..., 0], x[..., 1]) * nu[..., 1] + 0 * x[..., 0])

    errs = []
    for h in hs:
        op = MeshedOperator(build_mesh(dom, h), weight)
        u, b = neumann_solve(op, f, g, return_load=True)
        assert op.relative_residual(u, b) < 1e-10  # Galerkin orthogonality
        errs.append(op.l2_error(u, exact))
    errs = np.array(errs)
    return np.log(errs[:-1] / errs[1:]) / np.log(np.asarray(hs[:-1]) / np.asarray(hs[1:]))


def test_manufactured_cos(unit_disk, const_weight):
    x1 = sp.symbols("x1")
    orders = _manufactured(unit_disk, const_weight, sp.cos(x1), [0.2, 0.1, 0.05])
    assert np.all(orders >= 1.8)


def test_manufactured_weighted(shifted_disk, x1_weight):
    x1, x2 = sp.symbols("x1 x2")
    orders = _manufactured(shifted_disk, x1_weight, x1 * x2 + sp.sin(x2), [0.2, 0.1, 0.05])
    assert np.all(orders >= 1.8)


def test_coercive(unit_disk, x1_weight, shifted_disk):
    for dom, w in ((unit_disk, ConstantWeight()), (shifted_disk, x1_weight)):
        op = MeshedOperator(build_mesh(dom, 0.25), w)
        lam = np.linalg.eigvalsh(op.A.toarray())
        assert lam.min() > 0


def test_operator_rejects_nonpositive_weight(unit_disk):
    with pytest.raises(ValueError, match="positive"):
        MeshedOperator(build_mesh(unit_disk, 0.25), MonomialWeight(1, 0))


def test_singular_load_log_kernel(unit_disk, const_weight):
    # int_disk log|x| dx = -pi / 2
    op = MeshedOperator(build_mesh(unit_disk, 0.1, [((0.0, 0.0), 0.01)]), const_weight)

    def f(x):
        r2 = np.sum(x * x, axis=-1)
        with np.errstate(divide="ignore"):
            return np.where(r2 > 0, 0.5 * np.log(r2), 0.0)

    b = op.load_interior(f, singular_point=np.zeros(2))
    assert b.sum() == pytest.approx(-np.pi / 2, rel=2e-3)
