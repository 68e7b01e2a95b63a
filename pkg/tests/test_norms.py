import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iamcf.norms import (
    CustomNorm,
    DegenerateGradientError,
    EllipsoidalNorm,
    EuclideanNorm,
    LqNorm,
    PolarNorm,
    ellipticity_constant,
    make_norm,
)

A_TEST = np.array([[4.0, 0.0], [0.0, 1.0]])


def builtin_norms():
    return [
        EuclideanNorm(2),
        EllipsoidalNorm(A_TEST),
        LqNorm(4.0, dim=2, delta=0.05),
    ]


def random_inputs(n=1000, dim=2, seed=7):
    rng = np.random.default_rng(seed)
    # spread magnitudes over several decades
    x = rng.standard_normal((n, dim))
    return x * np.exp(rng.uniform(-3, 3, (n, 1)))


@pytest.fixture(params=builtin_norms(), ids=lambda n: n.kind)
def norm(request):
    return request.param


# -- point values ----------------------------------------------------------


def test_euclidean_345():
    assert EuclideanNorm(2).value(np.array([3.0, 4.0])) == pytest.approx(5.0)


def test_zero_maps_to_zero(norm):
    assert norm.value(np.zeros(2)) == 0.0


def test_ellipsoidal_axis_value():
    # sqrt(xi^T A xi) with A=diag(4,1)
    ell = EllipsoidalNorm(A_TEST)
    assert ell.value(np.array([1.0, 0.0])) == pytest.approx(2.0)
    assert ell.grad(np.array([1.0, 0.0])) == pytest.approx([2.0, 0.0])


def test_euclidean_grad_hess_points():
    e = EuclideanNorm(2)
    assert e.grad(np.array([3.0, 4.0])) == pytest.approx([0.6, 0.8])
    assert np.allclose(e.hess(np.array([1.0, 0.0])), [[0.0, 0.0], [0.0, 1.0]])


def test_dimension_mismatch_rejected(norm):
    with pytest.raises(ValueError):
        norm.value(np.zeros(3))


def test_gradient_floor(norm):
    with pytest.raises(DegenerateGradientError):
        norm.grad(np.array([1e-15, 0.0]))
    with pytest.raises(DegenerateGradientError):
        norm.hess(np.array([0.0, 1e-16]))


# -- identity suite over random inputs (acceptance-grade) -------------------


def test_euler_identity(norm):
    xi = random_inputs()
    lhs = np.sum(norm.grad(xi) * xi, axis=-1)
    F = norm.value(xi)
    assert np.max(np.abs(lhs - F) / F) < 1e-10


def test_hess_annihilates_xi(norm):
    xi = random_inputs()
    Hxi = np.einsum("...ij,...j->...i", norm.hess(xi), xi)
    scale = norm.value(xi) / np.linalg.norm(xi, axis=-1)
    assert np.max(np.linalg.norm(Hxi, axis=-1) / scale) < 1e-9


def test_hess_matches_grad_differences(norm):
    # central-difference oracle for D^2 F
    xi = random_inputs(n=60, seed=3)
    xi = xi[np.linalg.norm(xi, axis=-1) > 0.1]
    H = norm.hess(xi)
    eps = 1e-6 * np.linalg.norm(xi, axis=-1, keepdims=True)
    for k in range(2):
        e = np.zeros(2)
        e[k] = 1.0
        col = (norm.grad(xi + eps * e) - norm.grad(xi - eps * e)) / (2 * eps)
        assert np.max(np.abs(col - H[..., k])) < 1e-5


def test_polar_identities(norm):
    xi = random_inputs()
    polar = PolarNorm(norm)
    Fo = polar.value(xi)
    gp = polar.grad(xi)
    assert np.max(np.abs(norm.value(gp) - 1.0)) < 1e-8
    dual = Fo[:, None] * norm.grad(gp) - xi
    assert np.max(np.linalg.norm(dual, axis=-1) / np.linalg.norm(xi, axis=-1)) < 1e-8


def test_polar_euclidean_self():
    p = PolarNorm(EuclideanNorm(2))
    assert p.value(np.array([3.0, 4.0])) == pytest.approx(5.0)
    assert p.grad(np.array([0.0, 2.0])) == pytest.approx([0.0, 1.0])


def test_polar_ellipsoidal_closed_form():
    p = PolarNorm(EllipsoidalNorm(A_TEST))
    assert p.mode == "closed_form"
    assert p.value(np.array([1.0, 0.0])) == pytest.approx(0.5)


def test_numeric_sup_matches_closed_form():
    ell = EllipsoidalNorm(A_TEST)
    x = random_inputs(n=100, seed=11)
    ref = PolarNorm(ell, "closed_form").value(x)
    num = PolarNorm(ell, "numeric_sup").value(x)
    assert np.max(np.abs(num - ref) / ref) < 1e-4


def test_lq_polar_defaults_to_numeric():
    assert PolarNorm(LqNorm(4.0)).mode == "numeric_sup"
    with pytest.raises(ValueError):
        PolarNorm(LqNorm(4.0), "closed_form")


def test_lq_unsmoothed_polar_is_dual_exponent():
    # with delta=0 the polar of l^q is l^{q'}, 1/q + 1/q' = 1
    q = 4.0
    qp = q / (q - 1.0)
    lq = LqNorm(q, delta=0.0)
    x = random_inputs(n=50, seed=2)
    ref = np.sum(np.abs(x) ** qp, axis=-1) ** (1.0 / qp)
    num = PolarNorm(lq, "numeric_sup").value(x)
    assert np.max(np.abs(num - ref) / ref) < 1e-10


# -- homogeneity / convexity properties -------------------------------------


@given(
    v=st.tuples(
        st.floats(-100, 100, allow_nan=False), st.floats(-100, 100, allow_nan=False)
    ),
    t=st.floats(0.01, 10.0),
)
@settings(max_examples=200, deadline=None)
def test_homogeneity_property(v, t):
    xi = np.array(v)
    if np.linalg.norm(xi) < 1e-6:
        return
    for norm in builtin_norms():
        F = norm.value(xi)
        assert abs(norm.value(t * xi) - t * F) <= 1e-12 * max(t * F, 1e-30)
        assert norm.value(-xi) == pytest.approx(F, rel=1e-12)


@given(
    a=st.tuples(st.floats(-50, 50), st.floats(-50, 50)),
    b=st.tuples(st.floats(-50, 50), st.floats(-50, 50)),
)
@settings(max_examples=200, deadline=None)
def test_convexity_property(a, b):
    xi, eta = np.array(a), np.array(b)
    for norm in builtin_norms():
        mid = norm.value((xi + eta) / 2.0)
        assert mid <= (norm.value(xi) + norm.value(eta)) / 2.0 + 1e-12


def test_grad_zero_homogeneous(norm):
    xi = random_inputs(n=200, seed=5)
    g1 = norm.grad(xi)
    g2 = norm.grad(3.7 * xi)
    assert np.max(np.abs(g1 - g2)) < 1e-10


# -- ellipticity -------------------------------------------------------------


def test_ellipticity_positive(norm):
    lam = ellipticity_constant(norm, samples=512, seed=0)
    assert lam > 0


def test_ellipticity_smoothing_restores_lower_bound():
    # plain l^4 degenerates on the axes; the blended version does not
    lam_plain = ellipticity_constant(LqNorm(4.0, delta=0.0), samples=512, seed=0)
    lam_smooth = ellipticity_constant(LqNorm(4.0, delta=0.05), samples=512, seed=0)
    assert lam_smooth > lam_plain
    assert lam_smooth >= 0.05 - 1e-12


def test_sq_hess_consistency(norm):
    # sq_hess must equal F*hess + grad (x) grad
    xi = random_inputs(n=100, seed=9)
    F = norm.value(xi)
    g = norm.grad(xi)
    assembled = F[:, None, None] * norm.hess(xi) + g[:, :, None] * g[:, None, :]
    assert np.max(np.abs(assembled - norm.sq_hess(xi))) < 1e-8


# -- custom norms ------------------------------------------------------------


def test_custom_norm_roundtrip():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    ref = EllipsoidalNorm(A)
    cust = CustomNorm(2, value_fn=ref.value, grad_fn=ref.grad)
    xi = random_inputs(n=50, seed=1)
    assert np.allclose(cust.value(xi), ref.value(xi))
    assert np.allclose(cust.hess(xi), ref.hess(xi), atol=1e-5)
    p = PolarNorm(cust)
    assert p.mode == "numeric_sup"
    ref_polar = PolarNorm(ref).value(xi)
    assert np.max(np.abs(p.value(xi) - ref_polar) / ref_polar) < 1e-8


def test_make_norm_factory():
    assert make_norm("euclidean", dim=3).dim == 3
    assert make_norm("ellipsoidal", A=A_TEST).kind == "ellipsoidal"
    assert make_norm("lq", q=3.0, delta=0.1).q == 3.0
    with pytest.raises(ValueError):
        make_norm("taxicab")
    with pytest.raises(ValueError):
        make_norm("ellipsoidal")


def test_ellipsoidal_rejects_bad_matrix():
    with pytest.raises(ValueError):
        EllipsoidalNorm(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        EllipsoidalNorm(np.array([[1.0, 0.0], [0.0, -1.0]]))
