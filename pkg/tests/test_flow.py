import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from iamcf.flow import (
    J_functional,
    area_growth_series,
    extract_sublevel,
    marching_squares,
    minimality_spot_check,
    obstacle_sigma,
    properness_proxy,
    sigma_F_coarea,
    weak_curvature_residual,
    _tensor_bump,
)
from iamcf.grid import ConvexPolygon, GridDomain, ScalarField
from iamcf.norms import EllipsoidalNorm, EuclideanNorm
from iamcf.wulff import WulffShape

EUCLID = EuclideanNorm(2)
A_TEST = np.array([[4.0, 0.0], [0.0, 1.0]])


def radial_log_field(resolution=128, box=6.0, radius=1.0, obstacle=True):
    """Exact limit solution u = log(|x|/r) around a disk of radius r."""
    obst = WulffShape(EUCLID, radius) if obstacle else None
    d = GridDomain(box=(-box, box), resolution=resolution, obstacle=obst,
                   norm=EUCLID)
    r = np.linalg.norm(d.node_points(), axis=-1)
    u = np.log(np.maximum(r / radius, 1e-12))
    return ScalarField(d, u, "u_limit")


# -- marching squares ----------------------------------------------------------


def test_marching_squares_linear_field():
    xs = np.linspace(0.0, 1.0, 11)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    segs = marching_squares(X, xs, xs, 0.55)
    assert len(segs) == 10
    assert np.allclose(segs[..., 0], 0.55)
    assert np.sum(np.linalg.norm(segs[:, 1] - segs[:, 0], axis=-1)) == pytest.approx(1.0)


def test_marching_squares_no_crossings():
    xs = np.linspace(0.0, 1.0, 5)
    u = np.zeros((5, 5))
    assert marching_squares(u, xs, xs, 0.5).shape == (0, 2, 2)


def test_contour_matches_wulff_boundary():
    f = radial_log_field(obstacle=False)
    snap = extract_sublevel(f, 0.0, EUCLID)
    v = snap.contour.vertices()
    assert len(snap.contour) > 60
    assert np.max(np.abs(np.linalg.norm(v, axis=-1) - 1.0)) < f.domain.h
    assert snap.sigma == pytest.approx(2.0 * np.pi, rel=1e-4)
    assert snap.contour.enclosed_area() == pytest.approx(np.pi, rel=1e-3)


def test_contour_orientation_follows_gradient():
    f = radial_log_field(obstacle=False)
    snap = extract_sublevel(f, 0.4, EUCLID)
    mid = snap.contour.midpoints()
    dots = np.sum(snap.contour.normals * mid, axis=-1)  # grad u parallel to x
    assert np.all(dots > 0)


def test_saddle_cells_resolved_consistently():
    # u = x y near level 0 exercises both ambiguous sign patterns
    d = GridDomain(box=(-1.0, 1.0), resolution=32)
    pts = d.node_points()
    f = ScalarField(d, pts[..., 0] * pts[..., 1], "u_limit")
    snap = extract_sublevel(f, 0.05, EUCLID)
    mid = snap.contour.midpoints()
    g = np.stack([mid[:, 1], mid[:, 0]], axis=-1)
    assert len(snap.contour) > 0
    assert np.min(np.sum(snap.contour.normals * g, axis=-1)) > 0


def test_out_of_range_levels_give_empty_snapshots():
    f = radial_log_field(resolution=64)
    assert extract_sublevel(f, -50.0, EUCLID).is_empty()
    assert extract_sublevel(f, 50.0, EUCLID).is_empty()


def test_v_fields_rejected():
    f = radial_log_field(resolution=64)
    v = f.copy(meaning="v_p", p=1.2)
    with pytest.raises(ValueError, match="u-type"):
        extract_sublevel(v, 0.5, EUCLID)


@given(st.floats(0.3, 1.0), st.floats(1.2, 1.7))
@settings(max_examples=20, deadline=None)
def test_sublevel_nesting(t1, t2):
    f = radial_log_field(resolution=64)
    early = extract_sublevel(f, t1, EUCLID)
    vals = f.interp(early.contour.vertices())
    assert np.all(vals < t2)


def test_masked_fraction_counts_wall_facets():
    f = radial_log_field(resolution=128)
    h = f.domain.h
    hug = extract_sublevel(f, np.log(1.0 + 0.5 * h), EUCLID)
    far = extract_sublevel(f, 1.0, EUCLID)
    assert hug.masked_fraction > 0.5
    assert far.masked_fraction == 0.0


# -- growth of the anisotropic area ---------------------------------------------


def test_obstacle_sigma_closed_forms():
    assert obstacle_sigma(EUCLID, WulffShape(EUCLID, 1.4)) == pytest.approx(
        2.8 * np.pi, rel=1e-5
    )
    sq = ConvexPolygon([[-1, -1], [1, -1], [1, 1], [-1, 1]])
    assert obstacle_sigma(EUCLID, sq) == pytest.approx(8.0)
    ell = EllipsoidalNorm(A_TEST)
    w = obstacle_sigma(ell, WulffShape(ell, 1.0))
    assert w == pytest.approx(2.0 * np.pi * np.sqrt(4.0), rel=1e-5)
    with pytest.raises(ValueError):
        obstacle_sigma(EUCLID, object())


def test_growth_series_exact_field():
    f = radial_log_field()
    gs = area_growth_series(f, EUCLID, [0.0, 0.25, 0.5, 1.0, 1.5])
    assert gs.hypothesis_ok
    assert gs.sigma0 == pytest.approx(2.0 * np.pi, rel=1e-5)
    assert gs.max_rel_deviation() < 1e-3
    for t, m, p in gs.rows:
        assert m / p == pytest.approx(1.0, abs=1e-3)


def test_growth_needs_an_obstacle():
    f = radial_log_field(obstacle=False)
    with pytest.raises(ValueError, match="obstacle"):
        area_growth_series(f, EUCLID, [0.5])


def test_growth_hypothesis_flag_for_unknown_obstacles():
    class Blob:
        def contains(self, x, dilation=0.0):
            return np.linalg.norm(np.asarray(x, float), axis=-1) <= 1.0 + dilation

        def bbox(self):
            return np.array([-1.0, -1.0]), np.array([1.0, 1.0])

    d = GridDomain(box=(-6.0, 6.0), resolution=128, obstacle=Blob(), norm=EUCLID)
    r = np.linalg.norm(d.node_points(), axis=-1)
    f = ScalarField(d, np.log(np.maximum(r, 1e-12)), "u_limit")
    gs = area_growth_series(f, EUCLID, [0.5])
    assert not gs.hypothesis_ok
    assert gs.rows[0][1] / gs.rows[0][2] == pytest.approx(1.0, abs=5e-3)


def test_growth_csv_round_trip(tmp_path):
    f = radial_log_field(resolution=64)
    gs = area_growth_series(f, EUCLID, [0.25, 0.75])
    path = tmp_path / "growth.csv"
    gs.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("#") and "hypothesis_ok=True" in lines[0]
    data = np.loadtxt(path, delimiter=",", skiprows=2)
    assert data.shape == (2, 4)
    assert np.allclose(data[:, 0], [0.25, 0.75])
    assert np.allclose(data[:, 1] / data[:, 2] - 1.0, data[:, 3])


def test_coarea_estimator_tracks_contours():
    f = radial_log_field()
    for t in (0.3, 0.8, 1.2):
        sc = sigma_F_coarea(EUCLID, f, t)
        st_ = extract_sublevel(f, t, EUCLID).sigma
        assert sc == pytest.approx(st_, rel=2e-3)
    assert sigma_F_coarea(EUCLID, f, 99.0) == 0.0


# -- weak curvature identity -----------------------------------------------------


def test_weak_curvature_on_exact_field():
    f = radial_log_field()
    cr = weak_curvature_residual(f, EUCLID, 0.5)
    assert cr.mean_rel < 2e-3
    assert cr.max_rel < 1e-2
    assert cr.masked_fraction == 0.0
    assert cr.facets > 100


def test_weak_curvature_rejects_open_fronts():
    d = GridDomain(box=(-1.0, 1.0), resolution=32)
    pts = d.node_points()
    f = ScalarField(d, 0.8 * pts[..., 0] - 0.1 * pts[..., 1], "u_limit")
    with pytest.raises(ValueError, match="closed"):
        weak_curvature_residual(f, EUCLID, 0.1)


def test_weak_curvature_rejects_empty_levels():
    f = radial_log_field(resolution=64)
    with pytest.raises(ValueError, match="front"):
        weak_curvature_residual(f, EUCLID, -10.0)


# -- J functional and minimality ---------------------------------------------------


def square_ring_mask(domain, a, b):
    pts = domain.node_points()
    m = np.max(np.abs(pts), axis=-1)
    return (m >= a - 1e-12) & (m <= b + 1e-12)


def test_J_matches_radial_quadrature():
    # cells meeting a grid-aligned square ring [a, b] tile the ring
    # [a-h, b+h] exactly, so a polar quadrature over that region is an
    # independent oracle for J(u), u = log|x|
    f = radial_log_field(resolution=256)
    d = f.domain
    K = square_ring_mask(d, 1.5, 3.0)
    J = J_functional(EUCLID, f, f.values, K)

    def lshell(c):
        return 8.0 * quad(
            lambda th: (c / np.cos(th)) * np.log(c / np.cos(th)), 0, np.pi / 4
        )[0]

    oracle = lshell(3.0 + d.h) - lshell(1.5 - d.h)
    assert J == pytest.approx(oracle, rel=5e-3)


def test_J_requires_agreement_outside_K():
    f = radial_log_field(resolution=64)
    K = square_ring_mask(f.domain, 1.5, 3.0)
    phi = f.values + 0.1
    with pytest.raises(ValueError, match="outside K"):
        J_functional(EUCLID, f, phi, K)


def test_J_zero_data_gives_zero():
    d = GridDomain(box=(-1.0, 1.0), resolution=16)
    f = ScalarField(d, np.zeros((17, 17)), "u_limit")
    K = np.zeros((17, 17), dtype=bool)
    K[5:9, 5:9] = True
    assert J_functional(EUCLID, f, f.values, K) == 0.0


def test_J_shape_mismatch_rejected():
    f = radial_log_field(resolution=64)
    with pytest.raises(ValueError, match="layout"):
        J_functional(EUCLID, f, np.zeros((3, 3)), np.zeros((3, 3), bool))


def test_minimality_on_exact_solution():
    f = radial_log_field()
    rep = minimality_spot_check(EUCLID, f, trials=60, seed=4)
    assert rep.passed
    assert rep.violations == 0
    assert len(rep.trials) > 50
    # margins can dip below zero only within the discretization slack
    for tr in rep.trials:
        assert tr.margin >= -tr.slack


def test_minimality_flags_corrupted_field():
    f = radial_log_field(resolution=128)
    bad = f.values + _tensor_bump(f.values.shape, (73, 103, 73, 103), 4.0)
    fb = ScalarField(f.domain, bad, "u_limit")
    rep = minimality_spot_check(EUCLID, fb, trials=200, seed=0)
    assert not rep.passed
    assert rep.worst_margin() < -min(t.slack for t in rep.trials)


def test_minimality_csv_round_trip(tmp_path):
    f = radial_log_field(resolution=64)
    rep = minimality_spot_check(EUCLID, f, trials=10, seed=9)
    path = tmp_path / "minimality.csv"
    rep.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# seed=9 slack_C=2.0"
    data = np.loadtxt(path, delimiter=",", skiprows=2,
                      usecols=(0, 1, 2, 3, 4, 5))
    assert data.shape[0] == len(rep.trials)


# -- properness ---------------------------------------------------------------------


def test_properness_proxy_on_growing_field():
    f = radial_log_field()
    lo, hi, ok = properness_proxy(f)
    assert ok and lo > hi


def test_properness_proxy_flags_flat_fields():
    f = radial_log_field(resolution=64)
    flat = f.copy(values=np.ones_like(f.values))
    lo, hi, ok = properness_proxy(flat)
    assert not ok
