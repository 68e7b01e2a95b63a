"""Flow interpretation of the solved level-set fields.

A u-type field is read as a weak inverse anisotropic mean curvature flow:
E_t = {u < t} evolves by sublevel extraction, the anisotropic area of
N_t = boundary of E_t grows like e^t, each N_t carries H_F = F(grad u),
and u minimizes J(phi) = integral of F(grad phi) + phi F(grad u) among
competitors phi = u outside a compact set.  Everything here measures how
far a discrete field is from those statements.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ConvexPolygon, cell_gradients, node_gradients
from .norms import GRAD_FLOOR
from .wulff import (
    Contour,
    WulffShape,
    _segment_geometry,
    attach_hf,
    hf_grid,
    sample_wulff_boundary,
    sigma_F,
)

U_MEANINGS = ("u_p", "u_limit")


# ---------------------------------------------------------------------------
# Marching squares


def _edge_point(pa, pb, ua, ub, t):
    s = (t - ua) / (ub - ua)
    return pa + s[:, None] * (pb - pa)


# Per cell, corners counterclockwise: A=(i,j) B=(i+1,j) C=(i+1,j+1) D=(i,j+1).
# Walking A->B->C->D, an inside->outside flip starts a segment and an
# outside->inside flip ends one; traversal keeps {u < t} on the left, so
# outward facet normals satisfy <nu, grad u> > 0.  The two saddle cases
# pair crossings by the sign of the cell-center average.
_EDGES = ("AB", "BC", "CD", "DA")
_CASE_SEGMENTS = {
    1: [("AB", "DA")],
    2: [("BC", "AB")],
    3: [("BC", "DA")],
    4: [("CD", "BC")],
    6: [("CD", "AB")],
    7: [("CD", "DA")],
    8: [("DA", "CD")],
    9: [("AB", "CD")],
    11: [("BC", "CD")],
    12: [("DA", "BC")],
    13: [("AB", "BC")],
    14: [("DA", "AB")],
}
_SADDLE = {
    # case 5: A,C inside. 10: B,D inside.  key (case, center_inside)
    (5, False): [("AB", "DA"), ("CD", "BC")],
    (5, True): [("AB", "BC"), ("CD", "DA")],
    (10, False): [("BC", "AB"), ("DA", "CD")],
    (10, True): [("BC", "CD"), ("DA", "AB")],
}


def marching_squares(values, xs, ys, level):
    """Facet segments of the level set {values = level}; see Contour for
    the orientation convention.  Returns an (m, 2, 2) array."""
    u = np.asarray(values, dtype=float)
    pa = np.stack(np.meshgrid(xs[:-1], ys[:-1], indexing="ij"), axis=-1)
    h = xs[1] - xs[0]
    corner_vals = {
        "A": u[:-1, :-1], "B": u[1:, :-1], "C": u[1:, 1:], "D": u[:-1, 1:],
    }
    corner_off = {
        "A": (0.0, 0.0), "B": (h, 0.0), "C": (h, h), "D": (0.0, h),
    }
    inside = {k: v < level for k, v in corner_vals.items()}
    case = (
        inside["A"].astype(int)
        + 2 * inside["B"]
        + 4 * inside["C"]
        + 8 * inside["D"]
    )

    def edge_crossings(which, sel):
        a, b = which
        ua = corner_vals[a][sel]
        ub = corner_vals[b][sel]
        qa = pa[sel] + corner_off[a]
        qb = pa[sel] + corner_off[b]
        return _edge_point(qa, qb, ua, ub, level)

    chunks = []

    def emit(sel, pairs):
        if not np.any(sel):
            return
        for start, end in pairs:
            p0 = edge_crossings(start, sel)
            p1 = edge_crossings(end, sel)
            chunks.append(np.stack([p0, p1], axis=1))

    for c, pairs in _CASE_SEGMENTS.items():
        emit(case == c, pairs)
    center = 0.25 * sum(corner_vals.values())
    for (c, ci), pairs in _SADDLE.items():
        emit((case == c) & ((center < level) == ci), pairs)

    if not chunks:
        return np.zeros((0, 2, 2))
    return np.concatenate(chunks, axis=0)


# ---------------------------------------------------------------------------
# Sublevel sets and growth


@dataclass
class FlowSnapshot:
    """One time slice of the flow: N_t with its anisotropic area."""

    t: float
    contour: Contour
    sigma: float
    masked_fraction: float

    def is_empty(self):
        return len(self.contour) == 0


def _check_u_field(field):
    if field.meaning not in U_MEANINGS:
        raise ValueError(
            f"flow routines need a u-type field, got {field.meaning!r}"
        )


def extract_sublevel(field, t, norm=None):
    """FlowSnapshot of N_t = boundary of {u < t}.

    Levels outside the field range give an empty snapshot.  The masked
    fraction counts facets cut from cells touching obstacle or frame
    nodes, where nodal data is clamped rather than solved.
    """
    _check_u_field(field)
    norm = norm if norm is not None else field.domain.norm
    if norm is None:
        raise ValueError("need a norm for sigma_F")
    d = field.domain
    segs = marching_squares(field.values, d.xs, d.ys, t)
    if len(segs) == 0:
        empty = Contour(np.zeros((0, 2, 2)), np.zeros((0, 2)), np.zeros(0))
        return FlowSnapshot(t=t, contour=empty, sigma=0.0, masked_fraction=0.0)
    contour = Contour(segs, *_segment_geometry(segs))
    clamped = ~d.interior_mask
    cell_touch = (
        clamped[:-1, :-1] | clamped[1:, :-1] | clamped[1:, 1:] | clamped[:-1, 1:]
    )
    mid = contour.midpoints()
    ij = np.floor((mid - d.lo) / d.h).astype(int)
    ij[:, 0] = np.clip(ij[:, 0], 0, d.nx - 1)
    ij[:, 1] = np.clip(ij[:, 1], 0, d.ny - 1)
    masked = cell_touch[ij[:, 0], ij[:, 1]]
    return FlowSnapshot(
        t=t,
        contour=contour,
        sigma=sigma_F(norm, contour),
        masked_fraction=float(np.mean(masked)),
    )


def obstacle_sigma(norm, obstacle):
    """sigma_F of the exact obstacle boundary (the t=0 front N_0)."""
    if isinstance(obstacle, WulffShape):
        return sigma_F(norm, sample_wulff_boundary(obstacle, 8192))
    if isinstance(obstacle, ConvexPolygon):
        v = obstacle.vertices
        lens = np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=-1)
        return float(np.sum(norm.value(obstacle.normals) * lens))
    raise ValueError("need a Wulff shape or convex polygon obstacle")


@dataclass
class GrowthSeries:
    """Measured vs predicted sigma_F(N_t) = e^t sigma_F(N_0)."""

    rows: list  # (t, sigma_measured, sigma_predicted)
    sigma0: float
    hypothesis_ok: bool  # N_0 certified F-minimizing (convex obstacle)

    def max_rel_deviation(self):
        return max(
            abs(m / p - 1.0) for _, m, p in self.rows
        ) if self.rows else 0.0

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write(f"# sigma0={self.sigma0:.17g} "
                    f"hypothesis_ok={self.hypothesis_ok}\n")
            f.write("t,sigma_measured,sigma_predicted,rel_deviation\n")
            for t, m, p in self.rows:
                f.write(f"{t:.17g},{m:.17g},{p:.17g},{m / p - 1.0:.17g}\n")


def area_growth_series(field, norm, times):
    """Growth table for the fronts N_t against exponential prediction.

    sigma_F(N_0) comes from the exact obstacle geometry, not a contour of
    the discrete field; the e^t law needs N_0 to be F-minimizing, which
    holds for the convex obstacles this package builds (hypothesis_ok
    records whether the obstacle type certifies that).
    """
    _check_u_field(field)
    obstacle = field.domain.obstacle
    if obstacle is None:
        raise ValueError("growth series needs an obstacle (the t=0 front)")
    try:
        s0 = obstacle_sigma(norm, obstacle)
        hypothesis_ok = True
    except ValueError:
        snap0 = extract_sublevel(field, 0.0, norm)
        s0 = snap0.sigma
        hypothesis_ok = False
    rows = []
    for t in sorted(times):
        snap = extract_sublevel(field, float(t), norm)
        rows.append((float(t), snap.sigma, float(np.exp(t)) * s0))
    return GrowthSeries(rows=rows, sigma0=s0, hypothesis_ok=hypothesis_ok)


def sigma_F_coarea(norm, field, t, width_factor=1.5):
    """Grid-only sigma_F(N_t) estimate, no contouring.

    Smears the front over a band of ~width_factor cells with a cos^2
    kernel and sums F(grad u) against it:
        sigma ~ sum_cells F(grad u) delta_eps(u - t) h^2,
    eps = width_factor * h * |grad u| per cell.  Cross-check for the
    facet estimator; expect roughly twice its error.
    """
    _check_u_field(field)
    d = field.domain
    u = field.values
    g = cell_gradients(u, d.h)
    uc = 0.25 * (u[:-1, :-1] + u[1:, :-1] + u[1:, 1:] + u[:-1, 1:])
    free = d.interior_mask
    cell_ok = (
        free[:-1, :-1] & free[1:, :-1] & free[1:, 1:] & free[:-1, 1:]
    )
    gn = np.linalg.norm(g, axis=-1)
    eps = width_factor * d.h * gn
    ok = cell_ok & (eps > 0)
    s = uc - t
    inband = ok & (np.abs(s) < eps)
    if not np.any(inband):
        return 0.0
    eps_b = eps[inband]
    kern = (1.0 + np.cos(np.pi * s[inband] / eps_b)) / (2.0 * eps_b)
    return float(np.sum(norm.value(g[inband]) * kern) * d.cell_area())


# ---------------------------------------------------------------------------
# Weak curvature identity


@dataclass
class CurvatureResidual:
    max_rel: float
    mean_rel: float
    masked_fraction: float
    facets: int


def _front_is_closed(contour, h):
    """Every facet endpoint must be matched by some facet's start."""
    from scipy.spatial import cKDTree

    tree = cKDTree(contour.segments[:, 0])
    dist, _ = tree.query(contour.segments[:, 1], k=1)
    return bool(np.all(dist < 1e-7 * max(h, 1e-12)))


def weak_curvature_residual(field, norm, t, scheme="richardson"):
    """Per-facet |H_F - F(grad u)| / F(grad u) on the front N_t.

    H_F comes from the discrete divergence stencil, F(grad u) from nodal
    gradients, both interpolated to facet midpoints.  Facets with an
    incomplete H_F stencil or degenerate gradient are masked and counted;
    an entirely masked front, or one that is not closed (level lines
    running off the box, as for affine data), is an error.
    """
    _check_u_field(field)
    snap = extract_sublevel(field, t, norm)
    if snap.is_empty():
        raise ValueError(f"level {t} produces no front")
    if not _front_is_closed(snap.contour, field.domain.h):
        raise ValueError(
            f"front at level {t} is not closed; curvature comparison "
            "needs compact level sets"
        )
    d = field.domain
    obst = d.obstacle_mask if d.obstacle is not None else None
    hf, valid = hf_grid(norm, field.values, d.h, scheme=scheme,
                        obstacle_mask=obst)
    contour, _, ok = attach_hf(snap.contour, d, hf, valid)
    mid = contour.midpoints()
    g = node_gradients(field.values, d.h)
    gm = np.stack([d.interp(g[..., 0], mid), d.interp(g[..., 1], mid)],
                  axis=-1)
    fg = norm.value(gm)
    ok = ok & (fg > GRAD_FLOOR)
    if not np.any(ok):
        raise ValueError("every facet is masked; no closed front to test")
    rel = np.abs(contour.hf[ok] - fg[ok]) / fg[ok]
    return CurvatureResidual(
        max_rel=float(np.max(rel)),
        mean_rel=float(np.mean(rel)),
        masked_fraction=1.0 - float(np.mean(ok)),
        facets=int(len(contour)),
    )


# ---------------------------------------------------------------------------
# The J functional and minimality


def _cells_meeting(mask):
    return mask[:-1, :-1] | mask[1:, :-1] | mask[1:, 1:] | mask[:-1, 1:]


def J_functional(norm, field, phi, K):
    """J(phi) = sum over cells meeting K of [F(grad phi) + phi F(grad u)] h^2.

    u is the field's own data and sets the weight F(grad u); phi must
    agree with u outside K exactly (competitors differ only on K).
    """
    _check_u_field(field)
    u = field.values
    phi = np.asarray(phi, dtype=float)
    K = np.asarray(K, dtype=bool)
    if phi.shape != u.shape or K.shape != u.shape:
        raise ValueError("phi and K must match the field layout")
    if not np.array_equal(phi[~K], u[~K]):
        raise ValueError("phi differs from u outside K")
    d = field.domain
    cells = _cells_meeting(K)
    if not np.any(cells):
        return 0.0

    def corners(a):
        return np.stack(
            [a[:-1, :-1][cells], a[1:, :-1][cells],
             a[1:, 1:][cells], a[:-1, 1:][cells]], axis=0,
        )

    cu = corners(u)
    cp = corners(phi)
    h = d.h
    # bilinear cell gradient from the 4 corners, then midpoint quadrature
    gu = np.stack([
        (cu[1] + cu[2] - cu[0] - cu[3]) / (2 * h),
        (cu[3] + cu[2] - cu[0] - cu[1]) / (2 * h),
    ], axis=-1)
    gp = np.stack([
        (cp[1] + cp[2] - cp[0] - cp[3]) / (2 * h),
        (cp[3] + cp[2] - cp[0] - cp[1]) / (2 * h),
    ], axis=-1)
    phi_c = np.mean(cp, axis=0)
    return float(
        np.sum(norm.value(gp) + phi_c * norm.value(gu)) * d.cell_area()
    )


@dataclass
class PerturbationTrial:
    K: np.ndarray
    bump: np.ndarray  # phi - u, zero outside K; -bump is also tried
    J_u: float
    J_phi: float  # the smaller of the two signed competitors
    slack: float

    @property
    def margin(self):
        return self.J_phi - self.J_u

    @property
    def passed(self):
        return self.margin >= -self.slack


@dataclass
class MinimalityReport:
    trials: list
    seed: int
    slack_C: float
    violations: int

    @property
    def passed(self):
        return self.violations == 0

    def worst_margin(self):
        return min(t.margin for t in self.trials) if self.trials else 0.0

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write(f"# seed={self.seed} slack_C={self.slack_C}\n")
            f.write("trial,K_nodes,J_u,J_phi,margin,slack,passed\n")
            for k, tr in enumerate(self.trials):
                f.write(
                    f"{k},{int(tr.K.sum())},{tr.J_u:.17g},{tr.J_phi:.17g},"
                    f"{tr.margin:.17g},{tr.slack:.17g},{tr.passed}\n"
                )


def _tensor_bump(shape, rect, amp):
    i0, i1, j0, j1 = rect
    out = np.zeros(shape)
    xi = np.linspace(-1.0, 1.0, i1 - i0)
    eta = np.linspace(-1.0, 1.0, j1 - j0)
    prof = np.cos(0.5 * np.pi * xi)[:, None] ** 2 * np.cos(
        0.5 * np.pi * eta
    )[None, :] ** 2
    out[i0:i1, j0:j1] = amp * prof
    return out


def minimality_spot_check(norm, field, trials=200, seed=0, slack_C=2.0):
    """Random competitor study of J-minimality.

    Each trial bumps u by a random tensor cos^2 profile on a random node
    rectangle K kept inside the free region, tries both signs, and checks
    J(u) <= J(phi) + slack with slack = slack_C * h * |K| (|K| the area
    of K's nodes).  Discretization alone can produce small negative
    margins, hence the slack; slack_C = 2 was sized from refinement runs
    on the exact radial solution.  Trials draw from independent
    per-index generators so they replay under any execution order.
    """
    _check_u_field(field)
    d = field.domain
    free = d.interior_mask
    idx = np.argwhere(free)
    out = []
    violations = 0
    for k in range(trials):
        rng = np.random.default_rng([seed, k])
        ci, cj = idx[rng.integers(len(idx))]
        wi = int(rng.integers(3, 13))
        wj = int(rng.integers(3, 13))
        i0, i1 = max(ci - wi, 1), min(ci + wi + 1, d.nx)
        j0, j1 = max(cj - wj, 1), min(cj + wj + 1, d.ny)
        rect = np.zeros_like(free)
        rect[i0:i1, j0:j1] = True
        K = rect & free
        if not np.any(K):
            continue
        scale = float(np.mean(np.abs(field.values[K]))) + 0.1
        amp = float(rng.uniform(0.05, 0.8) * scale)
        bump = np.where(K, _tensor_bump(free.shape, (i0, i1, j0, j1), amp),
                        0.0)
        ju = J_functional(norm, field, field.values, K)
        jp = min(
            J_functional(norm, field, field.values + bump, K),
            J_functional(norm, field, field.values - bump, K),
        )
        slack = slack_C * d.h * float(K.sum()) * d.cell_area()
        tr = PerturbationTrial(K=K, bump=bump, J_u=ju, J_phi=jp, slack=slack)
        out.append(tr)
        if not tr.passed:
            violations += 1
    return MinimalityReport(trials=out, seed=seed, slack_C=slack_C,
                            violations=violations)


# ---------------------------------------------------------------------------
# Properness proxy


def properness_proxy(field, norm=None):
    """(min u on the outer layer, max u on the mid band, ok).

    A proper solution runs to +infinity outward, so the values one cell
    inside the truncation frame should dominate everything at middling
    distances.  Band geometry keys off the largest obstacle reach.
    """
    _check_u_field(field)
    d = field.domain
    inner = d.interior_mask
    layer = inner.copy()
    layer[2:-2, 2:-2] = False
    pts = d.node_points()
    if d.obstacle is not None:
        from .solver import enclosing_wulff

        nrm = norm if norm is not None else d.norm
        c, r = enclosing_wulff(nrm, d.obstacle)
        from .norms import PolarNorm

        fo = PolarNorm(nrm).value(pts - c)
        mid = inner & (fo >= 1.5 * r) & (fo <= 2.5 * r)
    else:
        half = 0.5 * (d.hi - d.lo)
        rel = np.abs(pts - 0.5 * (d.hi + d.lo)) / half
        rad = np.max(rel, axis=-1)
        mid = inner & (rad >= 0.4) & (rad <= 0.6)
    if not np.any(layer) or not np.any(mid):
        raise ValueError("bands do not intersect the free region")
    lo = float(np.min(field.values[layer]))
    hi = float(np.max(field.values[mid]))
    return lo, hi, lo > hi
