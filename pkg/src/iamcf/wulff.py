"""Wulff shapes, contours, anisotropic curvature and area.

The Wulff shape of a Minkowski norm F is W_r(x0) = {F°(x - x0) < r}; it
plays the role of the round ball of radius r.  Level sets are carried as
facet lists (segments with outward Euclidean normals); the anisotropic
area of a contour N is sigma_F(N) = sum F(nu) * measure over facets.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .norms import GRAD_FLOOR, PolarNorm


class WulffShape:
    """W_r(x0) for a given norm; the polar norm is built once."""

    def __init__(self, norm, radius, center=(0.0, 0.0), polar_mode=None):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.norm = norm
        self.radius = float(radius)
        self.center = np.asarray(center, dtype=float)
        if self.center.shape != (norm.dim,):
            raise ValueError("center dimension mismatch")
        self.polar = PolarNorm(norm, mode=polar_mode)

    def polar_value(self, x):
        return self.polar.value(np.asarray(x, dtype=float) - self.center)

    def contains(self, x, dilation=0.0):
        return self.polar_value(x) <= self.radius + dilation

    def bbox(self):
        c = _unit_directions(512)
        v = self.boundary_points(c)
        return v.min(axis=0), v.max(axis=0)

    def boundary_points(self, directions):
        """Radially scale unit directions onto the boundary."""
        scale = self.radius / self.polar.value(directions)
        return self.center + scale[..., None] * directions


def _unit_directions(count):
    th = 2.0 * np.pi * (np.arange(count) + 0.5) / count
    return np.stack([np.cos(th), np.sin(th)], axis=-1)


@dataclass
class Contour:
    """Oriented facet list: segments (m,2,2), outward unit normals (m,2),
    Euclidean measures (m,), optional per-facet H_F estimates.

    Orientation convention: traversing a segment from endpoint 0 to 1,
    the enclosed (sublevel) region lies on the left, so the outward
    normal is the tangent rotated by -90 degrees.
    """

    segments: np.ndarray
    normals: np.ndarray
    measures: np.ndarray
    hf: np.ndarray | None = None

    @staticmethod
    def from_polyline(vertices, closed=True, hf=None):
        v = np.asarray(vertices, dtype=float)
        nxt = np.roll(v, -1, axis=0) if closed else v[1:]
        cur = v if closed else v[:-1]
        segs = np.stack([cur, nxt], axis=1)
        c = Contour(segs, *_segment_geometry(segs), hf=None)
        if hf is not None:
            c.hf = np.asarray(hf, dtype=float)
        return c

    def __len__(self):
        return len(self.segments)

    def midpoints(self):
        return 0.5 * (self.segments[:, 0] + self.segments[:, 1])

    def vertices(self):
        return self.segments.reshape(-1, 2)

    def enclosed_area(self):
        """Signed area by Green's theorem; positive for the convention
        above, sign flips under facet reversal (closedness check)."""
        a = self.segments[:, 0]
        b = self.segments[:, 1]
        return 0.5 * float(np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]))

    def reversed(self):
        segs = self.segments[:, ::-1]
        return Contour(segs, *_segment_geometry(segs),
                       hf=None if self.hf is None else self.hf.copy())

    def displaced(self, V, s):
        """Move every endpoint x to x + s*V(x); geometry is recomputed."""
        pts = self.segments.reshape(-1, 2)
        moved = pts + s * np.asarray(V(pts), dtype=float)
        segs = moved.reshape(self.segments.shape)
        return Contour(segs, *_segment_geometry(segs),
                       hf=None if self.hf is None else self.hf.copy())


def _segment_geometry(segs):
    t = segs[:, 1] - segs[:, 0]
    length = np.linalg.norm(t, axis=-1)
    safe = np.where(length > 0, length, 1.0)
    # tangent rotated by -90 deg: enclosed region on the left
    normals = np.stack([t[:, 1], -t[:, 0]], axis=-1) / safe[:, None]
    return normals, length


def sample_wulff_boundary(shape, resolution):
    """Closed polyline approximation of the Wulff boundary (n=2).

    Vertices are theta-uniform directions scaled radially onto
    {F°(x - x0) = r}; counterclockwise, so outward normals follow from
    the orientation convention.
    """
    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    if shape.norm.dim != 2:
        raise ValueError("facet contours are 2D only")
    d = _unit_directions(resolution)
    return Contour.from_polyline(shape.boundary_points(d), closed=True)


def anisotropic_normal(norm, nu):
    """nu_F = F_xi(nu) for Euclidean unit normals nu; F°(nu_F) = 1."""
    return norm.grad(np.asarray(nu, dtype=float))


def sigma_F(norm, contour):
    """Anisotropic area sum F(nu) * measure (deterministic order)."""
    if len(contour) == 0:
        return 0.0
    return float(np.sum(norm.value(contour.normals) * contour.measures))


# ---------------------------------------------------------------------------
# Anisotropic mean curvature of a gridded level-set function


def _avg(a, axis, s):
    lo = [slice(None)] * a.ndim
    hi = [slice(None)] * a.ndim
    lo[axis] = slice(None, -s)
    hi[axis] = slice(s, None)
    return 0.5 * (a[tuple(lo)] + a[tuple(hi)])


def _diff(a, axis, s):
    lo = [slice(None)] * a.ndim
    hi = [slice(None)] * a.ndim
    lo[axis] = slice(None, -s)
    hi[axis] = slice(s, None)
    return a[tuple(hi)] - a[tuple(lo)]


def _strided_cell_gradients(u, h, s):
    """Corner-average gradient on stride-s cells; shape (*(N+1-s), ndim)."""
    comps = []
    for ax in range(u.ndim):
        d = _diff(u, ax, s) / (s * h)
        for other in range(u.ndim):
            if other != ax:
                d = _avg(d, other, s)
        comps.append(d)
    return np.stack(comps, axis=-1)


def _strided_divergence(w, h, s):
    """Adjoint pattern: cell vectors -> divergence on interior nodes."""
    out = None
    for ax in range(w.ndim - 1):
        d = w[..., ax]
        for other in range(w.ndim - 1):
            if other != ax:
                d = _avg(d, other, s)
        d = _diff(d, ax, s) / (s * h)
        out = d if out is None else out + d
    return out


def _safe_anisotropic_flux(norm, g, floor):
    """F_xi(g) with degenerate cells zeroed and flagged."""
    F = norm.value(g)
    bad = F < floor
    Fs = np.where(bad, 1.0, F)
    flux = norm.sq_grad(g) / Fs[..., None]
    flux[bad] = 0.0
    return flux, bad


def _hf_single_stride(norm, u, h, s, floor, bad_cells_extra=None):
    g = _strided_cell_gradients(u, h, s)
    flux, bad = _safe_anisotropic_flux(norm, g, floor)
    if bad_cells_extra is not None:
        bad = bad | bad_cells_extra
    div = _strided_divergence(flux, h, s)
    # a node is valid if none of its 2^n surrounding stride-cells is bad
    badf = bad.astype(float)
    for ax in range(u.ndim):
        badf = _avg(badf, ax, s)
    valid = badf == 0.0
    full = np.zeros_like(u)
    mask = np.zeros(u.shape, dtype=bool)
    core = tuple(slice(s, -s) for _ in range(u.ndim))
    full[core] = np.where(valid, div, 0.0)
    mask[core] = valid
    return full, mask


def hf_grid(norm, values, h, scheme="richardson", obstacle_mask=None,
            floor=None):
    """Discrete H_F = div(F_xi(grad u)) at grid nodes.

    values: nodal array, any dimension matching norm.dim.
    Returns (hf, valid):  hf is zero where invalid (never NaN), valid is
    the node mask.  Nodes are invalid near the array edge, where a
    stencil cell has F(grad u) below the degeneracy floor, or where the
    stencil touches obstacle nodes.

    Schemes:
      compact     cell-center gradients -> F_xi -> node divergence;
                  centered, second order.
      wide        node-centered gradients and divergence (5x5 reach).
      richardson  stride-1/stride-2 extrapolation of `compact`; fourth
                  order on smooth fields, default.
    """
    u = np.asarray(values, dtype=float)
    if floor is None:
        floor = GRAD_FLOOR
    bad_extra = None
    if obstacle_mask is not None:
        # cells with any obstacle corner see clamped data; exclude them
        bc = obstacle_mask.astype(float)
        for ax in range(u.ndim):
            bc = _avg(bc, ax, 1)
        bad_extra1 = bc > 0.0
    else:
        bad_extra1 = None

    if scheme == "compact":
        return _hf_single_stride(norm, u, h, 1, floor, bad_extra1)
    if scheme == "richardson":
        d1, m1 = _hf_single_stride(norm, u, h, 1, floor, bad_extra1)
        if obstacle_mask is not None:
            bc2 = obstacle_mask.astype(float)
            for ax in range(u.ndim):
                bc2 = _avg(bc2, ax, 2)
            bad_extra2 = bc2 > 0.0
        else:
            bad_extra2 = None
        d2, m2 = _hf_single_stride(norm, u, h, 2, floor, bad_extra2)
        valid = m1 & m2
        hf = np.where(valid, (4.0 * d1 - d2) / 3.0, 0.0)
        return hf, valid
    if scheme == "wide":
        return _hf_wide(norm, u, h, floor, obstacle_mask)
    raise ValueError(f"unknown scheme {scheme!r}")


def _hf_wide(norm, u, h, floor, obstacle_mask):
    g = np.stack(np.gradient(u, h), axis=-1)  # centered in the interior
    flux, bad = _safe_anisotropic_flux(norm, g, floor)
    if obstacle_mask is not None:
        bad = bad | obstacle_mask
    div = np.zeros_like(u)
    for ax in range(u.ndim):
        div += np.gradient(flux[..., ax], h, axis=ax)
    # invalidate: edge ring of width 2, plus 2-neighborhood of bad nodes
    valid = ~bad
    for ax in range(u.ndim):
        v = valid
        for shift in (1, 2, -1, -2):
            v = v & np.roll(valid, shift, axis=ax)
        valid = v
    for ax in range(u.ndim):
        sl = [slice(None)] * u.ndim
        sl[ax] = slice(0, 2)
        valid[tuple(sl)] = False
        sl[ax] = slice(-2, None)
        valid[tuple(sl)] = False
    return np.where(valid, div, 0.0), valid


def level_set_HF(norm, field, point, scheme="richardson"):
    """H_F at one grid node (i, j); see hf_grid for the field version."""
    obstacle = None
    if field.domain.obstacle is not None:
        obstacle = field.domain.obstacle_mask
    hf, valid = hf_grid(
        norm, field.values, field.domain.h, scheme=scheme,
        obstacle_mask=obstacle,
    )
    i, j = point
    if not valid[i, j]:
        raise ValueError(f"degenerate or incomplete stencil at node {point}")
    return float(hf[i, j])


def attach_hf(contour, domain, hf, valid):
    """Bilinear-interpolate nodal H_F onto facet midpoints.

    Returns (contour with hf, masked_fraction): facets whose
    interpolation cell touches an invalid node are flagged and their hf
    left at 0.
    """
    mid = contour.midpoints()
    hf_mid = domain.interp(hf, mid)
    ok = domain.interp(valid.astype(float), mid) >= 1.0 - 1e-9
    out = replace(contour, hf=np.where(ok, hf_mid, 0.0))
    frac = 1.0 - float(np.mean(ok)) if len(contour) else 0.0
    return out, frac, ok


# ---------------------------------------------------------------------------
# First variation of sigma_F


@dataclass
class FirstVariationResult:
    lhs: float
    rhs: float
    step_warning: bool
    lhs_fine: float


def first_variation_check(norm, contour, V, s_step=1e-4):
    """Compare d/ds sigma_F(N_s) against the curvature integral.

    lhs: central difference of sigma_F with vertices displaced by s*V.
    rhs: sum H_F <V, nu> measure over facets (Euclidean surface measure,
    per the first-variation formula).
    A Richardson check with step s/2 flags the nonlinear regime.
    """
    if contour.hf is None:
        raise ValueError("contour carries no H_F estimates")

    def d_sigma(s):
        up = sigma_F(norm, contour.displaced(V, s))
        dn = sigma_F(norm, contour.displaced(V, -s))
        return (up - dn) / (2.0 * s)

    lhs = d_sigma(s_step)
    lhs_fine = d_sigma(0.5 * s_step)
    scale = sigma_F(norm, contour)
    step_warning = bool(
        abs(lhs - lhs_fine) > 0.02 * (abs(lhs_fine) + 1e-6 * scale)
    )
    mid = contour.midpoints()
    vn = np.sum(np.asarray(V(mid), dtype=float) * contour.normals, axis=-1)
    rhs = float(np.sum(contour.hf * vn * contour.measures))
    return FirstVariationResult(lhs=lhs, rhs=rhs, step_warning=step_warning,
                                lhs_fine=lhs_fine)
