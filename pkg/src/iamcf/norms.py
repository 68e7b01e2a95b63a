"""Minkowski norm calculus.

A Minkowski norm F is an even, 1-homogeneous, convex function on R^n,
positive away from the origin, with D^2(F^2/2) positive definite away
from 0.  This module evaluates F, its first and second derivatives,
and the polar norm F°(x) = sup_{xi != 0} <xi, x> / F(xi).

All evaluation routines are vectorized over a leading batch shape:
inputs of shape (..., n) produce values of shape (...), gradients of
shape (..., n) and Hessians of shape (..., n, n).
"""

from __future__ import annotations

import numpy as np

# Euclidean magnitudes below this are reported as degenerate by grad/hess.
# Regularization policy belongs to the caller (the PDE solver), not here.
GRAD_FLOOR = 1e-14


class DegenerateGradientError(ValueError):
    """Raised when a derivative is requested at (numerically) zero input."""

    def __init__(self, magnitude):
        self.magnitude = float(magnitude)
        super().__init__(
            f"gradient requested at |xi| = {self.magnitude:.3e} < {GRAD_FLOOR:.0e}"
        )


def _check_dim(xi, n):
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != n:
        raise ValueError(f"expected last axis {n}, got shape {xi.shape}")
    return xi


def _check_floor(xi):
    mag = np.sqrt(np.sum(xi * xi, axis=-1))
    small = np.min(mag)
    if small < GRAD_FLOOR:
        raise DegenerateGradientError(small)


class MinkowskiNorm:
    """Base class; subclasses implement value / sq_grad / sq_hess.

    grad and hess are derived from the derivatives of G = F^2/2:
        F_xi  = (grad G)/F
        D^2 F = (D^2 G - F_xi F_xi^T)/F
    which keeps the 0- and (-1)-homogeneous pieces exact.
    """

    kind = "abstract"

    def __init__(self, dim):
        self.dim = int(dim)
        if self.dim < 2:
            raise ValueError("dimension must be >= 2")

    # -- interface -------------------------------------------------------

    def value(self, xi):
        raise NotImplementedError

    def sq_grad(self, xi):
        """Gradient of F^2/2; smooth through the origin (equals F*F_xi)."""
        raise NotImplementedError

    def sq_hess(self, xi):
        """Hessian of F^2/2 = F*D^2F + F_xi (x) F_xi; 0-homogeneous."""
        raise NotImplementedError

    # -- derived ---------------------------------------------------------

    def __call__(self, xi):
        return self.value(xi)

    def grad(self, xi):
        xi = _check_dim(xi, self.dim)
        _check_floor(xi)
        F = self.value(xi)
        return self.sq_grad(xi) / F[..., None]

    def hess(self, xi):
        xi = _check_dim(xi, self.dim)
        _check_floor(xi)
        F = self.value(xi)
        g = self.sq_grad(xi) / F[..., None]
        H = self.sq_hess(xi)
        return (H - g[..., :, None] * g[..., None, :]) / F[..., None, None]

    def polar(self, mode=None):
        return PolarNorm(self, mode=mode)

    def _closed_form_polar(self):
        return None


class EuclideanNorm(MinkowskiNorm):
    kind = "euclidean"

    def value(self, xi):
        xi = _check_dim(xi, self.dim)
        return np.sqrt(np.sum(xi * xi, axis=-1))

    def sq_grad(self, xi):
        return _check_dim(xi, self.dim).copy()

    def sq_hess(self, xi):
        xi = _check_dim(xi, self.dim)
        eye = np.eye(self.dim)
        return np.broadcast_to(eye, xi.shape + (self.dim,)).copy()

    def _closed_form_polar(self):
        return EuclideanNorm(self.dim)


class EllipsoidalNorm(MinkowskiNorm):
    """F(xi) = sqrt(xi^T A xi) for symmetric positive definite A."""

    kind = "ellipsoidal"

    def __init__(self, A):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        if not np.allclose(A, A.T, atol=1e-12):
            raise ValueError("A must be symmetric")
        w = np.linalg.eigvalsh(A)
        if w[0] <= 0:
            raise ValueError("A must be positive definite")
        super().__init__(A.shape[0])
        self.A = 0.5 * (A + A.T)

    def value(self, xi):
        xi = _check_dim(xi, self.dim)
        return np.sqrt(np.einsum("...i,ij,...j->...", xi, self.A, xi))

    def sq_grad(self, xi):
        xi = _check_dim(xi, self.dim)
        return np.einsum("ij,...j->...i", self.A, xi)

    def sq_hess(self, xi):
        xi = _check_dim(xi, self.dim)
        return np.broadcast_to(self.A, xi.shape + (self.dim,)).copy()

    def _closed_form_polar(self):
        return EllipsoidalNorm(np.linalg.inv(self.A))


class LqNorm(MinkowskiNorm):
    """Smoothed l^q norm.

    F(xi) = ((1-d)*(sum |xi_i|^q)^(2/q) + d*|xi|^2)^(1/2),  d = delta.

    Plain l^q with q != 2 loses uniform ellipticity on the coordinate
    axes (for q > 2 the Hessian of F^2/2 degenerates there); blending
    in a Euclidean fraction delta > 0 restores a positive lower bound.
    """

    kind = "lq"

    def __init__(self, q, dim=2, delta=0.05):
        if q <= 1:
            raise ValueError("q must be > 1")
        if not 0 <= delta < 1:
            raise ValueError("delta must be in [0, 1)")
        super().__init__(dim)
        self.q = float(q)
        self.delta = float(delta)

    def _plain(self, xi):
        # (sum |xi_i|^q)^(1/q), computed stably via the max trick
        a = np.abs(xi)
        m = np.max(a, axis=-1)
        safe = np.where(m > 0, m, 1.0)
        s = np.sum((a / safe[..., None]) ** self.q, axis=-1)
        return m * s ** (1.0 / self.q)

    def value(self, xi):
        xi = _check_dim(xi, self.dim)
        P = self._plain(xi)
        e2 = np.sum(xi * xi, axis=-1)
        return np.sqrt((1.0 - self.delta) * P * P + self.delta * e2)

    def sq_grad(self, xi):
        xi = _check_dim(xi, self.dim)
        q, d = self.q, self.delta
        P = self._plain(xi)
        Ps = np.where(P > 0, P, 1.0)[..., None]
        core = Ps ** (2.0 - q) * np.abs(xi) ** (q - 1.0) * np.sign(xi)
        core = np.where(P[..., None] > 0, core, 0.0)
        return (1.0 - d) * core + d * xi

    def sq_hess(self, xi):
        xi = _check_dim(xi, self.dim)
        q, d = self.q, self.delta
        n = self.dim
        P = self._plain(xi)
        Ps = np.where(P > 0, P, 1.0)
        a = np.abs(xi)
        if q < 2.0:
            # |xi_i|^(q-2) is unbounded on the axes for q < 2; clamp the
            # component magnitude so assembled Hessians stay finite.  The
            # energy and gradient are untouched by this.
            a = np.maximum(a, 1e-30 + 1e-9 * P[..., None])
        w = a ** (q - 1.0) * np.sign(xi)
        rank1 = (2.0 - q) * Ps[..., None, None] ** (2.0 - 2.0 * q) * (
            w[..., :, None] * w[..., None, :]
        )
        diag = (q - 1.0) * Ps[..., None] ** (2.0 - q) * a ** (q - 2.0)
        H = rank1 + diag[..., None] * np.eye(n)
        return (1.0 - d) * H + d * np.eye(n)


class CustomNorm(MinkowskiNorm):
    """User-supplied norm; the caller must provide value and gradient.

    hess_fn is optional and falls back to central differences of grad_fn.
    """

    kind = "custom"

    def __init__(self, dim, value_fn, grad_fn, hess_fn=None, fd_step=1e-6):
        super().__init__(dim)
        self._value_fn = value_fn
        self._grad_fn = grad_fn
        self._hess_fn = hess_fn
        self._fd_step = float(fd_step)

    def value(self, xi):
        xi = _check_dim(xi, self.dim)
        return np.asarray(self._value_fn(xi), dtype=float)

    def grad(self, xi):
        xi = _check_dim(xi, self.dim)
        _check_floor(xi)
        return np.asarray(self._grad_fn(xi), dtype=float)

    def hess(self, xi):
        xi = _check_dim(xi, self.dim)
        _check_floor(xi)
        if self._hess_fn is not None:
            return np.asarray(self._hess_fn(xi), dtype=float)
        h = self._fd_step * np.sqrt(np.sum(xi * xi, axis=-1, keepdims=True))
        cols = []
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = 1.0
            cols.append((self.grad(xi + h * e) - self.grad(xi - h * e)) / (2 * h))
        return np.stack(cols, axis=-1)

    def sq_grad(self, xi):
        xi = _check_dim(xi, self.dim)
        return self.value(xi)[..., None] * self.grad(xi)

    def sq_hess(self, xi):
        xi = _check_dim(xi, self.dim)
        F = self.value(xi)[..., None, None]
        g = self.grad(xi)
        return F * self.hess(xi) + g[..., :, None] * g[..., None, :]


# ---------------------------------------------------------------------------
# Polar norm


def _sample_directions(n, count):
    """~count quasi-uniform directions on the Euclidean unit sphere."""
    if n == 2:
        th = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)
        return np.stack([np.cos(th), np.sin(th)], axis=-1)
    if n == 3:
        # Fibonacci sphere
        k = np.arange(count) + 0.5
        phi = np.arccos(1.0 - 2.0 * k / count)
        th = np.pi * (1.0 + 5.0**0.5) * k
        return np.stack(
            [np.sin(phi) * np.cos(th), np.sin(phi) * np.sin(th), np.cos(phi)],
            axis=-1,
        )
    rng = np.random.default_rng(12345)  # fixed: sampling must be deterministic
    d = rng.standard_normal((count, n))
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


class PolarNorm:
    """Polar (dual) norm F°(x) = sup_{F(xi)=1} <xi, x>.

    mode "closed_form" is available for euclidean (self-polar) and
    ellipsoidal (A -> A^{-1}) norms.  mode "numeric_sup" maximizes over
    the F-unit sphere: coarse direction scan, projected gradient ascent,
    then Newton on the stationarity system
        x - lam * F_xi(xi) = 0,   F(xi) - 1 = 0.
    The maximizer xi* is the gradient of F° at x, so numeric mode gets
    polar_grad for free and satisfies the duality identities to solver
    tolerance rather than to sampling resolution.
    """

    N_SAMPLES_PER_DIM = 64 * 2  # 2n*64 direction samples
    N_ASCENT = 20

    def __init__(self, base, mode=None):
        self.base = base
        self.dim = base.dim
        closed = base._closed_form_polar()
        if mode is None:
            mode = "closed_form" if closed is not None else "numeric_sup"
        if mode == "closed_form":
            if closed is None:
                raise ValueError(f"no closed-form polar for kind {base.kind!r}")
            self._closed = closed
        elif mode == "numeric_sup":
            self._closed = None
        else:
            raise ValueError(f"unknown polar mode {mode!r}")
        self.mode = mode

    def value(self, x):
        x = _check_dim(x, self.dim)
        if self._closed is not None:
            return self._closed.value(x)
        val, _ = self._sup(x)
        return val

    def grad(self, x):
        x = _check_dim(x, self.dim)
        _check_floor(x)
        if self._closed is not None:
            return self._closed.grad(x)
        _, xi = self._sup(x)
        return xi

    def __call__(self, x):
        return self.value(x)

    # -- numeric sup ----------------------------------------------------

    def _sup(self, x):
        F = self.base
        n = self.dim
        batch = x.shape[:-1]
        xf = x.reshape(-1, n)
        mag = np.linalg.norm(xf, axis=-1)
        ok = mag > GRAD_FLOOR
        val = np.zeros(len(xf))
        arg = np.zeros_like(xf)
        if np.any(ok):
            v, a = self._sup_flat(xf[ok])
            val[ok] = v
            arg[ok] = a
        return val.reshape(batch), arg.reshape(batch + (n,))

    def _sup_flat(self, x):
        F = self.base
        D = _sample_directions(self.dim, self.N_SAMPLES_PER_DIM * self.dim)
        Xi = D / F.value(D)[:, None]  # F-unit sphere samples
        scores = x @ Xi.T
        best = np.argmax(scores, axis=1)
        xi = Xi[best]
        val = np.take_along_axis(scores, best[:, None], axis=1)[:, 0]

        # projected gradient ascent on {F(xi)=1}
        eta = np.full(len(x), 0.3)
        for _ in range(self.N_ASCENT):
            nrm = F.grad(xi)
            t = x - (np.sum(x * nrm, axis=-1) / np.sum(nrm * nrm, axis=-1))[
                :, None
            ] * nrm
            tn = np.linalg.norm(t, axis=-1)
            step = np.where(tn > 0, eta / np.maximum(tn, 1e-300), 0.0)
            cand = xi + step[:, None] * t
            cand /= F.value(cand)[:, None]
            cval = np.sum(cand * x, axis=-1)
            better = cval > val
            xi = np.where(better[:, None], cand, xi)
            val = np.where(better, cval, val)
            eta = np.where(better, eta, eta * 0.5)

        xi_pga, val_pga = xi.copy(), val.copy()

        # Newton polish on the stationarity system; accept a step per point
        # only when it reduces the residual, so nobody drifts to the
        # antipodal stationary point.
        scale = np.maximum(np.abs(val), 1.0)
        lam = val.copy()

        def _residual(xi_, lam_):
            r1 = x - lam_[:, None] * F.grad(xi_)
            r2 = F.value(xi_) - 1.0
            return np.linalg.norm(r1, axis=-1) + np.abs(r2) * scale

        res = _residual(xi, lam)
        for _ in range(40):
            if np.all(res <= 1e-13 * scale):
                break
            g = F.grad(xi)
            r1 = x - lam[:, None] * g
            r2 = F.value(xi) - 1.0
            H = F.hess(xi)
            J = np.zeros((len(x), self.dim + 1, self.dim + 1))
            J[:, : self.dim, : self.dim] = -lam[:, None, None] * H
            J[:, : self.dim, self.dim] = -g
            J[:, self.dim, : self.dim] = g
            rhs = np.concatenate([-r1, -r2[:, None]], axis=-1)
            try:
                dz = np.linalg.solve(J, rhs[..., None])[..., 0]
            except np.linalg.LinAlgError:
                break
            dxi = dz[:, : self.dim]
            # cap the step length; xi lives near the F-unit sphere
            dn = np.linalg.norm(dxi, axis=-1)
            cap = np.ones_like(dn)
            np.divide(1.0, dn, out=cap, where=dn > 1.0)
            moved = res <= 1e-13 * scale  # converged points stay put
            alpha = cap
            for _bt in range(6):
                todo = ~moved
                if not np.any(todo):
                    break
                xi_try = xi + (alpha * todo)[:, None] * dxi
                lam_try = lam + alpha * todo * dz[:, self.dim]
                fv = F.value(xi_try)
                valid = np.isfinite(fv) & (fv > 0)
                res_try = np.where(valid, _residual(xi_try, lam_try), np.inf)
                accept = todo & (res_try < res)
                xi = np.where(accept[:, None], xi_try, xi)
                lam = np.where(accept, lam_try, lam)
                res = np.where(accept, res_try, res)
                moved |= accept
                alpha = np.where(moved, alpha, alpha * 0.25)
            if not np.any(moved):
                break
        xi = xi / F.value(xi)[:, None]
        val = np.sum(xi * x, axis=-1)
        # keep whichever of ascent/Newton has the smaller stationarity residual
        worse = _residual(xi, val) > _residual(xi_pga, val_pga)
        xi[worse] = xi_pga[worse]
        val[worse] = val_pga[worse]
        return val, xi


def ellipticity_constant(norm, samples=512, seed=0):
    """Smallest eigenvalue of D^2(F^2/2) over random unit directions.

    Diagnostic only; a positive value witnesses uniform ellipticity on
    the sample.  No pass/fail threshold is attached.
    """
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((samples, norm.dim))
    xi /= np.linalg.norm(xi, axis=-1, keepdims=True)
    H = norm.sq_hess(xi)
    w = np.linalg.eigvalsh(H)
    return float(np.min(w))


def make_norm(kind, dim=2, **params):
    """Factory used by config parsing: kind + parameters -> MinkowskiNorm."""
    if kind == "euclidean":
        return EuclideanNorm(dim)
    if kind == "ellipsoidal":
        if "A" not in params:
            raise ValueError("ellipsoidal norm requires matrix A")
        return EllipsoidalNorm(np.asarray(params["A"], dtype=float))
    if kind == "lq":
        return LqNorm(
            q=params.get("q", 4.0), dim=dim, delta=params.get("delta", 0.05)
        )
    raise ValueError(f"unknown norm kind {kind!r}")
