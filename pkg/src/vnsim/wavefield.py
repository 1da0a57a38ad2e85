"""Scalar wave solver: FDTD leapfrog on an expanding cube plus pointwise
light-cone integral oracles (sphere means and retarded potentials).

The grid is node-centered with a node at the origin; coordinates are integer
multiples of the spacing h, so the domain can be re-embedded into a larger
cube exactly (copy, zero fill).  Boundary values stay 0 as long as the cube
tracks R + t + pad, which finite propagation speed guarantees.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .characteristics import FieldView
from .errors import ConfigError, DomainTooSmallError, OutOfHistoryError
from .profiles import InitialData

__all__ = [
    "FieldGrid", "make_field_grid", "fdtd_step", "field_derivatives",
    "discrete_energy", "GridFieldHistory", "SourceHistory", "CallableSource",
    "unit_sphere_quadrature", "kirchhoff_homogeneous", "data_term_dt_phi",
    "retarded_potential",
]


def _cfl_ok(dt: float, h: float) -> bool:
    return dt <= h / np.sqrt(3.0) + 1e-12


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------

@dataclass
class FieldGrid:
    """Three consecutive time levels of phi on a cube, plus the source level.

    Levels phi_m, phi_0, phi_p live at times t-dt, t, t+dt where t is the
    diagnostic center time.  Node i has coordinate (i - n_half)*h.
    """

    h: float
    dt: float
    n_half: int
    t: float
    phi_m: np.ndarray
    phi_0: np.ndarray
    phi_p: np.ndarray
    mu: np.ndarray

    @property
    def n_nodes(self) -> int:
        return 2 * self.n_half + 1

    @property
    def x_max(self) -> float:
        return self.n_half * self.h

    def node_axis(self) -> np.ndarray:
        return (np.arange(self.n_nodes) - self.n_half) * self.h

    def ensure_extent(self, x_needed: float, grow_chunk: float = 1.0):
        """Re-embed into a larger cube if x_needed exceeds the current extent."""
        if x_needed <= self.x_max:
            return
        new_half = int(np.ceil((x_needed + grow_chunk) / self.h))
        off = new_half - self.n_half
        n_new = 2 * new_half + 1
        for name in ("phi_m", "phi_0", "phi_p", "mu"):
            old = getattr(self, name)
            new = np.zeros((n_new, n_new, n_new))
            new[off:off + old.shape[0], off:off + old.shape[1],
                off:off + old.shape[2]] = old
            setattr(self, name, new)
        self.n_half = new_half


def _sample_on_nodes(fn, axis: np.ndarray) -> np.ndarray:
    xx, yy, zz = np.meshgrid(axis, axis, axis, indexing="ij")
    pts = np.stack([xx, yy, zz], axis=-1)
    return fn(pts)


def make_field_grid(data: InitialData, h: float, dt: float, pad: float = 2.0,
                    mu0: np.ndarray | None = None,
                    check_cfl: bool = True) -> FieldGrid:
    """Grid at t = 0 with phi(-dt), phi(0), phi(dt) from a 2nd-order Taylor start.

    phi(+-dt) = phi0 +- dt*phi1 + dt^2/2 * (lap phi0 - mu(0)).
    `check_cfl=False` is for runs that never advance the field (the grid then
    only carries deposited source levels).
    """
    if check_cfl and not _cfl_ok(dt, h):
        raise ConfigError(f"CFL violated: dt={dt} > h/sqrt(3)={h / np.sqrt(3):.6g}")
    n_half = int(np.ceil((data.support_radius_R + pad) / h))
    grid = FieldGrid(h=h, dt=dt, n_half=n_half, t=0.0,
                     phi_m=np.zeros(1), phi_0=np.zeros(1), phi_p=np.zeros(1),
                     mu=np.zeros(1))
    axis = grid.node_axis()
    phi0 = _sample_on_nodes(data.phi0_in.value, axis)
    phi1 = _sample_on_nodes(data.phi1_in.value, axis)
    lap0 = _sample_on_nodes(data.phi0_in.laplacian, axis)
    if mu0 is None:
        mu0 = np.zeros_like(phi0)
    acc = 0.5 * dt**2 * (lap0 - mu0)
    grid.phi_0 = phi0
    grid.phi_m = phi0 - dt * phi1 + acc
    grid.phi_p = phi0 + dt * phi1 + acc
    grid.mu = mu0
    return grid


def _laplacian(phi: np.ndarray, h: float) -> np.ndarray:
    lap = np.zeros_like(phi)
    lap[1:-1, 1:-1, 1:-1] = (
        phi[2:, 1:-1, 1:-1] + phi[:-2, 1:-1, 1:-1]
        + phi[1:-1, 2:, 1:-1] + phi[1:-1, :-2, 1:-1]
        + phi[1:-1, 1:-1, 2:] + phi[1:-1, 1:-1, :-2]
        - 6.0 * phi[1:-1, 1:-1, 1:-1]
    ) / h**2
    return lap


def fdtd_step(grid: FieldGrid, mu: np.ndarray,
              sponge_radius: float | None = None) -> FieldGrid:
    """Advance the center time by dt with the 7-point leapfrog update.

    `mu` is the source at the grid's upper level time t+dt.  With
    `sponge_radius` set, the region beyond it is gently damped each step;
    the exact solution vanishes beyond |x| = R + t, so the sponge only
    absorbs the nonphysical precursor that the stencil radiates at speed
    h/dt > 1.  Mutates and returns `grid`.
    """
    if not _cfl_ok(grid.dt, grid.h):
        raise ConfigError("CFL violated")
    if mu.shape != grid.phi_p.shape:
        raise DomainTooSmallError("source level shape does not match grid")
    new = 2.0 * grid.phi_p - grid.phi_0 + grid.dt**2 * (
        _laplacian(grid.phi_p, grid.h) - mu
    )
    if sponge_radius is not None:
        ax = grid.node_axis()
        xx, yy, zz = np.meshgrid(ax, ax, ax, indexing="ij", sparse=True)
        r = np.sqrt(xx**2 + yy**2 + zz**2)
        sigma = 0.25 * np.clip((r - sponge_radius) / 3.0, 0.0, 1.0) ** 2
        new *= 1.0 - sigma
    # The discrete stencil leaks an exponentially small tail one cell per
    # step ahead of the physical cone; only a significant boundary value
    # means the domain is genuinely too small.
    edge = max(np.abs(new[:2]).max(initial=0), np.abs(new[-2:]).max(initial=0),
               np.abs(new[:, :2]).max(initial=0), np.abs(new[:, -2:]).max(initial=0),
               np.abs(new[:, :, :2]).max(initial=0), np.abs(new[:, :, -2:]).max(initial=0))
    scale = float(np.abs(new).max())
    if scale > 0.0 and edge > 1e-4 * scale:
        raise DomainTooSmallError(
            f"field reached within 2 cells of the boundary (t={grid.t + grid.dt:.3f})"
        )
    grid.phi_m = grid.phi_0
    grid.phi_0 = grid.phi_p
    grid.phi_p = new
    grid.mu = mu
    grid.t += grid.dt
    return grid


def discrete_energy(grid: FieldGrid) -> float:
    """Leapfrog-conserved discrete energy for the source-free equation."""
    h, dt = grid.h, grid.dt
    v = (grid.phi_p - grid.phi_0) / dt
    e = 0.5 * np.sum(v * v) - 0.5 * np.sum(grid.phi_p * _laplacian(grid.phi_0, h))
    return float(e * h**3)


# ---------------------------------------------------------------------------
# Derivatives at probe points
# ---------------------------------------------------------------------------

def _gather(arr: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return arr[idx[..., 0], idx[..., 1], idx[..., 2]]


def _corner_indices(grid_h: float, n_half: int, n_nodes: int, x: np.ndarray,
                    margin: int):
    u = x / grid_h + n_half
    i0 = np.floor(u).astype(int)
    frac = u - i0
    if np.any(i0 < margin) or np.any(i0 + 1 > n_nodes - 1 - margin):
        raise ValueError("probe point too close to (or outside) the grid boundary")
    offs = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)])
    corners = i0[..., None, :] + offs  # (..., 8, 3)
    w = np.ones(x.shape[:-1] + (8,))
    for c, off in enumerate(offs):
        for ax in range(3):
            w[..., c] *= frac[..., ax] if off[ax] else 1.0 - frac[..., ax]
    return corners, w


def field_derivatives(grid: FieldGrid, x) -> tuple:
    """(dt_phi, grad, dt2_phi, dt_grad, hess) at points x, 2nd-order centered.

    Trilinear interpolation of node-stencil values; probes must be at least
    two cells inside the boundary.
    """
    x = np.asarray(x, dtype=float)
    corners, w = _corner_indices(grid.h, grid.n_half, grid.n_nodes, x, margin=2)
    h, dt = grid.h, grid.dt
    pm, p0, pp = grid.phi_m, grid.phi_0, grid.phi_p
    e = np.eye(3, dtype=int)

    def interp(node_vals):
        return np.sum(w * node_vals, axis=-1)

    dt_phi = interp((_gather(pp, corners) - _gather(pm, corners)) / (2 * dt))
    dt2 = interp((_gather(pp, corners) - 2 * _gather(p0, corners)
                  + _gather(pm, corners)) / dt**2)
    grad = np.zeros(x.shape)
    dt_grad = np.zeros(x.shape)
    hess = np.zeros(x.shape + (3,))
    for k in range(3):
        cp, cm = corners + e[k], corners - e[k]
        grad[..., k] = interp((_gather(p0, cp) - _gather(p0, cm)) / (2 * h))
        dt_grad[..., k] = interp(
            ((_gather(pp, cp) - _gather(pp, cm))
             - (_gather(pm, cp) - _gather(pm, cm))) / (4 * h * dt))
        hess[..., k, k] = interp(
            (_gather(p0, cp) - 2 * _gather(p0, corners) + _gather(p0, cm)) / h**2)
        for j in range(k + 1, 3):
            val = interp((_gather(p0, corners + e[k] + e[j])
                          - _gather(p0, corners + e[k] - e[j])
                          - _gather(p0, corners - e[k] + e[j])
                          + _gather(p0, corners - e[k] - e[j])) / (4 * h**2))
            hess[..., k, j] = val
            hess[..., j, k] = val
    return dt_phi, grad, dt2, dt_grad, hess


# ---------------------------------------------------------------------------
# Stored level history: field view for particle pushes and backward traces
# ---------------------------------------------------------------------------

def _sample_level(phi: np.ndarray, h: float, n_half: int, pts: np.ndarray,
                  stencil=None) -> np.ndarray:
    """Trilinear sample of a level (or a stencil of it) with zero outside.

    `stencil` is a list of (offset_vector, coefficient) applied at the nodes
    before interpolation; None means the plain value.
    """
    n = phi.shape[0]
    u = pts / h + n_half
    i0 = np.floor(u).astype(int)
    frac = u - i0
    # clip: contributions involving out-of-range nodes are zero
    pad = 2
    valid = np.all((i0 >= pad - 1) & (i0 <= n - pad - 1), axis=-1)
    i0c = np.clip(i0, pad, n - 1 - pad)
    offs = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)])
    out = np.zeros(pts.shape[:-1])
    for c, off in enumerate(offs):
        wc = np.ones(pts.shape[:-1])
        for ax in range(3):
            wc *= frac[..., ax] if off[ax] else 1.0 - frac[..., ax]
        idx = i0c + off
        if stencil is None:
            vals = _gather(phi, idx)
        else:
            vals = sum(coef * _gather(phi, idx + np.asarray(o)) for o, coef in stencil)
        out += wc * vals
    return np.where(valid, out, 0.0)


class GridFieldHistory(FieldView):
    """FieldView backed by stored phi levels; linear in t, trilinear in x.

    dt phi is the forward difference of the bracketing levels.  A ring window
    (`max_levels`) bounds memory when full history is not needed.
    """

    def __init__(self, max_levels: int | None = None, dtype=np.float64):
        self._times: list[float] = []
        self._levels: list[tuple[np.ndarray, float, int]] = []  # (phi, h, n_half)
        self.max_levels = max_levels
        self.dtype = dtype

    def append(self, t: float, phi: np.ndarray, h: float, n_half: int):
        self._times.append(t)
        self._levels.append((np.asarray(phi, dtype=self.dtype), h, n_half))
        if self.max_levels is not None and len(self._times) > self.max_levels:
            self._times.pop(0)
            self._levels.pop(0)

    @property
    def t_min(self) -> float:
        return self._times[0]

    @property
    def t_max(self) -> float:
        return self._times[-1]

    def _bracket(self, t: float):
        if not self._times:
            raise OutOfHistoryError("no field levels stored")
        tol = 1e-9
        if t < self._times[0] - tol or t > self._times[-1] + tol:
            raise OutOfHistoryError(
                f"t={t} outside stored history [{self._times[0]}, {self._times[-1]}]")
        t = min(max(t, self._times[0]), self._times[-1])
        k = int(np.searchsorted(self._times, t, side="right")) - 1
        k = min(max(k, 0), len(self._times) - 2) if len(self._times) > 1 else 0
        if len(self._times) == 1:
            return k, k, 0.0
        t0, t1 = self._times[k], self._times[k + 1]
        return k, k + 1, (t - t0) / (t1 - t0)

    def _lerp(self, t: float, pts: np.ndarray, stencil_fn) -> np.ndarray:
        k0, k1, a = self._bracket(t)
        phi0, h0, nh0 = self._levels[k0]
        v0 = stencil_fn(phi0, h0, nh0, pts)
        if k1 == k0 or a == 0.0:
            return v0
        phi1, h1, nh1 = self._levels[k1]
        return (1.0 - a) * v0 + a * stencil_fn(phi1, h1, nh1, pts)

    def phi(self, t, x):
        x = np.asarray(x, dtype=float)
        return self._lerp(t, x, lambda f, h, nh, p: _sample_level(f, h, nh, p))

    def first_derivs(self, t, x):
        x = np.asarray(x, dtype=float)
        k0, k1, _ = self._bracket(t)
        phi0, h0, nh0 = self._levels[k0]
        if k1 == k0:
            dt_phi = np.zeros(x.shape[:-1])
        else:
            phi1, h1, nh1 = self._levels[k1]
            dtv = self._times[k1] - self._times[k0]
            dt_phi = (_sample_level(phi1, h1, nh1, x)
                      - _sample_level(phi0, h0, nh0, x)) / dtv
        grad = np.zeros(x.shape)
        e = np.eye(3, dtype=int)
        for k in range(3):
            stencil = [(e[k], 0.5), (-e[k], -0.5)]
            grad[..., k] = self._lerp(
                t, x, lambda f, h, nh, p, s=stencil: _sample_level(f, h, nh, p, s) / h)
        return dt_phi, grad

    def second_derivs(self, t, x):
        x = np.asarray(x, dtype=float)
        k0, k1, _ = self._bracket(t)
        e = np.eye(3, dtype=int)

        def grad_of(level, pts):
            phi, h, nh = level
            g = np.zeros(pts.shape)
            for k in range(3):
                g[..., k] = _sample_level(phi, h, nh, pts,
                                          [(e[k], 0.5), (-e[k], -0.5)]) / h
            return g

        if k1 == k0:
            dt_grad = np.zeros(x.shape)
        else:
            dtv = self._times[k1] - self._times[k0]
            dt_grad = (grad_of(self._levels[k1], x) - grad_of(self._levels[k0], x)) / dtv
        hess = np.zeros(x.shape + (3,))
        for k in range(3):
            stencil = [(e[k], 1.0), (np.zeros(3, int), -2.0), (-e[k], 1.0)]
            hess[..., k, k] = self._lerp(
                t, x, lambda f, h, nh, p, s=stencil: _sample_level(f, h, nh, p, s) / h**2)
            for j in range(k + 1, 3):
                stencil = [(e[k] + e[j], 0.25), (e[k] - e[j], -0.25),
                           (-e[k] + e[j], -0.25), (-e[k] - e[j], 0.25)]
                val = self._lerp(
                    t, x, lambda f, h, nh, p, s=stencil: _sample_level(f, h, nh, p, s) / h**2)
                hess[..., k, j] = val
                hess[..., j, k] = val
        return dt_grad, hess


# ---------------------------------------------------------------------------
# Source histories for the retarded integral
# ---------------------------------------------------------------------------

class SourceHistory:
    """Ring of deposited source levels; linear in time, trilinear in space."""

    def __init__(self, dtype=np.float64):
        self._times: list[float] = []
        self._levels: list[tuple[np.ndarray, float, int]] = []
        self.dtype = dtype

    def append(self, t: float, mu: np.ndarray, h: float, n_half: int):
        self._times.append(t)
        self._levels.append((np.asarray(mu, dtype=self.dtype), h, n_half))

    def covers(self, t: float) -> bool:
        return bool(self._times) and self._times[0] - 1e-9 <= t <= self._times[-1] + 1e-9

    def density(self, s: float, y: np.ndarray) -> np.ndarray:
        if not self.covers(s):
            raise OutOfHistoryError(
                f"source history does not cover retarded time {s}")
        s = min(max(s, self._times[0]), self._times[-1])
        k = int(np.searchsorted(self._times, s, side="right")) - 1
        k = min(max(k, 0), max(len(self._times) - 2, 0))
        mu0, h0, nh0 = self._levels[k]
        v0 = _sample_level(mu0, h0, nh0, y)
        if len(self._times) == 1 or k + 1 >= len(self._times):
            return v0
        t0, t1 = self._times[k], self._times[k + 1]
        a = (s - t0) / (t1 - t0)
        mu1, h1, nh1 = self._levels[k + 1]
        return (1.0 - a) * v0 + a * _sample_level(mu1, h1, nh1, y)


class CallableSource:
    """Source given by a closed-form density(s, y); used by oracle tests."""

    def __init__(self, fn, t_range=(0.0, np.inf)):
        self.fn = fn
        self.t_range = t_range

    def covers(self, t: float) -> bool:
        return self.t_range[0] - 1e-9 <= t <= self.t_range[1] + 1e-9

    def density(self, s: float, y: np.ndarray) -> np.ndarray:
        if not self.covers(s):
            raise OutOfHistoryError(f"source not defined at time {s}")
        return np.asarray(self.fn(s, y))


# ---------------------------------------------------------------------------
# Light-cone integrals
# ---------------------------------------------------------------------------

def unit_sphere_quadrature(n_theta: int = 24, n_phi: int = 48):
    """Gauss-Legendre x trapezoid product rule; weights sum to 4*pi."""
    mu, wmu = np.polynomial.legendre.leggauss(n_theta)
    ph = 2.0 * np.pi * np.arange(n_phi) / n_phi
    st = np.sqrt(1.0 - mu**2)
    dirs = np.stack([
        np.outer(st, np.cos(ph)),
        np.outer(st, np.sin(ph)),
        np.outer(mu, np.ones(n_phi)),
    ], axis=-1).reshape(-1, 3)
    w = np.outer(wmu, np.full(n_phi, 2.0 * np.pi / n_phi)).reshape(-1)
    return dirs, w


def kirchhoff_homogeneous(t: float, x, data: InitialData,
                          quad=(24, 48), t_small: float = 1e-9) -> float:
    """Homogeneous wave solution from (phi0_in, phi1_in) by sphere means.

    phi0(t,x) = (1/4 pi t^2) oint (phi0_in - grad phi0_in . (x-y)) dS
              + (1/4 pi t)   oint phi1_in dS     over |x-y| = t.
    """
    x = np.asarray(x, dtype=float)
    if t < 0:
        raise ValueError("t must be >= 0")
    if t < t_small:
        return float(data.phi0_in.value(x) + t * data.phi1_in.value(x)
                     + 0.5 * t**2 * data.phi0_in.laplacian(x))
    dirs, w = unit_sphere_quadrature(*quad)
    y = x + t * dirs
    # x - y = -t n  =>  -grad.(x-y) = +t n.grad
    vals0 = data.phi0_in.value(y) + t * np.sum(dirs * data.phi0_in.gradient(y), axis=-1)
    vals1 = data.phi1_in.value(y)
    return float((np.sum(w * vals0) + t * np.sum(w * vals1)) / (4.0 * np.pi))


def _momentum_integral(data: InitialData, y: np.ndarray, omega: np.ndarray,
                       n_p: int) -> float:
    """int f_in(y, p) / ((1 + omega.phat) sqrt(1+p^2)) dp by midpoint rule."""
    c = data.f_in.center
    cx, cp = c[:3], c[3:]
    r2 = data.f_in.radius**2 - float(np.sum((y - cx) ** 2))
    if r2 <= 0.0:
        return 0.0
    r = np.sqrt(r2)
    centers = (np.arange(n_p) + 0.5) * 2 * r / n_p - r
    pg = np.stack(np.meshgrid(cp[0] + centers, cp[1] + centers, cp[2] + centers,
                              indexing="ij"), axis=-1).reshape(-1, 3)
    vol = (2 * r / n_p) ** 3
    f = data.f_value(np.broadcast_to(y, pg.shape), pg)
    gamma = np.sqrt(1.0 + np.sum(pg * pg, axis=-1))
    phat = pg / gamma[:, None]
    kern = 1.0 / ((1.0 + phat @ omega) * gamma)
    return float(np.sum(f * kern) * vol)


def data_term_dt_phi(t: float, x, data: InitialData, quad=(24, 48),
                     n_p: int = 12) -> float:
    """Data part of dt phi: the three sphere integrals over |x-y| = t.

    The kinetic term carries the kernel 1/(1 + omega.phat) with
    omega = -(x-y)/|x-y|; the field terms are the t-derivative of the
    homogeneous sphere-mean solution.
    """
    x = np.asarray(x, dtype=float)
    if t <= 0:
        raise ValueError("t must be positive")
    dirs, w = unit_sphere_quadrature(*quad)
    y = x + t * dirs  # omega = -(x-y)/t = dirs
    xy = -t * dirs    # x - y

    # kinetic data term: -(1/t) oint [int f_in/( (1+omega.phat) gamma) dp] dS_y
    term1 = 0.0
    rho = np.linalg.norm(y - data.f_in.center[:3], axis=-1)
    hit = np.nonzero(rho < data.f_in.radius)[0]
    for i in hit:
        term1 += w[i] * _momentum_integral(data, y[i], dirs[i], n_p)
    term1 *= -(1.0 / t) * t**2  # dS_y = t^2 dOmega

    # field data terms
    vals2 = data.phi1_in.value(y) - np.sum(data.phi1_in.gradient(y) * xy, axis=-1)
    term2 = float(np.sum(w * vals2) * t**2 / (4.0 * np.pi * t**2))
    g0 = data.phi0_in.gradient(y)
    h0 = data.phi0_in.hessian(y)
    vals3 = (2.0 * np.sum(g0 * xy, axis=-1)
             - np.einsum("qi,qij,qj->q", xy, h0, xy))
    term3 = float(-np.sum(w * vals3) * t**2 / (4.0 * np.pi * t**3))
    return term1 + term2 + term3


def retarded_potential(t: float, x, hist, shell_width: float,
                       quad=(16, 32)) -> float:
    """-(1/4 pi) int_{|x-y|<=t} mu(t-|x-y|, y)/|x-y| dy in retarded shells.

    Midpoint rule in radius with shells of the given width, fixed-order
    sphere quadrature per shell.  `hist` must cover retarded times in [0, t].
    """
    x = np.asarray(x, dtype=float)
    if t <= 0:
        return 0.0
    if not hist.covers(0.0) or not hist.covers(t):
        raise OutOfHistoryError("source history does not cover [0, t]")
    dirs, w = unit_sphere_quadrature(*quad)
    n_full = int(np.floor(t / shell_width))
    total = 0.0
    for j in range(n_full + 1):
        if j < n_full:
            r, dr = (j + 0.5) * shell_width, shell_width
        else:
            dr = t - n_full * shell_width
            if dr <= 1e-12:
                break
            r = n_full * shell_width + dr / 2
        mu_vals = hist.density(t - r, x + r * dirs)
        total += dr * r * np.sum(w * mu_vals)
    return float(-total / (4.0 * np.pi))
