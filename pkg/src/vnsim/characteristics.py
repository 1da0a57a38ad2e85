"""Characteristic ODEs of the kinetic equation and their variational flow.

Trajectories obey
    dx/ds = phat,    dp/ds = -(S phi) p - (1+p^2)^(-1/2) grad phi,
with phat = p/sqrt(1+p^2) and S phi = dt phi + phat . grad phi.  The
integrator is classical RK4 on a uniform step; the flow Jacobian is obtained
by integrating the variational equations alongside the trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OutOfHistoryError

__all__ = [
    "FieldView", "ZeroField", "AnalyticField", "PhaseState",
    "rel_velocity", "force", "push", "backward_trace", "flow_jacobian",
]


# ---------------------------------------------------------------------------
# Field access
# ---------------------------------------------------------------------------

class FieldView:
    """Evaluator of (phi, dt phi, grad phi) at arbitrary (t, x).

    Outside the represented spatial region fields evaluate to 0; outside the
    stored time range evaluation raises OutOfHistoryError.
    """

    fd_step = 1e-4  # spatial step for default second-derivative differences

    def phi(self, t, x):
        raise NotImplementedError

    def first_derivs(self, t, x):
        """Return (dt_phi, grad_phi) with shapes (...,), (..., 3)."""
        raise NotImplementedError

    def second_derivs(self, t, x):
        """Return (dt_grad_phi, hess_phi) with shapes (..., 3), (..., 3, 3).

        Default: centered differences of first_derivs in x.
        """
        x = np.asarray(x, dtype=float)
        eps = self.fd_step
        dt_grad = np.zeros(x.shape)
        hess = np.zeros(x.shape + (3,))
        for j in range(3):
            dx = np.zeros(3)
            dx[j] = eps
            dtp, gp = self.first_derivs(t, x + dx)
            dtm, gm = self.first_derivs(t, x - dx)
            dt_grad[..., j] = (dtp - dtm) / (2 * eps)
            hess[..., j, :] = (gp - gm) / (2 * eps)
        # symmetrize: mixed partials commute for the true field
        hess = 0.5 * (hess + np.swapaxes(hess, -1, -2))
        return dt_grad, hess


class ZeroField(FieldView):
    """phi identically 0 (free transport)."""

    def phi(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    def first_derivs(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1]), np.zeros(x.shape)

    def second_derivs(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape), np.zeros(x.shape + (3,))


class AnalyticField(FieldView):
    """Field built from callables; used for manufactured-solution tests."""

    def __init__(self, phi_fn, dt_phi_fn, grad_fn, dt_grad_fn=None, hess_fn=None,
                 t_range=None):
        self._phi = phi_fn
        self._dt = dt_phi_fn
        self._grad = grad_fn
        self._dt_grad = dt_grad_fn
        self._hess = hess_fn
        self.t_range = t_range

    def _check_t(self, t):
        if self.t_range is not None:
            lo, hi = self.t_range
            if t < lo - 1e-12 or t > hi + 1e-12:
                raise OutOfHistoryError(f"t={t} outside covered range [{lo}, {hi}]")

    def phi(self, t, x):
        self._check_t(t)
        return np.asarray(self._phi(t, np.asarray(x, dtype=float)))

    def first_derivs(self, t, x):
        self._check_t(t)
        x = np.asarray(x, dtype=float)
        return np.asarray(self._dt(t, x)), np.asarray(self._grad(t, x))

    def second_derivs(self, t, x):
        if self._dt_grad is None or self._hess is None:
            return super().second_derivs(t, x)
        self._check_t(t)
        x = np.asarray(x, dtype=float)
        return np.asarray(self._dt_grad(t, x)), np.asarray(self._hess(t, x))


# ---------------------------------------------------------------------------
# Phase-space state and right-hand sides
# ---------------------------------------------------------------------------

@dataclass
class PhaseState:
    """Batched phase-space state: x, p of shape (..., 3) at common time t."""

    x: np.ndarray
    p: np.ndarray
    t: float


def rel_velocity(p) -> np.ndarray:
    """Relativistic velocity p/sqrt(1+|p|^2); magnitude strictly below 1."""
    p = np.asarray(p, dtype=float)
    gamma = np.sqrt(1.0 + np.sum(p * p, axis=-1, keepdims=True))
    return p / gamma


def _force_arrays(t, x, p, field: FieldView):
    gamma2 = 1.0 + np.sum(p * p, axis=-1)
    gamma = np.sqrt(gamma2)
    phat = p / gamma[..., None]
    dt_phi, grad = field.first_derivs(t, x)
    s_phi = dt_phi + np.sum(phat * grad, axis=-1)
    return -s_phi[..., None] * p - grad / gamma[..., None]


def force(state: PhaseState, field: FieldView) -> np.ndarray:
    """Momentum rate -(S phi) p - (1+p^2)^(-1/2) grad phi."""
    x = np.asarray(state.x, dtype=float)
    p = np.asarray(state.p, dtype=float)
    return _force_arrays(state.t, x, p, field)


def _rhs(t, x, p, field):
    return rel_velocity(p), _force_arrays(t, x, p, field)


def push(state: PhaseState, dt: float, field: FieldView) -> PhaseState:
    """One RK4 step of the characteristic system (dt may be negative)."""
    if dt == 0.0:
        raise ValueError("dt must be nonzero")
    x = np.asarray(state.x, dtype=float)
    p = np.asarray(state.p, dtype=float)
    t = state.t
    k1x, k1p = _rhs(t, x, p, field)
    k2x, k2p = _rhs(t + dt / 2, x + dt / 2 * k1x, p + dt / 2 * k1p, field)
    k3x, k3p = _rhs(t + dt / 2, x + dt / 2 * k2x, p + dt / 2 * k2p, field)
    k4x, k4p = _rhs(t + dt, x + dt * k3x, p + dt * k3p, field)
    xn = x + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
    pn = p + dt / 6 * (k1p + 2 * k2p + 2 * k3p + k4p)
    return PhaseState(x=xn, p=pn, t=t + dt)


def _backward_steps(t: float, dt: float):
    if dt <= 0:
        raise ValueError("dt must be positive")
    n_full = int(np.floor(t / dt + 1e-12))
    rem = t - n_full * dt
    steps = [-dt] * n_full
    if rem > 1e-12 * max(1.0, t):
        steps.append(-rem)
    return steps


def backward_trace(t: float, x, p, field: FieldView, dt: float):
    """Trace the characteristic through (t, x, p) back to s = 0.

    Returns (X(0), P(0)); the inputs may be batched with last axis 3.
    """
    state = PhaseState(x=np.asarray(x, dtype=float),
                       p=np.asarray(p, dtype=float), t=t)
    for step in _backward_steps(t, dt):
        state = push(state, step, field)
    return state.x, state.p


# ---------------------------------------------------------------------------
# Variational (Jacobian) equations
# ---------------------------------------------------------------------------

def _flow_matrix(t, x, p, field: FieldView):
    """6x6 derivative of the characteristic RHS w.r.t. (x, p)."""
    gamma2 = 1.0 + np.sum(p * p, axis=-1)
    gamma = np.sqrt(gamma2)
    phat = p / gamma[..., None]
    dt_phi, grad = field.first_derivs(t, x)
    dt_grad, hess = field.second_derivs(t, x)
    s_phi = dt_phi + np.sum(phat * grad, axis=-1)

    eye = np.broadcast_to(np.eye(3), x.shape + (3,))
    # d phat / d p = (I - phat phat^T)/gamma
    dphat_dp = (eye - phat[..., :, None] * phat[..., None, :]) / gamma[..., None, None]
    # d(S phi)/dp_j = grad . dphat/dp_j
    ds_dp = np.einsum("...k,...kj->...j", grad, dphat_dp)
    # dF_i/dp_j = -delta_ij S phi - p_i ds_dp_j + grad_i p_j / gamma^3
    df_dp = (
        -s_phi[..., None, None] * eye
        - p[..., :, None] * ds_dp[..., None, :]
        + grad[..., :, None] * p[..., None, :] / (gamma2 * gamma)[..., None, None]
    )
    # dF_i/dx_j = -p_i (dt_grad_j + phat . hess[:,j]) - hess_ij / gamma
    ds_dx = dt_grad + np.einsum("...k,...kj->...j", phat, hess)
    df_dx = (
        -p[..., :, None] * ds_dx[..., None, :]
        - hess / gamma[..., None, None]
    )
    mat = np.zeros(x.shape[:-1] + (6, 6))
    mat[..., 0:3, 3:6] = dphat_dp
    mat[..., 3:6, 0:3] = df_dx
    mat[..., 3:6, 3:6] = df_dp
    return mat


def flow_jacobian(t: float, x, p, field: FieldView, dt: float) -> np.ndarray:
    """Derivative of (X(0), P(0)) with respect to the data (x, p) at time t.

    Integrates the variational equations dJ/ds = M(s) J backward along the
    characteristic with the same RK4 step as the trajectory itself.
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    jac = np.broadcast_to(np.eye(6), x.shape[:-1] + (6, 6)).copy()
    s = t

    def rhs(time, xx, pp, jj):
        dx, dp = _rhs(time, xx, pp, field)
        dj = _flow_matrix(time, xx, pp, field) @ jj
        return dx, dp, dj

    for step in _backward_steps(t, dt):
        k1 = rhs(s, x, p, jac)
        k2 = rhs(s + step / 2, x + step / 2 * k1[0], p + step / 2 * k1[1],
                 jac + step / 2 * k1[2])
        k3 = rhs(s + step / 2, x + step / 2 * k2[0], p + step / 2 * k2[1],
                 jac + step / 2 * k2[2])
        k4 = rhs(s + step, x + step * k3[0], p + step * k3[1], jac + step * k3[2])
        x = x + step / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        p = p + step / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        jac = jac + step / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        s += step
    return jac
