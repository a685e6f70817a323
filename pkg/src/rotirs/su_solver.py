"""Single-user alternating optimization of ``F = ||h_B + A v||^2``.

MRC is optimal for one user, so only the channel gain matters.  Phases get
closed-form coordinate updates; boresight angles and the panel orientation
get projected gradient steps with backtracking on the true objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelModel
from .geometry import boresight_jacobian, boresight_vector, project_angles, visibility, \
    visibility_gradient
from .manifold import random_phases
from .mu_solver import Controls, project_box_halfspace


class DegenerateChannel(ValueError):
    """The channel vector is identically zero."""


def mrc_combiner(h):
    h = np.asarray(h, dtype=complex)
    norm = np.linalg.norm(h)
    if norm == 0:
        raise DegenerateChannel("maximum-ratio combining needs a nonzero channel")
    return h / norm


def snr(w, h, power, noise):
    return float(power * abs(np.vdot(w, h)) ** 2 / (noise * np.vdot(w, w).real))


def cascade_columns(h_irs, H):
    """``A`` with columns ``[h_R]_n H[:, n]`` so that ``A v = H diag(v) h_R``."""
    return H * np.asarray(h_irs).reshape(1, -1)


def bcd_phase_sweep(h_direct, A, v, sweeps=1, tol=None):
    """Sequential closed-form phase updates ``v_n = exp(j angle(eta_n))``.

    ``eta_n = a_n^H (h_B + sum_{i != n} v_i a_i)``; when ``eta_n = 0`` the
    phase is left alone.  With ``tol`` set, sweeping stops early once the
    relative objective change drops below it.
    """
    v = np.array(v, dtype=complex)
    h = h_direct + A @ v
    col_power = np.sum(np.abs(A) ** 2, axis=0)
    cols = A.T.copy()  # contiguous rows for the loop below
    prev = np.vdot(h, h).real
    for _ in range(sweeps):
        for n in range(v.size):
            a = cols[n]
            eta = np.vdot(a, h) - v[n] * col_power[n]
            if eta == 0:
                continue
            new = eta / abs(eta)
            h += (new - v[n]) * a
            v[n] = new
        cur = np.vdot(h, h).real
        if tol is not None and abs(cur - prev) <= tol * max(prev, 1e-300):
            break
        prev = cur
    return v


def channel_gain(h_direct, A, v):
    h = h_direct + A @ v
    return float(np.vdot(h, h).real)


class SingleUserState:
    """Variables and cached channel pieces for one user."""

    def __init__(self, model: ChannelModel, theta, psi, v):
        if model.num_users != 1:
            raise ValueError("single-user solver needs a one-user scenario")
        self.model = model
        self.theta = np.array(theta, dtype=float)
        self.F = boresight_vector(self.theta)
        self.v = np.asarray(v, dtype=complex)
        self.psi = np.asarray(psi, dtype=float)
        self.irs = model.irs_state(self.psi)
        self.h_direct = model.direct(self.F)[0]
        self.H = model.cascade(self.F, self.irs)
        self.bs_steps = np.full(self.theta.shape[0], np.inf)
        self.psi_step = np.inf

    @property
    def A(self):
        return cascade_columns(self.irs.h_irs[0], self.H)

    def channel(self):
        return self.h_direct + self.H @ (self.irs.h_irs[0] * self.v)

    def objective(self):
        h = self.channel()
        return float(np.vdot(h, h).real)


def boresight_gradient(state: SingleUserState):
    """``dF/d(elevation, azimuth)`` per antenna, shape ``(M, 2)``."""
    h = state.channel()
    dh = state.model.composite_derivative_f(state.F, state.irs, state.v)[0]  # (M, 3)
    df = 2 * np.real(np.conj(h)[:, None] * dh)
    return np.einsum("mc,mcj->mj", df, boresight_jacobian(state.theta))


ARMIJO = 1e-4


def antenna_gradient(state: SingleUserState, m):
    """``dF/d(elevation, azimuth)`` of antenna ``m`` alone (F depends on f_m via row m only)."""
    model, irs = state.model, state.irs
    f = state.F[m]
    q = model.scenario.direct.direction[0]
    cos_d = -q @ f
    w = model._direct_coef[0] * model._bs_steer[0, :, m] * model.bs.sqrt_gain_slope(cos_d, model.delta)
    d_direct = -(w @ q)
    cos_r = -irs.dhat[m] @ f
    slope = irs.base[m] * model.bs.sqrt_gain_slope(cos_r, model.delta)
    d_reflect = -((irs.h_irs[0] * state.v) * slope) @ irs.dhat[m]
    h_m = state.h_direct[m] + state.H[m] @ (irs.h_irs[0] * state.v)
    df = 2 * np.real(np.conj(h_m) * (d_direct + d_reflect))
    return df @ boresight_jacobian(state.theta[m])


def _angle_step(old, new):
    d = np.array(new - old, dtype=float)
    d[..., 1] = (d[..., 1] + np.pi) % (2 * np.pi) - np.pi
    return d


def su_boresight_step(state: SingleUserState, m, controls: Controls, grad=None):
    """Projected, backtracked step on antenna ``m``; keeps ``theta_m`` if nothing is accepted.

    Steps follow the unit gradient direction so that ``s`` is measured in
    radians (the raw gradient scales with the channel power).  The trial
    step starts at twice the last accepted one for this antenna and must pass
    a projected Armijo test.
    """
    if grad is None:
        grad = antenna_gradient(state, m)
    norm = np.linalg.norm(grad)
    if norm == 0:
        return state.theta[m]
    direction = grad / norm
    model = state.model
    reflected = state.irs.h_irs[0] * state.v
    h_old = state.h_direct[m] + state.H[m] @ reflected
    s = min(controls.s_max, 2 * state.bs_steps[m])
    while s >= controls.s_min:
        cand = project_angles(state.theta[m] + s * direction, controls.theta_max)
        f = boresight_vector(cand)
        col = model.direct_column(f, m)[0]
        row = model.cascade_row(f, m, state.irs)
        gain = abs(col + row @ reflected) ** 2 - abs(h_old) ** 2
        if gain >= max(0.0, ARMIJO * grad @ _angle_step(state.theta[m], cand)):
            state.theta[m], state.F[m] = cand, f
            state.h_direct[m], state.H[m] = col, row
            state.bs_steps[m] = s
            return state.theta[m]
        s *= controls.backtrack
    return state.theta[m]


def orientation_gradient(state: SingleUserState):
    h = state.channel()
    dh = state.model.composite_derivative_psi(state.F, state.irs, state.v, H=state.H)[0]
    return 2 * np.real(np.conj(h) @ dh)


def su_orientation_step(state: SingleUserState, controls: Controls, grad=None,
                        track_phases=True):
    """Projected step on ``psi`` over the box and the linearized visibility half-space.

    A candidate must also satisfy the exact visibility constraint and pass a
    projected Armijo test (so it never lowers the objective); otherwise the
    step is halved.  Rotating the panel shifts every element's propagation
    phase, so the candidate carries phase-tracked shifts: each ``v_n`` is
    re-phased to keep the phase of its contribution to the current channel.
    """
    if grad is None:
        grad = orientation_gradient(state)
    norm = np.linalg.norm(grad)
    if norm == 0:
        return state.psi
    geom = state.model.geom
    direction = grad / norm
    current = state.objective()
    a = visibility_gradient(geom, state.psi)
    b = a @ state.psi - visibility(geom, state.psi)
    box = np.asarray(controls.psi_max)
    h_ref = state.channel()
    ref_phase = np.angle(h_ref.conj() @ state.A)
    s = min(controls.s_max, 2 * state.psi_step)
    while s >= controls.s_min:
        cand = project_box_halfspace(state.psi + s * direction, box, a, b)
        if visibility(geom, cand) >= 0:
            irs = state.model.irs_state(cand)
            H = state.model.cascade(state.F, irs)
            A = cascade_columns(irs.h_irs[0], H)
            v = state.v
            if track_phases:
                v = v * np.exp(1j * (ref_phase - np.angle(h_ref.conj() @ A)))
            h = state.h_direct + A @ v
            if np.vdot(h, h).real - current >= max(0.0, ARMIJO * grad @ (cand - state.psi)):
                state.psi, state.irs, state.H, state.v = cand, irs, H, v
                state.psi_step = s
                return state.psi
        s *= controls.backtrack
    return state.psi


@dataclass
class SingleUserReport:
    trace: list
    w: np.ndarray
    v: np.ndarray
    theta: np.ndarray
    psi: np.ndarray
    iterations: int
    converged: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def gain(self):
        return self.trace[-1]


def su_alternating_optimize(model: ChannelModel, controls: Controls, init=None, seed=0,
                            rotate_bs=True, rotate_irs=True, max_iters=100, tol=1e-6,
                            bcd_sweeps=3, bcd_tol=1e-8, inner_steps=3):
    """Alternate phase sweeps, boresight steps and orientation steps.

    ``init`` is ``(theta, psi, v)``; by default the reference pose with
    random phases drawn from ``seed``.  Each outer iteration makes up to
    ``inner_steps`` rotation passes between phase sweeps.
    """
    M, N = model.geom.num_bs, model.geom.num_irs
    if init is None:
        init = (np.zeros((M, 2)), np.zeros(3), random_phases(N, np.random.default_rng(seed)))
    state = SingleUserState(model, *init)
    trace = [state.objective()]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        state.v = bcd_phase_sweep(state.h_direct, state.A, state.v, bcd_sweeps, bcd_tol)
        for _ in range(inner_steps):
            if rotate_bs:
                for m in range(M):
                    su_boresight_step(state, m, controls)
            if rotate_irs:
                su_orientation_step(state, controls)
        value = state.objective()
        prev = trace[-1]
        trace.append(value)
        if abs(value - prev) <= tol * max(abs(prev), 1e-300):
            converged = True
            break
    h = state.channel()
    w = mrc_combiner(h) if np.any(h) else np.zeros_like(h)
    return SingleUserReport(trace, w, state.v, state.theta, state.psi, it, converged)
