"""Multi-user alternating optimization of phases, combiners and rotations.

One AO iteration runs, in order, the FP/RCG phase update, the rotation
update (boresight sweep followed by a Barzilai-Borwein orientation step,
repeated) and the MMSE combiner update.  Every block is guarded by the true
sum rate with the other blocks held fixed, so the recorded trace never
decreases.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .channel import ChannelModel, composite_channel
from .geometry import (
    F_REF,
    angles_from_boresight,
    boresight_vector,
    visibility,
    visibility_gradient,
)
from .manifold import random_phases, rcg_maximize

LN2 = np.log(2.0)
SCHEMES = ("dual", "bs-only", "irs-only", "fixed")
_SCHEME_ALIASES = {
    "dual": "dual", "dual-rotation": "dual", "bs-only": "bs-only", "bs": "bs-only",
    "irs-only": "irs-only", "irs": "irs-only", "fixed": "fixed",
}


def normalize_scheme(name):
    try:
        return _SCHEME_ALIASES[str(name).lower().replace("_", "-")]
    except KeyError:
        raise ValueError(f"unknown scheme {name!r}; expected one of {SCHEMES}") from None


def scheme_rotations(scheme):
    """``(rotate_bs, rotate_irs)`` flags for a scheme name."""
    scheme = normalize_scheme(scheme)
    return scheme in ("dual", "bs-only"), scheme in ("dual", "irs-only")


@dataclass(frozen=True)
class Controls:
    """Stopping rules and step-size safeguards shared by both solvers."""

    eps_ao: float = 1e-3
    t_ao: int = 30
    eps_rot: float = 1e-4
    eps0: float = 1e-12
    t_rot: int = 10
    t_fp: int = 10
    rcg_iters: int = 50
    s_max: float = 1.0
    s_min: float = 1e-6
    backtrack: float = 0.5
    tau_ini: float = 1e-2
    tau_min: float = 1e-8
    tau_max: float = 1e2
    theta_max: float = np.pi / 3
    psi_max: tuple = (np.pi / 3, np.pi / 3, np.pi / 3)

    @classmethod
    def from_config(cls, config):
        names = {f.name for f in fields(cls)} - {"theta_max", "psi_max"}
        kw = {name: getattr(config, name) for name in names}
        return cls(theta_max=float(config.theta_max),
                   psi_max=tuple(float(x) for x in config.psi_max), **kw)


@dataclass
class SolveReport:
    trace: list
    W: np.ndarray
    v: np.ndarray
    F: np.ndarray  # (M, 3) boresight vectors
    psi: np.ndarray
    sinr: np.ndarray
    iterations: int
    converged: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def theta(self):
        return angles_from_boresight(self.F)

    @property
    def sum_rate(self):
        return self.trace[-1]


# -- rates and combiners ------------------------------------------------------

def _cross_gains(W, h):
    """``u[k, j] = w_k^H h_j``."""
    return W.conj().T @ h.T


def sinr_and_sum_rate(W, h, powers, noise):
    """Per-user SINRs and the sum rate in bps/Hz.

    ``W`` is ``(M, K)`` with one combiner per column, ``h`` is ``(K, M)``.
    """
    powers = np.broadcast_to(np.asarray(powers, dtype=float), (h.shape[0],))
    u = _cross_gains(W, h)
    rx = np.abs(u) ** 2 * powers[None, :]
    signal = np.diag(rx).copy()
    interference = rx.sum(axis=1) - signal + noise * np.sum(np.abs(W) ** 2, axis=0)
    sinr = signal / interference
    return sinr, float(np.sum(np.log2(1 + sinr)))


def sum_rate(W, h, powers, noise):
    return sinr_and_sum_rate(W, h, powers, noise)[1]


def mmse_combiners(h, powers, noise):
    """Unit-norm ``w_k`` proportional to ``C_k^{-1} h_k``."""
    K, M = h.shape
    powers = np.broadcast_to(np.asarray(powers, dtype=float), (K,))
    total = (h.T * powers) @ h.conj() + noise * np.eye(M)
    W = np.empty((M, K), dtype=complex)
    for k in range(K):
        C = total - powers[k] * np.outer(h[k], h[k].conj())
        w = np.linalg.solve(C, h[k])
        W[:, k] = w / np.linalg.norm(w)
    return W


# -- fractional programming phase update --------------------------------------

@dataclass(frozen=True)
class FPAuxiliary:
    mu: np.ndarray
    nu: np.ndarray


def fp_terms(W, h, powers, noise):
    """``u[k, j] = sqrt(P_j) w_k^H h_j`` and ``rho_k = sum_j |u_kj|^2 + noise ||w_k||^2``."""
    u = _cross_gains(W, h) * np.sqrt(powers)[None, :]
    rho = np.sum(np.abs(u) ** 2, axis=1) + noise * np.sum(np.abs(W) ** 2, axis=0)
    return u, rho


def fp_auxiliary_update(sinr, u, rho):
    sinr = np.asarray(sinr, dtype=float)
    u_kk = np.diag(np.atleast_2d(u)) if np.ndim(u) == 2 else np.asarray(u)
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise ValueError("rho must be positive")
    return FPAuxiliary(sinr.copy(), np.sqrt(1 + sinr) * u_kk / rho)


class FPQuadratic:
    """``f(v) = v^H Q v + 2 Re{q^H v}`` with ``Q = -B^H B`` kept in factored form.

    The explicit matrix is available as ``Q`` for inspection, but the
    objective and its gradient only use the ``(K^2, N)`` factor.
    """

    def __init__(self, factor, q):
        self.factor = factor
        self.q = q

    @property
    def Q(self):
        return -self.factor.conj().T @ self.factor

    def value(self, v):
        return float(-np.sum(np.abs(self.factor @ v) ** 2) + 2 * np.real(np.vdot(self.q, v)))

    def egrad(self, v):
        return -2 * (self.factor.conj().T @ (self.factor @ v)) + 2 * self.q


def fp_quadratic_build(aux, h_direct, H, h_irs, W, powers):
    """Quadratic model of the FP surrogate in ``v`` (scaled to bits).

    With ``r_kj = (w_k^H H) * h_R,j`` and ``b_kj = w_k^H h_B,j`` the negated
    Gram part stacks ``|nu_k| sqrt(P_j) r_kj`` and the linear part is
    ``q = sum_k sqrt(1+mu_k) nu_k sqrt(P_k) r_kk^H - |nu_k|^2 sum_j P_j b_kj r_kj^H``.
    """
    powers = np.asarray(powers, dtype=float)
    K = h_irs.shape[0]
    wH = W.conj().T @ H  # (K, N)
    r = wH[:, None, :] * h_irs[None, :, :]  # (k, j, N)
    b = W.conj().T @ h_direct.T  # (k, j)
    nu, mu = aux.nu, aux.mu
    weight = np.abs(nu)[:, None] * np.sqrt(powers)[None, :]  # (k, j)
    factor = (weight[:, :, None] * r).reshape(K * K, -1) / np.sqrt(LN2)
    idx = np.arange(K)
    lin = (np.sqrt(1 + mu) * nu * np.sqrt(powers))[:, None] * r[idx, idx].conj()
    lin = lin - (np.abs(nu) ** 2)[:, None] * np.einsum("j,kj,kjn->kn", powers, b, r.conj())
    return FPQuadratic(factor, lin.sum(axis=0) / LN2)


def fp_surrogate(aux, h, W, powers, noise):
    """Exact FP surrogate (bits) at composite channels ``h``; used as an oracle."""
    u, rho = fp_terms(W, h, powers, noise)
    mu, nu = aux.mu, aux.nu
    u_kk = np.diag(u)
    val = np.log1p(mu) - mu + 2 * np.sqrt(1 + mu) * np.real(nu.conj() * u_kk) - np.abs(nu) ** 2 * rho
    return float(np.sum(val) / LN2)


def fp_rcg_phase_update(h_direct, H, h_irs, W, powers, noise, v0, t_fp=10, rcg_iters=50,
                        return_trace=False):
    """FP outer loop with RCG inner solves, guarded by the true sum rate."""
    v = np.asarray(v0, dtype=complex)
    best = sum_rate(W, composite_channel(h_direct, H, h_irs, v, check=False), powers, noise)
    trace = [best]
    for _ in range(t_fp):
        h = composite_channel(h_direct, H, h_irs, v, check=False)
        sinr, _ = sinr_and_sum_rate(W, h, powers, noise)
        u, rho = fp_terms(W, h, powers, noise)
        aux = fp_auxiliary_update(sinr, u, rho)
        obj = fp_quadratic_build(aux, h_direct, H, h_irs, W, powers)
        cand = rcg_maximize(obj, v, max_iters=rcg_iters).v
        rate = sum_rate(W, composite_channel(h_direct, H, h_irs, cand, check=False), powers, noise)
        if rate >= best:
            improved = rate - best
            v, best = cand, rate
            trace.append(best)
            if improved <= 1e-9 * max(1.0, abs(best)):
                break
        else:
            break
    return (v, trace) if return_trace else v


# -- gradients ---------------------------------------------------------------

def rate_weights(W, h, powers, noise):
    """``g_j`` with ``dR = 2 Re sum_j g_j^H dh_j``; returned as ``(K, M)``.

    Signal weight ``P_k / ((1+gamma_k) I_k ln2)`` on ``j = k`` and
    interference weight ``-P_j gamma_k / ((1+gamma_k) I_k ln2)`` otherwise.
    """
    powers = np.broadcast_to(np.asarray(powers, dtype=float), (h.shape[0],))
    u = _cross_gains(W, h)
    rx = np.abs(u) ** 2 * powers[None, :]
    signal = np.diag(rx)
    interference = rx.sum(axis=1) - signal + noise * np.sum(np.abs(W) ** 2, axis=0)
    sinr = signal / interference
    scale = 1.0 / ((1 + sinr) * interference * LN2)
    c = -(sinr * scale)[:, None] * powers[None, :]
    np.fill_diagonal(c, scale * powers)
    # g_j = sum_k c_kj u_kj w_k
    return ((c * u).T @ W.T)


def sum_rate_gradient(W, h, powers, noise, dh, variable="f"):
    """Real gradient of the sum rate.

    ``dh`` holds channel derivatives: for ``variable="f"`` it is ``(K, M, 3)``
    with ``dh[k, m] = d[h_k]_m / d f_m`` and the result is ``(M, 3)``; for
    ``variable="psi"`` it is ``(K, M, 3)`` with ``dh[k, :, i] = dh_k/dpsi_i``
    and the result is a 3-vector.
    """
    g = rate_weights(W, h, powers, noise)
    contrib = 2 * np.real(g.conj()[:, :, None] * dh)
    if variable == "f":
        return contrib.sum(axis=0)
    if variable == "psi":
        return contrib.sum(axis=(0, 1))
    raise ValueError(f"variable must be 'f' or 'psi', got {variable!r}")


# -- projections -------------------------------------------------------------

def cap_project(f, theta_max):
    """Nearest unit vector within ``theta_max`` of ``+y``."""
    f = np.asarray(f, dtype=float)
    norm = np.linalg.norm(f)
    if norm == 0:
        raise ValueError("cannot project the zero vector")
    f = f / norm
    cos_max = np.cos(theta_max)
    if f[1] >= cos_max:
        return f
    side = f - f[1] * F_REF
    side_norm = np.linalg.norm(side)
    if side_norm < 1e-12:
        side = np.array([1.0, 0.0, 0.0])  # antiparallel: tilt within the x-y plane
    else:
        side = side / side_norm
    return np.sin(theta_max) * side + cos_max * F_REF


def project_box(x, upper):
    return np.clip(x, -np.asarray(upper), np.asarray(upper))


def project_halfspace(x, a, b):
    """Projection onto ``{x : a^T x >= b}``."""
    gap = b - a @ x
    if gap <= 0:
        return x
    return x + gap * a / (a @ a)


def project_box_halfspace(x, box_upper, a, b):
    """Euclidean projection onto ``{|x_i| <= box_upper_i} ∩ {a^T x >= b}``.

    By the KKT conditions the projection is ``clip(x + lam a)`` for the
    smallest ``lam >= 0`` with ``a^T clip(x + lam a) >= b``.  That function of
    ``lam`` is piecewise linear and non-decreasing, so ``lam`` is found
    exactly from its breakpoints.  If the intersection is empty the limit
    ``lam -> inf`` (the box point maximizing ``a^T x``) is returned.
    """
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    upper = np.broadcast_to(np.asarray(box_upper, dtype=float), x.shape)
    y = project_box(x, upper)
    if a @ y >= b:
        return y
    moving = a != 0
    knots = np.concatenate([(upper[moving] - x[moving]) / a[moving],
                            (-upper[moving] - x[moving]) / a[moving]])
    knots = np.unique(knots[knots > 0])
    lo, f_lo = 0.0, a @ y
    for hi in knots:
        f_hi = a @ project_box(x + hi * a, upper)
        if f_hi >= b:
            lam = lo + (b - f_lo) * (hi - lo) / (f_hi - f_lo)
            return project_box(x + lam * a, upper)
        lo, f_lo = hi, f_hi
    return np.where(moving, np.sign(a) * upper, y)


# -- solver state ---------------------------------------------------------------

class MultiUserState:
    """Mutable AO state with cached channels for fast candidate evaluation."""

    def __init__(self, model: ChannelModel, F, psi, v, W=None):
        self.model = model
        self.powers = model.scenario.powers
        self.noise = model.scenario.noise
        self.F = np.array(F, dtype=float)
        self.v = np.asarray(v, dtype=complex)
        self.set_psi(psi)
        self.h_direct = model.direct(self.F)
        self.H = model.cascade(self.F, self.irs)
        self.W = mmse_combiners(self.channel(), self.powers, self.noise) if W is None else W

    def set_psi(self, psi):
        self.psi = np.asarray(psi, dtype=float)
        self.irs = self.model.irs_state(self.psi)

    def channel(self):
        return composite_channel(self.h_direct, self.H, self.irs.h_irs, self.v, check=False)

    def rate(self):
        return sum_rate(self.W, self.channel(), self.powers, self.noise)

    def sinr(self):
        return sinr_and_sum_rate(self.W, self.channel(), self.powers, self.noise)[0]


def boresight_update_sweep(state: MultiUserState, controls: Controls):
    """Sequential projected-gradient steps on each boresight vector."""
    model = state.model
    reflected = state.irs.h_irs * state.v  # (K, N)
    h = state.channel()
    current = sum_rate(state.W, h, state.powers, state.noise)
    # row m of the derivative only depends on f_m, so one evaluation serves the sweep
    dh = model.composite_derivative_f(state.F, state.irs, state.v)
    for m in range(state.F.shape[0]):
        grad = sum_rate_gradient(state.W, h, state.powers, state.noise, dh, "f")[m]
        if not np.any(grad):
            continue
        s = controls.s_max
        while s >= controls.s_min:
            f_new = cap_project(state.F[m] + s * grad, controls.theta_max)
            col_direct = model.direct_column(f_new, m)
            row_H = model.cascade_row(f_new, m, state.irs)
            h_try = h.copy()
            h_try[:, m] = col_direct + reflected @ row_H
            rate = sum_rate(state.W, h_try, state.powers, state.noise)
            if rate >= current:
                state.F[m] = f_new
                state.h_direct[:, m] = col_direct
                state.H[m] = row_H
                h, current = h_try, rate
                break
            s *= controls.backtrack
    return state.F


class BBMemory:
    def __init__(self):
        self.prev_psi = None
        self.prev_grad = None
        self.count = 0

    def step(self, psi, grad, controls):
        tau = controls.tau_ini
        if self.prev_psi is not None:
            s = psi - self.prev_psi
            y = grad - self.prev_grad
            sy = abs(s @ y)
            if sy > 0 and s @ s > 0:
                tau = (s @ s) / sy if self.count % 2 == 0 else sy / (y @ y)
            tau = float(np.clip(tau, controls.tau_min, controls.tau_max))
        self.prev_psi, self.prev_grad = psi.copy(), grad.copy()
        self.count += 1
        return tau


def orientation_gradient(state: MultiUserState):
    h = state.channel()
    dh = state.model.composite_derivative_psi(state.F, state.irs, state.v, H=state.H)
    return sum_rate_gradient(state.W, h, state.powers, state.noise, dh, "psi")


def orientation_bb_update(state: MultiUserState, memory: BBMemory, controls: Controls):
    """One safeguarded BB step on ``psi`` with box and half-space projection and an acceptance test.

    Rotating the panel shifts every element's propagation phase, so each
    candidate is also tried with phase-tracked shifts ``v_n`` that keep the
    phase of element ``n``'s contribution to the rate gradient; the better of
    the two is tested against the current rate.
    """
    geom = state.model.geom
    h_now = state.channel()
    weights = rate_weights(state.W, h_now, state.powers, state.noise).conj()  # (K, M)

    def element_phase(H, h_irs):
        return np.angle(np.sum((weights @ H) * h_irs, axis=0))

    ref_phase = element_phase(state.H, state.irs.h_irs)
    grad = orientation_gradient(state)
    tau = memory.step(state.psi, grad, controls)
    if not np.any(grad):
        return state.psi
    current = state.rate()
    a = visibility_gradient(geom, state.psi)
    b = a @ state.psi - visibility(geom, state.psi)
    box = np.asarray(controls.psi_max)
    # near grazing incidence the gradient is tiny while large moves pay off;
    # never start below a move of s_max radians
    tau = max(tau, controls.s_max / np.linalg.norm(grad))
    while tau >= controls.tau_min and tau * np.linalg.norm(grad) >= controls.s_min:
        cand = project_box_halfspace(state.psi + tau * grad, box, a, b)
        if visibility(geom, cand) >= 0 and not np.allclose(cand, state.psi, rtol=0, atol=1e-15):
            irs = state.model.irs_state(cand)
            H = state.model.cascade(state.F, irs)
            tracked = state.v * np.exp(1j * (ref_phase - element_phase(H, irs.h_irs)))
            rate, v = max(
                ((sum_rate(state.W, composite_channel(state.h_direct, H, irs.h_irs, v, check=False),
                           state.powers, state.noise), i, v)
                 for i, v in enumerate((state.v, tracked))), key=lambda t: (t[0], -t[1]))[::2]
            if rate >= current:
                state.psi, state.irs, state.H, state.v = cand, irs, H, v
                return state.psi
        tau *= 0.5
    return state.psi


def rotation_update(state: MultiUserState, controls: Controls, rotate_bs=True, rotate_irs=True):
    """Alternate boresight sweeps and orientation steps for fixed ``W`` and ``v``."""
    memory = BBMemory()
    current = state.rate()
    iterations = 0
    for _ in range(controls.t_rot):
        iterations += 1
        if rotate_bs:
            boresight_update_sweep(state, controls)
        if rotate_irs:
            orientation_bb_update(state, memory, controls)
        rate = state.rate()
        change = abs(rate - current) / max(abs(current), controls.eps0)
        current = rate
        if change <= controls.eps_rot:
            break
    return state.F, state.psi, iterations


def default_init(model, seed):
    """Reference boresights, BS-facing panel, phases drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    M, N = model.geom.num_bs, model.geom.num_irs
    return np.tile(F_REF, (M, 1)), np.zeros(3), random_phases(N, rng)


def ao_optimize(model: ChannelModel, controls: Controls, scheme="dual", init=None, seed=0):
    """Alternating optimization of ``v``, rotations and ``W``.

    ``init`` is ``(F, psi, v)`` (boresight vectors, Euler angles, phases); by
    default the reference pose with random phases from ``seed``.
    """
    rotate_bs, rotate_irs = scheme_rotations(scheme)
    F0, psi0, v0 = default_init(model, seed) if init is None else init
    F0 = np.asarray(F0, dtype=float)
    if F0.ndim == 2 and F0.shape[1] == 2:
        F0 = boresight_vector(F0)
    state = MultiUserState(model, F0, psi0, v0)
    trace = [state.rate()]
    rot_iters = []
    converged = False
    it = 0
    for it in range(1, controls.t_ao + 1):
        state.v = fp_rcg_phase_update(state.h_direct, state.H, state.irs.h_irs, state.W,
                                      state.powers, state.noise, state.v, controls.t_fp,
                                      controls.rcg_iters)
        if rotate_bs or rotate_irs:
            rot_iters.append(rotation_update(state, controls, rotate_bs, rotate_irs)[2])
        h = state.channel()
        W_new = mmse_combiners(h, state.powers, state.noise)
        if sum_rate(W_new, h, state.powers, state.noise) >= state.rate():
            state.W = W_new
        rate = state.rate()
        prev = trace[-1]
        trace.append(rate)
        if abs(rate - prev) / max(abs(prev), controls.eps0) <= controls.eps_ao:
            converged = True
            break
    return SolveReport(trace=trace, W=state.W, v=state.v, F=state.F.copy(), psi=state.psi.copy(),
                       sinr=state.sinr(), iterations=it, converged=converged,
                       diagnostics={"scheme": normalize_scheme(scheme),
                                    "rotation_iterations": rot_iters,
                                    "visibility": visibility(model.geom, state.psi)})
