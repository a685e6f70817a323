"""Directional gains, scenario sampling, channel constructors and derivatives.

The user-BS and user-IRS links are far-field multipath (plane waves per path);
the IRS-BS link is a single near-field LoS component evaluated per element
pair.  :class:`ChannelModel` caches everything that does not depend on the
rotation variables so that solvers can rebuild single rows cheaply.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import (
    boresight_vector,
    euler_rotation,
    euler_rotation_partials,
    visibility,
)

DELTA_BOUNDARY = 1e-6


class InfeasibleOrientation(ValueError):
    """The IRS normal faces away from the BS (visibility constraint violated)."""


@dataclass(frozen=True)
class GainPattern:
    """Cosine-power element pattern ``G0 * cos^(2p)`` on the front hemisphere."""

    p: float

    def __post_init__(self):
        if self.p < 0.5:
            raise ValueError("gain exponent p must be >= 1/2")

    @property
    def peak(self):
        return 2.0 * (2.0 * self.p + 1.0)

    def gain(self, cosine):
        c = np.clip(np.asarray(cosine, dtype=float), 0.0, None)
        return np.where(c > 0, self.peak * c ** (2 * self.p), 0.0)

    def sqrt_gain(self, cosine):
        c = np.clip(np.asarray(cosine, dtype=float), 0.0, None)
        return np.where(c > 0, np.sqrt(self.peak) * c ** self.p, 0.0)

    def sqrt_gain_slope(self, cosine, delta=DELTA_BOUNDARY):
        """``d sqrt(G)/d cos``, zeroed where ``cos <= delta``."""
        c = np.asarray(cosine, dtype=float)
        safe = np.where(c > delta, c, 1.0)
        return np.where(c > delta, self.p * np.sqrt(self.peak) * safe ** (self.p - 1), 0.0)


def element_gain(pattern, cosine):
    return pattern.gain(cosine)


def element_gain_sqrt_derivative_factor(pattern, cosine, delta=DELTA_BOUNDARY):
    return pattern.sqrt_gain_slope(cosine, delta)


@dataclass(frozen=True)
class PathSet:
    """Per-user multipath components toward one receiving aperture.

    Arrays are ``(K, L)`` (``(K, L, 3)`` for vectors); path 0 is the LoS
    component and carries NaN scatterer coordinates.
    """

    scatterers: np.ndarray
    distance: np.ndarray
    direction: np.ndarray
    gain: np.ndarray
    phase: np.ndarray

    @property
    def num_paths(self):
        return self.distance.shape[1]


@dataclass(frozen=True)
class Scenario:
    users: np.ndarray  # (K, 3)
    direct: PathSet
    irs: PathSet
    direct_amplitude: float
    powers: np.ndarray  # (K,) watts
    noise: float  # watts
    bs_pattern: GainPattern
    irs_pattern: GainPattern

    @property
    def num_users(self):
        return self.users.shape[0]

    def cascaded_los(self):
        """Copy with the direct link and every NLoS path switched off."""
        irs_gain = self.irs.gain.copy()
        irs_gain[:, 1:] = 0
        return replace(self, direct=replace(self.direct, gain=np.zeros_like(self.direct.gain)),
                       irs=replace(self.irs, gain=irs_gain))

    def without_direct(self):
        return replace(self, direct=replace(self.direct, gain=np.zeros_like(self.direct.gain)))

    def without_irs(self):
        return replace(self, irs=replace(self.irs, gain=np.zeros_like(self.irs.gain)))

    def select_users(self, index):
        index = np.atleast_1d(index)

        def pick(ps):
            return PathSet(ps.scatterers[index], ps.distance[index], ps.direction[index],
                           ps.gain[index], ps.phase[index])

        return replace(self, users=self.users[index], direct=pick(self.direct),
                       irs=pick(self.irs), powers=self.powers[index])


def _los_paths(users, receiver, wavelength, num_paths, scatter_fn, kappa, rng):
    k_c = 2 * np.pi / wavelength
    K = users.shape[0]
    scat = np.full((K, num_paths, 3), np.nan)
    dist = np.empty((K, num_paths))
    direc = np.empty((K, num_paths, 3))
    phase = np.zeros((K, num_paths))
    for k in range(K):
        los = receiver - users[k]
        dist[k, 0] = np.linalg.norm(los)
        direc[k, 0] = los / dist[k, 0]
        for ell in range(1, num_paths):
            o = scatter_fn(users[k])
            leg = receiver - o
            dist[k, ell] = np.linalg.norm(o - users[k]) + np.linalg.norm(leg)
            direc[k, ell] = leg / np.linalg.norm(leg)
            scat[k, ell] = o
        phase[k, 1:] = rng.uniform(0, 2 * np.pi, num_paths - 1)
    amp = wavelength / (4 * np.pi * dist)
    amp[:, 1:] *= kappa
    gain = amp * np.exp(-1j * k_c * dist + 1j * phase)
    return PathSet(scat, dist, direc, gain, phase)


def sample_scenario(config, seed, geom=None):
    """Draw one deterministic realization (users, scatterers, NLoS phases).

    Users sit at ground distance ``U[user_dist_min, user_dist_max]`` from the
    BS with azimuth ``U[-60, 60]`` degrees about +y.  Scatterers follow
    :func:`build_scenario`.
    """
    from .geometry import build_geometry

    if geom is None:
        geom = build_geometry(config)
    rng = np.random.default_rng(seed)
    K = config.num_users
    az_max = np.deg2rad(config.user_azimuth_max_deg)
    azimuth = rng.uniform(-az_max, az_max, K)
    ground = rng.uniform(config.user_dist_min, config.user_dist_max, K)
    b0 = geom.bs_center
    users = np.stack([b0[0] + ground * np.sin(azimuth), b0[1] + ground * np.cos(azimuth),
                      np.full(K, config.user_height)], axis=1)
    return build_scenario(config, users, rng, geom)


def build_scenario(config, users, rng, geom):
    """Paths, powers and patterns for users at given positions.

    Each NLoS scatterer is uniform in a horizontal disc around its user and is
    redrawn while it lies on the back side (y <= receiver y) of the receiving
    aperture.
    """
    users = np.atleast_2d(np.asarray(users, dtype=float))

    def scatterer_near(receiver):
        def draw(user):
            for _ in range(1000):
                r = config.scatter_radius * np.sqrt(rng.uniform())
                t = rng.uniform(0, 2 * np.pi)
                h = rng.uniform(config.scatter_height_min, config.scatter_height_max)
                o = np.array([user[0] + r * np.cos(t), user[1] + r * np.sin(t), h])
                if o[1] > receiver[1]:
                    break
            return o  # a user far behind the aperture keeps the last draw
        return draw

    lam = geom.wavelength
    direct = _los_paths(users, geom.bs_center, lam, config.paths_direct,
                        scatterer_near(geom.bs_center), config.kappa_nlos, rng)
    irs = _los_paths(users, geom.irs_center, lam, config.paths_irs,
                     scatterer_near(geom.irs_center), config.kappa_nlos, rng)
    scenario = Scenario(users=users, direct=direct, irs=irs,
                        direct_amplitude=10 ** (-config.direct_atten_db / 20),
                        powers=np.full(len(users), config.power_w), noise=config.noise_w,
                        bs_pattern=GainPattern(config.p_bs), irs_pattern=GainPattern(config.p_irs))
    if config.cascaded_los:
        scenario = scenario.cascaded_los()
    return scenario


def far_field_ok(scenario, geom):
    """True when every user is beyond the Rayleigh distance of both apertures."""
    to_irs = np.linalg.norm(scenario.users - geom.irs_center, axis=1)
    to_bs = np.linalg.norm(scenario.users - geom.bs_center, axis=1)
    bs_rayleigh = 2 * geom.bs_diagonal ** 2 / geom.wavelength
    return bool(np.all(to_irs > geom.rayleigh_distance) and np.all(to_bs > bs_rayleigh))


@dataclass
class ChannelSet:
    h_direct: np.ndarray  # (K, M)
    h_irs: np.ndarray  # (K, N)
    H: np.ndarray  # (M, N)

    def composite(self, v):
        return composite_channel(self.h_direct, self.H, self.h_irs, v)

    def cascade_columns(self, k=0):
        """``A = H diag(h_R,k)`` whose columns are the per-element reflections."""
        return self.H * self.h_irs[k]


def composite_channel(h_direct, H, h_irs, v, check=True):
    """``h_k = h_B,k + H diag(v) h_R,k`` for every user (rows)."""
    v = np.asarray(v)
    if check and np.any(np.abs(np.abs(v) - 1) > 1e-9):
        raise ValueError("IRS coefficients must have unit modulus")
    return h_direct + (h_irs * v) @ H.T


@dataclass
class IrsState:
    """Orientation-dependent quantities of the IRS for one ``psi``."""

    psi: np.ndarray
    rotation: np.ndarray
    normal: np.ndarray
    rel: np.ndarray  # (N, 3) element offsets R @ rbar_n
    h_irs: np.ndarray  # (K, N)
    dist: np.ndarray  # (M, N)
    dhat: np.ndarray  # (M, N, 3) unit vectors element -> antenna
    rho: np.ndarray  # (M, N) alignment n^T dhat
    base: np.ndarray  # (M, N) lambda sqrt(G_ref) e^{-jkd} / (4 pi d)


class ChannelModel:
    """Channel evaluator for one scenario and geometry."""

    def __init__(self, scenario, geom, delta=DELTA_BOUNDARY):
        self.scenario = scenario
        self.geom = geom
        self.delta = delta
        self.k_c = geom.wavenumber
        self.bs = scenario.bs_pattern
        self.ris = scenario.irs_pattern
        d = scenario.direct
        # (K, L, M) steering phases across the BS array; rotation independent
        self._bs_steer = np.exp(-1j * self.k_c * (d.direction @ geom.bs_offsets.T))
        self._direct_coef = scenario.direct_amplitude * d.gain  # (K, L)

    @property
    def num_users(self):
        return self.scenario.num_users

    # -- user to BS ---------------------------------------------------------
    def direct(self, F):
        cos = -self.scenario.direct.direction @ F.T  # (K, L, M)
        return np.einsum("kl,klm->km", self._direct_coef, self.bs.sqrt_gain(cos) * self._bs_steer)

    def direct_column(self, f, m):
        cos = -self.scenario.direct.direction @ f  # (K, L)
        return np.sum(self._direct_coef * self.bs.sqrt_gain(cos) * self._bs_steer[:, :, m], axis=1)

    def direct_derivative(self, F):
        """``d[h_B,k]_m / d f_m``, shape ``(K, M, 3)``."""
        q = self.scenario.direct.direction
        cos = -q @ F.T
        w = self._direct_coef[:, :, None] * self._bs_steer * self.bs.sqrt_gain_slope(cos, self.delta)
        return -np.einsum("klm,klc->kmc", w, q)

    # -- IRS ----------------------------------------------------------------
    def irs_state(self, psi, check=True):
        geom = self.geom
        psi = np.asarray(psi, dtype=float)
        if check and visibility(geom, psi) < -1e-12:
            raise InfeasibleOrientation(f"IRS orientation {psi} faces away from the BS")
        R = euler_rotation(psi)
        normal = R @ geom.ref_normal
        rel = geom.irs_offsets @ R.T
        paths = self.scenario.irs
        q = paths.direction  # (K, L, 3)
        cos_inc = -q @ normal  # (K, L)
        steer = np.exp(-1j * self.k_c * (q @ rel.T))  # (K, L, N)
        h_irs = np.einsum("kl,kln->kn", paths.gain * self.ris.sqrt_gain(cos_inc), steer)

        diff = geom.bs_positions[:, None, :] - (geom.irs_center + rel)[None, :, :]
        dist = np.linalg.norm(diff, axis=2)
        dhat = diff / dist[:, :, None]
        rho = dhat @ normal
        base = (geom.wavelength / (4 * np.pi * dist)) * self.ris.sqrt_gain(rho) \
            * np.exp(-1j * self.k_c * dist)
        return IrsState(psi, R, normal, rel, h_irs, dist, dhat, rho, base)

    def cascade(self, F, state):
        cos_bs = -np.einsum("mnc,mc->mn", state.dhat, F)
        return state.base * self.bs.sqrt_gain(cos_bs)

    def cascade_row(self, f, m, state):
        return state.base[m] * self.bs.sqrt_gain(-state.dhat[m] @ f)

    def cascade_derivative_f(self, F, state):
        """``d[H]_{m,n} / d f_m``, shape ``(M, N, 3)``."""
        cos_bs = -np.einsum("mnc,mc->mn", state.dhat, F)
        return -(state.base * self.bs.sqrt_gain_slope(cos_bs, self.delta))[:, :, None] * state.dhat

    def channels(self, F, psi=None, state=None):
        if state is None:
            state = self.irs_state(psi)
        return ChannelSet(self.direct(F), state.h_irs, self.cascade(F, state))

    # -- orientation derivatives ---------------------------------------------
    def irs_derivatives(self, F, state):
        """Return ``(dh_R/dpsi, dH/dpsi)`` with shapes ``(K, N, 3)`` and ``(M, N, 3)``."""
        geom = self.geom
        k_c = self.k_c
        dR = euler_rotation_partials(state.psi)  # (3, 3, 3)
        dn = dR @ geom.ref_normal  # (3 axes, 3)
        dr = np.einsum("iab,nb->ina", dR, geom.irs_offsets)  # (3, N, 3)

        paths = self.scenario.irs
        q = paths.direction
        cos_inc = -q @ state.normal  # (K, L)
        steer = np.exp(-1j * k_c * (q @ state.rel.T))  # (K, L, N)
        dcos_inc = -np.einsum("ia,kla->kli", dn, q)  # (K, L, 3)
        slope = self.ris.sqrt_gain_slope(cos_inc, self.delta)
        amp = self.ris.sqrt_gain(cos_inc)
        dphase = -1j * k_c * np.einsum("kla,ina->klni", q, dr)  # (K, L, N, 3)
        term = (slope[:, :, None, None] * dcos_inc[:, :, None, :]
                + amp[:, :, None, None] * dphase) * steer[:, :, :, None]
        dh_irs = np.einsum("kl,klni->kni", paths.gain, term)

        dist, dhat = state.dist, state.dhat
        ddist = -np.einsum("mna,ina->mni", dhat, dr)  # (M, N, 3)
        # (I - dhat dhat^T) dr, using dhat^T dr = -ddist
        proj = dr.transpose(1, 0, 2)[None] + dhat[:, :, None, :] * ddist[..., None]
        ddhat = -proj / dist[:, :, None, None]  # (M, N, 3 axes, 3)
        drho = np.einsum("ia,mna->mni", dn, dhat) + np.einsum("a,mnia->mni", state.normal, ddhat)
        cos_bs = -np.einsum("mnc,mc->mn", dhat, F)
        dcos_bs = -np.einsum("mc,mnic->mni", F, ddhat)

        free = geom.wavelength / (4 * np.pi * dist) * np.exp(-1j * k_c * dist)
        sg_ref, sg_bs = self.ris.sqrt_gain(state.rho), self.bs.sqrt_gain(cos_bs)
        H = free * sg_ref * sg_bs
        dH = H[:, :, None] * (-ddist / dist[:, :, None] - 1j * k_c * ddist) \
            + free[:, :, None] * (
                (self.ris.sqrt_gain_slope(state.rho, self.delta) * sg_bs)[:, :, None] * drho
                + (sg_ref * self.bs.sqrt_gain_slope(cos_bs, self.delta))[:, :, None] * dcos_bs)
        return dh_irs, dH

    def composite_derivative_psi(self, F, state, v, H=None):
        """``dh_k/dpsi_i``, shape ``(K, M, 3)``."""
        if H is None:
            H = self.cascade(F, state)
        dh_irs, dH = self.irs_derivatives(F, state)
        return (np.einsum("mn,kni->kmi", H, v[None, :, None] * dh_irs)
                + np.einsum("mni,kn->kmi", dH, state.h_irs * v))

    def composite_derivative_f(self, F, state, v):
        """Nonzero rows ``d[h_k]_m / d f_m``, shape ``(K, M, 3)``."""
        dH = self.cascade_derivative_f(F, state)
        return self.direct_derivative(F) + np.einsum("kn,mnc->kmc", state.h_irs * v, dH)

    # -- far field ------------------------------------------------------------
    def farfield_factors(self, F, psi):
        """Rank-one IRS-BS factors ``(c_RB, u_B, u_R)`` about the center direction."""
        geom = self.geom
        if visibility(geom, psi) < -1e-12:
            raise InfeasibleOrientation(f"IRS orientation {psi} faces away from the BS")
        d_rb = geom.distance
        d0 = (geom.bs_center - geom.irs_center) / d_rb
        c_rb = geom.wavelength * np.exp(-1j * self.k_c * d_rb) / (4 * np.pi * d_rb)
        R = euler_rotation(psi)
        u_b = self.bs.sqrt_gain(-F @ d0) * np.exp(-1j * self.k_c * (geom.bs_offsets @ d0))
        u_r = self.ris.sqrt_gain((R @ geom.ref_normal) @ d0) \
            * np.exp(1j * self.k_c * ((geom.irs_offsets @ R.T) @ d0))
        return c_rb, u_b, u_r


# -- functional wrappers taking boresight angles -------------------------------

def user_bs_channel(scenario, geom, theta):
    return ChannelModel(scenario, geom).direct(boresight_vector(theta))


def user_irs_channel(scenario, geom, psi):
    return ChannelModel(scenario, geom).irs_state(psi, check=False).h_irs


def irs_bs_channel(scenario, geom, theta, psi):
    model = ChannelModel(scenario, geom)
    return model.cascade(boresight_vector(theta), model.irs_state(psi))


def irs_bs_channel_farfield(scenario, geom, theta, psi):
    return ChannelModel(scenario, geom).farfield_factors(boresight_vector(theta), psi)


def channel_derivative_boresight(scenario, geom, theta, psi, v):
    model = ChannelModel(scenario, geom)
    return model.composite_derivative_f(boresight_vector(theta), model.irs_state(psi), v)


def channel_derivative_orientation(scenario, geom, theta, psi, v):
    model = ChannelModel(scenario, geom)
    return model.composite_derivative_psi(boresight_vector(theta), model.irs_state(psi), v)


def pair_distance_derivative(geom, psi):
    """``d d_{n,m} / d psi_i = -dhat_{n,m}^T (dR/dpsi_i) rbar_n``, shape ``(M, N, 3)``."""
    R = euler_rotation(psi)
    elements = geom.irs_center + geom.irs_offsets @ R.T
    diff = geom.bs_positions[:, None, :] - elements[None, :, :]
    dhat = diff / np.linalg.norm(diff, axis=2)[:, :, None]
    dr = np.einsum("iab,nb->ina", euler_rotation_partials(psi), geom.irs_offsets)
    return -np.einsum("mna,ina->mni", dhat, dr)
