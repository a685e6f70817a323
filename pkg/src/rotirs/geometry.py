"""Rotation parameterizations, array layouts and their analytic derivatives.

Conventions
-----------
* The BS array lies in the x-z plane, its normal is +y and boresight
  elevation is measured from +y.
* Boresight angles are stored as an ``(M, 2)`` array ``[elevation, azimuth]``.
* The IRS orientation ``psi = (alpha, beta, phi)`` acts through the active
  rotation ``R = Rx(phi) @ Ry(beta) @ Rz(alpha)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

F_REF = np.array([0.0, 1.0, 0.0])


def boresight_vector(angles):
    """Unit boresight vector(s) for ``[..., (elevation, azimuth)]``."""
    angles = np.asarray(angles, dtype=float)
    e, a = angles[..., 0], angles[..., 1]
    se = np.sin(e)
    return np.stack([se * np.cos(a), np.cos(e), se * np.sin(a)], axis=-1)


def boresight_jacobian(angles):
    """Jacobian ``df/d(elevation, azimuth)``, shape ``(..., 3, 2)``."""
    angles = np.asarray(angles, dtype=float)
    e, a = angles[..., 0], angles[..., 1]
    ce, se, ca, sa = np.cos(e), np.sin(e), np.cos(a), np.sin(a)
    zero = np.zeros_like(e)
    return np.stack([
        np.stack([ce * ca, -se * sa], axis=-1),
        np.stack([-se, zero], axis=-1),
        np.stack([ce * sa, se * ca], axis=-1),
    ], axis=-2)


def angles_from_boresight(f, theta_max=np.pi / 2):
    """Inverse of :func:`boresight_vector` on the feasible cap.

    Raises ``ValueError`` for non-unit input or for directions outside the
    cap of half-angle ``theta_max`` around +y (project with
    ``mu_solver.cap_project`` first).  At the pole the azimuth is reported
    as 0.
    """
    f = np.asarray(f, dtype=float)
    norms = np.linalg.norm(f, axis=-1)
    if np.any(np.abs(norms - 1) > 1e-9):
        raise ValueError("boresight vector must have unit norm")
    if np.any(f[..., 1] < np.cos(theta_max) - 1e-9):
        raise ValueError("boresight outside the feasible cap; project it first")
    # arccos(f_y) in a form that keeps full precision near the pole
    elevation = np.arctan2(np.hypot(f[..., 0], f[..., 2]), f[..., 1])
    azimuth = np.mod(np.arctan2(f[..., 2], f[..., 0]), 2 * np.pi)
    azimuth = np.where(np.hypot(f[..., 0], f[..., 2]) < 1e-15, 0.0, azimuth)
    return np.stack([elevation, azimuth], axis=-1)


def project_angles(angles, theta_max):
    """Map ``(elevation, azimuth)`` pairs into ``[0, theta_max] x [0, 2pi)``.

    A negative elevation is the same direction as ``(-e, a + pi)``, so it is
    reflected through the pole before clamping.
    """
    angles = np.array(angles, dtype=float)
    e, a = angles[..., 0], angles[..., 1]
    flip = e < 0
    e = np.where(flip, -e, e)
    a = np.where(flip, a + np.pi, a)
    angles[..., 0] = np.clip(e, 0.0, theta_max)
    angles[..., 1] = np.mod(a, 2 * np.pi)
    return angles


def _elementary(psi):
    alpha, beta, phi = (float(x) for x in psi)
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cp, sp = np.cos(phi), np.sin(phi)
    rz = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    drz = np.array([[-sa, -ca, 0.0], [ca, -sa, 0.0], [0.0, 0.0, 0.0]])
    dry = np.array([[-sb, 0.0, cb], [0.0, 0.0, 0.0], [-cb, 0.0, -sb]])
    drx = np.array([[0.0, 0.0, 0.0], [0.0, -sp, -cp], [0.0, cp, -sp]])
    return (rx, ry, rz), (drx, dry, drz)


def euler_rotation(psi):
    (rx, ry, rz), _ = _elementary(psi)
    return rx @ ry @ rz


def euler_rotation_partial(psi, axis):
    """``dR/dpsi_axis`` with ``axis`` 0, 1, 2 for alpha, beta, phi."""
    (rx, ry, rz), (drx, dry, drz) = _elementary(psi)
    if axis == 0:
        return rx @ ry @ drz
    if axis == 1:
        return rx @ dry @ rz
    if axis == 2:
        return drx @ ry @ rz
    raise ValueError(f"axis must be 0, 1 or 2, got {axis!r}")


def euler_rotation_partials(psi):
    """All three partials stacked, shape ``(3, 3, 3)`` indexed ``[axis]``."""
    (rx, ry, rz), (drx, dry, drz) = _elementary(psi)
    return np.stack([rx @ ry @ drz, rx @ dry @ rz, drx @ ry @ rz])


@dataclass(frozen=True)
class ArrayGeometry:
    """Static layout of the BS array and the IRS panel (reference pose)."""

    bs_center: np.ndarray
    bs_offsets: np.ndarray  # (M, 3)
    irs_center: np.ndarray
    irs_offsets: np.ndarray  # (N, 3), orthogonal to ref_normal
    ref_normal: np.ndarray
    wavelength: float
    irs_spacing: float
    irs_side_count: int

    @property
    def num_bs(self):
        return self.bs_offsets.shape[0]

    @property
    def num_irs(self):
        return self.irs_offsets.shape[0]

    @property
    def wavenumber(self):
        return 2 * np.pi / self.wavelength

    @property
    def bs_positions(self):
        return self.bs_center + self.bs_offsets

    @property
    def side_length(self):
        return (self.irs_side_count - 1) * self.irs_spacing

    @property
    def diagonal(self):
        return self.side_length * np.sqrt(2)

    @property
    def bs_diagonal(self):
        spread = self.bs_offsets.max(axis=0) - self.bs_offsets.min(axis=0)
        return float(np.linalg.norm(spread))

    @property
    def distance(self):
        """IRS-BS center distance ``d_RB``."""
        return float(np.linalg.norm(self.bs_center - self.irs_center))

    @property
    def xi(self):
        """Aperture-to-distance ratio ``D_R / d_RB``."""
        return self.diagonal / self.distance

    @property
    def rayleigh_distance(self):
        return 2 * self.diagonal ** 2 / self.wavelength

    def with_irs_distance(self, distance):
        """Same panel moved along the current BS-IRS line to a new distance."""
        direction = (self.irs_center - self.bs_center) / self.distance
        center = self.bs_center + distance * direction
        return ArrayGeometry(self.bs_center, self.bs_offsets, center, self.irs_offsets,
                             self.ref_normal, self.wavelength, self.irs_spacing,
                             self.irs_side_count)


def centered_grid(count, spacing):
    return (np.arange(count) - (count - 1) / 2) * spacing


def irs_plane_basis(normal):
    """Orthonormal in-plane axes: global z made orthogonal to ``normal``, then ``normal x u``."""
    normal = np.asarray(normal, dtype=float)
    seed = np.array([0.0, 0.0, 1.0])
    u = seed - normal * (normal @ seed)
    if np.linalg.norm(u) < 1e-9:
        seed = np.array([1.0, 0.0, 0.0])
        u = seed - normal * (normal @ seed)
    u /= np.linalg.norm(u)
    w = np.cross(normal, u)
    return u, w


def make_geometry(bs_center, irs_center, bs_nx, bs_nz, bs_spacing, irs_side_count,
                  irs_spacing, wavelength):
    bs_center = np.asarray(bs_center, dtype=float)
    irs_center = np.asarray(irs_center, dtype=float)
    diff = bs_center - irs_center
    dist = np.linalg.norm(diff)
    if dist <= 0:
        raise ValueError("BS and IRS centers coincide")
    normal = diff / dist

    gx, gz = np.meshgrid(centered_grid(bs_nx, bs_spacing), centered_grid(bs_nz, bs_spacing),
                         indexing="ij")
    bs_offsets = np.stack([gx.ravel(), np.zeros(gx.size), gz.ravel()], axis=1)

    u, w = irs_plane_basis(normal)
    grid = centered_grid(irs_side_count, irs_spacing)
    gu, gw = np.meshgrid(grid, grid, indexing="ij")
    irs_offsets = gu.reshape(-1, 1) * u + gw.reshape(-1, 1) * w

    return ArrayGeometry(bs_center, bs_offsets, irs_center, irs_offsets, normal,
                         float(wavelength), float(irs_spacing), int(irs_side_count))


def build_geometry(config):
    """Array geometry for a :class:`~rotirs.config.ScenarioConfig`."""
    lam = config.wavelength
    bs_spacing = config.bs_spacing if config.bs_spacing is not None else lam / 2
    irs_spacing = config.irs_spacing if config.irs_spacing is not None else lam / 2
    return make_geometry(config.bs_center, config.irs_center, config.bs_nx, config.bs_nz,
                         bs_spacing, config.irs_side_count, irs_spacing, lam)


def irs_element_positions(geom, psi):
    return geom.irs_center + geom.irs_offsets @ euler_rotation(psi).T


def irs_normal(geom, psi):
    return euler_rotation(psi) @ geom.ref_normal


def visibility(geom, psi):
    """``g_vis(psi) = n(psi)^T (b_0 - r_0)``; feasible when >= 0."""
    return float(irs_normal(geom, psi) @ (geom.bs_center - geom.irs_center))


def visibility_gradient(geom, psi):
    partials = euler_rotation_partials(psi)
    return partials @ geom.ref_normal @ (geom.bs_center - geom.irs_center)
