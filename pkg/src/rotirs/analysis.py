"""Reflected-channel power, rotation gains and near-field alignment statistics.

Single-user quantities are evaluated for one user of a scenario (``user=0``
by default).  Far-field (``"ff"``) powers use the rank-one IRS-BS model
``c_RB u_B u_R^T``; near-field (``"nf"``) powers use the exact spherical-wave
cascade and a best-of-restarts coordinate ascent for the optimal phases.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .channel import ChannelModel, GainPattern, build_scenario
from .geometry import (
    F_REF,
    boresight_vector,
    euler_rotation,
    make_geometry,
    visibility,
)
from .manifold import random_phases
from .mu_solver import Controls, cap_project
from .su_solver import bcd_phase_sweep, cascade_columns, su_alternating_optimize


class UndefinedGain(ZeroDivisionError):
    """The baseline reflected power is zero, so gain ratios are undefined."""


@dataclass(frozen=True)
class ReflectedPowerBreakdown:
    """``power = N^2 * column_power * efficiency``."""

    power: float
    column_power: float
    efficiency: float  # nan when the reflected channel vanishes
    model: str
    num_elements: int
    upper_bound: float = np.nan  # N^2 * column_power
    lower_bound_only: bool = False  # power came from a finite multi-start search

    @property
    def degenerate(self):
        return not self.column_power > 0


def _breakdown(power, column_power, n, model, lower_bound_only=False):
    eff = power / (n * n * column_power) if column_power > 0 else np.nan
    return ReflectedPowerBreakdown(float(power), float(column_power), float(eff), model, n,
                                   float(n * n * column_power), lower_bound_only)


def reference_pose(geom):
    return np.tile(F_REF, (geom.num_bs, 1)), np.zeros(3)


# -- far field -------------------------------------------------------------------

def farfield_cascade(model: ChannelModel, F, psi, user=0):
    """Rank-one reflected channel ``A_FF = c_RB u_B s_R^T`` with ``s_R = u_R * h_R``."""
    c_rb, u_b, u_r = model.farfield_factors(F, psi)
    s = u_r * model.irs_state(psi).h_irs[user]
    return c_rb * np.outer(u_b, s)


def reflected_power_ff(model: ChannelModel, F, psi, user=0):
    c_rb, u_b, u_r = model.farfield_factors(F, psi)
    s = np.abs(u_r * model.irs_state(psi).h_irs[user])
    scale = abs(c_rb) ** 2 * np.sum(np.abs(u_b) ** 2)
    n = s.size
    return _breakdown(scale * s.sum() ** 2, scale * np.sum(s ** 2) / n, n, "FF")


def separability_residual(j11, j22, j12, j21):
    a, b = j11 * j22, j12 * j21
    top = max(abs(a), abs(b))
    return 0.0 if top == 0 else abs(a - b) / top


def ff_separability_check(model: ChannelModel, pose1, pose2, power=None, user=0):
    """Four-point residual ``|J11 J22 - J12 J21| / max``; zero when ``J = a(F) b(psi)``.

    ``pose`` is ``(F, psi)``; ``power`` maps ``(F, psi)`` to a reflected
    power and defaults to the far-field closed form.
    """
    if power is None:
        def power(F, psi):
            return reflected_power_ff(model, F, psi, user).power
    (F1, p1), (F2, p2) = pose1, pose2
    return separability_residual(power(F1, p1), power(F2, p2), power(F1, p2), power(F2, p1))


# -- near field ------------------------------------------------------------------

def reflected_columns(model: ChannelModel, F, psi, user=0):
    state = model.irs_state(psi)
    return cascade_columns(state.h_irs[user], model.cascade(F, state))


def best_phase_power(A, restarts=8, seed=0, sweeps=200, tol=1e-12):
    """Best ``||A v||^2`` over coordinate-ascent runs from random phases."""
    rng = np.random.default_rng(seed)
    zero = np.zeros(A.shape[0], dtype=complex)
    best, best_v = -np.inf, None
    for _ in range(restarts):
        v = bcd_phase_sweep(zero, A, random_phases(A.shape[1], rng), sweeps, tol)
        val = float(np.sum(np.abs(A @ v) ** 2))
        if val > best:
            best, best_v = val, v
    return best, best_v


def reflected_power_nf(model: ChannelModel, F, psi, user=0, restarts=8, seed=0):
    """Near-field breakdown; ``power`` is a certified lower bound on the optimum."""
    A = reflected_columns(model, F, psi, user)
    n = A.shape[1]
    column_power = float(np.sum(np.abs(A) ** 2) / n)
    power, _ = best_phase_power(A, restarts, seed) if column_power > 0 else (0.0, None)
    return _breakdown(power, column_power, n, "NF", lower_bound_only=True)


# -- rotation optimizers and gains ---------------------------------------------------

def _single_user(model, user):
    if model.num_users == 1:
        return model
    return ChannelModel(model.scenario.select_users(user), model.geom, model.delta)


def nf_rotation_optimizer(controls=None, max_iters=100, seed=0):
    """Hook running the single-user alternating optimizer on the reflected link."""
    controls = Controls() if controls is None else controls

    def run(model, rotate_bs, rotate_irs, user=0):
        single = _single_user(model, user)
        reflected_only = ChannelModel(single.scenario.without_direct(), single.geom, single.delta)
        report = su_alternating_optimize(reflected_only, controls, seed=seed, rotate_bs=rotate_bs,
                                         rotate_irs=rotate_irs, max_iters=max_iters)
        return boresight_vector(report.theta), report.psi
    return run


def ff_rotation_optimizer(controls=None):
    """Hook maximizing the far-field power block by block.

    The BS block has a closed form (every boresight toward the IRS, projected
    onto the cap); the IRS block is a smooth three-variable problem solved by
    SLSQP on ``log J_FF`` with the visibility constraint.
    """
    controls = Controls() if controls is None else controls

    def run(model, rotate_bs, rotate_irs, user=0):
        geom = model.geom
        F, psi = reference_pose(geom)
        if rotate_bs:
            toward = (geom.irs_center - geom.bs_center) / geom.distance
            F = np.tile(cap_project(toward, controls.theta_max), (geom.num_bs, 1))
        if rotate_irs:
            def neg_log(x):
                if visibility(geom, x) < 0:
                    return 1e3  # SLSQP may probe outside the constraint
                val = reflected_power_ff(model, F, x, user).power
                return -np.log(val) if val > 0 else 1e3
            box = np.asarray(controls.psi_max)
            best = None
            # a few starts guard against the flat back-lobe region
            starts = [np.zeros(3)] + [s * box for s in ([.5, 0, 0], [-.5, 0, 0], [0, .5, 0],
                                                         [0, -.5, 0], [0, 0, .5], [0, 0, -.5])]
            for x0 in starts:
                if visibility(geom, x0) < 0:
                    continue
                with warnings.catch_warnings():
                    # SLSQP clips its own finite-difference probes to the bounds
                    warnings.filterwarnings("ignore", "Values in x were outside bounds")
                    res = minimize(neg_log, x0, method="SLSQP", bounds=list(zip(-box, box)),
                                   constraints=[{"type": "ineq",
                                                 "fun": lambda x: visibility(geom, x)}],
                                   options={"ftol": 1e-15, "maxiter": 500})
                x = np.clip(res.x, -box, box)
                if visibility(geom, x) >= 0 and (best is None or neg_log(x) < neg_log(best)):
                    best = x
            if best is not None and neg_log(best) <= neg_log(psi):
                psi = best
        return F, psi
    return run


@dataclass
class RotationGains:
    bs: float
    irs: float
    dual: float
    baseline: ReflectedPowerBreakdown
    optimized: dict = field(default_factory=dict)  # name -> (F, psi, breakdown)


def rotation_gains(model: ChannelModel, kind="nf", optimizer=None, user=0, restarts=8, seed=0,
                   controls=None):
    """BS-only, IRS-only and dual rotation gains over the reference pose.

    ``optimizer(model, rotate_bs, rotate_irs, user)`` returns ``(F, psi)``.
    """
    kind = kind.lower()
    if kind == "ff":
        def power(F, psi):
            return reflected_power_ff(model, F, psi, user)
        optimizer = ff_rotation_optimizer(controls) if optimizer is None else optimizer
    elif kind == "nf":
        def power(F, psi):
            return reflected_power_nf(model, F, psi, user, restarts, seed)
        optimizer = nf_rotation_optimizer(controls, seed=seed) if optimizer is None else optimizer
    else:
        raise ValueError(f"kind must be 'ff' or 'nf', got {kind!r}")
    base = power(*reference_pose(model.geom))
    if not base.power > 0:
        raise UndefinedGain("reference-pose reflected power is zero")
    out = RotationGains(1.0, 1.0, 1.0, base)
    for name, flags in (("bs", (True, False)), ("irs", (False, True)), ("dual", (True, True))):
        F, psi = optimizer(model, *flags, user)
        bd = power(F, psi)
        out.optimized[name] = (F, psi, bd)
        setattr(out, name, bd.power / base.power)
    return out


@dataclass(frozen=True)
class DualDecomposition:
    column_gain: float  # G_p
    efficiency_gain: float  # G_beta
    dual_gain: float
    baseline: ReflectedPowerBreakdown
    optimized: ReflectedPowerBreakdown


def nf_dual_decomposition(model: ChannelModel, F_opt, psi_opt, F0=None, psi0=None, user=0,
                          restarts=8, seed=0):
    """Split the dual gain into column-power and combining-efficiency factors."""
    if F0 is None or psi0 is None:
        F0, psi0 = reference_pose(model.geom)
    base = reflected_power_nf(model, F0, psi0, user, restarts, seed)
    opt = reflected_power_nf(model, F_opt, psi_opt, user, restarts, seed)
    if not base.power > 0:
        raise UndefinedGain("reference-pose reflected power is zero")
    return DualDecomposition(opt.column_power / base.column_power,
                             opt.efficiency / base.efficiency,
                             opt.power / base.power, base, opt)


# -- alignment statistics -------------------------------------------------------------

@dataclass(frozen=True)
class AlignmentStats:
    mean_alignment: float  # rho bar
    alignment_spread: float  # Delta
    gain_variance: float  # S
    aggregate_gain: float  # G
    mean_gain: float  # mean reflection gain
    mean_square_alignment: float
    xi: float


def alignment_matrix(geom, psi):
    """``rho[m, n] = n(psi)^T dhat_{n,m}`` (element n toward antenna m)."""
    R = euler_rotation(psi)
    normal = R @ geom.ref_normal
    elements = geom.irs_center + geom.irs_offsets @ R.T
    diff = geom.bs_positions[:, None, :] - elements[None, :, :]
    return (diff @ normal) / np.linalg.norm(diff, axis=2)


def alignment_stats(geom, psi, p_irs=5.0):
    rho = alignment_matrix(geom, psi)
    pattern = GainPattern(p_irs)
    gains = pattern.gain(rho)
    mean = float(rho.mean())
    return AlignmentStats(
        mean_alignment=mean,
        alignment_spread=float(np.sqrt(np.mean((rho - mean) ** 2))),
        gain_variance=float(np.mean((gains - gains.mean()) ** 2)),
        aggregate_gain=float(pattern.peak * np.sum(rho ** (2 * p_irs))),
        mean_gain=float(gains.mean()),
        mean_square_alignment=float(np.mean(rho ** 2)),
        xi=float(geom.xi),
    )


def gain_bounds(stats: AlignmentStats, num_pairs, p_irs):
    """``(G, MN G0 rho_bar, MN G0 (1 - Delta^2))``."""
    peak = GainPattern(p_irs).peak
    return (stats.aggregate_gain, num_pairs * peak * stats.mean_alignment,
            num_pairs * peak * (1 - stats.alignment_spread ** 2))


def alignment_bounds_check(geom, p_irs=5.0, samples=200, xi_range=(0.071, 0.707), sweep_points=6,
                       psi_sweep=None, psi_max=np.pi / 3, seed=0, max_draws=100_000):
    """Pointwise gain inequalities on random poses plus the ``Delta / xi`` sweep.

    Random samples draw ``psi`` uniformly in the box and ``d_RB`` so that
    ``xi`` is log-uniform in ``xi_range``; draws where some pair has
    ``rho <= 0`` break the positive-alignment assumption and are redrawn.
    """
    rng = np.random.default_rng(seed)
    pairs = geom.num_bs * geom.num_irs
    D = geom.diagonal
    lo, hi = np.log(xi_range[0]), np.log(xi_range[1])
    slack = []
    draws = 0
    while len(slack) < samples and draws < max_draws:
        draws += 1
        psi = rng.uniform(-psi_max, psi_max, 3)
        g = geom.with_irs_distance(D / np.exp(rng.uniform(lo, hi)))
        rho = alignment_matrix(g, psi)
        if rho.min() <= 0:
            continue
        G, mid, top = gain_bounds(alignment_stats(g, psi, p_irs), pairs, p_irs)
        slack.append((mid - G, top - mid))
    slack = np.array(slack)
    # at the symmetric BS-facing pose the first-order spread vanishes and
    # Delta grows like xi^2, so the trend is measured at a tilted pose
    psi_sweep = np.array([np.pi / 6, 0.0, 0.0]) if psi_sweep is None else np.asarray(psi_sweep)
    xis = np.geomspace(*xi_range, sweep_points)
    spreads = np.array([alignment_stats(geom.with_irs_distance(D / x), psi_sweep, p_irs)
                        .alignment_spread for x in xis])
    slopes = spreads / xis
    tol = 1e-12 * pairs * GainPattern(p_irs).peak
    return {
        "samples": len(slack),
        "draws": draws,
        "min_slack_rho": float(slack[:, 0].min()),
        "min_slack_delta": float(slack[:, 1].min()),
        "inequalities_hold": bool(len(slack) == samples and np.all(slack >= -tol)),
        "xi": xis,
        "spread": spreads,
        "spread_per_xi": slopes,
        "slope_bounded": bool(slopes.max() <= 2 * slopes[0]),
    }


# -- decomposition experiment ------------------------------------------------------------

def irs_diagonal(config):
    spacing = config.irs_spacing if config.irs_spacing is not None else config.wavelength / 2
    return (config.irs_side_count - 1) * spacing * np.sqrt(2)


def on_axis_geometry(config, distance, offset_deg=0.0):
    """IRS at ``distance`` from the BS, ``offset_deg`` off the BS boresight toward -x."""
    lam = config.wavelength
    b0 = np.asarray(config.bs_center, dtype=float)
    bs_spacing = config.bs_spacing if config.bs_spacing is not None else lam / 2
    irs_spacing = config.irs_spacing if config.irs_spacing is not None else lam / 2
    t = np.deg2rad(offset_deg)
    direction = np.array([-np.sin(t), np.cos(t), 0.0])
    return make_geometry(b0, b0 + distance * direction, config.bs_nx, config.bs_nz, bs_spacing,
                         config.irs_side_count, irs_spacing, lam)


def oblique_user_scenario(config, geom, incidence_deg=50.0, user_distance=40.0, seed=0):
    """One LoS user seen by the IRS at ``incidence_deg`` off its reference normal.

    The user lies in the horizontal plane through the IRS center, on the +x
    side, so its position moves with the panel and only the IRS-BS link
    changes along a distance sweep.
    """
    t = np.deg2rad(incidence_deg)
    normal = geom.ref_normal
    side = np.cross(np.array([0.0, 0.0, 1.0]), normal)
    side /= np.linalg.norm(side)
    user = geom.irs_center + user_distance * (np.cos(t) * normal + np.sin(t) * side)
    cfg = config.replace(num_users=1, cascaded_los=True, paths_direct=1, paths_irs=1)
    return build_scenario(cfg, user[None], np.random.default_rng(seed), geom)


# calibrated layout for the decomposition experiment: IRS 30 deg off the BS
# broadside axis, user 30 deg off the IRS reference normal at 40 m
DECOMPOSITION_OFFSET_DEG = 30.0
DECOMPOSITION_INCIDENCE_DEG = 30.0
DECOMPOSITION_USER_DISTANCE = 40.0


def decomposition_sweep(config, xis, incidence_deg=DECOMPOSITION_INCIDENCE_DEG,
                        user_distance=DECOMPOSITION_USER_DISTANCE, restarts=8, seed=0,
                        controls=None, max_iters=100, offset_deg=DECOMPOSITION_OFFSET_DEG):
    """Rows of ``(xi, G_p, G_beta, eta_dual, beta_fix, beta_dual, ...)`` along a distance sweep."""
    controls = Controls.from_config(config) if controls is None else controls
    rows = []
    for xi in xis:
        geom = on_axis_geometry(config, irs_diagonal(config) / xi, offset_deg)
        scenario = oblique_user_scenario(config, geom, incidence_deg, user_distance, seed)
        model = ChannelModel(scenario, geom, config.delta_boundary)
        F_opt, psi_opt = nf_rotation_optimizer(controls, max_iters, seed)(model, True, True)
        dec = nf_dual_decomposition(model, F_opt, psi_opt, restarts=restarts, seed=seed)
        stats = alignment_stats(geom, psi_opt, config.p_irs)
        rows.append({
            "xi": float(geom.xi),
            "distance": geom.distance,
            "column_gain": dec.column_gain,
            "efficiency_gain": dec.efficiency_gain,
            "dual_gain": dec.dual_gain,
            "efficiency_fixed": dec.baseline.efficiency,
            "efficiency_dual": dec.optimized.efficiency,
            "mean_alignment": stats.mean_alignment,
            "alignment_spread": stats.alignment_spread,
            "gain_variance": stats.gain_variance,
            "psi_alpha": psi_opt[0], "psi_beta": psi_opt[1], "psi_phi": psi_opt[2],
        })
    return rows


# -- property suites ---------------------------------------------------------------------

def random_pose(geom, rng, theta_max=np.pi / 3, psi_max=(np.pi / 3,) * 3, max_draws=1000):
    """Random boresights in the tilt cap and a visible panel orientation."""
    M = geom.num_bs
    tilt = np.arccos(rng.uniform(np.cos(theta_max), 1.0, M))
    az = rng.uniform(0, 2 * np.pi, M)
    F = boresight_vector(np.stack([tilt, az], axis=1))
    box = np.asarray(psi_max, dtype=float)
    for _ in range(max_draws):
        psi = rng.uniform(-box, box)
        if visibility(geom, psi) >= 0:
            return F, psi
    return F, np.zeros(3)


def front_user_scenario(config, geom, psi, rng, distance=(20.0, 60.0), max_angle_deg=60.0):
    """One cascaded-LoS user in front of the panel at orientation ``psi``."""
    normal = euler_rotation(psi) @ geom.ref_normal
    u, w = np.linalg.svd(normal[None])[2][1:]
    t = np.arccos(rng.uniform(np.cos(np.deg2rad(max_angle_deg)), 1.0))
    a = rng.uniform(0, 2 * np.pi)
    direction = np.cos(t) * normal + np.sin(t) * (np.cos(a) * u + np.sin(a) * w)
    user = geom.irs_center + rng.uniform(*distance) * direction
    cfg = config.replace(num_users=1, cascaded_los=True, paths_direct=1, paths_irs=1)
    return build_scenario(cfg, user[None], rng, geom)


def farfield_separability_suite(config, pairs=100, seed=0):
    """Four-point separability residuals and LoS combining efficiency in the far-field model."""
    rng = np.random.default_rng(seed)
    geom = make_geometry(config.bs_center, config.irs_center, config.bs_nx, config.bs_nz,
                         config.wavelength / 2, config.irs_side_count, config.wavelength / 2,
                         config.wavelength)
    scenario = front_user_scenario(config, geom, np.zeros(3), rng)
    model = ChannelModel(scenario, geom, config.delta_boundary)
    residuals, efficiencies = [], []
    for _ in range(pairs):
        p1 = random_pose(geom, rng, config.theta_max, config.psi_max)
        p2 = random_pose(geom, rng, config.theta_max, config.psi_max)
        residuals.append(ff_separability_check(model, p1, p2))
        bd = reflected_power_ff(model, *p1)
        if not bd.degenerate:
            efficiencies.append(bd.efficiency)
    residuals, efficiencies = np.array(residuals), np.array(efficiencies)
    return {
        "pairs": pairs,
        "max_residual": float(residuals.max()),
        "max_efficiency_error": float(np.abs(efficiencies - 1).max()) if efficiencies.size else np.nan,
        "efficiency_samples": int(efficiencies.size),
    }


def power_bounds_suite(config, geometries=50, sizes=(9, 49, 441), draws=1000, restarts=8, seed=0):
    """Coherent ceiling ``N^2 p`` and multi-start floor ``N p`` on near-field reflected power.

    The floor is existential (a random-phase average), so the multi-start
    check is a statistical surrogate; ``floor_from_restarts`` flags that.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for n in sizes:
        side = int(round(np.sqrt(n)))
        if side * side != n:
            raise ValueError(f"panel size {n} is not a square")
        cfg = config.replace(irs_side_count=side)
        geom = make_geometry(cfg.bs_center, cfg.irs_center, cfg.bs_nx, cfg.bs_nz,
                             cfg.wavelength / 2, side, cfg.wavelength / 2, cfg.wavelength)
        for _ in range(geometries):
            F, psi = random_pose(geom, rng, cfg.theta_max, cfg.psi_max)
            model = ChannelModel(front_user_scenario(cfg, geom, psi, rng), geom, cfg.delta_boundary)
            A = reflected_columns(model, F, psi)
            column_power = float(np.sum(np.abs(A) ** 2) / n)
            v = np.exp(1j * rng.uniform(0, 2 * np.pi, (n, draws)))
            random_max = float(np.max(np.sum(np.abs(A @ v) ** 2, axis=0)))
            best, _ = best_phase_power(A, restarts, int(rng.integers(2 ** 31)))
            rows.append({"num_elements": n, "column_power": column_power,
                         "random_max_ratio": random_max / (n * n * column_power),
                         "optimized_ratio": best / (n * column_power)})
    ceiling = max(r["random_max_ratio"] for r in rows)
    floor = min(r["optimized_ratio"] for r in rows)
    return {
        "rows": rows,
        "max_ceiling_ratio": ceiling,
        "min_floor_ratio": floor,
        "ceiling_holds": bool(ceiling <= 1 + 1e-12),
        "floor_holds": bool(floor >= 1 - 1e-12),
        "floor_from_restarts": True,
    }
