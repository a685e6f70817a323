import numpy as np
import pytest

from conftest import central_difference, front_model, make_model, rel_err
from rotirs.channel import (
    ChannelModel,
    GainPattern,
    InfeasibleOrientation,
    build_scenario,
    channel_derivative_boresight,
    channel_derivative_orientation,
    composite_channel,
    element_gain,
    element_gain_sqrt_derivative_factor,
    far_field_ok,
    irs_bs_channel,
    irs_bs_channel_farfield,
    pair_distance_derivative,
    sample_scenario,
    user_bs_channel,
    user_irs_channel,
)
from rotirs.config import load_config
from rotirs.geometry import (
    angles_from_boresight,
    boresight_vector,
    build_geometry,
    euler_rotation,
    make_geometry,
)

RNG = np.random.default_rng(99)


# -- gain pattern ---------------------------------------------------------------

def test_element_gain_examples():
    assert element_gain(GainPattern(5), 1.0) == 22.0
    assert np.isclose(element_gain(GainPattern(6), 0.5), 26 * 0.5 ** 12)
    assert np.isclose(element_gain(GainPattern(6), 0.5), 6.3477e-3, rtol=1e-4)
    assert element_gain(GainPattern(5), -0.3) == 0.0


def test_gain_pattern_cutoff_continuity_and_normalization():
    pat = GainPattern(5)
    assert np.all(pat.gain(np.linspace(-1, 0, 11)) == 0)
    assert pat.gain(1e-9) < 1e-80
    for p in (0.5, 1, 5, 6):
        # peak chosen so the pattern integrates to 4 pi over the sphere
        c = np.linspace(0, 1, 200_001)
        integral = 2 * np.pi * np.trapezoid(GainPattern(p).gain(c), c)
        assert np.isclose(integral, 4 * np.pi, rtol=1e-6)
    with pytest.raises(ValueError):
        GainPattern(0.4)


def test_sqrt_gain_derivative_examples():
    assert np.isclose(element_gain_sqrt_derivative_factor(GainPattern(6), 1.0), 6 * np.sqrt(26))
    assert np.isclose(element_gain_sqrt_derivative_factor(GainPattern(6), 1.0), 30.594, rtol=1e-4)
    assert element_gain_sqrt_derivative_factor(GainPattern(5), 1e-7) == 0.0
    assert element_gain_sqrt_derivative_factor(GainPattern(5), -0.5) == 0.0
    pat = GainPattern(5)
    fd = central_difference(lambda c: pat.sqrt_gain(c[0]), np.array([0.6]))[0]
    assert rel_err(element_gain_sqrt_derivative_factor(pat, 0.6), fd) < 1e-6


# -- scenarios ------------------------------------------------------------------

def _arrays(scenario):
    out = [scenario.users, scenario.powers]
    for ps in (scenario.direct, scenario.irs):
        out += [ps.scatterers, ps.distance, ps.direction, ps.gain, ps.phase]
    return out


def test_sample_scenario_deterministic_and_shaped(default_config):
    a, b = sample_scenario(default_config, 7), sample_scenario(default_config, 7)
    for x, y in zip(_arrays(a), _arrays(b)):
        assert x.tobytes() == y.tobytes()
    assert a.direct.distance.shape == (4, 4) and a.irs.distance.shape == (4, 4)
    c = sample_scenario(default_config, 8)
    assert not np.array_equal(a.users, c.users)


def test_sampled_users_follow_laws(default_config):
    geom = build_geometry(default_config)
    az, ground = [], []
    for seed in range(200):
        s = sample_scenario(default_config, seed, geom)
        rel = s.users - geom.bs_center
        az.extend(np.degrees(np.arctan2(rel[:, 0], rel[:, 1])))
        ground.extend(np.hypot(rel[:, 0], rel[:, 1]))
        assert far_field_ok(s, geom)
        assert np.allclose(s.users[:, 2], default_config.user_height)
    assert -60 <= min(az) and max(az) <= 60 and max(az) - min(az) > 110
    assert default_config.user_dist_min <= min(ground) and max(ground) <= default_config.user_dist_max


def test_first_path_is_los_and_consistent(default_config):
    geom = build_geometry(default_config)
    s = sample_scenario(default_config, 3, geom)
    for ps, rx in ((s.direct, geom.bs_center), (s.irs, geom.irs_center)):
        d = np.linalg.norm(rx - s.users, axis=1)
        assert np.allclose(ps.distance[:, 0], d, rtol=1e-9)
        assert np.allclose(ps.direction[:, 0], (rx - s.users) / d[:, None], atol=1e-9)
        lam = geom.wavelength
        assert np.allclose(np.abs(ps.gain[:, 0]), lam / (4 * np.pi * ps.distance[:, 0]))
        assert np.allclose(np.abs(ps.gain[:, 1:]),
                           default_config.kappa_nlos * lam / (4 * np.pi * ps.distance[:, 1:]))
        assert np.all(np.isnan(ps.scatterers[:, 0]))


# -- user to BS -----------------------------------------------------------------

def _single_user(config, user, geom, **kw):
    cfg = config.replace(num_users=1, **kw)
    return build_scenario(cfg, np.asarray(user, dtype=float)[None], np.random.default_rng(0), geom)


def test_user_bs_single_los_magnitude():
    cfg = load_config(bs_nx=1, bs_nz=1, paths_direct=1, paths_irs=1)
    geom = build_geometry(cfg)
    user = geom.bs_center + np.array([0.0, 30.0, 0.0])
    s = _single_user(cfg, user, geom)
    q = s.direct.direction[0, 0]
    theta = angles_from_boresight(-q)[None]
    h = user_bs_channel(s, geom, theta)
    expected = 10 ** (-25 / 20) * np.sqrt(26) * geom.wavelength / (4 * np.pi * 30.0)
    assert np.isclose(abs(h[0, 0]), expected, rtol=1e-12)
    sideways = np.array([[np.pi / 2, 0.0]])  # boresight orthogonal to the arrival direction
    # cos(pi/2) rounds to 6e-17, so the pattern leaves ~1e-100 instead of an exact zero
    assert np.abs(user_bs_channel(s, geom, sideways)).max() < 1e-90


def test_user_bs_two_paths_hand_sum():
    cfg = load_config(bs_nx=2, bs_nz=2, paths_direct=2, paths_irs=1)
    geom = build_geometry(cfg)
    s = _single_user(cfg, geom.bs_center + np.array([5.0, 30.0, -8.5]), geom)
    theta = np.column_stack([RNG.uniform(0, 0.5, 4), RNG.uniform(0, 2 * np.pi, 4)])
    F = boresight_vector(theta)
    k = 2 * np.pi / geom.wavelength
    ref = np.zeros(4, dtype=complex)
    for ell in range(2):
        q = s.direct.direction[0, ell]
        c = s.direct_amplitude * s.direct.gain[0, ell]
        for m in range(4):
            g = element_gain(GainPattern(6), -F[m] @ q)
            ref[m] += c * np.sqrt(g) * np.exp(-1j * k * q @ geom.bs_offsets[m])
    assert np.allclose(user_bs_channel(s, geom, theta)[0], ref, rtol=1e-12, atol=0)


# -- user to IRS ----------------------------------------------------------------

def test_user_irs_los_entries_equal_magnitude(default_config):
    geom = build_geometry(default_config)
    user = geom.irs_center + 30 * (geom.ref_normal + np.array([0.3, 0.0, 0.1]))
    s = _single_user(default_config, user, geom, paths_direct=1, paths_irs=1)
    mags = []
    for psi in (np.zeros(3), np.array([0.2, -0.1, 0.15])):
        h = user_irs_channel(s, geom, psi)[0]
        spread = np.abs(h).max() - np.abs(h).min()
        assert spread < 1e-12 * np.abs(h).max()
        c = -s.irs.direction[0, 0] @ (euler_rotation(psi) @ geom.ref_normal)
        expected = abs(s.irs.gain[0, 0]) * np.sqrt(element_gain(GainPattern(5), c))
        assert np.isclose(np.abs(h[0]), expected, rtol=1e-12)
        mags.append(np.abs(h[0]))
    assert mags[0] != mags[1]  # rotation changes the common gain factor only


def test_user_irs_behind_panel_is_zero(default_config):
    geom = build_geometry(default_config)
    user = geom.irs_center - 30 * geom.ref_normal
    s = _single_user(default_config, user, geom, paths_direct=1, paths_irs=1)
    assert np.all(user_irs_channel(s, geom, np.zeros(3)) == 0)


# -- IRS to BS ------------------------------------------------------------------

def test_irs_bs_single_pair_peak():
    cfg = load_config(bs_nx=1, bs_nz=1, irs_side_count=1, irs_center=(0.0, 6.0, 10.0))
    geom = build_geometry(cfg)
    s = sample_scenario(cfg, 0, geom)
    H = irs_bs_channel(s, geom, np.zeros((1, 2)), np.zeros(3))
    expected = geom.wavelength * np.sqrt(26 * 22) / (4 * np.pi * 6.0)
    assert np.isclose(abs(H[0, 0]), expected, rtol=1e-12)


def test_irs_bs_entries_bounded(default_config):
    geom = build_geometry(default_config)
    model = make_model(default_config, 0, geom)
    for _ in range(5):
        theta = np.column_stack([RNG.uniform(0, 1, 16), RNG.uniform(0, 2 * np.pi, 16)])
        psi = RNG.uniform(-0.5, 0.5, 3)
        state = model.irs_state(psi)
        H = model.cascade(boresight_vector(theta), state)
        bound = geom.wavelength * np.sqrt(26 * 22) / (4 * np.pi * state.dist.min())
        assert np.abs(H).max() <= bound


def test_irs_bs_rejects_invisible_orientation(default_config):
    geom = build_geometry(default_config)
    s = sample_scenario(default_config, 0, geom)
    # a half turn about the vertical axis points the panel away from the BS
    with pytest.raises(InfeasibleOrientation):
        irs_bs_channel(s, geom, np.zeros((16, 2)), np.array([np.pi, 0, 0]))


def _far_geometry(config, xi):
    base = build_geometry(config)
    return base.with_irs_distance(base.diagonal / xi)


def _ff_matrix(s, geom, theta, psi):
    c, u_b, u_r = irs_bs_channel_farfield(s, geom, theta, psi)
    return c * np.outer(u_b, u_r)


def test_farfield_factors_rank_one_and_common_gain(default_config):
    geom = build_geometry(default_config)
    s = sample_scenario(default_config, 0, geom)
    theta = np.tile([0.3, 1.0], (16, 1))
    c, u_b, u_r = irs_bs_channel_farfield(s, geom, theta, np.array([0.1, 0.0, 0.05]))
    sv = np.linalg.svd(c * np.outer(u_b, u_r), compute_uv=False)
    assert sv[1] < 1e-12 * sv[0]
    assert np.ptp(np.abs(u_b)) < 1e-12 * np.abs(u_b).max()


def _ff_gap(config, xi):
    geom = _far_geometry(config, xi)
    s = sample_scenario(config, 0, geom)
    u = (geom.irs_center - geom.bs_center) / geom.distance
    theta = angles_from_boresight(np.tile(u, (geom.num_bs, 1)))
    H = irs_bs_channel(s, geom, theta, np.zeros(3))
    Hff = _ff_matrix(s, geom, theta, np.zeros(3))
    # quadratic (Fresnel) phase dropped by the plane-wave model
    k = 2 * np.pi / geom.wavelength
    perp2 = lambda r: np.sum(r ** 2, axis=1) - (r @ u) ** 2
    phi = k * (perp2(geom.bs_offsets)[:, None] + perp2(geom.irs_offsets)[None, :]) / (2 * geom.distance)
    predicted = np.sqrt(np.mean(np.abs(1 - np.exp(1j * phi)) ** 2))
    return rel_err(Hff, H), np.max(np.abs(Hff - H) / np.abs(H)), predicted


@pytest.mark.xfail(strict=True, reason="a 21x21 half-wavelength panel still carries ~0.1 rad of "
                   "quadratic phase at 100 diagonals, so the gap is ~5% rather than < 2%")
def test_farfield_gap_below_two_percent_at_xi_001(default_config):
    frob, entry, _ = _ff_gap(default_config, 0.01)
    assert frob < 0.02 and entry < 0.02


def test_farfield_gap_matches_fresnel_phase_estimate(default_config):
    for xi in (0.01, 0.005, 0.002):
        frob, _, predicted = _ff_gap(default_config, xi)
        assert abs(frob / predicted - 1) < 0.05
    frob, entry, _ = _ff_gap(default_config, 0.002)
    assert frob < 0.02 and entry < 0.05


def test_nearfield_to_farfield_error_decreases(default_config):
    errs = []
    for xi in np.geomspace(0.1, 0.001, 5):
        geom = _far_geometry(default_config, xi)
        s = sample_scenario(default_config, 0, geom)
        theta = angles_from_boresight(
            np.tile((geom.irs_center - geom.bs_center) / geom.distance, (16, 1)))
        H = irs_bs_channel(s, geom, theta, np.zeros(3))
        errs.append(np.max(np.abs(_ff_matrix(s, geom, theta, np.zeros(3)) - H) / np.abs(H)))
    assert np.all(np.diff(errs) < 0)


# -- composite channel ------------------------------------------------------------

def test_composite_channel_examples():
    M, N, K = 3, 4, 2
    hB = RNG.normal(size=(K, M)) + 1j * RNG.normal(size=(K, M))
    H = RNG.normal(size=(M, N)) + 1j * RNG.normal(size=(M, N))
    hR = RNG.normal(size=(K, N)) + 1j * RNG.normal(size=(K, N))
    v = np.exp(1j * RNG.uniform(0, 2 * np.pi, N))
    assert np.array_equal(composite_channel(hB, H, np.zeros((K, N)), v), hB)
    one = composite_channel(np.zeros((K, M)), H[:, :1], hR[:, :1], v[:1])
    assert np.allclose(one, v[0] * hR[:, :1] * H[:, 0][None, :])
    v2 = np.exp(1j * RNG.uniform(0, 2 * np.pi, N))
    lin = composite_channel(hB, H, hR, v + v2, check=False) - hB
    assert np.allclose(lin, (composite_channel(hB, H, hR, v) - hB)
                       + (composite_channel(hB, H, hR, v2) - hB))
    h = composite_channel(hB, H, hR, v)
    for k in range(K):
        assert np.allclose(h[k], hB[k] + H @ np.diag(v) @ hR[k])
    with pytest.raises(ValueError):
        composite_channel(hB, H, hR, 2 * v)


def test_composite_matches_definition(small_config):
    model = make_model(small_config, 1)
    F = boresight_vector(np.column_stack([RNG.uniform(0, 0.5, 4), RNG.uniform(0, 6, 4)]))
    state = model.irs_state(np.array([0.1, 0.2, -0.1]))
    chan = model.channels(F, state=state)
    v = np.exp(1j * RNG.uniform(0, 2 * np.pi, 25))
    h = chan.composite(v)
    for k in range(2):
        assert np.allclose(h[k], chan.h_direct[k] + chan.H @ np.diag(v) @ chan.h_irs[k])
        assert np.allclose(chan.cascade_columns(k) @ v, chan.H @ np.diag(v) @ chan.h_irs[k])


# -- derivatives --------------------------------------------------------------------

def _interior_point(model, rng):
    M, N = model.geom.num_bs, model.geom.num_irs
    theta = np.column_stack([rng.uniform(0.1, 0.8, M), rng.uniform(0, 2 * np.pi, M)])
    psi = rng.uniform(-0.3, 0.3, 3)
    v = np.exp(1j * rng.uniform(0, 2 * np.pi, N))
    return theta, psi, v


def test_boresight_derivative_matches_fd(small_config):
    model = front_model(small_config)
    rng = np.random.default_rng(5)
    for _ in range(50):
        theta, psi, v = _interior_point(model, rng)
        F = boresight_vector(theta)
        state = model.irs_state(psi)
        dh = model.composite_derivative_f(F, state, v)  # (K, M, 3)
        for m in range(model.geom.num_bs):
            def h_of(f):
                G = F.copy()
                G[m] = f
                return composite_channel(model.direct(G), model.cascade(G, state), state.h_irs, v)[:, m]
            fd = central_difference(h_of, F[m])
            assert rel_err(dh[:, m], fd) < 1e-4


def test_orientation_derivative_matches_fd(small_config):
    model = front_model(small_config, 1)
    rng = np.random.default_rng(6)
    for _ in range(50):
        theta, psi, v = _interior_point(model, rng)
        F = boresight_vector(theta)
        dh = model.composite_derivative_psi(F, model.irs_state(psi), v)

        def h_of(x):
            st = model.irs_state(x)
            return composite_channel(model.direct(F), model.cascade(F, st), st.h_irs, v)
        assert rel_err(dh, central_difference(h_of, psi)) < 1e-4


def test_derivative_wrappers_and_zero_cases(small_config):
    model = front_model(small_config, 2)
    theta, psi, v = _interior_point(model, np.random.default_rng(7))
    s, geom = model.scenario, model.geom
    assert np.allclose(channel_derivative_boresight(s, geom, theta, psi, v),
                       model.composite_derivative_f(boresight_vector(theta), model.irs_state(psi), v))
    no_irs = s.without_irs()
    d_psi = channel_derivative_orientation(no_irs, geom, theta, psi, v)
    assert np.all(d_psi == 0)
    d_f = channel_derivative_boresight(no_irs, geom, theta, psi, v)
    direct_only = ChannelModel(no_irs, geom).direct_derivative(boresight_vector(theta))
    assert np.allclose(d_f, direct_only)
    # boresights pointing away from every arrival direction: zero rows
    back = np.tile([np.pi / 2, 0.0], (geom.num_bs, 1))
    away = ChannelModel(no_irs.cascaded_los(), geom)
    assert np.all(away.composite_derivative_f(boresight_vector(back), away.irs_state(psi), v) == 0)


def test_pair_distance_derivative_matches_fd(default_config):
    geom = build_geometry(default_config.replace(irs_side_count=5))
    for _ in range(10):
        psi = RNG.uniform(-0.5, 0.5, 3)

        def dist(x):
            R = euler_rotation(x)
            el = geom.irs_center + geom.irs_offsets @ R.T
            return np.linalg.norm(geom.bs_positions[:, None] - el[None], axis=2)
        assert rel_err(pair_distance_derivative(geom, psi), central_difference(dist, psi)) < 1e-6


def test_make_geometry_rejects_coincident_centers():
    with pytest.raises(ValueError):
        make_geometry((0, 0, 0), (0, 0, 0), 2, 2, 0.025, 3, 0.025, 0.05)
