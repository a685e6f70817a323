import numpy as np
import pytest

from rotirs.channel import ChannelModel, build_scenario, sample_scenario
from rotirs.config import load_config
from rotirs.geometry import build_geometry


def central_difference(fun, x, h=1e-6):
    """Central differences of a (possibly complex, array-valued) function of a real vector."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


@pytest.fixture(scope="session")
def default_config():
    return load_config()


@pytest.fixture(scope="session")
def small_config():
    """2x2 BS array, 5x5 panel, two users: fast but structurally complete."""
    return load_config(bs_nx=2, bs_nz=2, irs_side_count=5, num_users=2)


def make_model(config, seed=0, geom=None):
    geom = build_geometry(config) if geom is None else geom
    return ChannelModel(sample_scenario(config, seed, geom), geom, config.delta_boundary)


def front_model(config, seed=0, distance=(25, 40), spread=0.4):
    """Users in front of the panel, so the reflected link and every derivative term are active."""
    geom = build_geometry(config)
    rng = np.random.default_rng(seed)
    users = []
    for _ in range(config.num_users):
        d = geom.ref_normal + rng.uniform(-spread, spread, 3)
        users.append(geom.irs_center + rng.uniform(*distance) * d / np.linalg.norm(d))
    return ChannelModel(build_scenario(config, np.array(users), rng, geom), geom,
                        config.delta_boundary)


ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail):
    """Keep one summary line per acceptance criterion for the end-of-run report."""
    ACCEPTANCE_LINES.append(f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
    print(ACCEPTANCE_LINES[-1])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
