"""Seeded Monte Carlo driver: benchmark schemes, parameter sweeps and CSV output.

A *cell* is one (sweep value, trial) pair.  All four schemes in a cell share
the scenario and the initial phases, both derived from ``(master seed,
trial)`` so that results do not depend on execution order or worker count.

Schemes are solved as a warm-start cascade: Fixed from the shared start,
BS-only and IRS-only from the Fixed solution, and Dual from the better of
those two.  Every stage only accepts non-decreasing moves, so per-seed
``Dual >= BS-only, IRS-only >= Fixed`` holds by construction.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import alignment_stats
from .channel import ChannelModel, InfeasibleOrientation, sample_scenario
from .config import ScenarioConfig
from .geometry import angles_from_boresight, build_geometry
from .manifold import random_phases
from .mu_solver import SCHEMES, Controls, SolveReport, ao_optimize, normalize_scheme
from .su_solver import cascade_columns

AXES = ("power", "antennas", "users", "xi")

RESULT_COLUMNS = (
    "scheme", "axis", "value", "trial", "seed", "status", "sum_rate", "iterations",
    "converged", "gain_over_fixed_pct", "efficiency", "xi", "mean_alignment",
    "alignment_spread", "gain_variance", "psi_alpha", "psi_beta", "psi_phi",
    "max_tilt_deg",
)
TIMING_COLUMNS = ("wall_time",)
TRACE_COLUMNS = ("scheme", "axis", "value", "trial", "seed", "iteration", "sum_rate")


@dataclass
class ExperimentResult:
    """One converged run of one scheme in one cell."""

    scheme: str
    axis: str
    value: float
    trial: int
    seed: int
    sum_rate: float
    trace: list
    iterations: int
    converged: bool
    status: str = "ok"
    diagnostics: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def ok(self):
        return self.status == "ok"

    def row(self, timing=False):
        d = self.diagnostics
        out = {
            "scheme": self.scheme, "axis": self.axis, "value": self.value,
            "trial": self.trial, "seed": self.seed, "status": self.status,
            "sum_rate": self.sum_rate, "iterations": self.iterations,
            "converged": self.converged,
        }
        for name in RESULT_COLUMNS[len(out):]:
            out[name] = d.get(name, math.nan)
        if timing:
            out["wall_time"] = self.wall_time
        return out


def cell_seed(master_seed, trial):
    """Scenario seed for a trial; independent of the sweep value and the scheme."""
    return int(np.random.SeedSequence([int(master_seed), int(trial)]).generate_state(1)[0])


def shared_init(model, seed):
    """Reference pose and random phases drawn from a stream separate from the scenario."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    M = model.geom.num_bs
    return np.tile([0.0, 1.0, 0.0], (M, 1)), np.zeros(3), random_phases(model.geom.num_irs, rng)


def run_diagnostics(model: ChannelModel, report: SolveReport, p_irs):
    """Combining efficiency, near-field alignment statistics and final rotations."""
    irs = model.irs_state(report.psi)
    H = model.cascade(report.F, irs)
    n = model.geom.num_irs
    eff = []
    for k in range(model.num_users):
        A = cascade_columns(irs.h_irs[k], H)
        column_power = np.sum(np.abs(A) ** 2) / n
        if column_power > 0:
            eff.append(np.sum(np.abs(A @ report.v) ** 2) / (n * n * column_power))
    stats = alignment_stats(model.geom, report.psi, p_irs)
    tilt = np.rad2deg(angles_from_boresight(report.F)[:, 0])
    return {
        "efficiency": float(np.mean(eff)) if eff else math.nan,
        "xi": float(model.geom.xi),
        "mean_alignment": stats.mean_alignment,
        "alignment_spread": stats.alignment_spread,
        "gain_variance": stats.gain_variance,
        "psi_alpha": float(report.psi[0]),
        "psi_beta": float(report.psi[1]),
        "psi_phi": float(report.psi[2]),
        "max_tilt_deg": float(np.max(tilt)),
    }


def _axis_config(config: ScenarioConfig, axis, value):
    """Config and geometry for one sweep value."""
    if axis is None:
        return config, build_geometry(config)
    if axis == "power":
        config = config.replace(power_dbm=float(value))
    elif axis == "antennas":
        side = math.isqrt(int(value))
        if side * side != int(value):
            raise ValueError(f"antenna count {value} is not a square")
        config = config.replace(bs_nx=side, bs_nz=side)
    elif axis == "users":
        config = config.replace(num_users=int(value))
    elif axis != "xi":
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {AXES}")
    geom = build_geometry(config)
    if axis == "xi":
        if not value > 0:
            raise ValueError("xi must be positive")
        geom = geom.with_irs_distance(geom.diagonal / float(value))
    return config, geom


def _failed(scheme, axis, value, trial, seed, message, elapsed):
    return ExperimentResult(scheme, axis or "", float(value), trial, seed, math.nan, [], 0, False,
                            status=f"failed: {message}", wall_time=elapsed)


def run_cell(config: ScenarioConfig, trial, schemes=SCHEMES, axis=None, value=math.nan):
    """Run the requested schemes (plus their cascade predecessors) for one cell.

    Returns results in the order of ``schemes``.  Solver failures are captured
    in ``status`` instead of being raised.
    """
    schemes = [normalize_scheme(s) for s in schemes]
    seed = cell_seed(config.seed, trial)
    started = time.perf_counter()
    reports: dict[str, SolveReport] = {}
    times: dict[str, float] = {}
    error = None
    try:
        cfg, geom = _axis_config(config, axis, value)
        controls = Controls.from_config(cfg)
        model = ChannelModel(sample_scenario(cfg, seed, geom), geom, cfg.delta_boundary)
        init = shared_init(model, seed)

        def solve(scheme, start, prior=None):
            t0 = time.perf_counter()
            rep = ao_optimize(model, controls, scheme, init=start)
            if prior is not None:
                rep.trace = prior.trace + rep.trace[1:]
                rep.iterations += prior.iterations
                rep.converged = rep.converged and prior.converged
            times[scheme] = time.perf_counter() - t0 + (times.get(prior.diagnostics["scheme"], 0.0)
                                                        if prior is not None else 0.0)
            reports[scheme] = rep
            return rep

        def pose(rep):
            return rep.F, rep.psi, rep.v

        need = set(schemes)
        fixed = solve("fixed", init)
        if need & {"bs-only", "dual"}:
            solve("bs-only", pose(fixed), fixed)
        if need & {"irs-only", "dual"}:
            solve("irs-only", pose(fixed), fixed)
        if "dual" in need:
            best = max(("bs-only", "irs-only"), key=lambda s: reports[s].sum_rate)
            solve("dual", pose(reports[best]), reports[best])
    except (InfeasibleOrientation, FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
        error = f"{type(exc).__name__}: {exc}"
    elapsed = time.perf_counter() - started

    results = []
    for scheme in schemes:
        if error is not None or scheme not in reports:
            results.append(_failed(scheme, axis, value, trial, seed, error or "not run", elapsed))
            continue
        rep = reports[scheme]
        diag = run_diagnostics(model, rep, cfg.p_irs)
        base = reports["fixed"].sum_rate
        diag["gain_over_fixed_pct"] = 100.0 * (rep.sum_rate / base - 1.0) if base > 0 else math.nan
        results.append(ExperimentResult(scheme, axis or "", float(value), trial, seed,
                                        float(rep.sum_rate), [float(x) for x in rep.trace],
                                        rep.iterations, bool(rep.converged), "ok", diag,
                                        times[scheme]))
    return results


def run_scheme(config: ScenarioConfig, scheme, seed):
    """One scheme on trial ``seed`` of ``config``; see :func:`run_cell`."""
    return run_cell(config, seed, [scheme])[0]


def _run_job(job):
    return run_cell(*job)


def _map(jobs, workers):
    if workers is None or workers <= 1:
        return [_run_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))  # map preserves submission order


def run_trials(config: ScenarioConfig, trials=None, schemes=SCHEMES, workers=None):
    """All schemes over trials ``0 .. trials-1`` at the configured parameters."""
    trials = config.trials if trials is None else trials
    jobs = [(config, t, tuple(schemes)) for t in range(trials)]
    return [r for cell in _map(jobs, workers) for r in cell]


def sweep(config: ScenarioConfig, axis, values, seeds=None, schemes=SCHEMES, workers=None):
    """Full cross product ``value x trial x scheme``.

    ``seeds`` is the number of trials per value, or an explicit list of
    trial indices.  Trial ``t`` uses the same scenario draw at every value.
    """
    if axis not in AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {AXES}")
    if seeds is None:
        seeds = config.trials
    trials = range(seeds) if isinstance(seeds, int) else list(seeds)
    jobs = [(config, t, tuple(schemes), axis, float(v)) for v in values for t in trials]
    return [r for cell in _map(jobs, workers) for r in cell]


def summarize(results):
    """Per ``(axis, value, scheme)`` mean and standard error of the converged sum rate.

    Failed runs are counted but excluded from the statistics.
    """
    groups: dict[tuple, list] = {}
    for r in results:
        groups.setdefault((r.axis, r.value, r.scheme), []).append(r)
    rows = []
    for (axis, value, scheme), rs in groups.items():
        rates = np.array([r.sum_rate for r in rs if r.ok])
        n = rates.size
        rows.append({
            "axis": axis, "value": value, "scheme": scheme, "trials": len(rs), "failed": len(rs) - n,
            "mean": float(rates.mean()) if n else math.nan,
            "stderr": float(rates.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan,
        })
    return rows


SUMMARY_COLUMNS = ("axis", "value", "scheme", "trials", "failed", "mean", "stderr")


def format_value(x):
    """Text form used in every CSV: floats at 17 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_table(rows, columns, path):
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([format_value(row[c]) for c in columns])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def trace_path(path):
    path = Path(path)
    return path.with_name(f"{path.stem}_traces{path.suffix or '.csv'}")


def emit_csv(results, path, timing=False):
    """Write results and their traces (sibling ``*_traces.csv``, one row per iteration).

    Wall time is left out unless ``timing`` is set, so reruns are
    byte-identical.  Returns ``(results_path, traces_path)``.
    """
    columns = RESULT_COLUMNS + (TIMING_COLUMNS if timing else ())
    main = write_table((r.row(timing) for r in results), columns, path)
    trace_rows = ({"scheme": r.scheme, "axis": r.axis, "value": r.value, "trial": r.trial,
                   "seed": r.seed, "iteration": i, "sum_rate": x}
                  for r in results for i, x in enumerate(r.trace))
    traces = write_table(trace_rows, TRACE_COLUMNS, trace_path(path))
    return main, traces


def read_csv(path):
    """Rows as dicts of strings; pair with ``float`` to recover exact values."""
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
