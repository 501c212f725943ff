"""End-to-end acceptance checks, one test per criterion.

Each test prints (and records for the terminal summary) a single PASS/FAIL
line with the measured quantity next to its threshold. Runtime budgets are
reported, not asserted: they were set for an 8-core machine.
"""

import math
import time
import warnings

import numpy as np
import pytest
from scipy import stats

from conftest import _quiet, record
from coulombgas.cli import SUBCOMMANDS, main
from coulombgas.diagnostics import (correction_decay_table, growth_exponent, l2_drift_estimate,
                                    min_pair_distance, number_variance)
from coulombgas.drift import DriftSpec, finite_drift, truncated_drift
from coulombgas.dynamics import DynSpec, coupled_evolve, evolve, sup_distance
from coulombgas.errors import CollisionDetected, NumericalError, StepCollapse
from coulombgas.kernels import (free_coulomb_potential, kernel_partial, multi_indices_upto,
                                torus_green)
from coulombgas.model import (Configuration, gaussian_model, periodic_extension, periodic_model,
                              radii)
from coulombgas.sampler import ChainParams, sample_gibbs
from test_kernels import _nested_central_difference, fd_laplacian, random_points
from test_model import fd_grad_log_density


def test_c01_kernel_harmonicity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for d in (2, 3, 4):
        for x in random_points(rng, 100, d, 0.8, 3.0):
            lap = fd_laplacian(lambda y: free_coulomb_potential(d, y), x, 2e-3)
            worst = max(worst, abs(lap))
    ok = worst < 1e-6
    record(1, ok, f"max |FD Laplacian| = {worst:.2e} (< 1e-6), {time.perf_counter() - t0:.2f} s")
    assert ok


def test_c02_derivative_engine():
    import mpmath

    t0 = time.perf_counter()
    mpmath.mp.dps = 50
    h = mpmath.mpf("1e-6")
    worst = 0.0
    for d in (2, 3):
        rng = np.random.default_rng(200 + d)
        for x in random_points(rng, 50, d, 0.7, 3.0):
            r = float(np.linalg.norm(x))
            for idx in multi_indices_upto(d, 4):
                floor = 1e-3 * r ** (1 - d - idx.order)
                for c in range(d):
                    exact = kernel_partial(d, c, idx, x)
                    ref = float(_nested_central_difference(d, c, idx.exponents, x, h))
                    worst = max(worst, abs(exact - ref) / max(abs(ref), floor))
    ok = worst < 1e-6
    record(2, ok, f"max rel err = {worst:.2e} (< 1e-6), {time.perf_counter() - t0:.2f} s")
    assert ok


def test_c03_torus_green_normalisation():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    pts = rng.uniform(-0.5, 0.5, (60, 2))
    pts = pts[radii(pts) > 0.15][:20]
    lap_err = max(abs(fd_laplacian(lambda y: torus_green(y)[0], x, 2e-3) - 2 * math.pi)
                  for x in pts)
    x = rng.uniform(-0.5, 0.5, (200, 2))
    shifts = rng.integers(-3, 4, (200, 2))
    g = torus_green(x)[0]
    period_err = float(np.max(np.abs(torus_green(x + shifts)[0] - g)))
    even_err = float(np.max(np.abs(torus_green(-x)[0] - g)))
    ok = lap_err < 1e-4 and period_err <= 1e-12 and even_err <= 1e-12
    record(3, ok, f"|Lap - 2pi| = {lap_err:.1e} (< 1e-4), periodicity {period_err:.1e}, "
                  f"evenness {even_err:.1e} (<= 1e-12), {time.perf_counter() - t0:.2f} s")
    assert ok


def test_c04_sampler_stationarity():
    t0 = time.perf_counter()
    model = gaussian_model(1, beta=2.0, c=1.0)
    samples, _ = _quiet(sample_gibbs, model, ChainParams(0.6, 500, 10_000, 5, seed=4))
    x = np.array([s.positions[0] for s in samples])
    pvals = [stats.kstest(x[:, k], "norm", args=(0.0, 0.5)).pvalue for k in range(2)]
    ok = min(pvals) > 0.01
    record(4, ok, f"KS p-values {pvals[0]:.3f}, {pvals[1]:.3f} (> 0.01), "
                  f"{time.perf_counter() - t0:.2f} s")
    assert ok


def test_c05_drift_density_consistency():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    models = [gaussian_model(8), gaussian_model(8, beta=1.3, c=0.7, dim=3),
              periodic_model(8, density=0.5)]
    worst = 0.0
    for m in models:
        for _ in range(5):
            pos = m.domain.wrap(rng.normal(scale=1.5, size=(8, m.dim)))
            fd = fd_grad_log_density(m, pos)
            for i in range(8):
                exact = finite_drift(m, i, pos)
                worst = max(worst, float(np.linalg.norm(exact - fd[i]) / np.linalg.norm(fd[i])))
    ok = worst < 1e-6
    record(5, ok, f"max rel err = {worst:.2e} (< 1e-6), {time.perf_counter() - t0:.2f} s")
    assert ok


@pytest.mark.slow
def test_c06_hyperuniformity(gaussian_512):
    t0 = time.perf_counter()
    model, samples = gaussian_512
    spacing = model.bulk_density ** -0.5
    rs = np.linspace(2.0, 6.0, 9) * spacing
    gamma, se = growth_exponent(number_variance(samples, rs))
    # matched control: as many independent uniform points in the droplet's disk
    rng = np.random.default_rng(6)
    disk = math.sqrt(model.n_particles / (math.pi * model.bulk_density))
    control = []
    for _ in range(len(samples)):
        r = disk * np.sqrt(rng.uniform(size=model.n_particles))
        th = rng.uniform(0, 2 * math.pi, model.n_particles)
        control.append(np.stack([r * np.cos(th), r * np.sin(th)], axis=1))
    gamma_p, se_p = growth_exponent(number_variance(control, rs))
    ok = gamma <= 1.5 and 1.7 <= gamma_p <= 2.3 and len(samples) >= 400
    record(6, ok, f"gamma = {gamma:.3f} +- {se:.3f} (<= 1.5), Poisson gamma = {gamma_p:.3f} "
                  f"+- {se_p:.3f} (in [1.7, 2.3]), {len(samples)} samples, "
                  f"{time.perf_counter() - t0:.1f} s after sampling")
    assert ok


@pytest.mark.slow
def test_c07_uniform_l2_bound():
    t0 = time.perf_counter()
    est = {}
    for n in (128, 256, 512):
        model = periodic_model(n)
        samples, _ = _quiet(sample_gibbs, model, ChainParams(0.005, 600, 30, 50, seed=700 + n))
        est[n] = l2_drift_estimate(samples, model, 2.0)
    values = [v for v, _ in est.values()]
    ratio = max(values) / min(values)
    ok = ratio <= 2.0
    detail = ", ".join(f"N={n}: {v:.2f}+-{s:.2f}" for n, (v, s) in est.items())
    record(7, ok, f"{detail}; max/min = {ratio:.3f} (<= 2), {time.perf_counter() - t0:.1f} s")
    assert ok


def periodic_environment(sample, model, radius=64.0):
    return periodic_extension(Configuration(sample.positions, model.domain), radius).positions


@pytest.mark.slow
def test_c08_correction_decay(periodic_1024):
    t0 = time.perf_counter()
    model, samples = periodic_1024
    cols = []
    for s in samples:
        c, r = correction_decay_table(periodic_environment(s, model), [4.0, 8.0, 16.0], 2, 1.0,
                                      env_factor=4.0)
        cols.append((c.ordinate, r.ordinate))
    med_c = np.median([c for c, _ in cols], axis=0)
    med_r = np.median([r for _, r in cols], axis=0)
    drop_c = 1 - med_c[2] / med_c[0]
    drop_r = 1 - med_r[2] / med_r[0]
    ok = drop_c >= 0.5 and drop_r >= 0.5
    record(8, ok, f"median constants {np.array2string(med_c, precision=4)} drop {drop_c:.1%}, "
                  f"median residual {np.array2string(med_r, precision=6)} drop {drop_r:.1%} "
                  f"(both >= 50%), {time.perf_counter() - t0:.1f} s")
    assert ok


@pytest.mark.slow
def test_c09_corrected_drift_stability(periodic_1024):
    t0 = time.perf_counter()
    model, samples = periodic_1024
    spread = {"naive": [], "corrected": []}
    for s in samples:
        env = periodic_environment(s, model)
        for mode in spread:
            v = []
            for R in (4.0, 8.0, 16.0):
                # each cutoff sees the environment out to 4R
                local = env[radii(env) <= 4 * R]
                i = int(np.argmin(radii(local)))
                v.append(truncated_drift(model, DriftSpec(R, 2, mode), i, local))
            spread[mode].append(float(np.sqrt(np.sum(np.var(np.array(v), axis=0)))))
    naive = float(np.median(spread["naive"]))
    corrected = float(np.median(spread["corrected"]))
    ok = corrected <= naive
    record(9, ok, f"median std over R: corrected {corrected:.4f} <= naive {naive:.4f}, "
                  f"{time.perf_counter() - t0:.1f} s")
    assert ok


def reflection_invariants(traj, R):
    """(moving rows inside the closed ball, frozen rows bit-constant)."""
    m = traj.n_moving
    first = traj.states[0]
    inside = all(bool(np.all(radii(s[:m]) <= R)) for s in traj.states)
    frozen = all(np.array_equal(s[m:], first[m:]) for s in traj.states)
    return inside, frozen


@pytest.fixture(scope="module")
def c10_runs():
    t0 = time.perf_counter()
    model = gaussian_model(64)
    starts, _ = _quiet(sample_gibbs, model, ChainParams(0.01, 1000, 20, 100, seed=10))
    out = {"min_distance": [], "failures": [], "invariants": [], "n_moving": []}
    for rep, start in enumerate(starts):
        spec = DynSpec(1e-4, 1.0, "reflected", 4.0, seed=1000 + rep, snapshot_every=10)
        try:
            traj = evolve(model, spec, start)
        except (CollisionDetected, NumericalError, StepCollapse) as exc:
            out["failures"].append(f"replica {rep}: {type(exc).__name__}")
            continue
        out["min_distance"].append(min_pair_distance(traj))
        out["invariants"].append(reflection_invariants(traj, 4.0))
        out["n_moving"].append(traj.n_moving)
    out["seconds"] = time.perf_counter() - t0
    return out


@pytest.mark.slow
def test_c10_non_collision(c10_runs):
    dmin = min(c10_runs["min_distance"], default=0.0)
    ok = not c10_runs["failures"] and len(c10_runs["min_distance"]) == 20 and dmin > 1e-6
    record(10, ok, f"min pair distance over 20 replicas = {dmin:.3e} (> 1e-6), "
                   f"{len(c10_runs['failures'])} collision/NaN failures, "
                   f"{c10_runs['seconds']:.1f} s")
    assert ok, c10_runs["failures"]


@pytest.fixture(scope="module")
def c11_runs(periodic_1024):
    t0 = time.perf_counter()
    model, samples = periodic_1024
    m = 4
    out = {"d4": [], "d8": [], "invariants": [], "shared_identical": True}
    for rep, start in enumerate(samples):
        def spec(R):
            return DynSpec(0.005, 0.5, "reflected", R, DriftSpec(R, mode="finite"),
                           seed=1100 + rep)
        a4, b8 = coupled_evolve(model, spec(4.0), spec(8.0), start)
        a8, b16 = coupled_evolve(model, spec(8.0), spec(16.0), start)
        out["shared_identical"] &= all(np.array_equal(u, v) for u, v in zip(b8.states, a8.states))
        out["d4"].append(sup_distance(a4, b8, m))
        out["d8"].append(sup_distance(a8, b16, m))
        for traj, R in ((a4, 4.0), (b8, 8.0), (b16, 16.0)):
            out["invariants"].append(reflection_invariants(traj, R))
    out["seconds"] = time.perf_counter() - t0
    return out


@pytest.mark.slow
def test_c11_finite_volume_convergence(c11_runs):
    med4 = float(np.median(c11_runs["d4"]))
    med8 = float(np.median(c11_runs["d8"]))
    ok = med8 < med4 and len(c11_runs["d4"]) == 20
    record(11, ok, f"median sup-distance R=4: {med4:.3e}, R=8: {med8:.3e} (strictly smaller), "
                   f"{c11_runs['seconds']:.0f} s")
    assert ok
    assert c11_runs["shared_identical"]


@pytest.mark.slow
def test_c12_reflection_and_freezing(c10_runs, c11_runs):
    checks = c10_runs["invariants"] + c11_runs["invariants"]
    inside = all(a for a, _ in checks)
    frozen = all(b for _, b in checks)
    ok = inside and frozen and len(checks) == 20 + 60
    record(12, ok, f"{len(checks)} trajectories: moving |x| <= R {'held' if inside else 'FAILED'}, "
                   f"frozen rows bit-constant {'held' if frozen else 'FAILED'}")
    assert ok


GAUSSIAN_CFG = """\
model.n = 16
sampler.step = 0.05
sampler.burn_in = 20
sampler.samples = 4
sampler.thin = 5
diag.radii = 0.5, 1.0, 1.5
diag.labels = 2
dyn.dt = 0.001
dyn.t_end = 0.02
dyn.scheme = reflected
dyn.radius = 1.0
drift.mode = finite
seed = 13
threads = 1
"""

PERIODIC_CFG = """\
model.n = 36
model.confinement = zero
model.kernel = torus
model.domain = torus
sampler.step = 0.01
sampler.burn_in = 10
sampler.samples = 3
sampler.thin = 5
diag.radii = 1.0, 2.0
diag.probe = 0.5
diag.point = 0.25, 0.25
seed = 13
threads = 1
"""


def test_c13_determinism(tmp_path):
    t0 = time.perf_counter()
    differing = []
    for sub in SUBCOMMANDS:
        cfg = tmp_path / f"{sub}.cfg"
        cfg.write_text(PERIODIC_CFG if sub in ("drift-table", "a4-check") else GAUSSIAN_CFG)
        contents = []
        for k in range(2):
            out = tmp_path / f"{sub}-{k}"
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                assert main([sub, "--config", str(cfg), "--out", str(out)]) == 0
            contents.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        if not contents[0] or contents[0] != contents[1]:
            differing.append(sub)
    ok = not differing
    record(13, ok, f"{len(SUBCOMMANDS)} subcommands byte-identical on rerun"
                   + (f", differing: {differing}" if differing else "")
                   + f", {time.perf_counter() - t0:.1f} s")
    assert ok
