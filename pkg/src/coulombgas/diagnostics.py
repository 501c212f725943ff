"""Monte-Carlo estimators and trajectory probes: number variance, growth
exponents, the L2 drift bound, non-collision, entry counts, correction decay
and the A4-type residual.

All estimators are deterministic functions of their inputs. Reductions over
samples are done on sorted values so they do not depend on sample order.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .drift import exterior_field, taylor_correction_constants
from .dynamics import Trajectory, min_distance
from .errors import DegenerateFit, DomainError, InsufficientSamples
from .model import ConfinementField, Configuration, GibbsModel, label_sort, radii


@dataclass(frozen=True)
class CutoffFq:
    """f_q = 1 on |x| <= q, 0 on |x| >= q + 1, cubic smoothstep in between."""

    q: float

    def __post_init__(self):
        if not self.q > 0:
            raise DomainError("q must be positive")

    def __call__(self, x) -> np.ndarray:
        u = np.clip(radii(x) - self.q, 0.0, 1.0)
        return 1.0 - (3.0 * u * u - 2.0 * u**3)


@dataclass(frozen=True)
class Curve:
    abscissa: np.ndarray
    ordinate: np.ndarray
    stderr: np.ndarray
    mean: np.ndarray | None = None

    def rows(self):
        return zip(self.abscissa, self.ordinate, self.stderr)


@dataclass
class DiagnosticsReport:
    name: str
    scalars: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def write(self, out_dir, header: str = "") -> list:
        """Write one CSV per curve and a ``key = value`` scalar file."""
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        for cname in sorted(self.curves):
            path = os.path.join(out_dir, f"{self.name}_{cname}.csv")
            with open(path, "w", newline="\n") as fh:
                fh.write(header)
                fh.write("abscissa,ordinate,stderr\n")
                for a, o, s in self.curves[cname].rows():
                    fh.write(f"{a:.17g},{o:.17g},{s:.17g}\n")
            paths.append(path)
        path = os.path.join(out_dir, f"{self.name}_scalars.txt")
        with open(path, "w", newline="\n") as fh:
            fh.write(header)
            for key in sorted(self.metadata):
                fh.write(f"meta.{key} = {self.metadata[key]}\n")
            for key in sorted(self.scalars):
                fh.write(f"{key} = {float(self.scalars[key]):.17g}\n")
        paths.append(path)
        return paths


def _positions(sample):
    return sample.positions if isinstance(sample, Configuration) else np.asarray(sample, float)


def _sorted_sum(values) -> float:
    return math.fsum(np.sort(np.asarray(values, dtype=float)))


def number_variance(samples, radii_list) -> Curve:
    """Mean and unbiased variance of N_r = #{i : |x_i| <= r} per radius, with
    jackknife standard errors."""
    if len(samples) < 3:
        raise InsufficientSamples("number_variance needs at least 3 samples")
    rs = np.asarray(radii_list, dtype=float)
    if np.any(rs <= 0) or np.any(np.diff(rs) <= 0):
        raise DomainError("radii must be positive and increasing")
    counts = np.array([[int(np.sum(radii(_positions(s)) <= r)) for r in rs] for s in samples],
                      dtype=np.int64)
    n = len(samples)
    # integer sums keep mean and variance exactly order independent
    s1 = counts.sum(axis=0)
    s2 = (counts * counts).sum(axis=0)
    mean = s1 / n
    var = (n * s2 - s1 * s1) / (n * (n - 1))
    loo1 = s1[None, :] - counts
    loo2 = s2[None, :] - counts * counts
    m = n - 1
    loo_var = (m * loo2 - loo1 * loo1) / (m * (m - 1))
    se = np.empty(len(rs))
    for k in range(len(rs)):
        v = np.sort(loo_var[:, k])
        vbar = _sorted_sum(v) / n
        se[k] = math.sqrt((n - 1) / n * _sorted_sum((v - vbar) ** 2))
    return Curve(rs, var, se, mean)


def growth_exponent(curve: Curve, window=None):
    """OLS slope of log Var against log r and its standard error."""
    x = np.asarray(curve.abscissa, dtype=float)
    y = np.asarray(curve.ordinate, dtype=float)
    if window is not None:
        keep = (x >= window[0]) & (x <= window[1])
        x, y = x[keep], y[keep]
    if len(x) < 3:
        raise DegenerateFit("growth_exponent needs at least 3 radii")
    if np.any(y <= 0):
        raise DegenerateFit("variance must be positive at every radius")
    fit = stats.linregress(np.log(x), np.log(y))
    return float(fit.slope), float(fit.stderr)


def l2_drift_estimate(samples, model: GibbsModel, q: float):
    """Mean over samples of sum_i f_q(x_i) |d^N(x_i)|^2, with its standard error."""
    if len(samples) < 2:
        raise InsufficientSamples("l2_drift_estimate needs at least 2 samples")
    f = CutoffFq(q)
    values = []
    for s in samples:
        pos = np.ascontiguousarray(_positions(s))
        w = f(pos)
        rows = np.nonzero(w > 0)[0]
        if len(rows) == 0:
            values.append(0.0)
            continue
        d = model.drift_rows(pos, rows)
        values.append(_sorted_sum(w[rows] * np.sum(d * d, axis=1)))
    values = np.asarray(values)
    n = len(values)
    est = _sorted_sum(values) / n
    se = math.sqrt(_sorted_sum((values - est) ** 2) / (n - 1) / n)
    return est, se


def min_pair_distance(trajectory: Trajectory, period: float = 0.0) -> float:
    """Minimum over recorded states and pairs of |x_i - x_j|."""
    if not trajectory.states:
        raise DomainError("empty trajectory")
    return min(min_distance(s, period) for s in trajectory.states)


def entry_count_irt(trajectory: Trajectory, R: float, T: float) -> int:
    """Largest (1-based) label whose recorded path enters the closed ball S_R
    by time T; 0 if none does."""
    if T > trajectory.times[-1] + 1e-12 * max(1.0, abs(T)):
        raise DomainError("T exceeds the trajectory's end time")
    closest = None
    for t, s in zip(trajectory.times, trajectory.states):
        if t > T:
            break
        r = radii(s)
        closest = r if closest is None else np.minimum(closest, r)
    inside = np.nonzero(closest <= R)[0]
    return int(inside[-1] + 1) if len(inside) else 0


def _probe_grid(q: float, d: int, pitch: float) -> np.ndarray:
    ticks = np.arange(-int(round(q / pitch)), int(round(q / pitch)) + 1) * pitch
    grid = np.stack(np.meshgrid(*[ticks] * d, indexing="ij"), axis=-1).reshape(-1, d)
    return grid[radii(grid) <= q]


def correction_decay_table(config, radii_list, l0: int, probe_radius: float,
                           env_factor: float | None = None):
    """Per cutoff R: max_i |C_R^i| q^|i| and the sup of |residual| over a grid
    of the closed ball S_q (pitch q/20). Returns two curves.

    With ``env_factor`` set, exterior points beyond ``env_factor * R`` are
    dropped for cutoff R, so each R sees an environment of its own scale.
    """
    pos = _positions(config)
    rs = np.asarray(radii_list, dtype=float)
    if np.any(rs <= 0) or np.any(np.diff(rs) <= 0):
        raise DomainError("radii must be positive and increasing")
    if env_factor is not None and not env_factor > 1:
        raise DomainError("env_factor must exceed 1")
    q = float(probe_radius)
    if not 0 < q <= rs[0]:
        raise DomainError("probe radius must lie in (0, min R]")
    d = pos.shape[1]
    grid = _probe_grid(q, d, q / 20.0)
    r_pos = radii(pos)
    c_col, r_col = [], []
    for R in rs:
        keep = r_pos > R
        if env_factor is not None:
            keep &= r_pos <= env_factor * R
        ext = pos[keep]
        table = taylor_correction_constants(ext, R, l0, d)
        scale = np.array([q**idx.order for idx in table.indices])
        c_col.append(float(np.max(radii(table.values) * scale)))
        if len(ext) == 0:
            r_col.append(0.0)
            continue
        ys = ext[label_sort(ext).permutation]
        resid = exterior_field(ys, grid) - table.polynomial(grid)
        r_col.append(float(np.max(radii(resid))))
    zeros = np.zeros(len(rs))
    return Curve(rs, np.array(c_col), zeros), Curve(rs, np.array(r_col), zeros.copy())


def a4_residual(config, x, radii_list, confinement: ConfinementField = ConfinementField()):
    """|sum_i (1_{S_R}(s_i) - 1_{S_R}(x - s_i)) F(x - s_i) - grad Phi(x)| per R,
    with F(z) = z/|z|^d."""
    pos = _positions(config)
    x = np.asarray(x, dtype=float)
    z = x - pos
    rz = radii(z)
    if np.any(rz == 0.0):
        raise DomainError("x coincides with a configuration point")
    d = pos.shape[1]
    force = z / rz[:, None] ** d
    rs = radii(pos)
    target = confinement.gradient(x)
    out = []
    for R in np.asarray(radii_list, dtype=float):
        weight = (rs <= R).astype(float) - (rz <= R).astype(float)
        v = np.array([_sorted_sum(weight * force[:, k]) for k in range(d)])
        out.append(float(np.sqrt(np.sum((v - target) ** 2))))
    rr = np.asarray(radii_list, dtype=float)
    return Curve(rr, np.array(out), np.zeros(len(rr)))
