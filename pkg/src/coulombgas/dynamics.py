"""Euler-Maruyama integration of the particle SDEs, with optional reflection
into a ball and a frozen exterior, and noise-coupled pairs of runs.

Noise is counter based: the increment for (step k, label i, coordinate c)
depends only on (seed, k, i, c). When a step is halved, the Brownian path
inside it is refined by bridge sampling keyed on (step, node), so runs that
halve differently still see the same path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngs
from ._forces import min_distance_rows as _min_distance_rows
from ._forces import min_pair_distance as _min_pair_distance
from .drift import DriftSpec, elliptic_drift, truncated_drift
from .errors import CollisionDetected, DomainError, NumericalError, StepCollapse
from .model import CoefficientField, Configuration, GibbsModel, LabelOrder, label_sort, radii

MAX_HALVINGS = 20
COLLISION_DISTANCE = 1e-12
# halve while max|b| dt exceeds this fraction of the minimum pair distance
STEP_FRACTION = 0.1


def _project(x, R):
    # the norm must be the one used everywhere else (radii), not np.dot
    r = float(radii(x))
    if r <= R:
        return x
    y = x * (R / r)
    # rounding can leave |y| a hair above R
    while float(radii(y)) > R:
        y = np.nextafter(y, 0.0)
    return y


def reflect_into_ball(x, R: float) -> np.ndarray:
    """Radial projection onto the closed ball of radius R (rows of x)."""
    x = np.array(x, dtype=float)
    if x.ndim == 1:
        return _project(x, R)
    for k in np.nonzero(radii(x) > R)[0]:
        x[k] = _project(x[k], R)
    return x


def min_distance(positions, period: float = 0.0, rows=None) -> float:
    """Smallest pair distance; minimum-image distance when ``period`` > 0.

    With ``rows`` given, only pairs involving at least one of those rows count.
    """
    pos = np.ascontiguousarray(positions, dtype=float)
    if len(pos) < 2:
        return math.inf
    if rows is None or len(rows) == len(pos):
        return float(_min_pair_distance(pos, float(period)))
    return float(_min_distance_rows(pos, np.ascontiguousarray(rows, dtype=np.int64),
                                    float(period)))


@dataclass(frozen=True)
class NoiseState:
    """Counter-based generator state: the next step index to be consumed."""

    seed: int
    step: int = 0


@dataclass
class StepContext:
    """Per-run options threaded through :func:`em_step`."""

    adaptive: bool = False
    rows: np.ndarray | None = None
    noise_scale: float = 1.0
    period: float = 0.0
    constrain: object = None  # callable(x_rows, rows, time, events) -> x_rows
    events: list = field(default_factory=list)
    check_collisions: bool = False
    time: float = 0.0


def em_step(positions, drift_eval, coeff_field: CoefficientField, dt: float,
            rng_state: NoiseState, ctx: StepContext | None = None):
    """One Euler-Maruyama step ``x + b dt + sigma(x) dW``.

    ``drift_eval(positions, rows)`` returns the SDE drift b for the moving
    rows. In adaptive mode the step is halved (up to 20 times) while
    ``max |b| h > 0.1 * min pair distance``. Returns ``(positions, state)``.
    """
    if not dt > 0:
        raise DomainError("dt must be positive")
    ctx = ctx or StepContext()
    x = np.array(positions, dtype=float)
    n, d = x.shape
    rows = np.arange(n) if ctx.rows is None else np.asarray(ctx.rows, dtype=np.int64)
    xi = rngs.step_gaussians(rng_state.seed, rng_state.step, n, d)[rows]
    dw = math.sqrt(dt) * xi
    x = _substep(x, drift_eval, coeff_field, ctx, rows, rng_state, ctx.time, dt, dw, 1, 0)
    return x, NoiseState(rng_state.seed, rng_state.step + 1)


def _substep(x, drift_eval, coeff, ctx, rows, state, t, h, dw, node, depth, b=None):
    if b is None:
        b = np.asarray(drift_eval(x, rows), dtype=float)
        if not np.all(np.isfinite(b)):
            raise NumericalError(f"non-finite drift at t = {t!r}")
    if ctx.adaptive and len(rows):
        bmax = float(np.max(radii(b)))
        # frozen pairs never move, so only pairs with a moving member count
        if bmax * h > STEP_FRACTION * min_distance(x, ctx.period, rows):
            if depth >= MAX_HALVINGS:
                raise StepCollapse(f"step halved {MAX_HALVINGS} times at t = {t!r}")
            ctx.events.append((t, int(rows[int(np.argmax(radii(b)))]), "dt-halving", h / 2))
            n, d = x.shape
            eta = rngs.bridge_gaussians(state.seed, state.step, node, n, d)[rows]
            # Brownian bridge midpoint given the increment over [t, t + h]
            dw1 = 0.5 * dw + 0.5 * math.sqrt(h) * eta
            dw2 = dw - dw1
            # the first half starts from the same state, so its drift is b
            x = _substep(x, drift_eval, coeff, ctx, rows, state, t, h / 2, dw1, 2 * node,
                         depth + 1, b)
            return _substep(x, drift_eval, coeff, ctx, rows, state, t + h / 2, h / 2, dw2,
                            2 * node + 1, depth + 1)
    xr = x[rows]
    sigma = coeff.sigma_diagonal(xr)
    new = xr + b * h + ctx.noise_scale * sigma * dw
    if ctx.constrain is not None:
        new = ctx.constrain(new, rows, t + h, ctx.events)
    x[rows] = new
    if ctx.check_collisions:
        dist = min_distance(x, ctx.period, rows)
        if dist < COLLISION_DISTANCE:
            raise CollisionDetected(f"pair distance {dist!r} at t = {t + h!r}",
                                    {"time": t + h, "step": state.step, "distance": dist})
    return x


@dataclass(frozen=True)
class DynSpec:
    """Time grid, scheme and noise options for :func:`evolve`.

    ``scheme`` is ``free`` or ``reflected`` (reflection into the ball of
    radius ``radius`` with everything initially outside it frozen).
    A missing ``drift_spec`` means the model's own finite-N drift.
    """

    dt: float
    t_end: float
    scheme: str = "free"
    radius: float | None = None
    drift_spec: DriftSpec | None = None
    coeff_field: CoefficientField = field(default_factory=CoefficientField)
    seed: int = 0
    adaptive: bool = True
    snapshot_every: int = 1
    noise_scale: float = 1.0

    def __post_init__(self):
        if not (self.dt > 0 and self.t_end > 0 and self.dt < self.t_end):
            raise DomainError("need 0 < dt < t_end")
        if self.scheme not in ("free", "reflected"):
            raise DomainError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "reflected" and not (self.radius and self.radius > 0):
            raise DomainError("the reflected scheme needs a positive radius")
        if self.snapshot_every < 1:
            raise DomainError("snapshot_every must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be an unsigned 64-bit integer")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class Trajectory:
    """Snapshots in label order (row i is label i) plus the event log."""

    times: list
    steps: list
    states: list
    labels: LabelOrder
    events: list
    local_time: np.ndarray
    n_moving: int
    dim: int

    def write_csv(self, path, header: str | None = None):
        fmt = "%.17g"
        with open(path, "w", newline="\n") as fh:
            if header:
                fh.write(header)
            fh.write("step,time,particle," + ",".join(f"x{k + 1}" for k in range(self.dim)) + "\n")
            for k, t, s in zip(self.steps, self.times, self.states):
                for i, row in enumerate(s):
                    fh.write(f"{k},{fmt % t},{i}," + ",".join(fmt % v for v in row) + "\n")

    def write_events_csv(self, path, header: str | None = None):
        with open(path, "w", newline="\n") as fh:
            if header:
                fh.write(header)
            fh.write("time,particle,kind,magnitude\n")
            for t, p, kind, mag in self.events:
                fh.write(f"{t:.17g},{p},{kind},{mag:.17g}\n")


def _drift_evaluator(model: GibbsModel, spec: DynSpec):
    ds = spec.drift_spec
    coeff = spec.coeff_field

    if ds is None or ds.mode == "finite":
        def log_derivative(x, rows):
            return model.drift_rows(x, rows)
    else:
        def log_derivative(x, rows):
            return np.array([truncated_drift(model, ds, int(i), x) for i in rows])

    def drift(x, rows):
        if len(rows) == 0:
            return np.zeros((0, x.shape[1]))
        return elliptic_drift(coeff, log_derivative(x, rows), x[rows])

    return drift


def _constraint(model: GibbsModel, spec: DynSpec, local_time):
    if spec.scheme == "reflected":
        R = spec.radius

        def project(new, rows, t, events):
            r = radii(new)
            out = reflect_into_ball(new, R)
            for k in np.nonzero(r > R)[0]:
                mag = float(np.sqrt(np.sum((new[k] - out[k]) ** 2)))
                local_time[rows[k]] += mag
                events.append((t, int(rows[k]), "reflection", mag))
            return out
        return project
    if model.domain.kind == "torus":
        return lambda new, rows, t, events: model.domain.wrap(new)
    if model.domain.kind == "ball":
        R = model.domain.size
        return lambda new, rows, t, events: reflect_into_ball(new, R)
    return None


def evolve(model: GibbsModel, spec: DynSpec, initial) -> Trajectory:
    """Integrate from ``initial`` to ``spec.t_end``; deterministic per seed."""
    if isinstance(initial, Configuration):
        pos0 = initial.positions
    else:
        pos0 = Configuration(initial, model.domain).positions
    if pos0.shape != (model.n_particles, model.dim):
        raise DomainError(f"initial state must have shape ({model.n_particles}, {model.dim})")
    order = label_sort(pos0)
    x = np.array(order.apply(pos0), dtype=float)
    n, d = x.shape
    if spec.scheme == "reflected":
        n_moving = int(np.sum(radii(x) <= spec.radius))
    else:
        n_moving = n
    rows = np.arange(n_moving)
    local_time = np.zeros(n)
    ctx = StepContext(adaptive=spec.adaptive, rows=rows, noise_scale=spec.noise_scale,
                      period=model.domain.size if model.domain.kind == "torus" else 0.0,
                      constrain=_constraint(model, spec, local_time), check_collisions=True)
    drift = _drift_evaluator(model, spec)
    times, steps, states = [0.0], [0], [x.copy()]
    state = NoiseState(spec.seed, 0)
    for k in range(spec.n_steps):
        ctx.time = k * spec.dt
        if n_moving:
            x, state = em_step(x, drift, spec.coeff_field, spec.dt, state, ctx)
        else:
            state = NoiseState(state.seed, state.step + 1)
        if (k + 1) % spec.snapshot_every == 0 or k + 1 == spec.n_steps:
            times.append((k + 1) * spec.dt)
            steps.append(k + 1)
            states.append(x.copy())
    return Trajectory(times, steps, states, order, ctx.events, local_time, n_moving, d)


def coupled_evolve(model: GibbsModel, spec_a: DynSpec, spec_b: DynSpec, initial):
    """Two runs from the same initial labels on the same Brownian path."""
    shared = ("dt", "t_end", "seed", "snapshot_every")
    if any(getattr(spec_a, k) != getattr(spec_b, k) for k in shared):
        raise DomainError("coupled runs must share dt, t_end, seed and snapshot_every")
    return evolve(model, spec_a, initial), evolve(model, spec_b, initial)


def sup_distance(traj_a: Trajectory, traj_b: Trajectory, m: int) -> float:
    """max over common snapshots and the first m labels of |X_a - X_b|."""
    if len(traj_a.times) != len(traj_b.times):
        raise DomainError("trajectories have different snapshot grids")
    best = 0.0
    for sa, sb in zip(traj_a.states, traj_b.states):
        best = max(best, float(np.max(radii(sa[:m] - sb[:m]))))
    return best
