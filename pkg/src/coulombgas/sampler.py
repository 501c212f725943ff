"""Metropolis-adjusted Langevin sampling of the N-particle Gibbs measure."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import rng as rngs
from ._forces import min_pair_distance
from .errors import ConvergenceWarning, DomainError, NumericalError
from .model import Configuration, GibbsModel, _ball_volume


@dataclass(frozen=True)
class ChainParams:
    step_size: float
    burn_in: int = 0
    n_samples: int = 1
    thinning: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.step_size > 0:
            raise DomainError("step_size must be positive")
        if self.burn_in < 0 or self.n_samples < 1 or self.thinning < 1:
            raise DomainError("burn_in >= 0, n_samples >= 1 and thinning >= 1 required")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class ChainStats:
    acceptance_rate: float
    n_steps: int
    n_accepted: int


def log_proposal_density(x, mean, step_size) -> float:
    """log q up to the constant shared by forward and reverse moves."""
    diff = np.asarray(x) - np.asarray(mean)
    return -float(np.sum(diff * diff)) / (2.0 * step_size)


def log_acceptance_ratio(model: GibbsModel, x, y, step_size) -> float:
    """log of pi(y) q(y->x) / (pi(x) q(x->y)), evaluated from scratch."""
    lx, gx = model.energy_and_gradient(x)
    ly, gy = model.energy_and_gradient(y)
    if ly == -math.inf:
        return -math.inf
    h = step_size
    fwd = log_proposal_density(y, x + 0.5 * h * gx, h)
    rev = log_proposal_density(x, y + 0.5 * h * gy, h)
    return ly - lx + rev - fwd


def _transition(model, x, logp, grad, h, gen):
    """One MALA move from a cached state. Returns (x, logp, grad, accepted)."""
    noise = gen.standard_normal(x.shape)
    u = gen.random()
    y = x + 0.5 * h * grad + math.sqrt(h) * noise
    if not model.domain.contains(y):
        return x, logp, grad, False
    y_stored = model.domain.wrap(y)
    logp_y, grad_y = model.energy_and_gradient(y_stored)
    if logp_y == -math.inf or not np.all(np.isfinite(grad_y)):
        return x, logp, grad, False
    # reverse move measured on the unwrapped copy of y
    fwd = -0.5 * float(np.sum(noise * noise))
    back = x - y - 0.5 * h * grad_y
    rev = -float(np.sum(back * back)) / (2.0 * h)
    log_alpha = logp_y - logp + rev - fwd
    if log_alpha >= 0.0 or u < math.exp(log_alpha):
        return y_stored, logp_y, grad_y, True
    return x, logp, grad, False


def mala_step(model: GibbsModel, positions, step_size: float, gen: np.random.Generator):
    """One Metropolis-adjusted Langevin step.

    Proposal ``y = x + (h/2) grad log pi(x) + sqrt(h) xi``; accepted with the
    usual Metropolis-Hastings ratio. Proposals leaving a ball domain are
    rejected. Returns ``(positions, accepted, gen)``.
    """
    if not step_size > 0:
        raise DomainError("step_size must be positive")
    x = np.array(positions, dtype=float)
    logp, grad = model.energy_and_gradient(x)
    if grad is None or not np.all(np.isfinite(grad)):
        raise NumericalError("log-density gradient is not finite at the current state")
    x, _, _, accepted = _transition(model, x, logp, grad, step_size, gen)
    return x, accepted, gen


def initial_positions(model: GibbsModel, gen: np.random.Generator, max_tries: int = 10_000):
    """Uniform placement with a minimum separation of 1e-3 domain scales."""
    d, n = model.dim, model.n_particles
    dom = model.domain
    if dom.kind == "torus":
        scale = dom.size
    elif dom.kind == "ball":
        scale = dom.size
    else:
        scale = (n / (model.bulk_density * _ball_volume(d, 1.0))) ** (1.0 / d)
    min_sep2 = (1e-3 * scale) ** 2
    pts = np.empty((n, d))
    for i in range(n):
        for _ in range(max_tries):
            if dom.kind == "torus":
                p = (gen.random(d) - 0.5) * scale
            else:
                # uniform in the ball: gaussian direction, radius ~ U^(1/d)
                g = gen.standard_normal(d)
                p = g / np.linalg.norm(g) * scale * gen.random() ** (1.0 / d)
            if i == 0 or np.min(np.sum((pts[:i] - p) ** 2, axis=1)) >= min_sep2:
                pts[i] = p
                break
        else:
            raise DomainError("could not place particles with the required separation")
    return pts


class MalaChain:
    """Stateful chain; used by :func:`sample_gibbs` and for custom schedules."""

    def __init__(self, model: GibbsModel, step_size: float, seed: int, replica: int = 0,
                 initial=None):
        self.model = model
        self.step_size = step_size
        self.gen = rngs.stream(seed, rngs.SAMPLER, replica)
        if initial is None:
            initial = initial_positions(model, rngs.stream(seed, rngs.INIT, replica))
        self.x = np.array(initial.positions if isinstance(initial, Configuration) else initial,
                          dtype=float)
        self.logp, self.grad = model.energy_and_gradient(self.x)
        if self.grad is None:
            raise DomainError("initial state has zero density")
        self.n_steps = 0
        self.n_accepted = 0

    def run(self, n_steps: int):
        m, h, gen = self.model, self.step_size, self.gen
        x, logp, grad = self.x, self.logp, self.grad
        acc = 0
        for _ in range(n_steps):
            if not np.all(np.isfinite(grad)):
                raise NumericalError("log-density gradient is not finite at the current state")
            x, logp, grad, ok = _transition(m, x, logp, grad, h, gen)
            acc += ok
        self.x, self.logp, self.grad = x, logp, grad
        self.n_steps += n_steps
        self.n_accepted += acc
        return self

    def configuration(self) -> Configuration:
        return Configuration(self.x, self.model.domain)

    @property
    def stats(self) -> ChainStats:
        rate = self.n_accepted / self.n_steps if self.n_steps else 0.0
        return ChainStats(rate, self.n_steps, self.n_accepted)


def sample_gibbs(model: GibbsModel, params: ChainParams, replica: int = 0, initial=None):
    """Run one chain; returns ``(samples, stats)``. Deterministic per seed."""
    chain = MalaChain(model, params.step_size, params.seed, replica, initial)
    chain.run(params.burn_in)
    samples = []
    for _ in range(params.n_samples):
        chain.run(params.thinning)
        samples.append(chain.configuration())
    stats = chain.stats
    if stats.acceptance_rate < 0.05 or stats.acceptance_rate > 0.95:
        warnings.warn(f"MALA acceptance rate {stats.acceptance_rate:.3f} outside [0.05, 0.95]",
                      ConvergenceWarning, stacklevel=2)
    return samples, stats


def sample_replicas(model: GibbsModel, params: ChainParams, n_replicas: int):
    """Independent chains with streams derived from (seed, replica id)."""
    samples, stats = [], []
    for r in range(n_replicas):
        s, st = sample_gibbs(model, params, replica=r)
        samples.extend(s)
        stats.append(st)
    return samples, stats


def smallest_separation(samples) -> float:
    return min(min_pair_distance(np.ascontiguousarray(s.positions)) for s in samples)
