"""Logarithmic derivatives: the finite-N drift, the truncated drift with
Taylor corrections from the exterior, and the elliptic drift.

For a cutoff R the exterior field acting on x with |x| <= R is split as

    sum_{|y|>R} F(x - y) = sum_{|i|<=l0} C_R^i x^i + residual(x),

with F(z) = z/|z|^d the Coulomb force. C_R^i are Taylor coefficients at the
origin and the residual is taken literally as exact minus partial sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _forces
from .errors import DomainError
from .kernels import MAX_ORDER, MultiIndex, evaluate_terms, force_terms, multi_indices_upto
from .model import CoefficientField, Configuration, GibbsModel, label_sort, radii

MODES = ("naive", "corrected", "translation_invariant", "finite")


@dataclass(frozen=True)
class DriftSpec:
    """Cutoff radius, Taylor order and drift mode.

    Modes: ``naive`` truncates the Coulomb sum to the ball S_R, ``corrected``
    adds the exterior Taylor polynomial and residual, ``translation_invariant``
    sums over a ball centred at the particle, and ``finite`` is the full
    model drift (the log-gradient of the N-particle density).
    """

    cutoff_R: float
    taylor_order_l0: int = 2
    mode: str = "corrected"

    def __post_init__(self):
        if not self.cutoff_R > 0:
            raise DomainError("cutoff_R must be positive")
        if not 0 <= self.taylor_order_l0 <= MAX_ORDER:
            raise DomainError(f"taylor_order_l0 must lie in [0, {MAX_ORDER}]")
        if self.mode not in MODES:
            raise DomainError(f"unknown drift mode {self.mode!r}")


@dataclass(frozen=True)
class CorrectionTable:
    """C_R^i for all |i| <= l0, stored in descending-lex order per order."""

    dim: int
    cutoff_R: float
    l0: int
    indices: tuple
    values: np.ndarray  # (len(indices), d)

    def __getitem__(self, index) -> np.ndarray:
        if not isinstance(index, MultiIndex):
            index = MultiIndex(tuple(index))
        return self.values[self.indices.index(index)]

    def polynomial(self, x) -> np.ndarray:
        """sum_i C^i x^i, vectorised over leading axes of x."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for idx, c in zip(self.indices, self.values):
            out = out + idx.monomial(x)[..., None] * c
        return out


def _points(config) -> np.ndarray:
    pos = config.positions if isinstance(config, Configuration) else config
    pos = np.asarray(pos, dtype=float)
    if pos.size == 0:
        return pos.reshape(0, pos.shape[-1] if pos.ndim == 2 else 2)
    return pos


def _label_ordered(pos):
    return pos[label_sort(pos).permutation] if len(pos) else pos


def _exterior_points(exterior, R, dim=None):
    pos = _points(exterior)
    if dim is not None and len(pos) == 0:
        pos = pos.reshape(0, dim)
    if len(pos) and np.any(radii(pos) <= R):
        raise DomainError("every exterior point must satisfy |y| > R")
    # fixed summation order: label order
    return np.ascontiguousarray(_label_ordered(pos))


def finite_drift(model: GibbsModel, i: int, positions) -> np.ndarray:
    """-beta (grad Phi(x_i) + sum_{j != i} grad Psi(x_i, x_j)); row i of the
    model's log-density gradient."""
    pos = _points(positions)
    if not 0 <= i < len(pos):
        raise DomainError(f"particle index {i} out of range")
    return model.drift_rows(pos, np.array([i]))[0]


def taylor_correction_constants(exterior, R: float, l0: int, dim: int | None = None
                                ) -> CorrectionTable:
    """C_R^i = (1/i!) sum_{|y|>R} (-grad Psi)^(i)(-y) for every |i| <= l0."""
    if not R > 0:
        raise DomainError("R must be positive")
    if not 0 <= l0 <= MAX_ORDER:
        raise DomainError(f"l0 must lie in [0, {MAX_ORDER}]")
    ys = _exterior_points(exterior, R, dim)
    d = ys.shape[1] if ys.ndim == 2 and ys.shape[1] else (dim or 2)
    indices = tuple(multi_indices_upto(d, l0))
    values = np.zeros((len(indices), d))
    if len(ys):
        z = -ys
        for k, idx in enumerate(indices):
            if idx.order == 0:
                # same arithmetic as the exact field, so the residual vanishes at 0
                values[k] = exterior_field(ys, np.zeros(d))
                continue
            for c in range(d):
                values[k, c] = _forces.ordered_sum(evaluate_terms(force_terms(d, c, idx), z))
            values[k] /= idx.factorial
    return CorrectionTable(d, float(R), int(l0), indices, values)


def exterior_field(exterior, x) -> np.ndarray:
    """Exact sum_y F(x - y) over the given points, summed in the given order.

    ``x`` may be a single point or an (M, d) array of points.
    """
    ys = np.ascontiguousarray(_points(exterior))
    x = np.asarray(x, dtype=float)
    if len(ys) == 0:
        return np.zeros(x.shape)
    targets = np.ascontiguousarray(np.atleast_2d(x))
    out, hit = _forces.coulomb_field(targets, ys)
    if hit.any():
        raise DomainError("evaluation point coincides with a source point")
    return out.reshape(x.shape)


def taylor_residual(exterior, R: float, l0: int, x, table: CorrectionTable | None = None
                    ) -> np.ndarray:
    """Exterior field at x minus its Taylor polynomial of order l0 at the origin."""
    x = np.asarray(x, dtype=float)
    if float(np.sqrt(np.dot(x, x))) > R:
        raise DomainError("taylor_residual needs |x| <= R")
    ys = _exterior_points(exterior, R, x.shape[0])
    if table is None:
        table = taylor_correction_constants(ys, R, l0, x.shape[0])
    if len(ys) == 0:
        return np.zeros_like(x)
    return exterior_field(ys, x) - table.polynomial(x)


def _coulomb_sum(x, others):
    if len(others) == 0:
        return np.zeros_like(x)
    return exterior_field(others, x)


def truncated_drift(model: GibbsModel, spec: DriftSpec, i: int, config) -> np.ndarray:
    """Drift of particle i under ``spec``; see :class:`DriftSpec` for modes.

    ``config`` is the full finite configuration, including any exterior
    environment. The Coulomb kernel here is always the free one.
    """
    pos = _points(config)
    if not 0 <= i < len(pos):
        raise DomainError(f"particle index {i} out of range")
    if spec.mode == "finite":
        return finite_drift(model, i, pos)
    x = pos[i]
    others = np.delete(pos, i, axis=0)
    beta = model.beta
    if spec.mode == "translation_invariant":
        near = others[radii(others - x) <= spec.cutoff_R]
        return beta * _coulomb_sum(x, _label_ordered(near))
    R = spec.cutoff_R
    r_others = radii(others)
    interior = _label_ordered(others[r_others <= R])
    naive = beta * (-model.confinement.gradient(x) + _coulomb_sum(x, interior))
    if spec.mode == "naive":
        return naive
    if float(radii(x)) > R:
        raise DomainError("corrected drift needs the particle inside S_R")
    exterior = pos[radii(pos) > R]
    table = taylor_correction_constants(exterior, R, spec.taylor_order_l0, pos.shape[1])
    poly = table.polynomial(x)
    resid = taylor_residual(exterior, R, spec.taylor_order_l0, x, table)
    return naive + beta * (poly + resid)


def elliptic_drift(coeff: CoefficientField, log_derivative, x) -> np.ndarray:
    """b = (grad a + a d) / 2."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(log_derivative, dtype=float)
    return 0.5 * (coeff.divergence(x) + coeff.diagonal(x) * d)
