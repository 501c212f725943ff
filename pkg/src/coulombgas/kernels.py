"""Coulomb kernels: free-space potential, exact force derivatives, and the
periodic (flat torus) and stereographic-sphere variants in two dimensions.

All functions are pure. Points are numpy arrays whose last axis is the
spatial dimension.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import exp1

from .errors import CapExceeded, DomainError

# Default cap on |i| for kernel_partial. Taylor order l0 needs l0 + 1.
MAX_ORDER = 8

# Ewald splitting parameter for the unit torus (eta**2 = pi balances the
# real- and reciprocal-space sums).
EWALD_ETA = math.sqrt(math.pi)
EWALD_TOL = 1e-13

# Additive constant that gives the theta-function form zero torus mean.
_THETA_CONST = -math.pi / 12.0
_THETA_Q = math.exp(-math.pi)
_THETA_TERMS = 7


def _check_dim(d):
    if d < 2:
        raise DomainError(f"dimension must be >= 2, got {d}")


def free_coulomb_potential(d: int, x) -> float:
    """Coulomb potential: ``|x|**(2-d)/(d-2)`` for d >= 3, ``-log|x|`` for d = 2."""
    _check_dim(d)
    x = np.asarray(x, dtype=float)
    r2 = float(np.dot(x, x))
    if r2 == 0.0:
        raise DomainError("Coulomb potential is singular at x = 0")
    if d == 2:
        return -0.5 * math.log(r2)
    return r2 ** (-(d - 2) / 2.0) / (d - 2)


def free_coulomb_gradient(d: int, x) -> np.ndarray:
    """Gradient ``-x/|x|**d`` of the Coulomb potential."""
    _check_dim(d)
    x = np.asarray(x, dtype=float)
    r2 = float(np.dot(x, x))
    if r2 == 0.0:
        raise DomainError("Coulomb gradient is singular at x = 0")
    return -x / r2 ** (d / 2.0)


# ---------------------------------------------------------------------------
# symbolic derivatives of the force x_c / |x|^d
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class MultiIndex:
    exponents: tuple

    def __post_init__(self):
        exps = tuple(int(e) for e in self.exponents)
        if len(exps) < 2:
            raise DomainError("multi-index needs d >= 2 entries")
        if any(e < 0 for e in exps):
            raise DomainError(f"negative exponent in {exps}")
        object.__setattr__(self, "exponents", exps)

    @property
    def order(self) -> int:
        return sum(self.exponents)

    @property
    def dim(self) -> int:
        return len(self.exponents)

    @property
    def factorial(self) -> int:
        """Componentwise factorial product i_1! ... i_d!."""
        return math.prod(math.factorial(e) for e in self.exponents)

    def monomial(self, x) -> np.ndarray:
        """x**i = x_1**i_1 ... x_d**i_d, vectorised over leading axes."""
        x = np.asarray(x, dtype=float)
        out = np.ones(x.shape[:-1])
        for j, e in enumerate(self.exponents):
            if e:
                out = out * x[..., j] ** e
        return out

    def shifted(self, j: int, step: int) -> "MultiIndex":
        exps = list(self.exponents)
        exps[j] += step
        return MultiIndex(tuple(exps))

    def __str__(self):
        return "(" + ",".join(str(e) for e in self.exponents) + ")"


def multi_indices(d: int, k: int) -> list[MultiIndex]:
    """All multi-indices of length d and order k, in descending lexicographic order."""
    out = []
    for combo in itertools.product(range(k, -1, -1), repeat=d):
        if sum(combo) == k:
            out.append(MultiIndex(combo))
    return out


def multi_indices_upto(d: int, order: int) -> list[MultiIndex]:
    out = []
    for k in range(order + 1):
        out.extend(multi_indices(d, k))
    return out


@dataclass(frozen=True)
class RadialTerm:
    """The function ``coefficient * x**monomial * |x|**(-radial_power)``."""

    coefficient: float
    monomial: MultiIndex
    radial_power: int

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1)
        return self.coefficient * self.monomial.monomial(x) * _inv_power(r2, self.radial_power)

    def differentiate(self, j: int) -> list["RadialTerm"]:
        """Partial derivative in coordinate j, as a list of terms."""
        out = []
        a_j = self.monomial.exponents[j]
        if a_j:
            out.append(RadialTerm(self.coefficient * a_j, self.monomial.shifted(j, -1),
                                  self.radial_power))
        if self.radial_power:
            out.append(RadialTerm(-self.coefficient * self.radial_power,
                                  self.monomial.shifted(j, +1), self.radial_power + 2))
        return out


def _inv_power(r2, k):
    # |x|^{-k} from |x|^2; even powers avoid the square root
    if k % 2 == 0:
        return r2 ** (-(k // 2))
    return r2 ** (-k / 2.0)


def _collect(terms):
    acc: dict = {}
    for t in terms:
        key = (t.monomial, t.radial_power)
        acc[key] = acc.get(key, 0.0) + t.coefficient
    return [RadialTerm(c, m, k) for (m, k), c in sorted(acc.items()) if c != 0.0]


@lru_cache(maxsize=None)
def force_terms(d: int, component: int, index: MultiIndex) -> tuple:
    """Terms of the partial derivative ``d^i [x_c / |x|^d]`` (c is 0-based)."""
    _check_dim(d)
    if index.dim != d:
        raise DomainError(f"multi-index {index} does not match d = {d}")
    if not 0 <= component < d:
        raise DomainError(f"component {component} out of range for d = {d}")
    if index.order == 0:
        return (RadialTerm(1.0, MultiIndex(tuple(int(j == component) for j in range(d))), d),)
    # peel one derivative off the last non-zero slot and recurse
    j = max(p for p, e in enumerate(index.exponents) if e)
    parent = force_terms(d, component, index.shifted(j, -1))
    out = []
    for t in parent:
        out.extend(t.differentiate(j))
    return tuple(_collect(out))


def evaluate_terms(terms, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    total = np.zeros(x.shape[:-1])
    for t in terms:
        total = total + t.evaluate(x)
    return total


def kernel_partial(d: int, component: int, index, x, max_order: int = MAX_ORDER):
    """Multi-index partial of one component of the force ``-grad Psi``.

    ``component`` is 0-based. ``x`` may carry leading batch axes; every
    point must be non-zero.
    """
    if not isinstance(index, MultiIndex):
        index = MultiIndex(tuple(index))
    if index.order > max_order:
        raise CapExceeded(f"|i| = {index.order} exceeds cap {max_order}")
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != d:
        raise DomainError(f"point has dimension {x.shape[-1]}, expected {d}")
    if np.any(np.sum(x * x, axis=-1) == 0.0):
        raise DomainError("force derivatives are singular at x = 0")
    val = evaluate_terms(force_terms(d, component, index), x)
    return float(val) if val.ndim == 0 else val


def force_field(d: int, z) -> np.ndarray:
    """``-grad Psi(z) = z/|z|^d`` built from the order-0 symbolic terms.

    Shares its arithmetic with :func:`kernel_partial` so that exact field
    values and Taylor coefficients agree bit-for-bit at the expansion point.
    """
    z = np.asarray(z, dtype=float)
    zero = MultiIndex((0,) * d)
    return np.stack([evaluate_terms(force_terms(d, c, zero), z) for c in range(d)], axis=-1)


# ---------------------------------------------------------------------------
# flat torus (d = 2)
# ---------------------------------------------------------------------------


def _wrap_unit(x):
    return x - np.round(x)


def _ewald_cutoffs(eta=EWALD_ETA, tol=EWALD_TOL):
    # real space: worst-case image distance is n - 1/2 after wrapping
    n_real = 1
    while 0.5 * exp1(eta**2 * (n_real - 0.5) ** 2) * 8 * n_real > tol:
        n_real += 1
    n_rec = 1
    while math.exp(-(math.pi * n_rec / eta) ** 2) / (2 * math.pi * n_rec**2) * 8 * n_rec > tol:
        n_rec += 1
    return n_real, n_rec


_EWALD_CUTOFFS = _ewald_cutoffs()


def torus_green(x):
    """Periodic Green's function on the unit torus by Ewald summation.

    Solves ``-(1/2pi) Laplace G = delta_0 - 1`` with zero torus mean, so that
    ``G(x) + log|x|`` stays bounded near the origin. Returns ``(value,
    gradient)``; ``x`` may carry leading batch axes.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise DomainError("torus Green's function is implemented for d = 2 only")
    w = _wrap_unit(x)
    r2min = np.sum(w * w, axis=-1)
    if np.any(r2min == 0.0):
        raise DomainError("torus Green's function is singular on the lattice")
    eta2 = EWALD_ETA**2
    n_real, n_rec = _EWALD_CUTOFFS
    value = np.full(x.shape[:-1], -math.pi / (2.0 * eta2))
    grad = np.zeros(x.shape)
    rng = range(-n_real, n_real + 1)
    for n1 in rng:
        for n2 in rng:
            dz = w - np.array([n1, n2], dtype=float)
            r2 = np.sum(dz * dz, axis=-1)
            value = value + 0.5 * exp1(eta2 * r2)
            grad = grad - (np.exp(-eta2 * r2) / r2)[..., None] * dz
    rng = range(-n_rec, n_rec + 1)
    for k1 in rng:
        for k2 in rng:
            k2sum = k1 * k1 + k2 * k2
            if k2sum == 0:
                continue
            amp = math.exp(-math.pi**2 * k2sum / eta2) / (2.0 * math.pi * k2sum)
            phase = 2.0 * math.pi * (k1 * w[..., 0] + k2 * w[..., 1])
            value = value + amp * np.cos(phase)
            s = -2.0 * math.pi * amp * np.sin(phase)
            grad = grad + np.stack([s * k1, s * k2], axis=-1)
    if value.ndim == 0:
        return float(value), grad
    return value, grad


def torus_green_theta(x):
    """Same function as :func:`torus_green` via the Jacobi theta product.

    Vectorised numpy version of the formula used by the compiled pair
    kernels; kept here so the two evaluation routes can be compared.
    """
    x = np.asarray(x, dtype=float)
    w = _wrap_unit(x)
    u = math.pi * (w[..., 0] + 1j * w[..., 1])
    s = np.sin(u)
    c = np.cos(u)
    if np.any(s == 0):
        raise DomainError("torus Green's function is singular on the lattice")
    log_theta = math.log(2.0) - math.pi / 4.0 + np.log(np.abs(s))
    dlog = c / s
    s2 = 2.0 * s * c
    c2 = 1.0 - 2.0 * s * s
    for n in range(1, _THETA_TERMS + 1):
        qn = _THETA_Q ** (2 * n)
        den = 1.0 - 2.0 * qn * c2 + qn * qn
        log_theta = log_theta + np.log(np.abs(den))
        dlog = dlog + 4.0 * qn * s2 / den
    value = -log_theta + math.pi * w[..., 1] ** 2 + _THETA_CONST
    gx = -math.pi * dlog.real
    gy = math.pi * dlog.imag + 2.0 * math.pi * w[..., 1]
    grad = np.stack([gx, gy], axis=-1)
    if value.ndim == 0:
        return float(value), grad
    return value, grad


TORUS_SERIES_TERMS = 7


@lru_cache(maxsize=None)
def torus_smooth_coefficients(n_terms: int = TORUS_SERIES_TERMS) -> np.ndarray:
    """Coefficients c_k of the smooth part of the unit-torus Green's function.

    With the nearest 3x3 logarithmic images and ``(pi/2)|w|^2`` removed, the
    remainder is harmonic near the unit cell and invariant under the square's
    symmetries, so it equals ``Re sum_k c_k z^(4k)`` with real c_k. Fitted by
    least squares on a Chebyshev grid against the theta form.
    """
    k = 40
    t = 0.5 * np.cos(np.pi * (np.arange(k) + 0.5) / k)
    w = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)
    smooth = torus_green_theta(w)[0] - 0.5 * math.pi * np.sum(w * w, axis=-1)
    z = w[:, 0] + 1j * w[:, 1]
    # log of the nearest 3x3 image distances: prod (z - n) = z (z^4 - 1)(z^4 + 4)
    smooth = smooth + np.log(np.abs(z * (z**4 - 1) * (z**4 + 4)))
    z4 = z**4
    basis = np.stack([np.real(z4**j) for j in range(n_terms)], axis=1)
    coef, *_ = np.linalg.lstsq(basis, smooth, rcond=None)
    return np.ascontiguousarray(coef)


# ---------------------------------------------------------------------------
# stereographic sphere (d = 2)
# ---------------------------------------------------------------------------


def inverse_stereographic(y) -> np.ndarray:
    """Map y in R^d to the unit sphere in R^{d+1} (north pole excluded)."""
    y = np.asarray(y, dtype=float)
    r2 = np.sum(y * y, axis=-1, keepdims=True)
    return np.concatenate([2.0 * y, r2 - 1.0], axis=-1) / (1.0 + r2)


def stereographic(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p[..., :-1] / (1.0 - p[..., -1:])


def sphere_pullback_kernel(u, v) -> float:
    """``-log`` of the chordal distance between the sphere images of u and v."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.array_equal(u, v):
        raise DomainError("sphere kernel is singular at u = v")
    # closed form of the chordal distance avoids cancellation on the sphere
    duv2 = float(np.sum((u - v) ** 2))
    chord2 = 4.0 * duv2 / ((1.0 + float(u @ u)) * (1.0 + float(v @ v)))
    return -0.5 * math.log(chord2)


def sphere_pullback_gradient(u, v) -> np.ndarray:
    """Gradient of :func:`sphere_pullback_kernel` in its first argument."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    z = u - v
    r2 = float(z @ z)
    if r2 == 0.0:
        raise DomainError("sphere kernel is singular at u = v")
    return -z / r2 + u / (1.0 + float(u @ u))


@dataclass(frozen=True)
class PairKernel:
    """Pair interaction ``amplitude * base((x - y)/length)``.

    ``kind`` is one of ``"coulomb"``, ``"torus"``, ``"sphere"``. For the
    torus the period in physical units is ``length``.
    """

    kind: str = "coulomb"
    dim: int = 2
    amplitude: float = 1.0
    length: float = 1.0

    KINDS = ("coulomb", "torus", "sphere")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise DomainError(f"unknown kernel kind {self.kind!r}")
        _check_dim(self.dim)
        if self.kind in ("torus", "sphere") and self.dim != 2:
            raise DomainError(f"{self.kind} kernel is only available for d = 2")
        if self.length <= 0 or self.amplitude <= 0:
            raise DomainError("kernel amplitude and length must be positive")

    @property
    def background_density(self) -> float:
        """Neutralising density psi: ``-Laplace_x Psi = c delta - psi``."""
        if self.kind == "torus":
            return 2.0 * math.pi * self.amplitude / self.length**2
        return 0.0

    def value(self, x, y) -> float:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "coulomb":
            if self.length == 1.0:
                return self.amplitude * free_coulomb_potential(self.dim, x - y)
            return self.amplitude * free_coulomb_potential(self.dim, (x - y) / self.length)
        if self.kind == "torus":
            return self.amplitude * torus_green((x - y) / self.length)[0]
        return self.amplitude * sphere_pullback_kernel(x / self.length, y / self.length)

    def gradient(self, x, y) -> np.ndarray:
        """Gradient in the first argument."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        scale = self.amplitude / self.length
        if self.kind == "coulomb":
            return scale * free_coulomb_gradient(self.dim, (x - y) / self.length)
        if self.kind == "torus":
            return scale * torus_green((x - y) / self.length)[1]
        return scale * sphere_pullback_gradient(x / self.length, y / self.length)
