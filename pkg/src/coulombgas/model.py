"""Configurations, labels, confinement and coefficient fields, and the
N-particle Gibbs density.

The Hamiltonian uses the unordered pair sum

    H(x) = sum_i Phi(x_i) + sum_{j<k} Psi(x_j, x_k),

so that ``grad log m = -beta grad H`` is literally the finite-N drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _forces
from .errors import DomainError
from .kernels import PairKernel, torus_smooth_coefficients

_NO_COEF = np.zeros(1)


def radii(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.sqrt(np.sum(x * x, axis=-1))


@dataclass(frozen=True)
class Domain:
    """``full`` space, a closed ``ball`` of radius ``size``, or a ``torus``
    box of side ``size`` centred at the origin."""

    kind: str = "full"
    size: float = math.inf

    def __post_init__(self):
        if self.kind not in ("full", "ball", "torus"):
            raise DomainError(f"unknown domain kind {self.kind!r}")
        if self.kind != "full" and not (0 < self.size < math.inf):
            raise DomainError(f"{self.kind} domain needs a positive finite size")

    @property
    def scale(self) -> float:
        return self.size if self.kind != "full" else 1.0

    def contains(self, positions) -> bool:
        positions = np.asarray(positions, dtype=float)
        if self.kind == "ball":
            return bool(np.all(radii(positions) <= self.size))
        return True

    def wrap(self, positions) -> np.ndarray:
        positions = np.asarray(positions, dtype=float)
        if self.kind != "torus":
            return positions
        # fold into [-L/2, L/2)
        L = self.size
        return positions - L * np.floor(positions / L + 0.5)


FULL_SPACE = Domain()


@dataclass(frozen=True, eq=False)
class Configuration:
    """A finite point set with its domain. Positions are stored read-only."""

    positions: np.ndarray
    domain: Domain = FULL_SPACE

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float, copy=True)
        if pos.ndim != 2:
            if pos.size == 0:
                pos = pos.reshape(0, 2)
            else:
                raise DomainError("positions must be an (N, d) array")
        if pos.shape[1] < 2:
            raise DomainError("dimension must be >= 2")
        if not np.all(np.isfinite(pos)):
            raise DomainError("non-finite coordinate in configuration")
        if len(pos) > 1 and len(np.unique(pos, axis=0)) != len(pos):
            raise DomainError("configuration contains coincident points")
        if not self.domain.contains(pos):
            raise DomainError("point outside the ball domain")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def __len__(self):
        return self.n

    def __eq__(self, other):
        return (isinstance(other, Configuration) and self.domain == other.domain
                and np.array_equal(self.positions, other.positions))

    def subset(self, mask) -> "Configuration":
        return Configuration(self.positions[mask], self.domain)


@dataclass(frozen=True, eq=False)
class LabelOrder:
    permutation: np.ndarray

    def __eq__(self, other):
        return isinstance(other, LabelOrder) and np.array_equal(self.permutation, other.permutation)

    def apply(self, positions) -> np.ndarray:
        return np.asarray(positions)[self.permutation]


def label_sort(config) -> LabelOrder:
    """Order points by non-decreasing |x|; ties broken lexicographically."""
    pos = config.positions if isinstance(config, Configuration) else np.asarray(config, float)
    r2 = np.sum(pos * pos, axis=1)
    keys = [pos[:, k] for k in range(pos.shape[1] - 1, -1, -1)] + [r2]
    return LabelOrder(np.lexsort(keys))


def labelled(config: Configuration) -> Configuration:
    """The same configuration with rows in label order."""
    return Configuration(label_sort(config).apply(config.positions), config.domain)


def split_interior_exterior(config: Configuration, R: float):
    """Split into points with |x| <= R and the rest."""
    if R <= 0:
        raise DomainError("R must be positive")
    inside = radii(config.positions) <= R
    return config.subset(inside), config.subset(~inside)


def periodic_extension(config: Configuration, radius: float) -> Configuration:
    """Tile a torus configuration over R^d and keep the images with |x| <= radius."""
    if config.domain.kind != "torus":
        raise DomainError("periodic extension needs a torus configuration")
    L = config.domain.size
    d = config.dim
    reach = int(math.ceil(radius / L + 0.5))
    shifts = np.array(np.meshgrid(*[np.arange(-reach, reach + 1)] * d, indexing="ij"))
    shifts = shifts.reshape(d, -1).T * L
    # the central copy first, then shells in a fixed order
    order = np.lexsort([np.sum(shifts**2, axis=1)])
    images = (config.positions[None, :, :] + shifts[order][:, None, :]).reshape(-1, d)
    keep = radii(images) <= radius
    return Configuration(images[keep])


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfinementField:
    """``zero``, ``gaussian`` (Phi = c|x|^2) or ``sphere``.

    The sphere field is ``c * (1 + |x/length|^2)^d / 2^d``, the reciprocal
    of the stereographic Jacobian.
    """

    kind: str = "zero"
    c: float = 1.0
    length: float = 1.0

    def __post_init__(self):
        if self.kind not in ("zero", "gaussian", "sphere"):
            raise DomainError(f"unknown confinement {self.kind!r}")
        if self.kind != "zero" and self.c <= 0:
            raise DomainError("confinement constant must be positive")

    @property
    def code(self):
        return {"zero": _forces.CONF_ZERO, "gaussian": _forces.CONF_GAUSSIAN,
                "sphere": _forces.CONF_SPHERE}[self.kind]

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1)
        if self.kind == "gaussian":
            return self.c * r2
        if self.kind == "sphere":
            d = x.shape[-1]
            return self.c * (1.0 + r2 / self.length**2) ** d / 2.0**d
        return np.zeros_like(r2)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "gaussian":
            return 2.0 * self.c * x
        if self.kind == "sphere":
            d = x.shape[-1]
            y2 = np.sum(x * x, axis=-1, keepdims=True) / self.length**2
            return self.c * d * (1.0 + y2) ** (d - 1) * 2.0 * x / (2.0**d * self.length**2)
        return np.zeros_like(x)

    def laplacian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        r2 = np.sum(x * x, axis=-1)
        if self.kind == "gaussian":
            return np.full_like(r2, 2.0 * self.c * d)
        if self.kind == "sphere":
            L2 = self.length**2
            y2 = r2 / L2
            pref = self.c * 2.0 * d / (2.0**d * L2)
            return pref * ((d - 1) * (1.0 + y2) ** (d - 2) * 2.0 * y2 + d * (1.0 + y2) ** (d - 1))
        return np.zeros_like(r2)


@dataclass(frozen=True)
class CoefficientField:
    """Diffusion matrix a(x): ``identity`` or ``diagonal`` with
    ``a_kk = 1 + epsilon sin(x_k)``."""

    kind: str = "identity"
    epsilon: float = 0.0

    def __post_init__(self):
        if self.kind not in ("identity", "diagonal"):
            raise DomainError(f"unknown coefficient field {self.kind!r}")
        if not abs(self.epsilon) < 0.5:
            raise DomainError("|epsilon| must be below 1/2")

    @property
    def ellipticity(self) -> float:
        e = abs(self.epsilon) if self.kind == "diagonal" else 0.0
        return (1.0 + e) / (1.0 - e)

    def diagonal(self, x) -> np.ndarray:
        """Diagonal entries of a(x), shape (..., d)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "identity":
            return np.ones_like(x)
        return 1.0 + self.epsilon * np.sin(x)

    def matrix(self, x) -> np.ndarray:
        diag = self.diagonal(x)
        return diag[..., :, None] * np.eye(diag.shape[-1])

    def sigma_diagonal(self, x) -> np.ndarray:
        """Diagonal of sigma with sigma^T sigma = a."""
        return np.sqrt(self.diagonal(x))

    def divergence(self, x) -> np.ndarray:
        """(grad a)_l = sum_k d a_kl / d x_k."""
        x = np.asarray(x, dtype=float)
        if self.kind == "identity":
            return np.zeros_like(x)
        return self.epsilon * np.cos(x)


# ---------------------------------------------------------------------------
# Gibbs model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GibbsModel:
    dim: int
    beta: float
    n_particles: int
    confinement: ConfinementField = field(default_factory=ConfinementField)
    kernel: PairKernel = None
    domain: Domain = FULL_SPACE

    def __post_init__(self):
        if self.dim < 2:
            raise DomainError("dimension must be >= 2")
        if not self.beta > 0:
            raise DomainError("beta must be positive")
        if self.n_particles < 1:
            raise DomainError("need at least one particle")
        if self.kernel is None:
            object.__setattr__(self, "kernel", PairKernel("coulomb", self.dim))
        if self.kernel.dim != self.dim:
            raise DomainError("kernel dimension does not match the model")
        if self.domain.kind == "torus" and self.kernel.kind != "torus":
            raise DomainError("a torus domain needs the torus kernel")

    @property
    def _kernel_args(self):
        code = {"coulomb": _forces.KERNEL_COULOMB, "torus": _forces.KERNEL_TORUS,
                "sphere": _forces.KERNEL_SPHERE}[self.kernel.kind]
        conf = self.confinement
        coef = torus_smooth_coefficients() if self.kernel.kind == "torus" else _NO_COEF
        return (code, float(self.kernel.amplitude), float(self.kernel.length),
                conf.code, float(conf.c), float(conf.length), coef)

    def _as_array(self, positions):
        if isinstance(positions, Configuration):
            positions = positions.positions
        pos = np.ascontiguousarray(positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != self.dim:
            raise DomainError(f"positions must have shape (N, {self.dim})")
        return pos

    def hamiltonian_rows(self, positions, rows=None, energy=True):
        """Raw compiled evaluation: (grad H rows, energy shares, coincidence flags)."""
        pos = self._as_array(positions)
        if rows is None:
            rows = np.arange(len(pos))
        rows = np.ascontiguousarray(rows, dtype=np.int64)
        return _forces.hamiltonian_rows(pos, rows, *self._kernel_args, energy)

    def energy_and_gradient(self, positions):
        """``(log density, grad log density)``; ``(-inf, None)`` on coincidence."""
        pos = self._as_array(positions)
        if not self.domain.contains(pos):
            return -math.inf, None
        grad, energy, status = self.hamiltonian_rows(pos)
        if status.any():
            return -math.inf, None
        return -self.beta * _forces.ordered_sum(energy), -self.beta * grad

    def log_density(self, positions) -> float:
        """Unnormalised log density ``-beta H``; ``-inf`` where it vanishes."""
        pos = self._as_array(positions)
        if not self.domain.contains(pos):
            return -math.inf
        # canonical order makes the sum exactly permutation invariant
        pos = np.ascontiguousarray(label_sort(pos).apply(pos))
        _, energy, status = self.hamiltonian_rows(pos)
        if status.any():
            return -math.inf
        return -self.beta * _forces.ordered_sum(energy)

    def log_density_gradient(self, positions) -> np.ndarray:
        pos = self._as_array(positions)
        grad, _, status = self.hamiltonian_rows(pos, energy=False)
        if status.any():
            raise DomainError("coincident particles: log-density gradient undefined")
        return -self.beta * grad

    def drift_rows(self, positions, rows) -> np.ndarray:
        """Rows of :meth:`log_density_gradient` for selected particles only."""
        pos = self._as_array(positions)
        grad, _, status = self.hamiltonian_rows(pos, rows, energy=False)
        if status.any():
            raise DomainError("coincident particles: drift undefined")
        return -self.beta * grad

    @property
    def bulk_density(self) -> float:
        """Equilibrium density of the bulk; used to set length scales."""
        if self.domain.kind == "torus":
            return self.n_particles / self.domain.size**self.dim
        if self.confinement.kind == "gaussian" and self.kernel.kind == "coulomb":
            # Laplace Phi = s_{d-1} * rho for the unit-amplitude kernel
            s = 2.0 * math.pi ** (self.dim / 2) / math.gamma(self.dim / 2)
            return 2.0 * self.confinement.c * self.dim / (s * self.kernel.amplitude)
        if self.domain.kind == "ball":
            return self.n_particles / _ball_volume(self.dim, self.domain.size)
        return 1.0


def _ball_volume(d, r):
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * r**d


def gaussian_model(n, beta=2.0, c=1.0, dim=2, domain=FULL_SPACE) -> GibbsModel:
    """Coulomb gas confined by Phi = c|x|^2."""
    return GibbsModel(dim, beta, n, ConfinementField("gaussian", c),
                      PairKernel("coulomb", dim), domain)


def periodic_model(n, beta=2.0, density=1.0) -> GibbsModel:
    """Two-dimensional gas on a torus of side sqrt(n/density) with the
    periodic Green's function as pair kernel (locally -log|x|)."""
    side = math.sqrt(n / density)
    return GibbsModel(2, beta, n, ConfinementField("zero"),
                      PairKernel("torus", 2, 1.0, side), Domain("torus", side))


def sphere_model(n, beta=2.0, c=1.0, length=1.0) -> GibbsModel:
    return GibbsModel(2, beta, n, ConfinementField("sphere", c, length),
                      PairKernel("sphere", 2, 1.0, length))
