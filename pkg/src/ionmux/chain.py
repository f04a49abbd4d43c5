"""Linear ion-chain statics: equilibrium positions, axial normal modes and
Lamb-Dicke parameters.

Internally everything is solved in the dimensionless units

    u = (x - center) / l,    l = (k q^2 / (m w0^2))^(1/3)

in which the potential energy reads ``sum(u^2)/2 + sum_{i<j} 1/|u_i - u_j|``
and forces are measured in units of ``m w0^2 l``.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from .constants import CA40_MASS, CONSTANTS, TWO_PI
from .errors import ConvergenceError, UnstableChainError

__all__ = [
    "ChainConfig",
    "EquilibriumChain",
    "NormalModeSet",
    "LambDickeTable",
    "length_scale",
    "equilibrium_positions",
    "normal_modes",
    "lamb_dicke_table",
    "chain_spacings",
    "coulomb_gradient",
    "coulomb_hessian",
]


@dataclass(frozen=True)
class ChainConfig:
    n_ions: int
    axial_freq: float  # rad/s
    ion_mass: float = CA40_MASS
    charge: float = CONSTANTS.elementary_charge

    def __post_init__(self):
        if int(self.n_ions) != self.n_ions or self.n_ions < 1:
            raise ValueError(f"n_ions must be a positive integer, got {self.n_ions}")
        if not self.axial_freq > 0:
            raise ValueError("axial_freq must be positive")
        if not self.ion_mass > 0:
            raise ValueError("ion_mass must be positive")
        if self.charge == 0:
            raise ValueError("charge must be nonzero")

    @classmethod
    def from_frequency_hz(cls, n_ions, freq_hz, **kwargs):
        return cls(n_ions=n_ions, axial_freq=TWO_PI * freq_hz, **kwargs)

    @property
    def length_scale(self):
        return length_scale(self)

    def with_frequency(self, axial_freq):
        return replace(self, axial_freq=axial_freq)


def length_scale(config):
    """Characteristic ion spacing ``(k q^2 / (m w0^2))**(1/3)`` in metres."""
    kq2 = CONSTANTS.coulomb_k * config.charge ** 2
    return (kq2 / (config.ion_mass * config.axial_freq ** 2)) ** (1.0 / 3.0)


@dataclass(frozen=True)
class EquilibriumChain:
    positions: np.ndarray  # m, ascending
    config: ChainConfig
    center: float = 0.0
    residual: float = 0.0  # max-norm gradient, units of m w0^2 l
    quartic: float = 0.0

    @property
    def n_ions(self):
        return self.config.n_ions

    @property
    def scaled_positions(self):
        return (self.positions - self.center) / length_scale(self.config)


@dataclass(frozen=True)
class NormalModeSet:
    frequencies: np.ndarray  # rad/s, ascending
    eigenvectors: np.ndarray  # (mode, ion), orthonormal rows
    config: ChainConfig = field(repr=False, default=None)

    def __len__(self):
        return len(self.frequencies)

    @property
    def com_index(self):
        return 0


@dataclass(frozen=True)
class LambDickeTable:
    eta: np.ndarray  # (mode, ion)
    probe_wavevector: float
    projection_cosine: float
    eta_single: float  # single-ion eta at the COM frequency
    n_ions: int

    @property
    def com_effective(self):
        """COM effective Lamb-Dicke parameter ``eta_single / sqrt(N)``."""
        return self.eta_single / np.sqrt(self.n_ions)


def coulomb_gradient(u, quartic=0.0):
    """Gradient of the dimensionless potential at scaled positions ``u``."""
    u = np.asarray(u, dtype=float)
    d = u[:, None] - u[None, :]
    np.fill_diagonal(d, np.inf)
    coulomb = np.sum(np.sign(d) / d ** 2, axis=1)
    return u + quartic * u ** 3 - coulomb


def coulomb_hessian(u, quartic=0.0):
    u = np.asarray(u, dtype=float)
    d = np.abs(u[:, None] - u[None, :])
    np.fill_diagonal(d, np.inf)
    off = -2.0 / d ** 3
    hess = off.copy()
    np.fill_diagonal(hess, 1.0 + 3.0 * quartic * u ** 2 - off.sum(axis=1))
    return hess


def _energy(u, quartic=0.0):
    if np.any(np.diff(u) <= 0):
        return np.inf
    iu = np.triu_indices(len(u), 1)
    d = np.abs(u[:, None] - u[None, :])[iu]
    return 0.5 * np.sum(u ** 2) + 0.25 * quartic * np.sum(u ** 4) + np.sum(1.0 / d)


def _newton(u, quartic, tol, max_iter):
    energy = _energy(u, quartic)
    for _ in range(max_iter):
        grad = coulomb_gradient(u, quartic)
        if np.max(np.abs(grad)) < tol:
            return u, np.max(np.abs(grad))
        step = np.linalg.solve(coulomb_hessian(u, quartic), grad)
        scale = 1.0
        for _ in range(60):
            trial = u - scale * step
            trial_energy = _energy(trial, quartic)
            # near the minimum energy differences drop below round-off
            if trial_energy <= energy + 1e-12 * abs(energy):
                break
            scale *= 0.5
        else:
            break
        u, energy = trial, trial_energy
    grad = coulomb_gradient(u, quartic)
    residual = np.max(np.abs(grad))
    if residual < tol:
        return u, residual
    raise ConvergenceError(
        f"equilibrium search did not converge after {max_iter} iterations "
        f"(residual {residual:.3e})"
    )


def equilibrium_positions(config, center=0.0, *, quartic=0.0, tol=1e-13, max_iter=200):
    """Equilibrium of N ions in a harmonic well centred at ``center``.

    Damped Newton iteration on the dimensionless energy, started from a
    uniform chain spanning ``2 N**0.9`` length units. ``quartic`` adds an
    optional ``quartic * u**4 / 4`` term (scaled units) used by the
    transport code; the mode analysis ignores it.
    """
    n = config.n_ions
    scale = length_scale(config)
    if n == 1:
        return EquilibriumChain(np.array([float(center)]), config, float(center), 0.0, quartic)
    half = n ** 0.9
    u0 = np.linspace(-half, half, n)
    u, residual = _newton(u0, quartic, tol, max_iter)
    positions = center + scale * np.sort(u)
    return EquilibriumChain(positions, config, float(center), float(residual), quartic)


def _fix_signs(vectors):
    # rows; largest-magnitude component positive, first index wins ties
    out = vectors.copy()
    for row in out:
        mags = np.abs(row)
        idx = int(np.flatnonzero(mags >= mags.max() * (1 - 1e-9))[0])
        if row[idx] < 0:
            row *= -1
    return out


def normal_modes(chain):
    """Axial normal modes from the Hessian at equilibrium (uniform masses)."""
    config = chain.config
    hess = coulomb_hessian(chain.scaled_positions)
    evals, evecs = np.linalg.eigh(hess)
    if np.any(evals <= 0):
        raise UnstableChainError(f"non-positive Hessian eigenvalue {evals.min():.3e}")
    order = np.argsort(evals)
    freqs = config.axial_freq * np.sqrt(evals[order])
    vectors = _fix_signs(evecs[:, order].T)
    return NormalModeSet(freqs, vectors, config)


def lamb_dicke_table(modes, wavelength, projection_cosine=1.0):
    if not wavelength > 0:
        raise ValueError("wavelength must be positive")
    if abs(projection_cosine) > 1:
        raise ValueError("|projection_cosine| must not exceed 1")
    config = modes.config
    k = TWO_PI / wavelength
    zpf = np.sqrt(CONSTANTS.hbar / (2 * config.ion_mass * modes.frequencies))
    eta = projection_cosine * k * zpf[:, None] * modes.eigenvectors
    eta_single = projection_cosine * k * np.sqrt(
        CONSTANTS.hbar / (2 * config.ion_mass * modes.frequencies[0])
    )
    return LambDickeTable(eta, k, projection_cosine, float(eta_single), config.n_ions)


def chain_spacings(chain):
    if chain.n_ions < 2:
        raise ValueError("spacings need at least two ions")
    return np.diff(chain.positions)
