"""Independent reference computations used by the tests.

Each oracle deliberately takes a different route from the library code:
direct energy minimisation instead of Newton on the gradient, quadrature of
the driven oscillator instead of ODE integration, dense matrix functions
instead of Laguerre recurrences.
"""
import numpy as np
from scipy.linalg import eigh_tridiagonal, expm
from scipy.optimize import minimize

from ionmux.constants import CONSTANTS


def brute_force_equilibrium(config):
    """Minimise the SI potential energy with Powell's derivative-free method."""
    n = config.n_ions
    k, q, m, w = CONSTANTS.coulomb_k, config.charge, config.ion_mass, config.axial_freq
    unit = 1e-6  # optimise in micrometres

    def energy(x_um):
        x = np.sort(x_um) * unit
        trap = 0.5 * m * w ** 2 * np.sum(x ** 2)
        d = np.abs(np.subtract.outer(x, x))[np.triu_indices(n, 1)]
        return (trap + k * q * q * np.sum(1.0 / d)) / (k * q * q / unit)

    x0 = np.linspace(-3.0, 3.0, n) * n
    res = minimize(energy, x0, method="Powell",
                   options={"xtol": 1e-12, "ftol": 1e-15, "maxiter": 200000, "maxfev": 400000})
    return np.sort(res.x) * unit


def gauss_legendre_integral(func, edges, order=12):
    """Integrate ``func`` over consecutive intervals given by ``edges``."""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    a, b = np.asarray(edges[:-1]), np.asarray(edges[1:])
    half = 0.5 * (b - a)
    t = (0.5 * (a + b))[:, None] + half[:, None] * nodes[None, :]
    return np.sum(half[:, None] * weights[None, :] * func(t))


def forced_oscillator_n_alpha(center_rate, omega, mass, t0, t1, breakpoints=(), max_piece=20e-9):
    """``|alpha|^2`` of a ground-state ion dragged by a trap centre ``x0(t)``.

    For a harmonic well of fixed frequency the final coherent amplitude is
    ``sqrt(m w / 2 hbar) * |int dx0/dt exp(i w t) dt|``.
    """
    pts = np.unique(np.concatenate([[t0, t1], np.asarray(breakpoints, float)]))
    pts = pts[(pts >= t0) & (pts <= t1)]
    edges = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, int(np.ceil((b - a) / max_piece)))
        edges.extend(np.linspace(a, b, n + 1)[1:])
    integral = gauss_legendre_integral(lambda t: center_rate(t) * np.exp(1j * omega * t), np.array(edges))
    return mass * omega / (2 * CONSTANTS.hbar) * abs(integral) ** 2


class LinearRampPotential:
    """Trap centre moved at constant speed between ``t_start`` and ``t_end``."""

    def __init__(self, distance, duration, omega, t_start=0.0):
        self.distance, self.duration, self.omega_value = distance, duration, omega
        self.t_start = t_start
        self.t_end = t_start + duration
        self.breakpoints = np.array([self.t_start, self.t_end])

    def center(self, t):
        tau = np.clip((np.asarray(t, float) - self.t_start) / self.duration, 0.0, 1.0)
        return self.distance * tau

    def center_rate(self, t):
        t = np.asarray(t, float)
        inside = (t >= self.t_start) & (t <= self.t_end)
        return np.where(inside, self.distance / self.duration, 0.0)

    def omega(self, t):
        return np.full(np.shape(t), self.omega_value, dtype=float)


def _position_eigensystem(dim):
    off = np.sqrt(np.arange(1, dim))
    return eigh_tridiagonal(np.zeros(dim), off)


def displacement_matrix_elements(eta, dim, rows, cols, eig=None):
    """``<m| exp(i eta (a + a^dag)) |n>`` from the eigenbasis of ``a + a^dag``."""
    lam, vec = eig if eig is not None else _position_eigensystem(dim)
    phase = np.exp(1j * eta * lam)
    return (vec[rows] * phase[None, :]) @ vec[cols].T


def coupling_oracle(n_from, n_to, eta, dim=None, eig=None):
    """Signed real coupling matching the library convention (phase ``i^|d|`` removed)."""
    dim = dim or 4 * max(n_from, n_to) + 64
    elem = displacement_matrix_elements(eta, dim, [n_to], [n_from], eig)[0, 0]
    s = abs(n_to - n_from)
    return (elem / 1j ** s).real


def displaced_thermal_oracle(n_thermal, alpha, dim):
    """Diagonal of ``D(alpha) rho_th D(alpha)^dag`` in a truncated Fock basis."""
    a = np.diag(np.sqrt(np.arange(1, dim)), 1)
    disp = expm(alpha * a.conj().T - np.conj(alpha) * a)
    n = np.arange(dim)
    if n_thermal == 0:
        p = (n == 0).astype(float)
    else:
        p = np.exp(n * np.log(n_thermal / (1 + n_thermal)) - np.log1p(n_thermal))
    rho = disp @ np.diag(p) @ disp.conj().T
    return np.real(np.diag(rho))


def rabi_direct_sum(probs, eta, rabi, times, dim=None):
    """Carrier flop ``sum_n P_n sin^2(Omega_nn t / 2)`` with matrix-element rates."""
    nmax = len(probs)
    dim = dim or 4 * nmax + 64
    lam, vec = _position_eigensystem(dim)
    diag = np.array([(vec[n] ** 2 * np.exp(1j * eta * lam)).sum().real for n in range(nmax)])
    out = np.zeros(len(times))
    for n, p in enumerate(probs):
        out += p * np.sin(0.5 * rabi * diag[n] * np.asarray(times)) ** 2
    return out
