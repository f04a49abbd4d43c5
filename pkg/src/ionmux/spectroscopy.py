"""Phonon-number statistics and motion-sensitive Rabi spectroscopy.

Laguerre polynomials are evaluated by upward recurrence carried as a
mantissa plus a running log-scale, so values for n in the hundreds neither
overflow nor lose their (alternating) sign.
"""
from dataclasses import dataclass, field, replace
import io

import numpy as np
from scipy.special import gammaln

from .errors import CutoffError

__all__ = [
    "PhononDistribution",
    "MotionalState",
    "RabiCurve",
    "SidebandLine",
    "SidebandTable",
    "laguerre_log",
    "laguerre_range",
    "thermal_distribution",
    "displaced_thermal_distribution",
    "required_cutoff",
    "carrier_rabi_frequency",
    "carrier_rabi_series",
    "sideband_coupling",
    "transition_coupling",
    "simulate_carrier_flop",
    "first_flop_contrast",
    "doppler_limit",
    "apply_heating",
    "sideband_spectrum",
]

POISSON_LIMIT = 1e-30
TAIL_TOLERANCE = 1e-6
_RESCALE = 1e150


def laguerre_range(n_max, alpha, x):
    """``(sign, log|L_n^alpha(x)|)`` for n = 0..n_max.

    Zeros of the polynomial come back with ``sign == 0`` and ``-inf`` log.
    """
    sign = np.zeros(n_max + 1)
    logabs = np.full(n_max + 1, -np.inf)
    prev, cur = 0.0, 1.0  # L_{-1} (unused), L_0
    log_scale = 0.0

    def store(k, value):
        if value != 0.0:
            sign[k] = np.sign(value)
            logabs[k] = np.log(abs(value)) + log_scale

    store(0, cur)
    if n_max == 0:
        return sign, logabs
    prev, cur = cur, 1.0 + alpha - x
    store(1, cur)
    for k in range(1, n_max):
        nxt = ((2 * k + 1 + alpha - x) * cur - (k + alpha) * prev) / (k + 1)
        prev, cur = cur, nxt
        big = max(abs(prev), abs(cur))
        if big > _RESCALE:
            prev /= big
            cur /= big
            log_scale += np.log(big)
        store(k + 1, cur)
    return sign, logabs


def laguerre_log(n, alpha, x):
    sign, logabs = laguerre_range(int(n), alpha, x)
    return sign[-1], logabs[-1]


@dataclass(frozen=True)
class PhononDistribution:
    probabilities: np.ndarray  # n = 0..cutoff

    @property
    def cutoff(self):
        return len(self.probabilities) - 1

    @property
    def tail_mass(self):
        return max(0.0, 1.0 - float(np.sum(self.probabilities)))

    @property
    def mean(self):
        return float(np.dot(np.arange(len(self.probabilities)), self.probabilities))

    def __len__(self):
        return len(self.probabilities)


def thermal_distribution(n_bar, cutoff):
    """Geometric occupation ``n_bar^n / (1 + n_bar)^(n+1)``, not renormalised."""
    if n_bar < 0:
        raise ValueError("n_bar must be non-negative")
    n = np.arange(cutoff + 1)
    if n_bar == 0:
        probs = (n == 0).astype(float)
    else:
        ratio = n_bar / (1.0 + n_bar)
        probs = np.exp(n * np.log(ratio) - np.log1p(n_bar))
        tail = ratio ** (cutoff + 1)
        if tail > TAIL_TOLERANCE:
            raise CutoffError(
                f"cutoff {cutoff} leaves tail mass {tail:.2e} for n_bar={n_bar}; "
                f"use at least {required_cutoff(n_bar, 0.0)}"
            )
    return PhononDistribution(probs)


def required_cutoff(n_thermal, n_alpha):
    """Smallest cutoff accepted for a displaced thermal state.

    Starts from a mean + 8 sigma estimate and grows it until the truncated
    tail mass is within tolerance (small means have heavy relative tails).
    """
    if n_alpha == 0:
        if n_thermal == 0:
            return 0
        ratio = n_thermal / (1.0 + n_thermal)
        return int(np.ceil(np.log(TAIL_TOLERANCE) / np.log(ratio)))
    spread = np.sqrt((2 * n_thermal + 1) * n_alpha + n_thermal ** 2 + n_thermal)
    cutoff = int(np.ceil(n_alpha + n_thermal + 8 * spread))
    while 1.0 - np.exp(_displaced_logp(n_thermal, n_alpha, cutoff)).sum() > 0.5 * TAIL_TOLERANCE:
        cutoff = int(cutoff * 1.25) + 8
    return cutoff


def _displaced_logp(n_thermal, n_alpha, cutoff):
    n = np.arange(cutoff + 1)
    if n_thermal < POISSON_LIMIT:
        # the Laguerre argument overflows; the Poisson limit is exact to O(n_th)
        return -n_alpha + n * np.log(n_alpha) - gammaln(n + 1)
    y = n_alpha / (n_thermal * (1.0 + n_thermal))
    _, log_lag = laguerre_range(cutoff, 0.0, -y)  # all positive for negative argument
    return (n * np.log(n_thermal / (1.0 + n_thermal)) - np.log1p(n_thermal)
            - n_alpha / (1.0 + n_thermal) + log_lag)


def displaced_thermal_distribution(n_thermal, alpha, cutoff):
    """Number distribution of a thermal state displaced by ``alpha``.

        P_n = n_th^n / (1+n_th)^(n+1) exp(-|a|^2/(1+n_th)) L_n(-|a|^2/(n_th(1+n_th)))

    evaluated in log space; ``n_thermal == 0`` gives the Poisson limit.
    """
    if n_thermal < 0:
        raise ValueError("n_thermal must be non-negative")
    n_alpha = float(abs(alpha)) ** 2
    if n_alpha == 0:
        return thermal_distribution(n_thermal, cutoff)
    needed = required_cutoff(n_thermal, n_alpha)
    if cutoff < needed:
        raise CutoffError(f"cutoff {cutoff} too small for n_th={n_thermal}, |alpha|^2={n_alpha}; need {needed}")
    return PhononDistribution(np.exp(_displaced_logp(n_thermal, n_alpha, cutoff)))


def transition_coupling(n_from, n_to, eta):
    """Signed ``<n_to| exp(i eta (a + a^dag)) |n_from>`` magnitude convention:

        exp(-eta^2/2) eta^|d| sqrt(n_<! / n_>!) L_{n_<}^{|d|}(eta^2)

    with ``d = n_to - n_from`` and ``n_<`` the smaller of the two.
    """
    n_lo, n_hi = min(n_from, n_to), max(n_from, n_to)
    s = n_hi - n_lo
    if n_lo < 0:
        raise ValueError("phonon numbers must be non-negative")
    x = eta * eta
    sign, logabs = laguerre_log(n_lo, float(s), x)
    if sign == 0:
        return 0.0
    if s and eta == 0:
        return 0.0
    log_mag = -x / 2 + logabs + 0.5 * (gammaln(n_lo + 1) - gammaln(n_hi + 1))
    if s:
        log_mag += s * np.log(eta)
    return float(sign * np.exp(log_mag))


def carrier_rabi_frequency(n, eta):
    """``Omega_nn / Omega = exp(-eta^2/2) L_n(eta^2)``; ``n`` may be an array."""
    if eta < 0:
        raise ValueError("eta must be non-negative")
    n_arr = np.atleast_1d(np.asarray(n))
    if np.any(n_arr < 0):
        raise ValueError("n must be non-negative")
    x = eta * eta
    sign, logabs = laguerre_range(int(n_arr.max()), 0.0, x)
    values = sign * np.exp(logabs - x / 2)
    out = values[n_arr.astype(int)]
    return out if np.ndim(n) else float(out[0])


def carrier_rabi_series(n, eta):
    """Sixth-order expansion of the carrier Rabi ratio in ``eta``."""
    n = np.asarray(n, dtype=float)
    x = eta * eta
    return (1.0 - (n + 0.5) * x
            + (1 / 8 + n / 4 + n ** 2 / 4) * x ** 2
            - (1 / 48 + n / 18 + n ** 2 / 24 + n ** 3 / 36) * x ** 3)


def sideband_coupling(n, s, eta):
    """Red-sideband ratio ``Omega_{n-s,n} / Omega_0`` (signed)."""
    if s < 1 or n < s:
        raise ValueError(f"red sideband of order {s} needs n >= s (got n={n})")
    return transition_coupling(n, n - s, eta)


@dataclass(frozen=True)
class MotionalState:
    """Per-mode thermal occupation, coherent amplitude and heating rate."""
    n_thermal: np.ndarray
    alpha: np.ndarray
    heating_rate: np.ndarray = None  # quanta / s

    def __post_init__(self):
        nth = np.atleast_1d(np.asarray(self.n_thermal, dtype=float))
        alpha = np.broadcast_to(np.atleast_1d(np.asarray(self.alpha, dtype=complex)), nth.shape).copy()
        rate = np.zeros(nth.shape) if self.heating_rate is None else np.broadcast_to(
            np.atleast_1d(np.asarray(self.heating_rate, dtype=float)), nth.shape).copy()
        if np.any(nth < 0) or np.any(rate < 0):
            raise ValueError("n_thermal and heating_rate must be non-negative")
        object.__setattr__(self, "n_thermal", nth)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "heating_rate", rate)

    @classmethod
    def single(cls, n_thermal, n_alpha=0.0, heating_rate=0.0):
        """One-mode state with a real coherent amplitude ``sqrt(n_alpha)``."""
        return cls([n_thermal], [np.sqrt(n_alpha)], [heating_rate])

    @property
    def n_alpha(self):
        return np.abs(self.alpha) ** 2

    @property
    def n_modes(self):
        return len(self.n_thermal)

    def distribution(self, mode=0, cutoff=None):
        nth, alpha = float(self.n_thermal[mode]), complex(self.alpha[mode])
        if cutoff is None:
            cutoff = max(required_cutoff(nth, abs(alpha) ** 2), 1)
        return displaced_thermal_distribution(nth, alpha, cutoff)


def apply_heating(state, duration):
    if duration < 0:
        raise ValueError("duration must be non-negative")
    return replace(state, n_thermal=state.n_thermal + state.heating_rate * duration)


def doppler_limit(gamma, omega):
    """Doppler-cooled mean phonon number ``gamma / (2 omega)``."""
    if not (gamma > 0 and omega > 0):
        raise ValueError("gamma and omega must be positive")
    return gamma / (2.0 * omega)


@dataclass(frozen=True)
class RabiCurve:
    times: np.ndarray
    excitation: np.ndarray

    def to_csv(self, dest=None):
        buf = io.StringIO()
        buf.write("time_s,p_up\n")
        for t, p in zip(self.times, self.excitation):
            buf.write(f"{t:.9e},{p:.12f}\n")
        text = buf.getvalue()
        if dest is None:
            return text
        with open(dest, "w", newline="\n") as fh:
            fh.write(text)


def _flop(probs, rates, times):
    # chunked over time so memory stays bounded for long grids
    out = np.empty(len(times))
    step = max(1, 2_000_000 // max(len(rates), 1))
    for i in range(0, len(times), step):
        t = times[i:i + step]
        # sum(P) rather than 1 keeps P(0) = 0 for a truncated distribution
        out[i:i + step] = 0.5 * (probs.sum() - probs @ np.cos(np.outer(rates, t)))
    return np.clip(out, 0.0, 1.0)


def _mode_factor_distribution(dist, eta):
    rates = carrier_rabi_frequency(np.arange(len(dist.probabilities)), eta)
    return rates, dist.probabilities


def simulate_carrier_flop(state, eta_eff, rabi, times, n_ions=1, *, mode=0, cutoff=None,
                          rabi_profile=None, multimode=False, eta_table=None, mode_cutoff=30):
    """Mean upper-state population of the chain under a global carrier pulse.

    Default: one motional mode (``mode``, the COM) with Lamb-Dicke parameter
    ``eta_eff`` and the same Rabi frequency on every ion, i.e.
    ``P(t) = (1 - sum_n P_n cos(Omega_nn t)) / 2``. ``rabi_profile`` gives
    per-ion relative Rabi frequencies (beam inhomogeneity); the result is the
    ion average.

    With ``multimode=True`` every mode in ``state`` contributes a Debye-Waller
    factor using ``eta_table.eta[mode, ion]``; per-mode distributions are
    truncated at ``mode_cutoff`` and combined by pruned enumeration.
    """
    times = np.asarray(times, dtype=float)
    profile = np.ones(n_ions) if rabi_profile is None else np.asarray(rabi_profile, dtype=float)
    if len(profile) != n_ions:
        raise ValueError("rabi_profile needs one entry per ion")

    if not multimode:
        dist = state.distribution(mode, cutoff)
        rates, probs = _mode_factor_distribution(dist, eta_eff)
        if np.allclose(profile, profile[0]):
            exc = _flop(probs, rabi * profile[0] * rates, times)
        else:
            exc = np.mean([_flop(probs, rabi * p * rates, times) for p in profile], axis=0)
        return RabiCurve(times, exc)

    if eta_table is None:
        raise ValueError("multimode simulation needs an eta_table")
    curves = []
    for ion in range(n_ions):
        values, weights = np.array([1.0]), np.array([1.0])
        for m in range(state.n_modes):
            nth, alpha = float(state.n_thermal[m]), complex(state.alpha[m])
            need = required_cutoff(nth, abs(alpha) ** 2)
            if need > mode_cutoff:
                raise CutoffError(f"mode {m} needs cutoff {need} > mode_cutoff {mode_cutoff}")
            dist = displaced_thermal_distribution(nth, alpha, max(need, 1))
            r, p = _mode_factor_distribution(dist, abs(eta_table.eta[m, ion]))
            values = np.outer(values, r).ravel()
            weights = np.outer(weights, p).ravel()
            keep = weights > 1e-12
            values, weights = values[keep], weights[keep]
        curves.append(_flop(weights, rabi * profile[ion] * values, times))
    return RabiCurve(times, np.mean(curves, axis=0))


def first_flop_contrast(curve):
    """First local maximum minus the following local minimum."""
    p = curve.excitation
    d = np.diff(p)
    peaks = np.flatnonzero((d[:-1] > 0) & (d[1:] <= 0)) + 1
    if len(peaks) == 0:
        return float(p.max() - p.min())
    i = peaks[0]
    troughs = np.flatnonzero((d[i:-1] < 0) & (d[i + 1:] >= 0)) + i + 1
    j = troughs[0] if len(troughs) else len(p) - 1
    return float(p[i] - p[j])


@dataclass(frozen=True)
class SidebandLine:
    detuning: float  # rad/s relative to the carrier
    order: int
    strength: float
    mode: int = -1


@dataclass(frozen=True)
class SidebandTable:
    lines: tuple = field(default_factory=tuple)

    def __len__(self):
        return len(self.lines)

    def for_mode(self, mode):
        return [ln for ln in self.lines if ln.mode == mode]

    def to_csv(self, dest=None):
        buf = io.StringIO()
        buf.write("detuning_rad_s,order,strength\n")
        for ln in self.lines:
            buf.write(f"{ln.detuning:.9e},{ln.order:d},{ln.strength:.9e}\n")
        text = buf.getvalue()
        if dest is None:
            return text
        with open(dest, "w", newline="\n") as fh:
            fh.write(text)


def sideband_spectrum(modes, state, eta_table, exact=False):
    """Carrier plus first red/blue sideband of every mode for a global beam.

    Strengths are relative to the carrier. By default they are the
    Lamb-Dicke-limit averages ``eta^2 <n>`` (red) and ``eta^2 (<n> + 1)``
    (blue), with ``eta^2`` averaged over ions; ``exact=True`` averages the
    full ``|Omega_{n-+1,n}|^2`` over the displaced thermal distribution.
    """
    if state.n_modes != len(modes):
        raise ValueError("need one motional entry per mode")
    lines = [SidebandLine(0.0, 0, 1.0, -1)]
    for m, w in enumerate(modes.frequencies):
        eta2 = float(np.mean(eta_table.eta[m] ** 2))
        nth, alpha = float(state.n_thermal[m]), complex(state.alpha[m])
        if exact:
            eta = np.sqrt(eta2)
            dist = state.distribution(m)
            p = dist.probabilities
            red = sum(p[n] * transition_coupling(n, n - 1, eta) ** 2 for n in range(1, len(p)))
            blue = sum(p[n] * transition_coupling(n, n + 1, eta) ** 2 for n in range(len(p)))
        else:
            mean_n = nth + abs(alpha) ** 2
            red, blue = eta2 * mean_n, eta2 * (mean_n + 1.0)
        lines.append(SidebandLine(-float(w), -1, float(red), m))
        lines.append(SidebandLine(float(w), 1, float(blue), m))
    return SidebandTable(tuple(lines))
