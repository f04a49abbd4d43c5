"""Scattering, crosstalk, g2 prediction and rate budget."""
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from ..errors import InputError, NumericError

__all__ = [
    "scattering_rate",
    "SaturationFit",
    "fit_saturation",
    "CrosstalkMatrix",
    "predicted_g2",
    "chain_predicted_g2",
    "dark_probability_for_floor",
    "RateBudget",
    "rate_budget",
]


def scattering_rate(power, k_sat, gamma):
    """Two-level scattering rate ``gamma*s/(2(1+s))`` with ``s = k_sat*power``."""
    power = np.asarray(power, dtype=float)
    if np.any(power < 0):
        raise ValueError("power must be non-negative")
    s = k_sat * power
    return gamma * s / (2.0 * (1.0 + s))


@dataclass(frozen=True)
class SaturationFit:
    k_sat: np.ndarray  # 1/W per ion
    center: int
    residual: np.ndarray  # rms relative residual per ion

    @property
    def crosstalk(self):
        return self.k_sat / self.k_sat[self.center]


def fit_saturation(powers, rates, gamma, center=None):
    """Least-squares saturation fit per ion with ``gamma`` held fixed.

    ``rates`` is ``(n_powers,)`` or ``(n_ions, n_powers)``. Crosstalk ratios
    are taken relative to ``center`` (default: the ion with the largest k).
    """
    powers = np.asarray(powers, dtype=float)
    rates = np.atleast_2d(np.asarray(rates, dtype=float))
    if rates.shape[1] != len(powers):
        raise InputError("rates and powers differ in length")
    if len(np.unique(powers)) < 3:
        raise InputError("need at least 3 distinct powers")
    if np.any(powers < 0):
        raise InputError("powers must be non-negative")
    pscale = powers.max()
    x = powers / pscale

    ks, res = [], []
    for row in rates:
        if np.ptp(row) == 0:
            raise InputError("degenerate data: all rates equal")
        # linearised starting point from inverting the model where valid
        ok = (x > 0) & (row > 0) & (row < 0.5 * gamma)
        s = 2 * row[ok] / (gamma - 2 * row[ok])
        k0 = np.median(s / x[ok]) if ok.any() else 1.0
        scale = np.abs(row).max()

        def resid(theta, row=row, scale=scale):
            return (scattering_rate(x, np.exp(theta[0]), gamma) - row) / scale

        sol = least_squares(resid, [np.log(k0)], xtol=1e-15, ftol=1e-15, gtol=1e-15,
                            max_nfev=1000)
        if not sol.success:
            raise NumericError(f"saturation fit failed: {sol.message}")
        ks.append(np.exp(sol.x[0]) / pscale)
        res.append(np.sqrt(np.mean(sol.fun ** 2)))
    ks = np.array(ks)
    if center is None:
        center = int(np.argmax(ks))
    return SaturationFit(ks, center, np.array(res))


@dataclass(frozen=True)
class CrosstalkMatrix:
    """Relative intensity on ion ``j`` while ion ``i`` is addressed."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("crosstalk matrix must be square")
        if np.any(m < 0) or not np.allclose(np.diag(m), 1.0):
            raise ValueError("entries must be >= 0 with unit diagonal")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_neighbor_ratios(cls, n_ions, ratios=()):
        """Translation-invariant matrix; ``ratios[d-1]`` applies at distance d."""
        d = np.abs(np.subtract.outer(np.arange(n_ions), np.arange(n_ions)))
        table = np.concatenate([[1.0], np.asarray(ratios, dtype=float), [0.0]])
        return cls(table[np.minimum(d, len(table) - 1)])

    @classmethod
    def identity(cls, n_ions):
        return cls(np.eye(n_ions))

    @property
    def n_ions(self):
        return len(self.matrix)

    def neighbor_average(self, order=1):
        vals = np.concatenate([np.diag(self.matrix, order), np.diag(self.matrix, -order)])
        return float(vals.mean()) if len(vals) else 0.0


def predicted_g2(rho0, rho_s1, rho_s2, g2_floor=0.0):
    """Small-crosstalk zero-delay correlation: ``2(s1+s2)/rho0 + floor``."""
    for p in (rho0, rho_s1, rho_s2):
        if not 0 <= p <= 1:
            raise ValueError("probabilities must lie in [0, 1]")
    if rho0 <= 0:
        raise ValueError("rho0 must be positive")
    return 2.0 * (rho_s1 + rho_s2) / rho0 + g2_floor


def chain_predicted_g2(rho0, crosstalk, g2_floor=0.0):
    """Mode-averaged prediction when every ion of the chain is addressed in turn.

    Edge ions have a single nearest neighbour, so the average sits below the
    interior value. All off-diagonal crosstalk is included.
    """
    m = crosstalk.matrix if isinstance(crosstalk, CrosstalkMatrix) else np.asarray(crosstalk)
    side = m.sum(axis=1) - np.diag(m)
    return float(np.mean(2.0 * side)) + g2_floor


def dark_probability_for_floor(g2_floor, rho):
    """Per-detector dark-count probability per window giving ``g2_floor``.

    ``rho`` is the detected single-photon probability per attempt summed over
    both detectors; the floor comes from signal-dark and dark-dark pairs.
    """
    if not 0 <= g2_floor < 1:
        raise ValueError("g2_floor must lie in [0, 1)")
    s = 0.5 * rho
    return s * (1.0 / np.sqrt(1.0 - g2_floor) - 1.0)


@dataclass(frozen=True)
class RateBudget:
    cooling: float
    pump: float
    forward: float
    return_: float
    repeats_per_cooling: int
    attempts_per_pass: int
    extraction_efficiency: float
    collection_efficiency: float = 1.0
    include_collection: bool = False

    def __post_init__(self):
        vals = (self.cooling, self.pump, self.forward, self.return_, self.repeats_per_cooling,
                self.attempts_per_pass, self.extraction_efficiency, self.collection_efficiency)
        if any(v < 0 for v in vals):
            raise ValueError("rate budget entries must be non-negative")

    @property
    def cycle_duration(self):
        return self.cooling + self.repeats_per_cooling * (self.pump + self.forward + self.return_)

    @property
    def attempts_per_cycle(self):
        return self.repeats_per_cooling * self.attempts_per_pass

    @property
    def attempt_rate(self):
        return self.attempts_per_cycle / self.cycle_duration

    @property
    def efficiency(self):
        eff = self.extraction_efficiency
        return eff * self.collection_efficiency if self.include_collection else eff

    @property
    def detected_rate(self):
        return self.attempt_rate * self.efficiency

    def as_dict(self):
        return {
            "cooling_s": self.cooling,
            "pump_s": self.pump,
            "forward_s": self.forward,
            "return_s": self.return_,
            "repeats_per_cooling": self.repeats_per_cooling,
            "attempts_per_pass": self.attempts_per_pass,
            "extraction_efficiency": self.extraction_efficiency,
            "collection_efficiency": self.collection_efficiency,
            "include_collection": self.include_collection,
            "cycle_s": self.cycle_duration,
            "attempt_rate_hz": self.attempt_rate,
            "detected_rate_hz": self.detected_rate,
        }


def rate_budget(schedule, extraction, collection=1.0, *, attempts_per_pass=None,
                include_collection=False):
    """Attempt and detected photon rates for a transport schedule.

    ``schedule`` needs ``cooling_duration``, ``pump_duration``,
    ``forward_duration``, ``return_duration`` and ``repeats_per_cooling``
    (a :class:`~ionmux.waveform.StepSchedule` qualifies). One attempt per
    addressing window, so a pass of ``n`` steps holds ``n + 1`` attempts by
    default. ``extraction`` is taken to already contain the collection
    efficiency unless ``include_collection`` is set.
    """
    if attempts_per_pass is None:
        attempts_per_pass = schedule.n_steps + 1
    budget = RateBudget(schedule.cooling_duration, schedule.pump_duration,
                        schedule.forward_duration, schedule.return_duration,
                        schedule.repeats_per_cooling, attempts_per_pass,
                        extraction, collection, include_collection)
    if budget.cycle_duration <= 0:
        raise ValueError("cycle duration must be positive")
    return budget
