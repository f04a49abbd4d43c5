"""Physical constants (CODATA 2018), fixed at build time.

    hbar               1.05457e-34 J s
    coulomb_k          8.98755e9   N m^2 / C^2
    elementary_charge  1.60218e-19 C
    atomic_mass_unit   1.66054e-27 kg
"""
from dataclasses import dataclass
import math


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = 1.054571817e-34
    coulomb_k: float = 8.9875517923e9
    elementary_charge: float = 1.602176634e-19
    atomic_mass_unit: float = 1.66053906660e-27

    def __post_init__(self):
        for name in ("hbar", "coulomb_k", "elementary_charge", "atomic_mass_unit"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive, got {value}")


CONSTANTS = PhysicalConstants()

CA40_MASS = 40 * CONSTANTS.atomic_mass_unit
TWO_PI = 2 * math.pi
