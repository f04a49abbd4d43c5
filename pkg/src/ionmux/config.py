"""Run configuration: a YAML document validated against a strict schema."""
import hashlib
import json
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .chain import ChainConfig
from .constants import CONSTANTS, TWO_PI
from .errors import ConfigError
from .transport import IntegratorOptions
from .waveform import FilterModel, ScheduleTiming, TrapCalibration

__all__ = ["RunConfig", "load_config", "config_digest"]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ChainSection(_Section):
    n_ions: int = Field(9, ge=1)
    axial_freq_hz: float = Field(179e3, gt=0)
    mass_amu: float = Field(40.0, gt=0)

    def build(self):
        return ChainConfig.from_frequency_hz(
            self.n_ions, self.axial_freq_hz, ion_mass=self.mass_amu * CONSTANTS.atomic_mass_unit
        )


class CalibrationSection(_Section):
    center_slope: float = 2.0e-5  # m/V
    v1_rest: float = 22.985
    v2_rest: float = 25.495
    freq_slope_hz_per_v: float = 0.0

    @model_validator(mode="after")
    def _slope(self):
        if self.center_slope == 0:
            raise ValueError("center_slope must be nonzero")
        return self

    def build(self, axial_freq_hz):
        return TrapCalibration(self.center_slope, self.v1_rest, self.v2_rest,
                               TWO_PI * axial_freq_hz, TWO_PI * self.freq_slope_hz_per_v)


class TimingSection(_Section):
    ramp_duration: float = Field(9.1e-6, gt=0)
    dwell: float = Field(1.7e-6, ge=0)
    return_duration: float = Field(35e-6, gt=0)
    pump_duration: float = Field(3e-6, gt=0)
    cooling_duration: float = Field(200e-6, gt=0)
    repeats_per_cooling: int = Field(2, ge=1)

    def build(self):
        return ScheduleTiming(**self.model_dump())


class FilterSection(_Section):
    enabled: bool = False
    cutoff_hz: float = Field(1.9e6, gt=0)
    order: int = Field(1, ge=1)

    def build(self):
        return FilterModel(self.cutoff_hz, self.order)


class WaveformSection(_Section):
    sample_period: float = Field(10e-9, gt=0)
    include_return: bool = True


class IntegratorSection(_Section):
    method: Literal["dop853", "leapfrog"] = "dop853"
    rtol: float = Field(1e-10, gt=0)
    atol: float = Field(1e-12, gt=0)
    step: float = Field(2e-9, gt=0)
    max_samples: int = Field(2001, ge=2)

    def build(self, max_samples=None):
        kw = self.model_dump()
        if max_samples is not None:
            kw["max_samples"] = max_samples
        return IntegratorOptions(**kw)


class TransportSection(_Section):
    forward_only: bool = True
    hold: float = Field(0.0, ge=0)
    quartic: float = 0.0  # dimensionless, scaled units


class SweepSection(_Section):
    freqs_hz: List[float] = [179e3, 180e3, 189e3, 198e3]
    ramp_durations: Optional[List[float]] = None
    ramp_start: float = Field(4e-6, gt=0)
    ramp_stop: float = Field(40e-6, gt=0)
    ramp_num: int = Field(37, ge=1)
    scale_dwell: bool = False

    def durations(self):
        if self.ramp_durations is not None:
            return np.asarray(self.ramp_durations, dtype=float)
        return np.linspace(self.ramp_start, self.ramp_stop, self.ramp_num)


class OptimizeSection(_Section):
    free: List[str] = ["ramp_duration"]
    x0: List[float] = [9.1e-6]
    bounds: List[Tuple[float, float]] = [(6e-6, 20e-6)]
    budget: int = Field(30, ge=1)

    @model_validator(mode="after")
    def _shapes(self):
        if not len(self.free) == len(self.x0) == len(self.bounds):
            raise ValueError("free, x0 and bounds must have the same length")
        return self


class SpectroscopySection(_Section):
    wavelength: float = Field(729e-9, gt=0)
    projection_cosine: float = Field(1.0, ge=-1, le=1)
    n_thermal: float = Field(4.0, ge=0)
    n_alpha: float = Field(0.0, ge=0)
    eta: Optional[float] = Field(None, ge=0)  # overrides the computed COM value
    rabi_hz: float = Field(50e3, gt=0)
    t_max: float = Field(60e-6, gt=0)
    n_times: int = Field(601, ge=2)
    exact_sidebands: bool = False


class AnalysisSection(_Section):
    window_length: float = Field(300e-9, gt=0)
    coincidence_window: float = Field(300e-9, gt=0)
    bin_width: float = Field(250e-9, gt=0)
    max_delay: int = Field(9, ge=1)


class PhotonicsSection(_Section):
    emission_prob: float = Field(0.03, ge=0, le=1)
    crosstalk: List[float] = [0.0099]  # relative intensity at neighbour distance 1, 2, ...
    detection_efficiency: float = Field(1.0, ge=0, le=1)
    g2_floor: float = Field(0.010, ge=0, lt=1)
    dark_rate: Optional[float] = Field(None, ge=0)  # 1/s per detector; default from g2_floor
    emission_delay: float = Field(20e-9, ge=0)
    n_cycles: int = Field(20000, ge=1)
    extraction: float = Field(0.0021, ge=0, le=1)
    collection: float = Field(0.025, ge=0, le=1)
    include_collection: bool = False


class RunConfig(_Section):
    chain: ChainSection = ChainSection()
    calibration: CalibrationSection = CalibrationSection()
    timing: TimingSection = TimingSection()
    filter: FilterSection = FilterSection()
    waveform: WaveformSection = WaveformSection()
    integrator: IntegratorSection = IntegratorSection()
    transport: TransportSection = TransportSection()
    sweep: SweepSection = SweepSection()
    optimize: OptimizeSection = OptimizeSection()
    spectroscopy: SpectroscopySection = SpectroscopySection()
    analysis: AnalysisSection = AnalysisSection()
    photonics: PhotonicsSection = PhotonicsSection()
    seed: int = Field(0, ge=0)

    def chain_config(self):
        return self.chain.build()

    def calibration_model(self):
        return self.calibration.build(self.chain.axial_freq_hz)


def load_config(path=None, overrides=None):
    """Read and validate a YAML config; ``None`` gives the built-in defaults."""
    data = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    if overrides:
        data = {**data, **overrides}
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        lines = [f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors()]
        raise ConfigError("invalid config: " + "; ".join(lines)) from exc


def config_digest(config):
    """SHA-256 of the canonical JSON form of the resolved config."""
    canon = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()
