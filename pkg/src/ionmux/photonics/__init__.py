"""Photon statistics: tag I/O, mode-resolved g2, crosstalk and rate models."""
from .analysis import (
    CorrelationAccumulator,
    CorrelationHistogram,
    ProfileAccumulator,
    TemporalProfile,
    TrialSchedule,
    bin_temporal_profile,
    correlation_histogram,
)
from .model import (
    CrosstalkMatrix,
    RateBudget,
    SaturationFit,
    chain_predicted_g2,
    dark_probability_for_floor,
    fit_saturation,
    predicted_g2,
    rate_budget,
    scattering_rate,
)
from .synth import EmissionModel, generate_synthetic_tags, iter_synthetic_tags
from .tags import (
    TimeTagRecord,
    TimeTags,
    iter_time_tag_chunks,
    parse_time_tags,
    read_time_tags,
    write_time_tags,
)

__all__ = [
    "CorrelationAccumulator",
    "CorrelationHistogram",
    "CrosstalkMatrix",
    "EmissionModel",
    "ProfileAccumulator",
    "RateBudget",
    "SaturationFit",
    "TemporalProfile",
    "TimeTagRecord",
    "TimeTags",
    "TrialSchedule",
    "bin_temporal_profile",
    "chain_predicted_g2",
    "correlation_histogram",
    "dark_probability_for_floor",
    "fit_saturation",
    "generate_synthetic_tags",
    "iter_synthetic_tags",
    "iter_time_tag_chunks",
    "parse_time_tags",
    "predicted_g2",
    "rate_budget",
    "read_time_tags",
    "scattering_rate",
    "write_time_tags",
]
