"""Segment-level maritime sailing-duration forecasting toolkit.

Raw AIS streams are segmented into voyage records via port geofences,
assembled into per-segment time series with destination-port congestion
covariates, and fed to a causally-masked multi-task transformer trained
from scratch. A bundled synthetic world makes the full pipeline verifiable
at desk scale.
"""

from .config import RunConfig
from .estimator import ConstantForecaster, DurationForecaster
from .features import (
    FeatureStats,
    Sample,
    SegmentSeries,
    Vocabularies,
    apply_stats,
    build_segment_series,
    build_vocab,
    chronological_split,
    fit_stats,
    sliding_samples,
)
from .ingest import (
    AisPoint,
    PortCountSeries,
    PortGeofence,
    VesselStatic,
    VoyageRecord,
    filter_segments,
    point_in_region,
    port_vessel_counts,
    segment_voyages,
)
from .model import ModelConfig, causal_mask, composite_loss, forward, positional_encoding
from .synth import WorldSpec, emit_ais, generate_world
from .timeline import TimelineConfig, WindowIdentifier, window_bounds, window_identifier, window_of
from .train import TrainConfig, adam_step, fit, lr_at

__version__ = "0.1.0"

__all__ = [
    "AisPoint", "ConstantForecaster", "DurationForecaster", "FeatureStats",
    "ModelConfig", "PortCountSeries", "PortGeofence", "RunConfig", "Sample",
    "SegmentSeries", "TimelineConfig", "TrainConfig", "VesselStatic",
    "Vocabularies", "VoyageRecord", "WindowIdentifier", "WorldSpec",
    "adam_step", "apply_stats", "build_segment_series", "build_vocab",
    "causal_mask", "chronological_split", "composite_loss", "emit_ais",
    "filter_segments", "fit", "fit_stats", "forward", "generate_world",
    "lr_at", "point_in_region", "port_vessel_counts", "positional_encoding",
    "segment_voyages", "sliding_samples", "window_bounds", "window_identifier",
    "window_of",
]
