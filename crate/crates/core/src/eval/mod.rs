//! Metric suite: Fréchet distance on alignment-space features, beat
//! consistency, diversity, retrieval precision and matched-pair distance.

mod metrics;

pub use metrics::{
    beat_consistency, beat_consistency_with, diversity, fgd, kinematic_beats, matched_closer, max_lag_xcorr, mm_dist, r_precision,
    smoothed_speed, FeatureSet, Provenance, RPrecision, BEAT_SIGMA, COV_JITTER, SPEED_SMOOTHING,
};
