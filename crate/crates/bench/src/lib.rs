//! Fixtures shared by the criterion benches.

use adamerge_core::calibration::{refine, CalibrationConfig};
use adamerge_core::{
    synth_dataset, synth_weights, Dataset, LayerStats, Method, ModelDims, ModelWeights, Redundancy, SynthConfig,
};

/// The desk-scale model used throughout the benches.
pub const DESK: ModelDims = ModelDims {
    dim: 64,
    heads: 4,
    mlp_dim: 256,
    layers: 12,
    num_classes: 10,
};

pub const PATCHES: usize = 196;

pub fn model() -> ModelWeights {
    synth_weights(1, DESK, adamerge_core::model::DEFAULT_INIT_STD).expect("valid dims")
}

pub fn dataset(images: usize, redundancy: Redundancy, seed: u64) -> Dataset {
    synth_dataset(&SynthConfig::new(images, PATCHES, DESK.dim, redundancy, seed)).expect("valid config")
}

pub fn stats(weights: &ModelWeights, r_max: usize) -> LayerStats {
    let calib = dataset(8, Redundancy::Uniform(0.0, 1.0), 99);
    refine(weights, &calib.images, &CalibrationConfig::new(Method::AdaMerge, r_max)).expect("calibration")
}
