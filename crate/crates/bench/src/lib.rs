//! Shared fixtures for the benchmarks in `benches/`.

use ybev_core::dataset::{synth_scene, SceneSpec};
use ybev_core::{Frame, ModelConfig};

pub fn compact_model() -> ModelConfig {
    ModelConfig::compact()
}

pub fn frame(seed: u64, n_vehicles: usize) -> Frame {
    let (mosaic, truth) = synth_scene(&SceneSpec {
        seed,
        n_vehicles,
        tile_size: 64,
    })
    .expect("valid scene");
    Frame { mosaic, truth }
}
