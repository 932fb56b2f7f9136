//! Fixtures shared by the pipeline benchmarks.

use bpg_core::learning::dataset::Dataset;
use bpg_core::sensorio::{extract_sensors, make_windows, synth_generate};
use bpg_core::skeleton::default_skeleton;
use bpg_core::{BpgModel, ModelConfig, SensorWindow, SynthKind};

/// The feature widths used by the overfit acceptance fixture.
pub fn compact_config() -> ModelConfig {
    ModelConfig {
        d_mix: 8,
        c1: 16,
        d_t: 32,
        d_g: 32,
        d_node: 16,
        edge_hidden: 16,
        seed: 7,
        ..ModelConfig::default()
    }
}

pub fn model(cfg: ModelConfig) -> BpgModel {
    BpgModel::new(cfg, default_skeleton()).expect("valid config")
}

/// The last full window of a seeded walk.
pub fn window(k: usize) -> SensorWindow {
    let seq = synth_generate(SynthKind::Walk, k + 10, 60.0, 7).expect("synthetic walk");
    let sensors = extract_sensors(&seq, &default_skeleton());
    make_windows(&sensors, k, 60.0).pop().expect("at least one window")
}

/// Every window of an `n`-frame walk.
pub fn walk_dataset(n: usize, k: usize) -> Dataset {
    let seq = synth_generate(SynthKind::Walk, n, 60.0, 7).expect("synthetic walk");
    Dataset::from_sequences(&[("walk".into(), seq)], &default_skeleton(), k).expect("enough frames")
}
