//! Saves a regressor, loads it back and checks predictions are identical.
//!
//! cargo run --example model_roundtrip

use depthpose::lifting::LiftedPose;
use depthpose::regressor::{NormalizationStats, RegressorConfig, ResidualRegressor};
use depthpose::SkeletonModel;
use nalgebra::Vector3;

fn main() -> depthpose::Result<()> {
    let skeleton = SkeletonModel::itop15();
    let config = RegressorConfig {
        features: 64,
        blocks: 2,
        ..Default::default()
    };
    let model = ResidualRegressor::new(config, &skeleton, NormalizationStats::identity(15))?;
    let path = std::env::temp_dir().join("depthpose-model.bin");
    model.save(&path)?;
    let loaded = ResidualRegressor::load_for(&path, &skeleton)?;

    let pose: Vec<_> = (0..15)
        .map(|i| Vector3::new(0.1 * i as f64, -0.05 * i as f64, 3.0))
        .collect();
    let a = model.predict_one(&LiftedPose::from_positions(&pose))?;
    let b = loaded.predict_one(&LiftedPose::from_positions(&pose))?;
    println!(
        "{} bytes, {} parameters, identical predictions: {}",
        std::fs::metadata(&path).map_or(0, |m| m.len()),
        loaded.parameter_count(),
        a == b
    );
    Ok(())
}
