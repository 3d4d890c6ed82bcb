//! Compares analytic gradients of a regressor with central differences.
//!
//! cargo run --release --example gradcheck [features]

use depthpose::nn::{grad_check, GradCheckOptions, Tensor};
use depthpose::regressor::{NormalizationStats, RegressorConfig, ResidualRegressor};
use depthpose::SkeletonModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> depthpose::Result<()> {
    let features = std::env::args()
        .nth(1)
        .map_or(128, |a| a.parse().expect("integer width"));
    let skeleton = SkeletonModel::itop15();
    let config = RegressorConfig {
        features,
        dropout_rate: 0.0,
        ..Default::default()
    };
    let mut model = ResidualRegressor::new(config.clone(), &skeleton, NormalizationStats::identity(15))?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut random =
        |r: usize, c: usize| Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect());
    let x = random(8, config.input_width())?;
    let t = random(8, config.output_width())?;

    for corrupt_gradient in [false, true] {
        let opts = GradCheckOptions {
            corrupt_gradient,
            ..Default::default()
        };
        let report = grad_check(&mut model, &x, &t, &opts)?;
        println!(
            "corrupt={corrupt_gradient}: {} checks, max relative error {:.2e} (worst: parameter tensor {})",
            report.checks, report.max_rel_error, report.worst_param
        );
    }
    Ok(())
}
