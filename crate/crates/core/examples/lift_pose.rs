//! Lifts a synthetic 2D detection set to 3D with inline depths, once with
//! the limb prior and once with the trunk-centroid fallback.
//!
//! cargo run --example lift_pose

use depthpose::data::{generate_synthetic, SynthConfig};
use depthpose::lifting::{LiftConfig, LimbPrior, RecoveryMode};
use depthpose::SkeletonModel;

fn main() -> depthpose::Result<()> {
    let skeleton = SkeletonModel::itop15();
    let train = generate_synthetic(
        &SynthConfig {
            num_samples: 2000,
            ..Default::default()
        },
        &skeleton,
    )?;
    let poses: Vec<_> = train.iter().filter_map(|r| r.complete_ground_truth()).collect();
    let prior = LimbPrior::fit(&skeleton, &poses, 1e-6)?;

    let sample = generate_synthetic(
        &SynthConfig {
            num_samples: 1,
            seed: 7,
            dropout: 0.4,
            ..Default::default()
        },
        &skeleton,
    )?
    .remove(0);
    let truth = sample
        .complete_ground_truth()
        .expect("synthetic samples carry full ground truth");
    for recovery in [RecoveryMode::Prior, RecoveryMode::TrunkCentroid] {
        let config = LiftConfig {
            recovery,
            ..Default::default()
        };
        let lifted = sample.lift(&skeleton, &prior, &config)?;
        println!("{recovery:?}");
        for ((name, l), gt) in skeleton.landmarks().iter().zip(&lifted.landmarks).zip(&truth) {
            println!(
                "  {name:<14} {:>16?}  ({:6.3}, {:6.3}, {:6.3})  err {:5.1} cm",
                l.provenance,
                l.position.x,
                l.position.y,
                l.position.z,
                (l.position - gt).norm() * 100.0
            );
        }
    }
    Ok(())
}
