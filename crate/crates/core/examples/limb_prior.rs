//! Fits the pairwise limb prior and shows conditional limb predictions.
//!
//! cargo run --example limb_prior

use depthpose::data::{generate_synthetic, SynthConfig};
use depthpose::lifting::{limb_vector, LimbPrior};
use depthpose::SkeletonModel;

fn main() -> depthpose::Result<()> {
    let skeleton = SkeletonModel::itop15();
    let records = generate_synthetic(
        &SynthConfig {
            num_samples: 5000,
            ..Default::default()
        },
        &skeleton,
    )?;
    let poses: Vec<_> = records.iter().filter_map(|r| r.complete_ground_truth()).collect();
    let prior = LimbPrior::fit(&skeleton, &poses, 1e-6)?;
    println!(
        "fitted on {} poses, skeleton {}",
        poses.len(),
        &prior.skeleton_checksum()[..12]
    );

    let pose = &poses[0];
    for limb in skeleton.recovery_order().into_iter().skip(1) {
        let l = skeleton.limbs()[limb];
        let parent = skeleton.limb_parent(limb).expect("non-root limb");
        let predicted = prior.recover_landmark(limb, &limb_vector(&skeleton, pose, parent))?;
        let actual = limb_vector(&skeleton, pose, limb);
        println!(
            "{:>10} -> {:<10} predicted |l| {:.3} m, actual {:.3} m, error {:.1} cm",
            skeleton.landmarks()[l.parent],
            skeleton.landmarks()[l.child],
            predicted.norm(),
            actual.norm(),
            (predicted - actual).norm() * 100.0
        );
    }
    Ok(())
}
