//! Trains a small residual regressor on synthetic data and compares it with
//! the lifted baseline.
//!
//! cargo run --release --example train_regressor [train_samples] [epochs]

use depthpose::data::{generate_synthetic, SynthConfig};
use depthpose::lifting::{LiftConfig, LimbPrior};
use depthpose::metrics::{MethodReport, DEFAULT_AP_THRESHOLD};
use depthpose::regressor::{RegressorConfig, ResidualRegressor, TrainingPair};
use depthpose::SkeletonModel;

fn main() -> depthpose::Result<()> {
    let mut args = std::env::args()
        .skip(1)
        .map(|a| a.parse::<usize>().expect("integer argument"));
    let n_train = args.next().unwrap_or(15000);
    let epochs = args.next().unwrap_or(60);

    let skeleton = SkeletonModel::itop15();
    let train = generate_synthetic(
        &SynthConfig {
            num_samples: n_train,
            seed: 1,
            ..Default::default()
        },
        &skeleton,
    )?;
    let test = generate_synthetic(
        &SynthConfig {
            num_samples: 500,
            seed: 2,
            ..Default::default()
        },
        &skeleton,
    )?;
    let gt: Vec<_> = train.iter().filter_map(|r| r.complete_ground_truth()).collect();
    let prior = LimbPrior::fit(&skeleton, &gt, 1e-6)?;
    let lift = LiftConfig::default();

    let pairs = train
        .iter()
        .map(|r| {
            Ok(TrainingPair {
                lifted: r.lift(&skeleton, &prior, &lift)?,
                target: r.complete_ground_truth().expect("synthetic ground truth"),
            })
        })
        .collect::<depthpose::Result<Vec<_>>>()?;
    let config = RegressorConfig {
        features: 256,
        epochs,
        ..Default::default()
    };
    let (model, _) = ResidualRegressor::fit_with_progress(&config, &skeleton, &pairs, None, |e| {
        println!(
            "epoch {:>3}  lr {:.1e}  loss {:.4e}",
            e.epoch, e.learning_rate, e.train_loss
        )
    })?;

    let lifted = test
        .iter()
        .map(|r| r.lift(&skeleton, &prior, &lift))
        .collect::<depthpose::Result<Vec<_>>>()?;
    let refined = model.predict(&lifted)?;
    let base: Vec<_> = test
        .iter()
        .zip(&lifted)
        .map(|(r, l)| r.eval_pair(l.positions()))
        .collect();
    let ours: Vec<_> = test.iter().zip(refined).map(|(r, p)| r.eval_pair(p)).collect();
    for (name, pairs) in [("lifted", base), ("refined", ours)] {
        let m = MethodReport::compute(name, &skeleton, &pairs, DEFAULT_AP_THRESHOLD)?;
        println!("{name:<8} mAP {:.2}%  mMPJPE {:.2} cm", m.map * 100.0, m.mmpjpe_cm);
    }
    Ok(())
}
