//! Scores hand-made predictions with AP, MPJPE and the 2D PCK sweep.
//!
//! cargo run --example evaluate_metrics

use depthpose::metrics::{ap_at_threshold, default_radius_fractions, mpjpe, pck_curve, EvalPair, Pck2DPair};
use nalgebra::Vector3;

fn main() -> depthpose::Result<()> {
    let truth = vec![
        Vector3::new(0.0, 0.0, 2.0),
        Vector3::new(0.0, 0.5, 2.0),
        Vector3::new(0.3, 0.5, 2.1),
    ];
    let offsets = [0.02, 0.08, 0.15];
    let pred: Vec<_> = truth
        .iter()
        .zip(offsets)
        .map(|(p, d)| p + Vector3::new(d, 0.0, 0.0))
        .collect();
    let pairs = vec![EvalPair::new(pred, truth)];

    let ap = ap_at_threshold(&pairs, 0.10)?;
    let err = mpjpe(&pairs)?;
    for j in 0..3 {
        println!(
            "joint {j}: AP {:.0}%  MPJPE {:.1} cm",
            ap.per_joint[j].unwrap() * 100.0,
            err.per_joint[j].unwrap()
        );
    }
    println!("mean AP {:.1}%  mean MPJPE {:.2} cm", ap.mean * 100.0, err.mean);

    let pck = vec![Pck2DPair {
        detections: vec![Some([100.0, 100.0]), Some([130.0, 200.0]), None],
        ground_truth: vec![Some([102.0, 101.0]), Some([110.0, 200.0]), Some([50.0, 50.0])],
        bbox_height: 200.0,
    }];
    let curve = pck_curve(&pck, &default_radius_fractions())?;
    for p in curve.points.iter().step_by(4) {
        println!(
            "radius {:.2}·h: precision {:.2} recall {:.2} F {:.2}",
            p.fraction, p.precision, p.recall, p.f_score
        );
    }
    Ok(())
}
