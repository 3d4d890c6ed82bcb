//! Pose evaluation: per-joint AP at a distance threshold, MPJPE, and the
//! radius-sweep PCK precision/recall protocol for 2D detections.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::SkeletonModel;

pub const DEFAULT_AP_THRESHOLD: f64 = 0.10;

/// `0.02, 0.04, ..., 0.20`.
pub fn default_radius_fractions() -> Vec<f64> {
    (1..=10).map(|i| i as f64 * 0.02).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub predicted: Vec<Vector3<f64>>,
    pub ground_truth: Vec<Vector3<f64>>,
    pub gt_valid: Vec<bool>,
}

impl EvalPair {
    pub fn new(predicted: Vec<Vector3<f64>>, ground_truth: Vec<Vector3<f64>>) -> Self {
        let gt_valid = vec![true; ground_truth.len()];
        Self {
            predicted,
            ground_truth,
            gt_valid,
        }
    }
}

/// Per-joint values; `None` where no pair had valid ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointScores {
    pub per_joint: Vec<Option<f64>>,
    /// Mean over joints with a value.
    pub mean: f64,
}

impl JointScores {
    fn from_sums(sums: &[(f64, usize)]) -> Self {
        let per_joint: Vec<Option<f64>> = sums.iter().map(|&(s, n)| (n > 0).then(|| s / n as f64)).collect();
        let valid: Vec<f64> = per_joint.iter().flatten().copied().collect();
        let mean = if valid.is_empty() {
            0.0
        } else {
            valid.iter().sum::<f64>() / valid.len() as f64
        };
        Self { per_joint, mean }
    }
}

/// Walks every valid joint of every pair, accumulating `f(distance)`.
fn per_joint_sums(pairs: &[EvalPair], f: impl Fn(f64) -> f64) -> Result<Vec<(f64, usize)>> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no evaluation pairs".into()))?;
    let j = first.ground_truth.len();
    let mut sums = vec![(0.0, 0usize); j];
    for (i, p) in pairs.iter().enumerate() {
        if p.predicted.len() != j || p.ground_truth.len() != j || p.gt_valid.len() != j {
            return Err(Error::DimensionMismatch(format!(
                "evaluation pair {i} does not have {j} joints"
            )));
        }
        for (k, s) in sums.iter_mut().enumerate() {
            if !p.gt_valid[k] {
                continue;
            }
            let d = (p.predicted[k] - p.ground_truth[k]).norm();
            if !d.is_finite() {
                return Err(Error::NonFinite(format!("joint {k} of evaluation pair {i}")));
            }
            s.0 += f(d);
            s.1 += 1;
        }
    }
    Ok(sums)
}

/// Fraction of valid pairs per joint whose error is strictly below
/// `threshold` meters. `mean` is the mAP.
pub fn ap_at_threshold(pairs: &[EvalPair], threshold: f64) -> Result<JointScores> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "threshold must be positive, got {threshold}"
        )));
    }
    let sums = per_joint_sums(pairs, |d| if d < threshold { 1.0 } else { 0.0 })?;
    Ok(JointScores::from_sums(&sums))
}

/// Mean per-joint position error in centimeters. `mean` is the mMPJPE.
pub fn mpjpe(pairs: &[EvalPair]) -> Result<JointScores> {
    let sums = per_joint_sums(pairs, |d| d * 100.0)?;
    Ok(JointScores::from_sums(&sums))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pck2DPair {
    pub detections: Vec<Option<[f64; 2]>>,
    pub ground_truth: Vec<Option<[f64; 2]>>,
    pub bbox_height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckPoint {
    pub fraction: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    /// False when there were no detections and `precision` is a placeholder 0.
    pub precision_defined: bool,
    pub recall: f64,
    pub f_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckCurve {
    pub points: Vec<PckPoint>,
    /// Precision and recall averaged over the sweep.
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub max_f_score: f64,
}

/// A detection within `fraction * bbox_height` pixels of its ground truth
/// is a true positive, any other detection a false positive, and a ground
/// truth landmark without detection a false negative.
pub fn pck_curve(pairs: &[Pck2DPair], radius_fractions: &[f64]) -> Result<PckCurve> {
    if pairs.is_empty() || radius_fractions.is_empty() {
        return Err(Error::InvalidArgument("PCK needs pairs and radius fractions".into()));
    }
    if let Some(a) = radius_fractions.iter().find(|&&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "radius fraction must be positive, got {a}"
        )));
    }
    for (i, p) in pairs.iter().enumerate() {
        if !(p.bbox_height > 0.0 && p.bbox_height.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "pair {i}: bounding box height must be positive"
            )));
        }
        if p.detections.len() != p.ground_truth.len() {
            return Err(Error::DimensionMismatch(format!(
                "pair {i}: detection and ground truth counts differ"
            )));
        }
    }
    let points: Vec<PckPoint> = radius_fractions
        .iter()
        .map(|&fraction| {
            let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
            for p in pairs {
                let r = fraction * p.bbox_height;
                for (det, gt) in p.detections.iter().zip(&p.ground_truth) {
                    match (det, gt) {
                        (Some(d), Some(g)) if (d[0] - g[0]).hypot(d[1] - g[1]) <= r => tp += 1,
                        (Some(_), _) => fp += 1,
                        (None, Some(_)) => fn_ += 1,
                        (None, None) => {}
                    }
                }
            }
            let precision_defined = tp + fp > 0;
            let precision = if precision_defined {
                tp as f64 / (tp + fp) as f64
            } else {
                0.0
            };
            let recall = if tp + fn_ > 0 {
                tp as f64 / (tp + fn_) as f64
            } else {
                0.0
            };
            let f_score = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            PckPoint {
                fraction,
                true_positives: tp,
                false_positives: fp,
                false_negatives: fn_,
                precision,
                precision_defined,
                recall,
                f_score,
            }
        })
        .collect();
    let n = points.len() as f64;
    Ok(PckCurve {
        mean_precision: points.iter().map(|p| p.precision).sum::<f64>() / n,
        mean_recall: points.iter().map(|p| p.recall).sum::<f64>() / n,
        max_f_score: points.iter().map(|p| p.f_score).fold(0.0, f64::max),
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRow {
    pub name: String,
    pub ap: Option<f64>,
    pub mpjpe_cm: Option<f64>,
}

/// Scores of a single method (e.g. lifted baseline or refined output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub num_pairs: usize,
    pub ap_threshold_m: f64,
    pub joints: Vec<JointRow>,
    /// Left/right joints averaged into body parts.
    pub parts: Vec<JointRow>,
    pub map: f64,
    pub mmpjpe_cm: f64,
}

impl MethodReport {
    pub fn compute(method: &str, skeleton: &SkeletonModel, pairs: &[EvalPair], threshold: f64) -> Result<Self> {
        let ap = ap_at_threshold(pairs, threshold)?;
        let err = mpjpe(pairs)?;
        if ap.per_joint.len() != skeleton.num_landmarks() {
            return Err(Error::DimensionMismatch(format!(
                "pairs have {} joints, skeleton has {}",
                ap.per_joint.len(),
                skeleton.num_landmarks()
            )));
        }
        let joints = skeleton
            .landmarks()
            .iter()
            .enumerate()
            .map(|(k, name)| JointRow {
                name: name.clone(),
                ap: ap.per_joint[k],
                mpjpe_cm: err.per_joint[k],
            })
            .collect();
        let avg = |v: &[Option<f64>], members: &[usize]| {
            let vals: Vec<f64> = members.iter().filter_map(|&k| v[k]).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        let parts = skeleton
            .part_groups()
            .into_iter()
            .map(|(name, members)| JointRow {
                name,
                ap: avg(&ap.per_joint, &members),
                mpjpe_cm: avg(&err.per_joint, &members),
            })
            .collect();
        Ok(Self {
            method: method.to_string(),
            num_pairs: pairs.len(),
            ap_threshold_m: threshold,
            joints,
            parts,
            map: ap.mean,
            mmpjpe_cm: err.mean,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub methods: Vec<MethodReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pck: Option<PckCurve>,
}

fn cell(v: Option<f64>, scale: f64) -> String {
    v.map_or_else(|| "".to_string(), |v| format!("{:.2}", v * scale))
}

impl EvaluationReport {
    /// One row per body part plus a mean row; AP as a percentage, MPJPE in
    /// cm, two columns per method.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("part");
        for m in &self.methods {
            write!(out, ",{0}_ap_pct,{0}_mpjpe_cm", m.method).unwrap();
        }
        out.push('\n');
        if let Some(first) = self.methods.first() {
            for (i, part) in first.parts.iter().enumerate() {
                out.push_str(&part.name);
                for m in &self.methods {
                    write!(
                        out,
                        ",{},{}",
                        cell(m.parts[i].ap, 100.0),
                        cell(m.parts[i].mpjpe_cm, 1.0)
                    )
                    .unwrap();
                }
                out.push('\n');
            }
            out.push_str("Mean");
            for m in &self.methods {
                write!(out, ",{:.2},{:.2}", m.map * 100.0, m.mmpjpe_cm).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn pck_csv(&self) -> Option<String> {
        self.pck.as_ref().map(|c| {
            let mut out = String::from("fraction,precision,recall,f_score,precision_defined\n");
            for p in &c.points {
                writeln!(
                    out,
                    "{},{:.6},{:.6},{:.6},{}",
                    p.fraction, p.precision, p.recall, p.f_score, p.precision_defined
                )
                .unwrap();
            }
            out
        })
    }

    /// Writes `report.json`, `table.csv` and, with PCK, `pck.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        let mut files = vec![
            (
                dir.join("report.json"),
                serde_json::to_string_pretty(self).expect("report serializes"),
            ),
            (dir.join("table.csv"), self.table_csv()),
        ];
        if let Some(pck) = self.pck_csv() {
            files.push((dir.join("pck.csv"), pck));
        }
        for (path, text) in &files {
            std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
        }
        Ok(files.into_iter().map(|f| f.0).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single_joint(errors: &[f64]) -> Vec<EvalPair> {
        errors
            .iter()
            .map(|&e| EvalPair::new(vec![Vector3::new(e, 0.0, 0.0)], vec![Vector3::zeros()]))
            .collect()
    }

    #[test]
    fn ap_golden_cases() {
        let r = ap_at_threshold(&single_joint(&[0.05, 0.15]), 0.10).unwrap();
        assert_eq!(r.per_joint, [Some(0.5)]);
        assert_eq!(r.mean, 0.5);
        let boundary = ap_at_threshold(&single_joint(&[0.10]), 0.10).unwrap();
        assert_eq!(boundary.mean, 0.0);
        let perfect = ap_at_threshold(&single_joint(&[0.0, 0.0]), 0.10).unwrap();
        assert_eq!(perfect.mean, 1.0);
        assert!(ap_at_threshold(&[], 0.1).is_err());
        assert!(ap_at_threshold(&single_joint(&[0.0]), 0.0).is_err());
    }

    #[test]
    fn mpjpe_golden_cases() {
        let r = mpjpe(&single_joint(&[0.02, 0.04])).unwrap();
        assert!((r.mean - 3.0).abs() < 1e-12);
        let offset: Vec<EvalPair> = (0..4)
            .map(|i| {
                let gt: Vec<_> = (0..15).map(|k| Vector3::new(k as f64, i as f64, 3.0)).collect();
                let pred = gt.iter().map(|g| g + Vector3::new(0.0, 0.05, 0.0)).collect();
                EvalPair::new(pred, gt)
            })
            .collect();
        let r = mpjpe(&offset).unwrap();
        assert!(r.per_joint.iter().all(|v| (v.unwrap() - 5.0).abs() < 1e-9));
        assert_eq!(mpjpe(&single_joint(&[0.0])).unwrap().mean, 0.0);
        assert!(mpjpe(&[]).is_err());
    }

    #[test]
    fn invalid_joints_are_excluded() {
        let mut pair = EvalPair::new(
            vec![Vector3::zeros(), Vector3::new(9.0, 0.0, 0.0)],
            vec![Vector3::zeros(), Vector3::zeros()],
        );
        pair.gt_valid[1] = false;
        let ap = ap_at_threshold(&[pair.clone()], 0.1).unwrap();
        assert_eq!(ap.per_joint, [Some(1.0), None]);
        assert_eq!(ap.mean, 1.0);
        assert_eq!(mpjpe(&[pair]).unwrap().mean, 0.0);
    }

    #[test]
    fn infinite_threshold_gives_full_ap() {
        let r = ap_at_threshold(&single_joint(&[0.3, 7.0, 1e3]), f64::INFINITY).unwrap();
        assert_eq!(r.mean, 1.0);
    }

    #[test]
    fn pck_golden_cases() {
        let perfect = Pck2DPair {
            detections: vec![Some([10.0, 20.0]), Some([30.0, 40.0])],
            ground_truth: vec![Some([10.0, 20.0]), Some([30.0, 40.0])],
            bbox_height: 100.0,
        };
        let c = pck_curve(&[perfect], &default_radius_fractions()).unwrap();
        assert!(c.points.iter().all(|p| p.precision == 1.0 && p.recall == 1.0));
        assert_eq!(c.max_f_score, 1.0);

        let none = Pck2DPair {
            detections: vec![None, None],
            ground_truth: vec![Some([0.0, 0.0]), Some([1.0, 1.0])],
            bbox_height: 100.0,
        };
        let c = pck_curve(&[none], &[0.1]).unwrap();
        assert_eq!(c.points[0].precision, 0.0);
        assert!(!c.points[0].precision_defined);
        assert_eq!(c.points[0].recall, 0.0);
        assert_eq!(c.points[0].false_negatives, 2);

        let straddle = Pck2DPair {
            detections: vec![Some([10.0, 0.0])],
            ground_truth: vec![Some([0.0, 0.0])],
            bbox_height: 100.0,
        };
        let c = pck_curve(&[straddle], &[0.05, 0.15]).unwrap();
        assert_eq!((c.points[0].true_positives, c.points[0].false_positives), (0, 1));
        assert_eq!((c.points[1].true_positives, c.points[1].false_positives), (1, 0));
        assert_eq!([c.points[0].recall, c.points[1].recall], [0.0, 1.0]);
    }

    #[test]
    fn pck_rejects_bad_input() {
        let p = Pck2DPair {
            detections: vec![None],
            ground_truth: vec![None],
            bbox_height: 0.0,
        };
        assert!(pck_curve(std::slice::from_ref(&p), &[0.1]).is_err());
        assert!(pck_curve(&[], &[0.1]).is_err());
        let p = Pck2DPair { bbox_height: 1.0, ..p };
        assert!(pck_curve(std::slice::from_ref(&p), &[]).is_err());
        assert!(pck_curve(&[p], &[-0.1]).is_err());
    }

    #[test]
    fn table_groups_left_and_right() {
        let skel = SkeletonModel::itop15();
        let gt: Vec<_> = (0..15).map(|k| Vector3::new(0.0, k as f64, 3.0)).collect();
        let mut pred = gt.clone();
        let rs = skel.landmark_index("right_shoulder").unwrap();
        pred[rs].x += 0.2;
        let report = MethodReport::compute("refined", &skel, &[EvalPair::new(pred, gt)], 0.1).unwrap();
        let shoulders = report.parts.iter().find(|p| p.name == "Shoulders").unwrap();
        assert_eq!(shoulders.ap, Some(0.5));
        assert!((shoulders.mpjpe_cm.unwrap() - 10.0).abs() < 1e-9);
        assert_eq!(report.parts.len(), 9);
        let csv = EvaluationReport {
            methods: vec![report],
            pck: None,
        }
        .table_csv();
        assert!(csv.starts_with("part,refined_ap_pct,refined_mpjpe_cm\nHead,100.00,0.00\n"));
        assert!(csv.contains("Shoulders,50.00,10.00\n"));
    }

    proptest! {
        #[test]
        fn ap_and_recall_are_monotone(errors in prop::collection::vec(0.0f64..0.5, 1..40), seed in 0u64..1000) {
            let pairs = single_joint(&errors);
            let thresholds: Vec<f64> = (1..=20).map(|i| i as f64 * 0.025).collect();
            let aps: Vec<f64> = thresholds.iter().map(|&t| ap_at_threshold(&pairs, t).unwrap().mean).collect();
            prop_assert!(aps.windows(2).all(|w| w[0] <= w[1]));

            let pck_pairs: Vec<Pck2DPair> = errors
                .iter()
                .enumerate()
                .map(|(i, &e)| Pck2DPair {
                    detections: vec![(!(i as u64 + seed).is_multiple_of(5)).then_some([e * 100.0, 0.0])],
                    ground_truth: vec![Some([0.0, 0.0])],
                    bbox_height: 100.0,
                })
                .collect();
            let c = pck_curve(&pck_pairs, &thresholds).unwrap();
            prop_assert!(c.points.windows(2).all(|w| w[0].recall <= w[1].recall));
        }

        #[test]
        fn metrics_are_permutation_invariant(errors in prop::collection::vec(0.0f64..0.5, 2..30), rot in 1usize..29) {
            let pairs = single_joint(&errors);
            let mut shuffled = pairs.clone();
            shuffled.rotate_left(rot % pairs.len());
            shuffled.reverse();
            prop_assert_eq!(ap_at_threshold(&pairs, 0.1).unwrap(), ap_at_threshold(&shuffled, 0.1).unwrap());
            let a = mpjpe(&pairs).unwrap().mean;
            let b = mpjpe(&shuffled).unwrap().mean;
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }
}
