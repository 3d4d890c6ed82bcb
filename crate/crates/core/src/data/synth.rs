//! Synthetic scenes with a known surface offset between the observed depth
//! points and the true joints.
//!
//! Bodies are built limb by limb from the spine outward. Each limb has a rest
//! direction in a body frame (camera axes for an upright person facing the
//! camera: up is `-y`, the person's right is `-x`, front is `-z`), a length
//! range and a swing amplitude; swings compose down the limb tree. The
//! observed point for joint `Y` is `Y + m * n(Y)`, where `n` blends the
//! direction towards the camera with the body's front.

use std::collections::HashMap;

use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{LandmarkRecord, SampleRecord};
use crate::error::{Error, Result};
use crate::lifting::{lift_point, CameraIntrinsics};
use crate::skeleton::SkeletonModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimbTemplate {
    pub child: String,
    pub parent: String,
    /// Rest direction of `child - parent` in the body frame.
    pub direction: [f64; 3],
    /// Length range in meters.
    pub length: [f64; 2],
    /// Maximum swing away from the rest direction, radians.
    pub swing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BodyTemplate {
    pub limbs: Vec<LimbTemplate>,
}

impl Default for BodyTemplate {
    fn default() -> Self {
        let l = |child: &str, parent: &str, direction: [f64; 3], length: [f64; 2], swing: f64| LimbTemplate {
            child: child.into(),
            parent: parent.into(),
            direction,
            length,
            swing,
        };
        let up = [0.0, -1.0, 0.0];
        let down = [0.0, 1.0, 0.0];
        Self {
            limbs: vec![
                l("neck", "torso", up, [0.24, 0.32], 0.25),
                l("head", "neck", up, [0.18, 0.25], 0.35),
                l("right_shoulder", "neck", [-1.0, 0.15, 0.0], [0.15, 0.21], 0.15),
                l("left_shoulder", "neck", [1.0, 0.15, 0.0], [0.15, 0.21], 0.15),
                l("right_elbow", "right_shoulder", down, [0.25, 0.32], 1.2),
                l("left_elbow", "left_shoulder", down, [0.25, 0.32], 1.2),
                l("right_hand", "right_elbow", down, [0.22, 0.30], 1.0),
                l("left_hand", "left_elbow", down, [0.22, 0.30], 1.0),
                l("right_hip", "torso", [-0.4, 1.0, 0.0], [0.20, 0.28], 0.1),
                l("left_hip", "torso", [0.4, 1.0, 0.0], [0.20, 0.28], 0.1),
                l("right_knee", "right_hip", down, [0.38, 0.48], 0.6),
                l("left_knee", "left_hip", down, [0.38, 0.48], 0.6),
                l("right_foot", "right_knee", down, [0.38, 0.46], 0.5),
                l("left_foot", "left_knee", down, [0.38, 0.46], 0.5),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_samples: usize,
    pub seed: u64,
    pub intrinsics: CameraIntrinsics,
    pub image_width: u32,
    pub image_height: u32,
    pub body: BodyTemplate,
    /// Scales every swing amplitude.
    pub pose_amplitude: f64,
    /// Body rotation about the vertical axis, radians either way.
    pub max_yaw: f64,
    /// Depth range for the torso, meters.
    pub torso_depth: [f64; 2],
    /// Offset between the observed surface point and the joint, meters.
    pub surface_offset: f64,
    /// Weight of the body front against the camera ray in the offset normal.
    pub offset_front_weight: f64,
    /// Dropout probability of each non-trunk landmark.
    pub dropout: f64,
    /// Dropout probability of trunk landmarks other than the spine
    /// endpoints; two of them are always kept.
    pub trunk_dropout: f64,
    /// Standard deviation of Gaussian noise on observed depth, meters.
    pub depth_noise: f64,
    /// Detected landmarks get a confidence uniform in this range.
    pub confidence: [f64; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_samples: 1000,
            seed: 0,
            intrinsics: CameraIntrinsics::kinect2(),
            image_width: 512,
            image_height: 424,
            body: BodyTemplate::default(),
            pose_amplitude: 1.0,
            max_yaw: 0.8,
            torso_depth: [1.5, 6.0],
            surface_offset: 0.03,
            offset_front_weight: 0.5,
            dropout: 0.1,
            trunk_dropout: 0.0,
            depth_noise: 0.005,
            confidence: [0.5, 1.0],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        self.intrinsics.validate()?;
        for (name, p) in [("dropout", self.dropout), ("trunk_dropout", self.trunk_dropout)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be a probability, got {p}"));
            }
        }
        if self.trunk_dropout >= 1.0 {
            return bad("trunk_dropout = 1 cannot keep the trunk landmarks lifting needs".into());
        }
        let magnitudes = [
            self.surface_offset,
            self.depth_noise,
            self.pose_amplitude,
            self.max_yaw,
            self.offset_front_weight,
        ];
        if magnitudes.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return bad("offsets, noise and amplitudes must be finite and non-negative".into());
        }
        let [z0, z1] = self.torso_depth;
        if !(z0 > 0.0 && z0 <= z1 && z1 <= 7.0) {
            return bad(format!("torso depth range {:?} must lie in (0, 7] m", self.torso_depth));
        }
        let [c0, c1] = self.confidence;
        if !(0.0 <= c0 && c0 <= c1 && c1 <= 1.0) {
            return bad(format!("confidence range {:?} must lie in [0, 1]", self.confidence));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return bad("image size must be positive".into());
        }
        for l in &self.body.limbs {
            let [a, b] = l.length;
            if !(0.0 < a && a <= b) || Vector3::from(l.direction).norm() == 0.0 || l.swing.is_nan() || l.swing < 0.0 {
                return bad(format!("limb template {}-{} is invalid", l.child, l.parent));
            }
        }
        Ok(())
    }
}

/// Template entry per skeleton limb, in skeleton limb order.
fn match_template<'a>(config: &'a SynthConfig, model: &SkeletonModel) -> Result<Vec<&'a LimbTemplate>> {
    let by_name: HashMap<(&str, &str), &LimbTemplate> = config
        .body
        .limbs
        .iter()
        .map(|l| ((l.child.as_str(), l.parent.as_str()), l))
        .collect();
    let names = model.landmarks();
    model
        .limbs()
        .iter()
        .map(|l| {
            let key = (names[l.child].as_str(), names[l.parent].as_str());
            by_name
                .get(&key)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("body template has no limb {}-{}", key.0, key.1)))
        })
        .collect()
}

fn random_swing(rng: &mut ChaCha8Rng, rest: &Vector3<f64>, amplitude: f64) -> Rotation3<f64> {
    if amplitude == 0.0 {
        return Rotation3::identity();
    }
    let r = Vector3::new(
        rng.random::<f64>() - 0.5,
        rng.random::<f64>() - 0.5,
        rng.random::<f64>() - 0.5,
    );
    let angle = rng.random_range(-amplitude..=amplitude);
    match Unit::try_new(rest.cross(&r), 1e-9) {
        Some(axis) => Rotation3::from_axis_angle(&axis, angle),
        None => Rotation3::identity(),
    }
}

/// True joints of one random pose, camera frame, and the body front.
fn sample_body(
    rng: &mut ChaCha8Rng,
    config: &SynthConfig,
    model: &SkeletonModel,
    template: &[&LimbTemplate],
) -> Result<(Vec<Vector3<f64>>, Vector3<f64>)> {
    let up = Vector3::new(0.0, -1.0, 0.0);
    let yaw = config.max_yaw;
    let global = Rotation3::from_axis_angle(&Unit::new_normalize(up), rng.random_range(-yaw..=yaw));
    let size = rng.random::<f64>();

    let n_limbs = model.limbs().len();
    let mut rotations = vec![Rotation3::identity(); n_limbs];
    let mut local = vec![Vector3::zeros(); model.num_landmarks()];
    let mut placed = vec![false; model.num_landmarks()];
    for limb in model.recovery_order() {
        let t = template[limb];
        let rest = Vector3::from(t.direction).normalize();
        let swing = random_swing(rng, &rest, t.swing * config.pose_amplitude);
        let inherited = model.limb_parent(limb).map_or(Rotation3::identity(), |p| rotations[p]);
        rotations[limb] = inherited * swing;
        let s = (0.7 * size + 0.3 * rng.random::<f64>()).clamp(0.0, 1.0);
        let length = t.length[0] + (t.length[1] - t.length[0]) * s;
        let vector = rotations[limb] * rest * length;
        let l = model.limbs()[limb];
        if limb == model.root_limb() {
            placed[l.parent] = true;
            local[l.child] = local[l.parent] + vector;
            placed[l.child] = true;
            continue;
        }
        let anchor = model.anchor_landmark(limb);
        debug_assert!(placed[anchor]);
        let other = l.other(anchor);
        local[other] = if anchor == l.parent {
            local[anchor] + vector
        } else {
            local[anchor] - vector
        };
        placed[other] = true;
    }

    // Place the root-limb parent landmark at a random pixel in the central
    // half of the image and a random depth.
    let root = model.limbs()[model.root_limb()];
    let z = rng.random_range(config.torso_depth[0]..=config.torso_depth[1]);
    let (w, h) = (config.image_width as f64, config.image_height as f64);
    let u = rng.random_range(0.25 * w..=0.75 * w);
    let v = rng.random_range(0.3 * h..=0.7 * h);
    let center = lift_point(u, v, z, &config.intrinsics)?;
    let origin = local[root.parent];
    let joints = local.iter().map(|p| center + global * (p - origin)).collect();
    let front = global * Vector3::new(0.0, 0.0, -1.0);
    Ok((joints, front))
}

/// Draws `config.num_samples` records. The output is a deterministic
/// function of the config, seed included.
pub fn generate_synthetic(config: &SynthConfig, model: &SkeletonModel) -> Result<Vec<SampleRecord>> {
    config.validate()?;
    let template = match_template(config, model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let root = model.limbs()[model.root_limb()];
    let optional_trunk: Vec<usize> = model
        .trunk()
        .iter()
        .copied()
        .filter(|&t| t != root.child && t != root.parent)
        .collect();
    if optional_trunk.len() < 2 {
        return Err(Error::InvalidArgument(
            "skeleton trunk needs two landmarks besides the spine".into(),
        ));
    }
    let k = config.intrinsics;

    let mut records = Vec::with_capacity(config.num_samples);
    for i in 0..config.num_samples {
        let (joints, front) = sample_body(&mut rng, config, model, &template)?;
        if joints.iter().any(|p| p.z <= 0.1) {
            return Err(Error::InvalidArgument(
                "body template places joints behind the camera".into(),
            ));
        }

        let mut detected: Vec<bool> = (0..joints.len())
            .map(|j| {
                let p = if model.is_trunk(j) {
                    config.trunk_dropout
                } else {
                    config.dropout
                };
                j == root.child || j == root.parent || rng.random::<f64>() >= p
            })
            .collect();
        let kept = optional_trunk.iter().filter(|&&t| detected[t]).count();
        let restore: Vec<usize> = optional_trunk
            .iter()
            .copied()
            .filter(|&t| !detected[t])
            .take(2usize.saturating_sub(kept))
            .collect();
        for t in restore {
            detected[t] = true;
        }

        let mut landmarks = Vec::with_capacity(joints.len());
        for (j, y) in joints.iter().enumerate() {
            let ray = -y.normalize();
            let normal = (ray + config.offset_front_weight * front).normalize();
            let surface = y + config.surface_offset * normal;
            let noise: f64 = rng.sample(StandardNormal);
            let confidence = rng.random_range(config.confidence[0]..=config.confidence[1]);
            landmarks.push(if detected[j] {
                let (u, v) = k.project(&surface);
                LandmarkRecord {
                    u,
                    v,
                    confidence,
                    detected: true,
                    depth: Some(surface.z + config.depth_noise * noise),
                }
            } else {
                LandmarkRecord {
                    u: 0.0,
                    v: 0.0,
                    confidence: 0.0,
                    detected: false,
                    depth: None,
                }
            });
        }

        let gt2d: Vec<[f64; 2]> = joints
            .iter()
            .map(|y| {
                let (u, v) = k.project(y);
                [u, v]
            })
            .collect();
        let (lo, hi) = gt2d.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p[1]), hi.max(p[1]))
        });
        records.push(SampleRecord {
            id: format!("synth-{}-{i:06}", config.seed),
            intrinsics: k,
            landmarks,
            depth_frame: None,
            gt3d: joints.iter().map(|y| Some([y.x, y.y, y.z])).collect(),
            gt2d: Some(gt2d.into_iter().map(Some).collect()),
            bbox_height: Some((hi - lo).max(1.0)),
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifting::{LiftConfig, LimbPrior, Provenance};

    fn clean() -> SynthConfig {
        SynthConfig {
            num_samples: 200,
            surface_offset: 0.0,
            depth_noise: 0.0,
            dropout: 0.0,
            seed: 3,
            ..SynthConfig::default()
        }
    }

    fn prior(model: &SkeletonModel, records: &[SampleRecord]) -> LimbPrior {
        let poses: Vec<_> = records.iter().map(|r| r.complete_ground_truth().unwrap()).collect();
        LimbPrior::fit(model, &poses, 1e-6).unwrap()
    }

    #[test]
    fn clean_scenes_lift_back_to_ground_truth() {
        let model = SkeletonModel::itop15();
        let recs = generate_synthetic(&clean(), &model).unwrap();
        let prior = prior(&model, &recs);
        for r in &recs {
            let lifted = r.lift(&model, &prior, &LiftConfig::default()).unwrap();
            for (l, g) in lifted.landmarks.iter().zip(r.complete_ground_truth().unwrap()) {
                assert!((l.position - g).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn offset_sets_the_lifting_error() {
        let model = SkeletonModel::itop15();
        let config = SynthConfig {
            surface_offset: 0.03,
            ..clean()
        };
        let recs = generate_synthetic(&config, &model).unwrap();
        let prior = prior(&model, &recs);
        for r in &recs {
            let lifted = r.lift(&model, &prior, &LiftConfig::default()).unwrap();
            for (l, g) in lifted.landmarks.iter().zip(r.complete_ground_truth().unwrap()) {
                assert!(((l.position - g).norm() - 0.03).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn limb_lengths_respect_template() {
        let model = SkeletonModel::itop15();
        let config = clean();
        let template = match_template(&config, &model).unwrap();
        for r in generate_synthetic(&config, &model).unwrap() {
            let gt = r.complete_ground_truth().unwrap();
            for (limb, t) in model.limbs().iter().zip(&template) {
                let len = (gt[limb.child] - gt[limb.parent]).norm();
                assert!(len >= t.length[0] - 1e-9 && len <= t.length[1] + 1e-9);
            }
            let torso = gt[model.landmark_index("torso").unwrap()];
            assert!((1.5..=6.0).contains(&torso.z));
        }
    }

    #[test]
    fn dropout_spares_the_trunk_guarantee() {
        let model = SkeletonModel::itop15();
        let config = SynthConfig {
            dropout: 0.9,
            trunk_dropout: 0.95,
            ..clean()
        };
        let recs = generate_synthetic(&config, &model).unwrap();
        let prior = prior(&model, &recs);
        let mut recovered = 0;
        for r in &recs {
            let lifted = r.lift(&model, &prior, &LiftConfig::default()).unwrap();
            recovered += lifted
                .landmarks
                .iter()
                .filter(|l| l.provenance == Provenance::PriorRecovered)
                .count();
        }
        assert!(recovered > 0);
        let full = SynthConfig {
            trunk_dropout: 1.0,
            ..clean()
        };
        assert!(generate_synthetic(&full, &model).is_err());
    }

    #[test]
    fn same_seed_same_dataset() {
        let model = SkeletonModel::itop15();
        let config = SynthConfig {
            num_samples: 30,
            ..SynthConfig::default()
        };
        let a = generate_synthetic(&config, &model).unwrap();
        assert_eq!(a, generate_synthetic(&config, &model).unwrap());
        let b = generate_synthetic(&SynthConfig { seed: 1, ..config }, &model).unwrap();
        assert_ne!(a[0].gt3d, b[0].gt3d);
    }

    #[test]
    fn template_must_cover_the_skeleton() {
        let model = SkeletonModel::itop15();
        let mut config = clean();
        config.body.limbs.pop();
        assert!(generate_synthetic(&config, &model).is_err());
    }
}
