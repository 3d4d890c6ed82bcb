//! Lifting 2D landmark detections to a rough 3D pose.
//!
//! Detected landmarks are back-projected with their depth. Missing depth is
//! filled from the neighborhood, and landmarks that are still unresolved are
//! recovered limb by limb from the spine root using the pairwise limb prior.

mod camera;
mod depth;
mod prior;

pub use camera::{is_valid_depth, lift_point, CameraIntrinsics, MAX_DEPTH};
pub use depth::{DepthFrame, DEPTH_MAGIC};
pub use prior::{limb_vector, LimbGaussian, LimbPrior, DEFAULT_EPSILON};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::SkeletonModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection2D {
    pub u: f64,
    pub v: f64,
    pub confidence: f64,
    pub detected: bool,
}

impl Detection2D {
    pub fn missing() -> Self {
        Self {
            u: 0.0,
            v: 0.0,
            confidence: 0.0,
            detected: false,
        }
    }
}

/// Per-landmark 2D detections for one person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub landmarks: Vec<Detection2D>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Detected,
    DepthFilled,
    PriorRecovered,
    /// Placed at the trunk centroid; only produced by [`RecoveryMode::TrunkCentroid`].
    CentroidFilled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftedLandmark {
    pub position: Vector3<f64>,
    pub provenance: Provenance,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedPose {
    pub landmarks: Vec<LiftedLandmark>,
}

impl LiftedPose {
    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.landmarks.iter().map(|l| l.position).collect()
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    /// Pose with every landmark marked detected at full confidence.
    pub fn from_positions(positions: &[Vector3<f64>]) -> Self {
        Self {
            landmarks: positions
                .iter()
                .map(|&position| LiftedLandmark {
                    position,
                    provenance: Provenance::Detected,
                    confidence: 1.0,
                })
                .collect(),
        }
    }
}

/// How landmarks left unresolved after depth filling are placed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryMode {
    /// Conditional mean of the pairwise limb prior.
    #[default]
    Prior,
    /// Centroid of the detected trunk landmarks (ablation baseline).
    TrunkCentroid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiftConfig {
    /// Half-width in pixels of the depth-fill window.
    pub fill_radius: u32,
    /// Confidence assigned to recovered landmarks.
    pub recovered_confidence: f64,
    pub recovery: RecoveryMode,
}

impl Default for LiftConfig {
    fn default() -> Self {
        Self {
            fill_radius: 5,
            recovered_confidence: 0.1,
            recovery: RecoveryMode::Prior,
        }
    }
}

/// Depth resolved for one landmark before lifting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DepthSample {
    Valid(f64),
    Filled(f64),
    Missing,
}

impl DepthSample {
    /// Classifies an inline depth value; there is no neighborhood to fill from.
    pub fn from_inline(z: Option<f64>) -> Self {
        match z {
            Some(z) if is_valid_depth(z) => DepthSample::Valid(z),
            _ => DepthSample::Missing,
        }
    }
}

/// Looks up depth for every detected landmark in `frame`. Detections outside
/// the frame, or whose fill window holds no valid depth, become `Missing`.
pub fn sample_depths(pose2d: &Pose2D, frame: &DepthFrame, radius: u32) -> Vec<DepthSample> {
    pose2d
        .landmarks
        .iter()
        .map(|d| {
            if !d.detected {
                return DepthSample::Missing;
            }
            let Some((x, y)) = frame.pixel(d.u, d.v) else {
                return DepthSample::Missing;
            };
            let center_valid = frame.get(x, y).is_some_and(is_valid_depth);
            match frame.fill_depth(d.u, d.v, radius) {
                Ok(Some(z)) if center_valid => DepthSample::Valid(z),
                Ok(Some(z)) => DepthSample::Filled(z),
                _ => DepthSample::Missing,
            }
        })
        .collect()
}

/// Lifts a pose against a depth frame.
pub fn lift_pose(
    model: &SkeletonModel,
    pose2d: &Pose2D,
    frame: &DepthFrame,
    prior: &LimbPrior,
    config: &LiftConfig,
) -> Result<LiftedPose> {
    check_len(model, pose2d)?;
    let depths = sample_depths(pose2d, frame, config.fill_radius);
    lift_pose_with_depths(model, pose2d, &depths, &frame.intrinsics, prior, config)
}

fn check_len(model: &SkeletonModel, pose2d: &Pose2D) -> Result<()> {
    if pose2d.landmarks.len() != model.num_landmarks() {
        return Err(Error::DimensionMismatch(format!(
            "pose has {} landmarks, skeleton has {}",
            pose2d.landmarks.len(),
            model.num_landmarks()
        )));
    }
    Ok(())
}

/// Lifts a pose whose per-landmark depths are already resolved.
pub fn lift_pose_with_depths(
    model: &SkeletonModel,
    pose2d: &Pose2D,
    depths: &[DepthSample],
    intrinsics: &CameraIntrinsics,
    prior: &LimbPrior,
    config: &LiftConfig,
) -> Result<LiftedPose> {
    check_len(model, pose2d)?;
    if depths.len() != pose2d.landmarks.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} depth samples for {} landmarks",
            depths.len(),
            pose2d.landmarks.len()
        )));
    }
    let j = model.num_landmarks();
    let mut resolved: Vec<Option<LiftedLandmark>> = vec![None; j];
    for (i, (det, depth)) in pose2d.landmarks.iter().zip(depths).enumerate() {
        if !det.detected {
            continue;
        }
        let (z, provenance) = match *depth {
            DepthSample::Valid(z) => (z, Provenance::Detected),
            DepthSample::Filled(z) => (z, Provenance::DepthFilled),
            DepthSample::Missing => continue,
        };
        let position = lift_point(det.u, det.v, z, intrinsics)?;
        resolved[i] = Some(LiftedLandmark {
            position,
            provenance,
            confidence: det.confidence.clamp(0.0, 1.0),
        });
    }

    let root = model.limbs()[model.root_limb()];
    if resolved[root.child].is_none() || resolved[root.parent].is_none() {
        return Err(Error::Unprocessable(
            "spine limb endpoints are not both detected with depth".into(),
        ));
    }
    let extra_trunk = model
        .trunk()
        .iter()
        .filter(|&&t| t != root.child && t != root.parent && resolved[t].is_some())
        .count();
    if extra_trunk < 2 {
        return Err(Error::Unprocessable(format!(
            "need 2 trunk landmarks besides the spine, found {extra_trunk}"
        )));
    }

    let recovered = |position| LiftedLandmark {
        position,
        provenance: Provenance::PriorRecovered,
        confidence: config.recovered_confidence,
    };
    match config.recovery {
        RecoveryMode::Prior => {
            if prior.skeleton_checksum() != model.checksum() {
                return Err(Error::Checksum("prior was fitted for a different skeleton".into()));
            }
            for limb in model.recovery_order().into_iter().skip(1) {
                let anchor = model.anchor_landmark(limb);
                let l = model.limbs()[limb];
                let target = l.other(anchor);
                if resolved[target].is_some() {
                    continue;
                }
                let parent = model.limbs()[model.limb_parent(limb).expect("non-root limb")];
                let (Some(a), Some(pc), Some(pp)) = (resolved[anchor], resolved[parent.child], resolved[parent.parent])
                else {
                    return Err(Error::Unprocessable(format!(
                        "limb {limb} has an unresolved parent limb"
                    )));
                };
                let parent_vector = pc.position - pp.position;
                let limb_vec = prior.recover_landmark(limb, &parent_vector)?;
                let position = if target == l.child {
                    a.position + limb_vec
                } else {
                    a.position - limb_vec
                };
                resolved[target] = Some(recovered(position));
            }
        }
        RecoveryMode::TrunkCentroid => {
            let trunk: Vec<_> = model.trunk().iter().filter_map(|&t| resolved[t]).collect();
            let centroid = trunk.iter().map(|l| l.position).sum::<Vector3<f64>>() / trunk.len() as f64;
            for slot in resolved.iter_mut().filter(|s| s.is_none()) {
                *slot = Some(LiftedLandmark {
                    provenance: Provenance::CentroidFilled,
                    ..recovered(centroid)
                });
            }
        }
    }

    let landmarks = resolved
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::Unprocessable(format!("landmark {i} could not be resolved"))))
        .collect::<Result<Vec<_>>>()?;
    if landmarks.iter().any(|l| !l.position.iter().all(|c| c.is_finite())) {
        return Err(Error::NonFinite("lifted pose".into()));
    }
    Ok(LiftedPose { landmarks })
}
