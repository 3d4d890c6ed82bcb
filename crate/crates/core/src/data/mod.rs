//! Dataset records (one JSON object per line) and the synthetic generator.

mod synth;

pub use synth::{generate_synthetic, BodyTemplate, LimbTemplate, SynthConfig};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifting::{
    lift_pose, lift_pose_with_depths, CameraIntrinsics, DepthFrame, DepthSample, Detection2D, LiftConfig, LiftedPose,
    LimbPrior, Pose2D, MAX_DEPTH,
};
use crate::metrics::{EvalPair, Pck2DPair};
use crate::skeleton::SkeletonModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkRecord {
    pub u: f64,
    pub v: f64,
    pub confidence: f64,
    pub detected: bool,
    /// Inline depth in meters; ignored when the record names a depth frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub intrinsics: CameraIntrinsics,
    pub landmarks: Vec<LandmarkRecord>,
    /// Depth frame file, relative to the dataset file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_frame: Option<PathBuf>,
    /// Ground-truth joints in meters; `null` marks an invalid joint.
    pub gt3d: Vec<Option<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt2d: Option<Vec<Option<[f64; 2]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox_height: Option<f64>,
}

impl SampleRecord {
    pub fn validate(&self, model: &SkeletonModel) -> Result<()> {
        let j = model.num_landmarks();
        let schema = |m: String| Err(Error::Schema(format!("record '{}': {m}", self.id)));
        if self.landmarks.len() != j || self.gt3d.len() != j {
            return Err(Error::DimensionMismatch(format!(
                "record '{}' has {} landmarks and {} ground-truth joints, skeleton has {j}",
                self.id,
                self.landmarks.len(),
                self.gt3d.len()
            )));
        }
        if let Some(gt2d) = &self.gt2d {
            if gt2d.len() != j {
                return Err(Error::DimensionMismatch(format!(
                    "record '{}' has {} 2D ground-truth joints, skeleton has {j}",
                    self.id,
                    gt2d.len()
                )));
            }
            if gt2d.iter().flatten().flatten().any(|c| !c.is_finite()) {
                return schema("non-finite 2D ground truth".into());
            }
        }
        self.intrinsics
            .validate()
            .map_err(|e| Error::Schema(format!("record '{}': {e}", self.id)))?;
        for (k, l) in self.landmarks.iter().enumerate() {
            if l.detected && !(l.u.is_finite() && l.v.is_finite()) {
                return schema(format!("landmark {k} is detected with non-finite pixel coordinates"));
            }
            if !(0.0..=1.0).contains(&l.confidence) {
                return schema(format!("landmark {k} confidence {} outside [0, 1]", l.confidence));
            }
            if l.depth.is_some_and(|z| z.is_nan()) {
                return schema(format!("landmark {k} depth is NaN"));
            }
        }
        if self.gt3d.iter().flatten().flatten().any(|c| !c.is_finite()) {
            return schema("non-finite 3D ground truth".into());
        }
        if self.bbox_height.is_some_and(|h| !(h > 0.0 && h.is_finite())) {
            return schema("bounding box height must be positive".into());
        }
        Ok(())
    }

    pub fn pose2d(&self) -> Pose2D {
        Pose2D {
            landmarks: self
                .landmarks
                .iter()
                .map(|l| Detection2D {
                    u: l.u,
                    v: l.v,
                    confidence: l.confidence,
                    detected: l.detected,
                })
                .collect(),
        }
    }

    /// Lifts the record, reading its depth frame when it has one.
    pub fn lift(&self, model: &SkeletonModel, prior: &LimbPrior, config: &LiftConfig) -> Result<LiftedPose> {
        let pose2d = self.pose2d();
        match &self.depth_frame {
            Some(path) => {
                let frame = DepthFrame::load(path, self.intrinsics)?;
                lift_pose(model, &pose2d, &frame, prior, config)
            }
            None => {
                let depths: Vec<DepthSample> = self
                    .landmarks
                    .iter()
                    .map(|l| DepthSample::from_inline(l.depth))
                    .collect();
                lift_pose_with_depths(model, &pose2d, &depths, &self.intrinsics, prior, config)
            }
        }
    }

    /// Ground truth with invalid joints zeroed, and the validity mask.
    pub fn ground_truth(&self) -> (Vec<Vector3<f64>>, Vec<bool>) {
        self.gt3d
            .iter()
            .map(|g| match g {
                Some(p) => (Vector3::from(*p), true),
                None => (Vector3::zeros(), false),
            })
            .unzip()
    }

    /// Complete ground truth, or `None` when any joint is invalid.
    pub fn complete_ground_truth(&self) -> Option<Vec<Vector3<f64>>> {
        self.gt3d.iter().map(|g| g.map(Vector3::from)).collect()
    }

    pub fn eval_pair(&self, predicted: Vec<Vector3<f64>>) -> EvalPair {
        let (ground_truth, gt_valid) = self.ground_truth();
        EvalPair {
            predicted,
            ground_truth,
            gt_valid,
        }
    }

    /// 2D detections against 2D ground truth, when the record carries both.
    pub fn pck_pair(&self) -> Option<Pck2DPair> {
        Some(Pck2DPair {
            detections: self
                .landmarks
                .iter()
                .map(|l| l.detected.then_some([l.u, l.v]))
                .collect(),
            ground_truth: self.gt2d.clone()?,
            bbox_height: self.bbox_height?,
        })
    }
}

fn resolve_frame(record: &mut SampleRecord, base: &Path) {
    if let Some(p) = &record.depth_frame {
        if p.is_relative() {
            record.depth_frame = Some(base.join(p));
        }
    }
}

/// Reads a record file. Malformed lines are fatal when `strict`, otherwise
/// logged with their line number and skipped. A landmark count that does not
/// match the skeleton is always fatal.
pub fn read_dataset(path: impl AsRef<Path>, model: &SkeletonModel, strict: bool) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let parsed = serde_json::from_str::<SampleRecord>(&line)
            .map_err(|e| Error::Schema(e.to_string()))
            .and_then(|r| r.validate(model).map(|_| r));
        match parsed {
            Ok(mut r) => {
                resolve_frame(&mut r, base);
                records.push(r);
            }
            Err(e @ Error::DimensionMismatch(_)) => {
                return Err(Error::DimensionMismatch(format!("{}:{lineno}: {e}", path.display())))
            }
            Err(e) if strict => return Err(Error::Schema(format!("{}:{lineno}: {e}", path.display()))),
            Err(e) => log::warn!("{}:{lineno}: skipping malformed record: {e}", path.display()),
        }
    }
    if records.is_empty() {
        log::warn!("{}: dataset is empty", path.display());
    }
    Ok(records)
}

pub fn write_dataset(path: impl AsRef<Path>, records: &[SampleRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangePolicy {
    /// Clamp into `[0, 8]` and log a warning.
    #[default]
    Clamp,
    Error,
}

/// Maps sensor depth in `[0, 8]` m linearly onto `[-0.5, 0.5]`.
pub fn normalize_depth_range(raw: f64, policy: RangePolicy) -> Result<f64> {
    if raw.is_nan() {
        return Err(Error::NonFinite("depth value".into()));
    }
    let z = if (0.0..=MAX_DEPTH).contains(&raw) {
        raw
    } else {
        match policy {
            RangePolicy::Error => {
                return Err(Error::InvalidArgument(format!(
                    "depth {raw} m outside [0, {MAX_DEPTH}]"
                )))
            }
            RangePolicy::Clamp => {
                log::warn!("depth {raw} m clamped into [0, {MAX_DEPTH}]");
                raw.clamp(0.0, MAX_DEPTH)
            }
        }
    };
    Ok(z / MAX_DEPTH - 0.5)
}
