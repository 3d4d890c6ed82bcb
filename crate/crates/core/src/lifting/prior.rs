//! Pairwise limb prior: one joint Gaussian per (limb, parent limb) pair over
//! the concatenated 6-vector `[l_i; l_pa(i)]`, used to predict a missing limb
//! from its resolved parent through the conditional mean.

use std::path::Path;

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::SkeletonModel;

pub const DEFAULT_EPSILON: f64 = 1e-6;
const PRIOR_FORMAT: &str = "depthpose-limb-prior";
const PRIOR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LimbGaussian {
    /// Child limb vector (first 3) then parent limb vector (last 3), meters.
    pub mean: Vector6<f64>,
    pub covariance: Matrix6<f64>,
}

impl LimbGaussian {
    pub fn child_mean(&self) -> Vector3<f64> {
        self.mean.fixed_rows::<3>(0).into()
    }

    pub fn parent_mean(&self) -> Vector3<f64> {
        self.mean.fixed_rows::<3>(3).into()
    }

    /// `mu_c + S_cp S_pp^-1 (parent - mu_p)`.
    pub fn conditional_mean(&self, parent_vector: &Vector3<f64>) -> Result<Vector3<f64>> {
        let s_pp: Matrix3<f64> = self.covariance.fixed_view::<3, 3>(3, 3).into();
        let s_cp: Matrix3<f64> = self.covariance.fixed_view::<3, 3>(0, 3).into();
        let innovation = parent_vector - self.parent_mean();
        let chol = s_pp
            .cholesky()
            .ok_or_else(|| Error::Singular("parent block of limb prior covariance".into()))?;
        let weights = chol.solve(&innovation);
        Ok(self.child_mean() + s_cp * weights)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimbPrior {
    skeleton_checksum: String,
    epsilon: f64,
    /// Indexed by limb; `None` for the root limb.
    limbs: Vec<Option<LimbGaussian>>,
}

/// Child-minus-parent landmark displacement of `limb`.
pub fn limb_vector(model: &SkeletonModel, pose: &[Vector3<f64>], limb: usize) -> Vector3<f64> {
    let l = model.limbs()[limb];
    pose[l.child] - pose[l.parent]
}

impl LimbPrior {
    /// Maximum-likelihood fit over ground-truth poses, with `epsilon * I`
    /// added to every covariance.
    pub fn fit(model: &SkeletonModel, poses: &[Vec<Vector3<f64>>], epsilon: f64) -> Result<Self> {
        if poses.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "fitting a limb prior needs at least 2 poses, got {}",
                poses.len()
            )));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        let j = model.num_landmarks();
        for (i, pose) in poses.iter().enumerate() {
            if pose.len() != j {
                return Err(Error::DimensionMismatch(format!(
                    "training pose {i} has {} landmarks, skeleton has {j}",
                    pose.len()
                )));
            }
            if pose.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
                return Err(Error::NonFinite(format!("training pose {i}")));
            }
        }

        let n = poses.len() as f64;
        let limbs = (0..model.limbs().len())
            .map(|limb| {
                let parent = model.limb_parent(limb)?;
                let samples: Vec<Vector6<f64>> = poses
                    .iter()
                    .map(|pose| {
                        let c = limb_vector(model, pose, limb);
                        let p = limb_vector(model, pose, parent);
                        Vector6::new(c.x, c.y, c.z, p.x, p.y, p.z)
                    })
                    .collect();
                let mean = samples.iter().sum::<Vector6<f64>>() / n;
                let mut covariance = Matrix6::zeros();
                for s in &samples {
                    let d = s - mean;
                    covariance += d * d.transpose();
                }
                covariance /= n;
                covariance = 0.5 * (covariance + covariance.transpose());
                covariance += Matrix6::identity() * epsilon;
                Some(LimbGaussian { mean, covariance })
            })
            .collect();

        Ok(Self {
            skeleton_checksum: model.checksum(),
            epsilon,
            limbs,
        })
    }

    /// Prior from explicit per-limb Gaussians (`None` exactly at the root).
    pub fn from_parts(model: &SkeletonModel, limbs: Vec<Option<LimbGaussian>>, epsilon: f64) -> Result<Self> {
        let prior = Self {
            skeleton_checksum: model.checksum(),
            epsilon,
            limbs,
        };
        prior.validate(model)?;
        Ok(prior)
    }

    pub fn skeleton_checksum(&self) -> &str {
        &self.skeleton_checksum
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn gaussian(&self, limb: usize) -> Option<&LimbGaussian> {
        self.limbs.get(limb).and_then(|g| g.as_ref())
    }

    /// Conditional-mean limb vector of `limb` given its parent's limb vector.
    pub fn recover_landmark(&self, limb: usize, parent_vector: &Vector3<f64>) -> Result<Vector3<f64>> {
        let g = self
            .gaussian(limb)
            .ok_or_else(|| Error::InvalidArgument(format!("limb {limb} has no pairwise prior")))?;
        g.conditional_mean(parent_vector)
    }

    fn validate(&self, model: &SkeletonModel) -> Result<()> {
        if self.limbs.len() != model.limbs().len() {
            return Err(Error::DimensionMismatch(format!(
                "prior has {} limbs, skeleton has {}",
                self.limbs.len(),
                model.limbs().len()
            )));
        }
        for (limb, g) in self.limbs.iter().enumerate() {
            match (model.limb_parent(limb), g) {
                (None, None) => {}
                (Some(_), Some(g)) => {
                    let c = &g.covariance;
                    if !c.iter().chain(g.mean.iter()).all(|v| v.is_finite()) {
                        return Err(Error::NonFinite(format!("prior for limb {limb}")));
                    }
                    if (c - c.transpose()).amax() > 1e-12 * c.amax().max(1.0) {
                        return Err(Error::Schema(format!("covariance of limb {limb} is not symmetric")));
                    }
                    if c.cholesky().is_none() {
                        return Err(Error::Singular(format!(
                            "covariance of limb {limb} is not positive definite"
                        )));
                    }
                }
                (None, Some(_)) => {
                    return Err(Error::Schema(format!("root limb {limb} must not carry a prior")));
                }
                (Some(_), None) => {
                    return Err(Error::Schema(format!("limb {limb} is missing its prior")));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = PriorFile {
            format: PRIOR_FORMAT.into(),
            version: PRIOR_VERSION,
            skeleton_checksum: self.skeleton_checksum.clone(),
            epsilon: self.epsilon,
            limbs: self
                .limbs
                .iter()
                .enumerate()
                .filter_map(|(limb, g)| {
                    g.as_ref().map(|g| PriorEntry {
                        limb,
                        mean: g.mean.iter().copied().collect(),
                        // nalgebra is column-major; the file is row-major.
                        covariance: g.covariance.transpose().iter().copied().collect(),
                    })
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("prior serializes")
    }

    /// Parses a prior and checks it was fitted for `model`.
    pub fn from_json(text: &str, model: &SkeletonModel) -> Result<Self> {
        let file: PriorFile = serde_json::from_str(text).map_err(|e| Error::Schema(format!("prior file: {e}")))?;
        if file.format != PRIOR_FORMAT {
            return Err(Error::Schema(format!(
                "not a limb prior file (format '{}')",
                file.format
            )));
        }
        if file.version != PRIOR_VERSION {
            return Err(Error::Version {
                found: file.version,
                expected: PRIOR_VERSION,
            });
        }
        if file.skeleton_checksum != model.checksum() {
            return Err(Error::Checksum("prior was fitted for a different skeleton".into()));
        }
        let mut limbs = vec![None; model.limbs().len()];
        for e in file.limbs {
            if e.limb >= limbs.len() || e.mean.len() != 6 || e.covariance.len() != 36 {
                return Err(Error::Schema(format!("malformed prior entry for limb {}", e.limb)));
            }
            limbs[e.limb] = Some(LimbGaussian {
                mean: Vector6::from_column_slice(&e.mean),
                covariance: Matrix6::from_row_slice(&e.covariance),
            });
        }
        let prior = Self {
            skeleton_checksum: file.skeleton_checksum,
            epsilon: file.epsilon,
            limbs,
        };
        prior.validate(model)?;
        Ok(prior)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, model: &SkeletonModel) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, model)
    }
}

#[derive(Serialize, Deserialize)]
struct PriorFile {
    format: String,
    version: u32,
    skeleton_checksum: String,
    epsilon: f64,
    limbs: Vec<PriorEntry>,
}

#[derive(Serialize, Deserialize)]
struct PriorEntry {
    limb: usize,
    mean: Vec<f64>,
    covariance: Vec<f64>,
}
