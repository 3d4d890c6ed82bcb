//! Residual pose regressor.
//!
//! The network sees the standardized lifted pose and predicts a residual in
//! standardized target units. The lifted pose itself, standardized with the
//! target statistics, is added back through an identity shortcut before
//! denormalization, so the output is `lifted + std_y * f(lifted)`: a zero
//! residual reproduces the lifted pose. With the confidence channel enabled
//! the input is `J x 4` and the shortcut drops the confidence column.

mod io;
mod network;

pub use io::{MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use network::{ResidualNet, Stage};

use std::time::Instant;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifting::LiftedPose;
use crate::nn::{smooth_l1, AdamState, Differentiable, Mode, Param, Tensor, SMOOTH_L1_BETA};
use crate::skeleton::SkeletonModel;

const STD_FLOOR: f64 = 1e-8;
const INFERENCE_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressorConfig {
    pub num_landmarks: usize,
    /// Width of every inner layer.
    pub features: usize,
    /// Number of residual blocks.
    pub blocks: usize,
    pub dropout_rate: f64,
    /// Feed the detection confidence as a fourth input channel per landmark.
    pub use_confidence: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// The learning rate halves every this many epochs.
    pub lr_halving_period: usize,
    pub seed: u64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            num_landmarks: 15,
            features: 1024,
            blocks: 3,
            dropout_rate: 0.5,
            use_confidence: false,
            epochs: 200,
            batch_size: 128,
            learning_rate: 1e-3,
            lr_halving_period: 20,
            seed: 0,
        }
    }
}

impl RegressorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.num_landmarks == 0 || self.features == 0 {
            return bad("landmark count and feature width must be positive".into());
        }
        if self.blocks == 0 {
            return bad("need at least one residual block".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2 for batch normalization".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || self.lr_halving_period == 0 {
            return bad("learning rate and halving period must be positive".into());
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        if self.use_confidence {
            4
        } else {
            3
        }
    }

    pub fn input_width(&self) -> usize {
        self.num_landmarks * self.channels()
    }

    pub fn output_width(&self) -> usize {
        self.num_landmarks * 3
    }

    /// `lr0 * 2^-floor(epoch / period)`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * 0.5f64.powi((epoch / self.lr_halving_period) as i32)
    }
}

/// Per-coordinate standardization of lifted inputs and ground-truth targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

fn mean_std(rows: &[Vec<Vector3<f64>>], width: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; width];
    for r in rows {
        for (j, p) in r.iter().enumerate() {
            for k in 0..3 {
                mean[j * 3 + k] += p[k];
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; width];
    for r in rows {
        for (j, p) in r.iter().enumerate() {
            for k in 0..3 {
                var[j * 3 + k] += (p[k] - mean[j * 3 + k]).powi(2);
            }
        }
    }
    let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
    (mean, std)
}

impl NormalizationStats {
    pub fn compute(inputs: &[Vec<Vector3<f64>>], targets: &[Vec<Vector3<f64>>]) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::InvalidArgument(
                "normalization needs matching, non-empty inputs and targets".into(),
            ));
        }
        let width = inputs[0].len() * 3;
        let (input_mean, input_std) = mean_std(inputs, width);
        let (target_mean, target_std) = mean_std(targets, width);
        Ok(Self {
            input_mean,
            input_std,
            target_mean,
            target_std,
        })
    }

    pub fn identity(num_landmarks: usize) -> Self {
        let w = num_landmarks * 3;
        Self {
            input_mean: vec![0.0; w],
            input_std: vec![1.0; w],
            target_mean: vec![0.0; w],
            target_std: vec![1.0; w],
        }
    }

    pub fn normalize_target(&self, pose: &[Vector3<f64>]) -> Vec<f64> {
        (0..pose.len() * 3)
            .map(|i| (pose[i / 3][i % 3] - self.target_mean[i]) / self.target_std[i])
            .collect()
    }

    pub fn denormalize_target(&self, normalized: &[f64]) -> Vec<Vector3<f64>> {
        normalized
            .chunks_exact(3)
            .enumerate()
            .map(|(j, c)| Vector3::from_fn(|k, _| c[k] * self.target_std[j * 3 + k] + self.target_mean[j * 3 + k]))
            .collect()
    }

    fn validate(&self, width: usize) -> Result<()> {
        let all = [&self.input_mean, &self.input_std, &self.target_mean, &self.target_std];
        if all.iter().any(|v| v.len() != width) {
            return Err(Error::DimensionMismatch(format!(
                "normalization statistics must have {width} entries"
            )));
        }
        if all.iter().any(|v| v.iter().any(|x| !x.is_finite()))
            || self.input_std.iter().chain(&self.target_std).any(|&s| s <= 0.0)
        {
            return Err(Error::InvalidArgument(
                "normalization statistics must be finite with positive std".into(),
            ));
        }
        Ok(())
    }
}

/// A lifted pose and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub lifted: LiftedPose,
    pub target: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub parameter_count: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub epochs: Vec<EpochRecord>,
    pub seconds: f64,
}

impl TrainingReport {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

#[derive(Debug, Clone)]
pub struct ResidualRegressor {
    config: RegressorConfig,
    stats: NormalizationStats,
    skeleton_checksum: String,
    pub net: ResidualNet,
}

impl ResidualRegressor {
    /// Freshly initialized (untrained) regressor.
    pub fn new(config: RegressorConfig, skeleton: &SkeletonModel, stats: NormalizationStats) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::init(config, skeleton.checksum(), skeleton.num_landmarks(), stats, &mut rng)
    }

    fn init(
        config: RegressorConfig,
        skeleton_checksum: String,
        num_landmarks: usize,
        stats: NormalizationStats,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        if config.num_landmarks != num_landmarks {
            return Err(Error::DimensionMismatch(format!(
                "config has {} landmarks, skeleton has {num_landmarks}",
                config.num_landmarks
            )));
        }
        stats.validate(config.output_width())?;
        let net = ResidualNet::init(
            config.input_width(),
            config.features,
            config.blocks,
            config.output_width(),
            config.dropout_rate,
            rng,
        )?;
        Ok(Self {
            config,
            stats,
            skeleton_checksum,
            net,
        })
    }

    pub fn config(&self) -> &RegressorConfig {
        &self.config
    }

    pub fn stats(&self) -> &NormalizationStats {
        &self.stats
    }

    pub fn skeleton_checksum(&self) -> &str {
        &self.skeleton_checksum
    }

    pub fn parameter_count(&self) -> usize {
        self.net.parameter_count()
    }

    /// Zeroes the output layer, making the regressor the identity on the
    /// lifted xyz coordinates.
    pub fn zero_output_layer(&mut self) {
        self.net.output.weight.value.fill(0.0);
        self.net.output.bias.value.fill(0.0);
    }

    /// Disables dropout in every stage (gradient checking).
    pub fn disable_dropout(&mut self) {
        self.config.dropout_rate = 0.0;
        for s in std::iter::once(&mut self.net.input).chain(self.net.blocks.iter_mut()) {
            s.set_dropout(0.0).expect("zero rate is valid");
        }
    }

    fn check_pose(&self, pose: &LiftedPose) -> Result<()> {
        if pose.len() != self.config.num_landmarks {
            return Err(Error::DimensionMismatch(format!(
                "pose has {} landmarks, model expects {}",
                pose.len(),
                self.config.num_landmarks
            )));
        }
        if pose
            .landmarks
            .iter()
            .any(|l| !l.position.iter().all(|c| c.is_finite()) || !l.confidence.is_finite())
        {
            return Err(Error::NonFinite("lifted pose".into()));
        }
        Ok(())
    }

    /// Standardized network input for a batch of lifted poses.
    pub fn encode_inputs(&self, poses: &[&LiftedPose]) -> Result<Tensor> {
        let c = self.config.channels();
        let mut data = Vec::with_capacity(poses.len() * self.config.input_width());
        for pose in poses {
            self.check_pose(pose)?;
            for (j, l) in pose.landmarks.iter().enumerate() {
                for k in 0..3 {
                    data.push((l.position[k] - self.stats.input_mean[j * 3 + k]) / self.stats.input_std[j * 3 + k]);
                }
                if c == 4 {
                    data.push(l.confidence);
                }
            }
        }
        Tensor::matrix(poses.len(), self.config.input_width(), data)
    }

    /// Lifted xyz in standardized target units: the identity shortcut.
    pub fn encode_shortcut(&self, poses: &[&LiftedPose]) -> Tensor {
        let mut data = Vec::with_capacity(poses.len() * self.config.output_width());
        for pose in poses {
            data.extend(self.stats.normalize_target(&pose.positions()));
        }
        Tensor::matrix(poses.len(), self.config.output_width(), data).expect("sized")
    }

    /// Shortcut recovered from standardized inputs, for callers that only
    /// hold the encoded tensor.
    fn shortcut_from_inputs(&self, inputs: &Tensor) -> Tensor {
        let c = self.config.channels();
        let w = self.config.output_width();
        let mut out = Tensor::zeros(&[inputs.rows(), w]);
        for r in 0..inputs.rows() {
            let row = inputs.row(r);
            for (i, o) in out.row_mut(r).iter_mut().enumerate() {
                let (j, k) = (i / 3, i % 3);
                let raw = row[j * c + k] * self.stats.input_std[i] + self.stats.input_mean[i];
                *o = (raw - self.stats.target_mean[i]) / self.stats.target_std[i];
            }
        }
        out
    }

    fn decode(&self, normalized: &Tensor) -> Vec<Vec<Vector3<f64>>> {
        (0..normalized.rows())
            .map(|r| self.stats.denormalize_target(normalized.row(r)))
            .collect()
    }

    /// Refined poses in meters. Uses running statistics and no dropout.
    pub fn predict(&self, poses: &[LiftedPose]) -> Result<Vec<Vec<Vector3<f64>>>> {
        let mut out = Vec::with_capacity(poses.len());
        for chunk in poses.chunks(INFERENCE_CHUNK) {
            let refs: Vec<&LiftedPose> = chunk.iter().collect();
            let x = self.encode_inputs(&refs)?;
            let mut y = self.net.apply(&x)?;
            y.add_assign(&self.encode_shortcut(&refs));
            out.extend(self.decode(&y));
        }
        Ok(out)
    }

    pub fn predict_one(&self, pose: &LiftedPose) -> Result<Vec<Vector3<f64>>> {
        Ok(self.predict(std::slice::from_ref(pose))?.remove(0))
    }

    /// Forward pass in the given mode. Training mode uses batch statistics,
    /// updates running statistics and samples dropout from `rng`.
    pub fn forward(
        &mut self,
        poses: &[LiftedPose],
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<Vector3<f64>>>> {
        let refs: Vec<&LiftedPose> = poses.iter().collect();
        let x = self.encode_inputs(&refs)?;
        let mut y = self.net.forward(&x, mode, rng)?;
        y.add_assign(&self.encode_shortcut(&refs));
        Ok(self.decode(&y))
    }

    /// Trains a regressor. Statistics come from `train`; `val` is only
    /// scored. The run is a deterministic function of the config seed.
    pub fn fit(
        config: &RegressorConfig,
        skeleton: &SkeletonModel,
        train: &[TrainingPair],
        val: Option<&[TrainingPair]>,
    ) -> Result<(Self, TrainingReport)> {
        Self::fit_with_progress(config, skeleton, train, val, |_| {})
    }

    pub fn fit_with_progress(
        config: &RegressorConfig,
        skeleton: &SkeletonModel,
        train: &[TrainingPair],
        val: Option<&[TrainingPair]>,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<(Self, TrainingReport)> {
        let started = Instant::now();
        if train.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        config.validate()?;
        let j = skeleton.num_landmarks();
        for (i, pair) in train.iter().chain(val.unwrap_or_default()).enumerate() {
            if pair.target.len() != j || pair.lifted.len() != j {
                return Err(Error::DimensionMismatch(format!(
                    "training sample {i} does not have {j} landmarks"
                )));
            }
            if pair.target.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
                return Err(Error::NonFinite(format!("ground truth of training sample {i}")));
            }
        }

        let inputs: Vec<_> = train.iter().map(|p| p.lifted.positions()).collect();
        let targets: Vec<_> = train.iter().map(|p| p.target.clone()).collect();
        let stats = NormalizationStats::compute(&inputs, &targets)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut model = Self::init(config.clone(), skeleton.checksum(), j, stats, &mut rng)?;

        let refs: Vec<&LiftedPose> = train.iter().map(|p| &p.lifted).collect();
        let x_all = model.encode_inputs(&refs)?;
        let s_all = model.encode_shortcut(&refs);
        let t_all = Tensor::matrix(
            train.len(),
            config.output_width(),
            targets.iter().flat_map(|t| model.stats.normalize_target(t)).collect(),
        )?;
        let val_tensors = match val {
            Some(v) if !v.is_empty() => Some(model.encode_pairs(v)?),
            _ => None,
        };

        let mut adam = AdamState::default();
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut report = TrainingReport {
            parameter_count: model.parameter_count(),
            train_samples: train.len(),
            val_samples: val.map_or(0, |v| v.len()),
            epochs: Vec::with_capacity(config.epochs),
            seconds: 0.0,
        };
        for epoch in 0..config.epochs {
            let lr = config.learning_rate_at(epoch);
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in minibatches(&order, config.batch_size) {
                let x = x_all.select_rows(batch);
                let t = t_all.select_rows(batch);
                let mut y = model.net.forward(&x, Mode::Train, &mut rng)?;
                y.add_assign(&s_all.select_rows(batch));
                let (loss, grad) = smooth_l1(&y, &t, SMOOTH_L1_BETA)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("training loss at epoch {epoch} (lr {lr:e})")));
                }
                model.net.zero_grad();
                model.net.backward(&grad)?;
                adam.step(&mut model.net.params_mut(), lr).map_err(|e| match e {
                    Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {epoch}")),
                    other => other,
                })?;
                total += loss * batch.len() as f64;
            }
            let val_loss = match &val_tensors {
                Some((x, s, t)) => Some(model.eval_loss(x, s, t)?),
                None => None,
            };
            let record = EpochRecord {
                epoch,
                learning_rate: lr,
                train_loss: total / train.len() as f64,
                val_loss,
            };
            log::debug!(
                "epoch {epoch}: lr {lr:e} train {:.6e} val {:?}",
                record.train_loss,
                record.val_loss
            );
            on_epoch(&record);
            report.epochs.push(record);
        }
        report.seconds = started.elapsed().as_secs_f64();
        Ok((model, report))
    }

    fn encode_pairs(&self, pairs: &[TrainingPair]) -> Result<(Tensor, Tensor, Tensor)> {
        let refs: Vec<&LiftedPose> = pairs.iter().map(|p| &p.lifted).collect();
        let t = Tensor::matrix(
            pairs.len(),
            self.config.output_width(),
            pairs
                .iter()
                .flat_map(|p| self.stats.normalize_target(&p.target))
                .collect(),
        )?;
        Ok((self.encode_inputs(&refs)?, self.encode_shortcut(&refs), t))
    }

    fn eval_loss(&self, x: &Tensor, shortcut: &Tensor, target: &Tensor) -> Result<f64> {
        let mut y = self.net.apply(x)?;
        y.add_assign(shortcut);
        Ok(smooth_l1(&y, target, SMOOTH_L1_BETA)?.0)
    }

    /// Smooth-L1 loss of the current model on `pairs`, in inference mode.
    pub fn loss_on(&self, pairs: &[TrainingPair]) -> Result<f64> {
        let (x, s, t) = self.encode_pairs(pairs)?;
        self.eval_loss(&x, &s, &t)
    }
}

/// Consecutive batches over `order`; a trailing batch of one sample is merged
/// into the previous one since batch normalization needs two rows.
fn minibatches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

impl Differentiable for ResidualRegressor {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }

    /// `input` holds standardized features and `target` standardized poses.
    fn loss(&mut self, input: &Tensor, target: &Tensor, backward: bool) -> Result<f64> {
        // Dropout is off here, so the rng is never drawn from.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut y = self.net.forward(input, Mode::Train, &mut rng)?;
        y.add_assign(&self.shortcut_from_inputs(input));
        let (loss, grad) = smooth_l1(&y, target, SMOOTH_L1_BETA)?;
        if backward {
            self.net.zero_grad();
            self.net.backward(&grad)?;
        }
        Ok(loss)
    }

    fn dropout_active(&self) -> bool {
        self.config.dropout_rate > 0.0
    }
}
