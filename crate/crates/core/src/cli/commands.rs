use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Command, RunConfig, RunManifest};
use crate::data::{generate_synthetic, read_dataset, write_dataset, SampleRecord};
use crate::error::{Error, Result};
use crate::lifting::{LiftedPose, LimbPrior, Provenance};
use crate::metrics::{pck_curve, EvalPair, EvaluationReport, MethodReport};
use crate::nn::{grad_check, GradCheckOptions, LinearStack, Tensor};
use crate::regressor::{NormalizationStats, ResidualRegressor, TrainingPair, TrainingReport};
use crate::skeleton::SkeletonModel;

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    /// `ok` or `unprocessable`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lifted: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Vec<Provenance>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn rows(points: &[Vector3<f64>]) -> Vec<[f64; 3]> {
    points.iter().map(|p| [p.x, p.y, p.z]).collect()
}

pub(super) fn dispatch(
    command: &Command,
    config: &mut RunConfig,
    skeleton: &SkeletonModel,
    manifest: &mut RunManifest,
) -> Result<()> {
    let out = &command.common().out;
    match command {
        Command::FitPrior { train, epsilon, .. } => {
            if let Some(e) = epsilon {
                config.prior.epsilon = *e;
            }
            fit_prior(config, skeleton, train, out, manifest)
        }
        Command::Train {
            train,
            val,
            prior,
            epochs,
            features,
            blocks,
            batch_size,
            learning_rate,
            dropout,
            use_confidence,
            max_unprocessable,
            ..
        } => {
            let r = &mut config.regressor;
            r.num_landmarks = skeleton.num_landmarks();
            r.epochs = epochs.unwrap_or(r.epochs);
            r.features = features.unwrap_or(r.features);
            r.blocks = blocks.unwrap_or(r.blocks);
            r.batch_size = batch_size.unwrap_or(r.batch_size);
            r.learning_rate = learning_rate.unwrap_or(r.learning_rate);
            r.dropout_rate = dropout.unwrap_or(r.dropout_rate);
            r.use_confidence |= *use_confidence;
            if let Some(m) = max_unprocessable {
                config.train.max_unprocessable_fraction = *m;
            }
            train_cmd(config, skeleton, train, val.as_deref(), prior, out, manifest)
        }
        Command::Predict { data, prior, model, .. } => predict(config, skeleton, data, prior, model, out, manifest),
        Command::Evaluate {
            data,
            prior,
            model,
            predictions,
            threshold,
            ..
        } => {
            if let Some(t) = threshold {
                config.evaluate.ap_threshold = *t;
            }
            evaluate(
                config,
                skeleton,
                data,
                prior.as_deref(),
                model.as_deref(),
                predictions.as_deref(),
                out,
                manifest,
            )
        }
        Command::Synth {
            samples,
            offset,
            noise,
            dropout,
            ..
        } => {
            let s = &mut config.synth;
            s.num_samples = samples.unwrap_or(s.num_samples);
            s.surface_offset = offset.unwrap_or(s.surface_offset);
            s.depth_noise = noise.unwrap_or(s.depth_noise);
            s.dropout = dropout.unwrap_or(s.dropout);
            synth(config, skeleton, out, manifest)
        }
        Command::Gradcheck {
            features,
            blocks,
            batch,
            use_confidence,
            corrupt_gradient,
            ..
        } => {
            let r = &mut config.regressor;
            r.num_landmarks = skeleton.num_landmarks();
            r.features = features.unwrap_or(r.features);
            r.blocks = blocks.unwrap_or(r.blocks);
            r.use_confidence |= *use_confidence;
            r.dropout_rate = 0.0;
            if let Some(b) = batch {
                config.gradcheck.batch = *b;
            }
            gradcheck(config, skeleton, *corrupt_gradient, out, manifest)
        }
    }
}

fn read(
    path: &Path,
    skeleton: &SkeletonModel,
    config: &RunConfig,
    manifest: &mut RunManifest,
    name: &str,
) -> Result<Vec<SampleRecord>> {
    manifest.input(name, path);
    read_dataset(path, skeleton, config.train.strict)
}

fn fit_prior(
    config: &RunConfig,
    skeleton: &SkeletonModel,
    train: &Path,
    out: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    let records = read(train, skeleton, config, manifest, "train")?;
    let poses: Vec<Vec<Vector3<f64>>> = records.iter().filter_map(|r| r.complete_ground_truth()).collect();
    if poses.len() < records.len() {
        log::warn!(
            "{} samples with incomplete ground truth skipped",
            records.len() - poses.len()
        );
    }
    let prior = manifest.time("fit", || LimbPrior::fit(skeleton, &poses, config.prior.epsilon))?;
    let path = out.join("prior.json");
    prior.save(&path)?;
    println!("fitted limb prior on {} poses -> {}", poses.len(), path.display());
    manifest.counter("poses", poses.len() as f64);
    manifest.output(path);
    Ok(())
}

/// Lifted poses paired with their records; unprocessable samples are
/// logged and left out.
struct Lifted<'a> {
    pairs: Vec<(&'a SampleRecord, LiftedPose)>,
    unprocessable: Vec<(&'a SampleRecord, String)>,
}

fn lift_all<'a>(
    records: &'a [SampleRecord],
    skeleton: &SkeletonModel,
    prior: &LimbPrior,
    config: &RunConfig,
    manifest: &mut RunManifest,
    phase: &str,
) -> Result<Lifted<'a>> {
    let t = Instant::now();
    let mut lifted = Lifted {
        pairs: Vec::with_capacity(records.len()),
        unprocessable: Vec::new(),
    };
    for r in records {
        match r.lift(skeleton, prior, &config.lift) {
            Ok(pose) => lifted.pairs.push((r, pose)),
            Err(Error::Unprocessable(why)) => {
                log::warn!("sample '{}' is unprocessable: {why}", r.id);
                lifted.unprocessable.push((r, why));
            }
            Err(e) => return Err(e),
        }
    }
    let secs = t.elapsed().as_secs_f64();
    manifest.timings.insert(format!("{phase}_lift"), secs);
    manifest.throughput(&format!("{phase}_lift"), records.len(), secs);
    manifest.counter(&format!("{phase}_unprocessable"), lifted.unprocessable.len() as f64);
    Ok(lifted)
}

fn training_pairs(lifted: &Lifted, what: &str, max_fraction: f64) -> Result<Vec<TrainingPair>> {
    let total = lifted.pairs.len() + lifted.unprocessable.len();
    let frac = lifted.unprocessable.len() as f64 / total.max(1) as f64;
    if frac > max_fraction {
        return Err(Error::Unprocessable(format!(
            "{} of {total} {what} samples cannot be lifted ({:.1}% > {:.1}% allowed)",
            lifted.unprocessable.len(),
            frac * 100.0,
            max_fraction * 100.0
        )));
    }
    let pairs: Vec<TrainingPair> = lifted
        .pairs
        .iter()
        .filter_map(|(r, pose)| {
            Some(TrainingPair {
                lifted: pose.clone(),
                target: r.complete_ground_truth()?,
            })
        })
        .collect();
    if pairs.len() < lifted.pairs.len() {
        log::warn!(
            "{} {what} samples with incomplete ground truth skipped",
            lifted.pairs.len() - pairs.len()
        );
    }
    Ok(pairs)
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    #[serde(flatten)]
    report: &'a TrainingReport,
    train_unprocessable: usize,
    val_unprocessable: usize,
}

fn train_cmd(
    config: &RunConfig,
    skeleton: &SkeletonModel,
    train: &Path,
    val: Option<&Path>,
    prior_path: &Path,
    out: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    manifest.input("prior", prior_path);
    let prior = LimbPrior::load(prior_path, skeleton)?;
    let train_records = read(train, skeleton, config, manifest, "train")?;
    let val_records = match val {
        Some(v) => read(v, skeleton, config, manifest, "val")?,
        None => Vec::new(),
    };
    let max_frac = config.train.max_unprocessable_fraction;
    let train_lifted = lift_all(&train_records, skeleton, &prior, config, manifest, "train")?;
    let train_pairs = training_pairs(&train_lifted, "training", max_frac)?;
    let val_lifted = lift_all(&val_records, skeleton, &prior, config, manifest, "val")?;
    let val_pairs = training_pairs(&val_lifted, "validation", max_frac)?;

    let t = Instant::now();
    let val_arg = (!val_pairs.is_empty()).then_some(val_pairs.as_slice());
    let (model, report) =
        ResidualRegressor::fit_with_progress(&config.regressor, skeleton, &train_pairs, val_arg, |e| {
            log::info!(
                "epoch {:>3}  lr {:.2e}  train {:.6e}  val {}",
                e.epoch,
                e.learning_rate,
                e.train_loss,
                e.val_loss.map_or("-".into(), |v| format!("{v:.6e}"))
            );
        })?;
    manifest.timings.insert("fit".into(), t.elapsed().as_secs_f64());
    println!("parameters: {}", model.parameter_count());
    manifest.counter("parameter_count", model.parameter_count() as f64);
    if let Some(loss) = report.final_train_loss() {
        println!("final training loss: {loss:.6e}");
        manifest.counter("final_train_loss", loss);
    }

    let probe: Vec<LiftedPose> = train_pairs.iter().take(2048).map(|p| p.lifted.clone()).collect();
    let t = Instant::now();
    model.predict(&probe)?;
    manifest.throughput("forward", probe.len(), t.elapsed().as_secs_f64());

    let model_path = out.join("model.bin");
    model.save(&model_path)?;
    let report_path = out.join("training_report.json");
    let text = serde_json::to_string_pretty(&TrainOutput {
        report: &report,
        train_unprocessable: train_lifted.unprocessable.len(),
        val_unprocessable: val_lifted.unprocessable.len(),
    })
    .expect("report serializes");
    std::fs::write(&report_path, text).map_err(|e| Error::io(&report_path, e))?;
    manifest.output(model_path);
    manifest.output(report_path);
    Ok(())
}

fn predict(
    config: &RunConfig,
    skeleton: &SkeletonModel,
    data: &Path,
    prior_path: &Path,
    model_path: &Path,
    out: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    manifest.input("prior", prior_path);
    manifest.input("model", model_path);
    let prior = LimbPrior::load(prior_path, skeleton)?;
    let model = ResidualRegressor::load_for(model_path, skeleton)?;
    let records = read(data, skeleton, config, manifest, "data")?;
    let lifted = lift_all(&records, skeleton, &prior, config, manifest, "data")?;
    let poses: Vec<LiftedPose> = lifted.pairs.iter().map(|(_, p)| p.clone()).collect();
    let t = Instant::now();
    let refined = model.predict(&poses)?;
    manifest.throughput("forward", poses.len(), t.elapsed().as_secs_f64());

    let mut ok = lifted.pairs.iter().zip(refined).peekable();
    let mut bad = lifted.unprocessable.iter().peekable();
    let path = out.join("predictions.jsonl");
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for r in &records {
        let line = if ok.peek().is_some_and(|((rec, _), _)| std::ptr::eq(*rec, r)) {
            let ((_, pose), refined) = ok.next().unwrap();
            PredictionRecord {
                id: r.id.clone(),
                status: "ok".into(),
                pose: Some(rows(&refined)),
                lifted: Some(rows(&pose.positions())),
                provenance: Some(pose.landmarks.iter().map(|l| l.provenance).collect()),
                error: None,
            }
        } else {
            let (_, why) = bad.next().expect("every record is lifted or unprocessable");
            PredictionRecord {
                id: r.id.clone(),
                status: "unprocessable".into(),
                pose: None,
                lifted: None,
                provenance: None,
                error: Some(why.clone()),
            }
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| Error::io(&path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    println!(
        "{} predictions ({} unprocessable) -> {}",
        records.len(),
        lifted.unprocessable.len(),
        path.display()
    );
    manifest.output(path);
    Ok(())
}

pub(super) fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Schema(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    config: &RunConfig,
    skeleton: &SkeletonModel,
    data: &Path,
    prior_path: Option<&Path>,
    model_path: Option<&Path>,
    predictions_path: Option<&Path>,
    out: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    let records = read(data, skeleton, config, manifest, "data")?;
    if records.is_empty() {
        return Err(Error::InvalidArgument(format!("test set {} is empty", data.display())));
    }
    if prior_path.is_none() && predictions_path.is_none() {
        return Err(Error::InvalidArgument(
            "evaluate needs --prior (to lift samples) or --predictions".into(),
        ));
    }
    if model_path.is_some() && prior_path.is_none() {
        return Err(Error::InvalidArgument("evaluating a model needs --prior".into()));
    }
    let threshold = config.evaluate.ap_threshold;
    let mut methods = Vec::new();

    if let Some(prior_path) = prior_path {
        manifest.input("prior", prior_path);
        let prior = LimbPrior::load(prior_path, skeleton)?;
        let lifted = lift_all(&records, skeleton, &prior, config, manifest, "data")?;
        if lifted.pairs.is_empty() {
            return Err(Error::Unprocessable("no test sample could be lifted".into()));
        }
        let baseline: Vec<EvalPair> = lifted.pairs.iter().map(|(r, p)| r.eval_pair(p.positions())).collect();
        methods.push(MethodReport::compute("lifted", skeleton, &baseline, threshold)?);
        if let Some(model_path) = model_path {
            manifest.input("model", model_path);
            let model = ResidualRegressor::load_for(model_path, skeleton)?;
            let poses: Vec<LiftedPose> = lifted.pairs.iter().map(|(_, p)| p.clone()).collect();
            let t = Instant::now();
            let refined = model.predict(&poses)?;
            manifest.throughput("forward", poses.len(), t.elapsed().as_secs_f64());
            let pairs: Vec<EvalPair> = lifted
                .pairs
                .iter()
                .zip(refined)
                .map(|((r, _), p)| r.eval_pair(p))
                .collect();
            methods.push(MethodReport::compute("refined", skeleton, &pairs, threshold)?);
        }
    }

    if let Some(path) = predictions_path {
        manifest.input("predictions", path);
        let preds = read_predictions(path)?;
        if preds.len() != records.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} predictions for {} samples",
                preds.len(),
                records.len()
            )));
        }
        let mut pairs = Vec::new();
        for (r, p) in records.iter().zip(&preds) {
            if p.id != r.id {
                return Err(Error::Schema(format!(
                    "prediction '{}' does not match sample '{}'",
                    p.id, r.id
                )));
            }
            if let Some(pose) = &p.pose {
                if pose.len() != skeleton.num_landmarks() {
                    return Err(Error::DimensionMismatch(format!(
                        "prediction '{}' has {} joints",
                        p.id,
                        pose.len()
                    )));
                }
                pairs.push(r.eval_pair(pose.iter().map(|&q| Vector3::from(q)).collect()));
            }
        }
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("predictions file holds no poses".into()));
        }
        methods.push(MethodReport::compute("predictions", skeleton, &pairs, threshold)?);
    }

    let pck_pairs: Vec<_> = records.iter().filter_map(|r| r.pck_pair()).collect();
    let pck = if pck_pairs.is_empty() {
        None
    } else {
        Some(pck_curve(&pck_pairs, &config.evaluate.radius_fractions)?)
    };
    let report = EvaluationReport { methods, pck };
    for m in &report.methods {
        println!(
            "{:<12} mAP@{:.0}cm {:6.2}%   mMPJPE {:6.2} cm   ({} samples)",
            m.method,
            threshold * 100.0,
            m.map * 100.0,
            m.mmpjpe_cm,
            m.num_pairs
        );
        manifest.counter(&format!("{}_map", m.method), m.map);
        manifest.counter(&format!("{}_mmpjpe_cm", m.method), m.mmpjpe_cm);
    }
    if let Some(c) = &report.pck {
        println!(
            "2D PCK: mean precision {:.3}, mean recall {:.3}, max F {:.3}",
            c.mean_precision, c.mean_recall, c.max_f_score
        );
    }
    for path in report.write(out)? {
        manifest.output(path);
    }
    Ok(())
}

fn synth(config: &RunConfig, skeleton: &SkeletonModel, out: &Path, manifest: &mut RunManifest) -> Result<()> {
    let t = Instant::now();
    let records = generate_synthetic(&config.synth, skeleton)?;
    manifest.throughput("synth", records.len(), t.elapsed().as_secs_f64());
    let path: PathBuf = out.join("dataset.jsonl");
    write_dataset(&path, &records)?;
    println!("{} samples -> {}", records.len(), path.display());
    manifest.output(path);
    Ok(())
}

#[derive(Serialize)]
struct GradCheckOutput {
    full: crate::nn::GradCheckReport,
    linear: crate::nn::GradCheckReport,
    tolerance: f64,
    linear_tolerance: f64,
    seconds: f64,
    passed: bool,
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Result<Tensor> {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
}

/// Checks the full regressor (dropout off) and its linear layers stacked
/// without normalization or activations.
fn gradcheck(
    config: &RunConfig,
    skeleton: &SkeletonModel,
    corrupt_gradient: bool,
    out: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    let gc = &config.gradcheck;
    let rc = &config.regressor;
    if gc.batch < 2 {
        return Err(Error::InvalidArgument(
            "gradient check batch needs at least 2 rows".into(),
        ));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(gc.seed);
    let mut model = ResidualRegressor::new(
        rc.clone(),
        skeleton,
        NormalizationStats::identity(skeleton.num_landmarks()),
    )?;
    model.disable_dropout();
    let x = random_matrix(&mut rng, gc.batch, rc.input_width())?;
    let t = random_matrix(&mut rng, gc.batch, rc.output_width())?;
    let opts = GradCheckOptions {
        seed: gc.seed,
        corrupt_gradient,
        ..GradCheckOptions::default()
    };
    let full = manifest.time("full", || grad_check(&mut model, &x, &t, &opts))?;

    let mut widths = vec![rc.input_width()];
    widths.extend(std::iter::repeat_n(rc.features, rc.blocks + 1));
    widths.push(rc.output_width());
    let mut linear = LinearStack::init(&widths, &mut rng);
    let linear_report = manifest.time("linear", || grad_check(&mut linear, &x, &t, &opts))?;
    let seconds = started.elapsed().as_secs_f64();

    let passed = full.max_rel_error < gc.tolerance && linear_report.max_rel_error < gc.linear_tolerance;
    println!(
        "full network   (F={}, R={}, {} checks): max relative error {:.3e} (tolerance {:.0e})",
        rc.features, rc.blocks, full.checks, full.max_rel_error, gc.tolerance
    );
    println!(
        "linear-only    ({} checks): max relative error {:.3e} (tolerance {:.0e})",
        linear_report.checks, linear_report.max_rel_error, gc.linear_tolerance
    );
    println!("{} in {seconds:.1} s", if passed { "PASS" } else { "FAIL" });
    manifest.counter("max_rel_error", full.max_rel_error);
    manifest.counter("linear_max_rel_error", linear_report.max_rel_error);

    let path = out.join("gradcheck.json");
    let result = GradCheckOutput {
        full: full.clone(),
        linear: linear_report.clone(),
        tolerance: gc.tolerance,
        linear_tolerance: gc.linear_tolerance,
        seconds,
        passed,
    };
    std::fs::write(&path, serde_json::to_string_pretty(&result).expect("serializes"))
        .map_err(|e| Error::io(&path, e))?;
    manifest.output(path);
    if !passed {
        let (err, tol) = if full.max_rel_error >= gc.tolerance {
            (full.max_rel_error, gc.tolerance)
        } else {
            (linear_report.max_rel_error, gc.linear_tolerance)
        };
        return Err(Error::GradCheck {
            max_rel_error: err,
            tolerance: tol,
        });
    }
    Ok(())
}
