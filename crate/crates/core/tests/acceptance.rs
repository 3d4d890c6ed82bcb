//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Criteria that run the tool go through the binary
//! so the recorded manifests carry the exact configuration.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use depthpose::lifting::{
    lift_point, CameraIntrinsics, LiftedLandmark, LiftedPose, LimbGaussian, LimbPrior, Provenance,
};
use depthpose::metrics::{ap_at_threshold, mpjpe, pck_curve, EvalPair, Pck2DPair};
use depthpose::regressor::{NormalizationStats, RegressorConfig, ResidualRegressor};
use depthpose::SkeletonModel;
use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

type Outcome = Result<(bool, String), String>;

fn run(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_depthpose"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{args:?}: exit {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> Result<Value, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| e.to_string())
}

fn num(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

fn criterion_1(work: &Path) -> Outcome {
    let out = work.join("gradcheck");
    let t = Instant::now();
    run(&["gradcheck", "--out", s(&out)])?;
    let secs = t.elapsed().as_secs_f64();
    let r = json(&out.join("gradcheck.json"))?;
    let full = num(&r["full"]["max_rel_error"]);
    let linear = num(&r["linear"]["max_rel_error"]);
    let m = json(&out.join("manifest.json"))?;
    let c = &m["config"]["regressor"];
    let shape = (
        c["num_landmarks"].as_u64(),
        c["features"].as_u64(),
        c["blocks"].as_u64(),
    );
    Ok((
        full < 1e-4 && linear < 1e-7 && secs < 60.0 && shape == (Some(15), Some(1024), Some(3)),
        format!("full {full:.2e} < 1e-4, linear-only {linear:.2e} < 1e-7, {secs:.1} s < 60 s (J=15 F=1024 R=3)"),
    ))
}

fn random_lifted(rng: &mut impl Rng, j: usize) -> LiftedPose {
    LiftedPose {
        landmarks: (0..j)
            .map(|_| LiftedLandmark {
                position: Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(1.0..6.0),
                ),
                provenance: Provenance::Detected,
                confidence: rng.random_range(0.0..1.0),
            })
            .collect(),
    }
}

fn criterion_2() -> Outcome {
    let skeleton = SkeletonModel::itop15();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let poses: Vec<_> = (0..256).map(|_| random_lifted(&mut rng, 15)).collect();
    let inputs: Vec<_> = poses.iter().map(LiftedPose::positions).collect();
    let targets: Vec<Vec<_>> = inputs
        .iter()
        .map(|p| p.iter().map(|x| x * 1.1 + Vector3::new(0.01, -0.02, 0.03)).collect())
        .collect();
    let stats = NormalizationStats::compute(&inputs, &targets).map_err(|e| e.to_string())?;
    let mut worst = [0.0f64; 2];
    for (k, use_confidence) in [false, true].into_iter().enumerate() {
        let config = RegressorConfig {
            features: 128,
            use_confidence,
            ..Default::default()
        };
        let mut model = ResidualRegressor::new(config, &skeleton, stats.clone()).map_err(|e| e.to_string())?;
        model.zero_output_layer();
        let out = model.predict(&poses).map_err(|e| e.to_string())?;
        for (pred, lifted) in out.iter().zip(&inputs) {
            for (p, l) in pred.iter().zip(lifted) {
                worst[k] = worst[k].max((p - l).amax());
            }
        }
    }
    Ok((
        worst.iter().all(|&w| w <= 1e-12),
        format!(
            "max |refined - lifted| J×3 {:.1e}, J×4 {:.1e} (≤ 1e-12)",
            worst[0], worst[1]
        ),
    ))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        let k = CameraIntrinsics::new(
            rng.random_range(200.0..1200.0),
            rng.random_range(200.0..1200.0),
            rng.random_range(100.0..700.0),
            rng.random_range(100.0..500.0),
        )
        .map_err(|e| e.to_string())?;
        let z = 8.0 * (1.0 - rng.random::<f64>());
        let p = Vector3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), z);
        let u = k.fx * p.x / p.z + k.cx;
        let v = k.fy * p.y / p.z + k.cy;
        let q = lift_point(u, v, z, &k).map_err(|e| e.to_string())?;
        worst = worst.max((q - p).amax());
    }
    Ok((
        worst <= 1e-9,
        format!("10^5 points, max round-trip error {worst:.1e} m (≤ 1e-9)"),
    ))
}

fn random_spd(rng: &mut impl Rng) -> Matrix6<f64> {
    let a = Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0));
    a * a.transpose() + Matrix6::identity() * 0.05
}

/// Conditional mean from the full precision matrix.
fn precision_oracle(mean: &Vector6<f64>, cov: &Matrix6<f64>, parent: &Vector3<f64>) -> Vector3<f64> {
    let lambda = cov.try_inverse().unwrap();
    let l_cc: Matrix3<f64> = lambda.fixed_view::<3, 3>(0, 0).into();
    let l_cp: Matrix3<f64> = lambda.fixed_view::<3, 3>(0, 3).into();
    let mu_c: Vector3<f64> = mean.fixed_rows::<3>(0).into();
    let mu_p: Vector3<f64> = mean.fixed_rows::<3>(3).into();
    mu_c - l_cc.try_inverse().unwrap() * l_cp * (parent - mu_p)
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let g = LimbGaussian {
            mean: Vector6::from_fn(|_, _| rng.random_range(-0.5..0.5)),
            covariance: random_spd(&mut rng),
        };
        let parent = Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5));
        let got = g.conditional_mean(&parent).map_err(|e| e.to_string())?;
        worst = worst.max((got - precision_oracle(&g.mean, &g.covariance, &parent)).amax());
    }
    let mut cov = random_spd(&mut rng);
    cov.fixed_view_mut::<3, 3>(0, 3).fill(0.0);
    cov.fixed_view_mut::<3, 3>(3, 0).fill(0.0);
    let g = LimbGaussian {
        mean: Vector6::new(0.1, 0.2, 0.3, 0.4, 0.5, 0.6),
        covariance: cov,
    };
    let marginal = g
        .conditional_mean(&Vector3::new(3.0, -2.0, 1.0))
        .map_err(|e| e.to_string())?;
    let exact = marginal == g.child_mean();
    Ok((
        worst <= 1e-9 && exact,
        format!("10^3 SPD covariances, max deviation from precision-matrix oracle {worst:.1e} (≤ 1e-9); zero cross-covariance returns the marginal mean exactly: {exact}"),
    ))
}

fn criterion_5() -> Outcome {
    let skeleton = SkeletonModel::itop15();
    let limbs = skeleton.limbs().len();
    let dim = 3 * limbs;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mu = DVector::from_fn(dim, |_, _| rng.random_range(-0.3..0.3));
    let m = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-0.05..0.05));
    let sigma = &m * m.transpose() + DMatrix::identity(dim, dim) * 0.002;
    let chol = sigma.clone().cholesky().unwrap().l();

    let n = 10_000;
    let poses: Vec<Vec<Vector3<f64>>> = (0..n)
        .map(|_| {
            let w = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let l = &mu + &chol * w;
            let mut pose = vec![None; skeleton.num_landmarks()];
            let root = skeleton.limbs()[skeleton.root_limb()];
            pose[root.parent] = Some(Vector3::zeros());
            for limb in skeleton.recovery_order() {
                let v = Vector3::new(l[3 * limb], l[3 * limb + 1], l[3 * limb + 2]);
                let lb = skeleton.limbs()[limb];
                match (pose[lb.parent], pose[lb.child]) {
                    (Some(p), None) => pose[lb.child] = Some(p + v),
                    (None, Some(c)) => pose[lb.parent] = Some(c - v),
                    _ => {}
                }
            }
            pose.into_iter().map(Option::unwrap).collect()
        })
        .collect();
    let prior = LimbPrior::fit(&skeleton, &poses, 1e-6).map_err(|e| e.to_string())?;

    let (mut within, mut total) = (0usize, 0usize);
    let nf = n as f64;
    for limb in 0..limbs {
        let Some(parent) = skeleton.limb_parent(limb) else {
            continue;
        };
        let g = prior.gaussian(limb).ok_or("missing limb Gaussian")?;
        let idx: Vec<usize> = (0..3)
            .map(|k| 3 * limb + k)
            .chain((0..3).map(|k| 3 * parent + k))
            .collect();
        for a in 0..6 {
            total += 1;
            within += usize::from((g.mean[a] - mu[idx[a]]).abs() <= 3.0 * (sigma[(idx[a], idx[a])] / nf).sqrt());
            for b in a..6 {
                let (ia, ib) = (idx[a], idx[b]);
                let se = ((sigma[(ia, ia)] * sigma[(ib, ib)] + sigma[(ia, ib)].powi(2)) / nf).sqrt();
                total += 1;
                within += usize::from((g.covariance[(a, b)] - sigma[(ia, ib)]).abs() <= 3.0 * se);
            }
        }
    }
    let frac = within as f64 / total as f64;
    Ok((
        frac >= 0.95,
        format!(
            "{within}/{total} mean and covariance entries within 3 SE ({:.1}% ≥ 95%)",
            frac * 100.0
        ),
    ))
}

struct Synthetic {
    train: PathBuf,
    prior: PathBuf,
    model: PathBuf,
    model_dir: PathBuf,
}

fn criterion_6(work: &Path) -> Result<((bool, String), Synthetic), String> {
    let t = Instant::now();
    let d = |n: &str| work.join(n);
    run(&[
        "synth",
        "--samples",
        "15000",
        "--seed",
        "1",
        "--offset",
        "0.03",
        "--noise",
        "0.005",
        "--dropout",
        "0.1",
        "--out",
        s(&d("train")),
    ])?;
    run(&[
        "synth",
        "--samples",
        "1500",
        "--seed",
        "2",
        "--offset",
        "0.03",
        "--noise",
        "0.005",
        "--dropout",
        "0.1",
        "--out",
        s(&d("test")),
    ])?;
    let train = d("train/dataset.jsonl");
    run(&["fit-prior", "--train", s(&train), "--out", s(&d("prior"))])?;
    let prior = d("prior/prior.json");
    run(&[
        "train",
        "--train",
        s(&train),
        "--prior",
        s(&prior),
        "--features",
        "256",
        "--epochs",
        "60",
        "--seed",
        "0",
        "--out",
        s(&d("model")),
    ])?;
    let model = d("model/model.bin");
    run(&[
        "evaluate",
        "--data",
        s(&d("test/dataset.jsonl")),
        "--prior",
        s(&prior),
        "--model",
        s(&model),
        "--out",
        s(&d("eval")),
    ])?;
    let secs = t.elapsed().as_secs_f64();
    let r = json(&d("eval/report.json"))?;
    let (base, refined) = (&r["methods"][0], &r["methods"][1]);
    let (b_map, b_err) = (num(&base["map"]), num(&base["mmpjpe_cm"]));
    let (r_map, r_err) = (num(&refined["map"]), num(&refined["mmpjpe_cm"]));
    let pass = r_err <= 0.5 * b_err && r_map >= b_map && secs < 1200.0;
    let line = format!(
        "mMPJPE lifted {b_err:.3} cm -> refined {r_err:.3} cm (ratio {:.3} ≤ 0.5); mAP@10cm lifted {:.2}% -> refined {:.2}% (≥); {secs:.0} s < 1200 s at F=256",
        r_err / b_err,
        b_map * 100.0,
        r_map * 100.0
    );
    Ok((
        (pass, line),
        Synthetic {
            train,
            prior,
            model,
            model_dir: d("model"),
        },
    ))
}

fn criterion_7(work: &Path, syn: &Synthetic) -> Outcome {
    let d = |n: &str| work.join(n);
    run(&[
        "synth",
        "--samples",
        "1500",
        "--seed",
        "2",
        "--offset",
        "0.03",
        "--noise",
        "0.005",
        "--dropout",
        "0.3",
        "--out",
        s(&d("test30")),
    ])?;
    let test = d("test30/dataset.jsonl");
    let centroid_cfg = d("centroid.toml");
    std::fs::write(&centroid_cfg, "[lift]\nrecovery = \"trunk_centroid\"\n").map_err(|e| e.to_string())?;
    run(&[
        "train",
        "--config",
        s(&centroid_cfg),
        "--train",
        s(&syn.train),
        "--prior",
        s(&syn.prior),
        "--features",
        "256",
        "--epochs",
        "60",
        "--seed",
        "0",
        "--out",
        s(&d("model_centroid")),
    ])?;
    run(&[
        "evaluate",
        "--data",
        s(&test),
        "--prior",
        s(&syn.prior),
        "--model",
        s(&syn.model),
        "--out",
        s(&d("eval_prior")),
    ])?;
    run(&[
        "evaluate",
        "--config",
        s(&centroid_cfg),
        "--data",
        s(&test),
        "--prior",
        s(&syn.prior),
        "--model",
        s(&d("model_centroid/model.bin")),
        "--out",
        s(&d("eval_centroid")),
    ])?;
    let p = json(&d("eval_prior/report.json"))?;
    let c = json(&d("eval_centroid/report.json"))?;
    let (p_lift, p_ref) = (num(&p["methods"][0]["map"]), num(&p["methods"][1]["map"]));
    let (c_lift, c_ref) = (num(&c["methods"][0]["map"]), num(&c["methods"][1]["map"]));
    Ok((
        p_ref > c_ref,
        format!(
            "30% dropout mAP@10cm: prior recovery {:.2}% vs trunk centroid {:.2}% (strictly higher); lift only {:.2}% vs {:.2}%",
            p_ref * 100.0,
            c_ref * 100.0,
            p_lift * 100.0,
            c_lift * 100.0
        ),
    ))
}

fn pair(errors: &[f64]) -> EvalPair {
    let gt: Vec<_> = errors.iter().map(|_| Vector3::new(0.0, 0.0, 2.0)).collect();
    let pred = gt
        .iter()
        .zip(errors)
        .map(|(g, &e)| g + Vector3::new(e, 0.0, 0.0))
        .collect();
    EvalPair::new(pred, gt)
}

fn criterion_8() -> Outcome {
    let e = |r: depthpose::Result<depthpose::metrics::JointScores>| r.map_err(|e| e.to_string());
    let mut failed = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failed.push(name.to_string());
        }
    };

    let ap = e(ap_at_threshold(&[pair(&[0.05]), pair(&[0.15])], 0.10))?;
    check("AP of errors 5/15 cm is 0.5", ap.per_joint[0] == Some(0.5));
    let ap = e(ap_at_threshold(&[pair(&[0.0, 0.0, 0.0])], 0.10))?;
    check(
        "perfect AP",
        ap.mean == 1.0 && ap.per_joint.iter().all(|&a| a == Some(1.0)),
    );
    let ap = e(ap_at_threshold(&[pair(&[0.10])], 0.10))?;
    check("boundary is a miss", ap.per_joint[0] == Some(0.0));
    let m = e(mpjpe(&[pair(&[0.05, 0.05, 0.05])]))?;
    check(
        "constant 5 cm offset",
        m.mean == 5.0 && m.per_joint.iter().all(|&x| x == Some(5.0)),
    );
    let m = e(mpjpe(&[pair(&[0.0, 0.0])]))?;
    check("perfect MPJPE", m.mean == 0.0);
    let m = e(mpjpe(&[pair(&[0.02]), pair(&[0.04])]))?;
    check("2 cm and 4 cm average to 3 cm", m.per_joint[0] == Some(3.0));

    let pck = |det: Vec<Option<[f64; 2]>>, gt: Vec<Option<[f64; 2]>>, fr: &[f64]| {
        pck_curve(
            &[Pck2DPair {
                detections: det,
                ground_truth: gt,
                bbox_height: 100.0,
            }],
            fr,
        )
        .map_err(|e| e.to_string())
    };
    let gt = vec![Some([10.0, 20.0]), Some([30.0, 40.0])];
    let c = pck(gt.clone(), gt.clone(), &[0.05, 0.1])?;
    check(
        "perfect PCK",
        c.points.iter().all(|p| p.precision == 1.0 && p.recall == 1.0),
    );
    let c = pck(vec![None, None], gt, &[0.05, 0.1])?;
    check(
        "no detections",
        c.points
            .iter()
            .all(|p| p.precision == 0.0 && !p.precision_defined && p.recall == 0.0),
    );
    let c = pck(vec![Some([60.0, 50.0])], vec![Some([50.0, 50.0])], &[0.05, 0.15])?;
    check(
        "threshold straddle",
        (
            c.points[0].false_positives,
            c.points[0].true_positives,
            c.points[1].true_positives,
        ) == (1, 0, 1)
            && c.points[0].recall == 0.0
            && c.points[1].recall == 1.0,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pairs: Vec<_> = (0..200)
        .map(|_| pair(&(0..15).map(|_| rng.random_range(0.0..0.3)).collect::<Vec<_>>()))
        .collect();
    let sweep: Vec<f64> = (1..=20).map(|i| 0.015 * i as f64).collect();
    let aps = sweep
        .iter()
        .map(|&t| ap_at_threshold(&pairs, t).map(|a| a.mean))
        .collect::<depthpose::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    check("AP monotone over 20 thresholds", aps.windows(2).all(|w| w[0] <= w[1]));
    let pck_pairs: Vec<_> = (0..100)
        .map(|_| Pck2DPair {
            detections: (0..15)
                .map(|_| (rng.random::<f64>() > 0.1).then(|| [rng.random_range(0.0..40.0), 0.0]))
                .collect(),
            ground_truth: vec![Some([0.0, 0.0]); 15],
            bbox_height: 200.0,
        })
        .collect();
    let fractions: Vec<f64> = (1..=20).map(|i| 0.01 * i as f64).collect();
    let curve = pck_curve(&pck_pairs, &fractions).map_err(|e| e.to_string())?;
    check(
        "PCK recall and precision monotone over 20 radii",
        curve
            .points
            .windows(2)
            .all(|w| w[0].recall <= w[1].recall && w[0].precision <= w[1].precision),
    );
    Ok((
        failed.is_empty(),
        if failed.is_empty() {
            "all golden cases exact; AP and PCK monotone over 20-point sweeps".into()
        } else {
            format!("failed: {}", failed.join(", "))
        },
    ))
}

fn criterion_9(syn: &Synthetic) -> Outcome {
    let r = json(&syn.model_dir.join("training_report.json"))?;
    let lr = |e: usize| num(&r["epochs"][e]["learning_rate"]);
    let got = [lr(0), lr(20), lr(40)];
    Ok((
        got == [1e-3, 5e-4, 2.5e-4],
        format!("recorded learning rates at epochs 0/20/40: {got:?}"),
    ))
}

fn criterion_10(work: &Path, syn: &Synthetic) -> Outcome {
    let d = |n: &str| work.join(n);
    for n in ["synth_a", "synth_b"] {
        run(&["synth", "--samples", "3000", "--seed", "11", "--out", s(&d(n))])?;
    }
    let train = d("synth_a/dataset.jsonl");
    for n in ["train_a", "train_b"] {
        run(&[
            "train",
            "--train",
            s(&train),
            "--prior",
            s(&syn.prior),
            "--features",
            "64",
            "--epochs",
            "3",
            "--seed",
            "5",
            "--out",
            s(&d(n)),
        ])?;
    }
    let read = |p: PathBuf| std::fs::read(&p).map_err(|e| format!("{}: {e}", p.display()));
    let synth_same = read(d("synth_a/dataset.jsonl"))? == read(d("synth_b/dataset.jsonl"))?;
    let model_same = read(d("train_a/model.bin"))? == read(d("train_b/model.bin"))?;
    Ok((
        synth_same && model_same,
        format!("synth datasets byte-identical: {synth_same}; trained models byte-identical: {model_same}"),
    ))
}

fn criterion_11() -> Outcome {
    let skeleton = SkeletonModel::itop15();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let poses: Vec<_> = (0..2000).map(|_| random_lifted(&mut rng, 15)).collect();
    let inputs: Vec<_> = poses.iter().map(LiftedPose::positions).collect();
    let stats = NormalizationStats::compute(&inputs, &inputs).map_err(|e| e.to_string())?;
    let model = ResidualRegressor::new(RegressorConfig::default(), &skeleton, stats).map_err(|e| e.to_string())?;
    model.predict(&poses[..64]).map_err(|e| e.to_string())?;
    let t = Instant::now();
    model.predict(&poses).map_err(|e| e.to_string())?;
    let rate = poses.len() as f64 / t.elapsed().as_secs_f64();
    Ok((
        rate >= 200.0,
        format!("{rate:.0} poses/s at F=1024 J=15 single-threaded (≥ 200)"),
    ))
}

fn report(n: u32, outcome: Outcome, all: &mut bool) {
    let (pass, msg) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    *all &= pass;
    println!("{} criterion {n:>2}: {msg}", if pass { "PASS" } else { "FAIL" });
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let work = dir.path();
    let mut all = true;
    report(1, criterion_1(work), &mut all);
    report(2, criterion_2(), &mut all);
    report(3, criterion_3(), &mut all);
    report(4, criterion_4(), &mut all);
    report(5, criterion_5(), &mut all);
    match criterion_6(work) {
        Ok((outcome, syn)) => {
            report(6, Ok(outcome), &mut all);
            report(7, criterion_7(work, &syn), &mut all);
            report(8, criterion_8(), &mut all);
            report(9, criterion_9(&syn), &mut all);
            report(10, criterion_10(work, &syn), &mut all);
        }
        Err(e) => {
            report(6, Err(e.clone()), &mut all);
            for n in [7, 9, 10] {
                report(n, Err(format!("needs the criterion 6 run: {e}")), &mut all);
            }
            report(8, criterion_8(), &mut all);
        }
    }
    report(11, criterion_11(), &mut all);
    if !all {
        std::process::exit(1);
    }
}
