//! Acceptance checks, one PASS/FAIL line each. Exits non-zero if any fail.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use crowdcast::baselines::{bench_preprocess, constant_velocity_predict, PreprocessMode};
use crowdcast::config::{ModelConfig, TrainConfig};
use crowdcast::dataio::{make_windows, quantize, to_displacements, Observation, SceneWindow};
use crowdcast::evalm::{ade, fde, Selection};
use crowdcast::gauss::{decode_params, sample_displacements, BiGaussian, BiGaussianSeq};
use crowdcast::ndnum::{finite_diff_check, ParamSet, Tape, Tensor};
use crowdcast::seqnet::{model_forward, window_loss, ModelParams};
use crowdcast::social::{social_forward, SocialWeights};
use crowdcast::synth::{generate_scene, Template};
use crowdcast::trainer::{evaluate, evaluate_deterministic, train, DEFAULT_SAMPLES};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn grid_positions(rng: &mut ChaCha8Rng, t: usize, n: usize, extent: f64) -> Tensor {
    Tensor::new(vec![t, n, 2], (0..t * n * 2).map(|_| quantize(rng.random_range(-extent..extent))).collect()).unwrap()
}

/// Default-size model, 3 pedestrians, 8 observed + 12 predicted steps.
fn gradient_soundness() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // Random biases and slopes move the check off the max-pool ties that zero
    // biases create at the always-zero first displacement.
    let fresh = ModelParams::init(&cfg, 1).unwrap().tensors;
    let mut params = ParamSet::new();
    for (name, t) in fresh.iter() {
        let v = if name.ends_with(".b") || name.contains(".b_") {
            random(&mut rng, t.shape(), -0.2, 0.2)
        } else if name.ends_with(".a") || name.contains(".a_") {
            random(&mut rng, t.shape(), 0.1, 0.4)
        } else {
            t.clone()
        };
        params.insert(name, v);
    }
    let mut positions = Vec::new();
    for _ in 0..3 {
        let (mut x, mut y) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let (vx, vy) = (rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6));
        for _ in 0..20 {
            positions.extend([quantize(x), quantize(y)]);
            x += vx + rng.random_range(-0.05..0.05);
            y += vy + rng.random_range(-0.05..0.05);
        }
    }
    let window = to_displacements(&SceneWindow::new(vec![1, 2, 3], positions, 8, 12).unwrap());
    // Smaller steps let rounding in the loss swamp the tiniest gradients.
    let report = finite_diff_check(
        |tape: &Tape, p| -> crowdcast::Result<Tensor> {
            let (loss, points) = window_loss(tape, &window, &cfg, p)?;
            Ok(tape.scale(&loss, 1.0 / points as f64)?)
        },
        &params,
        1e-4,
    )
    .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check(
        report.max_rel_error < 1e-4 && secs < 300.0,
        format!(
            "max relative error {:.2e} (at {:?}) over {} parameters, {secs:.1} s",
            report.max_rel_error, report.worst, report.checked
        ),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (t_len, n) = (rng.random_range(1..20), rng.random_range(1..8));
        let pred = random(&mut rng, &[t_len, n, 2], -10.0, 10.0);
        let gt = random(&mut rng, &[t_len, n, 2], -10.0, 10.0);
        let d = |t: usize, i: usize| (pred.at(&[t, i, 0]) - gt.at(&[t, i, 0])).hypot(pred.at(&[t, i, 1]) - gt.at(&[t, i, 1]));
        let mut sum = 0.0;
        for i in 0..n {
            for t in 0..t_len {
                sum += d(t, i);
            }
        }
        let fde_oracle = (0..n).map(|i| d(t_len - 1, i)).sum::<f64>() / n as f64;
        worst = worst.max((ade(&pred, &gt).unwrap() - sum / (t_len * n) as f64).abs());
        worst = worst.max((fde(&pred, &gt).unwrap() - fde_oracle).abs());
    }
    let pred = Tensor::new(vec![2, 1, 2], vec![0.0, 0.0, 3.0, 4.0]).unwrap();
    let fde345 = fde(&pred, &Tensor::zeros(&[2, 1, 2])).unwrap();
    check(worst <= 1e-12 && fde345 == 5.0, format!("worst deviation {worst:.1e} over 100 cases; 3-4-5 FDE = {fde345}"))
}

fn nll_closed_form() -> Outcome {
    let two_pi = 2.0 * std::f64::consts::PI;
    let raw = Tensor::new(vec![1, 1, 5], vec![0.0; 5]).unwrap();
    let plain = decode_params(&raw).unwrap().get(0, 0).nll(0.0, 0.0);
    let correlated = BiGaussian { mu_x: 0.0, mu_y: 0.0, sigma_x: 1.0, sigma_y: 1.0, rho: 0.5 }.nll(0.0, 0.0);
    let (e1, e2) = ((plain - two_pi.ln()).abs(), (correlated - (two_pi * 0.75f64.sqrt()).ln()).abs());
    check(e1 < 1e-9 && e2 < 1e-9, format!("deviations {e1:.1e} (rho 0) and {e2:.1e} (rho 0.5)"))
}

fn permute(x: &Tensor, perm: &[usize]) -> Tensor {
    let s = x.shape();
    let c = s[2];
    let mut out = Vec::with_capacity(x.len());
    for t in 0..s[0] {
        for &p in perm {
            out.extend_from_slice(&x.data()[(t * s[1] + p) * c..(t * s[1] + p + 1) * c]);
        }
    }
    Tensor::new(s.to_vec(), out).unwrap()
}

fn symmetry_suite() -> Outcome {
    let cfg = ModelConfig::default();
    let (mut perm_ok, mut shift_ok) = (0, 0);
    for case in 0..50u64 {
        let params = ModelParams::init(&cfg, case).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let n = rng.random_range(1..8);
        let positions = grid_positions(&mut rng, cfg.t_obs, n, 20.0);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let out = model_forward(&Tape::new(), &Observation::from_positions(positions.clone()).unwrap(), &cfg, &params.tensors).unwrap();
        let out_p =
            model_forward(&Tape::new(), &Observation::from_positions(permute(&positions, &perm)).unwrap(), &cfg, &params.tensors).unwrap();
        perm_ok += usize::from(out_p.data() == permute(&out, &perm).data());

        let (dx, dy) = (quantize(rng.random_range(-1e3..1e3)), quantize(rng.random_range(-1e3..1e3)));
        let shifted = Tensor::new(positions.shape().to_vec(), positions.data().chunks(2).flat_map(|p| [p[0] + dx, p[1] + dy]).collect()).unwrap();
        let w = SocialWeights::from_params(&params.tensors).unwrap();
        let a = social_forward(&Tape::new(), &Observation::from_positions(positions).unwrap(), &w).unwrap();
        let b = social_forward(&Tape::new(), &Observation::from_positions(shifted).unwrap(), &w).unwrap();
        shift_ok += usize::from(a.weights.data() == b.weights.data());
    }
    check(perm_ok == 50 && shift_ok == 50, format!("permutation bitwise {perm_ok}/50, translation bitwise {shift_ok}/50"))
}

fn sampling_statistics() -> Outcome {
    let p = BiGaussian { mu_x: 0.4, mu_y: -1.2, sigma_x: 0.7, sigma_y: 1.9, rho: -0.6 };
    let seq = BiGaussianSeq::new(1, 1, vec![p]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100_000;
    let draws: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let d = sample_displacements(&seq, &mut rng);
            (d.data()[0], d.data()[1])
        })
        .collect();
    let nf = n as f64;
    let (mx, my) = (draws.iter().map(|d| d.0).sum::<f64>() / nf, draws.iter().map(|d| d.1).sum::<f64>() / nf);
    let vx = draws.iter().map(|d| (d.0 - mx).powi(2)).sum::<f64>() / (nf - 1.0);
    let vy = draws.iter().map(|d| (d.1 - my).powi(2)).sum::<f64>() / (nf - 1.0);
    let rho = draws.iter().map(|d| (d.0 - mx) * (d.1 - my)).sum::<f64>() / (nf - 1.0) / (vx * vy).sqrt();
    let (zx, zy) = ((mx - p.mu_x) / (p.sigma_x / nf.sqrt()), (my - p.mu_y) / (p.sigma_y / nf.sqrt()));
    check(
        zx.abs() < 4.0 && zy.abs() < 4.0 && (rho - p.rho).abs() < 0.02,
        format!("mean offsets {zx:.2} / {zy:.2} standard errors, rho {rho:.4} vs {}", p.rho),
    )
}

/// Scene count for the learning check; crossing and merge alternate.
const TRAIN_SCENES: u64 = 576;
const TEST_SCENES: u64 = 20;
/// Held-out scenes start well past the training seeds.
const TEST_SEED: u64 = 1000;
const PEDS_PER_SCENE: usize = 3;
const REQUIRED_GAIN: f64 = 0.10;

fn scenes(seeds: std::ops::Range<u64>) -> Vec<SceneWindow> {
    seeds
        .flat_map(|s| {
            let template = if s % 2 == 0 { Template::Crossing } else { Template::Merge };
            make_windows(&generate_scene(template, PEDS_PER_SCENE, s).unwrap(), 8, 12, 1).unwrap()
        })
        .collect()
}

fn learning_signal() -> Outcome {
    let start = Instant::now();
    let train_w = scenes(0..TRAIN_SCENES);
    let test_w = scenes(TEST_SEED..TEST_SEED + TEST_SCENES);
    let cfg = TrainConfig::default();
    let outcome = train(train_w.clone(), &ModelConfig::default(), &cfg).map_err(|e| e.to_string())?;
    let model = evaluate(&outcome.best, &test_w, DEFAULT_SAMPLES, 0, Selection::ByAde).map_err(|e| e.to_string())?;
    let cv = evaluate_deterministic("const-vel", &test_w, constant_velocity_predict).map_err(|e| e.to_string())?;
    let gain = 1.0 - model.ade() / cv.ade();
    let secs = start.elapsed().as_secs_f64();
    check(
        gain >= REQUIRED_GAIN && secs < 900.0 && train_w.len() >= 200,
        format!(
            "best-of-{DEFAULT_SAMPLES} ADE {:.3} vs constant velocity {:.3} ({:+.1}% better, need {:.0}%); {} training / {} held-out windows, {} epochs, best epoch {}, {secs:.0} s",
            model.ade(),
            cv.ade(),
            100.0 * gain,
            100.0 * REQUIRED_GAIN,
            train_w.len(),
            test_w.len(),
            cfg.epochs,
            outcome.best_epoch
        ),
    )
}

fn preprocessing_direction() -> Outcome {
    let sequences: Vec<Tensor> = (0..20)
        .map(|s| {
            let w = make_windows(&generate_scene(Template::DenseCrowd, 50, s).unwrap(), 8, 12, 100).unwrap().remove(0);
            let mut data = w.observed().data().to_vec();
            data.extend_from_slice(w.future().data());
            Tensor::new(vec![20, w.n_peds(), 2], data).unwrap()
        })
        .collect();
    let graph = bench_preprocess(&sequences, PreprocessMode::Graph, 20).map_err(|e| e.to_string())?;
    let direct = bench_preprocess(&sequences, PreprocessMode::Direct, 20).map_err(|e| e.to_string())?;
    let ratio = graph.median_ms / direct.median_ms;
    check(
        ratio >= 2.0,
        format!(
            "median per sequence: graph {:.4} ms, direct {:.4} ms, {ratio:.1}x faster (reference 54.8x came from other hardware and code and is not expected to reproduce)",
            graph.median_ms, direct.median_ms
        ),
    )
}

fn horizon_twenty() -> Outcome {
    let model = ModelConfig { t_pred: 20, ..ModelConfig::default() };
    let windows: Vec<SceneWindow> = (0..4)
        .flat_map(|s| make_windows(&generate_scene(Template::Crossing, 3, s).unwrap(), 8, 20, 4).unwrap())
        .collect();
    let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
    let outcome = train(windows.clone(), &model, &cfg).map_err(|e| e.to_string())?;
    let w = &windows[0];
    let d = to_displacements(w);
    let raw = model_forward(&Tape::new(), &d.observation(), &model, &outcome.best.tensors).map_err(|e| e.to_string())?;
    let dist = outcome.best.predict(&d.observation()).map_err(|e| e.to_string())?;
    let report = evaluate(&outcome.best, &windows, 5, 0, Selection::ByAde).map_err(|e| e.to_string())?;
    let n = w.n_peds();
    check(
        raw.shape() == [20, n, 5] && dist.t_pred() == 20 && d.target().shape() == [20, n, 2] && report.ade().is_finite(),
        format!("raw head {:?}, distribution over {} steps, evaluated ADE {:.3} on {} windows", raw.shape(), dist.t_pred(), report.ade(), report.n_windows()),
    )
}

fn cli(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_crowdcast")).current_dir(dir).env_remove("CROWDCAST_SEED").args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn determinism() -> Outcome {
    let run = |dir: &Path| -> Result<Vec<(String, Vec<u8>)>, String> {
        cli(dir, &["gen", "--template", "crossing,merge", "--scenes", "6", "--n", "4", "--seed", "7", "--out", "data"])?;
        cli(dir, &["train", "--data", "data", "--epochs", "3", "--seed", "7", "--out", "run"])?;
        let eval = cli(dir, &["eval", "--checkpoint", "run/best.ckpt", "--data", "data", "--n-samples", "20", "--seed", "7", "--csv", "eval.csv"])?;
        let predict = cli(dir, &["predict", "--checkpoint", "run/best.ckpt", "--input", "data/crossing-7.txt", "--out", "pred.csv"])?;
        let mut files = vec![("eval stdout".to_string(), eval), ("predict stdout".to_string(), predict)];
        for sub in ["data", "run", "."] {
            let mut names: Vec<_> = fs::read_dir(dir.join(sub)).map_err(|e| e.to_string())?.filter_map(|e| e.ok()).filter(|e| e.path().is_file()).collect();
            names.sort_by_key(|e| e.file_name());
            for e in names {
                let mut bytes = fs::read(e.path()).map_err(|e| e.to_string())?;
                if e.file_name() == "train_log.csv" {
                    // Elapsed seconds are the one machine-dependent field.
                    let text = String::from_utf8(bytes).map_err(|e| e.to_string())?;
                    bytes = text.lines().map(|l| l.rsplit_once(',').map_or(l, |p| p.0)).collect::<Vec<_>>().join("\n").into_bytes();
                }
                files.push((format!("{sub}/{}", e.file_name().to_string_lossy()), bytes));
            }
        }
        Ok(files)
    };
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let (fa, fb) = (run(a.path())?, run(b.path())?);
    let differing: Vec<&str> = fa.iter().zip(&fb).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    check(
        fa.len() == fb.len() && differing.is_empty(),
        format!("{} outputs compared across two runs of gen/train/eval/predict; differing: {differing:?} (train log compared without wall_seconds)", fa.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient soundness", gradient_soundness),
        ("metric oracles", metric_oracles),
        ("NLL closed form", nll_closed_form),
        ("equivariance / invariance", symmetry_suite),
        ("sampling statistics", sampling_statistics),
        ("learning signal", learning_signal),
        ("pre-processing benchmark direction", preprocessing_direction),
        ("horizon generality", horizon_twenty),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let (tag, detail) = match run() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {} {name}: {detail}", i + 1);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
