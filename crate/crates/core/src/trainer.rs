//! Mini-batch SGD on the summed negative log-likelihood, plus evaluation.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, TrainConfig};
use crate::dataio::{density_group, to_displacements, DisplacementWindow, SceneWindow};
use crate::error::{Error, Result};
use crate::evalm::{best_of_n, EvalReport, Selection};
use crate::gauss;
use crate::ndnum::{sgd_step, ParamSet, Tape};
use crate::seqnet::{window_loss, ModelParams};

/// Partition windows into (train, validation) by scene name, never splitting a scene.
///
/// Scene names are shuffled with `seed`; the first `round(val_fraction * scenes)`
/// go to validation, keeping at least one scene for training.
pub fn split_by_scene(windows: Vec<SceneWindow>, val_fraction: f64, seed: u64) -> (Vec<SceneWindow>, Vec<SceneWindow>) {
    let mut scenes: Vec<String> = windows.iter().map(|w| w.scene.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    scenes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_val = (val_fraction * scenes.len() as f64).round() as usize;
    if val_fraction > 0.0 && n_val == 0 && scenes.len() > 1 {
        n_val = 1;
    }
    let n_val = n_val.min(scenes.len().saturating_sub(1));
    let val: BTreeSet<&String> = scenes[..n_val].iter().collect();
    windows.into_iter().partition(|w| !val.contains(&w.scene))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 0 is the untrained model.
    pub epoch: usize,
    /// Epoch 0: a full pass. Later epochs: the mean over that epoch's batches,
    /// each measured just before its own update.
    pub train_nll: f64,
    pub val_nll: Option<f64>,
    pub wall_seconds: f64,
}

pub const LOG_CSV_HEADER: &str = "epoch,train_nll,val_nll,wall_seconds";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let val = self.val_nll.map_or(String::new(), |v| v.to_string());
        format!("{},{},{},{:.3}", self.epoch, self.train_nll, val, self.wall_seconds)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation NLL (training NLL if there is no validation set).
    pub best: ModelParams,
    pub best_epoch: usize,
    pub last: ModelParams,
    pub log: Vec<EpochLog>,
}

fn check_horizons(windows: &[SceneWindow], cfg: &ModelConfig) -> Result<()> {
    match windows.iter().find(|w| w.t_obs != cfg.t_obs || w.t_pred != cfg.t_pred) {
        Some(w) => Err(Error::Mismatch(format!(
            "window at frame {} of {:?} is {}+{} steps, model expects {}+{}",
            w.start_frame, w.scene, w.t_obs, w.t_pred, cfg.t_obs, cfg.t_pred
        ))),
        None => Ok(()),
    }
}

/// Per-point mean NLL over `windows`, without recording gradients.
pub fn mean_nll(params: &ModelParams, windows: &[DisplacementWindow]) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for w in windows {
        let tape = Tape::new();
        let (loss, n) = window_loss(&tape, w, &params.config, &params.tensors)?;
        sum += loss.item()?;
        count += n;
    }
    Ok(if count == 0 { f64::NAN } else { sum / count as f64 })
}

fn l2_norm(p: &ParamSet) -> f64 {
    p.iter().flat_map(|(_, t)| t.data().iter()).map(|v| v * v).sum::<f64>().sqrt()
}

/// One optimiser step on a batch: the gradient of the batch's per-point mean
/// NLL, rescaled to norm `clip` if it is longer (and `clip > 0`).
fn batch_step(params: &ParamSet, cfg: &ModelConfig, batch: &[&DisplacementWindow], lr: f64, clip: f64) -> Result<(ParamSet, f64, usize)> {
    let mut acc: Option<ParamSet> = None;
    let (mut loss_sum, mut points) = (0.0, 0usize);
    for w in batch {
        let tape = Tape::new();
        let watched = params.watch(&tape);
        let (loss, n) = window_loss(&tape, w, cfg, &watched)?;
        loss_sum += loss.item()?;
        points += n;
        let grads = watched.gradients(&tape.backward(&loss)?)?;
        acc = Some(match acc {
            None => grads,
            Some(a) => a.axpy(1.0, &grads)?,
        });
    }
    let acc = acc.expect("non-empty batch");
    if !loss_sum.is_finite() || !acc.is_finite() {
        return Err(Error::Numerics(format!("batch loss {loss_sum}")));
    }
    let scale = 1.0 / points as f64;
    let norm = l2_norm(&acc) * scale;
    let shrink = if clip > 0.0 && norm > clip { clip / norm } else { 1.0 };
    Ok((sgd_step(params, &acc, lr * scale * shrink)?, loss_sum, points))
}

pub fn train(windows: Vec<SceneWindow>, model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(windows, model, cfg, |_, _| Ok(()))
}

/// Train from a fresh initialisation seeded with `cfg.seed`.
///
/// `on_epoch` sees each log entry with the parameters reached at that epoch.
pub fn train_with(
    windows: Vec<SceneWindow>,
    model: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &ModelParams) -> Result<()>,
) -> Result<TrainOutcome> {
    model.validate()?;
    cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::Input("no training windows".into()));
    }
    check_horizons(&windows, model)?;
    let (train_w, val_w) = split_by_scene(windows, cfg.val_fraction, cfg.seed);
    let train_d: Vec<DisplacementWindow> = train_w.iter().map(to_displacements).collect();
    let val_d: Vec<DisplacementWindow> = val_w.iter().map(to_displacements).collect();

    let start = Instant::now();
    let mut params = ModelParams::init(model, cfg.seed)?;
    let validate = |p: &ModelParams| -> Result<Option<f64>> { if val_d.is_empty() { Ok(None) } else { Ok(Some(mean_nll(p, &val_d)?)) } };
    let (train_nll, val_nll) = (mean_nll(&params, &train_d)?, validate(&params)?);
    let first = EpochLog { epoch: 0, train_nll, val_nll, wall_seconds: start.elapsed().as_secs_f64() };
    on_epoch(&first, &params)?;
    let mut best = (params.clone(), 0, val_nll.unwrap_or(train_nll));
    let mut log = vec![first];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_d.len()).collect();
    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr * cfg.lr_decay.powi(epoch as i32 - 1);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut points) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&DisplacementWindow> = chunk.iter().map(|&i| &train_d[i]).collect();
            match batch_step(&params.tensors, model, &batch, lr, cfg.grad_clip) {
                Ok((next, l, n)) => {
                    params.tensors = next;
                    loss_sum += l;
                    points += n;
                }
                Err(Error::Numerics(reason)) => {
                    return Err(Error::Diverged { epoch, reason, last_good: Box::new(params) });
                }
                Err(e) => return Err(e),
            }
        }
        let (train_nll, val_nll) = (loss_sum / points as f64, validate(&params)?);
        if !train_nll.is_finite() {
            return Err(Error::Diverged { epoch, reason: format!("training NLL {train_nll}"), last_good: Box::new(params) });
        }
        let entry = EpochLog { epoch, train_nll, val_nll, wall_seconds: start.elapsed().as_secs_f64() };
        on_epoch(&entry, &params)?;
        let key = val_nll.unwrap_or(train_nll);
        if key < best.2 {
            best = (params.clone(), epoch, key);
        }
        log.push(entry);
    }
    Ok(TrainOutcome { best: best.0, best_epoch: best.1, last: params, log })
}

pub const DEFAULT_SAMPLES: usize = 20;

/// Best-of-`n_samples` ADE/FDE per window, grouped by scene density.
///
/// Window `i` draws from stream `i` of a generator seeded with `seed`, so
/// results do not depend on evaluation order and a larger `n_samples`
/// extends each window's draws rather than replacing them.
pub fn evaluate(params: &ModelParams, windows: &[SceneWindow], n_samples: usize, seed: u64, selection: Selection) -> Result<EvalReport> {
    check_horizons(windows, &params.config)?;
    let mut report = EvalReport::new("crowdcast", n_samples);
    for (i, w) in windows.iter().enumerate() {
        let d = to_displacements(w);
        let dist = params.predict(&d.observation())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let best = best_of_n(&dist, &d.origin, &w.future(), n_samples, selection, &mut rng)?;
        report.add_window(density_group(w.scene_density)?, best.ade, best.fde, w.n_peds(), w.t_pred);
    }
    Ok(report)
}

/// Single-prediction scoring for a deterministic predictor.
pub fn evaluate_deterministic(
    name: &str,
    windows: &[SceneWindow],
    predict: impl Fn(&SceneWindow) -> crate::ndnum::Tensor,
) -> Result<EvalReport> {
    let mut report = EvalReport::new(name, 1);
    for w in windows {
        let pred = predict(w);
        let gt = w.future();
        report.add_window(density_group(w.scene_density)?, crate::evalm::ade(&pred, &gt)?, crate::evalm::fde(&pred, &gt)?, w.n_peds(), w.t_pred);
    }
    Ok(report)
}

/// Mean-trajectory prediction of the model, `[t_pred, n, 2]` absolute positions.
pub fn predict_mean(params: &ModelParams, window: &SceneWindow) -> Result<crate::ndnum::Tensor> {
    let d = to_displacements(window);
    let dist = params.predict(&d.observation())?;
    gauss::displacements_to_absolute(&dist.means(), &d.origin)
}
