//! Bivariate Gaussian output head.
//!
//! Raw network channels `(a, b, c, d, e)` decode to `mu = (a, b)`,
//! `sigma = max(exp((c, d)), SIGMA_FLOOR)` and `rho = tanh(e)` clipped to
//! `±RHO_LIMIT`. The same decode runs in plain arithmetic for reporting
//! and on the tape for training, and both give identical values.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::ndnum::{Tape, Tensor};

pub const SIGMA_FLOOR: f64 = 1e-6;
/// `tanh` saturates to exactly 1.0 in f64 around 19; keep |rho| strictly below 1.
pub const RHO_LIMIT: f64 = 1.0 - 1e-9;
pub const RAW_CHANNELS: usize = 5;

/// Distribution parameters for one pedestrian at one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiGaussian {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub rho: f64,
}

impl BiGaussian {
    pub fn is_valid(&self) -> bool {
        [self.mu_x, self.mu_y, self.sigma_x, self.sigma_y, self.rho].iter().all(|v| v.is_finite())
            && self.sigma_x > 0.0
            && self.sigma_y > 0.0
            && self.rho.abs() < 1.0
    }

    /// `-log f(x, y)` of the bivariate normal density.
    pub fn nll(&self, x: f64, y: f64) -> f64 {
        let zx = (x - self.mu_x) / self.sigma_x;
        let zy = (y - self.mu_y) / self.sigma_y;
        let omr = 1.0 - self.rho * self.rho;
        let z = zx * zx + zy * zy - 2.0 * self.rho * zx * zy;
        (2.0 * PI).ln() + self.sigma_x.ln() + self.sigma_y.ln() + 0.5 * omr.ln() + z / (2.0 * omr)
    }
}

/// Per-step, per-pedestrian distributions in displacement space, step-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BiGaussianSeq {
    t_pred: usize,
    n: usize,
    params: Vec<BiGaussian>,
}

impl BiGaussianSeq {
    pub fn new(t_pred: usize, n: usize, params: Vec<BiGaussian>) -> Result<Self> {
        if params.len() != t_pred * n {
            return Err(Error::Shape(format!("{} distributions for {t_pred} steps x {n} pedestrians", params.len())));
        }
        if let Some(bad) = params.iter().find(|p| !p.is_valid()) {
            return Err(Error::Domain(format!("invalid distribution {bad:?}")));
        }
        Ok(Self { t_pred, n, params })
    }

    pub fn t_pred(&self) -> usize {
        self.t_pred
    }

    pub fn n_peds(&self) -> usize {
        self.n
    }

    pub fn get(&self, t: usize, ped: usize) -> &BiGaussian {
        &self.params[t * self.n + ped]
    }

    pub fn iter(&self) -> impl Iterator<Item = &BiGaussian> {
        self.params.iter()
    }

    /// Means as a `[t_pred, n, 2]` displacement tensor.
    pub fn means(&self) -> Tensor {
        let data = self.params.iter().flat_map(|p| [p.mu_x, p.mu_y]).collect();
        Tensor::new(vec![self.t_pred, self.n, 2], data).expect("shape")
    }
}

fn decode_sigma(raw: f64) -> f64 {
    let s = raw.exp();
    if s < SIGMA_FLOOR {
        SIGMA_FLOOR
    } else {
        s
    }
}

fn decode_rho(raw: f64) -> f64 {
    raw.tanh().clamp(-RHO_LIMIT, RHO_LIMIT)
}

fn check_raw(raw: &Tensor) -> Result<(usize, usize)> {
    let s = raw.shape();
    if s.len() != 3 || s[2] != RAW_CHANNELS {
        return Err(Error::Shape(format!("raw head output must be [T, n, 5], got {:?}", s)));
    }
    Ok((s[0], s[1]))
}

/// Decode raw head output `[T, n, 5]` into valid distribution parameters.
pub fn decode_params(raw: &Tensor) -> Result<BiGaussianSeq> {
    let (t_pred, n) = check_raw(raw)?;
    if !raw.is_finite() {
        return Err(Error::Numerics("non-finite raw head output".into()));
    }
    let params = raw
        .data()
        .chunks_exact(RAW_CHANNELS)
        .map(|c| BiGaussian { mu_x: c[0], mu_y: c[1], sigma_x: decode_sigma(c[2]), sigma_y: decode_sigma(c[3]), rho: decode_rho(c[4]) })
        .collect();
    BiGaussianSeq::new(t_pred, n, params)
}

/// Sum and per-point mean of the negative log likelihood.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NllValue {
    pub sum: f64,
    pub count: usize,
}

impl NllValue {
    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }
}

fn check_targets(targets: &Tensor, t_pred: usize, n: usize) -> Result<()> {
    if targets.shape() != [t_pred, n, 2] {
        return Err(Error::Shape(format!("targets {:?} vs distributions [{t_pred}, {n}, 2]", targets.shape())));
    }
    Ok(())
}

/// Negative log likelihood summed over steps and pedestrians.
pub fn nll(params: &BiGaussianSeq, targets: &Tensor) -> Result<NllValue> {
    check_targets(targets, params.t_pred, params.n)?;
    let mut sum = 0.0;
    for (p, xy) in params.params.iter().zip(targets.data().chunks_exact(2)) {
        if !p.is_valid() {
            return Err(Error::Domain(format!("invalid distribution {p:?}")));
        }
        sum += p.nll(xy[0], xy[1]);
    }
    Ok(NllValue { sum, count: params.params.len() })
}

/// Raw-channel selector `[5, 1]` picking channel `c`.
fn selector(rows: usize, c: usize) -> Tensor {
    let mut data = vec![0.0; rows];
    data[c] = 1.0;
    Tensor::new(vec![rows, 1], data).expect("shape")
}

/// Decoded head as tape tensors, each `[T, n, 1]`.
pub struct DecodedHead {
    pub mu_x: Tensor,
    pub mu_y: Tensor,
    pub sigma_x: Tensor,
    pub sigma_y: Tensor,
    pub rho: Tensor,
}

fn floor_sigma(tape: &Tape, raw: &Tensor) -> Result<Tensor> {
    let s = tape.exp(raw)?;
    let mask = s.data().iter().map(|&v| v < SIGMA_FLOOR).collect();
    Ok(tape.masked_fill(&s, mask, SIGMA_FLOOR)?)
}

fn clip_rho(tape: &Tape, raw: &Tensor) -> Result<Tensor> {
    let r = tape.tanh(raw)?;
    let hi = r.data().iter().map(|&v| v > RHO_LIMIT).collect();
    let r = tape.masked_fill(&r, hi, RHO_LIMIT)?;
    let lo = r.data().iter().map(|&v| v < -RHO_LIMIT).collect();
    Ok(tape.masked_fill(&r, lo, -RHO_LIMIT)?)
}

pub fn decode_on_tape(tape: &Tape, raw: &Tensor) -> Result<DecodedHead> {
    check_raw(raw)?;
    let pick = |c: usize| tape.matmul(raw, &selector(RAW_CHANNELS, c));
    Ok(DecodedHead {
        mu_x: pick(0)?,
        mu_y: pick(1)?,
        sigma_x: floor_sigma(tape, &pick(2)?)?,
        sigma_y: floor_sigma(tape, &pick(3)?)?,
        rho: clip_rho(tape, &pick(4)?)?,
    })
}

/// Summed NLL of `targets` `[T, n, 2]` under the raw head output, recorded on `tape`.
pub fn nll_on_tape(tape: &Tape, raw: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let (t_pred, n) = check_raw(raw)?;
    check_targets(targets, t_pred, n)?;
    let h = decode_on_tape(tape, raw)?;
    let tx = tape.matmul(targets, &selector(2, 0))?;
    let ty = tape.matmul(targets, &selector(2, 1))?;

    let log_sx = tape.log(&h.sigma_x)?;
    let log_sy = tape.log(&h.sigma_y)?;
    let zx = tape.mul(&tape.sub(&tx, &h.mu_x)?, &tape.exp(&tape.scale(&log_sx, -1.0)?)?)?;
    let zy = tape.mul(&tape.sub(&ty, &h.mu_y)?, &tape.exp(&tape.scale(&log_sy, -1.0)?)?)?;

    let one_minus_rho2 = tape.add(&tape.scale(&tape.mul(&h.rho, &h.rho)?, -1.0)?, &Tensor::scalar(1.0))?;
    let log_omr = tape.log(&one_minus_rho2)?;
    let inv_omr = tape.exp(&tape.scale(&log_omr, -1.0)?)?;

    let quad = tape.add(&tape.mul(&zx, &zx)?, &tape.mul(&zy, &zy)?)?;
    let cross = tape.scale(&tape.mul(&tape.mul(&h.rho, &zx)?, &zy)?, -2.0)?;
    let z = tape.add(&quad, &cross)?;

    let mut term = tape.add(&log_sx, &log_sy)?;
    term = tape.add(&term, &tape.scale(&log_omr, 0.5)?)?;
    term = tape.add(&term, &tape.scale(&tape.mul(&z, &inv_omr)?, 0.5)?)?;
    term = tape.add(&term, &Tensor::scalar((2.0 * PI).ln()))?;
    Ok(tape.sum(&term)?)
}

/// One draw per pedestrian per step via the Cholesky factor of the covariance.
pub fn sample_displacements<R: Rng + ?Sized>(params: &BiGaussianSeq, rng: &mut R) -> Tensor {
    let mut data = Vec::with_capacity(params.params.len() * 2);
    for p in &params.params {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        data.push(p.mu_x + p.sigma_x * z1);
        data.push(p.mu_y + p.sigma_y * (p.rho * z1 + (1.0 - p.rho * p.rho).sqrt() * z2));
    }
    Tensor::new(vec![params.t_pred, params.n, 2], data).expect("shape")
}

/// `position[t] = origin + sum_{tau <= t} disp[tau]`, for `[T, n, 2]` displacements.
pub fn displacements_to_absolute(disp: &Tensor, origin: &[[f64; 2]]) -> Result<Tensor> {
    let s = disp.shape();
    if s.len() != 3 || s[2] != 2 || s[1] != origin.len() {
        return Err(Error::Shape(format!("displacements {:?} with {} origins", s, origin.len())));
    }
    if origin.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerics("non-finite origin".into()));
    }
    let (t_len, n) = (s[0], s[1]);
    let d = disp.data();
    let mut acc = vec![[0.0f64; 2]; n];
    let mut out = Vec::with_capacity(d.len());
    for t in 0..t_len {
        for (i, a) in acc.iter_mut().enumerate() {
            let k = (t * n + i) * 2;
            a[0] += d[k];
            a[1] += d[k + 1];
            out.push(origin[i][0] + a[0]);
            out.push(origin[i][1] + a[1]);
        }
    }
    Ok(Tensor::new(s.to_vec(), out)?)
}

pub const DISTRIBUTION_CSV_HEADER: &str = "window_id,track_id,step,mu_x,mu_y,sigma_x,sigma_y,rho";

/// Append CSV rows for one window; `step` counts from 1.
pub fn write_distribution_rows(out: &mut String, window_id: usize, track_ids: &[i64], seq: &BiGaussianSeq) {
    for (i, track) in track_ids.iter().enumerate() {
        for t in 0..seq.t_pred {
            let p = seq.get(t, i);
            let _ = writeln!(
                out,
                "{window_id},{track},{},{},{},{},{},{}",
                t + 1,
                p.mu_x,
                p.mu_y,
                p.sigma_x,
                p.sigma_y,
                p.rho
            );
        }
    }
}
