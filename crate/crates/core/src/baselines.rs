//! Reference predictors and the rival graph-preprocessing path used for timing.

use std::hint::black_box;
use std::time::Instant;

use crate::dataio::SceneWindow;
use crate::error::{Error, Result};
use crate::ndnum::Tensor;
use crate::social::pairwise_offsets;

fn check_observed(observed: &Tensor) -> Result<(usize, usize)> {
    let s = observed.shape();
    if s.len() != 3 || s[2] != 2 || s[0] < 2 || s[1] == 0 {
        return Err(Error::Shape(format!("observed positions must be [t_obs >= 2, n >= 1, 2], got {:?}", s)));
    }
    Ok((s[0], s[1]))
}

/// Per-pedestrian, per-axis least-squares line through the observed steps,
/// evaluated at the next `t_pred` steps. Output `[t_pred, n, 2]`.
pub fn linear_regression(observed: &Tensor, t_pred: usize) -> Result<Tensor> {
    let (t_obs, n) = check_observed(observed)?;
    let p = observed.data();
    let t_mean = (t_obs - 1) as f64 / 2.0;
    let sxx: f64 = (0..t_obs).map(|t| (t as f64 - t_mean).powi(2)).sum();
    let mut out = vec![0.0; t_pred * n * 2];
    for i in 0..n {
        for axis in 0..2 {
            let v = |t: usize| p[(t * n + i) * 2 + axis];
            let mean = (0..t_obs).map(v).sum::<f64>() / t_obs as f64;
            let sxy: f64 = (0..t_obs).map(|t| (t as f64 - t_mean) * (v(t) - mean)).sum();
            let slope = sxy / sxx;
            for k in 0..t_pred {
                out[(k * n + i) * 2 + axis] = mean + slope * ((t_obs + k) as f64 - t_mean);
            }
        }
    }
    Ok(Tensor::new(vec![t_pred, n, 2], out)?)
}

/// Last observed displacement repeated over the horizon. Output `[t_pred, n, 2]`.
pub fn constant_velocity(observed: &Tensor, t_pred: usize) -> Result<Tensor> {
    let (t_obs, n) = check_observed(observed)?;
    let p = observed.data();
    let mut out = vec![0.0; t_pred * n * 2];
    for i in 0..n {
        for axis in 0..2 {
            let last = p[((t_obs - 1) * n + i) * 2 + axis];
            let step = last - p[((t_obs - 2) * n + i) * 2 + axis];
            for k in 0..t_pred {
                out[(k * n + i) * 2 + axis] = last + (k + 1) as f64 * step;
            }
        }
    }
    Ok(Tensor::new(vec![t_pred, n, 2], out)?)
}

pub fn linear_regression_predict(window: &SceneWindow) -> Tensor {
    linear_regression(&window.observed(), window.t_pred).expect("validated window")
}

pub fn constant_velocity_predict(window: &SceneWindow) -> Tensor {
    constant_velocity(&window.observed(), window.t_pred).expect("validated window")
}

/// Distance below which the inverse-distance kernel is clamped.
pub const KERNEL_EPS: f64 = 1e-6;

fn inverse_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = ((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1])).sqrt();
    1.0 / d.max(KERNEL_EPS)
}

/// `a[t][i][j] = 1 / |p_i - p_j|`, with 1 on the diagonal, for `[T, n, 2]` input.
pub fn stgcnn_kernel(positions: &Tensor) -> Result<Tensor> {
    let s = positions.shape();
    if s.len() != 3 || s[2] != 2 || s[1] == 0 {
        return Err(Error::Shape(format!("kernel input must be [T, n >= 1, 2], got {:?}", s)));
    }
    let (t_len, n) = (s[0], s[1]);
    let p = positions.data();
    let at = |t: usize, i: usize| [p[(t * n + i) * 2], p[(t * n + i) * 2 + 1]];
    let mut a = vec![0.0; t_len * n * n];
    for t in 0..t_len {
        let base = t * n * n;
        for i in 0..n {
            a[base + i * n + i] = 1.0;
            for j in i + 1..n {
                let w = inverse_distance(at(t, i), at(t, j));
                a[base + i * n + j] = w;
                a[base + j * n + i] = w;
            }
        }
    }
    Ok(Tensor::new(vec![t_len, n, n], a)?)
}

/// Per-step vertex sets plus the kernel adjacency, as the graph-based rival builds them.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialGraph {
    /// `vertices[t][i]` is pedestrian `i`'s location at step `t`.
    pub vertices: Vec<Vec<[f64; 2]>>,
    /// `[T, n, n]`
    pub adjacency: Tensor,
    /// Symmetric normalised Laplacian of each step's adjacency, `[T, n, n]`.
    pub laplacian: Tensor,
}

/// `L = D^-1/2 (D - A) D^-1/2` per step, with `D` the row sums of `A`
/// (self-loops included).
fn normalized_laplacian(a: &[f64], t_len: usize, n: usize) -> Vec<f64> {
    let mut l = vec![0.0; a.len()];
    let mut deg = vec![0.0; n];
    let mut inv_sqrt_deg = vec![0.0; n];
    for t in 0..t_len {
        let block = &a[t * n * n..(t + 1) * n * n];
        for i in 0..n {
            deg[i] = block[i * n..(i + 1) * n].iter().sum();
            inv_sqrt_deg[i] = if deg[i] > 0.0 { 1.0 / deg[i].sqrt() } else { 0.0 };
        }
        let out = &mut l[t * n * n..(t + 1) * n * n];
        for i in 0..n {
            for j in 0..n {
                let diag = if i == j { deg[i] } else { 0.0 };
                out[i * n + j] = (diag - block[i * n + j]) * inv_sqrt_deg[i] * inv_sqrt_deg[j];
            }
        }
    }
    l
}

/// Copy every location into vertex storage, compute the adjacency from the
/// copies, then normalise it into a graph Laplacian.
pub fn build_graph_from(positions: &Tensor) -> Result<SpatialGraph> {
    let s = positions.shape();
    if s.len() != 3 || s[2] != 2 || s[1] == 0 {
        return Err(Error::Shape(format!("graph input must be [T, n >= 1, 2], got {:?}", s)));
    }
    let (t_len, n) = (s[0], s[1]);
    let p = positions.data();
    let mut vertices = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut step = Vec::with_capacity(n);
        for i in 0..n {
            step.push([p[(t * n + i) * 2], p[(t * n + i) * 2 + 1]]);
        }
        vertices.push(step);
    }
    let mut a = vec![0.0; t_len * n * n];
    for (t, step) in vertices.iter().enumerate() {
        let base = t * n * n;
        for i in 0..n {
            a[base + i * n + i] = 1.0;
            for j in i + 1..n {
                let w = inverse_distance(step[i], step[j]);
                a[base + i * n + j] = w;
                a[base + j * n + i] = w;
            }
        }
    }
    let laplacian = normalized_laplacian(&a, t_len, n);
    Ok(SpatialGraph { vertices, adjacency: Tensor::new(vec![t_len, n, n], a)?, laplacian: Tensor::new(vec![t_len, n, n], laplacian)? })
}

/// Graph over all steps of a window's absolute positions.
pub fn build_graph(window: &SceneWindow) -> SpatialGraph {
    let mut all = window.observed().data().to_vec();
    all.extend_from_slice(window.future().data());
    let t = Tensor::new(vec![window.len(), window.n_peds(), 2], all).expect("window shape");
    build_graph_from(&t).expect("validated window")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PreprocessMode {
    /// Vertex copy, inverse-distance adjacency and its normalised Laplacian.
    Graph,
    /// Raw pairwise offsets fed straight to the learned extractor.
    Direct,
}

impl std::str::FromStr for PreprocessMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "graph" => Ok(Self::Graph),
            "direct" => Ok(Self::Direct),
            other => Err(Error::Input(format!("unknown preprocessing mode {other:?} (expected graph or direct)"))),
        }
    }
}

impl std::fmt::Display for PreprocessMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Graph => "graph",
            Self::Direct => "direct",
        })
    }
}

/// Per-sequence wall-clock statistics in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimingStats {
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
}

impl TimingStats {
    /// Nearest-rank percentiles over per-sequence samples.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() || samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("timing needs at least one finite sample".into()));
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let pick = |q: f64| s[((q * (s.len() - 1) as f64).round() as usize).min(s.len() - 1)];
        Ok(Self { median_ms: pick(0.5), p10_ms: pick(0.1), p90_ms: pick(0.9) })
    }
}

pub const WARMUP_RUNS: usize = 2;
pub const MIN_REPEATS: usize = 5;

/// Time `f` over every input, `repeats` times after discarding warm-up passes.
/// Each sample is one pass over the inputs divided by the number of inputs.
pub fn time_per_sequence<T>(inputs: &[T], repeats: usize, mut f: impl FnMut(&T)) -> Result<TimingStats> {
    if inputs.is_empty() {
        return Err(Error::Input("no sequences to time".into()));
    }
    if repeats < MIN_REPEATS {
        return Err(Error::Input(format!("need at least {MIN_REPEATS} repeats, got {repeats}")));
    }
    let mut samples = Vec::with_capacity(repeats);
    for run in 0..WARMUP_RUNS + repeats {
        let start = Instant::now();
        for x in inputs {
            f(x);
        }
        if run >= WARMUP_RUNS {
            samples.push(start.elapsed().as_secs_f64() * 1e3 / inputs.len() as f64);
        }
    }
    TimingStats::from_samples(&samples)
}

/// Pre-processing cost per sequence for `[T, n, 2]` position tensors.
pub fn bench_preprocess(sequences: &[Tensor], mode: PreprocessMode, repeats: usize) -> Result<TimingStats> {
    for s in sequences {
        if s.shape().len() != 3 || s.shape()[2] != 2 || s.shape()[1] == 0 {
            return Err(Error::Shape(format!("benchmark input must be [T, n >= 1, 2], got {:?}", s.shape())));
        }
    }
    match mode {
        PreprocessMode::Graph => time_per_sequence(sequences, repeats, |s| {
            black_box(build_graph_from(black_box(s)).expect("checked shape"));
        }),
        PreprocessMode::Direct => time_per_sequence(sequences, repeats, |s| {
            black_box(pairwise_offsets(black_box(s)).expect("checked shape"));
        }),
    }
}
