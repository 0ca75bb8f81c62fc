//! Temporal convolution stack and time extrapolator, plus the full model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::dataio::{DisplacementWindow, Observation};
use crate::error::{Error, Result};
use crate::gauss::{self, BiGaussianSeq, RAW_CHANNELS};
use crate::ndnum::{Checkpoint, NdError, ParamSet, Tape, Tensor};
use crate::social::{self, glorot, SocialWeights, PRELU_INIT};

/// Learnable weights plus the architecture they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: ParamSet,
}

/// Scale applied to the Glorot-initialised output head.
pub const HEAD_INIT_SCALE: f64 = 1.0;

fn tcn_names(layer: usize) -> [String; 3] {
    [format!("tcn.{layer}.w"), format!("tcn.{layer}.b"), format!("tcn.{layer}.a")]
}

impl ModelParams {
    /// Fresh parameters: Glorot-uniform matrices (the head scaled down), zero
    /// biases, PReLU slopes 0.25.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        social::init_params(config, &mut rng, &mut p);
        let (d, k) = (config.d_e, config.kernel_size);
        for layer in 0..config.tcn_layers {
            let [w, b, a] = tcn_names(layer);
            p.insert(w, glorot(&mut rng, &[k, d, d], k * d, k * d));
            p.insert(b, Tensor::zeros(&[d]));
            p.insert(a, Tensor::vector(&[PRELU_INIT]));
        }
        let (t_obs, t_pred, kx) = (config.t_obs, config.t_pred, config.extrap_kernel);
        p.insert("extrap.w", glorot(&mut rng, &[t_pred, t_obs, kx], t_obs * kx, t_pred * kx));
        p.insert("extrap.b", Tensor::zeros(&[t_pred]));
        p.insert("extrap.a", Tensor::vector(&[PRELU_INIT]));
        // A small head starts every prediction near mu = 0, sigma = 1, rho = 0.
        p.insert("head.w", glorot(&mut rng, &[d, RAW_CHANNELS], d, RAW_CHANNELS).map(|v| v * HEAD_INIT_SCALE));
        p.insert("head.b", Tensor::zeros(&[RAW_CHANNELS]));
        Ok(Self { config: config.clone(), tensors: p })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint { meta: self.config.to_string(), params: self.tensors.detach() }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let config = ModelConfig::parse(&ck.meta)?;
        let expected = Self::init(&config, 0)?;
        for (name, t) in expected.tensors.iter() {
            let got = ck.params.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::Shape(format!("checkpoint tensor {name}: {:?}, config needs {:?}", got.shape(), t.shape())));
            }
        }
        if ck.params.len() != expected.tensors.len() {
            return Err(Error::Input(format!(
                "checkpoint holds {} tensors, config needs {}",
                ck.params.len(),
                expected.tensors.len()
            )));
        }
        Ok(Self { config, tensors: ck.params })
    }

    /// Distribution over the prediction horizon for one observation.
    pub fn predict(&self, obs: &Observation) -> Result<BiGaussianSeq> {
        let tape = Tape::new();
        let raw = model_forward(&tape, obs, &self.config, &self.tensors)?;
        gauss::decode_params(&raw)
    }
}

/// One residual temporal block: `PReLU(conv(x) + b) [+ x]`.
fn tcn_block(tape: &Tape, x: &Tensor, w: &Tensor, b: &Tensor, a: &Tensor, residual: bool) -> Result<Tensor, NdError> {
    let y = tape.prelu(&tape.conv_temporal(x, w, Some(b))?, a)?;
    if residual {
        tape.add(&y, x)
    } else {
        Ok(y)
    }
}

/// Temporal convolution stack over `[T_obs, n, d_e]`; length preserved.
pub fn tcn_forward(tape: &Tape, s: &Tensor, cfg: &ModelConfig, p: &ParamSet) -> Result<Tensor, NdError> {
    let mut h = s.clone();
    for layer in 0..cfg.tcn_layers {
        let [w, b, a] = tcn_names(layer);
        h = tcn_block(tape, &h, p.get(&w)?, p.get(&b)?, p.get(&a)?, cfg.tcn_residual)?;
    }
    Ok(h)
}

/// Map `[T_obs, n, d_e]` to raw head output `[T_pred, n, 5]` in one shot.
pub fn extrapolate(tape: &Tape, h: &Tensor, p: &ParamSet) -> Result<Tensor, NdError> {
    let z = tape.conv_channel_time(h, p.get("extrap.w")?, Some(p.get("extrap.b")?))?;
    let z = tape.prelu(&z, p.get("extrap.a")?)?;
    tape.add(&tape.matmul(&z, p.get("head.w")?)?, p.get("head.b")?)
}

/// Full forward pass: social extractor, temporal stack, extrapolator.
pub fn model_forward(tape: &Tape, obs: &Observation, cfg: &ModelConfig, p: &ParamSet) -> Result<Tensor> {
    if obs.t_obs() != cfg.t_obs {
        return Err(Error::Mismatch(format!("observation has {} steps, model expects {}", obs.t_obs(), cfg.t_obs)));
    }
    let w = SocialWeights::from_params(p)?;
    let s = social::social_forward(tape, obs, &w)?.fused;
    let h = tcn_forward(tape, &s, cfg, p)?;
    Ok(extrapolate(tape, &h, p)?)
}

/// Summed NLL of a window's future displacements, recorded on `tape`.
pub fn window_loss(tape: &Tape, window: &DisplacementWindow, cfg: &ModelConfig, p: &ParamSet) -> Result<(Tensor, usize)> {
    if window.window.t_pred != cfg.t_pred {
        return Err(Error::Mismatch(format!("window horizon {} vs model horizon {}", window.window.t_pred, cfg.t_pred)));
    }
    let raw = model_forward(tape, &window.observation(), cfg, p)?;
    let target = window.target();
    let count = target.len() / 2;
    Ok((gauss::nll_on_tape(tape, &raw, &target)?, count))
}
