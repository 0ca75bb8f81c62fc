//! Social interaction extractor.
//!
//! Per-step displacements are embedded linearly. Pairwise offsets between
//! pedestrians go through a linear embedding and a two-layer PReLU MLP that
//! emits one unnormalised attention weight per ordered pair. Neighbour
//! embeddings are summed under those weights, concatenated with the
//! pedestrian's own embedding, passed through a width-doubling PReLU layer
//! and max-pooled back to the embedding width.

use rand::Rng;

use crate::config::ModelConfig;
use crate::dataio::Observation;
use crate::ndnum::{NdError, ParamSet, Tape, Tensor};

/// Pool window applied after the fuse layer.
pub const FUSE_POOL: usize = 2;
/// Initial PReLU slope.
pub const PRELU_INIT: f64 = 0.25;

/// Borrowed view of the extractor's parameters.
pub struct SocialWeights<'a> {
    /// `[2, d_e]`
    pub w_e: &'a Tensor,
    /// `[2, d_r]`
    pub w_r: &'a Tensor,
    /// `[d_r, d_h]`, `[d_h]`, slope
    pub w_s1: &'a Tensor,
    pub b_s1: &'a Tensor,
    pub a_s: &'a Tensor,
    /// `[d_h, 1]`, `[1]`
    pub w_s2: &'a Tensor,
    pub b_s2: &'a Tensor,
    /// `[2 d_e, 2 d_e]`, `[2 d_e]`, slope
    pub w_c: &'a Tensor,
    pub b_c: &'a Tensor,
    pub a_c: &'a Tensor,
}

impl<'a> SocialWeights<'a> {
    pub fn from_params(p: &'a ParamSet) -> Result<Self, NdError> {
        Ok(Self {
            w_e: p.get("social.w_e")?,
            w_r: p.get("social.w_r")?,
            w_s1: p.get("social.w_s1")?,
            b_s1: p.get("social.b_s1")?,
            a_s: p.get("social.a_s")?,
            w_s2: p.get("social.w_s2")?,
            b_s2: p.get("social.b_s2")?,
            w_c: p.get("social.w_c")?,
            b_c: p.get("social.b_c")?,
            a_c: p.get("social.a_c")?,
        })
    }
}

/// Glorot-uniform matrix.
pub(crate) fn glorot<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..bound)).collect()).expect("shape")
}

pub(crate) fn init_params<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R, out: &mut ParamSet) {
    let (d_e, d_r, d_h) = (cfg.d_e, cfg.d_r, cfg.d_h);
    out.insert("social.w_e", glorot(rng, &[2, d_e], 2, d_e));
    out.insert("social.w_r", glorot(rng, &[2, d_r], 2, d_r));
    out.insert("social.w_s1", glorot(rng, &[d_r, d_h], d_r, d_h));
    out.insert("social.b_s1", Tensor::zeros(&[d_h]));
    out.insert("social.a_s", Tensor::vector(&[PRELU_INIT]));
    out.insert("social.w_s2", glorot(rng, &[d_h, 1], d_h, 1));
    out.insert("social.b_s2", Tensor::zeros(&[1]));
    out.insert("social.w_c", glorot(rng, &[2 * d_e, 2 * d_e], 2 * d_e, 2 * d_e));
    out.insert("social.b_c", Tensor::zeros(&[2 * d_e]));
    out.insert("social.a_c", Tensor::vector(&[PRELU_INIT]));
}

/// `e = X W_e`: displacements `[T, n, 2]` to embeddings `[T, n, d_e]`.
pub fn embed_positions(tape: &Tape, displacements: &Tensor, w_e: &Tensor) -> Result<Tensor, NdError> {
    tape.matmul(displacements, w_e)
}

/// `d[t][i][j] = p[t][j] - p[t][i]` for absolute positions `[T, n, 2]`.
pub fn pairwise_offsets(positions: &Tensor) -> Result<Tensor, NdError> {
    let s = positions.shape();
    if s.len() != 3 || s[2] != 2 || s[1] == 0 {
        return Err(NdError::Shape { kind: "pairwise-offsets", detail: format!("need [T, n >= 1, 2], got {:?}", s) });
    }
    let (t_len, n) = (s[0], s[1]);
    let mut out = Vec::with_capacity(t_len * n * n * 2);
    // One write pass; the diagonal comes out as p_i - p_i = 0 exactly.
    for frame in positions.data().chunks_exact(n * 2) {
        for me in frame.chunks_exact(2) {
            let (xi, yi) = (me[0], me[1]);
            out.extend(frame.chunks_exact(2).flat_map(|o| [o[0] - xi, o[1] - yi]));
        }
    }
    Tensor::new(vec![t_len, n, n, 2], out)
}

fn self_mask(t_len: usize, n: usize) -> Vec<bool> {
    (0..t_len * n * n).map(|k| (k % (n * n)) / n == k % n).collect()
}

/// Zero every `r[t][i][i]`; no gradient reaches the diagonal.
pub fn mask_self(tape: &Tape, r: &Tensor) -> Result<Tensor, NdError> {
    let s = r.shape();
    if s.len() != 3 || s[1] != s[2] {
        return Err(NdError::Shape { kind: "mask-self", detail: format!("need [T, n, n], got {:?}", s) });
    }
    tape.masked_fill(r, self_mask(s[0], s[1]), 0.0)
}

/// Attention weights `[T, n, n]` from offsets `[T, n, n, 2]`, diagonal zero.
pub fn interaction_weights(tape: &Tape, offsets: &Tensor, w: &SocialWeights<'_>) -> Result<Tensor, NdError> {
    let s = offsets.shape();
    if s.len() != 4 || s[3] != 2 {
        return Err(NdError::Shape { kind: "interaction-weights", detail: format!("need [T, n, n, 2], got {:?}", s) });
    }
    let embedded = tape.matmul(offsets, w.w_r)?;
    let hidden = tape.prelu(&tape.add(&tape.matmul(&embedded, w.w_s1)?, w.b_s1)?, w.a_s)?;
    let score = tape.add(&tape.matmul(&hidden, w.w_s2)?, w.b_s2)?;
    let r = tape.reshape(&score, &s[..3])?;
    mask_self(tape, &r)
}

/// `f[t][i] = sum_j r[t][i][j] e[t][j]`.
///
/// The sum is evaluated in an order that does not depend on how pedestrians
/// are numbered, so relabelling them permutes the output bit-for-bit.
pub fn aggregate_social(tape: &Tape, e: &Tensor, r: &Tensor) -> Result<Tensor, NdError> {
    tape.matmul_unordered(r, e)
}

/// `s = maxpool(PReLU([e | f] W_c + b_c))`, back to width `d_e`.
pub fn fuse_features(tape: &Tape, e: &Tensor, f: &Tensor, w: &SocialWeights<'_>) -> Result<Tensor, NdError> {
    let joined = tape.concat(&[e, f], 2)?;
    let mixed = tape.prelu(&tape.add(&tape.matmul(&joined, w.w_c)?, w.b_c)?, w.a_c)?;
    tape.max_pool_channel(&mixed, FUSE_POOL)
}

/// Intermediate tensors of one extractor pass.
pub struct SocialFeatures {
    pub embedded: Tensor,
    pub weights: Tensor,
    pub aggregated: Tensor,
    pub fused: Tensor,
}

pub fn social_forward(tape: &Tape, obs: &Observation, w: &SocialWeights<'_>) -> Result<SocialFeatures, NdError> {
    let embedded = embed_positions(tape, &obs.displacements, w.w_e)?;
    let offsets = pairwise_offsets(&obs.positions)?;
    let weights = interaction_weights(tape, &offsets, w)?;
    let aggregated = aggregate_social(tape, &embedded, &weights)?;
    let fused = fuse_features(tape, &embedded, &aggregated, w)?;
    Ok(SocialFeatures { embedded, weights, aggregated, fused })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn params(seed: u64) -> ParamSet {
        let mut p = ParamSet::new();
        let cfg = ModelConfig { d_e: 4, d_r: 3, d_h: 5, ..ModelConfig::default() };
        init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(seed), &mut p);
        p
    }

    #[test]
    fn embedding_examples() {
        let tape = Tape::new();
        let w = random(&mut ChaCha8Rng::seed_from_u64(1), &[2, 4]);
        let e = embed_positions(&tape, &Tensor::zeros(&[1, 1, 2]), &w).unwrap();
        assert!(e.data().iter().all(|&v| v == 0.0));
        let eye = Tensor::matrix(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let x = Tensor::new(vec![1, 1, 2], vec![1.0, 2.0]).unwrap();
        assert_eq!(embed_positions(&tape, &x, &eye).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn embedding_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, &[5, 3, 2]);
        let w = random(&mut rng, &[2, 7]);
        let e = embed_positions(&Tape::new(), &x, &w).unwrap();
        for t in 0..5 {
            for i in 0..3 {
                for c in 0..7 {
                    let mut acc = 0.0;
                    for k in 0..2 {
                        acc += x.at(&[t, i, k]) * w.at(&[k, c]);
                    }
                    assert!((e.at(&[t, i, c]) - acc).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn offsets_examples() {
        let p = Tensor::new(vec![1, 2, 2], vec![0.0, 0.0, 3.0, 4.0]).unwrap();
        let d = pairwise_offsets(&p).unwrap();
        assert_eq!((d.at(&[0, 0, 1, 0]), d.at(&[0, 0, 1, 1])), (3.0, 4.0));
        assert_eq!((d.at(&[0, 1, 0, 0]), d.at(&[0, 1, 0, 1])), (-3.0, -4.0));
        let single = pairwise_offsets(&Tensor::new(vec![4, 1, 2], vec![1.0; 8]).unwrap()).unwrap();
        assert_eq!(single.shape(), &[4, 1, 1, 2]);
        assert!(single.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn offsets_antisymmetric() {
        let p = random(&mut ChaCha8Rng::seed_from_u64(3), &[3, 5, 2]);
        let d = pairwise_offsets(&p).unwrap();
        for t in 0..3 {
            for i in 0..5 {
                for j in 0..5 {
                    for c in 0..2 {
                        assert_eq!(d.at(&[t, i, j, c]), -d.at(&[t, j, i, c]));
                    }
                }
            }
        }
    }

    #[test]
    fn zero_output_layer_gives_zero_weights() {
        let mut p = params(4);
        p.insert("social.w_s2", Tensor::zeros(&[5, 1]));
        let w = SocialWeights::from_params(&p).unwrap();
        let d = pairwise_offsets(&random(&mut ChaCha8Rng::seed_from_u64(5), &[2, 3, 2])).unwrap();
        let r = interaction_weights(&Tape::new(), &d, &w).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn equal_offsets_equal_weights() {
        let p = params(6);
        let w = SocialWeights::from_params(&p).unwrap();
        // ped 1 - ped 0 == ped 3 - ped 2
        let pos = Tensor::new(vec![1, 4, 2], vec![0.0, 0.0, 1.0, 2.0, 5.0, 5.0, 6.0, 7.0]).unwrap();
        let r = interaction_weights(&Tape::new(), &pairwise_offsets(&pos).unwrap(), &w).unwrap();
        assert_eq!(r.at(&[0, 0, 1]), r.at(&[0, 2, 3]));
        assert_eq!(r.at(&[0, 1, 0]), r.at(&[0, 3, 2]));
        for i in 0..4 {
            assert_eq!(r.at(&[0, i, i]), 0.0);
        }
    }

    #[test]
    fn aggregate_examples() {
        let tape = Tape::new();
        let e = Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let f = aggregate_social(&tape, &e, &Tensor::zeros(&[1, 1, 1])).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));

        let e = Tensor::new(vec![1, 2, 2], vec![9.0, 9.0, 1.0, 2.0]).unwrap();
        let r = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let f = aggregate_social(&tape, &e, &r).unwrap();
        assert_eq!(&f.data()[..2], &[1.0, 2.0]);
    }

    #[test]
    fn fuse_zero_case() {
        let mut p = params(7);
        p.insert("social.b_c", Tensor::zeros(&[8]));
        let w = SocialWeights::from_params(&p).unwrap();
        let z = Tensor::zeros(&[2, 3, 4]);
        let s = fuse_features(&Tape::new(), &z, &z, &w).unwrap();
        assert_eq!(s.shape(), &[2, 3, 4]);
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fuse_identity_case() {
        // W_c copies e into the first half; f = 0, so s = max over adjacent pairs of PReLU(e).
        let mut p = params(8);
        let mut wc = vec![0.0; 64];
        for k in 0..4 {
            wc[k * 8 + k] = 1.0;
        }
        p.insert("social.w_c", Tensor::new(vec![8, 8], wc).unwrap());
        let w = SocialWeights::from_params(&p).unwrap();
        let e = Tensor::new(vec![1, 1, 4], vec![1.0, 3.0, -2.0, -4.0]).unwrap();
        let s = fuse_features(&Tape::new(), &e, &Tensor::zeros(&[1, 1, 4]), &w).unwrap();
        // pairs: (1, 3) -> 3; (-0.5, -1) -> -0.5; (0, 0) -> 0; (0, 0) -> 0
        assert_eq!(s.data(), &[3.0, -0.5, 0.0, 0.0]);
    }
}
