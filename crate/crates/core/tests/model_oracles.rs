//! Layer outputs against naive loop implementations, and the symmetry
//! properties of the full model.

use crowdcast::config::ModelConfig;
use crowdcast::dataio::{quantize, Observation};
use crowdcast::ndnum::{ParamSet, Tape, Tensor};
use crowdcast::seqnet::{extrapolate, model_forward, tcn_forward, ModelParams};
use crowdcast::social::{
    aggregate_social, fuse_features, interaction_weights, pairwise_offsets, social_forward, SocialWeights, FUSE_POOL,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-12;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Random positions on the storage grid, as every loaded or generated trajectory is.
fn grid_positions(rng: &mut ChaCha8Rng, t: usize, n: usize, extent: f64) -> Tensor {
    let data = (0..t * n * 2).map(|_| quantize(rng.random_range(-extent..extent))).collect();
    Tensor::new(vec![t, n, 2], data).unwrap()
}

fn small_config() -> ModelConfig {
    ModelConfig { d_e: 6, d_r: 4, d_h: 5, ..ModelConfig::default() }
}

/// Parameters with every bias and slope randomised too, so no term hides behind a zero.
fn busy_params(cfg: &ModelConfig, seed: u64) -> ParamSet {
    let base = ModelParams::init(cfg, seed).unwrap().tensors;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut out = ParamSet::new();
    for (name, t) in base.iter() {
        let v = if name.ends_with(".a") || name.contains(".a_") {
            random(&mut rng, t.shape(), 1.0).map(|v| 0.5 * v.abs())
        } else if name.ends_with(".b") || name.contains(".b_") {
            random(&mut rng, t.shape(), 0.3)
        } else {
            t.clone()
        };
        out.insert(name, v);
    }
    out
}

fn prelu(x: f64, a: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        a * x
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * (1.0 + b.abs())
}

#[test]
fn pairwise_offsets_match_definition_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = random(&mut rng, &[4, 5, 2], 10.0);
    let d = pairwise_offsets(&p).unwrap();
    assert_eq!(d.shape(), &[4, 5, 5, 2]);
    for t in 0..4 {
        for i in 0..5 {
            for j in 0..5 {
                for c in 0..2 {
                    assert_eq!(d.at(&[t, i, j, c]), p.at(&[t, j, c]) - p.at(&[t, i, c]));
                }
            }
        }
    }
}

#[test]
fn interaction_weights_match_per_pair_mlp() {
    let cfg = small_config();
    for seed in 0..20 {
        let p = busy_params(&cfg, seed);
        let w = SocialWeights::from_params(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = 1 + seed as usize % 5;
        let offsets = pairwise_offsets(&random(&mut rng, &[3, n, 2], 5.0)).unwrap();
        let r = interaction_weights(&Tape::new(), &offsets, &w).unwrap();
        assert_eq!(r.shape(), &[3, n, n]);
        let a_s = w.a_s.data()[0];
        for t in 0..3 {
            for i in 0..n {
                for j in 0..n {
                    let expected = if i == j {
                        0.0
                    } else {
                        let d = [offsets.at(&[t, i, j, 0]), offsets.at(&[t, i, j, 1])];
                        let emb: Vec<f64> = (0..cfg.d_r).map(|k| d[0] * w.w_r.at(&[0, k]) + d[1] * w.w_r.at(&[1, k])).collect();
                        let mut score = w.b_s2.data()[0];
                        for h in 0..cfg.d_h {
                            let pre = w.b_s1.data()[h] + (0..cfg.d_r).map(|k| emb[k] * w.w_s1.at(&[k, h])).sum::<f64>();
                            score += prelu(pre, a_s) * w.w_s2.at(&[h, 0]);
                        }
                        score
                    };
                    let got = r.at(&[t, i, j]);
                    assert!(close(got, expected), "seed {seed} t{t} {i}->{j}: {got} vs {expected}");
                }
            }
        }
    }
}

#[test]
fn aggregation_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in 1..7 {
        let e = random(&mut rng, &[4, n, 3], 2.0);
        let r = random(&mut rng, &[4, n, n], 2.0);
        let f = aggregate_social(&Tape::new(), &e, &r).unwrap();
        for t in 0..4 {
            for i in 0..n {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += r.at(&[t, i, j]) * e.at(&[t, j, c]);
                    }
                    assert!(close(f.at(&[t, i, c]), acc));
                }
            }
        }
    }
}

#[test]
fn fuse_matches_concat_prelu_maxpool() {
    let cfg = small_config();
    let p = busy_params(&cfg, 3);
    let w = SocialWeights::from_params(&p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (t_len, n, d) = (2, 3, cfg.d_e);
    let e = random(&mut rng, &[t_len, n, d], 1.0);
    let f = random(&mut rng, &[t_len, n, d], 1.0);
    let s = fuse_features(&Tape::new(), &e, &f, &w).unwrap();
    assert_eq!(s.shape(), &[t_len, n, d]);
    let a_c = w.a_c.data()[0];
    for t in 0..t_len {
        for i in 0..n {
            let joined: Vec<f64> = (0..d).map(|c| e.at(&[t, i, c])).chain((0..d).map(|c| f.at(&[t, i, c]))).collect();
            let mixed: Vec<f64> = (0..2 * d)
                .map(|o| prelu(w.b_c.data()[o] + (0..2 * d).map(|k| joined[k] * w.w_c.at(&[k, o])).sum::<f64>(), a_c))
                .collect();
            for k in 0..d {
                let expected = mixed[k * FUSE_POOL..(k + 1) * FUSE_POOL].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                assert!(close(s.at(&[t, i, k]), expected));
            }
        }
    }
}

#[test]
fn temporal_stack_matches_naive_convolution() {
    let cfg = ModelConfig { tcn_layers: 2, ..small_config() };
    let p = busy_params(&cfg, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (t_len, n, d, k) = (8, 3, cfg.d_e, cfg.kernel_size);
    let x = random(&mut rng, &[t_len, n, d], 1.0);
    let got = tcn_forward(&Tape::new(), &x, &cfg, &p).unwrap();

    let mut h: Vec<f64> = x.data().to_vec();
    for layer in 0..cfg.tcn_layers {
        let w = p.get(&format!("tcn.{layer}.w")).unwrap();
        let b = p.get(&format!("tcn.{layer}.b")).unwrap();
        let a = p.get(&format!("tcn.{layer}.a")).unwrap().data()[0];
        let mut next = vec![0.0; h.len()];
        for t in 0..t_len {
            for i in 0..n {
                for o in 0..d {
                    let mut acc = b.data()[o];
                    for kk in 0..k {
                        let s = t as isize + kk as isize - (k / 2) as isize;
                        if s < 0 || s >= t_len as isize {
                            continue;
                        }
                        for c in 0..d {
                            acc += h[(s as usize * n + i) * d + c] * w.at(&[kk, c, o]);
                        }
                    }
                    let idx = (t * n + i) * d + o;
                    next[idx] = prelu(acc, a) + if cfg.tcn_residual { h[idx] } else { 0.0 };
                }
            }
        }
        h = next;
    }
    for (g, e) in got.data().iter().zip(&h) {
        assert!(close(*g, *e), "{g} vs {e}");
    }
}

#[test]
fn extrapolator_matches_naive_time_channel_convolution() {
    for t_pred in [12, 20] {
        let cfg = ModelConfig { t_pred, ..small_config() };
        let p = busy_params(&cfg, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (t_obs, n, d, kx) = (cfg.t_obs, 2, cfg.d_e, cfg.extrap_kernel);
        let h = random(&mut rng, &[t_obs, n, d], 1.0);
        let got = extrapolate(&Tape::new(), &h, &p).unwrap();
        assert_eq!(got.shape(), &[t_pred, n, 5]);
        let (w, b) = (p.get("extrap.w").unwrap(), p.get("extrap.b").unwrap());
        let a = p.get("extrap.a").unwrap().data()[0];
        let (hw, hb) = (p.get("head.w").unwrap(), p.get("head.b").unwrap());
        for to in 0..t_pred {
            for i in 0..n {
                let z: Vec<f64> = (0..d)
                    .map(|c| {
                        let mut acc = b.data()[to];
                        for ti in 0..t_obs {
                            for kk in 0..kx {
                                let cc = c as isize + kk as isize - (kx / 2) as isize;
                                if cc >= 0 && (cc as usize) < d {
                                    acc += w.at(&[to, ti, kk]) * h.at(&[ti, i, cc as usize]);
                                }
                            }
                        }
                        prelu(acc, a)
                    })
                    .collect();
                for o in 0..5 {
                    let expected = hb.data()[o] + (0..d).map(|c| z[c] * hw.at(&[c, o])).sum::<f64>();
                    assert!(close(got.at(&[to, i, o]), expected));
                }
            }
        }
    }
}

fn permute_steps(x: &Tensor, perm: &[usize]) -> Tensor {
    let s = x.shape();
    let (t_len, n, c) = (s[0], s[1], s[2]);
    let mut out = Vec::with_capacity(x.len());
    for t in 0..t_len {
        for &p in perm {
            out.extend_from_slice(&x.data()[(t * n + p) * c..(t * n + p + 1) * c]);
        }
    }
    Tensor::new(s.to_vec(), out).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn relabelling_pedestrians_permutes_the_output(seed in any::<u64>(), n in 1usize..7) {
        let cfg = ModelConfig::default();
        let params = ModelParams::init(&cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions = grid_positions(&mut rng, cfg.t_obs, n, 20.0);
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);

        let obs = Observation::from_positions(positions.clone()).unwrap();
        let obs_p = Observation::from_positions(permute_steps(&positions, &perm)).unwrap();
        let out = model_forward(&Tape::new(), &obs, &cfg, &params.tensors).unwrap();
        let out_p = model_forward(&Tape::new(), &obs_p, &cfg, &params.tensors).unwrap();
        let expected = permute_steps(&out, &perm);
        prop_assert_eq!(out_p.data(), expected.data());
    }

    #[test]
    fn shifting_the_scene_leaves_interaction_weights_unchanged(seed in any::<u64>(), n in 1usize..7) {
        let cfg = ModelConfig::default();
        let params = ModelParams::init(&cfg, seed).unwrap();
        let w = SocialWeights::from_params(&params.tensors).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions = grid_positions(&mut rng, cfg.t_obs, n, 50.0);
        let (dx, dy) = (quantize(rng.random_range(-1e3..1e3)), quantize(rng.random_range(-1e3..1e3)));
        let shifted = Tensor::new(
            positions.shape().to_vec(),
            positions.data().chunks_exact(2).flat_map(|p| [p[0] + dx, p[1] + dy]).collect(),
        ).unwrap();

        let a = social_forward(&Tape::new(), &Observation::from_positions(positions).unwrap(), &w).unwrap();
        let b = social_forward(&Tape::new(), &Observation::from_positions(shifted).unwrap(), &w).unwrap();
        prop_assert_eq!(a.weights.data(), b.weights.data());
        prop_assert_eq!(a.fused.data(), b.fused.data());
    }
}
