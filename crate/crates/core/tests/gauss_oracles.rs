//! Density head against the covariance-matrix form of the bivariate normal.

use std::f64::consts::PI;

use crowdcast::gauss::{decode_params, nll, nll_on_tape, sample_displacements, BiGaussian, BiGaussianSeq, RHO_LIMIT, SIGMA_FLOOR};
use crowdcast::ndnum::{Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `-log N(d; mu, Sigma)` through an explicit 2x2 determinant and inverse.
fn covariance_nll(p: &BiGaussian, x: f64, y: f64) -> f64 {
    let (sxx, syy, sxy) = (p.sigma_x * p.sigma_x, p.sigma_y * p.sigma_y, p.rho * p.sigma_x * p.sigma_y);
    let det = sxx * syy - sxy * sxy;
    let (ixx, iyy, ixy) = (syy / det, sxx / det, -sxy / det);
    let (dx, dy) = (x - p.mu_x, y - p.mu_y);
    let maha = dx * dx * ixx + 2.0 * dx * dy * ixy + dy * dy * iyy;
    (2.0 * PI).ln() + 0.5 * det.ln() + 0.5 * maha
}

fn g(mu_x: f64, mu_y: f64, sigma_x: f64, sigma_y: f64, rho: f64) -> BiGaussian {
    BiGaussian { mu_x, mu_y, sigma_x, sigma_y, rho }
}

#[test]
fn closed_form_points() {
    let at_mean = g(0.3, -0.2, 1.0, 1.0, 0.0).nll(0.3, -0.2);
    assert!((at_mean - (2.0 * PI).ln()).abs() < 1e-9);
    let correlated = g(0.0, 0.0, 1.0, 1.0, 0.5).nll(0.0, 0.0);
    assert!((correlated - (2.0 * PI * 0.75f64.sqrt()).ln()).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn nll_matches_covariance_form(
        mu in prop::array::uniform2(-3.0f64..3.0),
        log_sigma in prop::array::uniform2(-2.0f64..2.0),
        rho in -0.95f64..0.95,
        at in prop::array::uniform2(-5.0f64..5.0),
    ) {
        let p = g(mu[0], mu[1], log_sigma[0].exp(), log_sigma[1].exp(), rho);
        let expected = covariance_nll(&p, at[0], at[1]);
        prop_assert!((p.nll(at[0], at[1]) - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
    }

    #[test]
    fn tape_and_plain_nll_agree(seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..3 * 2 * 5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let raw = Tensor::new(vec![3, 2, 5], raw).unwrap();
        let target = Tensor::new(vec![3, 2, 2], (0..12).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let seq = decode_params(&raw).unwrap();
        let plain = nll(&seq, &target).unwrap();
        let taped = nll_on_tape(&Tape::new(), &raw, &target).unwrap().item().unwrap();
        let oracle: f64 = (0..3).flat_map(|t| (0..2).map(move |i| (t, i)))
            .map(|(t, i)| covariance_nll(seq.get(t, i), target.at(&[t, i, 0]), target.at(&[t, i, 1])))
            .sum();
        prop_assert!((plain.sum - oracle).abs() <= 1e-9 * (1.0 + oracle.abs()));
        prop_assert!((taped - oracle).abs() <= 1e-9 * (1.0 + oracle.abs()));
    }
}

#[test]
fn decode_floors_sigma_and_clamps_rho() {
    let raw = Tensor::new(vec![1, 2, 5], vec![0.0, 0.0, -1000.0, 0.0, 40.0, 1.0, 2.0, 0.0, -1000.0, -40.0]).unwrap();
    let seq = decode_params(&raw).unwrap();
    let (a, b) = (seq.get(0, 0), seq.get(0, 1));
    assert_eq!(a.sigma_x, SIGMA_FLOOR);
    assert_eq!(a.rho, RHO_LIMIT);
    assert_eq!(b.sigma_y, SIGMA_FLOOR);
    assert_eq!(b.rho, -RHO_LIMIT);
    assert!(a.nll(0.0, 0.0).is_finite() && b.nll(1.0, 2.0).is_finite());
}

#[test]
fn sample_moments_match_parameters() {
    let p = g(0.4, -1.2, 0.7, 1.9, -0.6);
    let seq = BiGaussianSeq::new(1, 1, vec![p]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let draws: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let d = sample_displacements(&seq, &mut rng);
            [d.data()[0], d.data()[1]]
        })
        .collect();
    let nf = n as f64;
    let mx = draws.iter().map(|d| d[0]).sum::<f64>() / nf;
    let my = draws.iter().map(|d| d[1]).sum::<f64>() / nf;
    let vx = draws.iter().map(|d| (d[0] - mx).powi(2)).sum::<f64>() / (nf - 1.0);
    let vy = draws.iter().map(|d| (d[1] - my).powi(2)).sum::<f64>() / (nf - 1.0);
    let cxy = draws.iter().map(|d| (d[0] - mx) * (d[1] - my)).sum::<f64>() / (nf - 1.0);
    assert!((mx - p.mu_x).abs() < 4.0 * p.sigma_x / nf.sqrt());
    assert!((my - p.mu_y).abs() < 4.0 * p.sigma_y / nf.sqrt());
    assert!((vx.sqrt() / p.sigma_x - 1.0).abs() < 0.02);
    assert!((vy.sqrt() / p.sigma_y - 1.0).abs() < 0.02);
    assert!((cxy / (vx * vy).sqrt() - p.rho).abs() < 0.02);
}
