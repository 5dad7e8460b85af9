//! Loss values against independent references and closed forms.

mod common;

use asrfuse_core::a2a::{mdn_loss, mse_loss, MdnParams};
use asrfuse_core::numcore::{SeededRng, Tape, Tensor};
use asrfuse_core::ssl::losses::{contrastive_diversity_loss, diversity_loss, masked_prediction_loss, smooth_l1};
use common::*;

#[test]
fn ctc_matches_exhaustive_path_enumeration() {
    let s = ctc_sweep();
    // (4 + 15 + 40) label sequences × 6 lengths
    assert_eq!(s.instances, 354);
    assert!(s.infeasible > 0);
    assert!(s.max_abs_error < 1e-10, "max |Δ| = {}", s.max_abs_error);
}

#[test]
fn mdn_matches_the_density_formula() {
    for seed in 0..10 {
        let mut rng = SeededRng::new(seed);
        let (m, d) = (1 + rng.below(3), 1 + rng.below(3));
        let raw = rand_matrix(&mut rng, 7, m * (1 + 2 * d));
        let tgt = rand_matrix(&mut rng, 7, d);
        let tape = Tape::new();
        let p = MdnParams::from_raw(&tape.constant(raw.clone()), m, d, 1e-3).unwrap();
        let got = mdn_loss(&p, &tgt).unwrap().item();
        let want = mdn_nll_naive(&raw, m, d, &tgt, 1e-3);
        assert!((got - want).abs() < 1e-9 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn unit_variance_single_component_reduces_to_squared_error() {
    let mut rng = SeededRng::new(3);
    let (t, d) = (9, 3);
    let mu = rand_matrix(&mut rng, t, d);
    let tgt = rand_matrix(&mut rng, t, d);
    let mut raw = Vec::new();
    for r in 0..t {
        raw.push(0.0);
        raw.extend_from_slice(mu.row(r));
        raw.extend(std::iter::repeat(0.0).take(d));
    }
    let tape = Tape::new();
    let p = MdnParams::from_raw(&tape.constant(Tensor::matrix(t, 1 + 2 * d, raw).unwrap()), 1, d, 1e-3).unwrap();
    let nll = mdn_loss(&p, &tgt).unwrap().item();
    let sq = mse_loss(&tape.constant(mu), &tgt).unwrap().item() * (t * d) as f64;
    let want = 0.5 * sq + (t * d) as f64 / 2.0 * (2.0 * std::f64::consts::PI).ln();
    assert!((nll - want).abs() < 1e-10, "{nll} vs {want}");
}

#[test]
fn masked_prediction_matches_explicit_softmax() {
    for seed in 0..5 {
        let mut rng = SeededRng::new(seed);
        let out = rand_matrix(&mut rng, 8, 5);
        let projs = [rand_matrix(&mut rng, 5, 3), rand_matrix(&mut rng, 5, 4)];
        let codes = [rand_matrix(&mut rng, 6, 3), rand_matrix(&mut rng, 9, 4)];
        let labels = vec![
            (0..8).map(|_| rng.below(6)).collect::<Vec<_>>(),
            (0..8).map(|_| rng.below(9)).collect::<Vec<_>>(),
        ];
        let masked = [0, 3, 4, 7];
        let tape = Tape::new();
        let got = masked_prediction_loss(
            &tape.constant(out.clone()),
            &masked,
            &labels,
            &projs.iter().map(|p| tape.constant(p.clone())).collect::<Vec<_>>(),
            &codes.iter().map(|c| tape.constant(c.clone())).collect::<Vec<_>>(),
            0.1,
        )
        .unwrap()
        .item();
        let want = masked_prediction_naive(&out, &masked, &labels, &projs, &codes, 0.1);
        assert!((got - want).abs() < 1e-9 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn uniform_cases_have_closed_forms() {
    let tape = Tape::new();
    // identical quantized targets make all ten candidates equally similar
    let c = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.3, 0.7], vec![-0.2, 0.5]]).unwrap());
    let q = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap());
    let distractors: Vec<Vec<usize>> = (0..3).map(|t| (0..9).map(|k| (t + 1 + k % 2) % 3).collect()).collect();
    let v = 4;
    let uniform = tape.constant(Tensor::full(&[3, v], 1.0 / v as f64));
    let out = contrastive_diversity_loss(&c, &q, &distractors, &[uniform.clone()], 0.1, 0.1).unwrap();
    for l in &out.per_frame {
        assert!((l - 10f64.ln()).abs() < 1e-9);
    }
    let div = diversity_loss(&[uniform.clone(), uniform], 0.1).unwrap().item();
    assert!((div + 0.1 * (v as f64).ln() / v as f64).abs() < 1e-9);
    let beta = 0.25;
    assert!((smooth_l1(beta, beta) - beta / 2.0).abs() < 1e-12);
    assert!((smooth_l1(beta + 1e-12, beta) - smooth_l1(beta - 1e-12, beta)).abs() < 1e-9);
}
