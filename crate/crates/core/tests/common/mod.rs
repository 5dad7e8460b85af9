//! Independent reference implementations shared by the integration tests
//! and the acceptance suite.
#![allow(dead_code)]

use std::collections::HashMap;

use asrfuse_core::a2a::{mdn_loss, mixture_mean, mse_loss, mtl_loss, pearson_loss, MdnParams, MtlWeights};
use asrfuse_core::bottleneck::{Bottleneck, BottleneckConfig};
use asrfuse_core::numcore::{check_gradients, Binding, ParamStore, SeededRng, Tape, Tensor, Var};
use asrfuse_core::ssl::ctc::{ctc_loss, ctc_loss_var, min_frames};
use asrfuse_core::ssl::losses::{contrastive_diversity_loss, data2vec_loss, data2vec_targets, masked_prediction_loss};
use asrfuse_core::Result;

// The objectives sum over frames, so their values reach ~10²; a 1e-5 step
// would leave central differences dominated by roundoff.
pub const FD_STEP: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rand_matrix(rng: &mut SeededRng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

pub fn log_softmax(rows: &Tensor) -> Tensor {
    let mut out = Vec::with_capacity(rows.len());
    for r in 0..rows.rows() {
        let row = rows.row(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|x| x - lse));
    }
    Tensor::matrix(rows.rows(), rows.cols(), out).unwrap()
}

// ---- CTC ------------------------------------------------------------------

/// `p(labels | frames)` by summing over every length-T path that collapses
/// to `labels`.
pub fn ctc_path_sum(log_probs: &Tensor, labels: &[usize], blank: usize) -> f64 {
    let (t, c) = (log_probs.rows(), log_probs.cols());
    let mut total = 0.0;
    let mut path = vec![0usize; t];
    for code in 0..c.pow(t as u32) {
        let mut x = code;
        for p in path.iter_mut() {
            *p = x % c;
            x /= c;
        }
        let mut collapsed = Vec::new();
        let mut prev = None;
        for &s in &path {
            if Some(s) != prev && s != blank {
                collapsed.push(s);
            }
            prev = Some(s);
        }
        if collapsed == labels {
            total += path.iter().enumerate().map(|(i, &s)| log_probs.get(i, s)).sum::<f64>().exp();
        }
    }
    total
}

fn all_sequences(alphabet: &[usize], max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for &a in alphabet {
                let mut n: Vec<usize> = s.clone();
                n.push(a);
                next.push(n);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

pub struct CtcSweep {
    pub instances: usize,
    pub infeasible: usize,
    pub max_abs_error: f64,
}

/// Every (T ≤ 6, |label| ≤ 3, classes ≤ 4 including blank) instance with
/// random frame posteriors. Feasible instances compare `−ln p`; infeasible
/// ones must be rejected while the path sum is exactly zero.
pub fn ctc_sweep() -> CtcSweep {
    let mut sweep = CtcSweep {
        instances: 0,
        infeasible: 0,
        max_abs_error: 0.0,
    };
    for classes in 2..=4usize {
        let symbols: Vec<usize> = (1..classes).collect();
        for labels in all_sequences(&symbols, 3) {
            for t in 1..=6usize {
                let mut rng = SeededRng::derived(classes as u64 * 1000 + t as u64, labels.iter().fold(7, |h, &l| h * 31 + l as u64));
                let lp = log_softmax(&rand_matrix(&mut rng, t, classes));
                let oracle = ctc_path_sum(&lp, &labels, 0);
                sweep.instances += 1;
                if min_frames(&labels) > t {
                    assert_eq!(oracle, 0.0);
                    assert!(ctc_loss(&lp, &labels, 0).is_err());
                    sweep.infeasible += 1;
                    continue;
                }
                let got = ctc_loss(&lp, &labels, 0).unwrap().loss;
                sweep.max_abs_error = sweep.max_abs_error.max((got + oracle.ln()).abs());
            }
        }
    }
    sweep
}

// ---- edit distance ----------------------------------------------------------

/// Levenshtein distance from its recursive definition, memoised.
pub fn edit_distance(a: &[u8], b: &[u8]) -> usize {
    fn go(a: &[u8], b: &[u8], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = (go(a, b, i + 1, j, memo) + 1)
            .min(go(a, b, i, j + 1, memo) + 1)
            .min(go(a, b, i + 1, j + 1, memo) + usize::from(a[i] != b[j]));
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// Every sequence over `{0, 1, 2}` of length `lo..=hi`.
pub fn ternary_sequences(lo: usize, hi: usize) -> Vec<Vec<u8>> {
    all_sequences(&[0, 1, 2], hi)
        .into_iter()
        .filter(|s| s.len() >= lo)
        .map(|s| s.into_iter().map(|x| x as u8).collect())
        .collect()
}

// ---- A2A --------------------------------------------------------------------

/// `−Σ_t ln Σ_m w_m Π_d N(a_td; μ_mtd, σ_mtd²)` straight from the density.
pub fn mdn_nll_naive(raw: &Tensor, m: usize, d: usize, targets: &Tensor, floor: f64) -> f64 {
    let mut total = 0.0;
    for t in 0..raw.rows() {
        let row = raw.row(t);
        let mx = row[..m].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row[..m].iter().map(|l| (l - mx).exp()).sum();
        let mut density = 0.0;
        for k in 0..m {
            let w = (row[k] - mx).exp() / z;
            let mut comp = 1.0;
            for j in 0..d {
                let mu = row[m + k * d + j];
                let sigma = row[m + m * d + k * d + j].exp().max(floor);
                let e = (targets.get(t, j) - mu) / sigma;
                comp *= (-0.5 * e * e).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            }
            density += w * comp;
        }
        total -= density.ln();
    }
    total
}

// ---- masked prediction ----------------------------------------------------

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// `−Σ_g Σ_{t∈M} ln softmax_c(cos(o_t A_g, e_c)/τ)[label]` with explicit loops.
pub fn masked_prediction_naive(
    outputs: &Tensor,
    masked: &[usize],
    labels: &[Vec<usize>],
    projections: &[Tensor],
    codewords: &[Tensor],
    tau: f64,
) -> f64 {
    let mut total = 0.0;
    for g in 0..labels.len() {
        let (a, e) = (&projections[g], &codewords[g]);
        for &t in masked {
            let proj: Vec<f64> = (0..a.cols())
                .map(|j| (0..a.rows()).map(|i| outputs.get(t, i) * a.get(i, j)).sum())
                .collect();
            let p = unit(&proj);
            let logits: Vec<f64> = (0..e.rows())
                .map(|c| unit(e.row(c)).iter().zip(&p).map(|(x, y)| x * y).sum::<f64>() / tau)
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            total -= (logits[labels[g][t]].exp() / z).ln();
        }
    }
    total
}

// ---- gradient suite -----------------------------------------------------------

fn weighted_sum(tape: &Tape, v: &Var, seed: u64) -> Result<Var> {
    let val = v.value();
    let mut rng = SeededRng::new(seed);
    let w = Tensor::new(val.shape().to_vec(), (0..val.len()).map(|_| rng.normal()).collect())?;
    Ok(v.mul(&tape.constant(w))?.sum())
}

fn fd(inputs: &[Tensor], f: impl Fn(&Tape, &[Var]) -> Result<Var>) -> f64 {
    check_gradients(inputs, FD_STEP, f).unwrap().max_rel_error
}

/// Finite-difference check over every value in `store`.
pub fn param_gradcheck(store: &ParamStore, f: impl Fn(&Tape, &Binding) -> Result<Var>) -> f64 {
    let tape = Tape::new();
    let b = store.bind(&tape);
    let grads = b.grads(&f(&tape, &b).unwrap().backward().unwrap());
    let eval = |s: &ParamStore| {
        let tape = Tape::new();
        let b = s.bind(&tape);
        f(&tape, &b).unwrap().item()
    };
    let mut work = store.clone();
    let mut worst: f64 = 0.0;
    for p in 0..store.len() {
        for k in 0..store.tensors()[p].len() {
            let orig = store.tensors()[p].data()[k];
            work.tensors_mut()[p].data_mut()[k] = orig + FD_STEP;
            let up = eval(&work);
            work.tensors_mut()[p].data_mut()[k] = orig - FD_STEP;
            let down = eval(&work);
            work.tensors_mut()[p].data_mut()[k] = orig;
            let n = (up - down) / (2.0 * FD_STEP);
            let a = grads[p].data()[k];
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-6));
        }
    }
    worst
}

/// Worst relative finite-difference error of each differentiable objective
/// over `seeds`.
pub fn gradient_suite(seeds: std::ops::Range<u64>) -> Vec<(&'static str, f64)> {
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    let mut record = |name: &'static str, e: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(w) => w.1 = w.1.max(e),
        None => worst.push((name, e)),
    };
    for seed in seeds {
        let mut rng = SeededRng::new(seed);

        // contrastive + diversity
        let (m, d, v) = (5, 4, 3);
        let c = rand_matrix(&mut rng, m, d);
        let q = rand_matrix(&mut rng, m, d);
        let l1 = rand_matrix(&mut rng, m, v);
        let l2 = rand_matrix(&mut rng, m, v);
        let distractors: Vec<Vec<usize>> = (0..m).map(|t| (1..=3).map(|k| (t + k) % m).collect()).collect();
        record(
            "contrastive+diversity",
            fd(&[c, q, l1, l2], |_, x| {
                let probs = [x[2].softmax_rows()?, x[3].softmax_rows()?];
                Ok(contrastive_diversity_loss(&x[0], &x[1], &distractors, &probs, 0.1, 0.1)?.total)
            }),
        );

        // masked prediction
        let o = rand_matrix(&mut rng, 6, 4);
        let a = rand_matrix(&mut rng, 4, 3);
        let e = rand_matrix(&mut rng, 5, 3);
        let labels = vec![(0..6).map(|_| rng.below(5)).collect::<Vec<_>>()];
        record(
            "masked-prediction",
            fd(&[o, a, e], |_, x| {
                masked_prediction_loss(&x[0], &[1, 2, 4], &labels, &[x[1].clone()], &[x[2].clone()], 0.1)
            }),
        );

        // data2vec regression; keep residuals away from the smooth-L1 knee
        let blocks: Vec<Tensor> = (0..3).map(|_| rand_matrix(&mut rng, 5, 4)).collect();
        let targets = data2vec_targets(&blocks, 2).unwrap();
        let student = Tensor::matrix(
            5,
            4,
            targets
                .data()
                .iter()
                .map(|y| {
                    let r = rng.uniform_range(-1.0, 1.0);
                    y + if (r.abs() - 0.25).abs() < 0.02 { r * 0.5 } else { r }
                })
                .collect(),
        )
        .unwrap();
        record("data2vec", fd(&[student], |_, x| data2vec_loss(&x[0], &blocks, 2, 0.25, &[0, 2, 3])));

        // MDN / MSE / Pearson / MTL
        let (mm, dd) = (3, 2);
        let raw = rand_matrix(&mut rng, 6, mm * (1 + 2 * dd));
        let tgt = rand_matrix(&mut rng, 6, dd);
        record("mdn", fd(&[raw.clone()], |_, x| mdn_loss(&MdnParams::from_raw(&x[0], mm, dd, 1e-3)?, &tgt)));
        record(
            "mse",
            fd(&[raw.clone()], |_, x| mse_loss(&mixture_mean(&MdnParams::from_raw(&x[0], mm, dd, 1e-3)?)?, &tgt)),
        );
        record(
            "pearson",
            fd(&[raw.clone()], |_, x| pearson_loss(&mixture_mean(&MdnParams::from_raw(&x[0], mm, dd, 1e-3)?)?, &tgt)),
        );
        record(
            "mtl",
            fd(&[raw], |_, x| {
                Ok(mtl_loss(&MdnParams::from_raw(&x[0], mm, dd, 1e-3)?, &tgt, &MtlWeights::default())?.total)
            }),
        );

        // CTC on log-softmax outputs
        let logits = rand_matrix(&mut rng, 6, 4);
        record("ctc", fd(&[logits], |_, x| ctc_loss_var(&x[0].log_softmax_rows()?, &[1, 2, 2], 0)));

        // bottleneck: input and every parameter
        let cfg = BottleneckConfig {
            inner_dim: 4,
            input_dim: 3,
            dropout: 0.0,
            ..BottleneckConfig::default()
        };
        let mut store = ParamStore::new();
        let bn = Bottleneck::new(&mut store, "bn", cfg, &mut rng).unwrap();
        let x = rand_matrix(&mut rng, 3, 3);
        let head = |tape: &Tape, b: &Binding, x: &Var| -> Result<Var> {
            let out = bn.forward(b, x, None)?;
            weighted_sum(tape, &out.restored, 11)?.add(&weighted_sum(tape, &out.extracted, 12)?)
        };
        let frozen = store.clone();
        record(
            "bottleneck",
            fd(&[x.clone()], |tape, v| {
                let b = frozen.bind_frozen(tape);
                head(tape, &b, &v[0])
            }),
        );
        record("bottleneck", param_gradcheck(&store, |tape, b| head(tape, b, &tape.constant(x.clone()))));
    }
    worst
}
