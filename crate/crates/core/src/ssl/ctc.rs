//! Connectionist temporal classification loss in log space.

use crate::error::{Error, Result};
use crate::numcore::{Tensor, Var};

#[derive(Debug, Clone)]
pub struct CtcOutput {
    /// `-ln p(labels | frames)`.
    pub loss: f64,
    /// Gradient of `loss` with respect to each frame log-probability.
    pub grad: Tensor,
}

fn lse2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        m
    } else {
        m + ((a - m).exp() + (b - m).exp()).ln()
    }
}

/// Fewest frames that can emit `labels`: one per label plus a blank between
/// each adjacent repeated pair.
pub fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Forward–backward CTC over a `T×C` matrix of per-frame log-probabilities.
pub fn ctc_loss(log_probs: &Tensor, labels: &[usize], blank: usize) -> Result<CtcOutput> {
    if !log_probs.is_matrix() {
        return Err(Error::shape("ctc_loss", format!("expected T×C, got {:?}", log_probs.shape())));
    }
    let (t_len, classes) = (log_probs.rows(), log_probs.cols());
    if blank >= classes {
        return Err(Error::invalid(format!("blank index {blank} outside {classes} classes")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l == blank || l >= classes) {
        return Err(Error::invalid(format!("label {bad} is the blank or outside {classes} classes")));
    }
    if t_len == 0 || min_frames(labels) > t_len {
        return Err(Error::invalid(format!(
            "label of length {} needs at least {} frames, got {}",
            labels.len(),
            min_frames(labels).max(1),
            t_len
        )));
    }
    if !log_probs.is_finite() {
        return Err(Error::NonFinite("ctc log-probabilities".into()));
    }

    // Extended label: blank, l1, blank, l2, ..., blank.
    let ext: Vec<usize> = std::iter::once(blank)
        .chain(labels.iter().flat_map(|&l| [l, blank]))
        .collect();
    let s_len = ext.len();
    let lp = |t: usize, s: usize| log_probs.get(t, ext[s]);
    let can_skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    let neg = f64::NEG_INFINITY;
    let mut alpha = vec![vec![neg; s_len]; t_len];
    alpha[0][0] = lp(0, 0);
    if s_len > 1 {
        alpha[0][1] = lp(0, 1);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = alpha[t - 1][s];
            if s >= 1 {
                acc = lse2(acc, alpha[t - 1][s - 1]);
            }
            if can_skip(s) {
                acc = lse2(acc, alpha[t - 1][s - 2]);
            }
            alpha[t][s] = if acc == neg { neg } else { acc + lp(t, s) };
        }
    }

    let mut beta = vec![vec![neg; s_len]; t_len];
    beta[t_len - 1][s_len - 1] = lp(t_len - 1, s_len - 1);
    if s_len > 1 {
        beta[t_len - 1][s_len - 2] = lp(t_len - 1, s_len - 2);
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta[t + 1][s];
            if s + 1 < s_len {
                acc = lse2(acc, beta[t + 1][s + 1]);
            }
            if s + 2 < s_len && ext[s + 2] != blank && ext[s + 2] != ext[s] {
                acc = lse2(acc, beta[t + 1][s + 2]);
            }
            beta[t][s] = if acc == neg { neg } else { acc + lp(t, s) };
        }
    }

    let log_p = if s_len > 1 {
        lse2(alpha[t_len - 1][s_len - 1], alpha[t_len - 1][s_len - 2])
    } else {
        alpha[t_len - 1][0]
    };
    if !log_p.is_finite() {
        return Err(Error::NonFinite("ctc path probability".into()));
    }

    // d(-ln P)/d lp[t,k] = -Σ_{s: ext[s]=k} α_t(s) β_t(s) / (y_t(k) P)
    let mut occupancy = vec![vec![neg; classes]; t_len];
    for t in 0..t_len {
        for s in 0..s_len {
            let k = ext[s];
            let v = alpha[t][s] + beta[t][s] - lp(t, s);
            occupancy[t][k] = lse2(occupancy[t][k], v);
        }
    }
    let grad = occupancy
        .iter()
        .flat_map(|row| row.iter().map(|&v| if v == neg { 0.0 } else { -(v - log_p).exp() }))
        .collect();
    Ok(CtcOutput {
        loss: -log_p,
        grad: Tensor::matrix(t_len, classes, grad)?,
    })
}

/// CTC loss recorded on the tape so gradients reach `log_probs`.
pub fn ctc_loss_var(log_probs: &Var, labels: &[usize], blank: usize) -> Result<Var> {
    let out = ctc_loss(&log_probs.value(), labels, blank)?;
    log_probs.linearized(out.loss, out.grad)
}

/// Greedy CTC readout: per-frame argmax, repeats merged, blanks dropped.
pub fn greedy_decode(log_probs: &Tensor, blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for t in 0..log_probs.rows() {
        let row = log_probs.row(t);
        let best = row
            .iter()
            .enumerate()
            .fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
        if Some(best) != prev && best != blank {
            out.push(best);
        }
        prev = Some(best);
    }
    out
}
