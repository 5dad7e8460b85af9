//! Pre-training and fine-tuning objectives.

use crate::error::{Error, Result};
use crate::numcore::{SeededRng, Tensor, Var};

pub const DEFAULT_KAPPA: f64 = 0.1;
pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_DISTRACTORS: usize = 10;
pub const DEFAULT_TAU: f64 = 0.1;
pub const DEFAULT_BETA: f64 = 0.25;
/// CTC share of the joint CTC/attention cost (3:7).
pub const DEFAULT_CTC_WEIGHT: f64 = 0.3;

const PROB_FLOOR: f64 = 1e-12;

pub struct ContrastiveOutput {
    /// `Σ_t L_c,t` over the masked frames.
    pub contrastive: Var,
    /// Per-frame contrastive terms.
    pub per_frame: Vec<f64>,
    /// `L_d`, shared by every frame.
    pub diversity: Var,
    /// `Σ_t (L_c,t + L_d)`.
    pub total: Var,
}

/// For each of `m` masked frames, `k` distractor indices drawn with
/// replacement from the other masked frames.
pub fn sample_distractors(m: usize, k: usize, rng: &mut SeededRng) -> Result<Vec<Vec<usize>>> {
    if m < 2 {
        return Err(Error::invalid(format!("distractors need at least 2 masked frames, got {m}")));
    }
    if k == 0 {
        return Err(Error::invalid("at least one distractor per frame is required"));
    }
    Ok((0..m)
        .map(|t| {
            (0..k)
                .map(|_| {
                    let j = rng.below(m - 1);
                    if j >= t {
                        j + 1
                    } else {
                        j
                    }
                })
                .collect()
        })
        .collect())
}

/// `α/(GV) Σ_g Σ_v l̄_gv ln l̄_gv` where `l̄_g` is the row-average of the
/// `N×V` probability matrix `probs[g]`.
pub fn diversity_loss(probs: &[Var], alpha: f64) -> Result<Var> {
    let first = probs
        .first()
        .ok_or_else(|| Error::invalid("diversity loss needs at least one codebook"))?;
    let v = first.value().cols();
    let mut acc: Option<Var> = None;
    for p in probs {
        let pv = p.value();
        if pv.cols() != v || pv.rows() == 0 {
            return Err(Error::shape("diversity_loss", format!("codebook probabilities {:?}", pv.shape())));
        }
        let avg = p.sum_rows()?.scale(1.0 / pv.rows() as f64);
        let term = avg.mul(&avg.clamp_min(PROB_FLOOR).ln())?.sum();
        acc = Some(match acc {
            Some(a) => a.add(&term)?,
            None => term,
        });
    }
    Ok(acc.expect("non-empty").scale(alpha / (probs.len() * v) as f64))
}

/// Contrastive task plus diversity penalty over `M` masked frames.
///
/// `c` and `q` are `M×D` (row `t` of `q` is the positive for row `t` of
/// `c`); `distractors[t]` indexes rows of `q`. Every frame must have the
/// same number of distractors.
pub fn contrastive_diversity_loss(
    c: &Var,
    q: &Var,
    distractors: &[Vec<usize>],
    probs: &[Var],
    kappa: f64,
    alpha: f64,
) -> Result<ContrastiveOutput> {
    if !(kappa > 0.0) {
        return Err(Error::invalid(format!("kappa must be positive, got {kappa}")));
    }
    let (cv, qv) = (c.value(), q.value());
    if cv.shape() != qv.shape() || !cv.is_matrix() {
        return Err(Error::shape("contrastive_loss", format!("c {:?} vs q {:?}", cv.shape(), qv.shape())));
    }
    let m = cv.rows();
    if distractors.len() != m || m == 0 {
        return Err(Error::invalid(format!("{} distractor lists for {m} masked frames", distractors.len())));
    }
    let k = distractors[0].len();
    if k == 0 || distractors.iter().any(|d| d.len() != k) {
        return Err(Error::invalid("every frame needs the same, non-zero number of distractors"));
    }
    if let Some(&bad) = distractors.iter().flatten().find(|&&i| i >= m) {
        return Err(Error::invalid(format!("distractor index {bad} outside {m} masked frames")));
    }
    let sim = c.l2_normalize_rows()?.matmul(&q.l2_normalize_rows()?.transpose()?)?;
    let mut columns = vec![sim.pick_per_row(&(0..m).collect::<Vec<_>>())?];
    for j in 0..k {
        let idx: Vec<usize> = distractors.iter().map(|d| d[j]).collect();
        columns.push(sim.pick_per_row(&idx)?);
    }
    let logp = Var::concat_cols(&columns)?.scale(1.0 / kappa).log_softmax_rows()?;
    let pos = logp.pick_per_row(&vec![0; m])?.neg();
    let per_frame = pos.value().data().to_vec();
    let contrastive = pos.sum();
    let diversity = diversity_loss(probs, alpha)?;
    let total = contrastive.add(&diversity.scale(m as f64))?;
    Ok(ContrastiveOutput {
        contrastive,
        per_frame,
        diversity,
        total,
    })
}

/// Negated masked-prediction log-likelihood summed over masked frames and
/// codebooks. `p(v) ∝ exp(cos(o_t P_g, e_gv) / τ)`.
///
/// `labels[g][t]` is the codebook-`g` target of frame `t`; `projections[g]`
/// is `D×E`, `codewords[g]` is `V_g×E`.
pub fn masked_prediction_loss(
    outputs: &Var,
    masked: &[usize],
    labels: &[Vec<usize>],
    projections: &[Var],
    codewords: &[Var],
    tau: f64,
) -> Result<Var> {
    if masked.is_empty() {
        return Err(Error::invalid("masked prediction needs a non-empty mask"));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    if labels.len() != projections.len() || labels.len() != codewords.len() || labels.is_empty() {
        return Err(Error::invalid("labels, projections and codewords must cover the same codebooks"));
    }
    let t_len = outputs.value().rows();
    if let Some(&bad) = masked.iter().find(|&&t| t >= t_len) {
        return Err(Error::invalid(format!("masked index {bad} outside {t_len} frames")));
    }
    let om = outputs.gather_rows(masked)?;
    let mut acc: Option<Var> = None;
    for ((lab, proj), cw) in labels.iter().zip(projections).zip(codewords) {
        if lab.len() != t_len {
            return Err(Error::invalid(format!("{} labels for {t_len} frames", lab.len())));
        }
        let targets: Vec<usize> = masked.iter().map(|&t| lab[t]).collect();
        let v = cw.value().rows();
        if let Some(&bad) = targets.iter().find(|&&l| l >= v) {
            return Err(Error::invalid(format!("label {bad} outside a {v}-entry codebook")));
        }
        let logits = om
            .matmul(proj)?
            .l2_normalize_rows()?
            .matmul(&cw.l2_normalize_rows()?.transpose()?)?
            .scale(1.0 / tau);
        let term = logits.log_softmax_rows()?.pick_per_row(&targets)?.sum();
        acc = Some(match acc {
            Some(a) => a.add(&term)?,
            None => term,
        });
    }
    Ok(acc.expect("non-empty").neg())
}

/// Elementwise smooth-L1: quadratic within `β` of zero, linear beyond.
pub fn smooth_l1(diff: f64, beta: f64) -> f64 {
    let a = diff.abs();
    if a <= beta {
        0.5 * a * a / beta
    } else {
        a - 0.5 * beta
    }
}

fn smooth_l1_grad(diff: f64, beta: f64) -> f64 {
    if diff.abs() <= beta {
        diff / beta
    } else {
        diff.signum()
    }
}

/// Mean of the per-frame-normalized top-`k` teacher block outputs.
pub fn data2vec_targets(teacher_blocks: &[Tensor], k: usize) -> Result<Tensor> {
    let l = teacher_blocks.len();
    if k == 0 || k > l {
        return Err(Error::invalid(format!("top-K depth {k} must be in 1..={l}")));
    }
    let shape = teacher_blocks[0].shape().to_vec();
    if teacher_blocks.iter().any(|t| t.shape() != shape.as_slice()) || shape.len() != 2 {
        return Err(Error::shape("data2vec_targets", "teacher block outputs differ in shape"));
    }
    let (rows, cols) = (shape[0], shape[1]);
    let mut acc = vec![0.0; rows * cols];
    for block in &teacher_blocks[l - k..] {
        for r in 0..rows {
            let row = block.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + crate::numcore::nn::LayerNorm::EPS).sqrt();
            for (a, x) in acc[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *a += (x - mean) * inv / k as f64;
            }
        }
    }
    Tensor::matrix(rows, cols, acc)
}

/// Smooth-L1 regression of the student's masked outputs onto the teacher
/// targets, summed over masked frames and dimensions. The teacher blocks
/// are plain tensors, so no gradient reaches them.
pub fn data2vec_loss(student: &Var, teacher_blocks: &[Tensor], k: usize, beta: f64, masked: &[usize]) -> Result<Var> {
    if !(beta > 0.0) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    let targets = data2vec_targets(teacher_blocks, k)?;
    let sv = student.value();
    if sv.shape() != targets.shape() {
        return Err(Error::shape(
            "data2vec_loss",
            format!("student {:?} vs teacher {:?}", sv.shape(), targets.shape()),
        ));
    }
    let cols = sv.cols();
    let mut grad = vec![0.0; sv.len()];
    let mut loss = 0.0;
    for &t in masked {
        if t >= sv.rows() {
            return Err(Error::invalid(format!("masked index {t} outside {} frames", sv.rows())));
        }
        for j in 0..cols {
            let diff = sv.get(t, j) - targets.get(t, j);
            loss += smooth_l1(diff, beta);
            grad[t * cols + j] += smooth_l1_grad(diff, beta);
        }
    }
    student.linearized(loss, Tensor::new(sv.shape().to_vec(), grad)?)
}

/// `λ·ctc + (1−λ)·attention` over two negative log-likelihood costs.
pub fn joint_ctc_attention_score(ctc: f64, attention: f64, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("CTC weight must be in [0, 1], got {lambda}")));
    }
    if !ctc.is_finite() || !attention.is_finite() {
        return Err(Error::NonFinite("joint CTC/attention score".into()));
    }
    if lambda == 1.0 {
        return Ok(ctc);
    }
    if lambda == 0.0 {
        return Ok(attention);
    }
    Ok(lambda * ctc + (1.0 - lambda) * attention)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tape;

    #[test]
    fn equal_similarities_give_ln_candidates() {
        let tape = Tape::new();
        let m = 10;
        let c = tape.param(Tensor::full(&[m, 3], 1.0));
        let q = tape.param(Tensor::full(&[m, 3], 2.0));
        let d = sample_distractors(m, 9, &mut SeededRng::new(0)).unwrap();
        let probs = [tape.constant(Tensor::full(&[m, 4], 0.25))];
        let out = contrastive_diversity_loss(&c, &q, &d, &probs, 0.1, 0.1).unwrap();
        for l in out.per_frame {
            assert!((l - 10f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn aligned_positive_one_orthogonal_distractor() {
        let tape = Tape::new();
        let e = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let c = tape.param(e.clone());
        let q = tape.param(e);
        let probs = [tape.constant(Tensor::full(&[2, 2], 0.5))];
        let out = contrastive_diversity_loss(&c, &q, &[vec![1], vec![0]], &probs, 0.1, 0.1).unwrap();
        let expected = (1.0 + (-10f64).exp()).ln();
        assert!((out.per_frame[0] - expected).abs() < 1e-15);
        assert!((out.per_frame[0] - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn uniform_diversity_is_negative_entropy() {
        let tape = Tape::new();
        let probs = [tape.constant(Tensor::full(&[5, 4], 0.25)), tape.constant(Tensor::full(&[5, 4], 0.25))];
        let ld = diversity_loss(&probs, 1.0).unwrap().item();
        assert!((ld - (-(4f64).ln() / 4.0)).abs() < 1e-12);
        assert!((ld + 0.34657).abs() < 1e-5);
    }

    #[test]
    fn contrastive_rejects_bad_inputs() {
        let tape = Tape::new();
        let c = tape.param(Tensor::zeros(&[2, 2]));
        let q = tape.param(Tensor::full(&[2, 2], 1.0));
        let probs = [tape.constant(Tensor::full(&[2, 2], 0.5))];
        assert!(contrastive_diversity_loss(&c, &q, &[vec![1], vec![0]], &probs, 0.1, 0.1).is_err());
        let c = tape.param(Tensor::full(&[2, 2], 1.0));
        assert!(contrastive_diversity_loss(&c, &q, &[vec![1], vec![0]], &probs, 0.0, 0.1).is_err());
        assert!(sample_distractors(1, 3, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn distractors_skip_the_positive() {
        let d = sample_distractors(4, 50, &mut SeededRng::new(2)).unwrap();
        for (t, ds) in d.iter().enumerate() {
            assert!(ds.iter().all(|&j| j != t && j < 4));
        }
    }

    #[test]
    fn uniform_prediction_costs_ln_v() {
        let tape = Tape::new();
        let out = tape.param(Tensor::full(&[3, 2], 1.0));
        let proj = tape.constant(Tensor::eye(2, 2));
        // all codewords identical → every cosine equal
        let cw = tape.constant(Tensor::full(&[8, 2], 0.5));
        let loss = masked_prediction_loss(&out, &[1], &[vec![0, 3, 0]], &[proj], &[cw], 0.1).unwrap();
        assert!((loss.item() - 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn masked_prediction_errors() {
        let tape = Tape::new();
        let out = tape.param(Tensor::full(&[3, 2], 1.0));
        let proj = tape.constant(Tensor::eye(2, 2));
        let cw = tape.constant(Tensor::full(&[8, 2], 0.5));
        assert!(masked_prediction_loss(&out, &[], &[vec![0; 3]], &[proj.clone()], &[cw.clone()], 0.1).is_err());
        assert!(masked_prediction_loss(&out, &[0], &[vec![0; 3]], &[proj], &[cw], 0.0).is_err());
    }

    #[test]
    fn smooth_l1_branches() {
        assert_eq!(smooth_l1(0.0, 0.25), 0.0);
        assert!((smooth_l1(0.25, 0.25) - 0.125).abs() < 1e-15);
        assert!((smooth_l1(-0.25, 0.25) - 0.125).abs() < 1e-15);
        assert!((smooth_l1(1.0, 0.25) - 0.875).abs() < 1e-15);
    }

    #[test]
    fn data2vec_k_bounds() {
        let tape = Tape::new();
        let s = tape.param(Tensor::zeros(&[2, 3]));
        let blocks = vec![Tensor::zeros(&[2, 3]); 2];
        assert!(data2vec_loss(&s, &blocks, 3, 0.25, &[0]).is_err());
        assert!(data2vec_loss(&s, &blocks, 0, 0.25, &[0]).is_err());
        assert_eq!(data2vec_loss(&s, &blocks, 2, 0.25, &[0, 1]).unwrap().item(), 0.0);
    }

    #[test]
    fn joint_score_weighting() {
        assert!((joint_ctc_attention_score(10.0, 0.0, DEFAULT_CTC_WEIGHT).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(joint_ctc_attention_score(7.25, 1.5, 1.0).unwrap(), 7.25);
        assert_eq!(joint_ctc_attention_score(7.25, 1.5, 0.0).unwrap(), 1.5);
        assert!(joint_ctc_attention_score(1.0, 1.0, 1.5).is_err());
        assert!(joint_ctc_attention_score(f64::NAN, 1.0, 0.5).is_err());
    }
}
