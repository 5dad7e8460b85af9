use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Tensor, Var};

pub const SIGMA_FLOOR: f64 = 1e-3;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Per-frame mixture parameters for `M` diagonal Gaussians over `D` dims.
#[derive(Clone)]
pub struct MdnParams {
    /// `T×M` unnormalized mixture logits.
    pub logits: Var,
    /// `T×(M·D)`, component `m` in columns `m·D..(m+1)·D`.
    pub means: Var,
    /// `T×(M·D)` log standard deviations, already floored.
    pub log_sigma: Var,
    pub mixtures: usize,
    pub dim: usize,
}

impl MdnParams {
    /// Splits a raw `T×(M + 2·M·D)` network output and floors `σ`.
    pub fn from_raw(raw: &Var, mixtures: usize, dim: usize, sigma_floor: f64) -> Result<Self> {
        let cols = raw.value().cols();
        if mixtures == 0 || dim == 0 || cols != mixtures * (1 + 2 * dim) {
            return Err(Error::shape(
                "mdn_split",
                format!("{cols} outputs for M={mixtures}, D={dim}"),
            ));
        }
        if !(sigma_floor > 0.0) {
            return Err(Error::invalid(format!("sigma floor must be positive, got {sigma_floor}")));
        }
        let md = mixtures * dim;
        Ok(Self {
            logits: raw.slice_cols(0, mixtures)?,
            means: raw.slice_cols(mixtures, mixtures + md)?,
            log_sigma: raw.slice_cols(mixtures + md, mixtures + 2 * md)?.clamp_min(sigma_floor.ln()),
            mixtures,
            dim,
        })
    }

    pub fn frames(&self) -> usize {
        self.logits.value().rows()
    }

    fn component(&self, v: &Var, m: usize) -> Result<Var> {
        v.slice_cols(m * self.dim, (m + 1) * self.dim)
    }
}

fn check_targets(p: &MdnParams, targets: &Tensor) -> Result<()> {
    if targets.shape() != [p.frames(), p.dim] {
        return Err(Error::shape(
            "mdn_targets",
            format!("targets {:?} vs {}×{}", targets.shape(), p.frames(), p.dim),
        ));
    }
    if !targets.is_finite() {
        return Err(Error::NonFinite("articulatory targets".into()));
    }
    Ok(())
}

/// `−Σ_t ln Σ_m w_m N(a_t; μ_m, σ_m²)` in the log domain.
pub fn mdn_loss(p: &MdnParams, targets: &Tensor) -> Result<Var> {
    check_targets(p, targets)?;
    let tape = p.logits.tape();
    let a = tape.constant(targets.clone());
    let log_w = p.logits.log_softmax_rows()?;
    let mut comps = Vec::with_capacity(p.mixtures);
    for m in 0..p.mixtures {
        let mu = p.component(&p.means, m)?;
        let ls = p.component(&p.log_sigma, m)?;
        let z = a.sub(&mu)?.mul(&ls.neg().exp())?;
        let log_n = z.mul(&z)?.scale(-0.5).sub(&ls)?.add_scalar(-HALF_LN_2PI).sum_cols()?;
        comps.push(log_n);
    }
    Ok(Var::concat_cols(&comps)?.add(&log_w)?.log_sum_exp_rows()?.sum().neg())
}

/// `ŷ_t = Σ_m w_m μ_m`, `T×D`.
pub fn mixture_mean(p: &MdnParams) -> Result<Var> {
    let w = p.logits.softmax_rows()?;
    let ones = p.logits.tape().constant(Tensor::full(&[1, p.dim], 1.0));
    let mut acc: Option<Var> = None;
    for m in 0..p.mixtures {
        let term = w.slice_cols(m, m + 1)?.matmul(&ones)?.mul(&p.component(&p.means, m)?)?;
        acc = Some(match acc {
            Some(a) => a.add(&term)?,
            None => term,
        });
    }
    Ok(acc.expect("M ≥ 1"))
}

/// Mean squared error over frames and dimensions.
pub fn mse_loss(pred: &Var, targets: &Tensor) -> Result<Var> {
    let pv = pred.value();
    if pv.shape() != targets.shape() {
        return Err(Error::shape("mse_loss", format!("{:?} vs {:?}", pv.shape(), targets.shape())));
    }
    let d = pred.sub(&pred.tape().constant(targets.clone()))?;
    Ok(d.mul(&d)?.mean())
}

fn column_is_constant(t: &Tensor, c: usize) -> bool {
    let first = t.get(0, c);
    (1..t.rows()).all(|r| t.get(r, c) == first)
}

/// Per-dimension Pearson correlation over time, averaged over dimensions.
/// A dimension with zero variance in either input contributes 0.
pub fn pearson_loss(pred: &Var, targets: &Tensor) -> Result<Var> {
    let pv = pred.value();
    if pv.shape() != targets.shape() {
        return Err(Error::shape("pearson_loss", format!("{:?} vs {:?}", pv.shape(), targets.shape())));
    }
    if pv.rows() < 2 {
        return Err(Error::invalid("Pearson correlation needs at least 2 frames"));
    }
    for c in 0..pv.cols() {
        if column_is_constant(&pv, c) || column_is_constant(targets, c) {
            log::warn!("dimension {c} has zero temporal variance; its correlation is taken as 0");
        }
    }
    Ok(pred.pearson_cols(&pred.tape().constant(targets.clone()))?.mean())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MtlWeights {
    pub mdn: f64,
    pub mse: f64,
    pub pearson: f64,
}

impl Default for MtlWeights {
    fn default() -> Self {
        Self {
            mdn: 1.0,
            mse: 1.0,
            pearson: 1.0,
        }
    }
}

impl MtlWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.mdn, self.mse, self.pearson];
        if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) || w.iter().all(|&x| x == 0.0) {
            return Err(Error::invalid(format!(
                "multi-task weights must be non-negative and not all zero, got {w:?}"
            )));
        }
        Ok(())
    }
}

pub struct MtlBreakdown {
    pub mdn: f64,
    pub mse: f64,
    pub pearson: f64,
    /// `w_mdn·L_mdn + w_mse·L_mse − w_p·ρ`.
    pub total: Var,
}

/// Multi-task objective; zero-weight terms are left out of the graph.
pub fn mtl_loss(p: &MdnParams, targets: &Tensor, w: &MtlWeights) -> Result<MtlBreakdown> {
    w.validate()?;
    let mdn = mdn_loss(p, targets)?;
    let pred = mixture_mean(p)?;
    let mse = mse_loss(&pred, targets)?;
    let rho = pearson_loss(&pred, targets)?;
    let mut total: Option<Var> = None;
    for (weight, term) in [(w.mdn, mdn.clone()), (w.mse, mse.clone()), (-w.pearson, rho.clone())] {
        if weight != 0.0 {
            let t = if weight == 1.0 { term } else { term.scale(weight) };
            total = Some(match total {
                Some(acc) => acc.add(&t)?,
                None => t,
            });
        }
    }
    Ok(MtlBreakdown {
        mdn: mdn.item(),
        mse: mse.item(),
        pearson: rho.item(),
        total: total.expect("validated: some weight > 0"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tape;

    fn params(tape: &Tape, logits: Vec<f64>, means: Vec<f64>, log_sigma: Vec<f64>, t: usize, m: usize, d: usize) -> MdnParams {
        let mut raw = Vec::new();
        for r in 0..t {
            raw.extend_from_slice(&logits[r * m..(r + 1) * m]);
            raw.extend_from_slice(&means[r * m * d..(r + 1) * m * d]);
            raw.extend_from_slice(&log_sigma[r * m * d..(r + 1) * m * d]);
        }
        let raw = tape.param(Tensor::matrix(t, m * (1 + 2 * d), raw).unwrap());
        MdnParams::from_raw(&raw, m, d, SIGMA_FLOOR).unwrap()
    }

    #[test]
    fn gaussian_at_its_mode() {
        let tape = Tape::new();
        let p = params(&tape, vec![0.0], vec![0.7], vec![0.0], 1, 1, 1);
        let l = mdn_loss(&p, &Tensor::matrix(1, 1, vec![0.7]).unwrap()).unwrap().item();
        assert!((l - 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert!((l - 0.91894).abs() < 1e-5);
    }

    #[test]
    fn duplicated_component_matches_single() {
        let tape = Tape::new();
        let a = Tensor::matrix(2, 2, vec![0.1, -0.3, 0.5, 0.2]).unwrap();
        let one = params(&tape, vec![0.0, 0.0], vec![0.0, 0.1, 0.4, 0.0], vec![0.1, -0.2, 0.0, 0.3], 2, 1, 2);
        let two = params(
            &tape,
            vec![0.3, 0.3, -1.0, -1.0],
            vec![0.0, 0.1, 0.0, 0.1, 0.4, 0.0, 0.4, 0.0],
            vec![0.1, -0.2, 0.1, -0.2, 0.0, 0.3, 0.0, 0.3],
            2,
            2,
            2,
        );
        let (l1, l2) = (mdn_loss(&one, &a).unwrap().item(), mdn_loss(&two, &a).unwrap().item());
        assert!((l1 - l2).abs() < 1e-12, "{l1} vs {l2}");
    }

    #[test]
    fn sigma_is_floored() {
        let tape = Tape::new();
        let p = params(&tape, vec![0.0], vec![0.0], vec![-50.0], 1, 1, 1);
        assert!((p.log_sigma.item() - SIGMA_FLOOR.ln()).abs() < 1e-15);
    }

    #[test]
    fn mse_cases() {
        let tape = Tape::new();
        let a = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        assert_eq!(mse_loss(&tape.param(a.clone()), &a).unwrap().item(), 0.0);
        let y = tape.param(Tensor::matrix(1, 2, vec![1.0, 3.0]).unwrap());
        assert_eq!(mse_loss(&y, &a).unwrap().item(), 5.0);
        let off = tape.param(Tensor::full(&[3, 2], 2.0));
        assert_eq!(mse_loss(&off, &Tensor::zeros(&[3, 2])).unwrap().item(), 4.0);
        assert!(mse_loss(&off, &Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn pearson_cases() {
        let tape = Tape::new();
        let a = Tensor::matrix(4, 2, vec![1.0, 0.0, 2.0, 5.0, 0.5, -1.0, 3.0, 2.0]).unwrap();
        let same = tape.param(a.clone());
        assert!((pearson_loss(&same, &a).unwrap().item() - 1.0).abs() < 1e-12);
        let neg = tape.param(a.map(|x| -x));
        assert!((pearson_loss(&neg, &a).unwrap().item() + 1.0).abs() < 1e-12);
        let aff = tape.param(a.map(|x| 3.0 * x + 7.0));
        assert!((pearson_loss(&aff, &a).unwrap().item() - 1.0).abs() < 1e-12);
        let flat = tape.param(Tensor::full(&[4, 2], 1.0));
        assert_eq!(pearson_loss(&flat, &a).unwrap().item(), 0.0);
    }

    #[test]
    fn mixture_mean_of_two_components() {
        let tape = Tape::new();
        let p = params(&tape, vec![0.0, 0.0], vec![0.0, 2.0], vec![0.0, 0.0], 1, 2, 1);
        assert!((mixture_mean(&p).unwrap().item() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn weights_must_not_all_vanish() {
        assert!(MtlWeights { mdn: 0.0, mse: 0.0, pearson: 0.0 }.validate().is_err());
        assert!(MtlWeights { mdn: -1.0, mse: 1.0, pearson: 0.0 }.validate().is_err());
    }
}
