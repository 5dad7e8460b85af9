//! WebAssembly bindings for the single-page demo in `www/`. Each export
//! wraps a plain Rust function so the same code is testable natively.

use asrfuse_core::a2a::{mdn_loss, mixture_mean, MdnParams};
use asrfuse_core::combine::fixture::{complementary_errors, fused_wer};
use asrfuse_core::eval::mapsswe_from_differences;
use asrfuse_core::numcore::{Tape, Tensor};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// One-dimensional mixture: per-component logits, means and (positive)
/// standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub logits: Vec<f64>,
    pub means: Vec<f64>,
    pub sigmas: Vec<f64>,
}

impl Mixture {
    fn check(&self) -> Result<(), String> {
        let m = self.logits.len();
        if m == 0 || self.means.len() != m || self.sigmas.len() != m {
            return Err(format!(
                "need matching non-empty logits/means/sigmas, got {}/{}/{}",
                m,
                self.means.len(),
                self.sigmas.len()
            ));
        }
        if self.sigmas.iter().any(|s| !(*s > 0.0)) {
            return Err("sigmas must be positive".into());
        }
        Ok(())
    }

    /// Negative log-likelihood of `y` and the mixture mean.
    pub fn evaluate(&self, y: f64) -> Result<(f64, f64), String> {
        self.check()?;
        let mut row = self.logits.clone();
        row.extend(&self.means);
        row.extend(self.sigmas.iter().map(|s| s.ln()));
        let tape = Tape::new();
        let raw = tape.constant(Tensor::matrix(1, row.len(), row).map_err(|e| e.to_string())?);
        // floor far below any slider value, so σ is used as given
        let p = MdnParams::from_raw(&raw, self.logits.len(), 1, 1e-12).map_err(|e| e.to_string())?;
        let target = Tensor::matrix(1, 1, vec![y]).map_err(|e| e.to_string())?;
        let nll = mdn_loss(&p, &target).map_err(|e| e.to_string())?.value().item();
        let mean = mixture_mean(&p).map_err(|e| e.to_string())?.value().item();
        Ok((nll, mean))
    }

    /// Density sampled at `n ≥ 2` evenly spaced points on `[lo, hi]`.
    pub fn density(&self, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, String> {
        if n < 2 || !(hi > lo) {
            return Err("need n ≥ 2 and hi > lo".into());
        }
        (0..n)
            .map(|i| {
                let y = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                self.evaluate(y).map(|(nll, _)| (-nll).exp())
            })
            .collect()
    }
}

/// Fused WER of the complementary-errors fixture for each `w_A = i·step`.
pub fn sweep(step: f64) -> Result<Vec<(f64, f64)>, String> {
    let n = (1.0 / step).round();
    if !(step > 0.0) || (n * step - 1.0).abs() > 1e-9 {
        return Err(format!("step {step} must divide 1"));
    }
    let dev = complementary_errors();
    (0..=n as usize)
        .map(|i| {
            let w = i as f64 / n;
            fused_wer(&dev, &[w, 1.0 - w]).map(|wer| (w, wer)).map_err(|e| e.to_string())
        })
        .collect()
}

/// Significance report for per-utterance error differences, as JSON.
pub fn significance(differences: &[f64], alpha: f64) -> Result<String, String> {
    let ids = (0..differences.len()).map(|i| format!("u{i}")).collect();
    let r = mapsswe_from_differences(ids, differences.to_vec(), alpha).map_err(|e| e.to_string())?;
    Ok(json!({
        "n": differences.len(),
        "mean": r.mean,
        "std": r.std,
        "z": r.z,
        "p": r.p_value,
        "significant": r.significant,
        "degenerate": r.degenerate,
    })
    .to_string())
}

fn mixture(logits: &[f64], means: &[f64], sigmas: &[f64]) -> Mixture {
    Mixture { logits: logits.to_vec(), means: means.to_vec(), sigmas: sigmas.to_vec() }
}

#[wasm_bindgen]
pub fn mdn_density(logits: &[f64], means: &[f64], sigmas: &[f64], lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, JsError> {
    mixture(logits, means, sigmas).density(lo, hi, n).map_err(|e| JsError::new(&e))
}

/// `[nll, mixture mean]` at `y`.
#[wasm_bindgen]
pub fn mdn_point(logits: &[f64], means: &[f64], sigmas: &[f64], y: f64) -> Result<Vec<f64>, JsError> {
    mixture(logits, means, sigmas)
        .evaluate(y)
        .map(|(a, b)| vec![a, b])
        .map_err(|e| JsError::new(&e))
}

/// Flattened `[w_0, wer_0, w_1, wer_1, ...]`.
#[wasm_bindgen]
pub fn fusion_sweep(step: f64) -> Result<Vec<f64>, JsError> {
    sweep(step)
        .map(|v| v.into_iter().flat_map(|(w, e)| [w, e]).collect())
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn mapsswe(differences: &[f64], alpha: f64) -> Result<String, JsError> {
    significance(differences, alpha).map_err(|e| JsError::new(&e))
}
