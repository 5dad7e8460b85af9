//! Discrete target generators: a Gumbel-softmax product quantizer and
//! k-means codebooks.

use crate::error::{Error, Result};
use crate::numcore::nn::Linear;
use crate::numcore::{Binding, ParamId, ParamStore, SeededRng, Tensor, Var};

pub struct GumbelSelection {
    /// Hard one-hot codes in the forward pass; gradients follow `soft`.
    pub hard: Var,
    /// `softmax((logits + noise) / temperature)`.
    pub soft: Var,
    pub indices: Vec<usize>,
}

/// Gumbel-softmax selection over the rows of `logits` (`N×V`) with an
/// explicit noise sample of the same shape.
pub fn gumbel_select(logits: &Var, temperature: f64, noise: &Tensor) -> Result<GumbelSelection> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    let lv = logits.value();
    if !lv.is_finite() {
        return Err(Error::NonFinite("gumbel logits".into()));
    }
    if noise.shape() != lv.shape() {
        return Err(Error::shape(
            "gumbel_select",
            format!("noise {:?} vs logits {:?}", noise.shape(), lv.shape()),
        ));
    }
    let perturbed = logits.add(&logits.tape().constant(noise.clone()))?;
    let soft = perturbed.scale(1.0 / temperature).softmax_rows()?;
    let pv = perturbed.value();
    let (n, v) = (pv.rows(), pv.cols());
    let indices: Vec<usize> = (0..n).map(|r| argmax(pv.row(r))).collect();
    let mut onehot = vec![0.0; n * v];
    for (r, &i) in indices.iter().enumerate() {
        onehot[r * v + i] = 1.0;
    }
    let hard = soft.straight_through(Tensor::matrix(n, v, onehot)?)?;
    Ok(GumbelSelection { hard, soft, indices })
}

/// Standard Gumbel noise of the given shape.
pub fn gumbel_noise(shape: &[usize], rng: &mut SeededRng) -> Result<Tensor> {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.gumbel()).collect())
}

/// Lowest index of the maximum.
pub(crate) fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(0, |b, (i, &x)| if x > row[b] { i } else { b })
}

/// `G` codebooks of `V` entries: a frame's logits pick one codeword per
/// codebook and the concatenated codes are linearly mapped to `q_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelQuantizer {
    pub groups: usize,
    pub entries: usize,
    pub code_dim: usize,
    pub temperature: f64,
    logits: Linear,
    /// `G·V × code_dim`, codebook `g` occupying rows `g·V..(g+1)·V`.
    codewords: ParamId,
    out: Linear,
}

pub struct QuantizerOutput {
    /// `N × out_dim`.
    pub quantized: Var,
    /// Per codebook, `N×V` noiseless softmax probabilities (for diversity).
    pub probs: Vec<Var>,
    /// Per codebook, the selected entry of each frame.
    pub codes: Vec<Vec<usize>>,
}

impl GumbelQuantizer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        groups: usize,
        entries: usize,
        code_dim: usize,
        out_dim: usize,
        temperature: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if groups == 0 || entries == 0 || code_dim == 0 {
            return Err(Error::invalid("quantizer needs G, V and code dim ≥ 1"));
        }
        if !(temperature > 0.0) {
            return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
        }
        let logits = Linear::new(store, &format!("{name}.logits"), input_dim, groups * entries, rng);
        let codewords = store.add(
            format!("{name}.codewords"),
            Tensor::matrix(
                groups * entries,
                code_dim,
                (0..groups * entries * code_dim).map(|_| rng.normal()).collect(),
            )?,
        );
        let out = Linear::new(store, &format!("{name}.out"), groups * code_dim, out_dim, rng);
        Ok(Self {
            groups,
            entries,
            code_dim,
            temperature,
            logits,
            codewords,
            out,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.out.out_dim
    }

    /// Quantizes each row of `z`. `rng` supplies the Gumbel noise; without
    /// it the noise is zero (deterministic evaluation).
    pub fn forward(&self, b: &Binding, z: &Var, rng: Option<&mut SeededRng>) -> Result<QuantizerOutput> {
        let logits = self.logits.forward(b, z)?;
        let n = logits.value().rows();
        let v = self.entries;
        let noise = match rng {
            Some(rng) => gumbel_noise(&[n, self.groups * v], rng)?,
            None => Tensor::zeros(&[n, self.groups * v]),
        };
        let table = b.get(self.codewords);
        let mut parts = Vec::with_capacity(self.groups);
        let mut probs = Vec::with_capacity(self.groups);
        let mut codes = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let lg = logits.slice_cols(g * v, (g + 1) * v)?;
            let ng = Tensor::matrix(
                n,
                v,
                (0..n).flat_map(|r| noise.row(r)[g * v..(g + 1) * v].to_vec()).collect(),
            )?;
            let sel = gumbel_select(&lg, self.temperature, &ng)?;
            let rows: Vec<usize> = (g * v..(g + 1) * v).collect();
            parts.push(sel.hard.matmul(&table.gather_rows(&rows)?)?);
            probs.push(lg.softmax_rows()?);
            codes.push(sel.indices);
        }
        let quantized = self.out.forward(b, &Var::concat_cols(&parts)?)?;
        Ok(QuantizerOutput { quantized, probs, codes })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// `k×D`.
    pub centroids: Tensor,
    pub assignments: Vec<usize>,
    /// Inertia after each assignment step.
    pub inertia: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid (lowest index on ties) and its squared distance.
fn nearest(x: &[f64], centroids: &Tensor) -> (usize, f64) {
    (0..centroids.rows())
        .map(|c| (c, sq_dist(x, centroids.row(c))))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Lloyd's algorithm with k-means++ seeding. Stops early once assignments
/// stop changing; an emptied cluster keeps its previous centroid.
pub fn kmeans_fit(frames: &Tensor, k: usize, iterations: usize, seed: u64) -> Result<KMeansFit> {
    if !frames.is_matrix() || frames.rows() == 0 {
        return Err(Error::invalid("k-means needs at least one frame"));
    }
    if k == 0 || frames.rows() < k {
        return Err(Error::invalid(format!("k-means with k={k} needs at least k frames, got {}", frames.rows())));
    }
    if !frames.is_finite() {
        return Err(Error::NonFinite("k-means input".into()));
    }
    let (n, d) = (frames.rows(), frames.cols());
    let mut rng = SeededRng::new(seed);

    let mut chosen = vec![rng.below(n)];
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(frames.row(i), frames.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.uniform() * total;
            let mut pick = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            // all remaining points coincide with a centroid
            (0..n).find(|i| !chosen.contains(i)).expect("n >= k")
        };
        chosen.push(next);
        for (i, di) in dist.iter_mut().enumerate() {
            *di = di.min(sq_dist(frames.row(i), frames.row(next)));
        }
    }
    let mut centroids = Tensor::matrix(k, d, chosen.iter().flat_map(|&i| frames.row(i).to_vec()).collect())?;

    let mut assignments = vec![usize::MAX; n];
    let mut inertia = Vec::new();
    for _ in 0..iterations.max(1) {
        let mut changed = false;
        let mut total = 0.0;
        for (i, a) in assignments.iter_mut().enumerate() {
            let (c, dd) = nearest(frames.row(i), &centroids);
            changed |= *a != c;
            *a = c;
            total += dd;
        }
        inertia.push(total);
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, x) in sums[a * d..(a + 1) * d].iter_mut().zip(frames.row(i)) {
                *s += x;
            }
        }
        let cdata = centroids.data_mut();
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    cdata[c * d + j] = sums[c * d + j] / counts[c] as f64;
                }
            }
        }
    }
    Ok(KMeansFit {
        centroids,
        assignments,
        inertia,
    })
}

/// `G` independent k-means codebooks over the same frames.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansQuantizer {
    pub codebooks: Vec<Tensor>,
}

impl KMeansQuantizer {
    pub fn fit(frames: &Tensor, sizes: &[usize], iterations: usize, seed: u64) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::invalid("k-means quantizer needs at least one codebook"));
        }
        let codebooks = sizes
            .iter()
            .enumerate()
            .map(|(g, &k)| {
                let s = SeededRng::derived(seed, g as u64).next_u64();
                kmeans_fit(frames, k, iterations, s).map(|f| f.centroids)
            })
            .collect::<Result<_>>()?;
        Ok(Self { codebooks })
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.codebooks.iter().map(Tensor::rows).collect()
    }

    /// Per codebook, the nearest-centroid label of every frame.
    pub fn assign(&self, frames: &Tensor) -> Result<Vec<Vec<usize>>> {
        self.codebooks
            .iter()
            .map(|cb| {
                if frames.cols() != cb.cols() {
                    return Err(Error::shape(
                        "kmeans_assign",
                        format!("frames have {} dims, codebook {}", frames.cols(), cb.cols()),
                    ));
                }
                Ok((0..frames.rows()).map(|i| nearest(frames.row(i), cb).0).collect())
            })
            .collect()
    }
}
