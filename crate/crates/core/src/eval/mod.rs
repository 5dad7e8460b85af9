//! Scoring: edit-distance alignment, WER/CER with subgroup breakdowns,
//! matched-pairs significance testing and classification metrics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenization {
    /// Case-folded whitespace tokens.
    #[default]
    Words,
    /// Characters, whitespace dropped (CER).
    Chars,
}

impl Tokenization {
    pub fn tokenize(self, text: &str) -> Vec<String> {
        match self {
            Tokenization::Words => text.split_whitespace().map(str::to_lowercase).collect(),
            Tokenization::Chars => text
                .chars()
                .filter(|c| !c.is_whitespace())
                .flat_map(char::to_lowercase)
                .map(String::from)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn add(&mut self, other: &EditCounts) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.ref_len += other.ref_len;
    }

    /// Percent; `None` when the reference is empty.
    pub fn rate(&self) -> Option<f64> {
        (self.ref_len > 0).then(|| 100.0 * self.errors() as f64 / self.ref_len as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum AlignOp {
    Match { r: usize, h: usize },
    Sub { r: usize, h: usize },
    Ins { h: usize },
    Del { r: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    pub counts: EditCounts,
    pub ops: Vec<AlignOp>,
}

/// Unit-cost Levenshtein alignment. On cost ties the backtrace prefers the
/// diagonal, then insertion, then deletion.
pub fn align_and_count<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Alignment {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        d[i * w] = i;
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i * w + j] = diag.min(d[i * w + j - 1] + 1).min(d[(i - 1) * w + j] + 1);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let mut counts = EditCounts {
        ref_len: n,
        ..EditCounts::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if d[(i - 1) * w + j - 1] + usize::from(!same) == here {
                i -= 1;
                j -= 1;
                if same {
                    ops.push(AlignOp::Match { r: i, h: j });
                } else {
                    counts.substitutions += 1;
                    ops.push(AlignOp::Sub { r: i, h: j });
                }
                continue;
            }
        }
        if j > 0 && d[i * w + j - 1] + 1 == here {
            j -= 1;
            counts.insertions += 1;
            ops.push(AlignOp::Ins { h: j });
        } else {
            i -= 1;
            counts.deletions += 1;
            ops.push(AlignOp::Del { r: i });
        }
    }
    ops.reverse();
    Alignment { counts, ops }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub utt_id: String,
    pub reference: Vec<String>,
    pub hypothesis: Vec<String>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

/// Records with unique ids and non-empty references.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoredTranscriptSet {
    records: Vec<TranscriptRecord>,
}

impl ScoredTranscriptSet {
    pub fn new(records: Vec<TranscriptRecord>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.utt_id.as_str()) {
                return Err(Error::invalid(format!("duplicate utterance id `{}`", r.utt_id)));
            }
            if r.reference.is_empty() {
                return Err(Error::invalid(format!("`{}` has an empty reference", r.utt_id)));
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[TranscriptRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub rate: f64,
    pub counts: EditCounts,
    pub utterances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WerReport {
    pub overall: f64,
    pub counts: EditCounts,
    pub utterances: usize,
    /// Empty unless grouped.
    pub groups: BTreeMap<String, GroupScore>,
}

/// Pooled error rate `100·(S+D+I)/Σ|ref|`, optionally per metadata value.
pub fn wer(set: &ScoredTranscriptSet, group_by: Option<&str>) -> Result<WerReport> {
    if set.is_empty() {
        return Err(Error::invalid("cannot score an empty transcript set"));
    }
    let mut counts = EditCounts::default();
    let mut groups: BTreeMap<String, GroupScore> = BTreeMap::new();
    for r in set.records() {
        let c = align_and_count(&r.reference, &r.hypothesis).counts;
        counts.add(&c);
        if let Some(key) = group_by {
            let value = r.metadata.get(key).ok_or_else(|| {
                Error::invalid(format!("`{}` has no metadata field `{key}`", r.utt_id))
            })?;
            let g = groups.entry(value.clone()).or_insert(GroupScore {
                rate: 0.0,
                counts: EditCounts::default(),
                utterances: 0,
            });
            g.counts.add(&c);
            g.utterances += 1;
        }
    }
    for g in groups.values_mut() {
        g.rate = g.counts.rate().unwrap_or(0.0);
    }
    Ok(WerReport {
        overall: counts.rate().unwrap_or(0.0),
        counts,
        utterances: set.len(),
        groups,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub utt_ids: Vec<String>,
    /// `errors_A − errors_B` per utterance.
    pub differences: Vec<f64>,
    pub mean: f64,
    pub std: Option<f64>,
    pub z: Option<f64>,
    pub p_value: Option<f64>,
    pub alpha: f64,
    pub significant: bool,
    /// Set when fewer than two segments or zero variance leave Z undefined.
    pub degenerate: bool,
}

/// Z statistic over per-segment error differences with the sample standard
/// deviation; the two-sided p-value is `erfc(|Z|/√2)`.
pub fn mapsswe_from_differences(utt_ids: Vec<String>, d: Vec<f64>, alpha: f64) -> Result<SignificanceReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if d.is_empty() {
        return Err(Error::invalid("significance test needs at least one segment"));
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let std = (d.len() >= 2).then(|| (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    let z = std.filter(|&s| s > 0.0).map(|s| mean / (s / n.sqrt()));
    let p_value = match (z, std) {
        (Some(z), _) => Some(libm::erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)),
        // every difference is zero: no evidence either way
        (None, Some(_)) if mean == 0.0 => Some(1.0),
        _ => None,
    };
    Ok(SignificanceReport {
        utt_ids,
        mean,
        std,
        z,
        significant: z.is_some() && p_value.is_some_and(|p| p < alpha),
        degenerate: z.is_none(),
        p_value,
        alpha,
        differences: d,
    })
}

/// Utterance-level matched-pairs test of two systems scored on the same
/// references.
pub fn mapsswe(a: &ScoredTranscriptSet, b: &ScoredTranscriptSet, alpha: f64) -> Result<SignificanceReport> {
    if a.len() != b.len() {
        return Err(Error::Mismatch(format!("{} vs {} utterances", a.len(), b.len())));
    }
    let by_id: BTreeMap<&str, &TranscriptRecord> = b.records().iter().map(|r| (r.utt_id.as_str(), r)).collect();
    let mut pairs: Vec<(&TranscriptRecord, &TranscriptRecord)> = Vec::with_capacity(a.len());
    for ra in a.records() {
        let rb = by_id
            .get(ra.utt_id.as_str())
            .ok_or_else(|| Error::Mismatch(format!("`{}` missing from the second set", ra.utt_id)))?;
        if ra.reference != rb.reference {
            return Err(Error::Mismatch(format!("`{}` references differ", ra.utt_id)));
        }
        pairs.push((ra, rb));
    }
    pairs.sort_by(|x, y| x.0.utt_id.cmp(&y.0.utt_id));
    let d = pairs
        .iter()
        .map(|(ra, rb)| {
            align_and_count(&ra.reference, &ra.hypothesis).counts.errors() as f64
                - align_and_count(&rb.reference, &rb.hypothesis).counts.errors() as f64
        })
        .collect();
    let ids = pairs.iter().map(|(r, _)| r.utt_id.clone()).collect();
    mapsswe_from_differences(ids, d, alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    /// Absent without positive examples.
    pub sensitivity: Option<f64>,
    /// Absent without negative examples.
    pub specificity: Option<f64>,
    pub tp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

/// Percentages from the binary confusion matrix; anything other than
/// `positive` counts as negative.
pub fn classification_metrics<L: PartialEq>(
    predictions: &[L],
    labels: &[L],
    positive: &L,
) -> Result<ClassificationMetrics> {
    if predictions.len() != labels.len() {
        return Err(Error::Mismatch(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::invalid("no examples to score"));
    }
    let (mut tp, mut fn_, mut tn, mut fp) = (0, 0, 0, 0);
    for (p, l) in predictions.iter().zip(labels) {
        match (l == positive, p == positive) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
            (false, true) => fp += 1,
        }
    }
    let pct = |num: usize, den: usize| (den > 0).then(|| 100.0 * num as f64 / den as f64);
    Ok(ClassificationMetrics {
        accuracy: 100.0 * (tp + tn) as f64 / labels.len() as f64,
        sensitivity: pct(tp, tp + fn_),
        specificity: pct(tn, tn + fp),
        tp,
        fn_,
        tn,
        fp,
    })
}

/// Per-subject modal label. Ties involving `positive` go to `positive`;
/// other ties go to the label seen first.
pub fn majority_vote<L: Clone + PartialEq>(
    votes: &[BTreeMap<String, L>],
    positive: &L,
) -> Result<BTreeMap<String, L>> {
    let first = votes.first().ok_or_else(|| Error::invalid("majority vote needs at least one voter"))?;
    for (k, v) in votes.iter().enumerate().skip(1) {
        if !v.keys().eq(first.keys()) {
            return Err(Error::Mismatch(format!("voter {k} covers a different subject set than voter 0")));
        }
    }
    let mut out = BTreeMap::new();
    for subject in first.keys() {
        let mut tally: Vec<(&L, usize)> = Vec::new();
        for v in votes {
            let l = &v[subject];
            match tally.iter_mut().find(|(x, _)| *x == l) {
                Some(e) => e.1 += 1,
                None => tally.push((l, 1)),
            }
        }
        let top = tally.iter().map(|t| t.1).max().unwrap_or(0);
        let winner = tally
            .iter()
            .find(|(l, c)| *c == top && *l == positive)
            .or_else(|| tally.iter().find(|(_, c)| *c == top))
            .map(|(l, _)| (*l).clone())
            .expect("non-empty tally");
        out.insert(subject.clone(), winner);
    }
    Ok(out)
}
