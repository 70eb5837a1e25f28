//! Error rates, alignments, search/model error accounting, entropy and
//! calibration.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nbest::NBestList;
use crate::scorers::{Context, Scorer};
use crate::vocab::Token;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditOp {
    Match,
    Sub,
    Del,
    Ins,
}

/// One aligned column: `ref_pos` is `None` for insertions, `hyp_pos` for deletions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignedPair {
    pub op: EditOp,
    pub ref_pos: Option<usize>,
    pub hyp_pos: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditAlignment {
    pub ops: Vec<AlignedPair>,
    pub subs: usize,
    pub dels: usize,
    pub ins: usize,
    pub ref_len: usize,
}

impl EditAlignment {
    pub fn errors(&self) -> usize {
        self.subs + self.dels + self.ins
    }

    pub fn matches(&self) -> usize {
        self.ref_len - self.subs - self.dels
    }
}

/// Minimum-edit alignment with unit costs. Among optimal alignments the
/// backtrace prefers match, then substitution, deletion, insertion.
pub fn edit_alignment<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditAlignment {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        d[i * w] = i;
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            d[i * w + j] = diag.min(d[(i - 1) * w + j] + 1).min(d[i * w + j - 1] + 1);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    let (mut subs, mut dels, mut ins) = (0, 0, 0);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 && reference[i - 1] == hyp[j - 1] && here == d[(i - 1) * w + j - 1] {
            ops.push(AlignedPair { op: EditOp::Match, ref_pos: Some(i - 1), hyp_pos: Some(j - 1) });
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && here == d[(i - 1) * w + j - 1] + 1 {
            ops.push(AlignedPair { op: EditOp::Sub, ref_pos: Some(i - 1), hyp_pos: Some(j - 1) });
            subs += 1;
            i -= 1;
            j -= 1;
        } else if i > 0 && here == d[(i - 1) * w + j] + 1 {
            ops.push(AlignedPair { op: EditOp::Del, ref_pos: Some(i - 1), hyp_pos: None });
            dels += 1;
            i -= 1;
        } else {
            ops.push(AlignedPair { op: EditOp::Ins, ref_pos: None, hyp_pos: Some(j - 1) });
            ins += 1;
            j -= 1;
        }
    }
    ops.reverse();
    EditAlignment { ops, subs, dels, ins, ref_len: n }
}

/// Levenshtein distance in `O(min)` memory.
pub fn edit_distance<T: PartialEq>(reference: &[T], hyp: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=hyp.len()).collect();
    let mut cur = vec![0; hyp.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hyp.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(r != h)).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hyp.len()]
}

/// Pooled error counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub errors: usize,
    pub ref_len: usize,
}

impl ErrorCounts {
    pub fn add(&mut self, errors: usize, ref_len: usize) {
        self.errors += errors;
        self.ref_len += ref_len;
    }

    pub fn rate(&self) -> Result<f64> {
        if self.ref_len == 0 {
            return Err(Error::EmptyReferenceCorpus);
        }
        Ok(self.errors as f64 / self.ref_len as f64)
    }
}

/// `(ΣS + ΣD + ΣI) / ΣN` over `(reference, hypothesis)` pairs.
pub fn corpus_wer<'a, T: PartialEq + 'a>(pairs: impl IntoIterator<Item = (&'a [T], &'a [T])>) -> Result<f64> {
    let mut counts = ErrorCounts::default();
    for (r, h) in pairs {
        counts.add(edit_distance(r, h), r.len());
    }
    counts.rate()
}

/// Pooled error rate of the per-utterance lowest-error hypothesis; ties go
/// to the better-ranked hypothesis.
pub fn oracle_wer(nbests: &[NBestList], refs: &[Vec<Token>]) -> Result<f64> {
    if nbests.len() != refs.len() {
        return Err(Error::InvalidConfig(format!("{} n-best lists for {} references", nbests.len(), refs.len())));
    }
    let mut counts = ErrorCounts::default();
    for (list, r) in nbests.iter().zip(refs) {
        let best = list.hyps.iter().map(|h| edit_distance(r, &h.tokens)).min().ok_or(Error::EmptyNBest)?;
        counts.add(best, r.len());
    }
    counts.rate()
}

/// A decoded utterance scored together with its reference under one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredOutcome {
    pub output: Vec<Token>,
    pub output_score: f64,
    pub reference: Vec<Token>,
    pub reference_score: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchModelErrors {
    pub utterances: usize,
    pub sentence_errors: usize,
    pub search_errors: usize,
    pub model_errors: usize,
}

impl SearchModelErrors {
    pub fn search_error_rate(&self) -> f64 {
        self.search_errors as f64 / self.utterances.max(1) as f64
    }

    pub fn model_error_rate(&self) -> f64 {
        self.model_errors as f64 / self.utterances.max(1) as f64
    }

    pub fn sentence_error_rate(&self) -> f64 {
        self.sentence_errors as f64 / self.utterances.max(1) as f64
    }
}

/// A wrong output is a search error when the model scores the reference
/// higher than the output, and a model error otherwise.
pub fn count_search_model_errors(outcomes: &[ScoredOutcome]) -> SearchModelErrors {
    let mut out = SearchModelErrors { utterances: outcomes.len(), ..Default::default() };
    for o in outcomes {
        if o.output == o.reference {
            continue;
        }
        out.sentence_errors += 1;
        if o.reference_score > o.output_score {
            out.search_errors += 1;
        } else {
            out.model_errors += 1;
        }
    }
    out
}

/// Entropy of a log-probability vector.
pub fn entropy(log_probs: &[f64]) -> f64 {
    -log_probs.iter().filter(|lp| lp.is_finite()).map(|&lp| lp.exp() * lp).sum::<f64>()
}

/// Mean per-step entropy of `scorer` along teacher-forced outputs, counting
/// every label step and the final termination step.
pub fn mean_entropy(scorer: &dyn Scorer, data: &[(Option<Arc<Context>>, Vec<Token>)]) -> Result<f64> {
    let mut total = 0.0;
    let mut steps = 0usize;
    for (context, output) in data {
        let mut state = scorer.start(context.clone())?;
        for &y in output {
            total += entropy(&scorer.distribution(&state));
            steps += 1;
            state = state.pushed(y);
        }
        total += entropy(&scorer.distribution(&state));
        steps += 1;
    }
    if steps == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(total / steps as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub confidence: f64,
    pub accuracy: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub ece: f64,
    pub bins: Vec<ReliabilityBin>,
}

pub const DEFAULT_ECE_BINS: usize = 10;

/// Expected calibration error over `bins` equal-width confidence bins.
/// Confidence 1.0 falls in the last bin.
pub fn ece(predictions: &[(f64, bool)], bins: usize) -> Result<Calibration> {
    if bins == 0 {
        return Err(Error::InvalidConfig("need at least one bin".into()));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut conf = vec![0.0; bins];
    let mut correct = vec![0usize; bins];
    let mut count = vec![0usize; bins];
    for &(c, ok) in predictions {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::InvalidMass(format!("confidence {c} outside [0, 1]")));
        }
        let b = ((c * bins as f64) as usize).min(bins - 1);
        conf[b] += c;
        correct[b] += usize::from(ok);
        count[b] += 1;
    }
    let n = predictions.len() as f64;
    let mut total = 0.0;
    let bins: Vec<ReliabilityBin> = (0..bins)
        .map(|b| {
            let k = count[b].max(1) as f64;
            let bin = ReliabilityBin {
                lower: b as f64 / bins as f64,
                upper: (b + 1) as f64 / bins as f64,
                confidence: conf[b] / k,
                accuracy: correct[b] as f64 / k,
                weight: count[b] as f64 / n,
            };
            total += bin.weight * (bin.accuracy - bin.confidence).abs();
            bin
        })
        .collect();
    Ok(Calibration { ece: total, bins })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    /// `f64::INFINITY` for the open last bin (written as `null`).
    pub upper: Option<f64>,
    pub mass: f64,
}

/// Distribution of per-sentence error rates, each sentence weighted by its
/// reference length. `edges` must start at 0 and increase; the last bin is
/// open-ended.
pub fn wer_histogram<'a, T: PartialEq + 'a>(
    pairs: impl IntoIterator<Item = (&'a [T], &'a [T])>,
    edges: &[f64],
) -> Result<Vec<HistogramBin>> {
    if edges.first() != Some(&0.0) || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidConfig("histogram edges must start at 0 and increase".into()));
    }
    let mut mass = vec![0.0; edges.len()];
    let mut total = 0usize;
    for (r, h) in pairs {
        if r.is_empty() {
            continue;
        }
        let wer = edit_distance(r, h) as f64 / r.len() as f64;
        let b = edges.partition_point(|&e| e <= wer) - 1;
        mass[b] += r.len() as f64;
        total += r.len();
    }
    if total == 0 {
        return Err(Error::EmptyReferenceCorpus);
    }
    Ok((0..edges.len())
        .map(|b| HistogramBin { lower: edges[b], upper: edges.get(b + 1).copied(), mass: mass[b] / total as f64 })
        .collect())
}

/// Reference words classified as correct or incorrect before and after
/// correction: `cc` stayed correct, `ci` was broken, `ic` was fixed, `ii`
/// stayed wrong.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionConfusion {
    pub cc: usize,
    pub ci: usize,
    pub ic: usize,
    pub ii: usize,
}

impl CorrectionConfusion {
    pub fn add(&mut self, other: &CorrectionConfusion) {
        self.cc += other.cc;
        self.ci += other.ci;
        self.ic += other.ic;
        self.ii += other.ii;
    }

    pub fn total(&self) -> usize {
        self.cc + self.ci + self.ic + self.ii
    }
}

fn correct_ref_positions<T: PartialEq>(reference: &[T], hyp: &[T]) -> Vec<bool> {
    let mut ok = vec![false; reference.len()];
    for pair in edit_alignment(reference, hyp).ops {
        if let (EditOp::Match, Some(i)) = (pair.op, pair.ref_pos) {
            ok[i] = true;
        }
    }
    ok
}

pub fn correction_confusion<T: PartialEq>(reference: &[T], asr: &[T], corrected: &[T]) -> CorrectionConfusion {
    let before = correct_ref_positions(reference, asr);
    let after = correct_ref_positions(reference, corrected);
    let mut out = CorrectionConfusion::default();
    for (b, a) in before.into_iter().zip(after) {
        match (b, a) {
            (true, true) => out.cc += 1,
            (true, false) => out.ci += 1,
            (false, true) => out.ic += 1,
            (false, false) => out.ii += 1,
        }
    }
    out
}

/// Evaluation summary of one decoder on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub wer: f64,
    pub utterances: usize,
    pub ref_words: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_wer: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub errors: Option<SearchModelErrors>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<Calibration>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram: Option<Vec<HistogramBin>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<CorrectionConfusion>,
}
