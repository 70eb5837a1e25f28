//! CTC probability kernels over a [`PosteriorLattice`].

mod oracle;
mod prefix;

pub use oracle::{brute_force_ctc, CombineMode, MAX_ENUMERATED_ALIGNMENTS};
pub use prefix::{CtcPrefixScorer, PrefixState};

use crate::lattice::PosteriorLattice;
use crate::math::{self, LOG_ZERO};
use crate::vocab::Token;

/// Merges repeated labels, then drops blanks.
pub fn collapse(alignment: &[Token], blank: Token) -> Vec<Token> {
    let mut out = Vec::new();
    let mut prev = None;
    for &y in alignment {
        if Some(y) != prev && y != blank {
            out.push(y);
        }
        prev = Some(y);
    }
    out
}

/// Framewise argmax (blank included) followed by collapse.
pub fn greedy_collapse(lat: &PosteriorLattice) -> Vec<Token> {
    let path: Vec<Token> = (0..lat.frames()).map(|t| lat.argmax(t)).collect();
    collapse(&path, lat.blank())
}

/// Exact `log p(seq | x)`, summing over all alignments.
pub fn forward_logprob(lat: &PosteriorLattice, seq: &[Token]) -> f64 {
    alignment_lattice(lat, seq, math::log_add_exp)
}

/// Log-probability of the single best alignment of `seq`.
pub fn viterbi_logprob(lat: &PosteriorLattice, seq: &[Token]) -> f64 {
    alignment_lattice(lat, seq, f64::max)
}

/// Forward recursion over the blank-extended label sequence
/// `∅ a1 ∅ a2 ... aS ∅`, with `combine` as the semiring addition.
fn alignment_lattice(lat: &PosteriorLattice, seq: &[Token], combine: fn(f64, f64) -> f64) -> f64 {
    let blank = lat.blank();
    let frames = lat.frames();
    let ext: Vec<Token> = std::iter::once(blank)
        .chain(seq.iter().flat_map(|&a| [a, blank]))
        .collect();
    let n = ext.len();

    let mut prev = vec![LOG_ZERO; n];
    prev[0] = lat.log_prob(0, ext[0]);
    if n > 1 {
        prev[1] = lat.log_prob(0, ext[1]);
    }
    let mut cur = vec![LOG_ZERO; n];
    for t in 1..frames {
        for s in 0..n {
            let mut acc = prev[s];
            if s >= 1 {
                acc = combine(acc, prev[s - 1]);
            }
            if s >= 2 && ext[s] != blank && ext[s] != ext[s - 2] {
                acc = combine(acc, prev[s - 2]);
            }
            cur[s] = if acc == LOG_ZERO { LOG_ZERO } else { acc + lat.log_prob(t, ext[s]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    if n == 1 {
        prev[0]
    } else {
        combine(prev[n - 1], prev[n - 2])
    }
}

/// Merges runs of consecutive frames that share their argmax and whose
/// argmax probability exceeds `threshold` in every frame. A merged frame is
/// the elementwise maximum over the run, renormalized.
pub fn soft_collapse(lat: &PosteriorLattice, threshold: f64) -> PosteriorLattice {
    let width = lat.width();
    let frames = lat.frames();
    let confident = |t: usize| -> Option<Token> {
        let y = lat.argmax(t);
        (lat.prob(t, y) > threshold).then_some(y)
    };

    let mut out: Vec<f32> = Vec::with_capacity(lat.raw().len());
    let mut t = 0;
    while t < frames {
        let mut end = t + 1;
        if let Some(label) = confident(t) {
            while end < frames && confident(end) == Some(label) {
                end += 1;
            }
        }
        if end - t == 1 {
            out.extend_from_slice(lat.row(t));
        } else {
            let mut merged = vec![0.0f64; width];
            for row in t..end {
                for (m, &p) in merged.iter_mut().zip(lat.row(row)) {
                    *m = m.max(f64::from(p));
                }
            }
            let sum: f64 = merged.iter().sum();
            out.extend(merged.iter().map(|&m| (m / sum) as f32));
        }
        t = end;
    }
    PosteriorLattice::new(lat.utt_id(), width, out).expect("soft collapse keeps at least one frame")
}
