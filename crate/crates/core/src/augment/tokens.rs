use rand::Rng;

use crate::ctc::greedy_collapse;
use crate::error::{Error, Result};
use crate::lattice::PosteriorLattice;
use crate::vocab::Token;

/// Replaces each non-eos token, with probability `p ~ U(p_min, p_max)`
/// drawn once per sequence, by a uniform draw from the vocabulary without
/// eos. The draw may reproduce the original token.
pub fn substitute_tokens(
    seq: &[Token],
    p_min: f64,
    p_max: f64,
    vocab_size: usize,
    eos: Token,
    rng: &mut impl Rng,
) -> Result<Vec<Token>> {
    if !(0.0 <= p_min && p_min <= p_max && p_max <= 1.0) {
        return Err(Error::InvalidConfig(format!("need 0 <= p_min ({p_min}) <= p_max ({p_max}) <= 1")));
    }
    if vocab_size < 2 || eos as usize >= vocab_size {
        return Err(Error::InvalidConfig(format!("cannot substitute within a vocabulary of {vocab_size}")));
    }
    let p = if p_min == p_max { p_min } else { rng.random_range(p_min..p_max) };
    let draw = |rng: &mut dyn rand::RngCore| {
        let y = rng.random_range(0..vocab_size as Token - 1);
        if y >= eos { y + 1 } else { y }
    };
    Ok(seq
        .iter()
        .map(|&tok| if tok != eos && rng.random::<f64>() < p { draw(rng) } else { tok })
        .collect())
}

/// Samples a hypothesis by drawing each emitted label from the top `k`
/// non-blank labels of its emission frame (the first frame of each greedy
/// label run), renormalized.
pub fn topk_sample_hypothesis(lat: &PosteriorLattice, k: usize, rng: &mut impl Rng) -> Result<Vec<Token>> {
    if k == 0 {
        return Err(Error::InvalidConfig("top-k sampling needs k >= 1".into()));
    }
    let blank = lat.blank();
    let mut out = Vec::new();
    let mut prev = blank;
    for t in 0..lat.frames() {
        let best = lat.argmax(t);
        if best != blank && best != prev {
            out.push(sample_row(lat.row(t), blank, k, rng));
        }
        prev = best;
    }
    debug_assert_eq!(out.len(), greedy_collapse(lat).len());
    Ok(out)
}

fn sample_row(row: &[f32], blank: Token, k: usize, rng: &mut impl Rng) -> Token {
    let mut labels: Vec<(Token, f64)> =
        row.iter().enumerate().filter(|&(y, _)| y != blank as usize).map(|(y, &p)| (y as Token, f64::from(p))).collect();
    // stable sort keeps lower ids first on ties, matching the argmax rule
    labels.sort_by(|a, b| b.1.total_cmp(&a.1));
    labels.truncate(k);
    if k == 1 {
        return labels[0].0;
    }
    let total: f64 = labels.iter().map(|l| l.1).sum();
    let mut u = rng.random::<f64>() * total;
    for &(y, p) in &labels {
        if u < p {
            return y;
        }
        u -= p;
    }
    labels.iter().rev().find(|l| l.1 > 0.0).unwrap_or(&labels[0]).0
}
