//! Random instance generators for property tests and the acceptance suite.

use rand::Rng;

use crate::lattice::PosteriorLattice;
use crate::vocab::{Token, Vocabulary};

/// The two-frame lattice `(a: 0.6, b: 0.3, ∅: 0.1)` used throughout the examples.
pub fn l1() -> PosteriorLattice {
    PosteriorLattice::from_rows("L1", &[vec![0.6, 0.3, 0.1], vec![0.6, 0.3, 0.1]]).expect("valid rows")
}

/// Vocabulary `t0 .. t{v-1}` with the last token as end-of-sequence.
pub fn plain_vocab(v: usize) -> Vocabulary {
    let tokens = (0..v).map(|i| format!("t{i}")).collect();
    Vocabulary::new(tokens, (v - 1) as Token).expect("distinct tokens")
}

/// Rows drawn uniformly from the probability simplex over `v + 1` columns.
pub fn random_lattice(rng: &mut impl Rng, v: usize, frames: usize) -> PosteriorLattice {
    let rows: Vec<Vec<f64>> = (0..frames)
        .map(|_| {
            let raw: Vec<f64> = (0..=v).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let sum: f64 = raw.iter().sum();
            raw.iter().map(|x| x / sum).collect()
        })
        .collect();
    PosteriorLattice::from_rows("rand", &rows).expect("nonempty")
}

/// Rows that put most of their mass on one random column, with occasional
/// repeats of the previous frame's peak, so confident runs occur.
pub fn peaky_lattice(rng: &mut impl Rng, v: usize, frames: usize) -> PosteriorLattice {
    let mut peak = rng.random_range(0..=v);
    let rows: Vec<Vec<f64>> = (0..frames)
        .map(|_| {
            if rng.random::<f64>() < 0.4 {
                peak = rng.random_range(0..=v);
            }
            let height = rng.random_range(0.3..1.0);
            let mut raw: Vec<f64> = (0..=v).map(|_| rng.random::<f64>() * (1.0 - height)).collect();
            raw[peak] = height;
            let sum: f64 = raw.iter().sum();
            raw.iter().map(|x| x / sum).collect()
        })
        .collect();
    PosteriorLattice::from_rows("peaky", &rows).expect("nonempty")
}

/// Every label sequence over `0..v` (eos included) of length at most `max_len`.
pub fn all_sequences(v: usize, max_len: usize) -> Vec<Vec<Token>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for seq in &frontier {
            for y in 0..v as Token {
                let mut s: Vec<Token> = seq.clone();
                s.push(y);
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}
