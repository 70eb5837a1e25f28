//! Reference CTC scoring by explicit enumeration of every alignment.
//! Deliberately naive; used to check the dynamic-programming kernels.

use crate::error::{Error, Result};
use crate::lattice::PosteriorLattice;
use crate::vocab::Token;

pub const MAX_ENUMERATED_ALIGNMENTS: u128 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombineMode {
    Sum,
    Max,
}

pub fn brute_force_ctc(lat: &PosteriorLattice, seq: &[Token], mode: CombineMode) -> Result<f64> {
    let width = lat.width();
    let frames = lat.frames();
    let count = (width as u128).checked_pow(frames as u32).unwrap_or(u128::MAX);
    if count > MAX_ENUMERATED_ALIGNMENTS {
        return Err(Error::TooLarge(count));
    }
    let blank = (width - 1) as Token;

    let mut total_linear = 0.0f64;
    let mut best_log = f64::NEG_INFINITY;
    let mut alignment = vec![0 as Token; frames];
    loop {
        if collapses_to(&alignment, blank, seq) {
            let mut prob = 1.0f64;
            let mut logp = 0.0f64;
            for (t, &y) in alignment.iter().enumerate() {
                let p = lat.prob(t, y);
                prob *= p;
                logp += p.ln();
            }
            total_linear += prob;
            if logp > best_log {
                best_log = logp;
            }
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == frames {
                return Ok(match mode {
                    CombineMode::Sum => total_linear.ln(),
                    CombineMode::Max => best_log,
                });
            }
            alignment[pos] += 1;
            if (alignment[pos] as usize) < width {
                break;
            }
            alignment[pos] = 0;
            pos += 1;
        }
    }
}

fn collapses_to(alignment: &[Token], blank: Token, seq: &[Token]) -> bool {
    let mut emitted = 0;
    let mut prev = blank;
    for &y in alignment {
        if y != blank && y != prev {
            if emitted >= seq.len() || seq[emitted] != y {
                return false;
            }
            emitted += 1;
        }
        prev = y;
    }
    emitted == seq.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::l1;

    #[test]
    fn l1_values() {
        let lat = l1();
        let sum = brute_force_ctc(&lat, &[0], CombineMode::Sum).unwrap();
        let max = brute_force_ctc(&lat, &[0], CombineMode::Max).unwrap();
        assert!((sum - 0.48f64.ln()).abs() < 1e-6);
        assert!((max - 0.36f64.ln()).abs() < 1e-6);
        assert_eq!(brute_force_ctc(&lat, &[0, 0], CombineMode::Sum).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn size_guard() {
        let rows = vec![vec![0.25; 4]; 8];
        let lat = PosteriorLattice::from_rows("g", &rows).unwrap();
        assert!(brute_force_ctc(&lat, &[0], CombineMode::Sum).is_ok());
        let rows = vec![vec![0.25; 4]; 12];
        let lat = PosteriorLattice::from_rows("g", &rows).unwrap();
        assert!(matches!(brute_force_ctc(&lat, &[0], CombineMode::Sum), Err(Error::TooLarge(_))));
    }
}
