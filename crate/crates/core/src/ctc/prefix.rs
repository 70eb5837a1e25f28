//! Exact CTC prefix scoring for label-synchronous search.
//!
//! For a prefix `h` the state keeps, per frame `t`, the log mass of all
//! alignments of frames `1..=t` that collapse to `h` and end in a label
//! (`nonblank`) or in a blank (`blank`). The prefix probability
//! `ψ(h) = p(output starts with h)` satisfies `ψ(h) = P(h) + Σ_c ψ(hc)`,
//! so `ψ(hc)/ψ(h)` and `P(h)/ψ(h)` form the next-label distribution with
//! termination.

use crate::lattice::PosteriorLattice;
use crate::math::{log_add_exp, log_ratio, LOG_ZERO};
use crate::vocab::Token;

/// Log-domain view of a lattice, shared by all prefix states of one utterance.
#[derive(Debug, Clone)]
pub struct CtcPrefixScorer {
    log_probs: Vec<f64>,
    width: usize,
    frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrefixState {
    nonblank: Vec<f64>,
    blank: Vec<f64>,
    last: Option<Token>,
    len: usize,
    log_prefix: f64,
}

impl PrefixState {
    /// `log ψ(h)`: mass of all label sequences that start with this prefix.
    pub fn log_prefix_prob(&self) -> f64 {
        self.log_prefix
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn last(&self) -> Option<Token> {
        self.last
    }
}

impl CtcPrefixScorer {
    pub fn new(lat: &PosteriorLattice) -> Self {
        let log_probs = (0..lat.frames()).flat_map(|t| lat.row_f64(t)).map(crate::math::ln).collect();
        Self { log_probs, width: lat.width(), frames: lat.frames() }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn num_labels(&self) -> usize {
        self.width - 1
    }

    #[inline]
    fn lp(&self, t: usize, y: usize) -> f64 {
        self.log_probs[t * self.width + y]
    }

    fn blank(&self) -> usize {
        self.width - 1
    }

    /// State for the empty prefix.
    pub fn start(&self) -> PrefixState {
        let mut blank = Vec::with_capacity(self.frames);
        let mut acc = 0.0;
        for t in 0..self.frames {
            acc += self.lp(t, self.blank());
            blank.push(acc);
        }
        PrefixState { nonblank: vec![LOG_ZERO; self.frames], blank, last: None, len: 0, log_prefix: 0.0 }
    }

    /// Extends `state` by `label`, returning the new state and
    /// `log ψ(h·label) - log ψ(h)`.
    pub fn step(&self, state: &PrefixState, label: Token) -> (PrefixState, f64) {
        let c = label as usize;
        let blank = self.blank();
        let mut nonblank = vec![LOG_ZERO; self.frames];
        let mut blanks = vec![LOG_ZERO; self.frames];
        let mut psi = LOG_ZERO;
        if state.len == 0 {
            nonblank[0] = self.lp(0, c);
            psi = nonblank[0];
        }
        for t in 1..self.frames {
            let phi = self.entry_mass(state, label, t - 1);
            let lp_c = self.lp(t, c);
            nonblank[t] = add(log_add_exp(nonblank[t - 1], phi), lp_c);
            blanks[t] = add(log_add_exp(blanks[t - 1], nonblank[t - 1]), self.lp(t, blank));
            psi = log_add_exp(psi, add(phi, lp_c));
        }
        let delta = log_ratio(psi, state.log_prefix);
        let next = PrefixState {
            nonblank,
            blank: blanks,
            last: Some(label),
            len: state.len + 1,
            log_prefix: psi,
        };
        (next, delta)
    }

    /// `log ψ(h·c) - log ψ(h)` for every label `c`, without building states.
    pub fn extension_deltas(&self, state: &PrefixState) -> Vec<f64> {
        let labels = self.num_labels();
        let mut psi = vec![LOG_ZERO; labels];
        if state.len == 0 {
            for (c, p) in psi.iter_mut().enumerate() {
                *p = self.lp(0, c);
            }
        }
        for t in 1..self.frames {
            let both = log_add_exp(state.blank[t - 1], state.nonblank[t - 1]);
            if both == LOG_ZERO {
                continue;
            }
            for (c, p) in psi.iter_mut().enumerate() {
                let phi = if state.last == Some(c as Token) { state.blank[t - 1] } else { both };
                *p = log_add_exp(*p, add(phi, self.lp(t, c)));
            }
        }
        psi.into_iter().map(|p| log_ratio(p, state.log_prefix)).collect()
    }

    /// Exact `log P(h)` for the prefix taken as a complete sequence.
    pub fn finish(&self, state: &PrefixState) -> f64 {
        let last = self.frames - 1;
        log_add_exp(state.nonblank[last], state.blank[last])
    }

    /// Log-probability of terminating after the prefix: `log P(h) - log ψ(h)`.
    pub fn end_delta(&self, state: &PrefixState) -> f64 {
        log_ratio(self.finish(state), state.log_prefix)
    }

    /// Mass that may enter label `c` at frame `t+1` from frame `t`.
    fn entry_mass(&self, state: &PrefixState, label: Token, t: usize) -> f64 {
        if state.last == Some(label) {
            state.blank[t]
        } else {
            log_add_exp(state.blank[t], state.nonblank[t])
        }
    }
}

#[inline]
fn add(a: f64, b: f64) -> f64 {
    if a == LOG_ZERO || b == LOG_ZERO {
        LOG_ZERO
    } else {
        a + b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::forward_logprob;
    use crate::testing::{l1, random_lattice};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn telescoped(scorer: &CtcPrefixScorer, seq: &[Token]) -> (f64, f64) {
        let mut state = scorer.start();
        let mut sum = 0.0;
        for &y in seq {
            let (next, delta) = scorer.step(&state, y);
            sum += delta;
            state = next;
        }
        (scorer.finish(&state), sum + scorer.end_delta(&state))
    }

    #[test]
    fn l1_examples() {
        let scorer = CtcPrefixScorer::new(&l1());
        assert!((scorer.finish(&scorer.start()) - 0.01f64.ln()).abs() < 1e-6);
        let (full, tele) = telescoped(&scorer, &[0]);
        assert!((full - 0.48f64.ln()).abs() < 1e-6);
        assert!((tele - full).abs() < 1e-12);
        let (full, tele) = telescoped(&scorer, &[0, 0]);
        assert_eq!(full, LOG_ZERO);
        assert_eq!(tele, LOG_ZERO);
    }

    #[test]
    fn matches_forward_and_telescopes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let v = rng.random_range(1..=3);
            let t = rng.random_range(1..=6);
            let lat = random_lattice(&mut rng, v, t);
            let scorer = CtcPrefixScorer::new(&lat);
            let len = rng.random_range(0..=5);
            let seq: Vec<Token> = (0..len).map(|_| rng.random_range(0..v as Token)).collect();
            let (full, tele) = telescoped(&scorer, &seq);
            let fwd = forward_logprob(&lat, &seq);
            if fwd == LOG_ZERO {
                assert_eq!(full, LOG_ZERO);
                assert_eq!(tele, LOG_ZERO);
            } else {
                assert!((full - fwd).abs() < 1e-9, "{full} vs {fwd}");
                assert!((tele - fwd).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn extension_deltas_agree_with_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lat = random_lattice(&mut rng, 3, 6);
        let scorer = CtcPrefixScorer::new(&lat);
        let mut state = scorer.start();
        for &y in &[1, 1, 2] {
            let deltas = scorer.extension_deltas(&state);
            for c in 0..3 {
                let (_, d) = scorer.step(&state, c);
                assert!((deltas[c as usize] - d).abs() < 1e-12);
            }
            state = scorer.step(&state, y).0;
        }
    }

    #[test]
    fn prefix_identity_holds() {
        // ψ(h) = P(h) + Σ_c ψ(hc): deltas plus termination sum to one
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lat = random_lattice(&mut rng, 3, 5);
        let scorer = CtcPrefixScorer::new(&lat);
        let state = scorer.step(&scorer.start(), 2).0;
        let total: f64 = scorer.extension_deltas(&state).iter().map(|d| d.exp()).sum::<f64>()
            + scorer.end_delta(&state).exp();
        assert!((total - 1.0).abs() < 1e-9);
    }
}
