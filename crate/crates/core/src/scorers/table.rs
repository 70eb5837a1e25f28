use std::collections::{BTreeMap, HashMap};

use super::{Scorer, ScorerState};
use crate::error::{Error, Result};
use crate::math;
use crate::vocab::Token;

/// Scorer over a finite table of sequence probabilities, factorized along
/// the prefix tree so that full-sequence scores reproduce the table.
///
/// Mass missing from the table goes to first labels the table never uses.
/// States outside the table's support get a uniform distribution.
#[derive(Debug, Clone)]
pub struct TableScorer {
    events: usize,
    eos: Token,
    /// Total table mass below each prefix.
    prefix_mass: HashMap<Vec<Token>, f64>,
    exact: HashMap<Vec<Token>, f64>,
    junk: f64,
}

impl TableScorer {
    pub fn new(table: &[(Vec<Token>, f64)], events: usize, eos: Token) -> Result<Self> {
        let mut exact: HashMap<Vec<Token>, f64> = HashMap::new();
        let mut prefix_mass: HashMap<Vec<Token>, f64> = HashMap::new();
        let mut total = 0.0;
        for (seq, p) in table {
            if !(*p >= 0.0 && p.is_finite()) {
                return Err(Error::InvalidMass(format!("probability {p} for {seq:?}")));
            }
            if let Some(&bad) = seq.iter().find(|&&t| t == eos || t as usize >= events) {
                return Err(Error::InvalidMass(format!("sequence {seq:?} contains invalid label {bad}")));
            }
            *exact.entry(seq.clone()).or_default() += p;
            for end in 0..=seq.len() {
                *prefix_mass.entry(seq[..end].to_vec()).or_default() += p;
            }
            total += p;
        }
        if total > 1.0 + 1e-9 {
            return Err(Error::InvalidMass(format!("table mass {total} exceeds 1")));
        }
        let junk = (1.0 - total).max(0.0);
        let scorer = Self { events, eos, prefix_mass, exact, junk };
        if junk > 1e-12 && scorer.junk_targets() == 0 {
            return Err(Error::InvalidMass("no unused first label left to absorb the missing mass".into()));
        }
        Ok(scorer)
    }

    /// Parses the JSON form: space-joined token ids mapped to probabilities.
    pub fn from_json(text: &str, events: usize, eos: Token) -> Result<Self> {
        let raw: BTreeMap<String, f64> = serde_json::from_str(text)?;
        let mut table = Vec::with_capacity(raw.len());
        for (key, p) in raw {
            let seq = key
                .split_whitespace()
                .map(|t| t.parse::<Token>().map_err(|e| Error::InvalidMass(format!("bad token id {t:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            table.push((seq, p));
        }
        Self::new(&table, events, eos)
    }

    fn child_mass(&self, prefix: &[Token], label: Token) -> f64 {
        let mut key = prefix.to_vec();
        key.push(label);
        self.prefix_mass.get(&key).copied().unwrap_or(0.0)
    }

    fn junk_targets(&self) -> usize {
        (0..self.events as Token)
            .filter(|&y| y != self.eos && self.child_mass(&[], y) == 0.0)
            .count()
            + usize::from(self.exact.get(&Vec::new()).copied().unwrap_or(0.0) == 0.0)
    }
}

impl Scorer for TableScorer {
    fn num_events(&self) -> usize {
        self.events
    }

    fn eos(&self) -> Token {
        self.eos
    }

    fn distribution(&self, state: &ScorerState) -> Vec<f64> {
        let prefix = state.prefix();
        let uniform = || vec![-(self.events as f64).ln(); self.events];
        let mass = self.prefix_mass.get(prefix).copied().unwrap_or(0.0);
        if prefix.contains(&self.eos) {
            return uniform();
        }
        let mut probs: Vec<f64> = (0..self.events as Token)
            .map(|y| {
                if y == self.eos {
                    self.exact.get(prefix).copied().unwrap_or(0.0)
                } else {
                    self.child_mass(prefix, y)
                }
            })
            .collect();
        if prefix.is_empty() {
            if self.junk > 0.0 {
                let share = self.junk / self.junk_targets() as f64;
                for p in probs.iter_mut().filter(|p| **p == 0.0) {
                    *p = share;
                }
            }
            return probs.into_iter().map(math::ln).collect();
        }
        if mass <= 0.0 {
            return uniform();
        }
        probs.into_iter().map(|p| math::ln(p / mass)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorers::greedy_decode;
    use crate::scorers::tests::{assert_normalized, assert_telescopes};

    #[test]
    fn reproduces_table_scores() {
        let t = TableScorer::new(&[(vec![0], 0.7), (vec![1], 0.3)], 3, 2).unwrap();
        assert!((t.score_sequence(None, &[0]).unwrap() - 0.7f64.ln()).abs() < 1e-12);
        assert!((t.score_sequence(None, &[1]).unwrap() - 0.3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn prefix_conditionals_sum_table_mass() {
        let t = TableScorer::new(&[(vec![0, 1], 0.5), (vec![0], 0.2), (vec![1], 0.3)], 3, 2).unwrap();
        let root = t.distribution(&ScorerState::new(None));
        assert!((root[0].exp() - 0.7).abs() < 1e-12);
        assert!((root[1].exp() - 0.3).abs() < 1e-12);
        assert!((t.score_sequence(None, &[0, 1]).unwrap() - 0.5f64.ln()).abs() < 1e-12);
        assert_normalized(&t, None, 2);
        assert_telescopes(&t, None, &[0, 1]);
    }

    #[test]
    fn greedy_follows_single_entry() {
        let t = TableScorer::new(&[(vec![0, 1], 1.0)], 3, 2).unwrap();
        assert_eq!(greedy_decode(&t, None, 10).unwrap(), vec![0, 1]);
    }

    #[test]
    fn deficient_mass_goes_to_unused_labels() {
        let t = TableScorer::new(&[(vec![0], 0.5)], 3, 2).unwrap();
        assert_normalized(&t, None, 3);
        assert!((t.score_sequence(None, &[0]).unwrap() - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn invalid_tables() {
        assert!(matches!(TableScorer::new(&[(vec![0], 0.7), (vec![1], 0.7)], 3, 2), Err(Error::InvalidMass(_))));
        assert!(matches!(TableScorer::new(&[(vec![0], -0.1)], 3, 2), Err(Error::InvalidMass(_))));
        assert!(matches!(TableScorer::new(&[(vec![2], 0.5)], 3, 2), Err(Error::InvalidMass(_))));
        // every first event is used, nowhere to put the missing 0.1
        let full = [(vec![], 0.3), (vec![0], 0.3), (vec![1], 0.3)];
        assert!(matches!(TableScorer::new(&full, 3, 2), Err(Error::InvalidMass(_))));
    }

    #[test]
    fn json_form() {
        let t = TableScorer::from_json(r#"{"0 1": 0.6, "": 0.4}"#, 3, 2).unwrap();
        assert!((t.score_sequence(None, &[]).unwrap() - 0.4f64.ln()).abs() < 1e-12);
        assert!((t.score_sequence(None, &[0, 1]).unwrap() - 0.6f64.ln()).abs() < 1e-12);
    }
}
