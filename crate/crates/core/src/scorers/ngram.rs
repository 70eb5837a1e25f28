use std::collections::HashMap;

use super::{Scorer, ScorerState};
use crate::error::{Error, Result};
use crate::vocab::Token;

const BOS: Token = Token::MAX;

/// Add-k smoothed n-gram model over token ids. Sentences are padded with
/// a start symbol on the left and end with the end-of-sequence token.
#[derive(Debug, Clone)]
pub struct NGramScorer {
    order: usize,
    add_k: f64,
    events: usize,
    eos: Token,
    counts: HashMap<Vec<Token>, HistoryCounts>,
}

#[derive(Debug, Clone, Default)]
struct HistoryCounts {
    total: f64,
    next: HashMap<Token, f64>,
}

impl NGramScorer {
    pub fn train(corpus: &[Vec<Token>], order: usize, add_k: f64, events: usize, eos: Token) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidConfig("n-gram order must be at least 1".into()));
        }
        if !(add_k > 0.0 && add_k.is_finite()) {
            return Err(Error::InvalidConfig(format!("add-k must be positive and finite, got {add_k}")));
        }
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut counts: HashMap<Vec<Token>, HistoryCounts> = HashMap::new();
        for sentence in corpus {
            if let Some(&bad) = sentence.iter().find(|&&t| t as usize >= events) {
                return Err(Error::InvalidConfig(format!("token {bad} outside the {events}-event vocabulary")));
            }
            let padded: Vec<Token> = std::iter::repeat_n(BOS, order - 1)
                .chain(sentence.iter().copied())
                .chain(std::iter::once(eos))
                .collect();
            for window in padded.windows(order) {
                let (hist, next) = window.split_at(order - 1);
                let entry = counts.entry(hist.to_vec()).or_default();
                entry.total += 1.0;
                *entry.next.entry(next[0]).or_default() += 1.0;
            }
        }
        Ok(Self { order, add_k, events, eos, counts })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn history(&self, prefix: &[Token]) -> Vec<Token> {
        let need = self.order - 1;
        let start = prefix.len().saturating_sub(need);
        let mut hist = vec![BOS; need - (prefix.len() - start)];
        hist.extend_from_slice(&prefix[start..]);
        hist
    }
}

impl Scorer for NGramScorer {
    fn num_events(&self) -> usize {
        self.events
    }

    fn eos(&self) -> Token {
        self.eos
    }

    fn distribution(&self, state: &ScorerState) -> Vec<f64> {
        let hist = self.history(state.prefix());
        let k = self.add_k;
        let denom_extra = k * self.events as f64;
        match self.counts.get(&hist) {
            Some(h) => {
                let denom = (h.total + denom_extra).ln();
                (0..self.events as Token)
                    .map(|y| (h.next.get(&y).copied().unwrap_or(0.0) + k).ln() - denom)
                    .collect()
            }
            None => vec![-(self.events as f64).ln(); self.events],
        }
    }
}
