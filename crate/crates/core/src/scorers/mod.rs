//! Stepwise sequence scorers: the contract shared by language models and
//! denoising language models, plus small reference implementations.
//!
//! A scorer assigns every state a distribution over the `V` vocabulary
//! events, where the vocabulary's end-of-sequence id is the termination
//! event. The score of a full sequence is the sum of its step
//! log-probabilities followed by the termination step.

mod channel_dlm;
mod copy;
mod mixture;
mod ngram;
mod prior;
mod table;
mod temperature;

use std::fmt::Debug;
use std::sync::Arc;

pub use channel_dlm::ChannelDlmScorer;
pub use copy::CopyDlmScorer;
pub use mixture::MixtureScorer;
pub use ngram::NGramScorer;
pub use prior::{PriorAccumulator, PriorModel};
pub use table::TableScorer;
pub use temperature::TemperatureScorer;

use crate::augment::DenseTopK;
use crate::error::{Error, Result};
use crate::vocab::Token;

/// Conditioning input of a denoising scorer.
#[derive(Debug, Clone, PartialEq)]
pub enum Context {
    Labels(Vec<Token>),
    Dense(DenseTopK),
}

impl Context {
    pub fn len(&self) -> usize {
        match self {
            Context::Labels(seq) => seq.len(),
            Context::Dense(dense) => dense.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Snapshot of a scorer after consuming a prefix. Cheap to clone and
/// independent of other states, so beam hypotheses can branch freely.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerState {
    context: Option<Arc<Context>>,
    prefix: Vec<Token>,
}

impl ScorerState {
    pub fn new(context: Option<Arc<Context>>) -> Self {
        Self { context, prefix: Vec::new() }
    }

    pub fn context(&self) -> Option<&Context> {
        self.context.as_deref()
    }

    pub fn prefix(&self) -> &[Token] {
        &self.prefix
    }

    pub fn pushed(&self, label: Token) -> Self {
        let mut prefix = Vec::with_capacity(self.prefix.len() + 1);
        prefix.extend_from_slice(&self.prefix);
        prefix.push(label);
        Self { context: self.context.clone(), prefix }
    }

    pub(crate) fn with_context(&self, context: Option<Arc<Context>>) -> Self {
        Self { context, prefix: self.prefix.clone() }
    }
}

pub trait Scorer: Send + Sync + Debug {
    /// Number of events `V` in every distribution.
    fn num_events(&self) -> usize;

    /// Termination event id.
    fn eos(&self) -> Token;

    fn requires_context(&self) -> bool {
        false
    }

    /// Log-probabilities of all `V` events after `state`.
    fn distribution(&self, state: &ScorerState) -> Vec<f64>;

    fn start(&self, context: Option<Arc<Context>>) -> Result<ScorerState> {
        if self.requires_context() && context.is_none() {
            return Err(Error::MissingContext);
        }
        Ok(ScorerState::new(context))
    }

    fn step(&self, state: &ScorerState, label: Token) -> (ScorerState, f64) {
        let lp = self.distribution(state)[label as usize];
        (state.pushed(label), lp)
    }

    /// `log p(seq, eos | context)`.
    fn score_sequence(&self, context: Option<Arc<Context>>, seq: &[Token]) -> Result<f64> {
        let mut state = self.start(context)?;
        let mut total = 0.0;
        for &y in seq {
            let (next, lp) = self.step(&state, y);
            total += lp;
            state = next;
        }
        Ok(total + self.distribution(&state)[self.eos() as usize])
    }
}

/// Same distribution in every state.
#[derive(Debug, Clone)]
pub struct UniformScorer {
    events: usize,
    eos: Token,
}

impl UniformScorer {
    pub fn new(events: usize, eos: Token) -> Self {
        assert!((eos as usize) < events, "eos must be one of the events");
        Self { events, eos }
    }
}

impl Scorer for UniformScorer {
    fn num_events(&self) -> usize {
        self.events
    }

    fn eos(&self) -> Token {
        self.eos
    }

    fn distribution(&self, _state: &ScorerState) -> Vec<f64> {
        vec![-(self.events as f64).ln(); self.events]
    }
}

/// Argmax decode by repeatedly taking the most probable event until
/// termination or `max_len` labels.
pub fn greedy_decode(scorer: &dyn Scorer, context: Option<Arc<Context>>, max_len: usize) -> Result<Vec<Token>> {
    let mut state = scorer.start(context)?;
    let mut out = Vec::new();
    while out.len() < max_len {
        let dist = scorer.distribution(&state);
        let best = crate::math::argmax(dist.iter().copied()).unwrap_or(0) as Token;
        if best == scorer.eos() {
            break;
        }
        out.push(best);
        state = state.pushed(best);
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random walks of up to 10 steps; every visited distribution must sum to one.
    pub fn assert_normalized(scorer: &dyn Scorer, context: Option<Arc<Context>>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let mut state = scorer.start(context.clone()).unwrap();
            for _ in 0..rng.random_range(0..=10) {
                let dist = scorer.distribution(&state);
                assert_eq!(dist.len(), scorer.num_events());
                let mass: f64 = dist.iter().map(|d| d.exp()).sum();
                assert!((mass - 1.0).abs() < 1e-9, "mass {mass} after {:?}", state.prefix());
                let y = rng.random_range(0..scorer.num_events()) as Token;
                state = scorer.step(&state, y).0;
            }
        }
    }

    /// Full-sequence score equals the sum of its step deltas plus termination.
    pub fn assert_telescopes(scorer: &dyn Scorer, context: Option<Arc<Context>>, seq: &[Token]) {
        let mut state = scorer.start(context.clone()).unwrap();
        let mut sum = 0.0;
        for &y in seq {
            let before = scorer.distribution(&state)[y as usize];
            let (next, lp) = scorer.step(&state, y);
            assert_eq!(before, lp);
            sum += lp;
            state = next;
        }
        sum += scorer.distribution(&state)[scorer.eos() as usize];
        let full = scorer.score_sequence(context, seq).unwrap();
        assert!((full - sum).abs() < 1e-12 || (full == sum));
    }

    #[test]
    fn uniform_is_normalized() {
        let s = UniformScorer::new(5, 4);
        assert_normalized(&s, None, 1);
        assert_telescopes(&s, None, &[0, 1, 2]);
        let score = s.score_sequence(None, &[0, 1]).unwrap();
        assert!((score - 3.0 * -(5f64.ln())).abs() < 1e-12);
    }
}
