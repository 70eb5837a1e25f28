use std::sync::Arc;

use super::{Context, Scorer, ScorerState};
use crate::error::{Error, Result};
use crate::math;
use crate::vocab::Token;

/// Rescales a scorer's per-step log-probabilities by `1/T` and renormalizes.
#[derive(Debug, Clone)]
pub struct TemperatureScorer {
    inner: Arc<dyn Scorer>,
    temperature: f64,
}

impl TemperatureScorer {
    pub fn new(inner: Arc<dyn Scorer>, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::NonPositiveTemperature(temperature));
        }
        Ok(Self { inner, temperature })
    }
}

impl Scorer for TemperatureScorer {
    fn num_events(&self) -> usize {
        self.inner.num_events()
    }

    fn eos(&self) -> Token {
        self.inner.eos()
    }

    fn requires_context(&self) -> bool {
        self.inner.requires_context()
    }

    fn start(&self, context: Option<Arc<Context>>) -> Result<ScorerState> {
        self.inner.start(context)
    }

    fn distribution(&self, state: &ScorerState) -> Vec<f64> {
        let scaled: Vec<f64> = self.inner.distribution(state).iter().map(|lp| lp / self.temperature).collect();
        math::log_softmax(&scaled)
    }
}
