use std::sync::Arc;

use super::{Context, Scorer, ScorerState};
use crate::error::{Error, Result};
use crate::vocab::Token;

/// Toy denoising model: at output position `s` it mixes a point mass on the
/// `s`-th context token, a uniform floor, and an ordinary language model.
/// The context is read as if followed by end-of-sequence, and the copy
/// pointer stays on that final position once the output outruns it.
#[derive(Debug, Clone)]
pub struct CopyDlmScorer {
    copy_weight: f64,
    noise_weight: f64,
    lm: Arc<dyn Scorer>,
}

impl CopyDlmScorer {
    pub fn new(copy_weight: f64, noise_weight: f64, lm: Arc<dyn Scorer>) -> Result<Self> {
        let ok = copy_weight >= 0.0 && noise_weight >= 0.0 && copy_weight + noise_weight <= 1.0 + 1e-12;
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "copy/noise weights must be nonnegative with sum <= 1, got {copy_weight}/{noise_weight}"
            )));
        }
        Ok(Self { copy_weight, noise_weight, lm })
    }

    pub fn copy_weight(&self) -> f64 {
        self.copy_weight
    }

    fn lm_weight(&self) -> f64 {
        (1.0 - self.copy_weight - self.noise_weight).max(0.0)
    }

    /// Distribution of the copied token at output position `pos`.
    fn copy_mass(&self, context: &Context, pos: usize, probs: &mut [f64]) {
        let eos = self.eos() as usize;
        if pos >= context.len() {
            probs[eos] += self.copy_weight;
            return;
        }
        match context {
            Context::Labels(seq) => probs[seq[pos] as usize] += self.copy_weight,
            Context::Dense(dense) => {
                for &(tok, p) in &dense.steps()[pos] {
                    probs[tok as usize] += self.copy_weight * p;
                }
            }
        }
    }
}

impl Scorer for CopyDlmScorer {
    fn num_events(&self) -> usize {
        self.lm.num_events()
    }

    fn eos(&self) -> Token {
        self.lm.eos()
    }

    fn requires_context(&self) -> bool {
        true
    }

    fn distribution(&self, state: &ScorerState) -> Vec<f64> {
        let events = self.num_events();
        let mut probs = vec![self.noise_weight / events as f64; events];
        if let Some(ctx) = state.context() {
            self.copy_mass(ctx, state.prefix().len(), &mut probs);
        }
        let lm_w = self.lm_weight();
        if lm_w > 0.0 {
            let lm_state = state.with_context(None);
            for (p, lp) in probs.iter_mut().zip(self.lm.distribution(&lm_state)) {
                *p += lm_w * lp.exp();
            }
        }
        probs.into_iter().map(crate::math::ln).collect()
    }
}
