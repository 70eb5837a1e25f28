use std::sync::Arc;

use super::{Context, Scorer, ScorerState};
use crate::channel::Confusion;
use crate::error::{Error, Result};
use crate::vocab::Token;

/// Denoising model matched to a known substitution channel. At output
/// position `s` it inverts the channel for the observed token `ã_s`:
///
/// `q(y | h) ∝ p_LM(y | h) · C(ã_s | y)`,
///
/// and mixes in the plain LM with weight `smoothing` to cover insertions
/// and deletions. Past the end of the context it predicts termination.
/// Dense contexts use the expected likelihood over each step's top-k.
#[derive(Debug, Clone)]
pub struct ChannelDlmScorer {
    confusion: Confusion,
    smoothing: f64,
    lm: Arc<dyn Scorer>,
}

impl ChannelDlmScorer {
    pub fn new(confusion: Confusion, smoothing: f64, lm: Arc<dyn Scorer>) -> Result<Self> {
        if confusion.len() != lm.num_events() {
            return Err(Error::WidthMismatch { expected: lm.num_events(), found: confusion.len() });
        }
        if !(0.0..=1.0).contains(&smoothing) {
            return Err(Error::InvalidConfig(format!("smoothing {smoothing} outside [0, 1]")));
        }
        Ok(Self { confusion, smoothing, lm })
    }

    fn likelihood(&self, context: &Context, pos: usize, y: Token) -> f64 {
        let row = self.confusion.row(y);
        match context {
            Context::Labels(seq) => row[seq[pos] as usize],
            Context::Dense(dense) => dense.steps()[pos].iter().map(|&(c, p)| p * row[c as usize]).sum(),
        }
    }
}

impl Scorer for ChannelDlmScorer {
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
        let eos = self.eos() as usize;
        let lm: Vec<f64> = self.lm.distribution(&state.with_context(None)).iter().map(|lp| lp.exp()).collect();
        let pos = state.prefix().len();
        let mut q = vec![0.0; lm.len()];
        match state.context() {
            Some(ctx) if pos < ctx.len() => {
                for (y, qy) in q.iter_mut().enumerate() {
                    if y != eos {
                        *qy = lm[y] * self.likelihood(ctx, pos, y as Token);
                    }
                }
                let z: f64 = q.iter().sum();
                if z > 0.0 {
                    q.iter_mut().for_each(|x| *x /= z);
                } else {
                    q.clone_from(&lm);
                }
            }
            _ => q[eos] = 1.0,
        }
        q.iter()
            .zip(&lm)
            .map(|(qy, py)| crate::math::ln((1.0 - self.smoothing) * qy + self.smoothing * py))
            .collect()
    }
}
