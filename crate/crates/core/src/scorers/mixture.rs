use std::sync::Arc;

use super::{Context, Scorer, ScorerState};
use crate::error::{Error, Result};
use crate::math;
use crate::vocab::Token;

/// Probability-space mixture of conditioned scorers sharing one output prefix:
/// `p(y | h) = Σ_i w_i p_i(y | h, context_i)`.
///
/// Each component keeps its own context; the context passed to `start` is ignored.
#[derive(Debug, Clone)]
pub struct MixtureScorer {
    components: Vec<Component>,
    events: usize,
    eos: Token,
}

#[derive(Debug, Clone)]
struct Component {
    scorer: Arc<dyn Scorer>,
    context: Option<Arc<Context>>,
    log_weight: f64,
}

impl MixtureScorer {
    /// `log_weights` need not be normalized; they are shifted to sum to one in
    /// probability space.
    pub fn new(parts: Vec<(Arc<dyn Scorer>, Option<Arc<Context>>, f64)>) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyHypothesisSet)?;
        let events = first.0.num_events();
        let eos = first.0.eos();
        if parts.iter().any(|p| p.0.num_events() != events || p.0.eos() != eos) {
            return Err(Error::InvalidConfig("mixture components disagree on the event set".into()));
        }
        let raw: Vec<f64> = parts.iter().map(|p| p.2).collect();
        let z = math::log_sum_exp(&raw);
        if !z.is_finite() {
            return Err(Error::InvalidMass("mixture weights have no finite mass".into()));
        }
        let components = parts
            .into_iter()
            .map(|(scorer, context, w)| Component { scorer, context, log_weight: w - z })
            .collect();
        Ok(Self { components, events, eos })
    }

    /// Normalized weights `w_i`.
    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.log_weight.exp()).collect()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

impl Scorer for MixtureScorer {
    fn num_events(&self) -> usize {
        self.events
    }

    fn eos(&self) -> Token {
        self.eos
    }

    fn start(&self, _context: Option<Arc<Context>>) -> Result<ScorerState> {
        for c in &self.components {
            c.scorer.start(c.context.clone())?;
        }
        Ok(ScorerState::new(None))
    }

    fn distribution(&self, state: &ScorerState) -> Vec<f64> {
        let mut terms = vec![Vec::with_capacity(self.components.len()); self.events];
        for c in &self.components {
            let dist = c.scorer.distribution(&state.with_context(c.context.clone()));
            for (slot, lp) in terms.iter_mut().zip(dist) {
                slot.push(c.log_weight + lp);
            }
        }
        terms.iter().map(|t| math::log_sum_exp(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorers::tests::{assert_normalized, assert_telescopes};
    use crate::scorers::{CopyDlmScorer, UniformScorer};

    fn copy(w: f64) -> Arc<dyn Scorer> {
        Arc::new(CopyDlmScorer::new(w, 0.0, Arc::new(UniformScorer::new(3, 2))).unwrap())
    }

    fn ctx(seq: &[Token]) -> Option<Arc<Context>> {
        Some(Arc::new(Context::Labels(seq.to_vec())))
    }

    #[test]
    fn equal_weights_split_copy_mass() {
        let dlm = copy(0.6);
        let mix = MixtureScorer::new(vec![
            (dlm.clone(), ctx(&[0]), 0.5f64.ln()),
            (dlm, ctx(&[1]), 0.5f64.ln()),
        ])
        .unwrap();
        let dist = mix.distribution(&mix.start(None).unwrap());
        // 0.5 * 0.6 copy mass + the shared uniform remainder 0.4 / 3
        let expected = 0.5 * 0.6 + 0.4 / 3.0;
        assert!((dist[0].exp() - expected).abs() < 1e-12);
        assert!((dist[1].exp() - expected).abs() < 1e-12);
        assert!((dist[2].exp() - 0.4 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn weights_are_normalized() {
        let mix = MixtureScorer::new(vec![(copy(0.5), ctx(&[0]), -1.0), (copy(0.5), ctx(&[1]), -3.0)]).unwrap();
        let w = mix.weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((w[0] / w[1] - 2f64.exp()).abs() < 1e-9);
        assert_normalized(&mix, None, 6);
        assert_telescopes(&mix, None, &[0, 1]);
    }

    #[test]
    fn single_component_equals_component() {
        let dlm = copy(0.7);
        let mix = MixtureScorer::new(vec![(dlm.clone(), ctx(&[1, 0]), -4.2)]).unwrap();
        for seq in [&[][..], &[1], &[1, 0], &[0, 0, 1]] {
            let a = mix.score_sequence(None, seq).unwrap();
            let b = dlm.score_sequence(ctx(&[1, 0]), seq).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }
}
