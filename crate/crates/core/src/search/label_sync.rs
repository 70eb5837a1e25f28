use std::cmp::Ordering;

use super::{finish_list, BeamConfig, Fusion, Tally};
use crate::ctc::{CtcPrefixScorer, PrefixState};
use crate::error::{Error, Result};
use crate::math::LOG_ZERO;
use crate::nbest::{NBestList, ScoredHyp};
use crate::scorers::ScorerState;
use crate::vocab::Token;

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<Token>,
    ctc: Option<PrefixState>,
    states: Vec<ScorerState>,
    tally: Tally,
    combined: f64,
}

/// A scored one-label extension of an active hypothesis.
struct Candidate {
    parent: usize,
    label: Option<Token>,
    tally: Tally,
    combined: f64,
}

/// Label-synchronous beam search. Every step expands each active prefix by
/// all labels and by termination; CTC contributes exact prefix
/// probabilities, so a completed hypothesis carries its exact CTC sequence
/// probability. The best `beam_size` candidates survive each step, and
/// those that chose termination leave the beam as completed hypotheses.
pub fn label_sync_beam(fusion: &Fusion<'_>, cfg: &BeamConfig) -> Result<NBestList> {
    cfg.validate()?;
    fusion.validate()?;
    let eos = fusion.eos().ok_or_else(|| {
        Error::InvalidConfig("label-synchronous search needs a scorer or an end token to define termination".into())
    })?;
    let events = fusion.num_events().expect("termination implies an event set");
    let cap = fusion.length_cap(cfg);
    let ctc = fusion.acoustic.map(CtcPrefixScorer::new);
    let utt_id = fusion.acoustic.map(|l| l.utt_id().to_string()).unwrap_or_default();

    // Largest possible per-step score gain; only the prior term can be positive.
    let max_step_gain = match fusion.prior {
        Some((prior, scale)) if scale > 0.0 => {
            let worst = prior.labelwise.iter().copied().fold(f64::INFINITY, f64::min);
            if worst > 0.0 { -scale * worst.ln() } else { f64::INFINITY }
        }
        _ => 0.0,
    };
    let negative_scales = fusion.terms.iter().any(|t| t.scale < 0.0) || fusion.prior_scale() < 0.0;

    let tally = Tally::new(fusion.terms.len());
    let mut active = vec![Hyp {
        tokens: Vec::new(),
        ctc: ctc.as_ref().map(|c| c.start()),
        states: fusion.start_states()?,
        combined: tally.combined(fusion),
        tally,
    }];
    let mut completed: Vec<ScoredHyp> = Vec::new();
    let mut completed_scores: Vec<f64> = Vec::new();

    for step in 0..=cap {
        let mut cands: Vec<Candidate> = Vec::new();
        for (idx, hyp) in active.iter().enumerate() {
            let ctc_deltas = match (&ctc, &hyp.ctc) {
                (Some(scorer), Some(state)) => {
                    let mut d = if step < cap { scorer.extension_deltas(state) } else { vec![LOG_ZERO; events] };
                    d[eos as usize] = scorer.end_delta(state);
                    Some(d)
                }
                _ => None,
            };
            let dists: Vec<Vec<f64>> =
                fusion.terms.iter().zip(&hyp.states).map(|(t, s)| t.scorer.distribution(s)).collect();
            for y in 0..events as Token {
                let is_end = y == eos;
                if !is_end && step == cap {
                    continue;
                }
                let mut tally = hyp.tally.clone();
                if let Some(d) = &ctc_deltas {
                    tally.asr += d[y as usize];
                }
                for (acc, d) in tally.terms.iter_mut().zip(&dists) {
                    *acc += d[y as usize];
                }
                if !is_end && fusion.prior.is_some() {
                    tally.prior += fusion.prior_logprob(y);
                }
                let combined = tally.combined(fusion);
                if combined == LOG_ZERO || combined.is_nan() {
                    continue;
                }
                cands.push(Candidate { parent: idx, label: (!is_end).then_some(y), tally, combined });
            }
        }
        if cands.is_empty() {
            break;
        }
        cands.sort_by(|a, b| {
            b.combined
                .partial_cmp(&a.combined)
                .unwrap_or(Ordering::Equal)
                .then_with(|| cmp_extension(&active, a, b))
        });
        cands.truncate(cfg.beam_size);

        let mut next = Vec::new();
        for cand in cands {
            let parent = &active[cand.parent];
            match cand.label {
                None => {
                    completed_scores.push(cand.combined);
                    completed.push(ScoredHyp { tokens: parent.tokens.clone(), scores: cand.tally.to_scores(fusion) });
                }
                Some(y) => {
                    let mut tokens = parent.tokens.clone();
                    tokens.push(y);
                    next.push(Hyp {
                        tokens,
                        ctc: match (&ctc, &parent.ctc) {
                            (Some(scorer), Some(state)) => Some(scorer.step(state, y).0),
                            _ => None,
                        },
                        states: parent.states.iter().map(|s| s.pushed(y)).collect(),
                        tally: cand.tally,
                        combined: cand.combined,
                    });
                }
            }
        }
        active = next;
        if active.is_empty() {
            break;
        }

        // Stop once no active prefix can still reach the current n-best.
        if !negative_scales && completed_scores.len() >= cfg.nbest_size {
            let mut sorted = completed_scores.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
            let threshold = sorted[cfg.nbest_size - 1];
            let best_active = active.iter().map(|h| h.combined).fold(LOG_ZERO, f64::max);
            let remaining = (cap - step) as f64;
            let bound = if max_step_gain == 0.0 { best_active } else { best_active + remaining * max_step_gain };
            if bound < threshold {
                break;
            }
        }
    }

    if completed.is_empty() {
        return Err(Error::NoCompletedHypothesis(cap));
    }
    finish_list(&utt_id, NBestList::new(utt_id.clone(), completed), cfg.nbest_size)
        .map_err(|_| Error::NoCompletedHypothesis(cap))
}

/// Tie-break: lexicographic on the resulting token sequence, termination
/// (the shorter sequence) first.
fn cmp_extension(active: &[Hyp], a: &Candidate, b: &Candidate) -> Ordering {
    let ta = &active[a.parent].tokens;
    let tb = &active[b.parent].tokens;
    let ext_a = ta.iter().copied().chain(a.label);
    let ext_b = tb.iter().copied().chain(b.label);
    ext_a.cmp(ext_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::forward_logprob;
    use crate::nbest::Channel;
    use crate::scorers::{Context, CopyDlmScorer, Scorer, TableScorer, UniformScorer};
    use crate::testing::l1;
    use std::sync::Arc;

    fn uniform(v: usize, eos: Token) -> Arc<dyn Scorer> {
        Arc::new(UniformScorer::new(v, eos))
    }

    #[test]
    fn ctc_only_full_beam_on_l1() {
        // eos = b, so the search space is {"", "a", "a a", ...}
        let lat = l1();
        let fusion = Fusion::acoustic(&lat).with_end_token(1);
        let list = label_sync_beam(&fusion, &BeamConfig::new(16, 4).unwrap()).unwrap();
        let best = list.best().unwrap();
        assert_eq!(best.tokens, vec![0]);
        assert!((best.score(Channel::Asr).unwrap() - 0.48f64.ln()).abs() < 1e-6);
        for hyp in &list.hyps {
            let exact = forward_logprob(&lat, &hyp.tokens);
            assert!((hyp.score(Channel::Asr).unwrap() - exact).abs() < 1e-9);
        }
    }

    #[test]
    fn pure_copy_dlm_with_beam_one() {
        let dlm: Arc<dyn Scorer> = Arc::new(CopyDlmScorer::new(1.0, 0.0, uniform(3, 2)).unwrap());
        let ctx = Some(Arc::new(Context::Labels(vec![1, 0])));
        let fusion = Fusion::default().with_term(Channel::Dlm, dlm, ctx, 1.0);
        let list = label_sync_beam(&fusion, &BeamConfig::greedy()).unwrap();
        assert_eq!(list.best().unwrap().tokens, vec![1, 0]);
        assert_eq!(list.best().unwrap().score(Channel::Dlm), Some(0.0));
    }

    #[test]
    fn zero_lm_scale_matches_ctc_only() {
        let lat = l1();
        let lm: Arc<dyn Scorer> = Arc::new(TableScorer::new(&[(vec![], 1.0)], 2, 1).unwrap());
        let cfg = BeamConfig::new(4, 2).unwrap();
        let a = label_sync_beam(&Fusion::acoustic(&lat).with_term(Channel::Lm, lm.clone(), None, 0.0), &cfg).unwrap();
        let b = label_sync_beam(&Fusion::acoustic(&lat).with_term(Channel::Lm, uniform(2, 1), None, 0.0), &cfg).unwrap();
        assert_eq!(a.best().unwrap().tokens, b.best().unwrap().tokens);
    }

    #[test]
    fn length_cap_limits_context_conditioned_output() {
        // the LM prefers to continue at every length below 12; the cap forces
        // termination at 2 * |context|
        let z: f64 = (1..=12).map(|k| 2f64.powi(k)).sum();
        let table: Vec<(Vec<Token>, f64)> = (1..=12).map(|k| (vec![0; k as usize], 2f64.powi(k) / z)).collect();
        let lm: Arc<dyn Scorer> = Arc::new(TableScorer::new(&table, 2, 1).unwrap());
        let dlm: Arc<dyn Scorer> = Arc::new(CopyDlmScorer::new(0.0, 0.0, lm).unwrap());
        let ctx = Some(Arc::new(Context::Labels(vec![0, 0])));
        let fusion = Fusion::default().with_term(Channel::Dlm, dlm, ctx, 1.0);
        let list = label_sync_beam(&fusion, &BeamConfig::greedy()).unwrap();
        assert_eq!(list.best().unwrap().tokens.len(), 4);
    }

    #[test]
    fn needs_a_termination_event() {
        let lat = l1();
        assert!(label_sync_beam(&Fusion::acoustic(&lat), &BeamConfig::default()).is_err());
    }
}
