use std::cmp::Ordering;
use std::collections::HashMap;

use super::{finish_list, BeamConfig, Fusion, Tally};
use crate::error::{Error, Result};
use crate::math::LOG_ZERO;
use crate::nbest::{NBestList, ScoredHyp};
use crate::scorers::ScorerState;
use crate::vocab::Token;

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<Token>,
    /// Whether the last frame was blank (or no frame consumed yet).
    in_blank: bool,
    states: Vec<ScorerState>,
    tally: Tally,
    combined: f64,
}

impl Hyp {
    fn key(&self) -> (Vec<Token>, bool) {
        (self.tokens.clone(), self.in_blank)
    }
}

fn rank(a: &Hyp, b: &Hyp) -> Ordering {
    b.combined
        .partial_cmp(&a.combined)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.tokens.cmp(&b.tokens))
        .then_with(|| b.in_blank.cmp(&a.in_blank))
}

/// Frame-synchronous beam search under the CTC maximum approximation.
///
/// Each frame extends every hypothesis by blank, by a repeat of its last
/// label, or by a new label. Alignments that reach the same label sequence
/// and the same blank/label end state are recombined by keeping the better
/// one. Scorer terms and the prior are charged once per new label, and the
/// termination event is charged after the last frame; it is never emitted
/// as a label.
pub fn time_sync_beam(fusion: &Fusion<'_>, cfg: &BeamConfig) -> Result<NBestList> {
    cfg.validate()?;
    fusion.validate()?;
    let lat = fusion
        .acoustic
        .ok_or_else(|| Error::InvalidConfig("time-synchronous search needs a CTC lattice".into()))?;
    let labels = lat.num_labels();
    let blank = lat.blank();
    let n_terms = fusion.terms.len();
    // the termination event is charged at the end, never emitted as a label
    let end = fusion.eos();

    let tally = Tally::new(n_terms);
    let root = Hyp {
        tokens: Vec::new(),
        in_blank: true,
        states: fusion.start_states()?,
        combined: tally.combined(fusion),
        tally,
    };
    let mut beam = vec![root];

    for t in 0..lat.frames() {
        let mut next: HashMap<(Vec<Token>, bool), Hyp> = HashMap::new();
        let mut offer = |cand: Hyp| {
            if cand.combined == LOG_ZERO || cand.combined.is_nan() {
                return;
            }
            match next.get_mut(&cand.key()) {
                Some(existing) if existing.combined >= cand.combined => {}
                Some(existing) => *existing = cand,
                None => {
                    next.insert(cand.key(), cand);
                }
            }
        };

        for hyp in &beam {
            // blank
            let lp_blank = lat.log_prob(t, blank);
            if lp_blank > LOG_ZERO {
                let mut cand = hyp.clone();
                cand.in_blank = true;
                cand.tally.asr += lp_blank;
                cand.combined += lp_blank;
                offer(cand);
            }
            // repeat of the last label
            let last = (!hyp.in_blank).then(|| *hyp.tokens.last().expect("label state has a label"));
            if let Some(y) = last {
                let lp = lat.log_prob(t, y);
                if lp > LOG_ZERO {
                    let mut cand = hyp.clone();
                    cand.tally.asr += lp;
                    cand.combined += lp;
                    offer(cand);
                }
            }
            // new labels
            let dists: Vec<Vec<f64>> =
                fusion.terms.iter().zip(&hyp.states).map(|(term, st)| term.scorer.distribution(st)).collect();
            for y in 0..labels as Token {
                if Some(y) == last || Some(y) == end {
                    continue;
                }
                let lp = lat.log_prob(t, y);
                if lp == LOG_ZERO {
                    continue;
                }
                let mut tally = hyp.tally.clone();
                tally.asr += lp;
                for (acc, d) in tally.terms.iter_mut().zip(&dists) {
                    *acc += d[y as usize];
                }
                if fusion.prior.is_some() {
                    tally.prior += fusion.prior_logprob(y);
                }
                let mut tokens = hyp.tokens.clone();
                tokens.push(y);
                let combined = tally.combined(fusion);
                let states = hyp.states.iter().map(|s| s.pushed(y)).collect();
                offer(Hyp { tokens, in_blank: false, states, tally, combined });
            }
        }

        let mut cands: Vec<Hyp> = next.into_values().collect();
        if cands.is_empty() {
            return Err(Error::EmptyBeam);
        }
        cands.sort_by(rank);
        cands.truncate(cfg.beam_size);
        beam = cands;
    }

    let hyps = beam
        .into_iter()
        .map(|mut hyp| {
            if let Some(eos) = fusion.eos() {
                for ((term, st), acc) in fusion.terms.iter().zip(&hyp.states).zip(hyp.tally.terms.iter_mut()) {
                    *acc += term.scorer.distribution(st)[eos as usize];
                }
            }
            ScoredHyp { tokens: hyp.tokens, scores: hyp.tally.to_scores(fusion) }
        })
        .collect();
    finish_list(lat.utt_id(), NBestList::new(lat.utt_id(), hyps), cfg.nbest_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::{greedy_collapse, viterbi_logprob};
    use crate::nbest::Channel;
    use crate::scorers::{PriorModel, Scorer, TableScorer};
    use crate::testing::{l1, random_lattice};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn full_beam_on_l1() {
        let lat = l1();
        let cfg = BeamConfig::new(9, 3).unwrap();
        let list = time_sync_beam(&Fusion::acoustic(&lat), &cfg).unwrap();
        let best = list.best().unwrap();
        assert_eq!(best.tokens, vec![0]);
        assert!((best.score(Channel::Asr).unwrap() - 0.36f64.ln()).abs() < 1e-6);
        assert_eq!(best.score(Channel::Asr), best.score(Channel::Combined));
    }

    #[test]
    fn beam_one_is_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let v = rng.random_range(1..=4);
            let t = rng.random_range(1..=10);
            let lat = random_lattice(&mut rng, v, t);
            let list = time_sync_beam(&Fusion::acoustic(&lat), &BeamConfig::greedy()).unwrap();
            assert_eq!(list.best().unwrap().tokens, greedy_collapse(&lat));
        }
    }

    #[test]
    fn recombined_scores_are_viterbi_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..30 {
            let lat = random_lattice(&mut rng, 3, 5);
            let list = time_sync_beam(&Fusion::acoustic(&lat), &BeamConfig::new(1024, 1024).unwrap()).unwrap();
            for hyp in &list.hyps {
                let v = viterbi_logprob(&lat, &hyp.tokens);
                assert!((hyp.score(Channel::Asr).unwrap() - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_scales_match_acoustic_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let lat = random_lattice(&mut rng, 3, 6);
        let lm: Arc<dyn Scorer> = Arc::new(TableScorer::new(&[(vec![0, 1], 1.0)], 3, 2).unwrap());
        let prior = PriorModel::estimate([&lat]).unwrap();
        let cfg = BeamConfig::new(6, 4).unwrap();
        let plain = time_sync_beam(&Fusion::acoustic(&lat).with_end_token(2), &cfg).unwrap();
        let fused = time_sync_beam(
            &Fusion::acoustic(&lat).with_term(Channel::Lm, lm, None, 0.0).with_prior(&prior, 0.0),
            &cfg,
        )
        .unwrap();
        let toks = |l: &NBestList| l.hyps.iter().map(|h| h.tokens.clone()).collect::<Vec<_>>();
        assert_eq!(toks(&plain), toks(&fused));
    }

    #[test]
    fn requires_lattice() {
        assert!(time_sync_beam(&Fusion::default(), &BeamConfig::default()).is_err());
    }
}
