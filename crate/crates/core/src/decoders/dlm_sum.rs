use std::sync::Arc;

use super::asr_nbest;
use crate::ctc::forward_logprob;
use crate::error::{Error, Result};
use crate::lattice::PosteriorLattice;
use crate::nbest::{Channel, NBestList, Scales, ScoredHyp};
use crate::scorers::{Context, MixtureScorer, PriorModel, Scorer};
use crate::search::{label_sync_beam, BeamConfig, Fusion};
use crate::vocab::Token;

/// ASR hypotheses with exact CTC scores, deduplicated, zero-probability
/// entries removed.
pub fn dlm_sum_fusion_parts(lat: &PosteriorLattice, n_asr: usize, cfg: &BeamConfig) -> Result<Vec<(Vec<Token>, f64)>> {
    if n_asr == 0 {
        return Err(Error::EmptyHypothesisSet);
    }
    let nbest = asr_nbest(lat, n_asr, cfg)?;
    let parts: Vec<(Vec<Token>, f64)> = nbest
        .hyps
        .into_iter()
        .map(|h| {
            let score = forward_logprob(lat, &h.tokens);
            (h.tokens, score)
        })
        .filter(|(_, s)| s.is_finite())
        .collect();
    if parts.is_empty() {
        return Err(Error::EmptyHypothesisSet);
    }
    Ok(parts)
}

/// The DLM mixed over ASR hypotheses `ã_i` with weights
/// `p_ASR(ã_i | x) / Z`, `Z` summing over the hypotheses.
pub fn dlm_sum_mixture(lat: &PosteriorLattice, dlm: &Arc<dyn Scorer>, n_asr: usize, cfg: &BeamConfig) -> Result<MixtureScorer> {
    let parts = dlm_sum_fusion_parts(lat, n_asr, cfg)?;
    MixtureScorer::new(
        parts
            .into_iter()
            .map(|(tokens, score)| (dlm.clone(), Some(Arc::new(Context::Labels(tokens))), score))
            .collect(),
    )
}

/// DSR candidate set with the DLM channel replaced by the DLM-sum mixture,
/// so that one-pass DLM-sum scales can be tuned by rescoring.
pub fn dlm_sum_candidates(
    lat: &PosteriorLattice,
    dlm: &Arc<dyn Scorer>,
    prior: Option<&PriorModel>,
    n_dlm: usize,
    n_asr: usize,
    cfg: &BeamConfig,
) -> Result<NBestList> {
    let mut list = super::dsr_candidates(lat, dlm, prior, n_dlm, n_asr, cfg)?;
    let mixture = dlm_sum_mixture(lat, dlm, n_asr, cfg)?;
    for hyp in &mut list.hyps {
        hyp.scores.set(Channel::Dlm, mixture.score_sequence(None, &hyp.tokens)?);
    }
    Ok(list)
}

fn best_of(list: NBestList) -> ScoredHyp {
    list.hyps.into_iter().next().expect("search returns a nonempty list")
}

/// DLM-sum decoding: label-synchronous search on
/// `log p_CTC(a) + λ_DLM·log Σ_i w_i p_DLM(a | ã_i) − λ_prior·log p_prior(a)`
/// with exact CTC prefix scores.
pub fn decode_dlm_sum(
    lat: &PosteriorLattice,
    dlm: &Arc<dyn Scorer>,
    prior: Option<&PriorModel>,
    scales: Scales,
    n_asr: usize,
    cfg: &BeamConfig,
) -> Result<ScoredHyp> {
    let mixture: Arc<dyn Scorer> = Arc::new(dlm_sum_mixture(lat, dlm, n_asr, cfg)?);
    let mut fusion = Fusion::acoustic(lat).with_term(Channel::Dlm, mixture, None, scales.model);
    if let Some(p) = prior {
        fusion = fusion.with_prior(p, scales.prior);
    }
    label_sync_beam(&fusion, cfg).map(best_of)
}

/// One-pass DSR: label-synchronous search on
/// `log p_CTC(a) + λ_DLM·log p_DLM(a | ã) − λ_prior·log p_prior(a)` for a
/// single given hypothesis `ã`.
pub fn dsr_onepass(
    lat: &PosteriorLattice,
    dlm: &Arc<dyn Scorer>,
    context: &[Token],
    prior: Option<&PriorModel>,
    scales: Scales,
    cfg: &BeamConfig,
) -> Result<ScoredHyp> {
    let ctx = Some(Arc::new(Context::Labels(context.to_vec())));
    let mut fusion = Fusion::acoustic(lat).with_term(Channel::Dlm, dlm.clone(), ctx, scales.model);
    if let Some(p) = prior {
        fusion = fusion.with_prior(p, scales.prior);
    }
    label_sync_beam(&fusion, cfg).map(best_of)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoders::decode_dlm_greedy;
    use crate::scorers::{CopyDlmScorer, UniformScorer};
    use crate::testing::random_lattice;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn copy_dlm(v: usize, eos: Token, w: f64) -> Arc<dyn Scorer> {
        Arc::new(CopyDlmScorer::new(w, 0.0, Arc::new(UniformScorer::new(v, eos))).unwrap())
    }

    #[test]
    fn single_hypothesis_is_one_pass_dsr() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let lat = random_lattice(&mut rng, 4, 6);
            let dlm = copy_dlm(4, 3, 0.6);
            let prior = PriorModel::estimate([&lat]).unwrap();
            let scales = Scales::new(0.8, 0.3).unwrap();
            let cfg = BeamConfig::new(4, 4).unwrap();
            let parts = dlm_sum_fusion_parts(&lat, 1, &cfg).unwrap();
            let sum = decode_dlm_sum(&lat, &dlm, Some(&prior), scales, 1, &cfg).unwrap();
            let dsr = dsr_onepass(&lat, &dlm, &parts[0].0, Some(&prior), scales, &cfg).unwrap();
            assert_eq!(sum.tokens, dsr.tokens);
            let a = sum.score(Channel::Combined).unwrap();
            let b = dsr.score(Channel::Combined).unwrap();
            assert!((a - b).abs() < 1e-9);
            // the combined score is the DSR objective of the output
            let ctx = Some(Arc::new(Context::Labels(parts[0].0.clone())));
            let direct = scales.combine(
                forward_logprob(&lat, &sum.tokens),
                dlm.score_sequence(ctx, &sum.tokens).unwrap(),
                prior.sequence_logprob(&sum.tokens),
            );
            assert!((a - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn huge_dlm_scale_reduces_to_dlm_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..30 {
            let lat = random_lattice(&mut rng, 4, 8);
            let dlm = copy_dlm(4, 3, 0.9);
            let out = decode_dlm_sum(&lat, &dlm, None, Scales::new(1e6, 0.0).unwrap(), 1, &BeamConfig::greedy()).unwrap();
            assert_eq!(out.tokens, decode_dlm_greedy(&lat, &dlm).unwrap());
        }
    }

    #[test]
    fn weights_follow_exact_asr_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let lat = random_lattice(&mut rng, 3, 5);
        let dlm = copy_dlm(3, 2, 0.5);
        let cfg = BeamConfig::default();
        let parts = dlm_sum_fusion_parts(&lat, 5, &cfg).unwrap();
        let mix = dlm_sum_mixture(&lat, &dlm, 5, &cfg).unwrap();
        let w = mix.weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for i in 1..parts.len() {
            assert!((w[0] / w[i] - (parts[0].1 - parts[i].1).exp()).abs() < 1e-9 * w[0] / w[i]);
        }
    }
}
