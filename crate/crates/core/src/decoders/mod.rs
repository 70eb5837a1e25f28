//! Decision rules: ASR greedy, DLM greedy, LM rescoring and one-pass
//! fusion, DSR rescoring, DLM-sum, and scale tuning.

mod dlm_sum;
mod tune;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use dlm_sum::{decode_dlm_sum, dlm_sum_candidates, dlm_sum_fusion_parts, dlm_sum_mixture, dsr_onepass};
pub use tune::{tune_scales, tune_scales_on, DevUtterance, TunedScales, MODEL_GRID, PRIOR_REL_GRID};

use crate::ctc::{forward_logprob, greedy_collapse};
use crate::error::{Error, Result};
use crate::lattice::PosteriorLattice;
use crate::nbest::{rank_order, Channel, NBestList, Scales, ScoredHyp};
use crate::scorers::{Context, PriorModel, Scorer};
use crate::search::{label_sync_beam, time_sync_beam, BeamConfig, Fusion};
use crate::vocab::Token;

/// Default ASR n-best size for DSR and DLM-sum.
pub const DEFAULT_ASR_NBEST: usize = 20;

/// Framewise argmax, then repeats merged and blanks removed.
pub fn decode_asr_greedy(lat: &PosteriorLattice) -> Vec<Token> {
    greedy_collapse(lat)
}

/// Label-synchronous greedy decode of `dlm` conditioned on the ASR greedy
/// hypothesis.
pub fn decode_dlm_greedy(lat: &PosteriorLattice, dlm: &Arc<dyn Scorer>) -> Result<Vec<Token>> {
    let context = Arc::new(Context::Labels(decode_asr_greedy(lat)));
    dlm_beam(dlm, context, &BeamConfig::greedy()).map(|list| list.hyps[0].tokens.clone())
}

/// Label-synchronous beam over the DLM alone.
fn dlm_beam(dlm: &Arc<dyn Scorer>, context: Arc<Context>, cfg: &BeamConfig) -> Result<NBestList> {
    let fusion = Fusion::default().with_term(Channel::Dlm, dlm.clone(), Some(context), 1.0);
    label_sync_beam(&fusion, cfg)
}

fn required(hyp: &ScoredHyp, ch: Channel) -> Result<f64> {
    hyp.score(ch)
        .ok_or_else(|| Error::InvalidConfig(format!("hypothesis {:?} lacks a {ch:?} score", hyp.tokens)))
}

/// Sets the combined channel of every hypothesis to
/// `asr + λ·model − λ_prior·prior` and returns the best one. Ties go to the
/// lexicographically smaller token sequence.
pub fn rescore_with(hyps: &[ScoredHyp], model: Channel, scales: Scales) -> Result<ScoredHyp> {
    let mut best: Option<(f64, &ScoredHyp)> = None;
    for hyp in hyps {
        let prior = if scales.prior == 0.0 { 0.0 } else { required(hyp, Channel::Prior)? };
        let m = if scales.model == 0.0 { 0.0 } else { required(hyp, model)? };
        let score = scales.combine(required(hyp, Channel::Asr)?, m, prior);
        let better = match best {
            None => true,
            Some((s, b)) => rank_order(score, &hyp.tokens, s, &b.tokens).is_lt(),
        };
        if better {
            best = Some((score, hyp));
        }
    }
    let (score, hyp) = best.ok_or(Error::EmptyNBest)?;
    let mut out = hyp.clone();
    out.scores.set(Channel::Combined, score);
    Ok(out)
}

/// Attaches LM and prior channels to an n-best list.
pub fn attach_lm_scores(nbest: &mut NBestList, lm: &dyn Scorer, prior: Option<&PriorModel>) -> Result<()> {
    for hyp in &mut nbest.hyps {
        hyp.scores.set(Channel::Lm, lm.score_sequence(None, &hyp.tokens)?);
        if let Some(p) = prior {
            hyp.scores.set(Channel::Prior, p.sequence_logprob(&hyp.tokens));
        }
    }
    Ok(())
}

/// Two-pass LM fusion: picks the n-best entry maximizing
/// `asr + λ_LM·lm − λ_prior·prior`.
pub fn rescore_lm(nbest: &NBestList, lm: &dyn Scorer, prior: Option<&PriorModel>, scales: Scales) -> Result<ScoredHyp> {
    if nbest.is_empty() {
        return Err(Error::EmptyNBest);
    }
    let mut scored = nbest.clone();
    attach_lm_scores(&mut scored, lm, prior)?;
    rescore_with(&scored.hyps, Channel::Lm, scales)
}

fn lm_fusion<'a>(
    lat: &'a PosteriorLattice,
    lm: &Arc<dyn Scorer>,
    prior: Option<&'a PriorModel>,
    scales: Scales,
) -> Fusion<'a> {
    let mut fusion = Fusion::acoustic(lat).with_term(Channel::Lm, lm.clone(), None, scales.model);
    if let Some(p) = prior {
        fusion = fusion.with_prior(p, scales.prior);
    }
    fusion
}

/// One-pass time-synchronous shallow fusion with an LM and the prior.
pub fn decode_lm_onepass(
    lat: &PosteriorLattice,
    lm: &Arc<dyn Scorer>,
    prior: Option<&PriorModel>,
    scales: Scales,
    cfg: &BeamConfig,
) -> Result<ScoredHyp> {
    let list = time_sync_beam(&lm_fusion(lat, lm, prior, scales), cfg)?;
    Ok(list.hyps.into_iter().next().expect("search returns a nonempty list"))
}

/// Time-synchronous n-best of the acoustic model alone.
pub fn asr_nbest(lat: &PosteriorLattice, n: usize, cfg: &BeamConfig) -> Result<NBestList> {
    time_sync_beam(&Fusion::acoustic(lat), &cfg.with_nbest(n))
}

/// DSR candidate set: the top `n_dlm` DLM outputs given the ASR greedy
/// hypothesis together with the top `m_asr` ASR hypotheses, deduplicated
/// and scored with the exact CTC probability, the DLM, and the prior.
pub fn dsr_candidates(
    lat: &PosteriorLattice,
    dlm: &Arc<dyn Scorer>,
    prior: Option<&PriorModel>,
    n_dlm: usize,
    m_asr: usize,
    cfg: &BeamConfig,
) -> Result<NBestList> {
    if n_dlm == 0 && m_asr == 0 {
        return Err(Error::EmptyHypothesisSet);
    }
    let context = Arc::new(Context::Labels(decode_asr_greedy(lat)));
    let mut seqs: Vec<Vec<Token>> = Vec::new();
    if n_dlm > 0 {
        seqs.extend(dlm_beam(dlm, context.clone(), &cfg.with_nbest(n_dlm))?.hyps.into_iter().map(|h| h.tokens));
    }
    if m_asr > 0 {
        seqs.extend(asr_nbest(lat, m_asr, cfg)?.hyps.into_iter().map(|h| h.tokens));
    }
    let mut hyps = Vec::with_capacity(seqs.len());
    for tokens in seqs {
        let mut hyp = ScoredHyp::new(tokens);
        hyp.scores.set(Channel::Asr, forward_logprob(lat, &hyp.tokens));
        hyp.scores.set(Channel::Dlm, dlm.score_sequence(Some(context.clone()), &hyp.tokens)?);
        if let Some(p) = prior {
            hyp.scores.set(Channel::Prior, p.sequence_logprob(&hyp.tokens));
        }
        hyps.push(hyp);
    }
    Ok(NBestList::new(lat.utt_id(), hyps).dedup())
}

/// DSR decoding: rescoring of [`dsr_candidates`] with
/// `asr + λ_DLM·dlm − λ_prior·prior`.
#[allow(clippy::too_many_arguments)]
pub fn decode_dsr(
    lat: &PosteriorLattice,
    dlm: &Arc<dyn Scorer>,
    prior: Option<&PriorModel>,
    scales: Scales,
    n_dlm: usize,
    m_asr: usize,
    cfg: &BeamConfig,
) -> Result<ScoredHyp> {
    let cands = dsr_candidates(lat, dlm, prior, n_dlm, m_asr, cfg)?;
    if cands.is_empty() {
        return Err(Error::EmptyHypothesisSet);
    }
    rescore_with(&cands.hyps, Channel::Dlm, scales)
}

/// Named decision rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    AsrGreedy,
    DlmGreedy,
    LmRescore,
    LmOnepass,
    Dsr,
    DlmSum,
}

impl DecoderKind {
    pub const ALL: [DecoderKind; 6] = [
        DecoderKind::AsrGreedy,
        DecoderKind::DlmGreedy,
        DecoderKind::LmRescore,
        DecoderKind::LmOnepass,
        DecoderKind::Dsr,
        DecoderKind::DlmSum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DecoderKind::AsrGreedy => "asr_greedy",
            DecoderKind::DlmGreedy => "dlm_greedy",
            DecoderKind::LmRescore => "lm_rescore",
            DecoderKind::LmOnepass => "lm_onepass",
            DecoderKind::Dsr => "dsr",
            DecoderKind::DlmSum => "dlm_sum",
        }
    }

    /// Whether the rule has fusion scales to tune.
    pub fn is_tunable(self) -> bool {
        !matches!(self, DecoderKind::AsrGreedy | DecoderKind::DlmGreedy)
    }

    /// Whether scales are tuned on a candidate list the rule itself picks from.
    pub fn rescores_list(self) -> bool {
        matches!(self, DecoderKind::LmRescore | DecoderKind::Dsr)
    }

    /// Which external model the rule fuses.
    pub fn model_channel(self) -> Option<Channel> {
        match self {
            DecoderKind::LmRescore | DecoderKind::LmOnepass => Some(Channel::Lm),
            DecoderKind::DlmGreedy | DecoderKind::Dsr | DecoderKind::DlmSum => Some(Channel::Dlm),
            DecoderKind::AsrGreedy => None,
        }
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        DecoderKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown decoder {s:?}")))
    }
}

/// Models available to the decision rules.
#[derive(Debug, Clone, Default)]
pub struct Models {
    pub lm: Option<Arc<dyn Scorer>>,
    pub dlm: Option<Arc<dyn Scorer>>,
    pub prior: Option<PriorModel>,
}

/// Decoder settings shared by all rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeSettings {
    pub beam: BeamConfig,
    pub scales: Scales,
    /// ASR n-best size for rescoring, DSR and DLM-sum.
    pub asr_nbest: usize,
    /// DLM n-best size for DSR.
    pub dlm_nbest: usize,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        Self { beam: BeamConfig::default(), scales: Scales::ZERO, asr_nbest: DEFAULT_ASR_NBEST, dlm_nbest: 12 }
    }
}

impl Models {
    fn lm(&self) -> Result<&Arc<dyn Scorer>> {
        self.lm.as_ref().ok_or_else(|| Error::InvalidConfig("decoder needs an LM".into()))
    }

    fn dlm(&self) -> Result<&Arc<dyn Scorer>> {
        self.dlm.as_ref().ok_or_else(|| Error::InvalidConfig("decoder needs a DLM".into()))
    }

    /// Runs one decision rule on one lattice.
    pub fn decode(&self, kind: DecoderKind, lat: &PosteriorLattice, s: &DecodeSettings) -> Result<ScoredHyp> {
        let prior = self.prior.as_ref();
        let hyp = match kind {
            DecoderKind::AsrGreedy => {
                let tokens = decode_asr_greedy(lat);
                let mut hyp = ScoredHyp::new(tokens);
                hyp.scores.set(Channel::Asr, forward_logprob(lat, &hyp.tokens));
                hyp
            }
            DecoderKind::DlmGreedy => ScoredHyp::new(decode_dlm_greedy(lat, self.dlm()?)?),
            DecoderKind::LmRescore => {
                let nbest = asr_nbest(lat, s.asr_nbest, &s.beam)?;
                rescore_lm(&nbest, self.lm()?.as_ref(), prior, s.scales)?
            }
            DecoderKind::LmOnepass => decode_lm_onepass(lat, self.lm()?, prior, s.scales, &s.beam)?,
            DecoderKind::Dsr => decode_dsr(lat, self.dlm()?, prior, s.scales, s.dlm_nbest, s.asr_nbest, &s.beam)?,
            DecoderKind::DlmSum => decode_dlm_sum(lat, self.dlm()?, prior, s.scales, s.asr_nbest, &s.beam)?,
        };
        Ok(hyp)
    }

    /// Candidate list with all channels, for scale tuning. One-pass rules
    /// are tuned on the list of their rescoring counterpart.
    pub fn candidates(&self, kind: DecoderKind, lat: &PosteriorLattice, s: &DecodeSettings) -> Result<NBestList> {
        match kind {
            DecoderKind::LmRescore | DecoderKind::LmOnepass => {
                let mut nbest = asr_nbest(lat, s.asr_nbest, &s.beam)?;
                attach_lm_scores(&mut nbest, self.lm()?.as_ref(), self.prior.as_ref())?;
                Ok(nbest)
            }
            DecoderKind::Dsr => dsr_candidates(lat, self.dlm()?, self.prior.as_ref(), s.dlm_nbest, s.asr_nbest, &s.beam),
            DecoderKind::DlmSum => {
                dlm_sum_candidates(lat, self.dlm()?, self.prior.as_ref(), s.dlm_nbest, s.asr_nbest, &s.beam)
            }
            other => Err(Error::InvalidConfig(format!("{other} does not rescore a fixed candidate list"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nbest::ChannelScores;
    use crate::scorers::{CopyDlmScorer, TableScorer, UniformScorer};
    use crate::testing::{l1, random_lattice};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hyp(tokens: &[Token], scores: &[(Channel, f64)]) -> ScoredHyp {
        let mut s = ChannelScores::default();
        for &(c, v) in scores {
            s.set(c, v);
        }
        ScoredHyp { tokens: tokens.to_vec(), scores: s }
    }

    fn copy_dlm(v: usize, eos: Token, w: f64) -> Arc<dyn Scorer> {
        Arc::new(CopyDlmScorer::new(w, 0.0, Arc::new(UniformScorer::new(v, eos))).unwrap())
    }

    #[test]
    fn dlm_greedy_examples() {
        // L1 over {a, b} with eos = b
        let lat = l1();
        assert_eq!(decode_dlm_greedy(&lat, &copy_dlm(2, 1, 1.0)).unwrap(), vec![0]);
        assert_eq!(decode_dlm_greedy(&lat, &copy_dlm(2, 1, 0.8)).unwrap(), vec![0]);
        // a context-free table DLM over {a, b, eos}
        let lat = PosteriorLattice::from_rows("x", &vec![vec![0.6, 0.3, 0.0, 0.1]; 2]).unwrap();
        let table: Arc<dyn Scorer> = Arc::new(TableScorer::new(&[(vec![1], 1.0)], 3, 2).unwrap());
        assert_eq!(decode_dlm_greedy(&lat, &table).unwrap(), vec![1]);
    }

    #[test]
    fn rescore_examples() {
        let a = hyp(&[0], &[(Channel::Asr, -1.0), (Channel::Lm, -5.0), (Channel::Prior, -1.0)]);
        let b = hyp(&[1], &[(Channel::Asr, -1.1), (Channel::Lm, -1.0), (Channel::Prior, -1.0)]);
        let best = rescore_with(&[a.clone(), b.clone()], Channel::Lm, Scales::new(0.5, 0.0).unwrap()).unwrap();
        assert_eq!(best.tokens, vec![1]);
        assert!((best.score(Channel::Combined).unwrap() + 1.6).abs() < 1e-12);
        assert_eq!(rescore_with(&[a.clone(), b], Channel::Lm, Scales::ZERO).unwrap().tokens, vec![0]);
        assert_eq!(rescore_with(&[a.clone()], Channel::Lm, Scales::new(1.0, 1.0).unwrap()).unwrap().tokens, vec![0]);
        assert!(matches!(rescore_with(&[], Channel::Lm, Scales::ZERO), Err(Error::EmptyNBest)));
    }

    #[test]
    fn dsr_arithmetic() {
        let hyps = vec![
            hyp(&[0], &[(Channel::Asr, -2.0), (Channel::Dlm, -4.0)]),
            hyp(&[1], &[(Channel::Asr, -2.2), (Channel::Dlm, -1.0)]),
            hyp(&[2], &[(Channel::Asr, -3.0), (Channel::Dlm, -2.0)]),
        ];
        let best = rescore_with(&hyps, Channel::Dlm, Scales::new(1.0, 0.0).unwrap()).unwrap();
        assert_eq!(best.tokens, vec![1]);
        assert!((best.score(Channel::Combined).unwrap() + 3.2).abs() < 1e-12);
    }

    #[test]
    fn rescore_lm_attaches_channels() {
        let lat = l1();
        let nbest = asr_nbest(&lat, 4, &BeamConfig::default()).unwrap();
        let lm = UniformScorer::new(2, 1);
        let best = rescore_lm(&nbest, &lm, None, Scales::ZERO).unwrap();
        assert_eq!(best.tokens, nbest.hyps[0].tokens);
        assert!(best.score(Channel::Lm).is_some());
    }

    #[test]
    fn lm_onepass_examples() {
        let lat = PosteriorLattice::from_rows("x", &vec![vec![0.6, 0.3, 0.0, 0.1]; 2]).unwrap();
        let cfg = BeamConfig::default();
        let lm: Arc<dyn Scorer> = Arc::new(TableScorer::new(&[(vec![1], 0.99), (vec![0], 0.01)], 3, 2).unwrap());
        let plain = time_sync_beam(&Fusion::acoustic(&lat), &cfg).unwrap();
        let zero = decode_lm_onepass(&lat, &lm, None, Scales::ZERO, &cfg).unwrap();
        assert_eq!(zero.tokens, plain.hyps[0].tokens);
        let strong = decode_lm_onepass(&lat, &lm, None, Scales::new(10.0, 0.0).unwrap(), &cfg).unwrap();
        assert_eq!(strong.tokens, vec![1]);
    }

    #[test]
    fn dsr_contains_dlm_greedy_and_zero_scales_pick_exact_asr_best() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let lat = random_lattice(&mut rng, 3, 4);
            let dlm = copy_dlm(3, 2, 0.7);
            let cfg = BeamConfig::new(64, 64).unwrap();
            let cands = dsr_candidates(&lat, &dlm, None, 4, 64, &cfg).unwrap();
            let greedy = decode_dlm_greedy(&lat, &dlm).unwrap();
            assert!(cands.hyps.iter().any(|h| h.tokens == greedy));
            let best = decode_dsr(&lat, &dlm, None, Scales::ZERO, 4, 64, &cfg).unwrap();
            let top = cands.hyps.iter().map(|h| h.score(Channel::Asr).unwrap()).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(best.score(Channel::Asr).unwrap(), top);
        }
    }

    #[test]
    fn dsr_winner_dominates_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let lat = random_lattice(&mut rng, 4, 6);
        let dlm = copy_dlm(4, 3, 0.5);
        let prior = PriorModel::estimate([&lat]).unwrap();
        let scales = Scales::new(0.7, 0.2).unwrap();
        let cfg = BeamConfig::default();
        let cands = dsr_candidates(&lat, &dlm, Some(&prior), 6, 6, &cfg).unwrap();
        let best = decode_dsr(&lat, &dlm, Some(&prior), scales, 6, 6, &cfg).unwrap();
        for h in &cands.hyps {
            let s = scales.combine(h.score(Channel::Asr).unwrap(), h.score(Channel::Dlm).unwrap(), h.score(Channel::Prior).unwrap());
            assert!(best.score(Channel::Combined).unwrap() >= s);
        }
    }

    #[test]
    fn decoder_names_round_trip() {
        for k in DecoderKind::ALL {
            assert_eq!(k.name().parse::<DecoderKind>().unwrap(), k);
        }
        assert_eq!("dlm-sum".parse::<DecoderKind>().unwrap(), DecoderKind::DlmSum);
        assert!("beam".parse::<DecoderKind>().is_err());
    }
}
