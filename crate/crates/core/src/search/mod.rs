//! Beam search over fused scores.
//!
//! Both engines maximize
//! `λ_ctc·log p_ctc + Σ_i λ_i·log p_i − λ_prior·log p_prior`
//! for a [`Fusion`] of an optional CTC lattice, any number of stepwise
//! scorers, and an optional label prior.

mod label_sync;
mod time_sync;

use std::sync::Arc;

pub use label_sync::label_sync_beam;
pub use time_sync::time_sync_beam;

use crate::error::{Error, Result};
use crate::lattice::PosteriorLattice;
use crate::nbest::{scaled, Channel, ChannelScores, NBestList};
use crate::scorers::{Context, PriorModel, Scorer, ScorerState};
use crate::vocab::Token;

/// Output length cap for searches that are neither bound by a lattice nor
/// conditioned on a context.
pub const UNCONDITIONED_LENGTH_CAP: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Output length cap as a multiple of the context length.
    pub max_len_factor: f64,
    pub nbest_size: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self { beam_size: 12, max_len_factor: 2.0, nbest_size: 12 }
    }
}

impl BeamConfig {
    pub fn new(beam_size: usize, nbest_size: usize) -> Result<Self> {
        let cfg = Self { beam_size, nbest_size, ..Self::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn greedy() -> Self {
        Self { beam_size: 1, nbest_size: 1, ..Self::default() }
    }

    pub fn with_nbest(self, nbest_size: usize) -> Self {
        Self { beam_size: self.beam_size.max(nbest_size), nbest_size, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.nbest_size == 0 || self.nbest_size > self.beam_size {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= nbest ({}) <= beam ({})",
                self.nbest_size, self.beam_size
            )));
        }
        if !(self.max_len_factor > 0.0 && self.max_len_factor.is_finite()) {
            return Err(Error::InvalidConfig(format!("bad max length factor {}", self.max_len_factor)));
        }
        Ok(())
    }
}

/// A scaled scorer inside a fusion, with its conditioning context.
#[derive(Debug, Clone)]
pub struct FusionTerm {
    pub channel: Channel,
    pub scorer: Arc<dyn Scorer>,
    pub context: Option<Arc<Context>>,
    pub scale: f64,
}

/// Linear combination of log-scores searched over.
#[derive(Debug, Clone, Default)]
pub struct Fusion<'a> {
    pub acoustic: Option<&'a PosteriorLattice>,
    pub terms: Vec<FusionTerm>,
    /// Prior and its (subtracted) scale.
    pub prior: Option<(&'a PriorModel, f64)>,
    /// Termination event when no scorer defines one.
    pub end_token: Option<Token>,
}

impl<'a> Fusion<'a> {
    pub fn acoustic(lat: &'a PosteriorLattice) -> Self {
        Self { acoustic: Some(lat), ..Self::default() }
    }

    pub fn with_term(mut self, channel: Channel, scorer: Arc<dyn Scorer>, context: Option<Arc<Context>>, scale: f64) -> Self {
        self.terms.push(FusionTerm { channel, scorer, context, scale });
        self
    }

    pub fn with_prior(mut self, prior: &'a PriorModel, scale: f64) -> Self {
        self.prior = Some((prior, scale));
        self
    }

    fn validate(&self) -> Result<()> {
        let scales = self.terms.iter().map(|t| t.scale).chain(self.prior.map(|p| p.1));
        for s in scales {
            if !s.is_finite() {
                return Err(Error::InvalidConfig(format!("fusion scale {s} is not finite")));
            }
        }
        let events = self.terms.first().map(|t| (t.scorer.num_events(), t.scorer.eos()));
        if let Some((n, eos)) = events {
            if self.terms.iter().any(|t| t.scorer.num_events() != n || t.scorer.eos() != eos) {
                return Err(Error::InvalidConfig("fused scorers disagree on the vocabulary".into()));
            }
            if let Some(lat) = self.acoustic {
                if lat.num_labels() != n {
                    return Err(Error::WidthMismatch { expected: n + 1, found: lat.width() });
                }
            }
        }
        if let (Some(eos), None, Some(lat)) = (self.end_token, self.terms.first(), self.acoustic) {
            if eos as usize >= lat.num_labels() {
                return Err(Error::InvalidConfig(format!("end token {eos} outside the lattice vocabulary")));
            }
        }
        if let (Some((prior, _)), Some(lat)) = (self.prior, self.acoustic) {
            if prior.framewise.len() != lat.width() {
                return Err(Error::WidthMismatch { expected: prior.framewise.len(), found: lat.width() });
            }
        }
        Ok(())
    }

    pub fn with_end_token(mut self, eos: Token) -> Self {
        self.end_token = Some(eos);
        self
    }

    fn eos(&self) -> Option<Token> {
        self.terms.first().map(|t| t.scorer.eos()).or(self.end_token)
    }

    fn num_events(&self) -> Option<usize> {
        self.terms
            .first()
            .map(|t| t.scorer.num_events())
            .or_else(|| self.acoustic.map(|l| l.num_labels()))
    }

    fn prior_scale(&self) -> f64 {
        self.prior.map_or(0.0, |p| p.1)
    }

    fn prior_logprob(&self, label: Token) -> f64 {
        self.prior.map_or(0.0, |(p, _)| p.label_logprob(label))
    }

    fn start_states(&self) -> Result<Vec<ScorerState>> {
        self.terms.iter().map(|t| t.scorer.start(t.context.clone())).collect()
    }

    /// Length cap: the frame count when a lattice is involved, otherwise
    /// `max_len_factor` times the longest context (an empty context counts
    /// as length one).
    pub fn length_cap(&self, cfg: &BeamConfig) -> usize {
        if let Some(lat) = self.acoustic {
            return lat.frames();
        }
        let longest = self.terms.iter().filter_map(|t| t.context.as_ref().map(|c| c.len())).max();
        match longest {
            Some(n) => (cfg.max_len_factor * n.max(1) as f64).ceil() as usize,
            None => UNCONDITIONED_LENGTH_CAP,
        }
    }
}

/// Per-channel running scores of one hypothesis.
#[derive(Debug, Clone, PartialEq)]
struct Tally {
    asr: f64,
    terms: Vec<f64>,
    prior: f64,
}

impl Tally {
    fn new(n_terms: usize) -> Self {
        Self { asr: 0.0, terms: vec![0.0; n_terms], prior: 0.0 }
    }

    fn combined(&self, fusion: &Fusion<'_>) -> f64 {
        let mut total = if fusion.acoustic.is_some() { self.asr } else { 0.0 };
        for (t, s) in fusion.terms.iter().zip(&self.terms) {
            total += scaled(t.scale, *s);
        }
        total - scaled(fusion.prior_scale(), self.prior)
    }

    fn to_scores(&self, fusion: &Fusion<'_>) -> ChannelScores {
        let mut scores = ChannelScores::default();
        if fusion.acoustic.is_some() {
            scores.set(Channel::Asr, self.asr);
        }
        for (t, s) in fusion.terms.iter().zip(&self.terms) {
            let prev = scores.get(t.channel).unwrap_or(0.0);
            scores.set(t.channel, prev + s);
        }
        if fusion.prior.is_some() {
            scores.set(Channel::Prior, self.prior);
        }
        scores.set(Channel::Combined, self.combined(fusion));
        scores
    }
}

fn finish_list(utt_id: &str, list: NBestList, nbest: usize) -> Result<NBestList> {
    let mut list = list.dedup();
    list.utt_id = utt_id.to_string();
    list.hyps.retain(|h| h.sort_key() > f64::NEG_INFINITY);
    if list.is_empty() {
        return Err(Error::EmptyBeam);
    }
    list.truncate(nbest);
    Ok(list)
}
