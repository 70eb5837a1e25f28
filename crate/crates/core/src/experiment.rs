//! End-to-end experiments on a synthetic channel: build a corpus and its
//! vocabulary, simulate lattices, train the LM and DLM, tune fusion scales
//! on a dev split, and evaluate every decoder on a disjoint test split.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{SubwordModel, WORD_MARKER};
use crate::channel::{synth_lattice, ChannelConfig, Confusion};
use crate::ctc::{forward_logprob, greedy_collapse, soft_collapse, viterbi_logprob};
use crate::decoders::{
    dlm_sum_mixture, rescore_with, tune_scales_on, DecodeSettings, DecoderKind, DevUtterance, Models, TunedScales,
};
use crate::error::{Error, Result};
use crate::lattice::PosteriorLattice;
use crate::math;
use crate::metrics::{
    correction_confusion, count_search_model_errors, ece, edit_distance, entropy, wer_histogram, CorrectionConfusion,
    ErrorCounts, MetricsReport, ScoredOutcome, DEFAULT_ECE_BINS,
};
use crate::nbest::{NBestList, Scales, ScoredHyp};
use crate::scorers::{ChannelDlmScorer, Context, CopyDlmScorer, NGramScorer, PriorModel, Scorer};
use crate::search::BeamConfig;
use crate::vocab::{Token, Vocabulary};

pub const EOS_TOKEN: &str = "</s>";

/// Bin edges of the per-sentence WER histogram.
pub const HISTOGRAM_EDGES: [f64; 5] = [0.0, 0.1, 0.25, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusConfig {
    /// Sentences sampled from a random sparse word bigram chain.
    Markov {
        words: usize,
        /// Successors with nonzero probability per word.
        successors: usize,
        train_sentences: usize,
        eval_sentences: usize,
        min_words: usize,
        max_words: usize,
        stop_prob: f64,
    },
    /// One sentence per nonempty line; lines are split into LM training and
    /// evaluation by a hash of their position.
    Text { path: PathBuf, train_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub mean_frames: f64,
    pub std_frames: f64,
    pub blank_prob: f64,
    pub peakiness: f64,
    pub runner_up: (f64, f64),
    /// Confusion mass moved off the diagonal for every word token.
    pub off_diagonal: f64,
    pub neighbors: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmParams {
    pub order: usize,
    pub add_k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DlmParams {
    /// Copy of the hypothesis mixed with a uniform floor and the LM.
    Copy { copy_weight: f64, noise_weight: f64 },
    /// Inverse of the simulated substitution channel under the LM.
    Channel { smoothing: f64 },
}

/// Fixed scales for one decoder, bypassing tuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedScales {
    pub decoder: DecoderKind,
    pub lambda: f64,
    pub prior_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub channel: ChannelParams,
    pub lm: LmParams,
    pub dlm: DlmParams,
    pub decoders: Vec<DecoderKind>,
    pub beam_size: usize,
    pub asr_nbest: usize,
    pub dlm_nbest: usize,
    /// Share of evaluation sentences used for tuning; the rest is test.
    pub dev_fraction: f64,
    #[serde(default)]
    pub soft_collapse: Option<f64>,
    #[serde(default)]
    pub fixed_scales: Vec<FixedScales>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: CorpusConfig::Markov {
                words: 60,
                successors: 3,
                train_sentences: 4000,
                eval_sentences: 1000,
                min_words: 3,
                max_words: 12,
                stop_prob: 0.2,
            },
            channel: ChannelParams {
                mean_frames: 3.0,
                std_frames: 1.0,
                blank_prob: 0.5,
                peakiness: 60.0,
                runner_up: (0.2, 0.6),
                off_diagonal: 0.2,
                neighbors: 3,
            },
            lm: LmParams { order: 2, add_k: 0.01 },
            dlm: DlmParams::Channel { smoothing: 0.1 },
            decoders: DecoderKind::ALL.to_vec(),
            beam_size: 8,
            asr_nbest: 8,
            dlm_nbest: 8,
            dev_fraction: 0.5,
            soft_collapse: None,
            fixed_scales: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return bad(format!("dev fraction {} outside (0, 1)", self.dev_fraction));
        }
        if self.decoders.is_empty() {
            return bad("no decoders selected".into());
        }
        if self.asr_nbest == 0 || self.dlm_nbest == 0 {
            return bad("n-best sizes must be positive".into());
        }
        BeamConfig::new(self.beam_size, 1)?;
        if let Some(tau) = self.soft_collapse {
            if !(0.0..1.0).contains(&tau) {
                return bad(format!("soft-collapse threshold {tau} outside [0, 1)"));
            }
        }
        match &self.corpus {
            CorpusConfig::Markov { words, successors, eval_sentences, train_sentences, min_words, max_words, stop_prob } => {
                if *words < 2 || *successors == 0 || *eval_sentences == 0 || *train_sentences == 0 {
                    return bad("Markov corpus needs >= 2 words, successors, and sentences".into());
                }
                if *min_words == 0 || min_words > max_words || !(0.0..=1.0).contains(stop_prob) {
                    return bad("Markov corpus needs 1 <= min_words <= max_words and stop_prob in [0, 1]".into());
                }
            }
            CorpusConfig::Text { train_fraction, .. } => {
                if !(0.0..1.0).contains(train_fraction) {
                    return bad(format!("train fraction {train_fraction} outside [0, 1)"));
                }
            }
        }
        for f in &self.fixed_scales {
            Scales::relative(f.lambda, f.prior_rel)?;
        }
        Ok(())
    }

    pub fn settings(&self) -> DecodeSettings {
        DecodeSettings {
            beam: BeamConfig { beam_size: self.beam_size, nbest_size: 1, ..BeamConfig::default() },
            scales: Scales::ZERO,
            asr_nbest: self.asr_nbest,
            dlm_nbest: self.dlm_nbest,
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn hash64(tag: &str, id: &str) -> u64 {
    let digest = Sha256::digest(format!("{tag}:{id}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Seed of the per-utterance generator: the global seed mixed with a hash
/// of the utterance id, so results do not depend on processing order.
pub fn utterance_seed(seed: u64, utt_id: &str) -> u64 {
    seed ^ hash64("utt", utt_id)
}

/// Deterministic split bucket in `[0, 1)`.
fn bucket(tag: &str, id: &str) -> f64 {
    (hash64(tag, id) >> 11) as f64 / (1u64 << 53) as f64
}

/// A word-level corpus and the vocabulary it is tokenized with.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub subwords: SubwordModel,
    /// LM training sentences as words.
    pub train: Vec<Vec<String>>,
    /// `(utt_id, words)` evaluation sentences.
    pub eval: Vec<(String, Vec<String>)>,
}

/// Vocabulary of the bare marker, single characters, whole words with the
/// marker, and the end token (last).
pub fn word_vocabulary<'a>(words: impl IntoIterator<Item = &'a str>, chars: impl IntoIterator<Item = char>) -> Result<Vocabulary> {
    let chars: BTreeSet<char> = chars.into_iter().filter(|c| *c != WORD_MARKER).collect();
    let words: BTreeSet<&str> = words.into_iter().collect();
    let mut tokens = vec![WORD_MARKER.to_string()];
    tokens.extend(chars.iter().map(|c| c.to_string()));
    tokens.extend(words.iter().map(|w| format!("{WORD_MARKER}{w}")));
    tokens.push(EOS_TOKEN.to_string());
    let eos = (tokens.len() - 1) as Token;
    Vocabulary::new(tokens, eos)
}

fn syllable_word(rng: &mut impl Rng) -> String {
    const ONSETS: &[char] = &['b', 'd', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v'];
    const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];
    let mut w = String::new();
    for _ in 0..rng.random_range(1..=2) {
        w.push(*ONSETS.choose(rng).expect("nonempty"));
        w.push(*VOWELS.choose(rng).expect("nonempty"));
    }
    if rng.random_bool(0.3) {
        w.push(*ONSETS.choose(rng).expect("nonempty"));
    }
    w
}

#[allow(clippy::too_many_arguments)]
fn markov_corpus(
    seed: u64,
    n_words: usize,
    successors: usize,
    train_sentences: usize,
    eval_sentences: usize,
    min_words: usize,
    max_words: usize,
    stop_prob: f64,
) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ hash64("corpus", "markov"));
    let mut words = BTreeSet::new();
    while words.len() < n_words {
        words.insert(syllable_word(&mut rng));
    }
    let words: Vec<String> = words.into_iter().collect();
    let gamma = Gamma::new(1.0, 1.0).expect("valid shape");
    let k = successors.min(words.len());
    let chain: Vec<Vec<(usize, f64)>> = (0..words.len())
        .map(|_| {
            let next: Vec<usize> = rand::seq::index::sample(&mut rng, words.len(), k).into_vec();
            let w: Vec<f64> = next.iter().map(|_| gamma.sample(&mut rng)).collect();
            let z: f64 = w.iter().sum();
            next.into_iter().zip(w.into_iter().map(|x| x / z)).collect()
        })
        .collect();
    let sentence = |rng: &mut ChaCha8Rng| -> Vec<String> {
        let mut cur = rng.random_range(0..words.len());
        let mut out = vec![words[cur].clone()];
        while out.len() < max_words && !(out.len() >= min_words && rng.random_bool(stop_prob)) {
            let mut u: f64 = rng.random();
            let mut pick = chain[cur][0].0;
            for &(j, p) in &chain[cur] {
                pick = j;
                if u < p {
                    break;
                }
                u -= p;
            }
            cur = pick;
            out.push(words[cur].clone());
        }
        out
    };
    let train = (0..train_sentences).map(|_| sentence(&mut rng)).collect();
    let eval = (0..eval_sentences).map(|i| (format!("utt-{i:05}"), sentence(&mut rng))).collect();
    let vocab = word_vocabulary(words.iter().map(String::as_str), words.iter().flat_map(|w| w.chars()))?;
    let subwords = SubwordModel::from_vocab(&vocab)?;
    Ok(Corpus { vocab, subwords, train, eval })
}

fn text_corpus(path: &PathBuf, train_fraction: f64) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)?;
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let words: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if words.is_empty() {
            continue;
        }
        let id = format!("line-{i:06}");
        if bucket("train", &id) < train_fraction {
            train.push(words);
        } else {
            eval.push((id, words));
        }
    }
    if eval.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let known = train.iter().flatten().map(String::as_str);
    let chars = text.chars().filter(|c| !c.is_whitespace());
    let vocab = word_vocabulary(known, chars)?;
    let subwords = SubwordModel::from_vocab(&vocab)?;
    Ok(Corpus { vocab, subwords, train, eval })
}

impl Corpus {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        match &cfg.corpus {
            &CorpusConfig::Markov { words, successors, train_sentences, eval_sentences, min_words, max_words, stop_prob } => {
                markov_corpus(cfg.seed, words, successors, train_sentences, eval_sentences, min_words, max_words, stop_prob)
            }
            CorpusConfig::Text { path, train_fraction } => text_corpus(path, *train_fraction),
        }
    }

    pub fn encode(&self, words: &[String]) -> Result<Vec<Token>> {
        self.subwords.encode(&words.join(" "))
    }

    pub fn words(&self, seq: &[Token]) -> Result<Vec<String>> {
        self.subwords.words(seq, &self.vocab)
    }

    /// Whole-word tokens, the labels the channel confuses with each other.
    pub fn word_tokens(&self) -> Vec<Token> {
        (0..self.vocab.len() as Token)
            .filter(|&t| {
                let s = self.vocab.token(t).unwrap_or("");
                t != self.vocab.eos_id() && s.starts_with(WORD_MARKER) && s.chars().count() > 1
            })
            .collect()
    }
}

impl ChannelParams {
    /// Channel over `vocab` with word tokens confused among themselves.
    pub fn build(&self, seed: u64, vocab: &Vocabulary, confusable: &[Token]) -> Result<ChannelConfig> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ hash64("channel", "confusion"));
        let confusion = Confusion::neighbors(vocab.len(), confusable, self.off_diagonal, self.neighbors, &mut rng)?;
        let ch = ChannelConfig {
            mean_frames: self.mean_frames,
            std_frames: self.std_frames,
            blank_prob: self.blank_prob,
            peakiness: self.peakiness,
            runner_up: self.runner_up,
            confusion,
            silent: vec![vocab.eos_id()],
        };
        ch.validate()?;
        Ok(ch)
    }
}

/// One evaluation utterance with its simulated lattice.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub words: Vec<String>,
    pub tokens: Vec<Token>,
    pub lattice: PosteriorLattice,
}

/// Summary of one data split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub utterances: usize,
    pub ref_words: usize,
    pub frames: usize,
    pub ids_sha256: String,
}

impl SplitSummary {
    fn of(utts: &[Utterance]) -> Self {
        let ids: Vec<&str> = utts.iter().map(|u| u.id.as_str()).collect();
        Self {
            utterances: utts.len(),
            ref_words: utts.iter().map(|u| u.words.len()).sum(),
            frames: utts.iter().map(|u| u.lattice.frames()).sum(),
            ids_sha256: sha256_hex(ids.join("\n").as_bytes()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleSource {
    TunedOnDev,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalesUsed {
    pub lambda: f64,
    pub prior_rel: f64,
    pub source: ScaleSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderReport {
    pub decoder: DecoderKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scales: Option<ScalesUsed>,
    /// Grid search outcome on the dev candidate lists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tuning: Option<TunedScales>,
    pub test: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub config_sha256: String,
    pub vocab_size: usize,
    pub train_sentences: usize,
    /// Greedy word error rate of the channel over dev and test.
    pub channel_wer: f64,
    pub dev: SplitSummary,
    pub test: SplitSummary,
    pub decoders: Vec<DecoderReport>,
}

impl ExperimentReport {
    pub fn decoder(&self, kind: DecoderKind) -> Option<&DecoderReport> {
        self.decoders.iter().find(|d| d.decoder == kind)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Everything an experiment run produces.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub corpus: Corpus,
    pub report: ExperimentReport,
    /// Test outputs per decoder, one single-entry list per utterance.
    pub outputs: Vec<(DecoderKind, Vec<NBestList>)>,
    pub prior: PriorModel,
}

/// Simulates the lattices of all evaluation sentences and splits them into
/// dev and test.
pub fn simulate(cfg: &ExperimentConfig, corpus: &Corpus, channel: &ChannelConfig) -> Result<(Vec<Utterance>, Vec<Utterance>)> {
    let utts = corpus
        .eval
        .par_iter()
        .map(|(id, words)| {
            let tokens = corpus.encode(words).map_err(|e| e.in_utterance(id))?;
            let mut rng = ChaCha8Rng::seed_from_u64(utterance_seed(cfg.seed, id));
            let mut lattice = synth_lattice(id, &tokens, channel, &mut rng)?;
            if let Some(tau) = cfg.soft_collapse {
                lattice = soft_collapse(&lattice, tau);
            }
            Ok(Utterance { id: id.clone(), words: words.clone(), tokens, lattice })
        })
        .collect::<Result<Vec<_>>>()?;
    let (dev, test): (Vec<_>, Vec<_>) = utts.into_iter().partition(|u| bucket("split", &u.id) < cfg.dev_fraction);
    if dev.is_empty() {
        return Err(Error::EmptyDev);
    }
    if test.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok((dev, test))
}

/// Trains the LM on the training sentences and builds the DLM on top of it.
pub fn train_models(cfg: &ExperimentConfig, corpus: &Corpus, channel: &ChannelConfig, prior: PriorModel) -> Result<Models> {
    let sentences = corpus.train.iter().map(|w| corpus.encode(w)).collect::<Result<Vec<_>>>()?;
    let v = corpus.vocab.len();
    let lm: Arc<dyn Scorer> = Arc::new(NGramScorer::train(&sentences, cfg.lm.order, cfg.lm.add_k, v, corpus.vocab.eos_id())?);
    let dlm: Arc<dyn Scorer> = match cfg.dlm {
        DlmParams::Copy { copy_weight, noise_weight } => Arc::new(CopyDlmScorer::new(copy_weight, noise_weight, lm.clone())?),
        DlmParams::Channel { smoothing } => Arc::new(ChannelDlmScorer::new(channel.confusion.clone(), smoothing, lm.clone())?),
    };
    Ok(Models { lm: Some(lm), dlm: Some(dlm), prior: Some(prior) })
}

fn word_errors(corpus: &Corpus, reference: &[String], hyp: &[Token]) -> Result<usize> {
    Ok(edit_distance(reference, &corpus.words(hyp)?))
}

/// Tunes the scales of `kind` on dev candidate lists.
pub fn tune_decoder(
    kind: DecoderKind,
    corpus: &Corpus,
    models: &Models,
    dev: &[Utterance],
    settings: &DecodeSettings,
) -> Result<TunedScales> {
    let channel = kind
        .model_channel()
        .ok_or_else(|| Error::InvalidConfig(format!("{kind} has no scales to tune")))?;
    let items = dev
        .par_iter()
        .map(|u| {
            let list = models.candidates(kind, &u.lattice, settings).map_err(|e| e.in_utterance(&u.id))?;
            let errors = list.hyps.iter().map(|h| word_errors(corpus, &u.words, &h.tokens)).collect::<Result<_>>()?;
            DevUtterance::from_nbest(&list, channel, errors, u.words.len())
        })
        .collect::<Result<Vec<_>>>()?;
    tune_scales_on(&items)
}

/// Per-utterance evaluation record of one decoder.
/// Teacher-forced entropy sum, step count and (confidence, correct) pairs.
type Forced = (f64, usize, Vec<(f64, bool)>);

struct Evaluated {
    output: ScoredHyp,
    errors: usize,
    oracle_errors: Option<usize>,
    outcome: Option<ScoredOutcome>,
    forced: Option<Forced>,
    confusion: CorrectionConfusion,
    hyp_words: Vec<String>,
}

fn teacher_forced(scorer: &dyn Scorer, context: Option<Arc<Context>>, target: &[Token]) -> Result<Forced> {
    let mut state = scorer.start(context)?;
    let mut h = 0.0;
    let mut preds = Vec::with_capacity(target.len() + 1);
    for &y in target.iter().chain(std::iter::once(&scorer.eos())) {
        let dist = scorer.distribution(&state);
        h += entropy(&dist);
        let best = math::argmax(dist.iter().copied()).expect("nonempty event set");
        preds.push((dist[best].exp(), best as Token == y));
        state = state.pushed(y);
    }
    Ok((h, preds.len(), preds))
}

fn evaluate_one(
    kind: DecoderKind,
    corpus: &Corpus,
    models: &Models,
    u: &Utterance,
    s: &DecodeSettings,
) -> Result<Evaluated> {
    let lat = &u.lattice;
    let greedy = greedy_collapse(lat);
    let greedy_ctx = Some(Arc::new(Context::Labels(greedy.clone())));
    let prior = models.prior.as_ref();
    let prior_of = |seq: &[Token]| prior.map_or(0.0, |p| p.sequence_logprob(seq));

    let (output, oracle_errors) = if kind.rescores_list() {
        let list = models.candidates(kind, lat, s)?;
        let out = rescore_with(&list.hyps, kind.model_channel().expect("rescoring rules fuse a model"), s.scales)?;
        let oracle = list.hyps.iter().map(|h| word_errors(corpus, &u.words, &h.tokens)).collect::<Result<Vec<_>>>()?;
        (out, oracle.into_iter().min())
    } else {
        (models.decode(kind, lat, s)?, None)
    };

    // model-side objective for search/model error attribution and calibration
    let lm = models.lm.clone();
    let dlm = models.dlm.clone();
    let (model, context): (Option<Arc<dyn Scorer>>, Option<Arc<Context>>) = match kind {
        DecoderKind::AsrGreedy => (None, None),
        DecoderKind::LmRescore | DecoderKind::LmOnepass => (lm, None),
        DecoderKind::DlmGreedy | DecoderKind::Dsr => (dlm, greedy_ctx.clone()),
        DecoderKind::DlmSum => {
            let dlm = dlm.ok_or_else(|| Error::InvalidConfig("dlm_sum needs a DLM".into()))?;
            (Some(Arc::new(dlm_sum_mixture(lat, &dlm, s.asr_nbest, &s.beam)?) as Arc<dyn Scorer>), None)
        }
    };
    let objective = |seq: &[Token]| -> Result<f64> {
        let model_score = |m: &Arc<dyn Scorer>| m.score_sequence(context.clone(), seq);
        Ok(match kind {
            DecoderKind::AsrGreedy => viterbi_logprob(lat, seq),
            DecoderKind::DlmGreedy => model_score(model.as_ref().expect("dlm"))?,
            DecoderKind::LmRescore | DecoderKind::LmOnepass => {
                s.scales.combine(viterbi_logprob(lat, seq), model_score(model.as_ref().expect("lm"))?, prior_of(seq))
            }
            DecoderKind::Dsr | DecoderKind::DlmSum => {
                s.scales.combine(forward_logprob(lat, seq), model_score(model.as_ref().expect("dlm"))?, prior_of(seq))
            }
        })
    };
    let outcome = ScoredOutcome {
        output: output.tokens.clone(),
        output_score: objective(&output.tokens)?,
        reference: u.tokens.clone(),
        reference_score: objective(&u.tokens)?,
    };
    let forced = match &model {
        Some(m) => Some(teacher_forced(m.as_ref(), context.clone(), &u.tokens)?),
        None => None,
    };
    let hyp_words = corpus.words(&output.tokens)?;
    let greedy_words = corpus.words(&greedy)?;
    Ok(Evaluated {
        errors: edit_distance(&u.words, &hyp_words),
        confusion: correction_confusion(&u.words, &greedy_words, &hyp_words),
        output,
        oracle_errors,
        outcome: Some(outcome),
        forced,
        hyp_words,
    })
}

/// Decodes every test utterance with `kind` and aggregates the metrics.
pub fn evaluate_decoder(
    kind: DecoderKind,
    corpus: &Corpus,
    models: &Models,
    test: &[Utterance],
    settings: &DecodeSettings,
) -> Result<(MetricsReport, Vec<NBestList>)> {
    let evals = test
        .par_iter()
        .map(|u| evaluate_one(kind, corpus, models, u, settings).map_err(|e| e.in_utterance(&u.id)))
        .collect::<Result<Vec<_>>>()?;
    let ref_words: usize = test.iter().map(|u| u.words.len()).sum();
    let mut counts = ErrorCounts::default();
    let mut oracle = ErrorCounts::default();
    let mut confusion = CorrectionConfusion::default();
    for (e, u) in evals.iter().zip(test) {
        counts.add(e.errors, u.words.len());
        if let Some(o) = e.oracle_errors {
            oracle.add(o, u.words.len());
        }
        confusion.add(&e.confusion);
    }
    let outcomes: Vec<ScoredOutcome> = evals.iter().filter_map(|e| e.outcome.clone()).collect();
    let forced: Vec<&Forced> = evals.iter().filter_map(|e| e.forced.as_ref()).collect();
    let (entropy, calibration) = if forced.is_empty() {
        (None, None)
    } else {
        let h: f64 = forced.iter().map(|f| f.0).sum();
        let n: usize = forced.iter().map(|f| f.1).sum();
        let preds: Vec<(f64, bool)> = forced.iter().flat_map(|f| f.2.iter().copied()).collect();
        (Some(h / n as f64), Some(ece(&preds, DEFAULT_ECE_BINS)?))
    };
    let histogram = wer_histogram(
        evals.iter().zip(test).map(|(e, u)| (u.words.as_slice(), e.hyp_words.as_slice())),
        &HISTOGRAM_EDGES,
    )?;
    let report = MetricsReport {
        wer: counts.rate()?,
        utterances: test.len(),
        ref_words,
        oracle_wer: if oracle.ref_len > 0 { Some(oracle.rate()?) } else { None },
        errors: Some(count_search_model_errors(&outcomes)),
        entropy,
        calibration,
        histogram: Some(histogram),
        confusion: Some(confusion),
    };
    let lists = evals
        .into_iter()
        .zip(test)
        .map(|(e, u)| NBestList::new(u.id.clone(), vec![e.output]))
        .collect();
    Ok((report, lists))
}

/// Runs the full pipeline. The output depends only on the configuration.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    cfg.validate()?;
    let corpus = Corpus::build(cfg)?;
    let channel = cfg.channel.build(cfg.seed, &corpus.vocab, &corpus.word_tokens())?;
    let (dev, test) = simulate(cfg, &corpus, &channel)?;
    let prior = PriorModel::estimate(dev.iter().map(|u| &u.lattice))?;
    let models = train_models(cfg, &corpus, &channel, prior.clone())?;
    let base = cfg.settings();

    let all: Vec<&Utterance> = dev.iter().chain(&test).collect();
    let channel_wer = {
        let hyps = all.iter().map(|u| corpus.words(&greedy_collapse(&u.lattice))).collect::<Result<Vec<_>>>()?;
        let mut c = ErrorCounts::default();
        for (u, h) in all.iter().zip(&hyps) {
            c.add(edit_distance(&u.words, h), u.words.len());
        }
        c.rate()?
    };

    let mut reports = Vec::new();
    let mut outputs = Vec::new();
    for &kind in &cfg.decoders {
        let mut settings = base;
        let (scales, tuning) = if !kind.is_tunable() {
            (None, None)
        } else if let Some(f) = cfg.fixed_scales.iter().find(|f| f.decoder == kind) {
            let used = ScalesUsed { lambda: f.lambda, prior_rel: f.prior_rel, source: ScaleSource::Fixed };
            (Some(used), None)
        } else {
            let tuned = tune_decoder(kind, &corpus, &models, &dev, &base)?;
            let used = ScalesUsed { lambda: tuned.lambda, prior_rel: tuned.prior_rel, source: ScaleSource::TunedOnDev };
            (Some(used), Some(tuned))
        };
        if let Some(sc) = scales {
            settings.scales = Scales::relative(sc.lambda, sc.prior_rel)?;
        }
        let (metrics, lists) = evaluate_decoder(kind, &corpus, &models, &test, &settings)?;
        reports.push(DecoderReport { decoder: kind, scales, tuning, test: metrics });
        outputs.push((kind, lists));
    }

    let report = ExperimentReport {
        seed: cfg.seed,
        config_sha256: sha256_hex(serde_json::to_string(cfg)?.as_bytes()),
        vocab_size: corpus.vocab.len(),
        train_sentences: corpus.train.len(),
        channel_wer,
        dev: SplitSummary::of(&dev),
        test: SplitSummary::of(&test),
        decoders: reports,
    };
    Ok(Experiment { corpus, report, outputs, prior })
}
