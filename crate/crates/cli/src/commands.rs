use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context as _, Result};
use dlm_decode::augment::{extract_dense_topk, substitute_tokens, topk_sample_hypothesis, CorruptionConfig, DenseTopK, SubwordModel};
use dlm_decode::channel::Confusion;
use dlm_decode::ctc::soft_collapse;
use dlm_decode::decoders::{rescore_with, tune_scales_on, DecodeSettings, DecoderKind, DevUtterance, Models};
use dlm_decode::experiment::{run_experiment, simulate, utterance_seed, Corpus, ExperimentConfig};
use dlm_decode::metrics::{
    correction_confusion, edit_distance, wer_histogram, CorrectionConfusion, ErrorCounts, MetricsReport,
};
use dlm_decode::nbest::scaled;
use dlm_decode::scorers::{ChannelDlmScorer, CopyDlmScorer, NGramScorer, PriorAccumulator, PriorModel, Scorer};
use dlm_decode::search::BeamConfig;
use dlm_decode::{Channel, Error, NBestList, PosteriorLattice, Scales, ScoredHyp, Token, Vocabulary};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::io::{self, RefLine};
use crate::{Cli, Command, DlmKind, ModelArgs, ModelChannel, UsageError};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Prints a line; a closed stdout is not an error.
fn say(line: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("cannot start worker threads")?;
    }
    if let Some(tau) = cli.soft_collapse {
        if !(0.0..1.0).contains(&tau) {
            return Err(usage(format!("--soft-collapse must lie in [0, 1), got {tau}")));
        }
    }
    match &cli.command {
        Command::Synth { config, out } => synth(&cli, config.as_deref(), out),
        Command::Decode { decoder, lattices, out, candidates, models } => {
            decode(&cli, *decoder, lattices, out, *candidates, models)
        }
        Command::Rescore { candidates, channel, out } => rescore(&cli, candidates, *channel, out),
        Command::Tune { candidates, refs, channel, out } => tune(&cli, candidates, refs, *channel, out),
        Command::Eval { hyps, refs, candidates, baseline, out } => {
            eval(&cli, hyps, refs, candidates.as_deref(), baseline.as_deref(), out.as_deref())
        }
        Command::Corrupt { refs, preset, config, lattices, out } => {
            corrupt(&cli, refs, preset.as_deref(), config.as_deref(), lattices.as_deref(), out)
        }
        Command::DenseExtract { lattices, k, out } => dense_extract(&cli, lattices, *k, out),
        Command::PriorEstimate { lattices, out } => prior_estimate(&cli, lattices, out),
        Command::Run { config, out } => run_cmd(&cli, config.as_deref(), out),
    }
}

fn vocab(cli: &Cli) -> Result<Vocabulary> {
    let path = cli.vocab.as_ref().ok_or_else(|| usage("this command needs --vocab"))?;
    Ok(Vocabulary::load(path).with_context(|| format!("in {}", path.display()))?)
}

fn scales(cli: &Cli) -> Result<Scales> {
    match &cli.scales {
        Some(path) => Ok(Scales::from_json(&io::read_text(path)?).with_context(|| format!("in {}", path.display()))?),
        None => Ok(Scales::ZERO),
    }
}

fn beam(cli: &Cli) -> Result<BeamConfig> {
    BeamConfig::new(cli.beam, 1).map_err(|e| usage(e.to_string()))
}

fn load_lattices(cli: &Cli, path: &Path, vocab: Option<&Vocabulary>) -> Result<Vec<PosteriorLattice>> {
    let mut lats = io::read_lattices(path)?;
    for lat in &lats {
        match vocab {
            Some(v) => lat.validate(v),
            None => lat.validate_rows(),
        }
        .map_err(|e| e.in_utterance(lat.utt_id()))?;
    }
    if let Some(tau) = cli.soft_collapse {
        lats = lats.iter().map(|l| soft_collapse(l, tau)).collect();
    }
    Ok(lats)
}

fn experiment_config(cli: &Cli, path: Option<&Path>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::from_json(&io::read_text(p)?).with_context(|| format!("in {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.soft_collapse.is_some() {
        cfg.soft_collapse = cli.soft_collapse;
    }
    cfg.beam_size = cli.beam;
    cfg.validate()?;
    Ok(cfg)
}

fn synth(cli: &Cli, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = experiment_config(cli, config)?;
    let corpus = Corpus::build(&cfg)?;
    let channel = cfg.channel.build(cfg.seed, &corpus.vocab, &corpus.word_tokens())?;
    let (dev, test) = simulate(&cfg, &corpus, &channel)?;
    io::write_text(&out.join("vocab.txt"), &corpus.vocab.to_text())?;
    let train: Vec<String> = corpus.train.iter().map(|w| w.join(" ")).collect();
    io::write_text(&out.join("train.txt"), &train.join("\n"))?;
    io::write_text(&out.join("confusion.json"), &serde_json::to_string(&channel.confusion)?)?;
    for (name, utts) in [("dev", &dev), ("test", &test)] {
        io::write_lattices(&out.join(format!("{name}.lat")), utts.iter().map(|u| &u.lattice))?;
        let refs: Vec<RefLine> = utts
            .iter()
            .map(|u| RefLine { utt_id: u.id.clone(), tokens: u.tokens.clone(), text: Some(u.words.join(" ")) })
            .collect();
        io::write_refs(&out.join(format!("{name}.ref.jsonl")), &refs)?;
    }
    say(&format!("wrote {} dev and {} test utterances to {}", dev.len(), test.len(), out.display()));
    Ok(())
}

fn train_lm(vocab: &Vocabulary, args: &ModelArgs) -> Result<Option<Arc<dyn Scorer>>> {
    let Some(path) = &args.lm_text else { return Ok(None) };
    let subwords = SubwordModel::from_vocab(vocab)?;
    let mut sentences = Vec::new();
    for (i, line) in io::read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let seq = subwords.encode(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        sentences.push(seq);
    }
    let lm = NGramScorer::train(&sentences, args.lm_order, args.lm_add_k, vocab.len(), vocab.eos_id())?;
    Ok(Some(Arc::new(lm)))
}

fn build_models(vocab: &Vocabulary, kind: DecoderKind, args: &ModelArgs) -> Result<Models> {
    let needs_lm = kind.model_channel().is_some();
    let needs_dlm = kind.model_channel() == Some(Channel::Dlm);
    let lm = train_lm(vocab, args)?;
    if needs_lm && lm.is_none() {
        return Err(usage(format!("{kind} needs --lm-text")));
    }
    let dlm: Option<Arc<dyn Scorer>> = match (needs_dlm, &lm) {
        (true, Some(lm)) => Some(match args.dlm {
            DlmKind::Copy => Arc::new(CopyDlmScorer::new(args.copy_weight, args.noise_weight, lm.clone())?),
            DlmKind::Channel => {
                let path = args.confusion.as_ref().ok_or_else(|| usage("the channel DLM needs --confusion"))?;
                let confusion: Confusion = serde_json::from_str(&io::read_text(path)?)
                    .map_err(Error::from)
                    .with_context(|| format!("in {}", path.display()))?;
                let confusion = Confusion::new((0..confusion.len() as Token).map(|t| confusion.row(t).to_vec()).collect())?;
                Arc::new(ChannelDlmScorer::new(confusion, args.smoothing, lm.clone())?)
            }
        }),
        _ => None,
    };
    let prior = match &args.prior {
        Some(path) => Some(PriorModel::from_json(&io::read_text(path)?).with_context(|| format!("in {}", path.display()))?),
        None => None,
    };
    Ok(Models { lm, dlm, prior })
}

/// `asr + λ·model − λ_prior·prior`, with disabled channels ignored.
fn combined(hyp: &ScoredHyp, model: Channel, s: Scales) -> f64 {
    let get = |ch: Channel| hyp.score(ch).unwrap_or(0.0);
    get(Channel::Asr) + scaled(s.model, get(model)) - scaled(s.prior, get(Channel::Prior))
}

fn decode(
    cli: &Cli,
    kind: DecoderKind,
    lattices: &Path,
    out: &Path,
    emit_candidates: bool,
    args: &ModelArgs,
) -> Result<()> {
    let vocab = vocab(cli)?;
    if emit_candidates && !kind.is_tunable() {
        return Err(usage(format!("{kind} has no candidate list")));
    }
    if cli.nbest > 1 && !kind.rescores_list() {
        return Err(usage(format!("--nbest > 1 needs a rescoring decoder, not {kind}")));
    }
    let models = build_models(&vocab, kind, args)?;
    let settings = DecodeSettings { beam: beam(cli)?, scales: scales(cli)?, asr_nbest: args.asr_nbest, dlm_nbest: args.dlm_nbest };
    let lats = load_lattices(cli, lattices, Some(&vocab))?;
    let lists = lats
        .par_iter()
        .map(|lat| {
            let id = lat.utt_id();
            let result = if emit_candidates {
                models.candidates(kind, lat, &settings)
            } else if cli.nbest > 1 {
                let channel = kind.model_channel().expect("rescoring rules fuse a model");
                models.candidates(kind, lat, &settings).map(|mut list| {
                    for h in &mut list.hyps {
                        let c = combined(h, channel, settings.scales);
                        h.scores.set(Channel::Combined, c);
                    }
                    list.sort();
                    list.truncate(cli.nbest);
                    list
                })
            } else {
                models.decode(kind, lat, &settings).map(|hyp| NBestList::new(id, vec![hyp]))
            };
            result.map_err(|e| e.in_utterance(id))
        })
        .collect::<dlm_decode::Result<Vec<_>>>()?;
    io::write_nbest(out, &lists)?;
    Ok(())
}

fn model_channel(c: ModelChannel) -> Channel {
    match c {
        ModelChannel::Lm => Channel::Lm,
        ModelChannel::Dlm => Channel::Dlm,
    }
}

fn rescore(cli: &Cli, candidates: &Path, channel: ModelChannel, out: &Path) -> Result<()> {
    let s = scales(cli)?;
    let lists = io::read_nbest(candidates)?;
    let best = lists
        .iter()
        .map(|l| {
            rescore_with(&l.hyps, model_channel(channel), s)
                .map(|h| NBestList::new(l.utt_id.clone(), vec![h]))
                .map_err(|e| e.in_utterance(&l.utt_id))
        })
        .collect::<dlm_decode::Result<Vec<_>>>()?;
    io::write_nbest(out, &best)?;
    Ok(())
}

/// Word-level units when the vocabulary marks words, token ids otherwise.
struct Units {
    words: Option<(SubwordModel, Vocabulary)>,
}

impl Units {
    fn new(cli: &Cli) -> Result<Self> {
        let words = match &cli.vocab {
            Some(_) => {
                let v = vocab(cli)?;
                SubwordModel::from_vocab(&v).ok().map(|sw| (sw, v))
            }
            None => None,
        };
        Ok(Self { words })
    }

    fn of(&self, seq: &[Token]) -> Result<Vec<String>> {
        match &self.words {
            Some((sw, v)) => Ok(sw.words(seq, v)?),
            None => Ok(seq.iter().map(|t| t.to_string()).collect()),
        }
    }
}

fn tune(cli: &Cli, candidates: &Path, refs: &Path, channel: ModelChannel, out: &Path) -> Result<()> {
    let units = Units::new(cli)?;
    let lists = io::read_nbest(candidates)?;
    let refs = io::read_refs(refs)?;
    let pairs = io::align_by_id(&refs, &lists, |l| l.utt_id.as_str(), "candidate list")?;
    let dev = pairs
        .iter()
        .map(|(r, list)| {
            let reference = units.of(&r.tokens)?;
            let errors = list
                .hyps
                .iter()
                .map(|h| Ok(edit_distance(&reference, &units.of(&h.tokens)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(DevUtterance::from_nbest(list, model_channel(channel), errors, reference.len())?)
        })
        .collect::<Result<Vec<_>>>()?;
    let tuned = tune_scales_on(&dev)?;
    io::write_text(out, &tuned.scales().to_json()?)?;
    say(&serde_json::to_string(&tuned)?);
    Ok(())
}

fn best_tokens(list: &NBestList) -> Result<&[Token]> {
    let best = list.best().ok_or_else(|| Error::EmptyNBest.in_utterance(&list.utt_id))?;
    Ok(&best.tokens)
}

fn eval(
    cli: &Cli,
    hyps: &Path,
    refs: &Path,
    candidates: Option<&Path>,
    baseline: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let units = Units::new(cli)?;
    let refs = io::read_refs(refs)?;
    let hyps = io::read_nbest(hyps)?;
    let pairs = io::align_by_id(&refs, &hyps, |l| l.utt_id.as_str(), "hypothesis")?;
    let mut counts = ErrorCounts::default();
    let mut ref_units = Vec::new();
    let mut hyp_units = Vec::new();
    for (r, list) in &pairs {
        let reference = units.of(&r.tokens)?;
        let hyp = units.of(best_tokens(list)?)?;
        counts.add(edit_distance(&reference, &hyp), reference.len());
        ref_units.push(reference);
        hyp_units.push(hyp);
    }
    let oracle_wer = match candidates {
        Some(path) => {
            let lists = io::read_nbest(path)?;
            let mut oracle = ErrorCounts::default();
            for (r, list) in io::align_by_id(&refs, &lists, |l| l.utt_id.as_str(), "candidate list")? {
                let reference = units.of(&r.tokens)?;
                let best = list
                    .hyps
                    .iter()
                    .map(|h| Ok(edit_distance(&reference, &units.of(&h.tokens)?)))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .min()
                    .ok_or_else(|| Error::EmptyNBest.in_utterance(&r.utt_id))?;
                oracle.add(best, reference.len());
            }
            Some(oracle.rate()?)
        }
        None => None,
    };
    let confusion = match baseline {
        Some(path) => {
            let lists = io::read_nbest(path)?;
            let mut total = CorrectionConfusion::default();
            for ((r, list), hyp) in io::align_by_id(&refs, &lists, |l| l.utt_id.as_str(), "baseline")?.iter().zip(&hyp_units) {
                let asr = units.of(best_tokens(list)?)?;
                total.add(&correction_confusion(&units.of(&r.tokens)?, &asr, hyp));
            }
            Some(total)
        }
        None => None,
    };
    let histogram = wer_histogram(
        ref_units.iter().zip(&hyp_units).map(|(r, h)| (r.as_slice(), h.as_slice())),
        &dlm_decode::experiment::HISTOGRAM_EDGES,
    )?;
    let report = MetricsReport {
        wer: counts.rate()?,
        utterances: pairs.len(),
        ref_words: counts.ref_len,
        oracle_wer,
        errors: None,
        entropy: None,
        calibration: None,
        histogram: Some(histogram),
        confusion,
    };
    let text = serde_json::to_string_pretty(&report)?;
    match out {
        Some(path) => io::write_text(path, &text)?,
        None => say(&text),
    }
    Ok(())
}

fn corrupt(
    cli: &Cli,
    refs: &Path,
    preset: Option<&str>,
    config: Option<&Path>,
    lattices: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let cfg = match (preset, config) {
        (_, Some(path)) => CorruptionConfig::from_json(&io::read_text(path)?).with_context(|| format!("in {}", path.display()))?,
        (Some(name), None) => CorruptionConfig::preset(name).map_err(|e| usage(e.to_string()))?,
        (None, None) => return Err(usage("corrupt needs --preset or --config")),
    };
    let seed = cli.seed.unwrap_or(0);
    let refs = io::read_refs(refs)?;
    let noisy: Vec<RefLine> = match lattices {
        Some(path) => {
            let lats = load_lattices(cli, path, None)?;
            io::align_by_id(&refs, &lats, |l| l.utt_id(), "lattice")?
                .into_iter()
                .map(|(r, lat)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(utterance_seed(seed, &r.utt_id));
                    let tokens = topk_sample_hypothesis(lat, cfg.topk, &mut rng).map_err(|e| e.in_utterance(&r.utt_id))?;
                    Ok(RefLine { utt_id: r.utt_id.clone(), tokens, text: None })
                })
                .collect::<Result<_>>()?
        }
        None => {
            let vocab = vocab(cli)?;
            let (lo, hi) = cfg.substitution;
            refs.iter()
                .map(|r| {
                    let mut rng = ChaCha8Rng::seed_from_u64(utterance_seed(seed, &r.utt_id));
                    let tokens = substitute_tokens(&r.tokens, lo, hi, vocab.len(), vocab.eos_id(), &mut rng)
                        .map_err(|e| e.in_utterance(&r.utt_id))?;
                    Ok(RefLine { utt_id: r.utt_id.clone(), tokens, text: None })
                })
                .collect::<Result<_>>()?
        }
    };
    io::write_refs(out, &noisy)?;
    Ok(())
}

fn dense_extract(cli: &Cli, lattices: &Path, k: usize, out: &Path) -> Result<()> {
    let vocab = vocab(cli)?;
    let lats = load_lattices(cli, lattices, Some(&vocab))?;
    let dense = lats
        .par_iter()
        .map(|lat| extract_dense_topk(lat, k, vocab.eos_id()).map_err(|e| e.in_utterance(lat.utt_id())))
        .collect::<dlm_decode::Result<Vec<_>>>()?;
    let mut w = io::create(out)?;
    DenseTopK::write_jsonl(&dense, &mut w)?;
    w.flush()?;
    Ok(())
}

fn prior_estimate(cli: &Cli, lattices: &[PathBuf], out: &Path) -> Result<()> {
    let vocab = match &cli.vocab {
        Some(_) => Some(vocab(cli)?),
        None => None,
    };
    let mut acc = PriorAccumulator::default();
    for path in lattices {
        for lat in load_lattices(cli, path, vocab.as_ref())? {
            acc.add(&lat).map_err(|e| e.in_utterance(lat.utt_id()))?;
        }
    }
    let prior = acc.finish()?;
    io::write_text(out, &prior.to_json()?)?;
    Ok(())
}

fn run_cmd(cli: &Cli, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = experiment_config(cli, config)?;
    let exp = run_experiment(&cfg)?;
    io::write_text(&out.join("config.json"), &cfg.to_json()?)?;
    io::write_text(&out.join("report.json"), &exp.report.to_json()?)?;
    io::write_text(&out.join("prior.json"), &exp.prior.to_json()?)?;
    io::write_text(&out.join("vocab.txt"), &exp.corpus.vocab.to_text())?;
    for (kind, lists) in &exp.outputs {
        io::write_nbest(&out.join(format!("{kind}.hyps.jsonl")), lists)?;
    }
    let r = &exp.report;
    say(&format!("channel WER {:.4} | dev {} | test {}", r.channel_wer, r.dev.utterances, r.test.utterances));
    for d in &r.decoders {
        let scales = d.scales.map(|s| format!("lambda={} prior_rel={}", s.lambda, s.prior_rel)).unwrap_or_default();
        say(&format!("{:<12} test WER {:.4} {scales}", d.decoder.name(), d.test.wer).trim_end());
        if let Some(s) = d.scales {
            let scales = Scales::relative(s.lambda, s.prior_rel)?;
            io::write_text(&out.join(format!("{}.scales.json", d.decoder)), &scales.to_json()?)?;
        }
    }
    Ok(())
}
