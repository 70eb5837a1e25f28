use dlm_decode::augment::{extract_dense_topk, DenseTopK};
use dlm_decode::ctc::forward_logprob;
use dlm_decode::decoders::{rescore_with, DecodeSettings, DecoderKind, Models};
use dlm_decode::experiment::{simulate, train_models, Corpus, CorpusConfig, ExperimentConfig};
use dlm_decode::scorers::PriorModel;
use dlm_decode::search::BeamConfig;
use dlm_decode::{Channel, NBestList, PosteriorLattice, Scales, Vocabulary};

fn small() -> ExperimentConfig {
    ExperimentConfig {
        corpus: CorpusConfig::Markov {
            words: 20,
            successors: 3,
            train_sentences: 300,
            eval_sentences: 30,
            min_words: 2,
            max_words: 5,
            stop_prob: 0.2,
        },
        beam_size: 4,
        asr_nbest: 4,
        dlm_nbest: 4,
        ..ExperimentConfig::default()
    }
}

struct Setup {
    corpus: Corpus,
    lattices: Vec<PosteriorLattice>,
    models: Models,
}

fn setup() -> Setup {
    let cfg = small();
    let corpus = Corpus::build(&cfg).unwrap();
    let channel = cfg.channel.build(cfg.seed, &corpus.vocab, &corpus.word_tokens()).unwrap();
    let (dev, test) = simulate(&cfg, &corpus, &channel).unwrap();
    let lattices: Vec<PosteriorLattice> = dev.into_iter().chain(test).map(|u| u.lattice).collect();
    let prior = PriorModel::estimate(&lattices).unwrap();
    let models = train_models(&cfg, &corpus, &channel, prior).unwrap();
    Setup { corpus, lattices, models }
}

#[test]
fn lattice_file_round_trip() {
    let s = setup();
    let mut bytes = Vec::new();
    for lat in &s.lattices {
        lat.write_to(&mut bytes).unwrap();
    }
    let back = PosteriorLattice::read_all(bytes.as_slice()).unwrap();
    assert_eq!(back, s.lattices);
    for lat in &back {
        lat.validate(&s.corpus.vocab).unwrap();
    }
}

#[test]
fn vocabulary_file_round_trip() {
    let s = setup();
    let back = Vocabulary::parse(&s.corpus.vocab.to_text()).unwrap();
    assert_eq!(back, s.corpus.vocab);
    assert_eq!(back.eos_id() as usize, back.len() - 1);
}

#[test]
fn every_decoder_produces_valid_output() {
    let s = setup();
    let settings = DecodeSettings { beam: BeamConfig::new(4, 1).unwrap(), scales: Scales::relative(1.0, 0.3).unwrap(), asr_nbest: 4, dlm_nbest: 4 };
    for kind in DecoderKind::ALL {
        for lat in s.lattices.iter().take(8) {
            let hyp = s.models.decode(kind, lat, &settings).unwrap();
            s.corpus.vocab.check_sequence(&hyp.tokens).unwrap();
            assert!(!hyp.tokens.contains(&s.corpus.vocab.eos_id()), "{kind} emitted eos");
            s.corpus.words(&hyp.tokens).unwrap();
        }
    }
}

#[test]
fn candidate_lists_rescore_to_the_decision() {
    let s = setup();
    let settings = DecodeSettings { beam: BeamConfig::new(4, 1).unwrap(), scales: Scales::relative(0.8, 0.5).unwrap(), asr_nbest: 4, dlm_nbest: 4 };
    for lat in s.lattices.iter().take(8) {
        for (kind, channel) in [(DecoderKind::LmRescore, Channel::Lm), (DecoderKind::Dsr, Channel::Dlm)] {
            let list = s.models.candidates(kind, lat, &settings).unwrap();
            let picked = rescore_with(&list.hyps, channel, settings.scales).unwrap();
            let decided = s.models.decode(kind, lat, &settings).unwrap();
            assert_eq!(picked.tokens, decided.tokens, "{kind}");
        }
        let list = s.models.candidates(DecoderKind::Dsr, lat, &settings).unwrap();
        for h in &list.hyps {
            let (a, b) = (h.score(Channel::Asr).unwrap(), forward_logprob(lat, &h.tokens));
            assert!(a == b || (a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn nbest_jsonl_round_trip() {
    let s = setup();
    let settings = DecodeSettings { asr_nbest: 4, dlm_nbest: 4, ..DecodeSettings::default() };
    let lists: Vec<NBestList> =
        s.lattices.iter().take(5).map(|l| s.models.candidates(DecoderKind::Dsr, l, &settings).unwrap()).collect();
    let mut buf = Vec::new();
    NBestList::write_jsonl(&lists, &mut buf).unwrap();
    assert_eq!(NBestList::read_jsonl(buf.as_slice()).unwrap(), lists);
}

#[test]
fn dense_inputs_round_trip() {
    let s = setup();
    let eos = s.corpus.vocab.eos_id();
    let dense: Vec<DenseTopK> = s.lattices.iter().map(|l| extract_dense_topk(l, 3, eos).unwrap()).collect();
    let mut buf = Vec::new();
    DenseTopK::write_jsonl(&dense, &mut buf).unwrap();
    let back = DenseTopK::read_jsonl(buf.as_slice()).unwrap();
    assert_eq!(back.len(), dense.len());
    for (a, b) in back.iter().zip(&dense) {
        assert_eq!(a.top_path(), b.top_path());
    }
}

#[test]
fn missing_models_are_reported() {
    let s = setup();
    let none = Models { prior: s.models.prior.clone(), ..Models::default() };
    let lat = &s.lattices[0];
    for kind in [DecoderKind::DlmGreedy, DecoderKind::LmRescore, DecoderKind::Dsr, DecoderKind::DlmSum] {
        assert!(none.decode(kind, lat, &DecodeSettings::default()).is_err(), "{kind}");
    }
    assert!(none.candidates(DecoderKind::AsrGreedy, lat, &DecodeSettings::default()).is_err());
}
