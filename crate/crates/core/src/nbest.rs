//! Scored hypotheses, n-best lists and fusion scales.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::vocab::Token;

/// Score channels carried by a hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Asr,
    Dlm,
    Lm,
    Prior,
    Combined,
}

/// Natural-log scores per channel. `-inf` is written as JSON `null`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChannelScores(BTreeMap<Channel, f64>);

impl ChannelScores {
    pub fn get(&self, ch: Channel) -> Option<f64> {
        self.0.get(&ch).copied()
    }

    pub fn set(&mut self, ch: Channel, value: f64) {
        self.0.insert(ch, value);
    }

    pub fn with(mut self, ch: Channel, value: f64) -> Self {
        self.set(ch, value);
        self
    }

    pub fn iter(&self) -> impl Iterator<Item = (Channel, f64)> + '_ {
        self.0.iter().map(|(&c, &v)| (c, v))
    }

    /// Keeps the per-channel maximum of `self` and `other`.
    pub fn merge_max(&mut self, other: &ChannelScores) {
        for (ch, v) in other.iter() {
            let slot = self.0.entry(ch).or_insert(v);
            if v > *slot {
                *slot = v;
            }
        }
    }
}

impl Serialize for ChannelScores {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let finite: BTreeMap<Channel, Option<f64>> =
            self.0.iter().map(|(&c, &v)| (c, if v == f64::NEG_INFINITY { None } else { Some(v) })).collect();
        finite.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ChannelScores {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = BTreeMap::<Channel, Option<f64>>::deserialize(d)?;
        Ok(Self(raw.into_iter().map(|(c, v)| (c, v.unwrap_or(f64::NEG_INFINITY))).collect()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHyp {
    pub tokens: Vec<Token>,
    pub scores: ChannelScores,
}

impl ScoredHyp {
    pub fn new(tokens: Vec<Token>) -> Self {
        Self { tokens, scores: ChannelScores::default() }
    }

    pub fn score(&self, ch: Channel) -> Option<f64> {
        self.scores.get(ch)
    }

    /// Combined score if present, otherwise the acoustic score.
    pub fn sort_key(&self) -> f64 {
        self.score(Channel::Combined)
            .or_else(|| self.score(Channel::Asr))
            .unwrap_or(f64::NEG_INFINITY)
    }
}

/// Orders by descending score, then lexicographic token order.
pub fn rank_order(a_score: f64, a: &[Token], b_score: f64, b: &[Token]) -> Ordering {
    b_score.partial_cmp(&a_score).unwrap_or(Ordering::Equal).then_with(|| a.cmp(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestList {
    pub utt_id: String,
    pub hyps: Vec<ScoredHyp>,
}

impl NBestList {
    pub fn new(utt_id: impl Into<String>, hyps: Vec<ScoredHyp>) -> Self {
        let mut list = Self { utt_id: utt_id.into(), hyps };
        list.sort();
        list
    }

    pub fn sort(&mut self) {
        self.hyps.sort_by(|a, b| rank_order(a.sort_key(), &a.tokens, b.sort_key(), &b.tokens));
    }

    pub fn best(&self) -> Option<&ScoredHyp> {
        self.hyps.first()
    }

    pub fn len(&self) -> usize {
        self.hyps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hyps.is_empty()
    }

    pub fn truncate(&mut self, n: usize) {
        self.hyps.truncate(n);
    }

    /// Merges entries with identical token sequences, keeping the maximum of
    /// each score channel, and re-sorts.
    pub fn dedup(self) -> Self {
        let mut order: Vec<Vec<Token>> = Vec::new();
        let mut merged: HashMap<Vec<Token>, ChannelScores> = HashMap::new();
        for hyp in self.hyps {
            match merged.get_mut(&hyp.tokens) {
                Some(scores) => scores.merge_max(&hyp.scores),
                None => {
                    order.push(hyp.tokens.clone());
                    merged.insert(hyp.tokens, hyp.scores);
                }
            }
        }
        let hyps = order
            .into_iter()
            .map(|tokens| {
                let scores = merged.remove(&tokens).unwrap_or_default();
                ScoredHyp { tokens, scores }
            })
            .collect();
        Self::new(self.utt_id, hyps)
    }

    pub fn write_jsonl<'a>(lists: impl IntoIterator<Item = &'a NBestList>, mut w: impl Write) -> Result<()> {
        for list in lists {
            serde_json::to_writer(&mut w, list)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Vec<NBestList>> {
        let mut out = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line)?);
        }
        Ok(out)
    }
}

/// Fusion scales for the external model (LM or DLM) and the subtracted prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scales {
    pub model: f64,
    pub prior: f64,
}

#[derive(Serialize, Deserialize)]
struct ScalesFile {
    lambda: f64,
    prior_rel: f64,
}

impl Scales {
    pub const ZERO: Scales = Scales { model: 0.0, prior: 0.0 };

    pub fn new(model: f64, prior: f64) -> Result<Self> {
        if !(model >= 0.0 && prior >= 0.0 && model.is_finite() && prior.is_finite()) {
            return Err(Error::InvalidConfig(format!("scales must be finite and >= 0, got ({model}, {prior})")));
        }
        Ok(Self { model, prior })
    }

    /// Builds scales from the model scale and a prior scale relative to it.
    pub fn relative(model: f64, prior_rel: f64) -> Result<Self> {
        Self::new(model, model * prior_rel)
    }

    pub fn prior_rel(&self) -> f64 {
        if self.model > 0.0 {
            self.prior / self.model
        } else {
            0.0
        }
    }

    /// `asr + model * model_score - prior * prior_score`.
    pub fn combine(&self, asr: f64, model_score: f64, prior_score: f64) -> f64 {
        asr + scaled(self.model, model_score) - scaled(self.prior, prior_score)
    }

    pub fn to_json(&self) -> Result<String> {
        if self.model == 0.0 && self.prior != 0.0 {
            return Err(Error::InvalidConfig("a relative prior scale needs a nonzero model scale".into()));
        }
        Ok(serde_json::to_string(&ScalesFile { lambda: self.model, prior_rel: self.prior_rel() })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ScalesFile = serde_json::from_str(text)?;
        Self::relative(f.lambda, f.prior_rel)
    }
}

/// `scale * score` with `0 * -inf = 0`, so a disabled channel cannot veto.
#[inline]
pub fn scaled(scale: f64, score: f64) -> f64 {
    if scale == 0.0 {
        0.0
    } else {
        scale * score
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hyp(tokens: &[Token], asr: f64) -> ScoredHyp {
        ScoredHyp { tokens: tokens.to_vec(), scores: ChannelScores::default().with(Channel::Asr, asr) }
    }

    #[test]
    fn dedup_keeps_maximum() {
        let list = NBestList::new("u", vec![hyp(&[0, 1], -2.0), hyp(&[0, 1], -1.0)]).dedup();
        assert_eq!(list.len(), 1);
        assert_eq!(list.hyps[0].score(Channel::Asr), Some(-1.0));
    }

    #[test]
    fn dedup_unique_list_unchanged_and_idempotent() {
        let list = NBestList::new("u", vec![hyp(&[0], -1.0), hyp(&[1], -3.0)]);
        let once = list.clone().dedup();
        assert_eq!(once, list);
        assert_eq!(once.clone().dedup(), once);
    }

    #[test]
    fn neg_infinity_round_trips_through_json() {
        let list = NBestList::new("u", vec![hyp(&[0], f64::NEG_INFINITY)]);
        let mut buf = Vec::new();
        NBestList::write_jsonl([&list], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains(r#""scores":{"asr":null}"#), "{text}");
        let back = NBestList::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, vec![list]);
    }

    #[test]
    fn scales_file_uses_relative_prior() {
        let s = Scales::new(0.8, 0.4).unwrap();
        let json = s.to_json().unwrap();
        assert_eq!(json, r#"{"lambda":0.8,"prior_rel":0.5}"#);
        assert_eq!(Scales::from_json(&json).unwrap(), s);
        assert!(Scales::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn zero_scale_ignores_infinite_scores() {
        assert_eq!(Scales::ZERO.combine(-1.0, f64::NEG_INFINITY, f64::NEG_INFINITY), -1.0);
    }

    proptest! {
        #[test]
        fn dedup_leaves_unique_sequences_with_max_scores(
            entries in proptest::collection::vec((proptest::collection::vec(0u32..3, 0..3), -10.0f64..0.0), 0..12)
        ) {
            let hyps: Vec<_> = entries.iter().map(|(t, s)| hyp(t, *s)).collect();
            let list = NBestList::new("u", hyps).dedup();
            let mut seen = std::collections::HashSet::new();
            for h in &list.hyps {
                prop_assert!(seen.insert(h.tokens.clone()));
                let max = entries.iter().filter(|(t, _)| *t == h.tokens).map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(h.score(Channel::Asr), Some(max));
            }
            prop_assert_eq!(seen.len(), entries.iter().map(|(t, _)| t.clone()).collect::<std::collections::HashSet<_>>().len());
            for w in list.hyps.windows(2) {
                prop_assert!(w[0].sort_key() >= w[1].sort_key());
            }
        }

        #[test]
        fn nbest_json_round_trip(
            entries in proptest::collection::vec((proptest::collection::vec(0u32..50, 0..6), -100.0f64..0.0), 1..6)
        ) {
            let list = NBestList::new("utt", entries.iter().map(|(t, s)| hyp(t, *s)).collect()).dedup();
            let mut buf = Vec::new();
            NBestList::write_jsonl([&list], &mut buf).unwrap();
            prop_assert_eq!(NBestList::read_jsonl(&buf[..]).unwrap(), vec![list]);
        }
    }
}
