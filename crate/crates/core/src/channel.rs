//! Synthetic acoustic channel: turns a reference label sequence into a
//! CTC posterior lattice with confusable, noisy frames.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::PosteriorLattice;
use crate::vocab::Token;

/// Row-stochastic label confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    rows: Vec<Vec<f64>>,
}

impl Confusion {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let v = rows.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != v {
                return Err(Error::WidthMismatch { expected: v, found: row.len() });
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidMass(format!("confusion row {i} sums to {sum}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn identity(v: usize) -> Self {
        let rows = (0..v).map(|i| (0..v).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        Self { rows }
    }

    /// Each confusable label keeps `1 − off_diagonal` of its mass and splits
    /// the rest evenly over `neighbors` other confusable labels chosen at
    /// random. Labels outside `confusable` map to themselves.
    pub fn neighbors(v: usize, confusable: &[Token], off_diagonal: f64, neighbors: usize, rng: &mut impl Rng) -> Result<Self> {
        if !(0.0..=1.0).contains(&off_diagonal) {
            return Err(Error::InvalidConfig(format!("off-diagonal mass {off_diagonal} outside [0, 1]")));
        }
        let mut rows = Self::identity(v).rows;
        let k = neighbors.min(confusable.len().saturating_sub(1));
        if k == 0 || off_diagonal == 0.0 {
            return Ok(Self { rows });
        }
        for &a in confusable {
            let others: Vec<Token> = confusable.iter().copied().filter(|&b| b != a).collect();
            let row = &mut rows[a as usize];
            row[a as usize] = 1.0 - off_diagonal;
            for &b in others.choose_multiple(rng, k) {
                row[b as usize] += off_diagonal / k as f64;
            }
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, label: Token) -> &[f64] {
        &self.rows[label as usize]
    }

    /// Labels other than `label` it may be confused with.
    pub fn confusable_with(&self, label: Token) -> Vec<Token> {
        self.row(label)
            .iter()
            .enumerate()
            .filter(|&(j, &p)| j != label as usize && p > 0.0)
            .map(|(j, _)| j as Token)
            .collect()
    }

    fn sample(&self, label: Token, rng: &mut impl Rng) -> Token {
        let mut u: f64 = rng.random();
        let row = self.row(label);
        for (j, &p) in row.iter().enumerate() {
            if u < p {
                return j as Token;
            }
            u -= p;
        }
        label
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Mean and standard deviation of frames per token, spike included
    /// (at least one).
    pub mean_frames: f64,
    pub std_frames: f64,
    /// Probability of blank frames in each gap between tokens; a gap
    /// between two equal tokens always gets one.
    pub blank_prob: f64,
    /// Dirichlet concentration of frame rows around their base shape;
    /// infinite means noiseless rows.
    pub peakiness: f64,
    /// Weight range of the runner-up label relative to the emitted label.
    pub runner_up: (f64, f64),
    pub confusion: Confusion,
    /// Labels the channel never emits, such as the end token.
    #[serde(default)]
    pub silent: Vec<Token>,
}

/// Total mass spread evenly over a row before noise, so no posterior is zero.
const FLOOR_MASS: f64 = 0.02;

impl ChannelConfig {
    pub fn noiseless(v: usize) -> Self {
        Self {
            mean_frames: 2.0,
            std_frames: 0.0,
            blank_prob: 1.0,
            peakiness: f64::INFINITY,
            runner_up: (0.0, 0.0),
            confusion: Confusion::identity(v),
            silent: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_frames >= 1.0 && self.std_frames >= 0.0 && self.mean_frames.is_finite()) {
            return Err(Error::InvalidConfig("durations need mean >= 1 and std >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.blank_prob) {
            return Err(Error::InvalidConfig(format!("blank probability {} outside [0, 1]", self.blank_prob)));
        }
        if !(self.peakiness > 0.0) {
            return Err(Error::InvalidConfig(format!("peakiness must be > 0, got {}", self.peakiness)));
        }
        let (lo, hi) = self.runner_up;
        if !(0.0 <= lo && lo <= hi && hi < 1.0) {
            return Err(Error::InvalidConfig(format!("runner-up range ({lo}, {hi}) must lie in [0, 1)")));
        }
        if let Some(&bad) = self.silent.iter().find(|&&s| s as usize >= self.confusion.len()) {
            return Err(Error::UnknownToken(bad));
        }
        Ok(())
    }

    fn base_row(&self) -> Vec<f64> {
        let width = self.confusion.len() + 1;
        let mut base = vec![FLOOR_MASS / width as f64; width];
        for &s in &self.silent {
            base[s as usize] = 0.0;
        }
        base
    }
}

fn noisy_row(base: &[f64], peakiness: f64, rng: &mut impl Rng) -> Vec<f64> {
    let total: f64 = base.iter().sum();
    if peakiness.is_infinite() {
        return base.iter().map(|b| b / total).collect();
    }
    let draws: Vec<f64> = base
        .iter()
        .map(|&b| if b > 0.0 { Gamma::new(peakiness * b / total, 1.0).expect("positive shape").sample(rng) } else { 0.0 })
        .collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 {
        draws.iter().map(|d| d / sum).collect()
    } else {
        base.iter().map(|b| b / total).collect()
    }
}

/// Emits, for each reference token, a spike frame peaked on a label drawn
/// from the token's confusion row, followed by blank frames up to a sampled
/// duration. The spike also carries a runner-up label: the true token when
/// it was confused, otherwise a random confusable label. Extra blank frames
/// separate tokens at random, and always separate equal neighbors.
pub fn synth_lattice(
    utt_id: &str,
    reference: &[Token],
    ch: &ChannelConfig,
    rng: &mut impl Rng,
) -> Result<PosteriorLattice> {
    ch.validate()?;
    let v = ch.confusion.len();
    if let Some(&bad) = reference.iter().find(|&&a| a as usize >= v) {
        return Err(Error::UnknownToken(bad));
    }
    let blank = v;
    if let Some(&bad) = reference.iter().find(|a| ch.silent.contains(a)) {
        return Err(Error::InvalidConfig(format!("reference contains the silent label {bad}")));
    }
    let duration = Normal::new(ch.mean_frames, ch.std_frames).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let blank_row = |rng: &mut _, neighbor: Option<Token>| {
        let mut base = ch.base_row();
        base[blank] = 1.0;
        if let Some(n) = neighbor {
            base[n as usize] += 0.1;
        }
        noisy_row(&base, ch.peakiness, rng)
    };

    for (i, &a) in reference.iter().enumerate() {
        let forced = i > 0 && reference[i - 1] == a;
        if forced || (i > 0 && rng.random::<f64>() < ch.blank_prob) {
            let r = blank_row(rng, None);
            rows.push(r);
        }
        let emitted = ch.confusion.sample(a, rng);
        let runner = if emitted != a {
            Some(a)
        } else {
            ch.confusion.confusable_with(a).choose(rng).copied()
        };
        let mut spike = ch.base_row();
        spike[emitted as usize] = 1.0;
        let (lo, hi) = ch.runner_up;
        if let Some(r) = runner {
            if hi > 0.0 {
                spike[r as usize] += if lo < hi { rng.random_range(lo..hi) } else { lo };
            }
        }
        rows.push(noisy_row(&spike, ch.peakiness, rng));
        let frames = (duration.sample(rng).round() as i64).max(1) as usize;
        for _ in 1..frames {
            let r = blank_row(rng, Some(emitted));
            rows.push(r);
        }
    }
    if rows.is_empty() || rng.random::<f64>() < ch.blank_prob {
        let r = blank_row(rng, None);
        rows.push(r);
    }
    PosteriorLattice::from_rows(utt_id, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::greedy_collapse;
    use crate::metrics::corpus_wer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_ref(rng: &mut impl Rng, v: usize, len: usize) -> Vec<Token> {
        (0..len).map(|_| rng.random_range(0..v as Token)).collect()
    }

    #[test]
    fn noiseless_channel_is_transparent() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ch = ChannelConfig::noiseless(6);
        for _ in 0..100 {
            let len = rng.random_range(0..12);
            let r = random_ref(&mut rng, 6, len);
            let lat = synth_lattice("u", &r, &ch, &mut rng).unwrap();
            lat.validate_rows().unwrap();
            assert_eq!(greedy_collapse(&lat), r);
        }
    }

    #[test]
    fn same_seed_same_lattice() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let confusion = Confusion::neighbors(8, &(0..8).collect::<Vec<_>>(), 0.3, 2, &mut rng).unwrap();
        let ch = ChannelConfig { peakiness: 20.0, runner_up: (0.2, 0.6), std_frames: 1.0, mean_frames: 3.0, blank_prob: 0.5, confusion, silent: vec![] };
        let r = vec![1, 2, 2, 5];
        let a = synth_lattice("u", &r, &ch, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = synth_lattice("u", &r, &ch, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a.raw().iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.raw().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    fn greedy_wer(off: f64, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = 20;
        let confusion = Confusion::neighbors(v, &(0..v as Token).collect::<Vec<_>>(), off, 3, &mut rng).unwrap();
        let ch = ChannelConfig { peakiness: 30.0, runner_up: (0.2, 0.6), std_frames: 1.0, mean_frames: 3.0, blank_prob: 0.5, confusion, silent: vec![] };
        let refs: Vec<Vec<Token>> = (0..1000).map(|_| random_ref(&mut rng, v, 8)).collect();
        let hyps: Vec<Vec<Token>> = refs.iter().map(|r| greedy_collapse(&synth_lattice("u", r, &ch, &mut rng).unwrap())).collect();
        corpus_wer(refs.iter().zip(&hyps).map(|(r, h)| (r.as_slice(), h.as_slice()))).unwrap()
    }

    #[test]
    fn half_confusion_gives_moderate_wer() {
        let wer = greedy_wer(0.5, 2);
        assert!(wer > 0.2 && wer < 0.8, "{wer}");
    }

    #[test]
    fn wer_grows_with_confusion() {
        let rates: Vec<f64> = [0.0, 0.2, 0.5].iter().map(|&m| greedy_wer(m, 3)).collect();
        assert!(rates.windows(2).all(|w| w[0] < w[1]), "{rates:?}");
    }

    #[test]
    fn confusion_rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = Confusion::neighbors(10, &[0, 1, 2, 3, 4], 0.4, 2, &mut rng).unwrap();
        Confusion::new(c.rows.clone()).unwrap();
        assert_eq!(c.row(7)[7], 1.0);
        assert_eq!(c.confusable_with(0).len(), 2);
    }
}
