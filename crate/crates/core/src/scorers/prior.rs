use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::PosteriorLattice;
use crate::math;
use crate::vocab::Token;

/// Context-independent label prior estimated as the average posterior
/// ("softmax average") over all frames of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorModel {
    /// Average over frames, blank included (last entry).
    pub framewise: Vec<f64>,
    /// Framewise prior with blank removed and renormalized.
    pub labelwise: Vec<f64>,
}

impl PriorModel {
    pub fn from_framewise(framewise: Vec<f64>) -> Result<Self> {
        let (&blank, labels) = framewise
            .split_last()
            .ok_or_else(|| Error::InvalidMass("empty framewise prior".into()))?;
        let label_mass: f64 = labels.iter().sum();
        if !(label_mass > 0.0) {
            return Err(Error::InvalidMass(format!("no non-blank mass in prior (blank = {blank})")));
        }
        let labelwise = labels.iter().map(|p| p / label_mass).collect();
        Ok(Self { framewise, labelwise })
    }

    /// Streams lattices into a frame-weighted average.
    pub fn estimate<'a>(lattices: impl IntoIterator<Item = &'a PosteriorLattice>) -> Result<Self> {
        let mut acc = PriorAccumulator::default();
        for lat in lattices {
            acc.add(lat)?;
        }
        acc.finish()
    }

    pub fn label_logprob(&self, label: Token) -> f64 {
        math::ln(self.labelwise[label as usize])
    }

    /// `Σ_s log p_labelwise(a_s)`; the empty sequence scores 0.
    pub fn sequence_logprob(&self, seq: &[Token]) -> f64 {
        seq.iter().map(|&a| self.label_logprob(a)).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if model.labelwise.len() + 1 != model.framewise.len() {
            return Err(Error::InvalidMass("labelwise prior must have one entry fewer than framewise".into()));
        }
        Ok(model)
    }
}

/// Running sum of posterior rows. Accumulators over disjoint corpora can be
/// merged, which yields the same prior as one pass over the union.
#[derive(Debug, Clone, Default)]
pub struct PriorAccumulator {
    sums: Vec<f64>,
    frames: usize,
}

impl PriorAccumulator {
    pub fn add(&mut self, lat: &PosteriorLattice) -> Result<()> {
        if self.sums.is_empty() {
            self.sums = vec![0.0; lat.width()];
        } else if self.sums.len() != lat.width() {
            return Err(Error::WidthMismatch { expected: self.sums.len(), found: lat.width() });
        }
        for t in 0..lat.frames() {
            for (s, p) in self.sums.iter_mut().zip(lat.row_f64(t)) {
                *s += p;
            }
        }
        self.frames += lat.frames();
        Ok(())
    }

    pub fn merge(&mut self, other: &PriorAccumulator) -> Result<()> {
        if other.frames == 0 {
            return Ok(());
        }
        if self.frames == 0 {
            *self = other.clone();
            return Ok(());
        }
        if self.sums.len() != other.sums.len() {
            return Err(Error::WidthMismatch { expected: self.sums.len(), found: other.sums.len() });
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        self.frames += other.frames;
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn finish(&self) -> Result<PriorModel> {
        if self.frames == 0 {
            return Err(Error::EmptyCorpus);
        }
        let n = self.frames as f64;
        PriorModel::from_framewise(self.sums.iter().map(|s| s / n).collect())
    }
}
