//! Framewise CTC posteriors and their binary container format.
//!
//! On disk a lattice is the magic `CTCL`, then little-endian `u32` version,
//! `u32` frame count, `u32` row width, `u16` utterance-id length, the UTF-8
//! utterance id, and finally `T * W` little-endian `f32` values in row-major
//! order. Several records may be concatenated in one file.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::math;
use crate::vocab::{Token, Vocabulary};

pub const MAGIC: &[u8; 4] = b"CTCL";
pub const VERSION: u32 = 1;

/// Tolerance on per-row normalization.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// `T x (V+1)` matrix of per-frame label posteriors, blank in the last column.
///
/// Values are stored as `f32`. Score arithmetic reads them as `f64` divided
/// by their row sum, so rows are normalized at double precision even though
/// the stored single-precision rows are only normalized to about `1e-7`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorLattice {
    utt_id: String,
    width: usize,
    probs: Vec<f32>,
    row_sums: Vec<f64>,
}

impl PosteriorLattice {
    /// Builds a lattice from row-major probabilities. Only the shape is
    /// checked here; see [`PosteriorLattice::validate`] for the full checks.
    pub fn new(utt_id: impl Into<String>, width: usize, probs: Vec<f32>) -> Result<Self> {
        if width < 2 {
            return Err(Error::WidthMismatch { expected: 2, found: width });
        }
        if probs.is_empty() {
            return Err(Error::EmptyLattice);
        }
        if probs.len() % width != 0 {
            return Err(Error::TruncatedPayload {
                needed: probs.len().div_ceil(width) * width,
                available: probs.len(),
            });
        }
        let row_sums = probs
            .chunks_exact(width)
            .map(|row| {
                let sum: f64 = row.iter().map(|&p| f64::from(p)).sum();
                if sum > 0.0 && sum.is_finite() { sum } else { 1.0 }
            })
            .collect();
        Ok(Self { utt_id: utt_id.into(), width, probs, row_sums })
    }

    pub fn from_rows(utt_id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map(Vec::len).ok_or(Error::EmptyLattice)?;
        let mut probs = Vec::with_capacity(rows.len() * width);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::InvalidMass(format!("row {t} has width {} instead of {width}", row.len())));
            }
            probs.extend(row.iter().map(|&p| p as f32));
        }
        Self::new(utt_id, width, probs)
    }

    pub fn utt_id(&self) -> &str {
        &self.utt_id
    }

    pub fn set_utt_id(&mut self, utt_id: impl Into<String>) {
        self.utt_id = utt_id.into();
    }

    pub fn frames(&self) -> usize {
        self.probs.len() / self.width
    }

    /// Row width `V + 1`.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Vocabulary size implied by the row width.
    pub fn num_labels(&self) -> usize {
        self.width - 1
    }

    pub fn blank(&self) -> Token {
        (self.width - 1) as Token
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.probs[t * self.width..(t + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.probs.chunks_exact(self.width)
    }

    /// Row-normalized probability at double precision.
    pub fn prob(&self, t: usize, label: Token) -> f64 {
        f64::from(self.probs[t * self.width + label as usize]) / self.row_sums[t]
    }

    /// Row `t` as row-normalized `f64` values.
    pub fn row_f64(&self, t: usize) -> Vec<f64> {
        self.row(t).iter().map(|&p| f64::from(p) / self.row_sums[t]).collect()
    }

    pub fn log_prob(&self, t: usize, label: Token) -> f64 {
        math::ln(self.prob(t, label))
    }

    /// Framewise argmax over all columns including blank (lowest index on ties).
    pub fn argmax(&self, t: usize) -> Token {
        math::argmax(self.row(t).iter().map(|&p| f64::from(p))).unwrap_or(0) as Token
    }

    pub fn raw(&self) -> &[f32] {
        &self.probs
    }

    /// Checks range and normalization of every row without a vocabulary.
    pub fn validate_rows(&self) -> Result<()> {
        for (t, row) in self.rows().enumerate() {
            let mut sum = 0.0f64;
            for (y, &p) in row.iter().enumerate() {
                let p = f64::from(p);
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::NegativeMass { frame: t, label: y, value: p });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::RowNotNormalized { frame: t, sum });
            }
        }
        Ok(())
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        if self.width != vocab.len() + 1 {
            return Err(Error::WidthMismatch { expected: vocab.len() + 1, found: self.width });
        }
        self.validate_rows()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let id = self.utt_id.as_bytes();
        let id_len = u16::try_from(id.len())
            .map_err(|_| Error::InvalidConfig(format!("utterance id longer than {} bytes", u16::MAX)))?;
        let mut buf = Vec::with_capacity(18 + id.len() + self.probs.len() * 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.frames() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        buf.extend_from_slice(&id_len.to_le_bytes());
        buf.extend_from_slice(id);
        for p in &self.probs {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Parses one record from the front of `bytes`, returning it together
    /// with the number of bytes consumed.
    pub fn parse_prefix(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let frames = cur.u32()? as usize;
        let width = cur.u32()? as usize;
        let id_len = cur.u16()? as usize;
        let utt_id = String::from_utf8(cur.take(id_len)?.to_vec())
            .map_err(|e| Error::InvalidConfig(format!("utterance id is not UTF-8: {e}")))?;
        let payload = cur.take(frames * width * 4)?;
        let probs = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((Self::new(utt_id, width, probs)?, cur.pos))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::parse_prefix(bytes).map(|(lat, _)| lat)
    }

    /// Reads all concatenated records from `r`.
    pub fn read_all(mut r: impl Read) -> Result<Vec<Self>> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < bytes.len() {
            let (lat, used) = Self::parse_prefix(&bytes[pos..])?;
            out.push(lat);
            pos += used;
        }
        Ok(out)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(Error::TruncatedPayload { needed: n, available });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
}
