use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FREQ_MASKS: (usize, usize) = (2, 5);
const FREQ_MASK_MAX: usize = 16;
const TIME_MASKS_MIN: usize = 2;
const TIME_MASKS_PER_FRAMES: usize = 25;
const TIME_MASK_MAX: usize = 20;

/// Time × channel feature matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub utt_id: String,
    frames: usize,
    dims: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(utt_id: impl Into<String>, frames: usize, dims: usize, data: Vec<f32>) -> Result<Self> {
        if frames == 0 || dims == 0 {
            return Err(Error::InvalidConfig("feature matrix needs at least one frame and one channel".into()));
        }
        if data.len() != frames * dims {
            return Err(Error::WidthMismatch { expected: frames * dims, found: data.len() });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMass("non-finite feature value".into()));
        }
        Ok(Self { utt_id: utt_id.into(), frames, dims, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn get(&self, t: usize, f: usize) -> f32 {
        self.data[t * self.dims + f]
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dims..(t + 1) * self.dims]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecAugmentConfig {
    pub time: bool,
    pub freq: bool,
}

/// Zeroes 2 to 5 channel bands of width up to 16 and 2 to `T / 25` frame
/// spans of width up to 20. Masks may overlap. No time warping.
pub fn spec_augment(feat: &FeatureMatrix, cfg: SpecAugmentConfig, rng: &mut impl Rng) -> FeatureMatrix {
    let mut out = feat.clone();
    if cfg.freq {
        let count = rng.random_range(FREQ_MASKS.0..=FREQ_MASKS.1);
        for _ in 0..count {
            let (start, width) = draw_mask(out.dims, FREQ_MASK_MAX, rng);
            for t in 0..out.frames {
                out.data[t * out.dims + start..t * out.dims + start + width].fill(0.0);
            }
        }
    }
    if cfg.time {
        let max_count = TIME_MASKS_MIN.max(out.frames / TIME_MASKS_PER_FRAMES);
        let count = rng.random_range(TIME_MASKS_MIN..=max_count);
        for _ in 0..count {
            let (start, width) = draw_mask(out.frames, TIME_MASK_MAX, rng);
            out.data[start * out.dims..(start + width) * out.dims].fill(0.0);
        }
    }
    out
}

fn draw_mask(extent: usize, max_width: usize, rng: &mut impl Rng) -> (usize, usize) {
    let width = rng.random_range(0..=max_width).min(extent);
    let start = rng.random_range(0..=extent - width);
    (start, width)
}

/// Bounded first-in first-out store of recent feature matrices, read as one
/// concatenated stream of frames.
#[derive(Debug, Clone)]
pub struct MixupBuffer {
    capacity: usize,
    items: VecDeque<FeatureMatrix>,
}

impl MixupBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), items: VecDeque::new() }
    }

    pub fn push(&mut self, feat: FeatureMatrix) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(feat);
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn total_frames(&self) -> usize {
        self.items.iter().map(|m| m.frames).sum()
    }

    /// `frames` rows starting at `offset` of the concatenation, zero-padded
    /// past its end.
    fn window(&self, offset: usize, frames: usize, dims: usize) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(frames * dims);
        let mut skip = offset;
        for item in &self.items {
            if item.dims != dims {
                return Err(Error::WidthMismatch { expected: dims, found: item.dims });
            }
            if skip >= item.frames {
                skip -= item.frames;
                continue;
            }
            let take = (item.frames - skip).min(frames - out.len() / dims);
            out.extend_from_slice(&item.data[skip * dims..(skip + take) * dims]);
            skip = 0;
            if out.len() == frames * dims {
                break;
            }
        }
        out.resize(frames * dims, 0.0);
        Ok(out)
    }
}

/// Mixes `feat` with one or two random windows of the buffer:
/// `(1 − λ)·x + λ·Σ_j α_j·w_j` with `λ ~ U(0, lambda_max)` and uniform
/// weights `α` normalized to one. An empty buffer leaves `feat` unchanged.
pub fn mixup(feat: &FeatureMatrix, buffer: &MixupBuffer, lambda_max: f64, rng: &mut impl Rng) -> Result<FeatureMatrix> {
    if !(0.0..=1.0).contains(&lambda_max) {
        return Err(Error::InvalidConfig(format!("mixup lambda_max {lambda_max} outside [0, 1]")));
    }
    if buffer.is_empty() || lambda_max == 0.0 {
        return Ok(feat.clone());
    }
    let lambda = rng.random_range(0.0..lambda_max);
    let n = rng.random_range(1..=2);
    let total = buffer.total_frames();
    let mut windows = Vec::with_capacity(n);
    for _ in 0..n {
        let offset = rng.random_range(0..total);
        windows.push(buffer.window(offset, feat.frames, feat.dims)?);
    }
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let sum: f64 = raw.iter().sum();
    let alphas: Vec<f64> = if sum > 0.0 { raw.iter().map(|a| a / sum).collect() } else { vec![1.0 / n as f64; n] };
    mix_windows(feat, &windows, &alphas, lambda)
}

/// `(1 − λ)·x + λ·Σ_j α_j·w_j` for explicit windows and weights.
pub fn mix_windows(feat: &FeatureMatrix, windows: &[Vec<f32>], alphas: &[f64], lambda: f64) -> Result<FeatureMatrix> {
    if windows.len() != alphas.len() {
        return Err(Error::InvalidConfig("one weight per mixup window".into()));
    }
    if let Some(w) = windows.iter().find(|w| w.len() != feat.data.len()) {
        return Err(Error::WidthMismatch { expected: feat.data.len(), found: w.len() });
    }
    let data = feat
        .data
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let noise: f64 = windows.iter().zip(alphas).map(|(w, a)| a * f64::from(w[i])).sum();
            ((1.0 - lambda) * f64::from(x) + lambda * noise) as f32
        })
        .collect();
    Ok(FeatureMatrix { data, ..feat.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_feat(rng: &mut impl Rng, frames: usize, dims: usize) -> FeatureMatrix {
        let data = (0..frames * dims).map(|_| rng.random_range(0.5f32..2.0)).collect();
        FeatureMatrix::new("f", frames, dims, data).unwrap()
    }

    #[test]
    fn spec_augment_off_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let feat = random_feat(&mut rng, 40, 20);
        assert_eq!(spec_augment(&feat, SpecAugmentConfig::default(), &mut rng), feat);
    }

    #[test]
    fn masked_cells_are_zero_and_the_rest_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let feat = random_feat(&mut rng, 120, 80);
            let out = spec_augment(&feat, SpecAugmentConfig { time: true, freq: true }, &mut rng);
            assert_eq!((out.frames(), out.dims()), (feat.frames(), feat.dims()));
            for (a, b) in feat.data().iter().zip(out.data()) {
                assert!(*b == 0.0 || a.to_bits() == b.to_bits());
            }
            let zero_cols = (0..80).filter(|&f| (0..120).all(|t| out.get(t, f) == 0.0)).count();
            assert!(zero_cols <= 5 * 16);
        }
    }

    #[test]
    fn narrow_inputs_are_handled() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let feat = random_feat(&mut rng, 3, 4);
        let out = spec_augment(&feat, SpecAugmentConfig { time: true, freq: true }, &mut rng);
        assert_eq!(out.data().len(), 12);
    }

    #[test]
    fn mixup_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let feat = random_feat(&mut rng, 10, 3);
        let mut buffer = MixupBuffer::new(4);
        assert_eq!(mixup(&feat, &buffer, 0.5, &mut rng).unwrap(), feat);
        buffer.push(random_feat(&mut rng, 7, 3));
        assert_eq!(mixup(&feat, &buffer, 0.0, &mut rng).unwrap(), feat);

        let w = random_feat(&mut rng, 10, 3);
        let out = mix_windows(&feat, &[w.data().to_vec()], &[1.0], 1.0).unwrap();
        assert_eq!(out.data(), w.data());
    }

    #[test]
    fn mixup_is_a_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut buffer = MixupBuffer::new(3);
        for _ in 0..5 {
            buffer.push(random_feat(&mut rng, 8, 2));
        }
        assert_eq!(buffer.total_frames(), 24);
        for _ in 0..100 {
            let feat = random_feat(&mut rng, 10, 2);
            let out = mixup(&feat, &buffer, 1.0, &mut rng).unwrap();
            // windows are drawn from [0.5, 2] or zero padding
            for (x, y) in feat.data().iter().zip(out.data()) {
                assert!(*y >= x.min(0.0) - 1e-6 && *y <= x.max(2.0) + 1e-6);
            }
        }
    }

    #[test]
    fn window_pads_with_zeros() {
        let mut buffer = MixupBuffer::new(2);
        buffer.push(FeatureMatrix::new("a", 2, 1, vec![1.0, 2.0]).unwrap());
        buffer.push(FeatureMatrix::new("b", 1, 1, vec![3.0]).unwrap());
        assert_eq!(buffer.window(1, 4, 1).unwrap(), vec![2.0, 3.0, 0.0, 0.0]);
        assert!(buffer.window(0, 2, 2).is_err());
    }

    #[test]
    fn reproducible_under_seed() {
        let feat = random_feat(&mut ChaCha8Rng::seed_from_u64(5), 60, 30);
        let cfg = SpecAugmentConfig { time: true, freq: true };
        let a = spec_augment(&feat, cfg, &mut ChaCha8Rng::seed_from_u64(6));
        let b = spec_augment(&feat, cfg, &mut ChaCha8Rng::seed_from_u64(6));
        assert_eq!(a, b);
    }
}
