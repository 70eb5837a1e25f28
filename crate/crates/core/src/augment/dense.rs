use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::ctc::CtcPrefixScorer;
use crate::error::{Error, Result};
use crate::lattice::PosteriorLattice;
use crate::vocab::Token;

/// Per output position, up to `k` `(token, probability)` pairs in
/// descending probability, renormalized to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTopK {
    pub utt_id: String,
    steps: Vec<Vec<(Token, f64)>>,
}

impl DenseTopK {
    pub fn new(utt_id: impl Into<String>, steps: Vec<Vec<(Token, f64)>>) -> Result<Self> {
        for (i, step) in steps.iter().enumerate() {
            if step.is_empty() {
                return Err(Error::InvalidMass(format!("position {i} has no entries")));
            }
            let sum: f64 = step.iter().map(|s| s.1).sum();
            if (sum - 1.0).abs() > 1e-6 || step.iter().any(|s| !(s.1 >= 0.0)) {
                return Err(Error::InvalidMass(format!("position {i} sums to {sum}")));
            }
            let mut toks: Vec<Token> = step.iter().map(|s| s.0).collect();
            toks.sort_unstable();
            toks.dedup();
            if toks.len() != step.len() {
                return Err(Error::InvalidMass(format!("position {i} repeats a token")));
            }
        }
        Ok(Self { utt_id: utt_id.into(), steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[Vec<(Token, f64)>] {
        &self.steps
    }

    /// Most probable token per position.
    pub fn top_path(&self) -> Vec<Token> {
        self.steps.iter().map(|s| s[0].0).collect()
    }

    pub fn write_jsonl<'a>(items: impl IntoIterator<Item = &'a DenseTopK>, mut w: impl Write) -> Result<()> {
        for item in items {
            serde_json::to_writer(&mut w, item)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Vec<DenseTopK>> {
        let mut out = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: DenseTopK = serde_json::from_str(&line)?;
            out.push(DenseTopK::new(raw.utt_id, raw.steps)?);
        }
        Ok(out)
    }
}

/// Greedy label-synchronous decode over the exact CTC prefix scorer that
/// stores, at every emitted position, the `k` most probable next labels
/// (end-of-sequence excluded) renormalized among themselves.
///
/// Termination competes with the labels at every step, exactly as in
/// CTC-only label-synchronous greedy search with `eos` as the end event.
pub fn extract_dense_topk(lat: &PosteriorLattice, k: usize, eos: Token) -> Result<DenseTopK> {
    if k == 0 {
        return Err(Error::InvalidConfig("dense extraction needs k >= 1".into()));
    }
    if eos as usize >= lat.num_labels() {
        return Err(Error::InvalidConfig(format!("eos {eos} outside the lattice vocabulary")));
    }
    let scorer = CtcPrefixScorer::new(lat);
    let mut state = scorer.start();
    let mut steps = Vec::new();
    for _ in 0..lat.frames() {
        let deltas = scorer.extension_deltas(&state);
        let end = scorer.end_delta(&state);
        let mut labels: Vec<(Token, f64)> = deltas
            .iter()
            .enumerate()
            .filter(|&(y, _)| y != eos as usize)
            .map(|(y, &d)| (y as Token, d))
            .collect();
        // stable: ties keep the lower id first
        labels.sort_by(|a, b| b.1.total_cmp(&a.1));
        let (best, best_delta) = labels[0];
        if end >= best_delta || best_delta == f64::NEG_INFINITY {
            break;
        }
        labels.truncate(k);
        let probs: Vec<f64> = labels.iter().map(|l| (l.1 - best_delta).exp()).collect();
        let z: f64 = probs.iter().sum();
        steps.push(labels.iter().zip(&probs).map(|(l, p)| (l.0, p / z)).collect());
        state = scorer.step(&state, best).0;
    }
    Ok(DenseTopK { utt_id: lat.utt_id().to_string(), steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::{label_sync_beam, BeamConfig, Fusion};
    use crate::testing::{l1, random_lattice};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn l1_first_step_pairs() {
        // with a 3-token vocabulary whose eos (2) carries no mass, the
        // first-step labels are a and b with exact CTC prefix masses
        let lat = PosteriorLattice::from_rows("x", &[vec![0.6, 0.3, 0.0, 0.1], vec![0.6, 0.3, 0.0, 0.1]]).unwrap();
        let dense = extract_dense_topk(&lat, 2, 2).unwrap();
        let scorer = CtcPrefixScorer::new(&lat);
        let start = scorer.start();
        let qa = scorer.step(&start, 0).1.exp();
        let qb = scorer.step(&start, 1).1.exp();
        let first = &dense.steps()[0];
        assert_eq!(first[0].0, 0);
        assert_eq!(first[1].0, 1);
        assert!((first[0].1 - qa / (qa + qb)).abs() < 1e-9);
        assert!((first[1].1 - qb / (qa + qb)).abs() < 1e-9);
    }

    #[test]
    fn positions_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let lat = random_lattice(&mut rng, 5, 10);
            for k in 1..=5 {
                let dense = extract_dense_topk(&lat, k, 4).unwrap();
                for step in dense.steps() {
                    assert!(step.len() <= k);
                    assert!((step.iter().map(|s| s.1).sum::<f64>() - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn top1_path_is_label_sync_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let lat = random_lattice(&mut rng, 4, 8);
            let dense = extract_dense_topk(&lat, 1, 3).unwrap();
            let fusion = Fusion::acoustic(&lat).with_end_token(3);
            let greedy = label_sync_beam(&fusion, &BeamConfig::greedy()).unwrap();
            assert_eq!(dense.top_path(), greedy.best().unwrap().tokens);
        }
    }

    #[test]
    fn l1_with_b_as_eos() {
        let dense = extract_dense_topk(&l1(), 1, 1).unwrap();
        assert_eq!(dense.top_path(), vec![0]);
    }

    #[test]
    fn jsonl_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let items: Vec<_> = (0..3).map(|_| extract_dense_topk(&random_lattice(&mut rng, 4, 6), 2, 3).unwrap()).collect();
        let mut buf = Vec::new();
        DenseTopK::write_jsonl(&items, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(r#"{"utt_id":"rand","steps":[[["#) || text.starts_with(r#"{"utt_id":"rand","steps":[]"#));
        assert_eq!(DenseTopK::read_jsonl(&buf[..]).unwrap(), items);
    }

    #[test]
    fn invalid_positions_are_rejected() {
        assert!(DenseTopK::new("x", vec![vec![(0, 0.5)]]).is_err());
        assert!(DenseTopK::new("x", vec![vec![(0, 0.5), (0, 0.5)]]).is_err());
        assert!(DenseTopK::new("x", vec![vec![]]).is_err());
    }
}
