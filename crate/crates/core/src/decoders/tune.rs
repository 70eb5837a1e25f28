use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::edit_distance;
use crate::nbest::{rank_order, scaled, Channel, NBestList, Scales};
use crate::vocab::Token;

/// Model scale grid `0, 0.05, ..., 2.0` (in steps of 1/20).
pub const MODEL_GRID: (usize, f64) = (40, 0.05);
/// Relative prior scale grid `0, 0.05, ..., 1.0`.
pub const PRIOR_REL_GRID: (usize, f64) = (20, 0.05);

/// One tuning utterance: candidate channel scores and the error count of
/// every candidate against its reference.
#[derive(Debug, Clone, PartialEq)]
pub struct DevUtterance {
    pub tokens: Vec<Vec<Token>>,
    pub asr: Vec<f64>,
    pub model: Vec<f64>,
    pub prior: Vec<f64>,
    pub errors: Vec<usize>,
    pub ref_len: usize,
}

impl DevUtterance {
    /// Channels are read from the list; missing model or prior channels count as 0.
    pub fn from_nbest(list: &NBestList, model: Channel, errors: Vec<usize>, ref_len: usize) -> Result<Self> {
        if list.is_empty() {
            return Err(Error::EmptyNBest);
        }
        if errors.len() != list.len() {
            return Err(Error::InvalidConfig("one error count per hypothesis".into()));
        }
        let get = |ch: Channel| list.hyps.iter().map(|h| h.score(ch).unwrap_or(0.0)).collect::<Vec<_>>();
        if list.hyps.iter().any(|h| h.score(Channel::Asr).is_none()) {
            return Err(Error::InvalidConfig(format!("utterance {} has a hypothesis without an asr score", list.utt_id)));
        }
        Ok(Self {
            tokens: list.hyps.iter().map(|h| h.tokens.clone()).collect(),
            asr: get(Channel::Asr),
            model: get(model),
            prior: get(Channel::Prior),
            errors,
            ref_len,
        })
    }

    fn pick(&self, model: f64, prior: f64) -> usize {
        let score = |i: usize| self.asr[i] + scaled(model, self.model[i]) - scaled(prior, self.prior[i]);
        let mut best = 0;
        let mut best_score = score(0);
        for i in 1..self.asr.len() {
            let s = score(i);
            if rank_order(s, &self.tokens[i], best_score, &self.tokens[best]).is_lt() {
                best = i;
                best_score = s;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunedScales {
    pub lambda: f64,
    pub prior_rel: f64,
    pub wer: f64,
    /// Error rate at scales (0, 0) on the same data.
    pub baseline_wer: f64,
}

impl TunedScales {
    pub fn scales(&self) -> Scales {
        Scales::relative(self.lambda, self.prior_rel).expect("grid values are valid")
    }
}

fn grid(points: (usize, f64)) -> Vec<f64> {
    // divide by the integer reciprocal so grid values print exactly (1.95, not 1.9500000000000002)
    let per_unit = (1.0 / points.1).round();
    (0..=points.0).map(|i| i as f64 / per_unit).collect()
}

/// Grid search minimizing the pooled error rate of the per-utterance
/// argmax of `asr + λ·model − ρ·λ·prior`. Ties go to the smaller `λ`, then
/// the smaller `ρ`.
pub fn tune_scales_on(dev: &[DevUtterance]) -> Result<TunedScales> {
    if dev.is_empty() {
        return Err(Error::EmptyDev);
    }
    let total: usize = dev.iter().map(|u| u.ref_len).sum();
    if total == 0 {
        return Err(Error::EmptyReferenceCorpus);
    }
    let errors_at = |lambda: f64, rho: f64| -> usize {
        dev.iter().map(|u| u.errors[u.pick(lambda, rho * lambda)]).sum()
    };
    let lambdas = grid(MODEL_GRID);
    let rhos = grid(PRIOR_REL_GRID);
    // (errors, lambda index, rho index); the first minimum in grid order wins
    let best = lambdas
        .par_iter()
        .enumerate()
        .map(|(li, &lambda)| {
            rhos.iter()
                .enumerate()
                .map(|(ri, &rho)| (errors_at(lambda, rho), li, ri))
                .min()
                .expect("nonempty grid")
        })
        .collect::<Vec<_>>()
        .into_iter()
        .min()
        .expect("nonempty grid");
    Ok(TunedScales {
        lambda: lambdas[best.1],
        prior_rel: rhos[best.2],
        wer: best.0 as f64 / total as f64,
        baseline_wer: errors_at(0.0, 0.0) as f64 / total as f64,
    })
}

/// Token-level tuning on `(candidates, reference)` pairs.
pub fn tune_scales(dev: &[(NBestList, Vec<Token>)], model: Channel) -> Result<TunedScales> {
    let items = dev
        .iter()
        .map(|(list, r)| {
            let errors = list.hyps.iter().map(|h| edit_distance(r, &h.tokens)).collect();
            DevUtterance::from_nbest(list, model, errors, r.len())
        })
        .collect::<Result<Vec<_>>>()?;
    tune_scales_on(&items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nbest::{ChannelScores, ScoredHyp};

    fn utt(cands: &[(&[Token], f64, f64, f64)]) -> NBestList {
        let hyps = cands
            .iter()
            .map(|&(t, a, m, p)| ScoredHyp {
                tokens: t.to_vec(),
                scores: ChannelScores::default().with(Channel::Asr, a).with(Channel::Dlm, m).with(Channel::Prior, p),
            })
            .collect();
        NBestList::new("u", hyps)
    }

    #[test]
    fn asr_best_everywhere_keeps_origin() {
        let dev = vec![
            (utt(&[(&[0], -1.0, -3.0, -1.0), (&[1], -2.0, -1.0, -1.0)]), vec![0]),
            (utt(&[(&[2], -0.5, -2.0, -1.0), (&[1], -2.0, -1.0, -1.0)]), vec![2]),
        ];
        let t = tune_scales(&dev, Channel::Dlm).unwrap();
        assert_eq!((t.lambda, t.prior_rel, t.wer), (0.0, 0.0, 0.0));
    }

    #[test]
    fn model_fixes_errors() {
        // the model prefers the reference by 2 nats and the ASR prefers the
        // error by 1 nat; at λ = 0.5 the tie goes to the smaller sequence,
        // which is the reference
        let dev = vec![
            (utt(&[(&[1], -1.0, -3.0, -1.0), (&[0], -2.0, -1.0, -1.0)]), vec![0]),
            (utt(&[(&[2], -1.0, -1.0, -1.0), (&[3], -3.0, -1.5, -1.0)]), vec![2]),
        ];
        let t = tune_scales(&dev, Channel::Dlm).unwrap();
        assert_eq!(t.wer, 0.0);
        assert_eq!(t.lambda, 0.5);
        assert_eq!(t.prior_rel, 0.0);
        assert!(t.wer <= t.baseline_wer);
        assert_eq!(t.baseline_wer, 0.5);
    }

    #[test]
    fn empty_dev_is_an_error() {
        assert!(matches!(tune_scales(&[], Channel::Dlm), Err(Error::EmptyDev)));
    }
}
