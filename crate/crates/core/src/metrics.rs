//! Perplexity, Distinct-n, TopicDiv, the F-beta composite and the
//! topic-divergence variance diagnostic.

use std::collections::{BTreeMap, HashSet};
use std::hash::Hash;

use log::warn;
use serde::Serialize;

use crate::corpus::{Turn, Utterance};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::SeededRng;
use crate::topics::{topic_kl, TopicModel};

pub const DEFAULT_BETAS: [f64; 3] = [0.5, 1.0, 1.5];

/// Anything that can score a reply token by token under teacher forcing.
pub trait SequenceScorer {
    fn token_log_probs(&self, context: &[Utterance], reply: &Utterance, rng: &mut SeededRng) -> Result<Vec<f64>>;
}

impl SequenceScorer for Model {
    fn token_log_probs(&self, context: &[Utterance], reply: &Utterance, rng: &mut SeededRng) -> Result<Vec<f64>> {
        Model::token_log_probs(self, context, reply, rng)
    }
}

/// `exp(-mean log p)` over the given token log-probabilities.
pub fn perplexity_from_log_probs(log_probs: &[f64]) -> Result<f64> {
    if log_probs.is_empty() {
        return Err(Error::Contract("perplexity over zero tokens".into()));
    }
    let mean = log_probs.iter().sum::<f64>() / log_probs.len() as f64;
    Ok((-mean).exp())
}

/// Corpus perplexity over every reply token. With `samples > 1` each token's
/// log-probability is averaged over that many latent draws.
pub fn perplexity<S: SequenceScorer + ?Sized>(scorer: &S, turns: &[Turn], samples: usize, seed: u64) -> Result<f64> {
    if samples == 0 {
        return Err(Error::Config("perplexity sample count must be >= 1".into()));
    }
    let mut rng = SeededRng::new(seed);
    let mut all = Vec::new();
    for t in turns {
        let mut acc = scorer.token_log_probs(&t.context, &t.reply, &mut rng)?;
        for _ in 1..samples {
            for (a, b) in acc.iter_mut().zip(scorer.token_log_probs(&t.context, &t.reply, &mut rng)?) {
                *a += b;
            }
        }
        all.extend(acc.into_iter().map(|v| v / samples as f64));
    }
    perplexity_from_log_probs(&all)
}

/// Corpus-level distinct n-grams over total n-grams.
pub fn distinct_n<T: Hash + Eq>(responses: &[impl AsRef<[T]>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Config("n-gram order must be >= 1".into()));
    }
    let mut seen: HashSet<&[T]> = HashSet::new();
    let mut total = 0usize;
    for r in responses {
        for gram in r.as_ref().windows(n) {
            seen.insert(gram);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Contract(format!("no {n}-grams in the responses")));
    }
    Ok(seen.len() as f64 / total as f64)
}

/// [`distinct_n`] over encoded replies, ignoring the end-of-utterance marker.
pub fn distinct_n_utterances(responses: &[Utterance], n: usize) -> Result<f64> {
    let words: Vec<_> = responses.iter().map(Utterance::words).collect();
    distinct_n(&words, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TopicDivReport {
    pub mean: f64,
    pub evaluated: usize,
    /// Pairs where either side matched no content word.
    pub skipped: usize,
}

/// Mean topic divergence between each context and its response.
pub fn topic_div<S: AsRef<str>>(
    contexts: &[Vec<S>],
    responses: &[Vec<S>],
    model: &TopicModel,
    eps: f64,
) -> Result<TopicDivReport> {
    if contexts.len() != responses.len() {
        return Err(Error::Contract(format!(
            "{} contexts but {} responses",
            contexts.len(),
            responses.len()
        )));
    }
    let (mut sum, mut evaluated, mut skipped) = (0.0, 0usize, 0usize);
    for (c, r) in contexts.iter().zip(responses) {
        let tc = model.topic_vector_words(c);
        let tr = model.topic_vector_words(r);
        if tc.matched_tokens == 0 || tr.matched_tokens == 0 {
            skipped += 1;
            continue;
        }
        sum += topic_kl(&tc, &tr, eps)?;
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(Error::Evaluation(format!(
            "all {skipped} pairs lack content words; TopicDiv is undefined"
        )));
    }
    Ok(TopicDivReport {
        mean: sum / evaluated as f64,
        evaluated,
        skipped,
    })
}

/// `(1 + b^2) d (1 - t) / (b^2 d + (1 - t))` with `t` clamped to `[0, 1]`.
pub fn f_score(dist: f64, topic_div: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("beta must be a positive number, got {beta}")));
    }
    if !(0.0..=1.0).contains(&dist) {
        return Err(Error::Domain(format!("distinct ratio must lie in [0, 1], got {dist}")));
    }
    if topic_div.is_nan() {
        return Err(Error::Domain("topic divergence is NaN".into()));
    }
    let t = if !(0.0..=1.0).contains(&topic_div) {
        warn!("topic divergence {topic_div} clamped to [0, 1] for the F score");
        topic_div.clamp(0.0, 1.0)
    } else {
        topic_div
    };
    let coherence = 1.0 - t;
    let b2 = beta * beta;
    let den = b2 * dist + coherence;
    if dist == 0.0 || coherence == 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 + b2) * dist * coherence / den)
}

/// Population variance of a per-epoch divergence log.
pub fn divergence_variance(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::Contract(format!("variance needs >= 2 values, got {}", values.len())));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Ok(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FPair {
    pub dist1: f64,
    pub dist2: f64,
}

/// Evaluation summary; serialises to the fixed JSON layout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub perplexity: Option<f64>,
    pub dist1: f64,
    pub dist2: f64,
    pub topic_div: Option<f64>,
    /// Keyed by the shortest decimal form of beta (`"0.5"`, `"1"`, `"1.5"`).
    pub f: BTreeMap<String, FPair>,
    pub skipped_pairs: usize,
    pub n_responses: usize,
}

impl MetricsReport {
    pub fn new(
        dist1: f64,
        dist2: f64,
        topic: Option<TopicDivReport>,
        perplexity: Option<f64>,
        betas: &[f64],
        n_responses: usize,
    ) -> Result<Self> {
        let mut f = BTreeMap::new();
        if let Some(t) = topic {
            for &b in betas {
                let pair = FPair {
                    dist1: f_score(dist1, t.mean, b)?,
                    dist2: f_score(dist2, t.mean, b)?,
                };
                f.insert(b.to_string(), pair);
            }
        }
        Ok(Self {
            perplexity,
            dist1,
            dist2,
            topic_div: topic.map(|t| t.mean),
            f,
            skipped_pairs: topic.map_or(0, |t| t.skipped),
            n_responses,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serialisable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn perplexity_examples() {
        let p = perplexity_from_log_probs(&[0.5f64.ln(), 0.25f64.ln()]).unwrap();
        assert!((p - 8f64.sqrt()).abs() < 1e-12);
        assert_eq!(perplexity_from_log_probs(&[0.0, 0.0]).unwrap(), 1.0);
        let v = 7.0f64;
        let u = perplexity_from_log_probs(&[(1.0 / v).ln(); 5]).unwrap();
        assert!((u - v).abs() < 1e-12);
        assert!(matches!(perplexity_from_log_probs(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn distinct_examples() {
        assert_eq!(distinct_n(&[vec!["a", "a", "a", "a"]], 1).unwrap(), 0.25);
        let abcd = [vec!["a", "b", "c", "d"]];
        assert_eq!(distinct_n(&abcd, 1).unwrap(), 1.0);
        assert_eq!(distinct_n(&abcd, 2).unwrap(), 1.0);
        assert_eq!(distinct_n(&[vec!["a", "b"], vec!["a", "b"]], 1).unwrap(), 0.5);
        assert!(distinct_n(&[vec!["a"]], 2).is_err());
    }

    #[test]
    fn distinct_ignores_eou() {
        let u = Utterance::new(vec![5, 5]).unwrap();
        assert_eq!(distinct_n_utterances(&[u], 1).unwrap(), 0.5);
    }

    #[test]
    fn f_score_reference_cells() {
        assert!((f_score(0.8008, 0.2750, 1.0).unwrap() - 0.7610).abs() < 5e-4);
        assert!((f_score(0.8008, 0.2750, 0.5).unwrap() - 0.7844).abs() < 5e-4);
        assert!((f_score(0.6604, 0.3101, 1.0).unwrap() - 0.6748).abs() < 5e-4);
        assert_eq!(f_score(0.7, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(f_score(0.0, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(f_score(0.7, 3.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn f_score_limits_in_beta() {
        let (d, t) = (0.6, 0.3);
        assert!((f_score(d, t, 1e-3).unwrap() - d).abs() < 1e-3);
        assert!((f_score(d, t, 1e3).unwrap() - (1.0 - t)).abs() < 1e-3);
    }

    #[test]
    fn variance_examples() {
        assert_eq!(divergence_variance(&[0.3; 4]).unwrap(), 0.0);
        assert_eq!(divergence_variance(&[1.0, 3.0]).unwrap(), 1.0);
        assert!(divergence_variance(&[1.0]).is_err());
    }

    fn toy() -> TopicModel {
        let w = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        TopicModel::new(vec!["sun".into(), "rain".into()], w, Tensor::identity(2)).unwrap()
    }

    #[test]
    fn topic_div_skips_and_averages() {
        let m = toy();
        let ctx = vec![vec!["sun", "the"], vec!["the"], vec!["rain"]];
        let rsp = vec![vec!["sun"], vec!["sun"], vec!["sun", "rain"]];
        let r = topic_div(&ctx, &rsp, &m, 1e-8).unwrap();
        assert_eq!((r.evaluated, r.skipped), (2, 1));
        let second = topic_kl(
            &m.topic_vector_words(&["rain"]),
            &m.topic_vector_words(&["sun", "rain"]),
            1e-8,
        )
        .unwrap();
        assert!((r.mean - second / 2.0).abs() < 1e-15);
        let none = topic_div(&[vec!["the"]], &[vec!["sun"]], &m, 1e-8);
        assert!(matches!(none, Err(Error::Evaluation(_))));
    }

    #[test]
    fn report_json_layout() {
        let t = TopicDivReport {
            mean: 0.2750,
            evaluated: 3,
            skipped: 1,
        };
        let r = MetricsReport::new(0.8008, 0.9712, Some(t), None, &DEFAULT_BETAS, 4).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["perplexity", "dist1", "dist2", "topic_div", "f", "skipped_pairs", "n_responses"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let f = &v["f"];
        assert!((f["1"]["dist1"].as_f64().unwrap() - 0.7610).abs() < 5e-4);
        assert!((f["0.5"]["dist1"].as_f64().unwrap() - 0.7844).abs() < 5e-4);
        assert!((f["1.5"]["dist1"].as_f64().unwrap() - 0.7467).abs() < 5e-4);
    }
}
