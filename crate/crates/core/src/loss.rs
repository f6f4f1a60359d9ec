//! Reward-weighted negative log-likelihood over mask samples, computed with
//! pluggable token scorers. Generic over the float type.

use std::collections::{BTreeMap, HashMap};

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flagmask::{render_sample_context, render_sample_target};
use crate::model::MaskSample;

/// Whitespace tokenization used by the toy scorers.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Next-token probabilities conditioned on a token context.
pub trait TokenScorer<T: Float> {
    /// Probability of `next` after `context`; must lie in (0, 1].
    fn score(&self, context: &[&str], next: &str) -> T;
}

/// Same probability for every token of a vocabulary of `vocab_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Uniform {
    pub vocab_size: usize,
}

impl<T: Float> TokenScorer<T> for Uniform {
    fn score(&self, _: &[&str], _: &str) -> T {
        T::one() / T::from(self.vocab_size).expect("vocabulary size fits the float type")
    }
}

/// Context-free token frequencies with add-one smoothing; unseen tokens share
/// one extra slot.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Unigram {
    counts: BTreeMap<String, usize>,
    total: usize,
}

impl Unigram {
    /// Counts target tokens of `samples`.
    pub fn fit(samples: &[MaskSample]) -> Self {
        let mut u = Self::default();
        for s in samples {
            for tok in tokenize(&render_sample_target(s)) {
                *u.counts.entry(tok.to_string()).or_default() += 1;
                u.total += 1;
            }
        }
        u
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }

    fn denominator(&self) -> usize {
        self.total + self.counts.len() + 1
    }

    /// Probability of the shared slot for unseen tokens.
    pub fn unknown_mass<T: Float>(&self) -> T {
        T::one() / T::from(self.denominator()).unwrap()
    }
}

impl<T: Float> TokenScorer<T> for Unigram {
    fn score(&self, _: &[&str], next: &str) -> T {
        let c = self.counts.get(next).copied().unwrap_or(0);
        T::from(c + 1).unwrap() / T::from(self.denominator()).unwrap()
    }
}

/// Puts all mass on the recorded continuation of each context seen at fit
/// time; anything else gets probability 0.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Oracle {
    next: HashMap<Vec<String>, String>,
}

impl Oracle {
    pub fn fit(samples: &[MaskSample]) -> Result<Self> {
        let mut next = HashMap::new();
        for s in samples {
            let context = render_sample_context(s);
            let target = render_sample_target(s);
            let mut ctx: Vec<String> = tokenize(&context).into_iter().map(str::to_string).collect();
            for tok in tokenize(&target) {
                match next.get(&ctx) {
                    Some(prev) if prev != tok => {
                        return Err(Error::Invalid(format!(
                            "oracle: sample {} continues a context shared with another sample differently (build the dataset with task questions to disambiguate)",
                            s.task_id
                        )))
                    }
                    _ => {
                        next.insert(ctx.clone(), tok.to_string());
                    }
                }
                ctx.push(tok.to_string());
            }
        }
        Ok(Self { next })
    }
}

impl<T: Float> TokenScorer<T> for Oracle {
    fn score(&self, context: &[&str], next: &str) -> T {
        let key: Vec<String> = context.iter().map(|s| s.to_string()).collect();
        if self.next.get(&key).is_some_and(|n| n == next) {
            T::one()
        } else {
            T::zero()
        }
    }
}

/// Sum with a fixed pairwise reduction tree, so the result does not depend on
/// how callers chunk the work.
pub fn pairwise_sum<T: Float>(xs: &[T]) -> T {
    const LEAF: usize = 8;
    if xs.len() <= LEAF {
        return xs.iter().fold(T::zero(), |a, &b| a + b);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Negative log-likelihood of the sample's target tokens given its context.
/// Context tokens are not scored.
pub fn sequence_nll<T: Float, S: TokenScorer<T> + ?Sized>(scorer: &S, sample: &MaskSample) -> Result<T> {
    let context = render_sample_context(sample);
    let target = render_sample_target(sample);
    let mut ctx = tokenize(&context);
    let mut terms = Vec::new();
    for tok in tokenize(&target) {
        let p = scorer.score(&ctx, tok);
        if !(p > T::zero() && p <= T::one()) {
            return Err(Error::Invalid(format!(
                "scorer returned probability {} for token {tok:?} of sample {}",
                p.to_f64().unwrap_or(f64::NAN),
                sample.task_id
            )));
        }
        terms.push(-p.ln());
        ctx.push(tok);
    }
    Ok(pairwise_sum(&terms))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport<T> {
    pub per_sample_nll: Vec<T>,
    /// Mean over samples of reward × NLL (or plain NLL when unweighted).
    pub objective: T,
    pub sample_count: usize,
    pub reward_weighted: bool,
}

/// Reward-weighted objective: mean of reward × NLL.
pub fn objective<T: Float, S: TokenScorer<T> + ?Sized>(scorer: &S, samples: &[MaskSample]) -> Result<LossReport<T>> {
    objective_with(scorer, samples, true)
}

pub fn objective_with<T: Float, S: TokenScorer<T> + ?Sized>(
    scorer: &S,
    samples: &[MaskSample],
    reward_weighted: bool,
) -> Result<LossReport<T>> {
    if samples.is_empty() {
        return Err(Error::Usage("objective of an empty dataset".into()));
    }
    let per_sample_nll = samples.iter().map(|s| sequence_nll(scorer, s)).collect::<Result<Vec<T>>>()?;
    let weighted: Vec<T> = samples
        .iter()
        .zip(&per_sample_nll)
        .map(|(s, &nll)| if reward_weighted { T::from(s.reward).unwrap() * nll } else { nll })
        .collect();
    Ok(LossReport {
        objective: pairwise_sum(&weighted) / T::from(samples.len()).unwrap(),
        per_sample_nll,
        sample_count: samples.len(),
        reward_weighted,
    })
}
