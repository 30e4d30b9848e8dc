use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Proposal family for negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeKind {
    Uniform,
    HardMixture,
}

/// Negative-sampling proposal `π`: a `hard_ratio` share of each draw comes
/// from the model's current top-scoring non-positive documents, the rest is
/// uniform over non-positive documents. Draws are with replacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegativePolicy {
    pub kind: NegativeKind,
    pub hard_ratio: f64,
    pub hard_pool_size: usize,
}

impl NegativePolicy {
    pub fn uniform() -> Self {
        Self {
            kind: NegativeKind::Uniform,
            hard_ratio: 0.0,
            hard_pool_size: 0,
        }
    }

    pub fn hard(hard_ratio: f64, hard_pool_size: usize) -> Result<Self> {
        let p = Self {
            kind: NegativeKind::HardMixture,
            hard_ratio,
            hard_pool_size,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.hard_ratio) {
            return Err(LabError::domain(format!(
                "hard_ratio {} outside [0, 1]",
                self.hard_ratio
            )));
        }
        Ok(())
    }

    /// Effective hard share (zero for the uniform kind).
    pub fn effective_ratio(&self) -> f64 {
        match self.kind {
            NegativeKind::Uniform => 0.0,
            NegativeKind::HardMixture => self.hard_ratio,
        }
    }

    pub fn needs_hard_pool(&self) -> bool {
        self.effective_ratio() > 0.0 && self.hard_pool_size > 0
    }

    /// Number of hard draws among `count` negatives: `⌊ρ · count⌋`.
    pub fn hard_count(&self, count: usize) -> usize {
        (self.effective_ratio() * count as f64).floor() as usize
    }
}

/// Sampled negatives; the first `num_hard` came from the hard pool.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeDraw {
    pub docs: Vec<usize>,
    pub num_hard: usize,
}

/// Draws `count` negatives for a query whose positive is `positive`.
///
/// `ranked_pool` lists candidate hard negatives best-first; the positive is
/// skipped and the list is cut at `hard_pool_size`. An empty pool falls back
/// to uniform draws.
pub fn sample_negatives<R: Rng + ?Sized>(
    policy: &NegativePolicy,
    positive: usize,
    count: usize,
    num_docs: usize,
    ranked_pool: &[usize],
    rng: &mut R,
) -> Result<NegativeDraw> {
    if count == 0 {
        return Err(LabError::domain("need at least one negative (K - 1 >= 1)"));
    }
    if num_docs < 2 {
        return Err(LabError::domain(
            "negative sampling needs at least two documents",
        ));
    }
    policy.validate()?;
    let pool: Vec<usize> = ranked_pool
        .iter()
        .copied()
        .filter(|&d| d != positive && d < num_docs)
        .take(policy.hard_pool_size)
        .collect();
    let num_hard = if pool.is_empty() {
        0
    } else {
        policy.hard_count(count)
    };
    let mut docs = Vec::with_capacity(count);
    for _ in 0..num_hard {
        docs.push(pool[rng.random_range(0..pool.len())]);
    }
    for _ in num_hard..count {
        docs.push(uniform_excluding(positive, num_docs, rng));
    }
    Ok(NegativeDraw { docs, num_hard })
}

/// Uniform over `0..n` minus `excluded`.
pub(crate) fn uniform_excluding<R: Rng + ?Sized>(excluded: usize, n: usize, rng: &mut R) -> usize {
    let d = rng.random_range(0..n - 1);
    if d >= excluded {
        d + 1
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RandomStream;

    #[test]
    fn ratio_zero_is_all_uniform() {
        let mut rng = RandomStream::new(1, 1).rng();
        let policy = NegativePolicy::hard(0.0, 4).unwrap();
        let d = sample_negatives(&policy, 3, 50, 20, &[0, 1, 2, 4], &mut rng).unwrap();
        assert_eq!(d.num_hard, 0);
        assert!(d.docs.iter().all(|&x| x != 3 && x < 20));
    }

    #[test]
    fn ratio_one_is_all_hard() {
        let mut rng = RandomStream::new(1, 2).rng();
        let policy = NegativePolicy::hard(1.0, 2).unwrap();
        let d = sample_negatives(&policy, 5, 40, 100, &[5, 9, 7, 8], &mut rng).unwrap();
        assert_eq!(d.num_hard, 40);
        assert!(d.docs.iter().all(|&x| x == 9 || x == 7));
    }

    #[test]
    fn half_ratio_gives_half_hard_on_average() {
        let mut rng = RandomStream::new(9, 0).rng();
        let policy = NegativePolicy::hard(0.5, 8).unwrap();
        let pool: Vec<usize> = (0..9).collect();
        let trials = 10_000;
        let mut hard = 0usize;
        for t in 0..trials {
            let d = sample_negatives(&policy, t % 50, 64, 1000, &pool, &mut rng).unwrap();
            hard += d.num_hard;
        }
        let frac = hard as f64 / (trials * 64) as f64;
        assert!((frac - 0.5).abs() <= 0.02);
    }

    #[test]
    fn empty_pool_falls_back_to_uniform() {
        let mut rng = RandomStream::new(3, 3).rng();
        let policy = NegativePolicy::hard(1.0, 4).unwrap();
        let d = sample_negatives(&policy, 0, 10, 5, &[0], &mut rng).unwrap();
        assert_eq!(d.num_hard, 0);
        assert_eq!(d.docs.len(), 10);
    }

    #[test]
    fn rejects_invalid_requests() {
        let mut rng = RandomStream::new(0, 0).rng();
        assert!(sample_negatives(&NegativePolicy::uniform(), 0, 0, 10, &[], &mut rng).is_err());
        assert!(NegativePolicy::hard(1.5, 3).is_err());
    }
}
