//! Retrieval and calibration metrics shared by both paradigms.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// One query's ranked results against a single gold document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedQuery {
    pub docs: Vec<usize>,
    /// Predicted relevance probability of each ranked doc, if the model provides one.
    pub probabilities: Option<Vec<f64>>,
    pub gold: usize,
}

impl RankedQuery {
    /// 1-based rank of the gold document, if retrieved.
    pub fn gold_rank(&self) -> Option<usize> {
        self.docs
            .iter()
            .position(|&d| d == self.gold)
            .map(|p| p + 1)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedRun {
    queries: Vec<RankedQuery>,
}

impl RankedRun {
    pub fn new(queries: Vec<RankedQuery>) -> Result<Self> {
        for (i, q) in queries.iter().enumerate() {
            let mut seen = HashSet::with_capacity(q.docs.len());
            if let Some(d) = q.docs.iter().find(|d| !seen.insert(**d)) {
                return Err(LabError::Invariant(format!(
                    "query {i}: doc {d} ranked twice"
                )));
            }
            if let Some(p) = &q.probabilities {
                if p.len() != q.docs.len() {
                    return Err(LabError::Invariant(format!(
                        "query {i}: {} probabilities for {} docs",
                        p.len(),
                        q.docs.len()
                    )));
                }
                if p.iter().any(|x| !(0.0..=1.0).contains(x)) {
                    return Err(LabError::Invariant(format!(
                        "query {i}: probability outside [0, 1]"
                    )));
                }
            }
        }
        Ok(RankedRun { queries })
    }

    pub fn queries(&self) -> &[RankedQuery] {
        &self.queries
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    fn mean_over(&self, k: usize, f: impl Fn(usize) -> f64) -> Result<f64> {
        if k == 0 {
            return Err(LabError::domain("k must be at least 1"));
        }
        if self.queries.is_empty() {
            return Err(LabError::domain("empty run"));
        }
        let total: f64 = self
            .queries
            .iter()
            .map(|q| q.gold_rank().filter(|&r| r <= k).map_or(0.0, &f))
            .sum();
        Ok(total / self.queries.len() as f64)
    }
}

pub fn hits_at_k(run: &RankedRun, k: usize) -> Result<f64> {
    run.mean_over(k, |_| 1.0)
}

/// Binary single-gold NDCG: the ideal DCG is 1.
pub fn ndcg_at_k(run: &RankedRun, k: usize) -> Result<f64> {
    run.mean_over(k, |r| 1.0 / ((r + 1) as f64).log2())
}

pub fn mrr_at_k(run: &RankedRun, k: usize) -> Result<f64> {
    run.mean_over(k, |r| 1.0 / r as f64)
}

/// Mean of `(p_top1 − 1[top1 is gold])²`.
pub fn brier(run: &RankedRun) -> Result<f64> {
    if run.is_empty() {
        return Err(LabError::domain("empty run"));
    }
    let mut total = 0.0;
    for (i, q) in run.queries.iter().enumerate() {
        let p = q
            .probabilities
            .as_ref()
            .and_then(|p| p.first())
            .ok_or_else(|| LabError::domain(format!("query {i} has no top-1 probability")))?;
        let hit = if q.docs[0] == q.gold { 1.0 } else { 0.0 };
        total += (p - hit) * (p - hit);
    }
    Ok(total / run.len() as f64)
}

fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(LabError::domain(format!(
            "support sizes differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    if p.is_empty() {
        return Err(LabError::domain("empty distributions"));
    }
    Ok(())
}

/// `½ Σ |pᵢ − qᵢ|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `Σ pᵢ log(pᵢ / qᵢ)`; `+∞` when `q` misses mass that `p` has.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return Ok(f64::INFINITY);
            }
            total += a * (a.ln() - b.ln());
        }
    }
    Ok(total)
}

/// Hits, NDCG and MRR at each cutoff plus Brier (when probabilities are present).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub ks: Vec<usize>,
    pub hits: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub mrr: Vec<f64>,
    pub brier: Option<f64>,
}

pub fn summarize(run: &RankedRun, ks: &[usize]) -> Result<MetricSummary> {
    let collect = |f: fn(&RankedRun, usize) -> Result<f64>| {
        ks.iter().map(|&k| f(run, k)).collect::<Result<Vec<_>>>()
    };
    let has_probs = run
        .queries
        .iter()
        .all(|q| q.probabilities.as_ref().is_some_and(|p| !p.is_empty()));
    Ok(MetricSummary {
        ks: ks.to_vec(),
        hits: collect(hits_at_k)?,
        ndcg: collect(ndcg_at_k)?,
        mrr: collect(mrr_at_k)?,
        brier: if has_probs { Some(brier(run)?) } else { None },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(docs: Vec<usize>, gold: usize, p: Option<f64>) -> RankedQuery {
        let n = docs.len();
        RankedQuery {
            docs,
            probabilities: p.map(|p| {
                let mut v = vec![0.0; n];
                v[0] = p;
                v
            }),
            gold,
        }
    }

    #[test]
    fn brier_examples() {
        let hit = RankedRun::new(vec![single(vec![3, 1], 3, Some(1.0))]).unwrap();
        assert_eq!(brier(&hit).unwrap(), 0.0);
        let miss = RankedRun::new(vec![single(vec![3, 1], 1, Some(0.7))]).unwrap();
        assert!((brier(&miss).unwrap() - 0.49).abs() < 1e-15);
        let both = RankedRun::new(vec![
            single(vec![3, 1], 3, Some(1.0)),
            single(vec![3, 1], 1, Some(0.7)),
        ])
        .unwrap();
        assert!((brier(&both).unwrap() - 0.245).abs() < 1e-15);
        let none = RankedRun::new(vec![single(vec![3], 3, None)]).unwrap();
        assert!(brier(&none).is_err());
    }

    #[test]
    fn rank_metric_examples() {
        let at1 = RankedRun::new(vec![single((0..10).collect(), 0, None)]).unwrap();
        for f in [hits_at_k, ndcg_at_k, mrr_at_k] {
            assert_eq!(f(&at1, 10).unwrap(), 1.0);
        }
        let at3 = RankedRun::new(vec![single((0..10).collect(), 2, None)]).unwrap();
        assert!((mrr_at_k(&at3, 10).unwrap() - 0.333333).abs() < 1e-6);
        assert_eq!(mrr_at_k(&at3, 2).unwrap(), 0.0);
        let at2 = RankedRun::new(vec![single((0..10).collect(), 1, None)]).unwrap();
        assert!((ndcg_at_k(&at2, 10).unwrap() - 0.630930).abs() < 1e-6);
        assert!(hits_at_k(&at2, 0).is_err());
        assert!(hits_at_k(&RankedRun::default(), 1).is_err());
    }

    #[test]
    fn run_validation() {
        assert!(RankedRun::new(vec![single(vec![1, 1], 1, None)]).is_err());
        let bad = RankedQuery {
            docs: vec![0],
            probabilities: Some(vec![1.5]),
            gold: 0,
        };
        assert!(RankedRun::new(vec![bad]).is_err());
    }

    #[test]
    fn divergence_examples() {
        assert_eq!(tv_distance(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!((tv_distance(&[0.4, 0.6], &[0.5, 0.5]).unwrap() - 0.1).abs() < 1e-15);
        assert!(tv_distance(&[1.0], &[0.5, 0.5]).is_err());
        assert_eq!(
            kl_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap(),
            f64::INFINITY
        );
        assert!((kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    fn arb_run() -> impl Strategy<Value = RankedRun> {
        proptest::collection::vec(
            (
                Just((0..20).collect::<Vec<usize>>())
                    .prop_shuffle()
                    .prop_map(|mut d| {
                        d.truncate(12);
                        d
                    }),
                0usize..20,
                0.0f64..=1.0,
            ),
            1..20,
        )
        .prop_map(|qs| {
            RankedRun::new(
                qs.into_iter()
                    .map(|(docs, gold, p)| single(docs, gold, Some(p)))
                    .collect(),
            )
            .unwrap()
        })
    }

    fn arb_dist(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, n).prop_map(|w| {
            let s: f64 = w.iter().sum::<f64>() + 1e-12;
            w.iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn metrics_bounded_and_monotone(run in arb_run()) {
            let mut prev = (0.0, 0.0, 0.0);
            for k in 1..=12 {
                let (h, n, m) = (hits_at_k(&run, k).unwrap(), ndcg_at_k(&run, k).unwrap(), mrr_at_k(&run, k).unwrap());
                for v in [h, n, m] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                prop_assert!(h >= m && h >= n);
                prop_assert!(h >= prev.0 && n >= prev.1 && m >= prev.2);
                prev = (h, n, m);
            }
            let b = brier(&run).unwrap();
            prop_assert!((0.0..=1.0).contains(&b));
        }

        #[test]
        fn tv_is_a_metric(p in arb_dist(6), q in arb_dist(6), r in arb_dist(6)) {
            let pq = tv_distance(&p, &q).unwrap();
            prop_assert!((pq - tv_distance(&q, &p).unwrap()).abs() < 1e-15);
            prop_assert!(pq <= tv_distance(&p, &r).unwrap() + tv_distance(&r, &q).unwrap() + 1e-12);
            prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-12);
        }
    }
}
