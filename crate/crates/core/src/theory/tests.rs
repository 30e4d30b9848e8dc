use super::*;
use crate::world::make_spectral_world;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn partition_function_examples() {
    let zeros = vec![0.0; 1000];
    let cands: Vec<usize> = (0..10).collect();
    let (lz, lzk) = partition_functions(&zeros, 1.0, &cands).unwrap();
    assert!((lz - 1000f64.ln()).abs() < 1e-12);
    assert!((lz - lzk - 4.605170).abs() < 1e-6);
    assert!(partition_functions(&zeros, 1.0, &[]).is_err());
    assert!(partition_functions(&zeros, 1.0, &[1000]).is_err());
    // duplicates count
    let (_, dup) = partition_functions(&[0.0, 5.0], 1.0, &[0, 0]).unwrap();
    assert!((dup - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn subset_partition_is_smaller() {
    let mut rng = RandomStream::new(4, 0).rng();
    for _ in 0..200 {
        let n = rng.random_range(2..50);
        let scores: Vec<f64> = (0..n).map(|_| 3.0 * gaussian(&mut rng)).collect();
        let cands: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
        if cands.is_empty() {
            continue;
        }
        let (lz, lzk) = partition_functions(&scores, 0.7, &cands).unwrap();
        assert!(lzk <= lz + 1e-12);
    }
}

#[test]
fn hard_proposal_mixes_mass() {
    let p = proposal_distribution(
        &[0.0, 3.0, 1.0, 2.0],
        &NegativePolicy::hard(0.5, 2).unwrap(),
    )
    .unwrap();
    assert_eq!(p, vec![0.125, 0.375, 0.125, 0.375]);
    let u = proposal_distribution(&[0.0, 3.0], &NegativePolicy::uniform()).unwrap();
    assert_eq!(u, vec![0.5, 0.5]);
}

#[test]
fn delta_uniform_and_point_mass() {
    let world = make_spectral_world(6, 40, &[4.0, 2.0], &RandomStream::new(1, 0)).unwrap();
    let s = world.logits().clone();
    let uniform = proposal_matrix(&s, &NegativePolicy::uniform()).unwrap();
    let est = estimate_delta(&s, 1.0, &uniform, 20_000, &RandomStream::new(2, 0)).unwrap();
    for (d, se) in est.per_query.iter().zip(&est.standard_errors) {
        assert!(d.abs() <= 3.0 * se + 1e-12, "delta {d} se {se}");
    }
    let mut point = Matrix::zeros(6, 40);
    for q in 0..6 {
        let top = rank_by_score(s.row(q))[0];
        point[(q, top)] = 1.0;
    }
    let est = estimate_delta(&s, 0.5, &point, 100, &RandomStream::new(2, 1)).unwrap();
    for q in 0..6 {
        let scaled: Vec<f64> = s.row(q).iter().map(|x| x / 0.5).collect();
        let smax = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let want = smax - (logsumexp(&scaled).unwrap() - 40f64.ln());
        assert!((est.per_query[q] - want).abs() < 1e-12);
        assert!((exact_delta(s.row(q), 0.5, point.row(q)).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn delta_is_bounded_by_score_range() {
    let mut rng = RandomStream::new(6, 0).rng();
    for seed in 0..20 {
        let scores = Matrix::from_fn(3, 30, |_, _| rng.random_range(-2.0..2.0));
        let m = scores.as_slice().iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let policy =
            NegativePolicy::hard(rng.random_range(0.0..=1.0), rng.random_range(1..10)).unwrap();
        let prop = proposal_matrix(&scores, &policy).unwrap();
        let est = estimate_delta(&scores, 1.0, &prop, 500, &RandomStream::new(seed, 0)).unwrap();
        assert!(est.per_query.iter().all(|d| d.abs() <= 2.0 * m));
    }
}

#[test]
fn constant_scores_are_tight() {
    for n in [100usize, 1000] {
        for k in [5usize, 10, 50] {
            let world = GroundTruthPosterior::from_logits(Matrix::zeros(2, n)).unwrap();
            let s = Matrix::zeros(2, n);
            let prop = proposal_matrix(&s, &NegativePolicy::uniform()).unwrap();
            let cfg = GapConfig {
                num_candidates: k,
                trials: 3000,
                delta_samples: 100,
            };
            let r = estimate_gap(&world, &s, 1.0, &prop, &cfg, &RandomStream::new(0, 0)).unwrap();
            let want = (n as f64 / k as f64).ln();
            assert!((r.gap - want).abs() < 1e-9);
            assert!(r.lower_slack.abs() < 1e-9 && r.flipped_slack.abs() < 1e-9);
            assert!(r.holds(3.0));
        }
    }
}

#[test]
fn gap_bound_holds_on_small_world() {
    let world =
        make_spectral_world(16, 128, &[6.0, 4.0, 3.0, 2.0], &RandomStream::new(3, 0)).unwrap();
    let s = world.logits().clone();
    let mut deltas = Vec::new();
    for policy in [
        NegativePolicy::uniform(),
        NegativePolicy::hard(1.0, 16).unwrap(),
    ] {
        let prop = proposal_matrix(&s, &policy).unwrap();
        let cfg = GapConfig {
            num_candidates: 8,
            trials: 20_000,
            delta_samples: 5000,
        };
        let r = estimate_gap(&world, &s, 1.0, &prop, &cfg, &RandomStream::new(3, 1)).unwrap();
        assert!(r.holds(3.0), "{r:?}");
        assert!((r.flipped_bound - r.lower_bound - 2.0 * (128f64 / 8.0).ln()).abs() < 1e-12);
        deltas.push(r.mean_delta);
    }
    assert!(deltas[1] > 0.0 && deltas[1] > deltas[0]);
    let bad = GapConfig {
        num_candidates: 1,
        trials: 10,
        delta_samples: 10,
    };
    let prop = proposal_matrix(&s, &NegativePolicy::uniform()).unwrap();
    assert!(estimate_gap(&world, &s, 1.0, &prop, &bad, &RandomStream::new(0, 0)).is_err());
}

#[test]
fn gap_estimate_is_deterministic() {
    let world = make_spectral_world(4, 32, &[2.0], &RandomStream::new(1, 0)).unwrap();
    let s = world.logits().clone();
    let prop = proposal_matrix(&s, &NegativePolicy::uniform()).unwrap();
    let cfg = GapConfig {
        num_candidates: 4,
        trials: 10_000,
        delta_samples: 1000,
    };
    let a = estimate_gap(&world, &s, 1.0, &prop, &cfg, &RandomStream::new(9, 0)).unwrap();
    let b = estimate_gap(&world, &s, 1.0, &prop, &cfg, &RandomStream::new(9, 0)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn tail_examples() {
    let cfg = TailConfig {
        num_samples: 8,
        epsilon: 0.3,
        trials: 5000,
        moment_samples: 1000,
    };
    let flat =
        check_bernstein_tail(&[1.0; 10], 1.0, &[0.1; 10], &cfg, &RandomStream::new(0, 0)).unwrap();
    assert_eq!(flat.frequency, 0.0);
    let mut rng = RandomStream::new(1, 0).rng();
    let scores: Vec<f64> = (0..200).map(|_| rng.random_range(-2.0..2.0)).collect();
    let uniform = vec![1.0 / 200.0; 200];
    let mut prev = f64::INFINITY;
    for k in [8, 32, 128] {
        let r = check_bernstein_tail(
            &scores,
            1.0,
            &uniform,
            &TailConfig {
                num_samples: k,
                trials: 20_000,
                moment_samples: 200_000,
                ..cfg
            },
            &RandomStream::new(2, k as u64),
        )
        .unwrap();
        assert!(r.passes(), "{r:?}");
        assert!(r.frequency <= prev);
        prev = r.frequency;
    }
    assert!(check_bernstein_tail(
        &scores,
        1.0,
        &uniform,
        &TailConfig {
            epsilon: 1.0,
            ..cfg
        },
        &RandomStream::new(0, 0)
    )
    .is_err());
}

#[test]
fn eckart_young_examples() {
    let d = Matrix::from_diag(&[3.0, 2.0, 1.0]);
    assert_eq!(spectral_tail(&d, 2).unwrap(), 1.0);
    assert_eq!(spectral_tail(&d, 3).unwrap(), 0.0);
    let r = eckart_young_check(
        &d,
        2,
        &FactorizationConfig::default(),
        &RandomStream::new(0, 0),
    )
    .unwrap();
    assert_eq!(r.tail, 1.0);
    assert!(r.optimality_holds);
    assert!(r.relative_gap < 0.02, "{r:?}");
    assert!(eckart_young_check(
        &d,
        4,
        &FactorizationConfig::default(),
        &RandomStream::new(0, 0)
    )
    .is_err());
}

#[test]
fn trained_factorization_reaches_tail() {
    let spectrum: Vec<f64> = (0..16).map(|i| 10.0 * 0.7f64.powi(i)).collect();
    let world = make_spectral_world(16, 32, &spectrum, &RandomStream::new(5, 0)).unwrap();
    let r = eckart_young_check(
        world.logits(),
        4,
        &FactorizationConfig::default(),
        &RandomStream::new(5, 1),
    )
    .unwrap();
    assert!(r.optimality_holds);
    assert!(r.relative_gap < 0.02, "{r:?}");
}

#[test]
fn ce_kl_examples() {
    let p = [0.2, 0.3, 0.5];
    let r = ce_kl_decomposition(&p, &p).unwrap();
    assert!(r.kl.abs() < 1e-15 && (r.cross_entropy - r.entropy).abs() < 1e-15);
    let r = ce_kl_decomposition(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
    assert!((r.cross_entropy - 2f64.ln()).abs() < 1e-15);
    assert_eq!(r.entropy, 0.0);
    assert!((r.kl - 2f64.ln()).abs() < 1e-15);
    let inf = ce_kl_decomposition(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
    assert!(inf.infinite && inf.kl.is_infinite());
    assert!(ce_kl_decomposition(&[0.5, 0.6], &[0.5, 0.5]).is_err());
    assert!(ce_kl_decomposition(&[1.0], &[0.5, 0.5]).is_err());
}

#[test]
fn rank_examples() {
    assert_eq!(numerical_rank(&Matrix::identity(5), RANK_TOL).unwrap(), 5);
    let outer = Matrix::from_fn(6, 4, |i, j| (i as f64 + 1.0) * (j as f64 - 1.5));
    assert_eq!(numerical_rank(&outer, RANK_TOL).unwrap(), 1);
}

fn arb_dist() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(1e-6f64..1.0, 1..=256).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn ce_equals_entropy_plus_kl(p in arb_dist(), seed in any::<u64>()) {
        let mut rng = RandomStream::new(seed, 0).rng();
        let w: Vec<f64> = p.iter().map(|_| rng.random_range(1e-9..1.0)).collect();
        let total: f64 = w.iter().sum();
        let q: Vec<f64> = w.iter().map(|x| x / total).collect();
        let r = ce_kl_decomposition(&p, &q).unwrap();
        prop_assert!(r.residual() < 1e-12);
        prop_assert!(r.kl >= -1e-12);
    }
}
