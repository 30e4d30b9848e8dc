//! The verification suite: bound checks, exact identities and gradient hygiene.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::report::{Check, ReportBundle};
use super::runner::root_stream;
use crate::dense::{
    local_softmax_loss, rank_by_score, DrConfig, DrModel, NegativePolicy, ProjectionInit,
};
use crate::docid::{
    assign_unique_docids, build_trie, codebook_docids, text_docids, DocidMode, DocidSpace,
};
use crate::error::Result;
use crate::eval::tv_distance;
use crate::gr::{constrained_beam_search, GrConfig, GrModel, GrParamKind};
use crate::inputs::{Inputs, Item};
use crate::numerics::{
    finite_diff_grad, relative_error, Gradients, Matrix, Parameterized, RandomStream,
};
use crate::theory::{
    ce_kl_decomposition, check_bernstein_tail, eckart_young_check, estimate_gap, numerical_rank,
    proposal_matrix, spectral_tail, FactorizationConfig, GapConfig, GapReport, TailConfig,
    TailReport, RANK_TOL,
};
use crate::world::{make_spectral_world, GroundTruthPosterior};

/// Monte Carlo gap of a world whose scores are all equal; exactly `ln(N/K)` per trial.
pub fn constant_score_gap(
    num_docs: usize,
    k: usize,
    trials: usize,
    stream: &RandomStream,
) -> Result<GapReport> {
    let logits = Matrix::zeros(1, num_docs);
    let world = GroundTruthPosterior::from_logits(logits.clone())?;
    let proposals = proposal_matrix(&logits, &NegativePolicy::uniform())?;
    let cfg = GapConfig {
        num_candidates: k,
        trials,
        delta_samples: 100,
    };
    estimate_gap(&world, &logits, 1.0, &proposals, &cfg, stream)
}

/// Gap reports for `S = S⋆` on one spectral world, for each `K` under uniform and hard proposals.
pub fn spectral_gap_reports(
    world: &GroundTruthPosterior,
    ks: &[usize],
    hard: NegativePolicy,
    trials: usize,
    stream: &RandomStream,
) -> Result<Vec<GapReport>> {
    let scores = world.logits();
    let mut out = Vec::new();
    for (pi, policy) in [NegativePolicy::uniform(), hard].iter().enumerate() {
        let proposals = proposal_matrix(scores, policy)?;
        for (ki, &k) in ks.iter().enumerate() {
            let cfg = GapConfig {
                num_candidates: k,
                trials,
                delta_samples: 2000,
            };
            let s = stream.derive((pi * ks.len() + ki) as u64);
            out.push(estimate_gap(world, scores, 1.0, &proposals, &cfg, &s)?);
        }
    }
    Ok(out)
}

/// Tail reports for one query with scores uniform on `[0, 2]` and a uniform proposal.
pub fn bounded_tail_reports(
    ks: &[usize],
    epsilon: f64,
    trials: usize,
    stream: &RandomStream,
) -> Result<Vec<TailReport>> {
    let mut rng = stream.derive(0).rng();
    let scores: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..2.0)).collect();
    let proposal = vec![1.0 / scores.len() as f64; scores.len()];
    ks.iter()
        .enumerate()
        .map(|(i, &k)| {
            let cfg = TailConfig {
                num_samples: k,
                epsilon,
                trials,
                moment_samples: 200_000,
            };
            check_bernstein_tail(&scores, 1.0, &proposal, &cfg, &stream.derive(1 + i as u64))
        })
        .collect()
}

/// Largest `|CE − H − KL|` over `pairs` random distribution pairs with support at most 256.
pub fn ce_kl_max_residual(pairs: usize, stream: &RandomStream) -> Result<f64> {
    let mut rng = stream.rng();
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let n = rng.random_range(1..=256);
        let mut draw = |zero_prob: f64| {
            let mut v: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.random_bool(zero_prob) {
                        0.0
                    } else {
                        -rng.random_range(1e-12f64..1.0).ln()
                    }
                })
                .collect();
            if v.iter().all(|&x| x == 0.0) {
                v[0] = 1.0;
            }
            let total: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= total);
            v
        };
        let p = draw(0.2);
        let q = draw(0.0);
        worst = worst.max(ce_kl_decomposition(&p, &q)?.residual());
    }
    Ok(worst)
}

/// Numerical rank of a seeded `c`-channel, dimension-`r` score matrix over 64×64 items.
pub fn channel_rank(channels: usize, dim: usize, stream: &RandomStream) -> Result<usize> {
    let cfg = DrConfig {
        dim,
        channels,
        temperature: 1.0,
        init_scale: 1.0,
    };
    let items = Inputs::Indexed(64);
    let model = DrModel::new(&cfg, &items, &items, stream)?;
    numerical_rank(&model.score_matrix(&items, &items)?, RANK_TOL)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniversalityReport {
    pub num_docs: usize,
    pub mode: DocidMode,
    pub max_tv: f64,
    pub beam_matches: bool,
}

/// Exact trie model on a spectral world: TV to the truth per query, and beam search versus enumeration.
pub fn universality_check(
    num_docs: usize,
    mode: DocidMode,
    stream: &RandomStream,
) -> Result<UniversalityReport> {
    let world = make_spectral_world(8, num_docs, &[6.0, 4.0, 2.0], &stream.derive(0))?;
    let space: DocidSpace = match mode {
        DocidMode::Codebook => {
            codebook_docids(&world.logits().transpose(), 2, 4, 20, &stream.derive(1))?.1
        }
        // repeated titles exercise the collision suffix
        DocidMode::Text => text_docids(
            &(0..num_docs)
                .map(|j| format!("t{}", j / 2))
                .collect::<Vec<_>>(),
        )?,
    };
    let model = GrModel::exact_from_world(&world, build_trie(&space)?)?;
    let k = num_docs.min(10);
    let mut max_tv = 0.0f64;
    let mut beam_matches = true;
    for q in 0..world.num_queries() {
        let p = model.leaf_posterior(Item::Index(q))?;
        max_tv = max_tv.max(tv_distance(world.row(q), &p)?);
        let enumerated: Vec<usize> = rank_by_score(&p).into_iter().take(k).collect();
        let beam = constrained_beam_search(&model, Item::Index(q), num_docs, k, None)?;
        let decoded: Vec<usize> = beam.hits.iter().map(|h| h.doc).collect();
        beam_matches &= decoded == enumerated
            && beam
                .hits
                .iter()
                .all(|h| (h.probability - p[h.doc]).abs() <= 1e-12);
    }
    Ok(UniversalityReport {
        num_docs,
        mode,
        max_tv,
        beam_matches,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub name: String,
    pub points: usize,
    pub max_relative_error: f64,
}

fn fd_error<M: Parameterized + Clone>(
    model: &M,
    loss: impl Fn(&M) -> Result<(f64, Gradients)>,
) -> Result<f64> {
    let (_, grads) = loss(model)?;
    let analytic = model.densify(&grads);
    let numeric = finite_diff_grad(
        |x| {
            let mut probe = model.clone();
            probe.assign_flat(x);
            loss(&probe).map_or(f64::NAN, |(l, _)| l)
        },
        &model.flatten(),
        1e-6,
    );
    Ok(relative_error(&analytic, &numeric, 1e-4))
}

fn dr_case(
    name: &str,
    points: usize,
    stream: &RandomStream,
    features: bool,
    channels: usize,
    projection: Option<usize>,
) -> Result<GradientReport> {
    let (m, n) = (4, 7);
    let mut worst = 0.0f64;
    for p in 0..points {
        let s = stream.derive(p as u64);
        let (queries, docs) = if features {
            (
                Inputs::Features(s.derive(1).gaussian_matrix(m, 5, 1.0)),
                Inputs::Features(s.derive(2).gaussian_matrix(n, 5, 1.0)),
            )
        } else {
            (Inputs::Indexed(m), Inputs::Indexed(n))
        };
        let cfg = DrConfig {
            dim: 3,
            channels,
            temperature: 0.7,
            init_scale: 0.8,
        };
        let mut model = DrModel::new(&cfg, &queries, &docs, &s.derive(3))?;
        if let Some(d) = projection {
            model = model.project_embeddings(d, ProjectionInit::Random(s.derive(4)))?;
        }
        let mut rng = s.derive(5).rng();
        let q = rng.random_range(0..m);
        let pos = rng.random_range(0..n);
        let negs: Vec<usize> = (0..4).map(|_| rng.random_range(0..n)).collect();
        let err = fd_error(&model, |mdl: &DrModel| {
            let items: Vec<Item<'_>> = negs.iter().map(|&d| docs.item(d)).collect();
            local_softmax_loss(mdl, queries.item(q), docs.item(pos), &items)
        })?;
        worst = worst.max(err);
    }
    Ok(GradientReport {
        name: name.into(),
        points,
        max_relative_error: worst,
    })
}

fn gr_case(
    name: &str,
    points: usize,
    stream: &RandomStream,
    param: GrParamKind,
) -> Result<GradientReport> {
    let codes: Vec<Vec<u32>> = vec![
        vec![0, 1],
        vec![0, 2],
        vec![1, 0],
        vec![1, 1],
        vec![2, 2],
        vec![0, 1],
        vec![2, 0],
    ];
    let space = assign_unique_docids(&codes, 3, DocidMode::Codebook)?;
    let trie = build_trie(&space)?;
    let (m, f) = (4, 5);
    let mut worst = 0.0f64;
    for p in 0..points {
        let s = stream.derive(p as u64);
        let features = s.derive(1).gaussian_matrix(m, f, 1.0);
        let cfg = GrConfig {
            param,
            init_scale: 0.8,
        };
        let mut model = GrModel::new(&cfg, trie.clone(), m, f, &s.derive(2))?;
        if model.is_tabular() {
            // zero-initialized tables would make every check trivially symmetric
            let mut rng = s.derive(3).rng();
            let theta: Vec<f64> = (0..model.num_parameters())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            model.assign_flat(&theta);
        }
        let mut rng = s.derive(4).rng();
        let q = rng.random_range(0..m);
        let doc = rng.random_range(0..codes.len());
        let item = if model.is_tabular() {
            Item::Index(q)
        } else {
            Item::Features(features.row(q))
        };
        worst = worst.max(fd_error(&model, |mdl: &GrModel| mdl.nll_loss(item, doc))?);
    }
    Ok(GradientReport {
        name: name.into(),
        points,
        max_relative_error: worst,
    })
}

/// Finite-difference checks of every trainable loss at `points` seeded points each.
pub fn gradient_hygiene(points: usize, stream: &RandomStream) -> Result<Vec<GradientReport>> {
    Ok(vec![
        dr_case("dr_tabular", points, &stream.derive(1), false, 1, None)?,
        dr_case("dr_linear", points, &stream.derive(2), true, 1, None)?,
        dr_case("mvdr_linear", points, &stream.derive(3), true, 3, None)?,
        dr_case("dr_projected", points, &stream.derive(4), false, 1, Some(4))?,
        dr_case(
            "mvdr_projected",
            points,
            &stream.derive(5),
            true,
            2,
            Some(2),
        )?,
        gr_case(
            "gr_tabular",
            points,
            &stream.derive(6),
            GrParamKind::Tabular,
        )?,
        gr_case(
            "gr_featurized",
            points,
            &stream.derive(7),
            GrParamKind::Featurized { hidden_width: None },
        )?,
        gr_case(
            "gr_hidden",
            points,
            &stream.derive(8),
            GrParamKind::Featurized {
                hidden_width: Some(3),
            },
        )?,
    ])
}

/// Runs the whole suite and records one check per property.
pub fn run_verify_all(config: &RunConfig, bundle: &mut ReportBundle) -> Result<()> {
    let root = root_stream(config).derive(9);
    let trials = config.verify_trials;

    let constant = constant_score_gap(1000, 10, trials.min(10_000), &root.derive(1))?;
    let target = 100f64.ln();
    bundle.checks.push(Check::new(
        "constant_score_tightness",
        (constant.gap - target).abs() <= 1e-9,
        format!("gap {} vs ln 100 = {target}", constant.gap),
    ));
    bundle.gap_reports.push(constant);

    let hard = NegativePolicy::hard(config.hard_ratio, config.hard_pool_size)?;
    let gap_sets: Vec<Vec<GapReport>> = (0..config.verify_worlds)
        .into_par_iter()
        .map(|w| {
            let s = root.derive(100 + w as u64);
            let world = make_spectral_world(config.m, config.n, &config.spectrum, &s.derive(0))?;
            spectral_gap_reports(&world, &[8, 32], hard, trials, &s.derive(1))
        })
        .collect::<Result<_>>()?;
    let gaps: Vec<GapReport> = gap_sets.into_iter().flatten().collect();
    let worst = gaps
        .iter()
        .map(|g| g.lower_slack / g.slack_standard_error.max(1e-300))
        .fold(f64::INFINITY, f64::min);
    bundle.checks.push(Check::new(
        "gap_bound",
        gaps.iter().all(|g| g.holds(3.0)),
        format!(
            "{} cases, smallest slack {worst:.3} standard errors",
            gaps.len()
        ),
    ));
    bundle.gap_reports.extend(gaps);

    let tails = bounded_tail_reports(
        &[8, 32, 128],
        config.verify_epsilon,
        trials,
        &root.derive(2),
    )?;
    let monotone = tails.windows(2).all(|w| w[1].frequency <= w[0].frequency);
    bundle.checks.push(Check::new(
        "bernstein_tail",
        tails.iter().all(TailReport::passes) && monotone,
        tails
            .iter()
            .map(|t| format!("K={}: {} <= {:.3e}", t.num_samples, t.frequency, t.bound))
            .collect::<Vec<_>>()
            .join("; "),
    ));
    bundle.tail_reports.extend(tails);

    let residual = ce_kl_max_residual(10_000, &root.derive(3))?;
    bundle.checks.push(Check::new(
        "ce_kl_identity",
        residual < 1e-12,
        format!("max residual {residual:e}"),
    ));
    bundle
        .ce_kl
        .push(ce_kl_decomposition(&[0.5, 0.25, 0.25], &[0.25, 0.5, 0.25])?);

    let diag_tail = spectral_tail(&Matrix::from_diag(&[3.0, 2.0, 1.0]), 2)?;
    let spectrum: Vec<f64> = (0..16).map(|i| 10.0 * 0.7f64.powi(i)).collect();
    let ey: Vec<_> = (0..config.verify_worlds)
        .into_par_iter()
        .flat_map_iter(|w| [2usize, 4, 8].into_iter().map(move |r| (w, r)))
        .map(|(w, r)| {
            let s = root.derive(200 + w as u64);
            let world = make_spectral_world(16, 32, &spectrum, &s.derive(0))?;
            eckart_young_check(
                world.logits(),
                r,
                &FactorizationConfig::default(),
                &s.derive(r as u64),
            )
        })
        .collect::<Result<_>>()?;
    bundle.checks.push(Check::new(
        "eckart_young",
        (diag_tail - 1.0).abs() <= 1e-12
            && ey
                .iter()
                .all(|e| e.optimality_holds && e.relative_gap < 0.02),
        format!(
            "diag tail {diag_tail}; worst relative gap {:.2e}",
            ey.iter()
                .map(|e| e.relative_gap)
                .fold(f64::NEG_INFINITY, f64::max)
        ),
    ));
    bundle.eckart_young.extend(ey);

    let mut rank_ok = true;
    let mut ranks = Vec::new();
    for (i, (c, r)) in [(1, 4), (2, 3), (3, 2)].into_iter().enumerate() {
        let rank = channel_rank(c, r, &root.derive(300 + i as u64))?;
        rank_ok &= rank <= c * r;
        ranks.push(format!("c={c} r={r}: {rank}"));
    }
    bundle
        .checks
        .push(Check::new("channel_rank", rank_ok, ranks.join("; ")));

    let mut universal_ok = true;
    let mut details = Vec::new();
    for n in [16, 256] {
        for mode in [DocidMode::Codebook, DocidMode::Text] {
            let u = universality_check(n, mode, &root.derive(400 + n as u64))?;
            universal_ok &= u.max_tv <= 1e-12 && u.beam_matches;
            details.push(format!(
                "N={n} {mode:?}: tv {:.1e} beam {}",
                u.max_tv, u.beam_matches
            ));
        }
    }
    bundle
        .checks
        .push(Check::new("universality", universal_ok, details.join("; ")));

    let grads = gradient_hygiene(20, &root.derive(5))?;
    bundle.checks.push(Check::new(
        "gradient_hygiene",
        grads.iter().all(|g| g.max_relative_error < 1e-4),
        grads
            .iter()
            .map(|g| format!("{}: {:.1e}", g.name, g.max_relative_error))
            .collect::<Vec<_>>()
            .join("; "),
    ));
    Ok(())
}
