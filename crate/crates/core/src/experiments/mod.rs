//! Experiment orchestration: configuration, sweeps, the verification suite and report emission.

mod config;
mod report;
mod runner;
mod verify;

pub use config::{
    parse_config, parse_config_str, ExperimentKind, GrParamName, Paradigm, PolicyName, RunConfig,
    WorldKind,
};
pub use report::{
    emit_report, format_sig9, load_report, sha256_hex, Check, ReportBundle, Table, SCHEMA_VERSION,
};
pub use runner::{
    build_docids, build_world, build_world_with_pool, evaluate, train_model, Evaluation, LabWorld,
    Trained, TrainedModel,
};
pub use verify::{
    bounded_tail_reports, ce_kl_max_residual, channel_rank, constant_score_gap, gradient_hygiene,
    run_verify_all, spectral_gap_reports, universality_check, GradientReport, UniversalityReport,
};

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::inputs::Inputs;

/// Largest allowed `|params_GR − params_DR| / params_DR` in capacity scaling.
pub const CAPACITY_TOLERANCE: f64 = 0.05;

/// Runs the configured experiment. Deterministic given the config, apart from `timings`.
pub fn run_experiment(config: &RunConfig) -> Result<ReportBundle> {
    config.validate()?;
    let mut bundle = ReportBundle::new(config.clone());
    let start = Instant::now();
    match config.experiment {
        ExperimentKind::Single => run_single(config, &mut bundle)?,
        ExperimentKind::NegativesSweep => {
            let grid: Vec<f64> = config.k_grid.iter().map(|&k| k as f64).collect();
            dr_sweep(
                config,
                &mut bundle,
                "negatives_sweep",
                "K",
                &grid,
                |c, x| c.k = x as usize,
            )?;
            let t = bundle.table("negatives_sweep").expect("just added").clone();
            trend_checks_negatives(config, &t, &mut bundle);
        }
        ExperimentKind::RatioSweep => {
            dr_sweep(
                config,
                &mut bundle,
                "ratio_sweep",
                "hard_ratio",
                &config.ratio_grid,
                |c, x| {
                    c.policy = PolicyName::Hard;
                    c.hard_ratio = x;
                },
            )?;
        }
        ExperimentKind::DimSweep => {
            let grid: Vec<f64> = config.dim_grid.iter().map(|&r| r as f64).collect();
            dr_sweep(config, &mut bundle, "dim_sweep", "r", &grid, |c, x| {
                c.r = x as usize
            })?;
            let t = bundle.table("dim_sweep").expect("just added");
            if let Some(kl) = t.column("kl") {
                let decreasing = kl.windows(2).all(|w| w[1] < w[0]);
                bundle.checks.push(Check::new(
                    "kl_strictly_decreasing_in_r",
                    decreasing,
                    format!("{kl:?}"),
                ));
            }
        }
        ExperimentKind::CorpusScaling => corpus_scaling(config, &mut bundle)?,
        ExperimentKind::CapacityScaling => capacity_scaling(config, &mut bundle)?,
        ExperimentKind::VerifyAll => run_verify_all(config, &mut bundle)?,
    }
    bundle
        .timings
        .insert("total".into(), start.elapsed().as_secs_f64());
    Ok(bundle)
}

fn table_from(name: &str, x: &str, points: &[(f64, Evaluation)], drop: &[&str]) -> Result<Table> {
    let columns: Vec<String> = points
        .first()
        .map(|(_, e)| {
            e.columns()
                .into_iter()
                .map(|(c, _)| c)
                .filter(|c| !drop.contains(&c.as_str()))
                .collect()
        })
        .unwrap_or_default();
    let mut table = Table::new(name, x, columns.clone());
    for (xv, e) in points {
        let cols = e.columns();
        let mut values = Vec::with_capacity(columns.len());
        for c in &columns {
            let v = cols
                .iter()
                .find(|(name, _)| name == c)
                .map(|(_, v)| *v)
                .ok_or_else(|| LabError::Invariant(format!("sweep point {xv} lacks column {c}")))?;
            values.push(v);
        }
        table.push(*xv, values)?;
    }
    Ok(table)
}

fn collect_warnings(bundle: &mut ReportBundle, warnings: impl IntoIterator<Item = String>) {
    for w in warnings {
        if !bundle.warnings.contains(&w) {
            bundle.warnings.push(w);
        }
    }
}

fn run_single(config: &RunConfig, bundle: &mut ReportBundle) -> Result<()> {
    let t = Instant::now();
    let world = build_world(config)?;
    bundle
        .timings
        .insert("world".into(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    let trained = train_model(config, config.paradigm, &world)?;
    bundle
        .timings
        .insert("train".into(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    let eval = evaluate(config, &world, &trained, world.num_docs())?;
    bundle
        .timings
        .insert("eval".into(), t.elapsed().as_secs_f64());
    collect_warnings(
        bundle,
        trained
            .warnings
            .iter()
            .cloned()
            .chain(eval.warnings.iter().cloned()),
    );
    bundle
        .tables
        .push(table_from("metrics", "point", &[(0.0, eval)], &[])?);
    Ok(())
}

/// One DR training run per grid value on a shared world; everything else stays fixed.
fn dr_sweep(
    config: &RunConfig,
    bundle: &mut ReportBundle,
    name: &str,
    x: &str,
    grid: &[f64],
    apply: impl Fn(&mut RunConfig, f64) + Sync,
) -> Result<()> {
    if config.paradigm.is_generative() {
        return Err(LabError::Config {
            key: "paradigm".into(),
            message: format!("{name} trains dense retrievers; use dr or mvdr"),
        });
    }
    let t = Instant::now();
    let world = build_world(config)?;
    let points: Vec<(f64, Evaluation)> = grid
        .par_iter()
        .map(|&xv| {
            let mut c = config.clone();
            apply(&mut c, xv);
            c.validate()?;
            let trained = train_model(&c, c.paradigm, &world)?;
            Ok((xv, evaluate(&c, &world, &trained, world.num_docs())?))
        })
        .collect::<Result<_>>()?;
    bundle
        .timings
        .insert(name.into(), t.elapsed().as_secs_f64());
    collect_warnings(bundle, points.iter().flat_map(|(_, e)| e.warnings.clone()));
    bundle.tables.push(table_from(name, x, &points, &[])?);
    Ok(())
}

fn trend_checks_negatives(config: &RunConfig, table: &Table, bundle: &mut ReportBundle) {
    let kmax = *config.k_list.iter().max().expect("validated");
    if let Some(hits) = table.column(&format!("hits@{kmax}")) {
        let drops: Vec<f64> = hits
            .windows(2)
            .map(|w| w[0] - w[1])
            .filter(|d| *d > 0.0)
            .collect();
        let ok = drops.is_empty() || (drops.len() == 1 && drops[0] <= 0.005);
        bundle.checks.push(Check::new(
            format!("hits@{kmax}_non_decreasing_in_K"),
            ok,
            format!("{hits:?}"),
        ));
    }
    if let Some(brier) = table.column("brier") {
        let ok = brier.last() < brier.first();
        bundle.checks.push(Check::new(
            "brier_improves_first_to_last_K",
            ok,
            format!("{brier:?}"),
        ));
    }
}

fn dense_paradigm(config: &RunConfig) -> Paradigm {
    if config.paradigm.is_generative() {
        Paradigm::Dr
    } else {
        config.paradigm
    }
}

fn generative_paradigm(config: &RunConfig) -> Paradigm {
    if config.paradigm.is_generative() {
        config.paradigm
    } else {
        Paradigm::GrCodebook
    }
}

/// Trains once on the base corpus, then evaluates against nested pools grown geometrically.
fn corpus_scaling(config: &RunConfig, bundle: &mut ReportBundle) -> Result<()> {
    if config.world == WorldKind::Tsv {
        return Err(LabError::Config {
            key: "world".into(),
            message: "corpus_scaling needs a synthetic world".into(),
        });
    }
    let base = config.corpus_base;
    let pools: Vec<usize> = (0..config.corpus_points)
        .map(|j| base * config.corpus_growth.pow(j as u32))
        .collect();
    let universe = *pools.last().expect("at least one point");
    let t = Instant::now();
    let world = build_world_with_pool(config, base, universe)?;
    bundle
        .timings
        .insert("world".into(), t.elapsed().as_secs_f64());

    let mut base_only = world.clone();
    base_only.docs = world.docs.truncate(base);
    let t = Instant::now();
    let (dense, generative) = rayon::join(
        || train_model(config, dense_paradigm(config), &base_only),
        || train_model(config, generative_paradigm(config), &world),
    );
    let (dense, generative) = (dense?, generative?);
    bundle
        .timings
        .insert("train".into(), t.elapsed().as_secs_f64());
    collect_warnings(
        bundle,
        dense.warnings.iter().chain(&generative.warnings).cloned(),
    );

    let t = Instant::now();
    for (name, trained) in [
        ("corpus_scaling_dr", &dense),
        ("corpus_scaling_gr", &generative),
    ] {
        let points: Vec<(f64, Evaluation)> = pools
            .par_iter()
            .map(|&n| Ok((n as f64, evaluate(config, &world, trained, n)?)))
            .collect::<Result<_>>()?;
        collect_warnings(bundle, points.iter().flat_map(|(_, e)| e.warnings.clone()));
        bundle.tables.push(table_from(name, "N", &points, &["kl"])?);
    }
    bundle
        .timings
        .insert("eval".into(), t.elapsed().as_secs_f64());

    let dr = bundle.table("corpus_scaling_dr").expect("added").clone();
    let gr = bundle.table("corpus_scaling_gr").expect("added").clone();
    let drop = |t: &Table| {
        let h = t.column("hits@1");
        h.map(|h| h[0] - h[h.len() - 1])
    };
    if let (Some(dd), Some(gd)) = (drop(&dr), drop(&gr)) {
        bundle.checks.push(Check::new(
            "dr_hits@1_drop_exceeds_gr",
            dd > gd,
            format!("DR drop {dd}, GR drop {gd}"),
        ));
    }
    if let (Some(db), Some(gb)) = (dr.column("brier"), gr.column("brier")) {
        bundle.checks.push(Check::new(
            "dr_brier_degrades_monotonically",
            db.windows(2).all(|w| w[1] > w[0]),
            format!("{db:?}"),
        ));
        bundle.checks.push(Check::new(
            "gr_brier_within_1.5x_of_base",
            gb.iter().all(|&b| b <= 1.5 * gb[0]),
            format!("{gb:?}"),
        ));
    }
    Ok(())
}

/// Trainable parameters per unit of DR dimension `r`.
fn dense_params_per_dim(config: &RunConfig, paradigm: Paradigm, world: &LabWorld) -> usize {
    let channels = if paradigm == Paradigm::Mvdr {
        config.channels
    } else {
        1
    };
    let side = |inputs: &Inputs| match inputs {
        Inputs::Indexed(n) => *n,
        Inputs::Features(f) => f.cols(),
    };
    channels * (side(&world.queries) + side(&world.docs))
}

/// Featurized GR at each hidden width against DR whose dimension matches its parameter count.
fn capacity_scaling(config: &RunConfig, bundle: &mut ReportBundle) -> Result<()> {
    if config.projection_dim.is_some() {
        return Err(LabError::Config {
            key: "projection_dim".into(),
            message: "capacity_scaling sizes DR by r alone".into(),
        });
    }
    bundle.label = "analog".into();
    let t = Instant::now();
    let world = build_world(config)?;
    let dense = dense_paradigm(config);
    let generative = generative_paradigm(config);
    let per_dim = dense_params_per_dim(config, dense, &world);
    let results: Vec<((f64, Evaluation), (f64, Evaluation))> = config
        .capacity_grid
        .par_iter()
        .map(|&h| {
            let mut gc = config.clone();
            gc.gr_param = GrParamName::Featurized;
            gc.hidden_width = Some(h);
            let gr = train_model(&gc, generative, &world)?;
            let gr_params = gr.model.num_parameters();
            let mut dc = config.clone();
            dc.r = ((gr_params as f64 / per_dim as f64).round() as usize).max(1);
            let dr = train_model(&dc, dense, &world)?;
            let ge = evaluate(&gc, &world, &gr, world.num_docs())?;
            let de = evaluate(&dc, &world, &dr, world.num_docs())?;
            Ok(((h as f64, ge), (h as f64, de)))
        })
        .collect::<Result<_>>()?;
    bundle
        .timings
        .insert("capacity_scaling".into(), t.elapsed().as_secs_f64());
    let (gr_points, dr_points): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    collect_warnings(
        bundle,
        gr_points
            .iter()
            .chain(&dr_points)
            .flat_map(|(_, e)| e.warnings.clone()),
    );
    let mismatches: Vec<f64> = gr_points
        .iter()
        .zip(&dr_points)
        .map(|((_, g), (_, d))| {
            (g.parameters as f64 - d.parameters as f64).abs() / d.parameters as f64
        })
        .collect();
    bundle.checks.push(Check::new(
        "parameter_counts_matched",
        mismatches.iter().all(|&m| m <= CAPACITY_TOLERANCE),
        format!("relative mismatch per point {mismatches:?}"),
    ));
    bundle.tables.push(table_from(
        "capacity_scaling_gr",
        "hidden_width",
        &gr_points,
        &[],
    )?);
    bundle.tables.push(table_from(
        "capacity_scaling_dr",
        "hidden_width",
        &dr_points,
        &[],
    )?);
    Ok(())
}

#[cfg(test)]
mod tests;
