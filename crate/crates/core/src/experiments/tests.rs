use super::*;

fn tiny() -> RunConfig {
    RunConfig {
        m: 8,
        n: 32,
        spectrum: vec![4.0, 2.0, 1.0],
        train_pairs: 500,
        eval_queries: 40,
        steps: 60,
        r: 4,
        k: 4,
        k_list: vec![1, 5],
        beam_width: 8,
        rq_stages: 2,
        rq_base: 8,
        rq_iters: 5,
        ..RunConfig::default()
    }
}

#[test]
fn single_run_for_every_paradigm() {
    for paradigm in [
        Paradigm::Dr,
        Paradigm::Mvdr,
        Paradigm::GrCodebook,
        Paradigm::GrText,
    ] {
        let cfg = RunConfig {
            paradigm,
            channels: if paradigm == Paradigm::Mvdr { 2 } else { 1 },
            ..tiny()
        };
        let bundle = run_experiment(&cfg).unwrap();
        let t = bundle.table("metrics").unwrap();
        assert_eq!(t.rows.len(), 1, "{paradigm:?}");
        for c in [
            "hits@1", "hits@5", "ndcg@5", "mrr@5", "brier", "kl", "params",
        ] {
            let v = t.column(c).unwrap()[0];
            assert!(v.is_finite(), "{paradigm:?} {c} = {v}");
        }
        let hits = t.column("hits@5").unwrap()[0];
        assert!((0.0..=1.0).contains(&hits));
    }
}

#[test]
fn sweeps_have_one_row_per_grid_point() {
    let neg = run_experiment(&RunConfig {
        experiment: ExperimentKind::NegativesSweep,
        k_grid: vec![2, 8, 32, 128],
        ..tiny()
    })
    .unwrap();
    let t = neg.table("negatives_sweep").unwrap();
    assert_eq!(t.xs(), vec![2.0, 8.0, 32.0, 128.0]);
    assert_eq!(neg.checks.len(), 2);

    let ratio = run_experiment(&RunConfig {
        experiment: ExperimentKind::RatioSweep,
        ..tiny()
    })
    .unwrap();
    assert_eq!(
        ratio.table("ratio_sweep").unwrap().xs(),
        vec![0.0, 0.25, 0.5, 0.75, 1.0]
    );

    let dim = run_experiment(&RunConfig {
        experiment: ExperimentKind::DimSweep,
        dim_grid: vec![1, 2, 3],
        ..tiny()
    })
    .unwrap();
    assert_eq!(dim.table("dim_sweep").unwrap().rows.len(), 3);
}

#[test]
fn dense_sweeps_reject_generative_paradigms() {
    let err = run_experiment(&RunConfig {
        experiment: ExperimentKind::DimSweep,
        paradigm: Paradigm::GrCodebook,
        ..tiny()
    })
    .unwrap_err();
    assert!(matches!(err, LabError::Config { ref key, .. } if key == "paradigm"));
}

#[test]
fn corpus_scaling_rows_match_points() {
    let cfg = RunConfig {
        experiment: ExperimentKind::CorpusScaling,
        world: WorldKind::Featurized,
        feature_dim: 8,
        corpus_base: 16,
        corpus_points: 5,
        ..tiny()
    };
    let bundle = run_experiment(&cfg).unwrap();
    for name in ["corpus_scaling_dr", "corpus_scaling_gr"] {
        let t = bundle.table(name).unwrap();
        assert_eq!(t.xs(), vec![16.0, 32.0, 64.0, 128.0, 256.0]);
        assert!(t.column("kl").is_none());
    }
    assert_eq!(bundle.checks.len(), 3);
}

#[test]
fn capacity_scaling_matches_parameter_counts() {
    let cfg = RunConfig {
        experiment: ExperimentKind::CapacityScaling,
        world: WorldKind::Featurized,
        feature_dim: 8,
        capacity_grid: vec![2, 4],
        ..tiny()
    };
    let bundle = run_experiment(&cfg).unwrap();
    assert_eq!(bundle.label, "analog");
    let gr = bundle
        .table("capacity_scaling_gr")
        .unwrap()
        .column("params")
        .unwrap();
    let dr = bundle
        .table("capacity_scaling_dr")
        .unwrap()
        .column("params")
        .unwrap();
    assert_eq!(gr.len(), 2);
    for (g, d) in gr.iter().zip(&dr) {
        assert!((g - d).abs() / d <= CAPACITY_TOLERANCE, "{g} vs {d}");
    }
    assert!(bundle.all_checks_pass());
}

#[test]
fn reruns_give_identical_csvs() {
    let cfg = RunConfig {
        experiment: ExperimentKind::NegativesSweep,
        k_grid: vec![2, 8],
        ..tiny()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut ra = run_experiment(&cfg).unwrap();
    let mut rb = run_experiment(&cfg).unwrap();
    emit_report(&mut ra, a.path()).unwrap();
    emit_report(&mut rb, b.path()).unwrap();
    let csv = |d: &tempfile::TempDir| std::fs::read(d.path().join("negatives_sweep.csv")).unwrap();
    assert_eq!(csv(&a), csv(&b));
    ra.timings.clear();
    rb.timings.clear();
    assert_eq!(ra, rb);
}

#[test]
fn single_run_emits_report_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut bundle = run_experiment(&tiny()).unwrap();
    let files = emit_report(&mut bundle, dir.path()).unwrap();
    let names: Vec<String> = files
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, vec!["metrics.csv", "report.json"]);
    assert_eq!(
        load_report(&files[1]).unwrap().schema_version,
        SCHEMA_VERSION
    );
}

#[test]
fn evaluate_rejects_bad_pools() {
    let world = build_world(&tiny()).unwrap();
    let trained = train_model(&tiny(), Paradigm::Dr, &world).unwrap();
    assert!(evaluate(&tiny(), &world, &trained, 0).is_err());
    assert!(evaluate(&tiny(), &world, &trained, 33).is_err());
}
