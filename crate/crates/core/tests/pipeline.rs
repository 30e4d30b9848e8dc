use lab_core::experiments::{
    build_world, emit_report, evaluate, load_report, parse_config_str, run_experiment, train_model,
    Paradigm, RunConfig, Trained, TrainedModel,
};

fn config(extra: &str) -> RunConfig {
    let base = r#""m": 16, "N": 32, "spectrum": [12.0, 8.0, 4.0], "train_pairs": 4000, "eval_queries": 400,
        "steps": 2000, "r": 4, "K": 8, "k_list": [1, 5], "beam_width": 8, "rq_stages": 2, "rq_base": 8"#;
    let text = if extra.is_empty() {
        format!("{{{base}}}")
    } else {
        format!("{{{base}, {extra}}}")
    };
    parse_config_str(&text, &[]).unwrap()
}

#[test]
fn trained_models_beat_chance() {
    let cfg = config("");
    let world = build_world(&cfg).unwrap();
    let chance = 5.0 / cfg.n as f64;
    for paradigm in [Paradigm::Dr, Paradigm::GrCodebook, Paradigm::GrText] {
        let trained = train_model(&cfg, paradigm, &world).unwrap();
        let eval = evaluate(&cfg, &world, &trained, world.num_docs()).unwrap();
        let hits = eval.metrics.hits[1];
        assert!(
            hits > 2.0 * chance,
            "{paradigm:?}: hits@5 {hits} vs chance {chance}"
        );
        let kl = eval.kl.expect("full support");
        assert!(kl.is_finite() && kl >= 0.0, "{paradigm:?}: kl {kl}");
    }
}

#[test]
fn checkpoints_round_trip_to_identical_metrics() {
    let cfg = config(r#""paradigm": "gr_codebook""#);
    let world = build_world(&cfg).unwrap();
    for paradigm in [Paradigm::Dr, Paradigm::GrCodebook] {
        let trained = train_model(&cfg, paradigm, &world).unwrap();
        let json = serde_json::to_string(&trained.model).unwrap();
        let restored = Trained {
            model: serde_json::from_str::<TrainedModel>(&json).unwrap(),
            history: Vec::new(),
            warnings: Vec::new(),
        };
        let a = evaluate(&cfg, &world, &trained, world.num_docs()).unwrap();
        let b = evaluate(&cfg, &world, &restored, world.num_docs()).unwrap();
        assert_eq!(a.metrics, b.metrics, "{paradigm:?}");
        assert_eq!(a.kl.map(f64::to_bits), b.kl.map(f64::to_bits));
    }
}

#[test]
fn tsv_corpus_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let docs = dir.path().join("docs.tsv");
    let queries = dir.path().join("queries.tsv");
    let topics = [
        "apple orchard harvest",
        "river delta sediment",
        "violin concerto tempo",
        "glacier ice core",
    ];
    let doc_lines: Vec<String> = topics
        .iter()
        .enumerate()
        .map(|(i, t)| format!("d{i}\t{t} notes"))
        .collect();
    std::fs::write(&docs, doc_lines.join("\n")).unwrap();
    let query_lines: Vec<String> = topics
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..3).map(move |j| format!("d{i}#{j}\t{t}")))
        .collect();
    std::fs::write(&queries, query_lines.join("\n")).unwrap();

    for paradigm in ["dr", "gr_text"] {
        let cfg = config(&format!(
            r#""world": "tsv", "docs_tsv": {:?}, "queries_tsv": {:?}, "paradigm": "{paradigm}",
               "feature_dim": 64, "k_list": [1, 2], "beam_width": 4"#,
            docs.to_str().unwrap(),
            queries.to_str().unwrap()
        ));
        let bundle = run_experiment(&cfg).unwrap();
        let hits = bundle.table("metrics").unwrap().column("hits@2").unwrap()[0];
        assert!((0.0..=1.0).contains(&hits), "{paradigm}: {hits}");
    }
}

#[test]
fn emitted_report_loads_back() {
    let cfg = config(r#""experiment": "negatives_sweep", "k_grid": [2, 8]"#);
    let mut bundle = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&mut bundle, dir.path()).unwrap();
    let loaded = load_report(dir.path().join("report.json")).unwrap();
    assert_eq!(loaded.tables, bundle.tables);
    assert!(loaded.artifacts.contains_key("negatives_sweep.csv"));
}
