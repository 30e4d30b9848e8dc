//! `lab`: command-line driver for the retrieval laboratory.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use lab_core::experiments::{
    build_docids, build_world, emit_report, evaluate, load_report, parse_config, run_experiment,
    train_model, ExperimentKind, ReportBundle, RunConfig, Table, Trained,
};
use lab_core::LabError;

#[derive(Parser)]
#[command(
    name = "lab",
    version,
    about = "Dense vs generative retrieval laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the configured world and write world.json (and docids.json for GR).
    World(RunArgs),
    /// Train the configured paradigm and write checkpoint.json.
    Train(RunArgs),
    /// Evaluate checkpoint.json and write report.json plus metrics.csv.
    Eval(EvalArgs),
    /// Run the verification suite; exits 4 when any check fails.
    Verify(RunArgs),
    /// Run the configured experiment and write report.json plus one CSV per curve.
    Sweep(RunArgs),
    /// Summarize a report.json.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set K=32`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, env = "LAB_OUT_DIR", default_value = "lab-out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Defaults to `<out>/checkpoint.json`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Accepted for symmetry with the other subcommands; unused.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "LAB_OUT_DIR", default_value = "lab-out")]
    out: PathBuf,
    /// Defaults to `<out>/report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
}

enum Failure {
    Config(anyhow::Error),
    Checks(usize),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<LabError> for Failure {
    fn from(e: LabError) -> Self {
        match e {
            LabError::Config { .. } => Failure::Config(e.into()),
            other => Failure::Other(other.into()),
        }
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfig, Failure> {
    parse_config(&args.config, &args.overrides).map_err(|e| Failure::Config(anyhow::Error::new(e)))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_world(args: &RunArgs) -> Result<(), Failure> {
    let config = load_config(args)?;
    let world = build_world(&config)?;
    create_dir(&args.out)?;
    let summary = serde_json::json!({
        "config": config,
        "num_queries": world.num_queries(),
        "num_docs": world.num_docs(),
        "mean_entropy": world.posterior.as_ref().map(|p| p.mean_entropy()),
        "spectrum": world.posterior.as_ref().map(|p| p.spectrum().to_vec()),
        "train_pairs": world.train_pairs,
        "eval_pairs": world.eval_pairs,
    });
    write_json(&args.out.join("world.json"), &summary)?;
    println!(
        "world: {} queries, {} documents",
        world.num_queries(),
        world.num_docs()
    );
    if config.paradigm.is_generative() {
        let (space, warnings) = build_docids(&config, config.paradigm, &world)?;
        write_json(
            &args.out.join("docids.json"),
            &space.to_json(&world.doc_titles)?,
        )?;
        println!(
            "docids: {} ids, max length {}",
            space.len(),
            space.max_length()
        );
        warnings.iter().for_each(|w| eprintln!("warning: {w}"));
    }
    Ok(())
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Checkpoint {
    config: RunConfig,
    trained: Trained,
}

fn cmd_train(args: &RunArgs) -> Result<(), Failure> {
    let config = load_config(args)?;
    let world = build_world(&config)?;
    let trained = train_model(&config, config.paradigm, &world)?;
    create_dir(&args.out)?;
    trained
        .warnings
        .iter()
        .for_each(|w| eprintln!("warning: {w}"));
    println!(
        "trained {:?}: {} parameters, final loss {}",
        config.paradigm,
        trained.model.num_parameters(),
        trained
            .history
            .last()
            .map_or("n/a".into(), |l| format!("{l:.6}"))
    );
    write_json(
        &args.out.join("checkpoint.json"),
        &Checkpoint { config, trained },
    )?;
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Failure> {
    let config = load_config(&args.run)?;
    let path = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| args.run.out.join("checkpoint.json"));
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let checkpoint: Checkpoint =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if checkpoint.config != config {
        eprintln!("warning: checkpoint was trained with a different config; evaluating with the current one");
    }
    let world = build_world(&checkpoint.config)?;
    let eval = evaluate(&config, &world, &checkpoint.trained, world.num_docs())?;
    let mut bundle = ReportBundle::new(config);
    bundle.warnings.extend(eval.warnings.iter().cloned());
    let columns = eval.columns();
    let mut table = Table::new(
        "metrics",
        "point",
        columns.iter().map(|(c, _)| c.clone()).collect(),
    );
    table.push(0.0, columns.iter().map(|(_, v)| *v).collect())?;
    bundle.tables.push(table);
    emit_report(&mut bundle, &args.run.out)?;
    print_summary(&bundle);
    Ok(())
}

fn cmd_verify(args: &RunArgs) -> Result<(), Failure> {
    let mut config = load_config(args)?;
    config.experiment = ExperimentKind::VerifyAll;
    let mut bundle = run_experiment(&config)?;
    emit_report(&mut bundle, &args.out)?;
    print_summary(&bundle);
    let failed = bundle.checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure::Checks(failed));
    }
    Ok(())
}

fn cmd_sweep(args: &RunArgs) -> Result<(), Failure> {
    let config = load_config(args)?;
    let mut bundle = run_experiment(&config)?;
    let files = emit_report(&mut bundle, &args.out)?;
    print_summary(&bundle);
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<(), Failure> {
    let path = args
        .report
        .clone()
        .unwrap_or_else(|| args.out.join("report.json"));
    let bundle = load_report(&path)?;
    if bundle.schema_version != lab_core::experiments::SCHEMA_VERSION {
        return Err(Failure::Other(anyhow::anyhow!(
            "{}: schema version {} is not supported",
            path.display(),
            bundle.schema_version
        )));
    }
    print_summary(&bundle);
    Ok(())
}

fn print_summary(bundle: &ReportBundle) {
    println!(
        "experiment {:?} ({})",
        bundle.config.experiment, bundle.label
    );
    for table in &bundle.tables {
        println!("\n[{}]", table.name);
        print!("{}", table.to_csv());
    }
    if !bundle.checks.is_empty() {
        println!();
    }
    for check in &bundle.checks {
        println!(
            "{} {}: {}",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.detail
        );
    }
    for w in &bundle.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(total) = bundle.timings.get("total") {
        println!("\nwall clock {total:.2}s");
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::World(a) => cmd_world(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<LabError>() {
        Some(LabError::Config { .. }) => 2,
        Some(LabError::Budget(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Checks(n)) => {
            eprintln!("{n} verification check(s) failed");
            ExitCode::from(4)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
