use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use fairchoice::io::config::{parse_config, ProtectedValues, SensitiveChoice};
use fairchoice::io::results::{
    self, atomic_write, evaluate, read_trace, summary_csv, write_results,
};
use fairchoice::io::{dataset, synthetic};
use fairchoice::simulator::Simulation;
use fairchoice::ChoiceFunction;

#[derive(Parser)]
#[command(
    name = "fairchoice",
    version,
    about = "Fairness-aware re-ranking simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay users through the base recommender, choice function and re-rankers.
    Simulate(SimulateArgs),
    /// Write a seeded synthetic dataset and a matching configuration.
    Generate(GenerateArgs),
    /// Print the protected values picked from a trial run of the base recommender.
    IdentifyProtected(IdentifyArgs),
    /// Recompute per-algorithm summaries from a trace file.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory for summary.csv, trace.csv and manifest.toml.
    #[arg(long, env = "FAIRCHOICE_OUT_DIR")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated choice functions, or `all`. Defaults to the configured one.
    #[arg(long)]
    choice: Option<String>,
    /// Evaluate users on a single thread.
    #[arg(long)]
    serial: bool,
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator description (TOML).
    #[arg(long = "config", alias = "spec")]
    spec: PathBuf,
    #[arg(long, env = "FAIRCHOICE_OUT_DIR")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct IdentifyArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the percentile for every sensitive feature.
    #[arg(long)]
    percentile: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Trace file written by `simulate`.
    #[arg(long)]
    trace: PathBuf,
    /// Where to write the recomputed summary. Printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_choices(raw: &str) -> Result<Vec<ChoiceFunction>> {
    if raw.trim() == "all" {
        return Ok(ChoiceFunction::ALL.to_vec());
    }
    let mut out = Vec::new();
    for name in raw.split(',') {
        let c: ChoiceFunction = name.trim().parse()?;
        if !out.contains(&c) {
            out.push(c);
        }
    }
    if out.is_empty() {
        bail!("no choice function given");
    }
    Ok(out)
}

fn manifest(
    config: &fairchoice::io::Config,
    choices: &[ChoiceFunction],
    prepared: &dataset::Prepared,
) -> Result<String> {
    let mut run = toml::Table::new();
    run.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    run.insert(
        "seed".into(),
        toml::Value::Integer(config.simulation.seed as i64),
    );
    run.insert(
        "choices".into(),
        toml::Value::Array(choices.iter().map(|c| c.name().into()).collect()),
    );
    run.insert(
        "users".into(),
        toml::Value::Integer(prepared.profiles.len() as i64),
    );
    run.insert(
        "items".into(),
        toml::Value::Integer(prepared.catalog.len() as i64),
    );
    let protected: Vec<toml::Value> = prepared
        .protected
        .iter()
        .map(|p| {
            let mut t = toml::Table::new();
            t.insert("feature".into(), p.feature.clone().into());
            t.insert(
                "values".into(),
                toml::Value::Array(p.values.iter().map(|v| v.clone().into()).collect()),
            );
            t.insert("lambda".into(), p.lambda.into());
            if let Some(pct) = p.percentile {
                t.insert("auto_percentile".into(), pct.into());
            }
            toml::Value::Table(t)
        })
        .collect();
    let mut root = toml::Table::new();
    root.insert("run".into(), toml::Value::Table(run));
    root.insert("config".into(), toml::Value::try_from(&config.file)?);
    root.insert("protected".into(), toml::Value::Array(protected));
    Ok(toml::to_string(&root)?)
}

fn print_summary(bytes: &[u8]) {
    print!("{}", String::from_utf8_lossy(bytes));
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut config = parse_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.set_seed(seed);
    }
    if args.serial {
        config.simulation.parallel = false;
    }
    let choices = match &args.choice {
        Some(raw) => parse_choices(raw)?,
        None => vec![config.simulation.choice],
    };
    if let [only] = choices.as_slice() {
        config.set_choice(*only);
    }
    let prepared = dataset::prepare(&config)?;
    for p in &prepared.protected {
        info!(
            "protected values of `{}`: {}",
            p.feature,
            p.values.join(", ")
        );
    }
    let sim = Simulation::new(
        config.simulation.clone(),
        &prepared.profiles,
        &prepared.catalog,
        &prepared.spec,
        &prepared.model,
    )?;
    let mut outcomes = Vec::with_capacity(choices.len());
    for &c in &choices {
        info!("running `{c}`");
        outcomes.push(sim.run_with(c)?);
    }
    let manifest = manifest(&config, &choices, &prepared)?;
    let written = write_results(&args.out, &outcomes, Some(&manifest))
        .with_context(|| format!("writing results to {}", args.out.display()))?;
    for p in &written {
        info!("wrote {}", p.display());
    }
    let summaries: Vec<_> = outcomes.iter().map(results::Summary::from).collect();
    print_summary(&summary_csv(&outcomes[0].features, &summaries)?);
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.spec)
        .with_context(|| format!("reading {}", args.spec.display()))?;
    let mut spec = synthetic::SyntheticSpec::parse(&text)
        .with_context(|| format!("parsing {}", args.spec.display()))?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let data = synthetic::write_dataset(&spec, &args.out)?;
    println!(
        "wrote {} items and {} ratings from {} users to {}",
        data.catalog.len(),
        data.ratings.len(),
        spec.users,
        args.out.display()
    );
    Ok(())
}

fn identify(args: IdentifyArgs) -> Result<()> {
    let mut config = parse_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.set_seed(seed);
    }
    if let Some(p) = args.percentile {
        if !(p > 0.0 && p < 1.0) {
            bail!("--percentile {p} must lie in (0, 1)");
        }
        let features: Vec<String> = if config.dataset.sensitive.is_empty() {
            dataset::load_catalog(&config.dataset.items, config.dataset.schema.as_ref())?
                .schema()
                .features()
                .iter()
                .map(|f| f.name.clone())
                .collect()
        } else {
            config
                .dataset
                .sensitive
                .iter()
                .map(|s| s.feature.clone())
                .collect()
        };
        let lambda = |f: &str| {
            config
                .dataset
                .sensitive
                .iter()
                .find(|s| s.feature == f)
                .map_or(fairchoice::io::config::DEFAULT_LAMBDA, |s| s.lambda)
        };
        config.dataset.sensitive = features
            .iter()
            .map(|f| SensitiveChoice {
                feature: f.clone(),
                values: ProtectedValues::Auto { percentile: p },
                lambda: lambda(f),
            })
            .collect();
    }
    let prepared = dataset::prepare(&config)?;
    println!("feature,value");
    for p in &prepared.protected {
        for v in &p.values {
            println!("{},{}", csv_cell(&p.feature), csv_cell(v));
        }
    }
    Ok(())
}

fn csv_cell(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<()> {
    let trace = read_trace(&args.trace)?;
    if trace.runs.is_empty() {
        bail!("{} has no rows", args.trace.display());
    }
    let summaries = evaluate(&trace)?;
    let bytes = summary_csv(&trace.features, &summaries)?;
    match &args.out {
        Some(path) => write_to(path, &bytes)?,
        None => print_summary(&bytes),
    }
    Ok(())
}

fn write_to(path: &Path, bytes: &[u8]) -> Result<()> {
    atomic_write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Generate(a) => generate(a),
        Command::IdentifyProtected(a) => identify(a),
        Command::Evaluate(a) => evaluate_cmd(a),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
