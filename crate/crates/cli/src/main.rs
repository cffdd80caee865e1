use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand, ValueEnum};
use micromeasure::communities::{build_graph, louvain, LouvainConfig};
use micromeasure::epidemic::read_populations;
use micromeasure::mobility::{compare_models, fit, infer_homes, MobilityModel, ModelKind};
use micromeasure::scenario::{self, GenerateConfig, RunManifest, ScenarioConfig};
use micromeasure::trace::{filter_users, split_train_test, SubprefMap, Trace, TraceFormat};
use micromeasure::Error;

#[derive(Parser)]
#[command(name = "micromeasure", version, about = "Mobility-driven SIR simulation with personalized mitigation strategies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a mobility model on a call-record trace.
    Fit(FitArgs),
    /// Partition a mobility model's antenna graph into communities.
    Communities(CommunitiesArgs),
    /// Run one scenario ensemble.
    Simulate(SimulateArgs),
    /// Run several strategies on a shared scenario base.
    Compare(CompareArgs),
    /// Sample a synthetic trace from a planted country.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    HomeAntennaTime,
    SubprefTime,
    TimeOnly,
    Markov,
}

impl From<Kind> for ModelKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::HomeAntennaTime => ModelKind::HomeAntennaTime,
            Kind::SubprefTime => ModelKind::SubPrefTime,
            Kind::TimeOnly => ModelKind::TimeOnly,
            Kind::Markov => ModelKind::Markov,
        }
    }
}

#[derive(clap::Args)]
struct FitArgs {
    /// `user_id,antenna_id,timestamp` CSV.
    #[arg(long)]
    trace: PathBuf,
    /// Number of antennas; ids run from 1 to this value.
    #[arg(long)]
    antennas: usize,
    /// `antenna_id,subpref_id` CSV, required by the sub-prefecture model.
    #[arg(long)]
    sp_map: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "home-antenna-time")]
    kind: Kind,
    /// Dirichlet concentration.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Keep only users with more calls than days in this window.
    #[arg(long)]
    observation_days: Option<u32>,
    /// Also score every model kind on a held-out share of each user's records.
    #[arg(long, value_name = "FRACTION")]
    evaluate: Option<f64>,
    /// Seed of the train/test split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the fitted model (JSON).
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(clap::Args)]
struct CommunitiesArgs {
    #[arg(long)]
    model: PathBuf,
    /// `antenna_id,population` CSV.
    #[arg(long)]
    population: PathBuf,
    /// Flow below this weight is dropped.
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    resolution: f64,
    #[arg(long, default_value_t = 10)]
    restarts: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving communities.csv and graph.csv.
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// Scenario file (TOML).
    #[arg(required_unless_present = "from_manifest", conflicts_with = "from_manifest")]
    config: Option<PathBuf>,
    /// Repeat the run recorded in a manifest.
    #[arg(long)]
    from_manifest: Option<PathBuf>,
    /// Override the output directory.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(clap::Args)]
struct CompareArgs {
    /// Scenario files that differ only in their strategy; a single file lists
    /// its cells under `[[compare]]`.
    #[arg(required = true)]
    configs: Vec<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(clap::Args)]
struct GenerateArgs {
    /// Generator settings (TOML).
    config: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Communities(a) => run_communities(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Compare(a) => run_compare(a),
        Command::Generate(a) => run_generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

/// Print a line to stdout; a closed pipe ends output quietly.
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

fn staged<T>(stage: &'static str, r: micromeasure::Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stage { .. } => e,
        e => e.in_stage(stage),
    })
    .map_err(Into::into)
}

fn run_fit(a: FitArgs) -> Result<()> {
    let parsed = staged("trace", Trace::parse(&a.trace, TraceFormat::Csv, a.antennas))?;
    if !parsed.malformed.is_empty() {
        eprintln!("skipped {} malformed line(s), first at line {}", parsed.malformed.len(), parsed.malformed[0]);
    }
    let mut trace = parsed.trace;
    if let Some(p) = &a.sp_map {
        trace = trace.with_sp_map(staged("trace", SubprefMap::read(p, a.antennas))?);
    }
    if let Some(days) = a.observation_days {
        trace = staged("trace", filter_users(&trace, days))?;
    }
    let homes = infer_homes(&trace);
    let model = staged("mobility", fit(&trace, &homes, a.kind.into(), a.alpha))?;
    staged("output", model.save(&a.output))?;
    eprintln!("{} users, {} records -> {}", trace.users.len(), trace.record_count(), a.output.display());
    if let Some(fraction) = a.evaluate {
        let (train, test) = staged("evaluate", split_train_test(&trace, fraction, a.seed))?;
        let reports = staged("evaluate", compare_models(&train, &test, a.alpha))?;
        out!("model,avg_loglik,n_test");
        for r in reports {
            out!("{},{:?},{}", r.kind, r.avg_loglik, r.n_test);
        }
    }
    Ok(())
}

fn run_communities(a: CommunitiesArgs) -> Result<()> {
    let model = staged("mobility", MobilityModel::load(&a.model))?;
    let populations = staged("population", read_populations(&a.population, model.antenna_count()))?;
    let graph = staged("communities", build_graph(&model, &populations, a.epsilon))?;
    let config = LouvainConfig {
        resolution: a.resolution,
        seed: a.seed,
        restarts: a.restarts,
    };
    let result = louvain(&graph, &config);
    std::fs::create_dir_all(&a.output).map_err(|e| anyhow!("stage `output` failed: creating {}: {e}", a.output.display()))?;
    write_with(&a.output.join("communities.csv"), |f| result.assignment.write_csv(f))?;
    write_with(&a.output.join("graph.csv"), |f| graph.write_csv(f))?;
    out!("communities={}", result.assignment.count());
    out!("modularity={:?}", result.modularity);
    Ok(())
}

fn write_with(path: &Path, write: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| anyhow!("stage `output` failed: creating {}: {e}", path.display()))?;
    let mut out = std::io::BufWriter::new(file);
    write(&mut out)
        .and_then(|()| out.flush())
        .map_err(|e| anyhow!("stage `output` failed: writing {}: {e}", path.display()))
}

fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    staged("config", scenario::load_config(path))
}

fn report(manifest: &RunManifest, root: &Path) {
    for f in &manifest.outputs {
        out!("{}", root.join(&f.path).display());
    }
}

fn run_simulate(a: SimulateArgs) -> Result<()> {
    let manifest = match (&a.config, &a.from_manifest) {
        (_, Some(m)) => {
            let recorded = staged("config", RunManifest::load(m))?;
            staged("rerun", scenario::rerun(&recorded, a.output.as_deref()))?
        }
        (Some(c), None) => {
            let mut cfg = load_scenario(c)?;
            if let Some(o) = a.output {
                cfg.output = o;
            }
            staged("simulate", scenario::run_scenario(&cfg))?
        }
        (None, None) => unreachable!("clap requires one of them"),
    };
    report(&manifest, &manifest.config.output);
    Ok(())
}

fn run_compare(a: CompareArgs) -> Result<()> {
    let cfgs = a.configs.iter().map(|p| load_scenario(p)).collect::<Result<Vec<_>>>()?;
    let (mut base, cells) = staged("compare", scenario::common_base(&cfgs))?;
    if let Some(o) = a.output {
        base.output = o;
    }
    let manifest = staged("compare", scenario::compare_strategies(&base, &cells))?;
    report(&manifest, &base.output);
    Ok(())
}

fn run_generate(a: GenerateArgs) -> Result<()> {
    let cfg = staged("config", GenerateConfig::load(&a.config))?;
    for p in staged("generate", scenario::generate(&cfg, &a.output))? {
        out!("{}", p.display());
    }
    Ok(())
}
