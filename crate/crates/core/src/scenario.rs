//! Declarative scenarios: configuration, the full pipeline from mobility
//! data to ensemble metrics, strategy comparisons and run manifests.
//!
//! A scenario is a TOML file. Relative paths are resolved against the
//! directory of the file. Every run `r` of an ensemble draws from the seed
//! `derive_seed(seed, r, "run")`, so strategy cells of a comparison share
//! their random numbers run by run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::communities::{build_graph, louvain, CommunityAssignment, LouvainConfig};
use crate::epidemic::{read_populations, run, EpidemicParams, PopulationSetup, RunOptions, RunRecord, SeedInfectives};
use crate::metrics::{comparison_row, ensemble_metrics, fmt, EnsembleMetrics, COMPARISON_HEADER};
use crate::mobility::{fit, infer_homes, MobilityModel, ModelKind};
use crate::seed::derive_seed;
use crate::strategies::{Strategy, StrategyConfig};
use crate::synth::CountrySpec;
use crate::time::Weekday;
use crate::trace::{filter_users, generate_trace, AntennaId, GeneratorParams, SubprefMap, Trace, TraceFormat};
use crate::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;
const MANIFEST_FORMAT: &str = "micromeasure-manifest";

/// Infective seed at the antennas used when the country is large enough.
const DEFAULT_SEEDS: [(u32, u64); 5] = [(57, 5), (146, 5), (330, 5), (836, 4), (926, 4)];
const DEFAULT_SEED_SCALE: u32 = 1231;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "defaults::version")]
    pub version: u32,
    /// Master seed.
    #[serde(default)]
    pub seed: u64,
    /// Number of runs.
    #[serde(default = "defaults::one")]
    pub ensemble: usize,
    /// Worker threads for the ensemble; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "defaults::output")]
    pub output: PathBuf,
    /// Also write per-region counts of every run.
    #[serde(default)]
    pub record_regions: bool,
    pub mobility: MobilityConfig,
    #[serde(default)]
    pub population: PopulationConfig,
    #[serde(default)]
    pub epidemic: EpidemicConfig,
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub communities: CommunitiesConfig,
    /// Strategy cells of a comparison.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compare: Vec<StrategyConfig>,
}

mod defaults {
    use std::path::PathBuf;

    pub fn version() -> u32 {
        super::CONFIG_VERSION
    }
    pub fn one() -> usize {
        1
    }
    pub fn output() -> PathBuf {
        PathBuf::from("output")
    }
    pub fn alpha() -> f64 {
        0.5
    }
}

/// Where the mobility model comes from. Exactly one of `model`, `trace` and
/// `synthetic` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilityConfig {
    /// A saved model (JSON).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// A call-record CSV to fit a model on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    /// Number of antennas of `trace`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub antennas: Option<usize>,
    /// Sub-prefecture map (`antenna_id,subpref_id`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sp_map: Option<PathBuf>,
    /// Drop users with too little data for this observation window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation_days: Option<u32>,
    #[serde(default)]
    pub kind: ModelKind,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<CountrySpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    /// `antenna_id,population` CSV. Without it, a synthetic country brings its
    /// own populations and a fitted trace uses the number of users per home.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedEntry {
    pub antenna: u32,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpidemicConfig {
    pub beta: f64,
    pub g: f64,
    pub steps: usize,
    pub steps_per_day: u32,
    pub mobile_fraction: f64,
    pub start_day: Weekday,
    /// Seed infectives; defaults to 23 infectives over five antennas.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<SeedEntry>>,
}

impl Default for EpidemicConfig {
    fn default() -> Self {
        let p = EpidemicParams::default();
        Self {
            beta: p.beta,
            g: p.g,
            steps: p.steps,
            steps_per_day: p.steps_per_day,
            mobile_fraction: 0.55,
            start_day: p.start_day,
            seeds: None,
        }
    }
}

impl EpidemicConfig {
    pub fn params(&self) -> EpidemicParams {
        EpidemicParams {
            beta: self.beta,
            g: self.g,
            steps: self.steps,
            steps_per_day: self.steps_per_day,
            start_day: self.start_day,
        }
    }
}

/// Default seed for a country of `antennas` antennas: the reference
/// antennas when they exist, otherwise the same positions scaled down.
pub fn default_seeds(antennas: usize) -> Vec<SeedEntry> {
    let mut out: Vec<SeedEntry> = Vec::new();
    for (id, count) in DEFAULT_SEEDS {
        let antenna = if antennas >= DEFAULT_SEED_SCALE as usize {
            id
        } else {
            ((id as u64 * antennas as u64) / DEFAULT_SEED_SCALE as u64).max(1) as u32
        };
        match out.iter_mut().find(|s| s.antenna == antenna) {
            Some(s) => s.count += count,
            None => out.push(SeedEntry { antenna, count }),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommunitiesConfig {
    pub resolution: f64,
    /// Flow below this weight is dropped from the mobility graph.
    pub epsilon: f64,
    pub restarts: u32,
    /// Detect and export communities even when no strategy needs them.
    pub export: bool,
}

impl Default for CommunitiesConfig {
    fn default() -> Self {
        Self {
            resolution: 1.0,
            epsilon: 1e-6,
            restarts: 10,
            export: false,
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn must_exist(key: &str, p: &Option<PathBuf>) -> Result<()> {
    match p {
        Some(p) if !p.is_file() => Err(Error::invalid(key, format!("file not found: {}", p.display()))),
        _ => Ok(()),
    }
}

impl ScenarioConfig {
    /// Parse a configuration; relative paths are resolved against `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::parse("config", e.to_string().trim_end()))?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.output);
        for p in [
            &mut self.mobility.model,
            &mut self.mobility.trace,
            &mut self.mobility.sp_map,
            &mut self.population.file,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::invalid("version", format!("unsupported version {}, expected {CONFIG_VERSION}", self.version)));
        }
        if self.ensemble == 0 {
            return Err(Error::invalid("ensemble", "must be >= 1"));
        }
        let m = &self.mobility;
        let sources = [m.model.is_some(), m.trace.is_some(), m.synthetic.is_some()];
        if sources.iter().filter(|&&x| x).count() != 1 {
            return Err(Error::invalid("mobility", "set exactly one of `model`, `trace` and `synthetic`"));
        }
        if m.trace.is_some() && m.antennas.is_none() {
            return Err(Error::invalid("mobility.antennas", "required with `trace`"));
        }
        if !(m.alpha > 0.0 && m.alpha.is_finite()) {
            return Err(Error::invalid("mobility.alpha", format!("{} must be > 0", m.alpha)));
        }
        if let Some(s) = &m.synthetic {
            s.validate()?;
        }
        must_exist("mobility.model", &m.model)?;
        must_exist("mobility.trace", &m.trace)?;
        must_exist("mobility.sp_map", &m.sp_map)?;
        must_exist("population.file", &self.population.file)?;
        if m.model.is_some() && self.population.file.is_none() {
            return Err(Error::invalid("population.file", "required with a saved model"));
        }
        self.epidemic.params().validate()?;
        if !(0.0..=1.0).contains(&self.epidemic.mobile_fraction) {
            return Err(Error::invalid(
                "epidemic.mobile_fraction",
                format!("{} is outside [0, 1]", self.epidemic.mobile_fraction),
            ));
        }
        self.strategy.validate()?;
        for (i, c) in self.compare.iter().enumerate() {
            c.validate_at(&format!("compare[{i}]"))?;
        }
        if !(self.communities.resolution > 0.0) {
            return Err(Error::invalid("communities.resolution", "must be > 0"));
        }
        if !(self.communities.epsilon >= 0.0) {
            return Err(Error::invalid("communities.epsilon", "must be >= 0"));
        }
        if self.communities.restarts == 0 {
            return Err(Error::invalid("communities.restarts", "must be >= 1"));
        }
        Ok(())
    }

    fn inputs(&self) -> Vec<&PathBuf> {
        [&self.mobility.model, &self.mobility.trace, &self.mobility.sp_map, &self.population.file]
            .into_iter()
            .flatten()
            .collect()
    }

    /// Seed of ensemble member `run`.
    pub fn run_seed(&self, run: usize) -> u64 {
        derive_seed(self.seed, run as u64, "run")
    }

    /// The config with its strategy replaced, for one comparison cell.
    fn with_strategy(&self, strategy: StrategyConfig) -> Self {
        Self {
            strategy,
            compare: Vec::new(),
            ..self.clone()
        }
    }
}

/// Read and validate a scenario file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    ScenarioConfig::from_toml_str(&text, base)
}

/// Everything a simulation needs, built from a config.
pub struct Prepared {
    pub model: MobilityModel,
    pub setup: PopulationSetup,
    pub params: EpidemicParams,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

fn load_mobility(cfg: &ScenarioConfig) -> Result<(MobilityModel, Option<Vec<u64>>)> {
    let m = &cfg.mobility;
    if let Some(path) = &m.model {
        return Ok((MobilityModel::load(path)?, None));
    }
    if let Some(spec) = &m.synthetic {
        let country = spec.build()?;
        return Ok((country.model, Some(country.populations)));
    }
    let path = m.trace.as_ref().expect("validated");
    let k = m.antennas.expect("validated");
    let mut trace = Trace::parse(path, TraceFormat::Csv, k)?.trace;
    if let Some(sp) = &m.sp_map {
        trace = trace.with_sp_map(SubprefMap::read(sp, k)?);
    }
    if let Some(days) = m.observation_days {
        trace = filter_users(&trace, days)?;
    }
    let homes = infer_homes(&trace);
    let model = fit(&trace, &homes, m.kind, m.alpha)?;
    Ok((model, Some(homes.class_sizes(k))))
}

pub fn prepare(cfg: &ScenarioConfig) -> Result<Prepared> {
    let (model, implied) = stage("mobility", load_mobility(cfg))?;
    let k = model.antenna_count();
    let populations = stage(
        "population",
        match (&cfg.population.file, implied) {
            (Some(p), _) => read_populations(p, k),
            (None, Some(p)) => Ok(p),
            (None, None) => Err(Error::invalid("population.file", "required")),
        },
    )?;
    let seeds = cfg.epidemic.seeds.clone().unwrap_or_else(|| default_seeds(k));
    let seeds = stage(
        "population",
        seeds
            .iter()
            .map(|s| {
                Ok(SeedInfectives {
                    region: AntennaId::new(s.antenna as i64, k)?,
                    count: s.count,
                })
            })
            .collect::<Result<Vec<_>>>(),
    )?;
    let setup = PopulationSetup {
        populations,
        mobile_fraction: cfg.epidemic.mobile_fraction,
        seeds,
    };
    stage("population", setup.validate())?;
    Ok(Prepared {
        model,
        setup,
        params: cfg.epidemic.params(),
    })
}

/// Communities of the mobility graph weighted by resident populations.
pub fn detect_communities(cfg: &ScenarioConfig, prepared: &Prepared) -> Result<(CommunityAssignment, String, String)> {
    let graph = build_graph(&prepared.model, &prepared.setup.populations, cfg.communities.epsilon)?;
    let result = louvain(
        &graph,
        &LouvainConfig {
            resolution: cfg.communities.resolution,
            seed: derive_seed(cfg.seed, 0, "louvain"),
            restarts: cfg.communities.restarts,
        },
    );
    let mut graph_csv = Vec::new();
    graph.write_csv(&mut graph_csv).map_err(|e| Error::io("graph.csv", e))?;
    let mut comm_csv = Vec::new();
    result.assignment.write_csv(&mut comm_csv).map_err(|e| Error::io("communities.csv", e))?;
    Ok((
        result.assignment,
        String::from_utf8(comm_csv).expect("ascii"),
        String::from_utf8(graph_csv).expect("ascii"),
    ))
}

/// Run the ensemble of `cfg` with `strategy`, in parallel; results are in
/// run order.
pub fn run_ensemble(cfg: &ScenarioConfig, prepared: &Prepared, strategy: &Strategy) -> Result<Vec<RunRecord>> {
    let options = RunOptions {
        record_regions: cfg.record_regions,
    };
    let job = || {
        (0..cfg.ensemble)
            .into_par_iter()
            .map(|r| run(&prepared.setup, &prepared.model, &prepared.params, strategy, cfg.run_seed(r), options))
            .collect::<Result<Vec<_>>>()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::invalid("workers", e.to_string()))?;
    pool.install(job)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub software_version: String,
    pub command: String,
    pub config: ScenarioConfig,
    pub run_seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub louvain_seed: Option<u64>,
    pub outputs: Vec<OutputFile>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::parse(path.display().to_string(), format!("not a manifest (format {:?})", m.format)));
        }
        m.config.validate()?;
        Ok(m)
    }

    /// Whether `other` produced exactly the same files.
    pub fn same_outputs(&self, other: &RunManifest) -> bool {
        self.outputs == other.outputs
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Collects output files in memory and writes them in one place.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn add(&mut self, path: impl Into<String>, contents: impl Into<Vec<u8>>) {
        self.files.push((path.into(), contents.into()));
    }

    fn write(self, inputs: &[&PathBuf]) -> Result<Vec<OutputFile>> {
        let canon: Vec<PathBuf> = inputs.iter().filter_map(|p| p.canonicalize().ok()).collect();
        let mut listed = Vec::new();
        for (rel, data) in self.files {
            let path = self.dir.join(&rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            if path.canonicalize().is_ok_and(|c| canon.contains(&c)) {
                return Err(Error::invalid("output", format!("{} would overwrite an input", path.display())));
            }
            std::fs::write(&path, &data).map_err(|e| Error::io(&path, e))?;
            listed.push(OutputFile {
                path: rel,
                bytes: data.len() as u64,
                sha256: hex(&Sha256::digest(&data)),
            });
        }
        Ok(listed)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn run_csv(record: &RunRecord) -> Vec<u8> {
    let mut out = Vec::new();
    record.write_csv(&mut out).expect("writing to memory");
    out
}

fn trajectory_csv(m: &EnsembleMetrics) -> String {
    let mut s = String::new();
    m.write_trajectory_csv(&mut s);
    s
}

struct Clock {
    timings: BTreeMap<String, f64>,
    last: Instant,
}

impl Clock {
    fn new() -> Self {
        Self {
            timings: BTreeMap::new(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, name: &str) {
        let now = Instant::now();
        *self.timings.entry(name.to_string()).or_default() += (now - self.last).as_secs_f64();
        self.last = now;
    }
}

/// Execute a scenario: simulate the ensemble and write per-run CSVs, the
/// metrics summary, the mean trajectory, community exports when
/// communities were used, and the manifest.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let mut clock = Clock::new();
    let prepared = prepare(cfg)?;
    clock.lap("prepare");
    let mut out = Outputs::new(&cfg.output);
    let communities = if cfg.strategy.needs_communities() || cfg.communities.export {
        let (c, comm_csv, graph_csv) = stage("communities", detect_communities(cfg, &prepared))?;
        out.add("communities.csv", comm_csv);
        out.add("graph.csv", graph_csv);
        clock.lap("communities");
        Some(c)
    } else {
        None
    };
    let strategy = stage("strategy", Strategy::new(cfg.strategy, prepared.setup.regions(), prepared.params.g, communities.clone()))?;
    let records = stage("simulate", run_ensemble(cfg, &prepared, &strategy))?;
    clock.lap("simulate");
    let width = cfg.ensemble.saturating_sub(1).to_string().len().max(3);
    for (r, rec) in records.iter().enumerate() {
        out.add(format!("runs/run_{r:0width$}.csv"), run_csv(rec));
        if cfg.record_regions {
            let mut wide = Vec::new();
            rec.write_regions_csv(&mut wide).expect("writing to memory");
            out.add(format!("runs/run_{r:0width$}_regions.csv"), wide);
        }
    }
    let metrics = stage("metrics", ensemble_metrics(&records))?;
    let mut summary = format!("strategy={}\n", cfg.strategy.kind.name());
    if let Some(p) = cfg.strategy.parameter() {
        summary.push_str(&format!("param={}\n", fmt(p)));
    }
    summary.push_str(&metrics.to_key_values());
    out.add("metrics.txt", summary);
    out.add("mean_trajectory.csv", trajectory_csv(&metrics));
    let outputs = stage("output", out.write(&cfg.inputs()))?;
    clock.lap("output");
    let manifest = RunManifest {
        format: MANIFEST_FORMAT.into(),
        software_version: env!("CARGO_PKG_VERSION").into(),
        command: "simulate".into(),
        config: cfg.clone(),
        run_seeds: (0..cfg.ensemble).map(|r| cfg.run_seed(r)).collect(),
        louvain_seed: communities.map(|_| derive_seed(cfg.seed, 0, "louvain")),
        outputs,
        timings: clock.timings,
    };
    stage("output", write_manifest(&cfg.output, &manifest))?;
    Ok(manifest)
}

/// Cell label used in file names, e.g. `go_home_p0.5`.
fn cell_label(s: &StrategyConfig) -> String {
    match s.kind {
        crate::strategies::StrategyKind::Baseline => "baseline".into(),
        crate::strategies::StrategyKind::DecreaseMix => format!("{}_q{}", s.kind.name(), fmt(s.q)),
        _ => format!("{}_p{}", s.kind.name(), fmt(s.p)),
    }
}

/// Check that scenario files describe cells of one comparison: they may
/// differ only in their strategy. Returns the shared base and the cells.
pub fn common_base(cfgs: &[ScenarioConfig]) -> Result<(ScenarioConfig, Vec<StrategyConfig>)> {
    let first = cfgs.first().ok_or_else(|| Error::MismatchedBases("no scenarios given".into()))?;
    let base = first.with_strategy(StrategyConfig::baseline());
    let mut cells = Vec::new();
    for (i, c) in cfgs.iter().enumerate() {
        if c.with_strategy(StrategyConfig::baseline()) != base {
            return Err(Error::MismatchedBases(format!("scenario {} differs from scenario 0 beyond its strategy", i)));
        }
        if c.compare.is_empty() {
            cells.push(c.strategy);
        } else {
            cells.extend(c.compare.iter().copied());
        }
    }
    Ok((base, cells))
}

/// Run every strategy cell on the same base with matched run seeds; write
/// `comparison.csv`, one mean-trajectory CSV per cell, and the manifest.
pub fn compare_strategies(base: &ScenarioConfig, cells: &[StrategyConfig]) -> Result<RunManifest> {
    base.validate()?;
    if cells.is_empty() {
        return Err(Error::invalid("compare", "no strategy cells"));
    }
    for (i, c) in cells.iter().enumerate() {
        c.validate_at(&format!("compare[{i}]"))?;
    }
    let mut clock = Clock::new();
    let prepared = prepare(base)?;
    clock.lap("prepare");
    let mut out = Outputs::new(&base.output);
    let communities = if cells.iter().any(StrategyConfig::needs_communities) || base.communities.export {
        let (c, comm_csv, graph_csv) = stage("communities", detect_communities(base, &prepared))?;
        out.add("communities.csv", comm_csv);
        out.add("graph.csv", graph_csv);
        clock.lap("communities");
        Some(c)
    } else {
        None
    };
    let mut table = format!("{COMPARISON_HEADER}\n");
    let mut labels: Vec<String> = Vec::new();
    for cell in cells {
        let strategy = stage(
            "strategy",
            Strategy::new(*cell, prepared.setup.regions(), prepared.params.g, communities.clone()),
        )?;
        let records = stage("simulate", run_ensemble(base, &prepared, &strategy))?;
        clock.lap("simulate");
        let metrics = stage("metrics", ensemble_metrics(&records))?;
        table.push_str(&comparison_row(cell.kind.name(), cell.parameter(), &metrics));
        table.push('\n');
        let mut label = cell_label(cell);
        let n = labels.iter().filter(|l| l.starts_with(&label)).count();
        if n > 0 {
            label = format!("{label}_{n}");
        }
        out.add(format!("trajectories/{label}.csv"), trajectory_csv(&metrics));
        labels.push(label);
    }
    out.add("comparison.csv", table);
    let outputs = stage("output", out.write(&base.inputs()))?;
    clock.lap("output");
    let config = ScenarioConfig {
        compare: cells.to_vec(),
        ..base.clone()
    };
    let manifest = RunManifest {
        format: MANIFEST_FORMAT.into(),
        software_version: env!("CARGO_PKG_VERSION").into(),
        command: "compare".into(),
        run_seeds: (0..base.ensemble).map(|r| base.run_seed(r)).collect(),
        louvain_seed: communities.map(|_| derive_seed(base.seed, 0, "louvain")),
        config,
        outputs,
        timings: clock.timings,
    };
    stage("output", write_manifest(&base.output, &manifest))?;
    Ok(manifest)
}

/// Repeat the run a manifest describes, optionally into another directory.
pub fn rerun(manifest: &RunManifest, output: Option<&Path>) -> Result<RunManifest> {
    let mut cfg = manifest.config.clone();
    if let Some(o) = output {
        cfg.output = o.to_path_buf();
    }
    match manifest.command.as_str() {
        "simulate" => run_scenario(&cfg),
        "compare" => {
            let cells = std::mem::take(&mut cfg.compare);
            compare_strategies(&cfg, &cells)
        }
        other => Err(Error::parse("manifest", format!("unknown command {other:?}"))),
    }
}

/// Settings of the `generate` command: a planted country and the trace to
/// sample from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    #[serde(default)]
    pub country: CountrySpec,
    pub users: usize,
    pub days: u32,
    #[serde(default = "defaults_calls")]
    pub calls_per_day: f64,
    /// Relative hourly call rate per period (morning, afternoon, night).
    #[serde(default = "defaults_activity")]
    pub activity: [f64; 3],
    #[serde(default)]
    pub seed: u64,
}

fn defaults_activity() -> [f64; 3] {
    [1.0; 3]
}

fn defaults_calls() -> f64 {
    2.0
}

impl GenerateConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string().trim_end()))
    }
}

/// Write `trace.csv`, `sp_map.csv`, `population.csv`, `homes.csv` and the
/// planted `model.json` into `dir`. Homes are drawn proportionally to the
/// planted populations.
pub fn generate(cfg: &GenerateConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let country = stage("generate", cfg.country.build())?;
    let weights: Vec<f64> = country.populations.iter().map(|&p| p as f64).collect();
    let params = GeneratorParams {
        users: cfg.users,
        days: cfg.days,
        calls_per_day: cfg.calls_per_day,
        activity: cfg.activity,
        seed: cfg.seed,
    };
    let generated = stage("generate", generate_trace(&country.model, &params, Some(&weights)))?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = |f: &str| dir.join(f);
    let mut written = Vec::new();
    generated.trace.write(&path("trace.csv"))?;
    written.push(path("trace.csv"));
    country.sp_map.write(&path("sp_map.csv"))?;
    written.push(path("sp_map.csv"));
    crate::epidemic::write_populations(&path("population.csv"), &country.populations)?;
    written.push(path("population.csv"));
    let mut homes = String::from("user_id,antenna_id\n");
    for (u, a) in &generated.homes {
        homes.push_str(&format!("{u},{a}\n"));
    }
    std::fs::write(path("homes.csv"), homes).map_err(|e| Error::io(path("homes.csv"), e))?;
    written.push(path("homes.csv"));
    country.model.save(&path("model.json"))?;
    written.push(path("model.json"));
    Ok(written)
}
