//! Discrete-time stochastic SIR dynamics over a metapopulation of regions.
//!
//! Every region is an antenna. Individuals belong to the class of their home
//! antenna and are either mobile or immobile; immobile individuals stay at
//! home forever. Each step has two phases:
//!
//! 1. **Mobility.** Every mobile group (class, current region, compartment)
//!    draws its destinations as one multinomial over the class's mobility
//!    row for the current time bucket. Trips that leave the region pass
//!    through the strategy, which may cancel or redirect them.
//! 2. **Epidemic.** The force of infection is computed from the state at the
//!    start of the phase; new infections and recoveries are binomial draws
//!    per group.
//!
//! Group-level draws are equal in distribution to simulating individuals one
//! by one, because members of a group are exchangeable.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::categorical::{binomial, Allocation, Categorical};
use crate::mobility::{ModelKind, MobilityModel};
use crate::seed::{stream, SimRng};
use crate::strategies::{gohome_lambda, decreasemix_lambda, RegionView, Strategy, StrategyKind};
use crate::time::{step_bucket, TimeBucket, Weekday, PERIODS_PER_DAY};
use crate::trace::AntennaId;
use crate::{Error, Result};

/// `[S, I, R]` counts of one group.
pub type Cell = [u32; 3];

const S: usize = 0;
const I: usize = 1;
const R: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedInfectives {
    pub region: AntennaId,
    pub count: u64,
}

/// Initial population of every region and the epidemic seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSetup {
    /// Residents per region; region `i` is also the home of class `i`.
    pub populations: Vec<u64>,
    /// Share of each class allowed to move.
    pub mobile_fraction: f64,
    pub seeds: Vec<SeedInfectives>,
}

impl PopulationSetup {
    pub fn total(&self) -> u64 {
        self.populations.iter().sum()
    }

    pub fn regions(&self) -> usize {
        self.populations.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mobile_fraction) {
            return Err(Error::invalid(
                "epidemic.mobile_fraction",
                format!("{} is outside [0, 1]", self.mobile_fraction),
            ));
        }
        if let Some(p) = self.populations.iter().find(|&&p| p > u32::MAX as u64) {
            return Err(Error::invalid("population", format!("region population {p} is too large")));
        }
        let mut seeded = vec![0u64; self.populations.len()];
        for s in &self.seeds {
            let i = s.region.index();
            if i >= self.populations.len() {
                return Err(Error::AntennaOutOfRange {
                    id: s.region.get() as i64,
                    count: self.populations.len(),
                });
            }
            seeded[i] += s.count;
            if self.populations[i] == 0 || seeded[i] > self.populations[i] {
                return Err(Error::InvalidSeed {
                    region: s.region.get(),
                    count: seeded[i],
                    population: self.populations[i],
                });
            }
        }
        Ok(())
    }
}

/// Read a population file (`antenna_id,population`). Antennas not listed
/// have no residents.
pub fn read_populations(path: &Path, antenna_count: usize) -> Result<Vec<u64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ctx = path.display().to_string();
    let mut out = vec![0u64; antenna_count];
    let mut seen = vec![false; antenna_count];
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("antenna_id")) {
            continue;
        }
        let (a, p) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(&ctx, format!("line {}: expected two fields", n + 1)))?;
        let a: i64 = a
            .trim()
            .parse()
            .map_err(|_| Error::parse(&ctx, format!("line {}: bad antenna id {a:?}", n + 1)))?;
        let p: u64 = p
            .trim()
            .parse()
            .map_err(|_| Error::parse(&ctx, format!("line {}: bad population {p:?}", n + 1)))?;
        let id = AntennaId::new(a, antenna_count)?;
        if std::mem::replace(&mut seen[id.index()], true) {
            return Err(Error::parse(&ctx, format!("line {}: antenna {id} listed twice", n + 1)));
        }
        out[id.index()] = p;
    }
    Ok(out)
}

pub fn write_populations(path: &Path, populations: &[u64]) -> Result<()> {
    let mut s = String::from("antenna_id,population\n");
    for (i, p) in populations.iter().enumerate() {
        s.push_str(&format!("{},{p}\n", i + 1));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpidemicParams {
    /// Contact probability per step.
    pub beta: f64,
    /// Recovery probability per step.
    pub g: f64,
    pub steps: usize,
    pub steps_per_day: u32,
    pub start_day: Weekday,
}

impl Default for EpidemicParams {
    fn default() -> Self {
        Self {
            beta: 1.0,
            g: 0.5,
            steps: 400,
            steps_per_day: PERIODS_PER_DAY as u32,
            start_day: Weekday::Monday,
        }
    }
}

impl EpidemicParams {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("epidemic.beta", self.beta), ("epidemic.g", self.g)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::invalid(key, format!("{v} is outside (0, 1]")));
            }
        }
        if self.steps_per_day as usize != PERIODS_PER_DAY {
            return Err(Error::invalid(
                "epidemic.steps_per_day",
                format!("only {PERIODS_PER_DAY} steps per day are supported, got {}", self.steps_per_day),
            ));
        }
        Ok(())
    }
}

/// Per-class, per-region compartment counts, split into mobile and immobile
/// parts. Immobile members of class `c` live in region `c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpidemicState {
    regions: usize,
    /// Indexed `class * regions + region`.
    mobile: Vec<Cell>,
    /// Indexed by class.
    immobile: Vec<Cell>,
    step: usize,
}

impl EpidemicState {
    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn mobile(&self, class: usize, region: usize) -> Cell {
        self.mobile[class * self.regions + region]
    }

    pub fn immobile(&self, class: usize) -> Cell {
        self.immobile[class]
    }

    /// Counts of class `class` in region `region`, mobile and immobile.
    pub fn cell(&self, class: usize, region: usize) -> [u64; 3] {
        let m = self.mobile(class, region);
        let mut out = m.map(u64::from);
        if class == region {
            for (o, x) in out.iter_mut().zip(self.immobile[class]) {
                *o += x as u64;
            }
        }
        out
    }

    /// Aggregate `[S, I, R]`.
    pub fn totals(&self) -> [u64; 3] {
        let mut t = [0u64; 3];
        for c in self.mobile.iter().chain(&self.immobile) {
            for x in 0..3 {
                t[x] += c[x] as u64;
            }
        }
        t
    }

    pub fn population(&self) -> u64 {
        self.totals().iter().sum()
    }

    pub fn class_total(&self, class: usize) -> u64 {
        let row = &self.mobile[class * self.regions..(class + 1) * self.regions];
        row.iter().chain(std::iter::once(&self.immobile[class]))
            .map(|c| c.iter().map(|&x| x as u64).sum::<u64>())
            .sum()
    }

    /// `[S, I, R]` per region.
    pub fn region_totals(&self) -> Vec<[u64; 3]> {
        let m = self.regions;
        let mut out = vec![[0u64; 3]; m];
        for (k, c) in self.mobile.iter().enumerate() {
            let o = &mut out[k % m];
            for x in 0..3 {
                o[x] += c[x] as u64;
            }
        }
        for (i, c) in self.immobile.iter().enumerate() {
            for x in 0..3 {
                out[i][x] += c[x] as u64;
            }
        }
        out
    }
}

/// Everyone susceptible except the seed, which is taken from the mobile
/// part of each seed region's own class (and from its immobile part only
/// when the mobile part is too small).
pub fn init_state(setup: &PopulationSetup) -> Result<EpidemicState> {
    setup.validate()?;
    let m = setup.regions();
    let mut mobile = vec![[0u32; 3]; m * m];
    let mut immobile = vec![[0u32; 3]; m];
    for (i, &n) in setup.populations.iter().enumerate() {
        let mob = (setup.mobile_fraction * n as f64).floor() as u64;
        mobile[i * m + i][S] = mob as u32;
        immobile[i][S] = (n - mob) as u32;
    }
    for s in &setup.seeds {
        let i = s.region.index();
        let mut left = s.count as u32;
        for cell in [&mut mobile[i * m + i], &mut immobile[i]] {
            let take = left.min(cell[S]);
            cell[S] -= take;
            cell[I] += take;
            left -= take;
        }
        debug_assert_eq!(left, 0, "validated above");
    }
    Ok(EpidemicState {
        regions: m,
        mobile,
        immobile,
        step: 0,
    })
}

/// Trips proposed during one mobility phase and how the strategy treated them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TripLog {
    pub proposed: u64,
    pub canceled: u64,
    pub redirected: u64,
}

impl TripLog {
    pub fn affected(&self) -> u64 {
        self.canceled + self.redirected
    }
}

/// Reusable buffers for the two phases.
#[derive(Debug, Clone)]
pub struct Scratch {
    alloc: Allocation,
    row: Vec<Cell>,
    reg_n: Vec<u64>,
    reg_i: Vec<u64>,
    loc_i: Vec<u64>,
    lambda: Vec<f64>,
    grp_n: Vec<u64>,
    grp_i: Vec<u64>,
}

impl Scratch {
    pub fn new(regions: usize) -> Self {
        Self {
            alloc: Allocation::new(regions),
            row: vec![[0; 3]; regions],
            reg_n: vec![0; regions],
            reg_i: vec![0; regions],
            loc_i: vec![0; regions],
            lambda: vec![0.0; regions],
            grp_n: Vec::new(),
            grp_i: Vec::new(),
        }
    }

    fn census(&mut self, state: &EpidemicState) {
        let m = state.regions;
        self.reg_n.iter_mut().for_each(|x| *x = 0);
        self.reg_i.iter_mut().for_each(|x| *x = 0);
        for (k, c) in state.mobile.iter().enumerate() {
            let i = k % m;
            self.reg_n[i] += c[S] as u64 + c[I] as u64 + c[R] as u64;
            self.reg_i[i] += c[I] as u64;
        }
        for (i, c) in state.immobile.iter().enumerate() {
            self.reg_n[i] += c[S] as u64 + c[I] as u64 + c[R] as u64;
            self.reg_i[i] += c[I] as u64;
        }
    }
}

fn check_model(model: &MobilityModel, regions: usize) -> Result<()> {
    if model.kind() == ModelKind::Markov {
        return Err(Error::invalid(
            "mobility.kind",
            "the epidemic engine needs a model conditioned on home antenna and time",
        ));
    }
    if model.antenna_count() != regions {
        return Err(Error::invalid(
            "population",
            format!("{regions} regions but the mobility model has {} antennas", model.antenna_count()),
        ));
    }
    Ok(())
}

/// Move every mobile group once. Trips are decided against the region
/// counts at the start of the phase.
pub fn mobility_phase<Rn: Rng + ?Sized>(
    state: &mut EpidemicState,
    model: &MobilityModel,
    strategy: &Strategy,
    bucket: TimeBucket,
    rng: &mut Rn,
    scratch: &mut Scratch,
) -> TripLog {
    let m = state.regions;
    let hooked = strategy.has_trip_hook();
    if hooked {
        scratch.census(state);
    }
    let view = RegionView {
        infective: &scratch.reg_i,
        population: &scratch.reg_n,
    };
    let mut log = TripLog::default();
    for c in 0..m {
        let row: &Categorical = model.home_row(c, bucket);
        let cells = &mut state.mobile[c * m..(c + 1) * m];
        if cells.iter().all(|x| *x == [0; 3]) {
            continue;
        }
        let next = &mut scratch.row;
        next.iter_mut().for_each(|x| *x = [0; 3]);
        for (i, cell) in cells.iter().enumerate() {
            for x in 0..3 {
                let n = cell[x];
                if n == 0 {
                    continue;
                }
                row.allocate(n as u64, rng, &mut scratch.alloc);
                for (j, k) in scratch.alloc.drain() {
                    let j = j as usize;
                    if j == i {
                        next[i][x] += k as u32;
                        continue;
                    }
                    log.proposed += k;
                    if !hooked {
                        next[j][x] += k as u32;
                        continue;
                    }
                    let r = strategy.route(i, j, c, k, &view, rng);
                    next[j][x] += r.proceed as u32;
                    next[i][x] += r.canceled as u32;
                    next[c][x] += r.redirected as u32;
                    log.canceled += r.canceled;
                    log.redirected += r.redirected;
                }
            }
        }
        cells.copy_from_slice(next);
    }
    log
}

#[inline]
fn update<Rn: Rng + ?Sized>(cell: &mut Cell, lambda: f64, g: f64, rng: &mut Rn) {
    let infected = binomial(rng, cell[S] as u64, lambda) as u32;
    let recovered = binomial(rng, cell[I] as u64, g) as u32;
    cell[S] -= infected;
    cell[I] = cell[I] + infected - recovered;
    cell[R] += recovered;
}

/// Infect and recover every group. The force of infection of each group is
/// fixed at the start of the phase.
pub fn epidemic_phase<Rn: Rng + ?Sized>(
    state: &mut EpidemicState,
    params: &EpidemicParams,
    strategy: &Strategy,
    rng: &mut Rn,
    scratch: &mut Scratch,
) {
    let m = state.regions;
    scratch.census(state);
    let (beta, g) = (params.beta, params.g);
    for i in 0..m {
        scratch.lambda[i] = match scratch.reg_n[i] {
            0 => 0.0,
            n => beta * scratch.reg_i[i] as f64 / n as f64,
        };
    }
    let structured = strategy.structured_mixing();
    let kind = strategy.kind();
    if structured && kind == StrategyKind::GoHome {
        for i in 0..m {
            let a = state.mobile[i * m + i];
            scratch.loc_i[i] = a[I] as u64 + state.immobile[i][I] as u64;
        }
    }
    let groups = strategy.group_count();
    if structured && kind == StrategyKind::DecreaseMix {
        scratch.grp_n.clear();
        scratch.grp_n.resize(m * groups, 0);
        scratch.grp_i.clear();
        scratch.grp_i.resize(m * groups, 0);
        for c in 0..m {
            let gc = strategy.group_of(c);
            for i in 0..m {
                let cell = state.cell(c, i);
                scratch.grp_n[i * groups + gc] += cell.iter().sum::<u64>();
                scratch.grp_i[i * groups + gc] += cell[I];
            }
        }
    }
    let lambda = |c: usize, i: usize, scratch: &Scratch| -> f64 {
        if !structured {
            return scratch.lambda[i];
        }
        match kind {
            StrategyKind::DecreaseMix => {
                let k = i * groups + strategy.group_of(c);
                decreasemix_lambda(
                    beta,
                    strategy.config().q,
                    scratch.grp_n[k],
                    scratch.reg_n[i],
                    scratch.grp_i[k],
                    scratch.reg_i[i],
                )
            }
            StrategyKind::GoHome => {
                let (loc, vis) = gohome_lambda(
                    beta,
                    strategy.beta_home(),
                    scratch.reg_n[i],
                    scratch.loc_i[i],
                    scratch.reg_i[i] - scratch.loc_i[i],
                );
                if c == i {
                    loc
                } else {
                    vis
                }
            }
            _ => scratch.lambda[i],
        }
    };
    for c in 0..m {
        for i in 0..m {
            let cell = &mut state.mobile[c * m + i];
            if cell[S] == 0 && cell[I] == 0 {
                continue;
            }
            let l = lambda(c, i, scratch);
            update(cell, l, g, rng);
        }
        let cell = &mut state.immobile[c];
        if cell[S] != 0 || cell[I] != 0 {
            let l = lambda(c, c, scratch);
            update(cell, l, g, rng);
        }
    }
}

/// Aggregate counts after a step, with the trips of its mobility phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub s: u64,
    pub i: u64,
    pub r: u64,
    pub trips: TripLog,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep `[S, I, R]` per region for every step.
    pub record_regions: bool,
}

/// Output of one simulation run. Step 0 is the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub population: u64,
    pub series: Vec<StepRecord>,
    /// Per step, per region `[S, I, R]` when requested.
    pub regions: Option<Vec<Vec<[u64; 3]>>>,
}

impl RunRecord {
    pub fn horizon(&self) -> usize {
        self.series.len().saturating_sub(1)
    }

    pub fn infective(&self) -> impl Iterator<Item = u64> + '_ {
        self.series.iter().map(|s| s.i)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,S,I,R,proposed_trips,affected_trips")?;
        for s in &self.series {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                s.step,
                s.s,
                s.i,
                s.r,
                s.trips.proposed,
                s.trips.affected()
            )?;
        }
        Ok(())
    }

    /// One row per step: `step,S_1..S_M,I_1..I_M,R_1..R_M`. Writes nothing
    /// beyond the header row when per-region counts were not recorded.
    pub fn write_regions_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let Some(regions) = &self.regions else {
            return Ok(());
        };
        let m = regions.first().map_or(0, Vec::len);
        let mut header = String::from("step");
        for x in ["S", "I", "R"] {
            for i in 1..=m {
                header.push_str(&format!(",{x}_{i}"));
            }
        }
        writeln!(out, "{header}")?;
        for (step, row) in regions.iter().enumerate() {
            let mut line = step.to_string();
            for x in 0..3 {
                for r in row {
                    line.push(',');
                    line.push_str(&r[x].to_string());
                }
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// A run in progress. Useful to inspect the state between phases.
pub struct Simulation<'a> {
    model: &'a MobilityModel,
    params: EpidemicParams,
    strategy: &'a Strategy,
    state: EpidemicState,
    rng: SimRng,
    scratch: Scratch,
}

impl<'a> Simulation<'a> {
    pub fn new(
        setup: &PopulationSetup,
        model: &'a MobilityModel,
        params: EpidemicParams,
        strategy: &'a Strategy,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        check_model(model, setup.regions())?;
        let state = init_state(setup)?;
        Ok(Self {
            model,
            params,
            strategy,
            scratch: Scratch::new(state.regions),
            state,
            rng: stream(seed, 0, "dynamics"),
        })
    }

    pub fn state(&self) -> &EpidemicState {
        &self.state
    }

    /// Time bucket of the next step.
    pub fn bucket(&self) -> TimeBucket {
        step_bucket(self.params.start_day, self.state.step)
    }

    pub fn mobility_phase(&mut self) -> TripLog {
        let bucket = self.bucket();
        mobility_phase(&mut self.state, self.model, self.strategy, bucket, &mut self.rng, &mut self.scratch)
    }

    pub fn epidemic_phase(&mut self) {
        epidemic_phase(&mut self.state, &self.params, self.strategy, &mut self.rng, &mut self.scratch);
        self.state.step += 1;
    }

    pub fn step(&mut self) -> StepRecord {
        let trips = self.mobility_phase();
        self.epidemic_phase();
        let [s, i, r] = self.state.totals();
        StepRecord {
            step: self.state.step,
            s,
            i,
            r,
            trips,
        }
    }

    pub fn run(mut self, options: RunOptions) -> RunRecord {
        let [s, i, r] = self.state.totals();
        let mut series = Vec::with_capacity(self.params.steps + 1);
        series.push(StepRecord {
            step: 0,
            s,
            i,
            r,
            trips: TripLog::default(),
        });
        let mut regions = options.record_regions.then(|| vec![self.state.region_totals()]);
        for _ in 0..self.params.steps {
            series.push(self.step());
            if let Some(r) = regions.as_mut() {
                r.push(self.state.region_totals());
            }
        }
        RunRecord {
            population: s + i + r,
            series,
            regions,
        }
    }
}

/// Simulate one run from `seed`.
pub fn run(
    setup: &PopulationSetup,
    model: &MobilityModel,
    params: &EpidemicParams,
    strategy: &Strategy,
    seed: u64,
    options: RunOptions,
) -> Result<RunRecord> {
    Ok(Simulation::new(setup, model, *params, strategy, seed)?.run(options))
}
