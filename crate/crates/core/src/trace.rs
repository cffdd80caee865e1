//! Call-detail-record style traces: parsing, filtering, splitting and
//! synthetic generation from a planted mobility model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::mobility::MobilityModel;
use crate::seed::{stream, SimRng};
use crate::time::{DayPartition, SECONDS_PER_DAY};
use crate::{Error, Result};

/// One-based antenna identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AntennaId(u32);

impl AntennaId {
    /// Validate `id` against an antenna set of size `count`.
    pub fn new(id: i64, count: usize) -> Result<Self> {
        if id < 1 || id > count as i64 {
            return Err(Error::AntennaOutOfRange { id, count });
        }
        Ok(AntennaId(id as u32))
    }

    /// From a zero-based index.
    pub fn from_index(index: usize) -> Self {
        AntennaId(index as u32 + 1)
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// Zero-based index.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl fmt::Display for AntennaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A single observation of a user at an antenna.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CallRecord {
    pub timestamp: i64,
    pub antenna: AntennaId,
}

/// All records of one user, sorted by timestamp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserTrace {
    pub user: String,
    pub records: Vec<CallRecord>,
}

impl UserTrace {
    pub fn distinct_antennas(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.antenna)
            .collect::<BTreeSet<_>>()
            .len()
    }
}

/// Mapping from antenna to sub-prefecture (dense, zero-based sub-prefecture
/// indices internally; one-based ids in files).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubprefMap {
    /// `subpref[a]` is the zero-based sub-prefecture of antenna index `a`.
    pub subpref: Vec<u32>,
    pub count: usize,
}

impl SubprefMap {
    pub fn new(subpref: Vec<u32>) -> Self {
        let count = subpref.iter().map(|&s| s as usize + 1).max().unwrap_or(0);
        Self { subpref, count }
    }

    pub fn of(&self, antenna: AntennaId) -> usize {
        self.subpref[antenna.index()] as usize
    }

    /// Read an `antenna_id,subpref_id` CSV. Every antenna must be mapped.
    pub fn read(path: &Path, antenna_count: usize) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::parse(path.display().to_string(), e))?;
        let mut subpref = vec![None; antenna_count];
        for (line, row) in reader.records().enumerate() {
            let row = row.map_err(|e| Error::parse(path.display().to_string(), e))?;
            let ctx = || format!("{}:{}", path.display(), line + 2);
            if row.len() != 2 {
                return Err(Error::parse(ctx(), "expected antenna_id,subpref_id"));
            }
            let antenna: i64 = row[0].trim().parse().map_err(|e| Error::parse(ctx(), e))?;
            let sp: u32 = row[1].trim().parse().map_err(|e| Error::parse(ctx(), e))?;
            if sp == 0 {
                return Err(Error::parse(ctx(), "subpref ids are one-based"));
            }
            let a = AntennaId::new(antenna, antenna_count)?;
            subpref[a.index()] = Some(sp - 1);
        }
        let subpref = subpref
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                s.ok_or_else(|| {
                    Error::parse(
                        path.display().to_string(),
                        format!("antenna {} has no sub-prefecture", i + 1),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(subpref))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::from("antenna_id,subpref_id\n");
        for (a, s) in self.subpref.iter().enumerate() {
            out.push_str(&format!("{},{}\n", a + 1, s + 1));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// A set of user traces over a fixed antenna set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    /// Users sorted by id.
    pub users: Vec<UserTrace>,
    pub antenna_count: usize,
    pub sp_map: Option<SubprefMap>,
}

/// Supported on-disk trace layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    /// `user_id,antenna_id,timestamp` rows, optional header.
    #[default]
    Csv,
}

/// Outcome of parsing a trace file.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTrace {
    pub trace: Trace,
    /// One-based line numbers of lines that could not be parsed.
    pub malformed: Vec<usize>,
}

const TRACE_HEADER: &str = "user_id,antenna_id,timestamp";

impl Trace {
    pub fn new(antenna_count: usize) -> Self {
        Self {
            users: Vec::new(),
            antenna_count,
            sp_map: None,
        }
    }

    /// Build a trace from loose records, grouping by user and sorting.
    pub fn from_records(
        antenna_count: usize,
        records: impl IntoIterator<Item = (String, CallRecord)>,
    ) -> Self {
        let mut by_user: BTreeMap<String, Vec<CallRecord>> = BTreeMap::new();
        for (user, rec) in records {
            by_user.entry(user).or_default().push(rec);
        }
        let users = by_user
            .into_iter()
            .map(|(user, mut records)| {
                records.sort_by_key(|r| r.timestamp);
                UserTrace { user, records }
            })
            .collect();
        Self {
            users,
            antenna_count,
            sp_map: None,
        }
    }

    pub fn with_sp_map(mut self, sp_map: SubprefMap) -> Self {
        self.sp_map = Some(sp_map);
        self
    }

    pub fn record_count(&self) -> usize {
        self.users.iter().map(|u| u.records.len()).sum()
    }

    pub fn user(&self, id: &str) -> Option<&UserTrace> {
        self.users
            .binary_search_by(|u| u.user.as_str().cmp(id))
            .ok()
            .map(|i| &self.users[i])
    }

    pub fn parse(path: &Path, format: TraceFormat, antenna_count: usize) -> Result<ParsedTrace> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match format {
            TraceFormat::Csv => Self::parse_csv(&text, antenna_count),
        }
    }

    /// Parse CSV text. Unparseable lines are skipped and reported; antenna ids
    /// outside `1..=antenna_count` are an error.
    pub fn parse_csv(text: &str, antenna_count: usize) -> Result<ParsedTrace> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut records = Vec::new();
        let mut malformed = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let line = i + 1;
            let Ok(row) = row else {
                malformed.push(line);
                continue;
            };
            if line == 1 && row.iter().map(str::trim).collect::<Vec<_>>().join(",") == TRACE_HEADER
            {
                continue;
            }
            if row.len() != 3 || row[0].trim().is_empty() {
                malformed.push(line);
                continue;
            }
            let (Ok(antenna), Ok(timestamp)) =
                (row[1].trim().parse::<i64>(), row[2].trim().parse::<i64>())
            else {
                malformed.push(line);
                continue;
            };
            let antenna = AntennaId::new(antenna, antenna_count)?;
            records.push((
                row[0].trim().to_string(),
                CallRecord { timestamp, antenna },
            ));
        }
        Ok(ParsedTrace {
            trace: Self::from_records(antenna_count, records),
            malformed,
        })
    }

    /// Write the trace as CSV with header, users in order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{TRACE_HEADER}")?;
        for u in &self.users {
            for r in &u.records {
                writeln!(out, "{},{},{}", u.user, r.antenna, r.timestamp)?;
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

/// Keep users that visited at least two antennas and made more calls than
/// there are observation days.
pub fn filter_users(trace: &Trace, observation_days: u32) -> Result<Trace> {
    if observation_days == 0 {
        return Err(Error::invalid("observation_days", "must be > 0"));
    }
    let users = trace
        .users
        .iter()
        .filter(|u| u.distinct_antennas() >= 2 && u.records.len() > observation_days as usize)
        .cloned()
        .collect();
    Ok(Trace {
        users,
        antenna_count: trace.antenna_count,
        sp_map: trace.sp_map.clone(),
    })
}

/// Per-user random train/test split.
///
/// Each user contributes `round(test_fraction * n)` records to the test set,
/// capped so at least one record stays in training.
pub fn split_train_test(trace: &Trace, test_fraction: f64, seed: u64) -> Result<(Trace, Trace)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid("test_fraction", "must lie in (0, 1)"));
    }
    let mut rng = stream(seed, 0, "split");
    let mut train = Vec::with_capacity(trace.users.len());
    let mut test = Vec::new();
    for u in &trace.users {
        let n = u.records.len();
        let n_test = ((test_fraction * n as f64).round() as usize).min(n.saturating_sub(1));
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut in_test = vec![false; n];
        for &k in &order[..n_test] {
            in_test[k] = true;
        }
        let (te, tr): (Vec<_>, Vec<_>) = u.records.iter().zip(&in_test).partition(|(_, &t)| t);
        train.push(UserTrace {
            user: u.user.clone(),
            records: tr.into_iter().map(|(r, _)| *r).collect(),
        });
        if !te.is_empty() {
            test.push(UserTrace {
                user: u.user.clone(),
                records: te.into_iter().map(|(r, _)| *r).collect(),
            });
        }
    }
    let mk = |users| Trace {
        users,
        antenna_count: trace.antenna_count,
        sp_map: trace.sp_map.clone(),
    };
    Ok((mk(train), mk(test)))
}

/// Synthetic trace together with its planted home assignment.
#[derive(Debug, Clone)]
pub struct GeneratedTrace {
    pub trace: Trace,
    /// Planted home of each user, in the order of `trace.users`.
    pub homes: BTreeMap<String, AntennaId>,
}

/// Parameters of [`generate_trace`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorParams {
    pub users: usize,
    pub days: u32,
    pub calls_per_day: f64,
    /// Relative call rate per hour in the morning, afternoon and night.
    pub activity: [f64; 3],
    pub seed: u64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            users: 500,
            days: 14,
            calls_per_day: 2.0,
            activity: [1.0; 3],
            seed: 0,
        }
    }
}

/// Sample a trace from a planted home-and-time model.
///
/// Homes are drawn uniformly from `home_weights` (per-antenna, need not be
/// normalized) or uniformly over all antennas when `None`. Calls form a
/// Poisson process at `calls_per_day`, with hourly rates within a day
/// proportional to `activity`, and each call's antenna is
/// drawn from the planted distribution of the user's home and the call's
/// time bucket.
pub fn generate_trace(
    planted: &MobilityModel,
    params: &GeneratorParams,
    home_weights: Option<&[f64]>,
) -> Result<GeneratedTrace> {
    if !(params.calls_per_day > 0.0) {
        return Err(Error::invalid("calls_per_day", "must be > 0"));
    }
    if params.activity.iter().any(|a| !(*a >= 0.0 && a.is_finite())) || params.activity.iter().all(|&a| a == 0.0) {
        return Err(Error::invalid("activity", "rates must be finite, >= 0 and not all zero"));
    }
    let peak = params.activity.iter().copied().fold(0.0, f64::max);
    if planted.kind() != crate::mobility::ModelKind::HomeAntennaTime {
        return Err(Error::invalid("planted", "generator needs a home_antenna_time model"));
    }
    let k = planted.antenna_count();
    let mut rng: SimRng = stream(params.seed, 0, "generate");
    let home_dist = match home_weights {
        Some(w) => Some(
            rand_distr::weighted::WeightedAliasIndex::new(w.to_vec())
                .map_err(|e| Error::invalid("home_weights", e.to_string()))?,
        ),
        None => None,
    };
    let horizon = params.days as i64 * SECONDS_PER_DAY;
    let expected = params.calls_per_day * params.days as f64;
    let count_dist = Poisson::new(expected).map_err(|e| Error::invalid("calls_per_day", e.to_string()))?;
    let partition = DayPartition::default();
    let width = params.users.saturating_sub(1).to_string().len();
    let mut users = Vec::with_capacity(params.users);
    let mut homes = BTreeMap::new();
    for u in 0..params.users {
        let home = AntennaId::from_index(match &home_dist {
            Some(d) => d.sample(&mut rng),
            None => rng.random_range(0..k),
        });
        let n = count_dist.sample(&mut rng) as usize;
        let mut times = Vec::with_capacity(n);
        while times.len() < n {
            // Thinning: keep a uniform time with probability rate / peak rate.
            let t = rng.random_range(0..horizon);
            let rate = params.activity[partition.bucket(t).period.index()];
            if rate == peak || rng.random::<f64>() * peak < rate {
                times.push(t);
            }
        }
        times.sort_unstable();
        let records = times
            .into_iter()
            .map(|timestamp| {
                let bucket = partition.bucket(timestamp);
                let antenna = planted.sample_destination(home, bucket, &mut rng);
                CallRecord { timestamp, antenna }
            })
            .collect();
        let user = format!("u{u:0width$}");
        homes.insert(user.clone(), home);
        users.push(UserTrace { user, records });
    }
    Ok(GeneratedTrace {
        trace: Trace {
            users,
            antenna_count: k,
            sp_map: planted.sp_map().cloned(),
        },
        homes,
    })
}
