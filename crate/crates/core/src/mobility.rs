//! Home-and-time conditioned mobility model with Dirichlet smoothing, the
//! three baselines it is compared against, and the held-out evaluation.
//!
//! | kind                 | conditioning context                      |
//! |----------------------|-------------------------------------------|
//! | `HomeAntennaTime`    | home antenna, period of day, day type     |
//! | `SubPrefTime`        | home sub-prefecture, period, day type     |
//! | `TimeOnly`           | period, day type                          |
//! | `Markov`             | previous antenna                          |
//!
//! Every row is a [`Categorical`] over all antennas holding raw counts and the
//! shared concentration `alpha`, so probabilities are the posterior
//! predictive `(count + alpha) / (total + alpha * |antennas|)` and contexts
//! never seen in training are uniform.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::categorical::Categorical;
use crate::time::{DayPartition, Period, TimeBucket, BUCKETS};
use crate::trace::{AntennaId, SubprefMap, Trace};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    HomeAntennaTime,
    SubPrefTime,
    TimeOnly,
    Markov,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::HomeAntennaTime,
        ModelKind::SubPrefTime,
        ModelKind::TimeOnly,
        ModelKind::Markov,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::HomeAntennaTime => "home_antenna_time",
            ModelKind::SubPrefTime => "subpref_time",
            ModelKind::TimeOnly => "time_only",
            ModelKind::Markov => "markov",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Conditioning context for a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Context {
    Home { home: AntennaId, bucket: TimeBucket },
    Previous(AntennaId),
}

/// Home antenna of each user.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HomeAssignment {
    pub homes: BTreeMap<String, AntennaId>,
}

impl HomeAssignment {
    pub fn get(&self, user: &str) -> Option<AntennaId> {
        self.homes.get(user).copied()
    }

    pub fn len(&self) -> usize {
        self.homes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.homes.is_empty()
    }

    /// Number of users per home antenna.
    pub fn class_sizes(&self, antenna_count: usize) -> Vec<u64> {
        let mut sizes = vec![0; antenna_count];
        for h in self.homes.values() {
            sizes[h.index()] += 1;
        }
        sizes
    }
}

/// Most visited antenna during night periods, ties to the lowest antenna id.
/// Users without night records fall back to their most visited antenna.
pub fn infer_homes(train: &Trace) -> HomeAssignment {
    infer_homes_with(train, &DayPartition::default())
}

pub fn infer_homes_with(train: &Trace, partition: &DayPartition) -> HomeAssignment {
    let argmax = |counts: &BTreeMap<AntennaId, u32>| {
        // BTreeMap iterates in ascending id; strict > keeps the lowest on ties.
        let mut best: Option<(AntennaId, u32)> = None;
        for (&a, &c) in counts {
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((a, c));
            }
        }
        best.map(|b| b.0)
    };
    let mut homes = BTreeMap::new();
    for u in &train.users {
        let mut night: BTreeMap<AntennaId, u32> = BTreeMap::new();
        let mut all: BTreeMap<AntennaId, u32> = BTreeMap::new();
        for r in &u.records {
            *all.entry(r.antenna).or_default() += 1;
            if partition.bucket(r.timestamp).period == Period::Night {
                *night.entry(r.antenna).or_default() += 1;
            }
        }
        if let Some(home) = argmax(&night).or_else(|| argmax(&all)) {
            homes.insert(u.user.clone(), home);
        }
    }
    HomeAssignment { homes }
}

/// Fitted (or planted) conditional distributions over antennas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityModel {
    kind: ModelKind,
    alpha: f64,
    antenna_count: usize,
    #[serde(default)]
    partition: DayPartition,
    sp_map: Option<SubprefMap>,
    rows: Vec<Categorical>,
}

const FORMAT_NAME: &str = "micromeasure-mobility-model";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile<T> {
    format: String,
    version: u32,
    model: T,
}

impl MobilityModel {
    fn row_count(kind: ModelKind, antenna_count: usize, sp_map: Option<&SubprefMap>) -> Result<usize> {
        Ok(match kind {
            ModelKind::HomeAntennaTime => antenna_count * BUCKETS,
            ModelKind::SubPrefTime => {
                let sp = sp_map.ok_or_else(|| Error::invalid("sp_map", "required for subpref_time"))?;
                sp.count * BUCKETS
            }
            ModelKind::TimeOnly => BUCKETS,
            ModelKind::Markov => antenna_count,
        })
    }

    /// Assemble a model from explicit rows, in the kind's row order
    /// (`context * 6 + bucket` for home-conditioned kinds, bucket for
    /// `TimeOnly`, previous antenna for `Markov`).
    pub fn from_rows(
        kind: ModelKind,
        antenna_count: usize,
        sp_map: Option<SubprefMap>,
        rows: Vec<Categorical>,
    ) -> Result<Self> {
        let expected = Self::row_count(kind, antenna_count, sp_map.as_ref())?;
        if rows.len() != expected {
            return Err(Error::invalid(
                "rows",
                format!("{kind} over {antenna_count} antennas needs {expected} rows, got {}", rows.len()),
            ));
        }
        if rows.iter().any(|r| r.len() != antenna_count) {
            return Err(Error::invalid("rows", "every row must span all antennas"));
        }
        if let Some(sp) = &sp_map {
            if sp.subpref.len() != antenna_count {
                return Err(Error::invalid("sp_map", "must map every antenna"));
            }
        }
        let alpha = rows.first().map_or(0.0, Categorical::alpha);
        Ok(Self {
            kind,
            alpha,
            antenna_count,
            partition: DayPartition::default(),
            sp_map,
            rows,
        })
    }

    /// Home-and-time model whose rows come from `f(home, bucket)`.
    pub fn planted(
        antenna_count: usize,
        sp_map: Option<SubprefMap>,
        mut f: impl FnMut(AntennaId, TimeBucket) -> Categorical,
    ) -> Result<Self> {
        let mut rows = Vec::with_capacity(antenna_count * BUCKETS);
        for h in 0..antenna_count {
            for b in TimeBucket::all() {
                rows.push(f(AntennaId::from_index(h), b));
            }
        }
        Self::from_rows(ModelKind::HomeAntennaTime, antenna_count, sp_map, rows)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn antenna_count(&self) -> usize {
        self.antenna_count
    }

    pub fn sp_map(&self) -> Option<&SubprefMap> {
        self.sp_map.as_ref()
    }

    pub fn partition(&self) -> &DayPartition {
        &self.partition
    }

    fn invalid_context(&self, message: impl Into<String>) -> Error {
        Error::InvalidContext {
            kind: self.kind.name(),
            message: message.into(),
        }
    }

    /// Row for a context.
    pub fn row(&self, context: Context) -> Result<&Categorical> {
        let check = |a: AntennaId| {
            if a.index() < self.antenna_count {
                Ok(a)
            } else {
                Err(self.invalid_context(format!("antenna {a} out of range")))
            }
        };
        let index = match (self.kind, context) {
            (ModelKind::HomeAntennaTime, Context::Home { home, bucket }) => {
                check(home)?.index() * BUCKETS + bucket.index()
            }
            (ModelKind::SubPrefTime, Context::Home { home, bucket }) => {
                let sp = self.sp_map.as_ref().expect("checked at construction");
                sp.of(check(home)?) * BUCKETS + bucket.index()
            }
            (ModelKind::TimeOnly, Context::Home { bucket, .. }) => bucket.index(),
            (ModelKind::Markov, Context::Previous(prev)) => check(prev)?.index(),
            (ModelKind::Markov, Context::Home { .. }) => {
                return Err(self.invalid_context("markov model needs a previous antenna"))
            }
            (_, Context::Previous(_)) => {
                return Err(self.invalid_context("time-bucket model needs a home and bucket"))
            }
        };
        Ok(&self.rows[index])
    }

    /// Row of a home-conditioned model by zero-based home index. Hot path of
    /// the simulator; panics on a `Markov` model.
    #[inline]
    pub fn home_row(&self, home_index: usize, bucket: TimeBucket) -> &Categorical {
        match self.kind {
            ModelKind::HomeAntennaTime => &self.rows[home_index * BUCKETS + bucket.index()],
            ModelKind::SubPrefTime => {
                let sp = self.sp_map.as_ref().expect("checked at construction");
                &self.rows[sp.subpref[home_index] as usize * BUCKETS + bucket.index()]
            }
            ModelKind::TimeOnly => &self.rows[bucket.index()],
            ModelKind::Markov => panic!("markov model has no home-conditioned rows"),
        }
    }

    /// Dense probability vector over antennas for a context.
    pub fn predict(&self, context: Context) -> Result<Vec<f64>> {
        self.row(context).map(Categorical::to_dense)
    }

    pub fn prob(&self, context: Context, antenna: AntennaId) -> Result<f64> {
        Ok(self.row(context)?.prob(antenna.index() as u32))
    }

    /// Draw a destination for a member of `home`'s class during `bucket`.
    pub fn sample_destination<R: Rng + ?Sized>(
        &self,
        home: AntennaId,
        bucket: TimeBucket,
        rng: &mut R,
    ) -> AntennaId {
        AntennaId::from_index(self.home_row(home.index(), bucket).sample(rng) as usize)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            model: self,
        };
        let text = serde_json::to_string(&file).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Serde(m) => Error::parse(path.display().to_string(), m),
            e => e,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile<MobilityModel> =
            serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        if file.format != FORMAT_NAME || file.version != FORMAT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported model format {} v{}",
                file.format, file.version
            )));
        }
        let m = file.model;
        Self::from_rows(m.kind, m.antenna_count, m.sp_map, m.rows).map(|mut r| {
            r.alpha = m.alpha;
            r.partition = m.partition;
            r
        })
    }
}

/// Fit a model of `kind` with symmetric Dirichlet concentration `alpha`.
///
/// `homes` must cover every training user for the home-conditioned kinds. For
/// `Markov` the first record of each user contributes no transition.
pub fn fit(train: &Trace, homes: &HomeAssignment, kind: ModelKind, alpha: f64) -> Result<MobilityModel> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("alpha", "must be finite and > 0"));
    }
    let k = train.antenna_count;
    let sp_map = train.sp_map.clone();
    let n_rows = MobilityModel::row_count(kind, k, sp_map.as_ref())?;
    let partition = DayPartition::default();
    let mut counts: Vec<HashMap<u32, f64>> = vec![HashMap::new(); n_rows];
    for u in &train.users {
        let home = match kind {
            ModelKind::HomeAntennaTime | ModelKind::SubPrefTime => {
                Some(homes.get(&u.user).ok_or_else(|| Error::UnknownUser(u.user.clone()))?)
            }
            _ => None,
        };
        let mut prev: Option<AntennaId> = None;
        for r in &u.records {
            let b = partition.bucket(r.timestamp).index();
            let row = match kind {
                ModelKind::HomeAntennaTime => Some(home.unwrap().index() * BUCKETS + b),
                ModelKind::SubPrefTime => {
                    Some(sp_map.as_ref().unwrap().of(home.unwrap()) * BUCKETS + b)
                }
                ModelKind::TimeOnly => Some(b),
                ModelKind::Markov => prev.map(AntennaId::index),
            };
            if let Some(row) = row {
                *counts[row].entry(r.antenna.index() as u32).or_default() += 1.0;
            }
            prev = Some(r.antenna);
        }
    }
    let rows = counts
        .into_iter()
        .map(|c| Categorical::from_sparse(k, alpha, c))
        .collect();
    let mut model = MobilityModel::from_rows(kind, k, sp_map, rows)?;
    model.alpha = alpha;
    Ok(model)
}

/// Held-out log-likelihood of one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: ModelKind,
    /// Mean natural-log likelihood per scored test record.
    pub avg_loglik: f64,
    pub n_test: usize,
}

/// Average log-likelihood of `test` under `model`.
///
/// For `Markov`, each test record is conditioned on the user's previous record
/// in the merged train and test timeline; a user's first record overall is not
/// scored. `train` is consulted only for that purpose.
pub fn evaluate(
    model: &MobilityModel,
    train: &Trace,
    test: &Trace,
    homes: &HomeAssignment,
) -> Result<EvalReport> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for u in &test.users {
        match model.kind() {
            ModelKind::Markov => {
                let mut timeline: Vec<(i64, bool, AntennaId)> = u
                    .records
                    .iter()
                    .map(|r| (r.timestamp, true, r.antenna))
                    .collect();
                if let Some(t) = train.user(&u.user) {
                    timeline.extend(t.records.iter().map(|r| (r.timestamp, false, r.antenna)));
                }
                timeline.sort();
                for w in timeline.windows(2) {
                    if w[1].1 {
                        sum += model.prob(Context::Previous(w[0].2), w[1].2)?.ln();
                        n += 1;
                    }
                }
            }
            _ => {
                let home = match model.kind() {
                    ModelKind::TimeOnly => homes.get(&u.user).unwrap_or(AntennaId::from_index(0)),
                    _ => homes.get(&u.user).ok_or_else(|| Error::UnknownUser(u.user.clone()))?,
                };
                for r in &u.records {
                    let bucket = model.partition().bucket(r.timestamp);
                    sum += model.prob(Context::Home { home, bucket }, r.antenna)?.ln();
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyTestSet);
    }
    Ok(EvalReport {
        kind: model.kind(),
        avg_loglik: sum / n as f64,
        n_test: n,
    })
}

/// Fit and evaluate every model kind the trace supports (sub-prefecture model
/// only with a sub-prefecture map), best first.
pub fn compare_models(train: &Trace, test: &Trace, alpha: f64) -> Result<Vec<EvalReport>> {
    let homes = infer_homes(train);
    let mut reports = Vec::new();
    for kind in ModelKind::ALL {
        if kind == ModelKind::SubPrefTime && train.sp_map.is_none() {
            continue;
        }
        let model = fit(train, &homes, kind, alpha)?;
        reports.push(evaluate(&model, train, test, &homes)?);
    }
    reports.sort_by(|a, b| b.avg_loglik.total_cmp(&a.avg_loglik));
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::{DayType, SECONDS_PER_DAY};
    use crate::trace::{CallRecord, UserTrace};

    // Day 4 of the clock is a Monday.
    const MONDAY: i64 = 4 * SECONDS_PER_DAY;

    fn night(day: i64) -> i64 {
        MONDAY + day * SECONDS_PER_DAY + 22 * 3600
    }

    fn user(id: &str, recs: &[(i64, u32)]) -> UserTrace {
        UserTrace {
            user: id.into(),
            records: recs
                .iter()
                .map(|&(t, a)| CallRecord {
                    timestamp: t,
                    antenna: AntennaId::from_index(a as usize - 1),
                })
                .collect(),
        }
    }

    fn trace(k: usize, users: Vec<UserTrace>) -> Trace {
        Trace {
            users,
            antenna_count: k,
            sp_map: None,
        }
    }

    #[test]
    fn home_is_night_argmax() {
        let mut recs: Vec<(i64, u32)> = (0..5).map(|d| (night(d), 3)).collect();
        recs.extend((0..2).map(|d| (night(d) + 60, 7)));
        recs.extend((0..9).map(|d| (MONDAY + d * SECONDS_PER_DAY + 10 * 3600, 9)));
        recs.sort();
        let t = trace(10, vec![user("a", &recs)]);
        assert_eq!(infer_homes(&t).get("a"), Some(AntennaId::from_index(2)));
    }

    #[test]
    fn home_ties_go_to_lowest_id() {
        let mut recs: Vec<(i64, u32)> = (0..4).map(|d| (night(d), 7)).collect();
        recs.extend((0..4).map(|d| (night(d) + 60, 3)));
        recs.sort();
        let t = trace(10, vec![user("a", &recs)]);
        assert_eq!(infer_homes(&t).get("a").unwrap().get(), 3);
    }

    #[test]
    fn home_falls_back_without_night_records() {
        let noon = |d: i64| MONDAY + d * SECONDS_PER_DAY + 12 * 3600;
        let t = trace(10, vec![user("a", &[(noon(0), 4), (noon(1), 6), (noon(2), 6)])]);
        assert_eq!(infer_homes(&t).get("a").unwrap().get(), 6);
    }

    #[test]
    fn fit_posterior_predictive() {
        // Home 1, weekday night: counts {a1: 3, a2: 1}.
        let t = trace(4, vec![user("a", &[(night(0), 1), (night(1), 1), (night(2), 1), (night(3), 2)])]);
        let homes = infer_homes(&t);
        let m = fit(&t, &homes, ModelKind::HomeAntennaTime, 1.0).unwrap();
        let ctx = |period| Context::Home {
            home: AntennaId::from_index(0),
            bucket: TimeBucket::new(period, DayType::Weekday),
        };
        assert_eq!(m.predict(ctx(Period::Night)).unwrap(), vec![0.5, 0.25, 0.125, 0.125]);
        assert_eq!(m.predict(ctx(Period::Morning)).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn vanishing_alpha_recovers_frequencies() {
        let t = trace(5, vec![user("a", &[(night(0), 1), (night(1), 1), (night(2), 1), (night(3), 4)])]);
        let homes = infer_homes(&t);
        let m = fit(&t, &homes, ModelKind::HomeAntennaTime, 1e-12).unwrap();
        let p = m
            .predict(Context::Home {
                home: AntennaId::from_index(0),
                bucket: TimeBucket::new(Period::Night, DayType::Weekday),
            })
            .unwrap();
        let direct = [0.75, 0.0, 0.0, 0.25, 0.0];
        for (a, b) in p.iter().zip(direct) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn unknown_user_is_an_error() {
        let t = trace(3, vec![user("a", &[(night(0), 1)])]);
        let err = fit(&t, &HomeAssignment::default(), ModelKind::HomeAntennaTime, 0.5).unwrap_err();
        assert!(matches!(err, Error::UnknownUser(_)));
        assert!(fit(&t, &HomeAssignment::default(), ModelKind::TimeOnly, 0.5).is_ok());
        assert!(fit(&t, &HomeAssignment::default(), ModelKind::TimeOnly, 0.0).is_err());
        assert!(fit(&t, &HomeAssignment::default(), ModelKind::SubPrefTime, 0.5).is_err());
    }

    #[test]
    fn time_only_ignores_home() {
        let t = trace(
            4,
            vec![
                user("a", &[(night(0), 1), (night(1), 1)]),
                user("b", &[(night(0), 3), (night(1), 2), (night(2), 3)]),
            ],
        );
        let homes = infer_homes(&t);
        let m = fit(&t, &homes, ModelKind::TimeOnly, 0.5).unwrap();
        let b = TimeBucket::new(Period::Night, DayType::Weekday);
        let p1 = m.predict(Context::Home { home: AntennaId::from_index(0), bucket: b }).unwrap();
        let p2 = m.predict(Context::Home { home: AntennaId::from_index(2), bucket: b }).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn markov_rows_are_transition_counts() {
        let t = trace(3, vec![user("a", &[(0, 1), (10, 2), (20, 1), (30, 2), (40, 3)])]);
        let m = fit(&t, &HomeAssignment::default(), ModelKind::Markov, 0.5).unwrap();
        // From a1: {a2: 2}; from a2: {a1: 1, a3: 1}.
        let from1 = m.predict(Context::Previous(AntennaId::from_index(0))).unwrap();
        let recompute = |c: [f64; 3]| {
            let tot: f64 = c.iter().sum::<f64>() + 1.5;
            c.map(|x| (x + 0.5) / tot)
        };
        assert_eq!(from1, recompute([0.0, 2.0, 0.0]).to_vec());
        let from2 = m.predict(Context::Previous(AntennaId::from_index(1))).unwrap();
        assert_eq!(from2, recompute([1.0, 0.0, 1.0]).to_vec());
        assert!(m.predict(Context::Home { home: AntennaId::from_index(0), bucket: TimeBucket::from_index(0) }).is_err());
    }

    #[test]
    fn uniform_model_loglik() {
        let rows = vec![Categorical::uniform(100); 100 * BUCKETS];
        let m = MobilityModel::from_rows(ModelKind::HomeAntennaTime, 100, None, rows).unwrap();
        let t = trace(100, vec![user("a", &[(night(0), 5), (night(1), 17), (night(2), 99)])]);
        let homes = infer_homes(&t);
        let r = evaluate(&m, &t, &t, &homes).unwrap();
        assert!((r.avg_loglik + 100f64.ln()).abs() < 1e-12);
        assert_eq!(r.n_test, 3);
        assert!(matches!(evaluate(&m, &t, &trace(100, vec![]), &homes), Err(Error::EmptyTestSet)));
    }

    #[test]
    fn model_file_round_trip() {
        let t = trace(6, vec![user("a", &[(night(0), 1), (night(1), 2), (night(1) + 9, 5)])]);
        let homes = infer_homes(&t);
        let m = fit(&t, &homes, ModelKind::HomeAntennaTime, 0.5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        assert_eq!(MobilityModel::load(&path).unwrap(), m);
    }
}
