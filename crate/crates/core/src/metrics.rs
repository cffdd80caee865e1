//! Outbreak metrics: peak size `I*`, peak time `T*`, final recovered share
//! `Q*`, and the share of trips a strategy touched.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::epidemic::RunRecord;
use crate::strategies::affected_movements;
use crate::time::PERIODS_PER_DAY;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Largest infective share over the run.
    pub i_star: f64,
    /// First step at which `i_star` is reached.
    pub t_star: usize,
    /// Recovered share at the last step.
    pub q_star: f64,
    /// Infectives remained at the last step, so `q_star` is not final.
    pub truncated: bool,
    pub affected_mean: f64,
    pub affected_max: f64,
    pub affected_argmax: usize,
}

impl RunMetrics {
    pub fn t_star_days(&self) -> f64 {
        self.t_star as f64 / PERIODS_PER_DAY as f64
    }
}

pub fn compute_metrics(record: &RunRecord) -> RunMetrics {
    let n = record.population.max(1) as f64;
    let (mut peak, mut t_star) = (0u64, 0usize);
    for s in &record.series {
        if s.i > peak {
            peak = s.i;
            t_star = s.step;
        }
    }
    let last = record.series.last().expect("a run always records its initial state");
    let affected = affected_movements(&record.series);
    RunMetrics {
        i_star: peak as f64 / n,
        t_star,
        q_star: last.r as f64 / n,
        truncated: last.i > 0,
        affected_mean: affected.mean,
        affected_max: affected.max,
        affected_argmax: affected.argmax_step,
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        let n = v.len() as f64;
        // Shifted by the first value so identical samples give exact results.
        let shift = v[0];
        let mean = shift + v.iter().map(|x| x - shift).sum::<f64>() / n;
        let std = if v.len() < 2 {
            0.0
        } else {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMetrics {
    pub runs: Vec<RunMetrics>,
    pub horizon: usize,
    pub population: u64,
    pub i_star: Stat,
    pub t_star: Stat,
    pub q_star: Stat,
    pub truncated_runs: usize,
    pub affected_mean: Stat,
    pub affected_max: Stat,
    /// Mean `[S, I, R]` per step.
    pub mean_trajectory: Vec<[f64; 3]>,
}

impl EnsembleMetrics {
    /// Peak infective share of the mean trajectory. Never above the mean of
    /// the per-run peaks.
    pub fn mean_trajectory_peak(&self) -> f64 {
        let n = self.population.max(1) as f64;
        self.mean_trajectory.iter().map(|x| x[1]).fold(0.0, f64::max) / n
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("runs", self.runs.len().to_string());
        kv("horizon", self.horizon.to_string());
        kv("population", self.population.to_string());
        for (name, stat) in [
            ("i_star", self.i_star),
            ("t_star", self.t_star),
            ("q_star", self.q_star),
            ("affected_mean", self.affected_mean),
            ("affected_max", self.affected_max),
        ] {
            kv(&format!("{name}_mean"), fmt(stat.mean));
            kv(&format!("{name}_std"), fmt(stat.std));
        }
        kv("t_star_days_mean", fmt(self.t_star.mean / PERIODS_PER_DAY as f64));
        kv("truncated_runs", self.truncated_runs.to_string());
        kv("mean_trajectory_peak", fmt(self.mean_trajectory_peak()));
        s
    }

    pub fn write_trajectory_csv(&self, out: &mut String) {
        out.push_str("step,S,I,R\n");
        for (step, x) in self.mean_trajectory.iter().enumerate() {
            let _ = writeln!(out, "{step},{},{},{}", fmt(x[0]), fmt(x[1]), fmt(x[2]));
        }
    }
}

/// Shortest representation that parses back to the same value.
pub(crate) fn fmt(x: f64) -> String {
    format!("{x:?}")
}

pub fn ensemble_metrics(records: &[RunRecord]) -> Result<EnsembleMetrics> {
    let first = records.first().ok_or(Error::EmptyEnsemble)?;
    let horizon = first.horizon();
    if let Some(r) = records.iter().find(|r| r.horizon() != horizon) {
        return Err(Error::MixedHorizons(horizon, r.horizon()));
    }
    let runs: Vec<RunMetrics> = records.iter().map(compute_metrics).collect();
    let mut mean_trajectory = vec![[0.0; 3]; horizon + 1];
    for r in records {
        for (m, s) in mean_trajectory.iter_mut().zip(&r.series) {
            m[0] += s.s as f64;
            m[1] += s.i as f64;
            m[2] += s.r as f64;
        }
    }
    let k = records.len() as f64;
    for m in &mut mean_trajectory {
        m.iter_mut().for_each(|x| *x /= k);
    }
    let out = EnsembleMetrics {
        horizon,
        population: first.population,
        i_star: Stat::of(runs.iter().map(|r| r.i_star)),
        t_star: Stat::of(runs.iter().map(|r| r.t_star as f64)),
        q_star: Stat::of(runs.iter().map(|r| r.q_star)),
        truncated_runs: runs.iter().filter(|r| r.truncated).count(),
        affected_mean: Stat::of(runs.iter().map(|r| r.affected_mean)),
        affected_max: Stat::of(runs.iter().map(|r| r.affected_max)),
        runs,
        mean_trajectory,
    };
    debug_assert!(out.mean_trajectory_peak() <= out.i_star.mean + 1e-12);
    Ok(out)
}

pub const COMPARISON_HEADER: &str = "strategy,param,i_star_mean,i_star_std,t_star_mean,t_star_std,t_star_days_mean,q_star_mean,q_star_std,truncated_runs,affected_mean,affected_max";

/// One row of the comparison CSV.
pub fn comparison_row(strategy: &str, param: Option<f64>, m: &EnsembleMetrics) -> String {
    format!(
        "{strategy},{},{},{},{},{},{},{},{},{},{},{}",
        param.map(fmt).unwrap_or_default(),
        fmt(m.i_star.mean),
        fmt(m.i_star.std),
        fmt(m.t_star.mean),
        fmt(m.t_star.std),
        fmt(m.t_star.mean / PERIODS_PER_DAY as f64),
        fmt(m.q_star.mean),
        fmt(m.q_star.std),
        m.truncated_runs,
        fmt(m.affected_mean.mean),
        fmt(m.affected_max.mean),
    )
}
