//! Synthetic countries: a planted home-and-time mobility model, resident
//! populations and a sub-prefecture map, all derived from one seed.
//!
//! Antennas are split into contiguous clusters (which double as
//! sub-prefectures). From home `h` in period `t`, an individual stays at `h`
//! with probability `stay_home[t]`; otherwise they visit a shared hub for
//! that period, one of a few favourite antennas inside their cluster, or a
//! few fixed antennas in other clusters.

use rand::Rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::categorical::Categorical;
use crate::mobility::MobilityModel;
use crate::seed::stream;
use crate::time::{DayType, TimeBucket};
use crate::trace::SubprefMap;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountrySpec {
    pub antennas: usize,
    pub clusters: usize,
    /// Total number of residents.
    pub population: u64,
    /// Relative spread of antenna populations around their mean, in `[0, 1)`.
    pub population_spread: f64,
    /// Probability of staying home in the morning, afternoon and night of a
    /// weekday.
    pub stay_home: [f64; 3],
    /// Same for weekend days.
    pub weekend_stay_home: [f64; 3],
    /// Favourite destinations inside the home cluster.
    pub neighbours: usize,
    /// Share of away-from-home trips that leave the cluster.
    pub cross_cluster: f64,
    /// Destinations in other clusters per home.
    pub cross_targets: usize,
    /// Share of away-from-home trips that go to the period's hub.
    pub hub_share: [f64; 3],
    pub seed: u64,
}

impl Default for CountrySpec {
    fn default() -> Self {
        Self {
            antennas: 100,
            clusters: 5,
            population: 100_000,
            population_spread: 0.5,
            stay_home: [0.5, 0.5, 0.9],
            weekend_stay_home: [0.7, 0.7, 0.95],
            neighbours: 4,
            cross_cluster: 0.05,
            cross_targets: 2,
            hub_share: [0.0; 3],
            seed: 1,
        }
    }
}

/// A generated country.
#[derive(Debug, Clone)]
pub struct Country {
    pub model: MobilityModel,
    pub populations: Vec<u64>,
    pub sp_map: SubprefMap,
    /// Planted cluster of every antenna (zero-based).
    pub clusters: Vec<u32>,
}

impl CountrySpec {
    pub fn validate(&self) -> Result<()> {
        let key = |k: &str| format!("synthetic.{k}");
        if self.antennas == 0 {
            return Err(Error::invalid(key("antennas"), "must be > 0"));
        }
        if self.clusters == 0 || self.clusters > self.antennas {
            return Err(Error::invalid(key("clusters"), "must be between 1 and the antenna count"));
        }
        if !(0.0..1.0).contains(&self.population_spread) {
            return Err(Error::invalid(key("population_spread"), "must be in [0, 1)"));
        }
        for (name, v) in [("stay_home", self.stay_home), ("weekend_stay_home", self.weekend_stay_home), ("hub_share", self.hub_share)] {
            if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::invalid(key(name), "entries must be in [0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.cross_cluster) {
            return Err(Error::invalid(key("cross_cluster"), "must be in [0, 1]"));
        }
        Ok(())
    }

    fn cluster_of(&self, antenna: usize) -> usize {
        antenna * self.clusters / self.antennas
    }

    pub fn build(&self) -> Result<Country> {
        self.validate()?;
        let k = self.antennas;
        let mut rng = stream(self.seed, 0, "country");
        let clusters: Vec<u32> = (0..k).map(|a| self.cluster_of(a) as u32).collect();
        let members: Vec<Vec<u32>> = (0..self.clusters)
            .map(|c| (0..k as u32).filter(|&a| clusters[a as usize] == c as u32).collect())
            .collect();

        // Hubs: one antenna per period, spread over the country.
        let hubs: Vec<u32> = (0..3).map(|p| ((2 * p + 1) * k / 6) as u32).collect();

        let mut destinations = Vec::with_capacity(k);
        for h in 0..k {
            let own = &members[clusters[h] as usize];
            let mut near: Vec<u32> = own.iter().copied().filter(|&a| a as usize != h).collect();
            near.shuffle(&mut rng);
            near.truncate(self.neighbours);
            let near: Vec<(u32, f64)> = near.into_iter().map(|a| (a, 0.5 + rng.random::<f64>())).collect();
            let mut far: Vec<(u32, f64)> = Vec::new();
            if self.clusters > 1 {
                for _ in 0..self.cross_targets {
                    let mut c = rng.random_range(0..self.clusters - 1);
                    if c >= clusters[h] as usize {
                        c += 1;
                    }
                    let pool = &members[c];
                    far.push((pool[rng.random_range(0..pool.len())], 0.5 + rng.random::<f64>()));
                }
            }
            destinations.push((near, far));
        }

        let model = MobilityModel::planted(k, Some(SubprefMap::new(clusters.clone())), |home, bucket: TimeBucket| {
            let h = home.index();
            let p = bucket.period.index();
            let stay = match bucket.daytype {
                DayType::Weekday => self.stay_home[p],
                DayType::Weekend => self.weekend_stay_home[p],
            };
            let away = 1.0 - stay;
            let hub = away * self.hub_share[p];
            let (near, far) = &destinations[h];
            let rest = away - hub;
            let (cross, local) = if far.is_empty() {
                (0.0, rest)
            } else {
                (rest * self.cross_cluster, rest * (1.0 - self.cross_cluster))
            };
            let mut entries = vec![(h as u32, stay), (hubs[p], hub)];
            let spread = |list: &[(u32, f64)], mass: f64, out: &mut Vec<(u32, f64)>| {
                let total: f64 = list.iter().map(|e| e.1).sum();
                out.extend(list.iter().map(|&(a, w)| (a, mass * w / total)));
            };
            if near.is_empty() {
                entries.push((h as u32, local));
            } else {
                spread(near, local, &mut entries);
            }
            spread(far, cross, &mut entries);
            Categorical::from_sparse(k, 0.0, entries)
        })?;

        let weights: Vec<f64> = (0..k)
            .map(|_| 1.0 + self.population_spread * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        let populations = apportion(self.population, &weights);
        Ok(Country {
            model,
            populations,
            sp_map: SubprefMap::new(clusters.clone()),
            clusters,
        })
    }
}

/// Split `total` proportionally to `weights` with largest-remainder rounding.
pub fn apportion(total: u64, weights: &[f64]) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut out: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let left = total - out.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(left as usize) {
        out[i] += 1;
    }
    out
}
