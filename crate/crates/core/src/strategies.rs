//! Mitigation strategies: trip hooks applied during the mobility phase and
//! force-of-infection rules applied during the epidemic phase.
//!
//! * `CutCommunities` discourages trips that cross a community boundary when
//!   either end has infectives; each trip complies with probability `p`.
//! * `DecreaseMix` splits the contact probability inside a region between
//!   an individual's own group and everyone else, controlled by `q`.
//! * `GoHome` redirects a trip to the traveller's home when the destination
//!   has a lower proportion of infectives than the source (compliance `p`),
//!   and lowers the contact probability of locals to `beta_home`.
//!
//! Hooks never look at the traveller's own epidemic state. Configurations
//! that cannot change anything (`p = 0`, `q = 1`) draw no random numbers, so
//! they reproduce the baseline bit for bit.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::categorical::binomial;
use crate::communities::CommunityAssignment;
use crate::epidemic::{StepRecord, TripLog};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    #[default]
    Baseline,
    CutCommunities,
    DecreaseMix,
    GoHome,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Baseline => "baseline",
            StrategyKind::CutCommunities => "cut_communities",
            StrategyKind::DecreaseMix => "decrease_mix",
            StrategyKind::GoHome => "go_home",
        }
    }
}

/// What defines the mixing group of `DecreaseMix`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixGroups {
    /// Each home antenna is its own group.
    #[default]
    HomeAntenna,
    /// Groups are the Louvain communities of the home antenna.
    Community,
}

/// Which comparison triggers a `GoHome` recommendation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoHomeTrigger {
    /// Destination has a lower infective proportion than the source.
    #[default]
    DestinationLower,
    /// Destination has a higher infective proportion than the source.
    DestinationHigher,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Compliance probability (`CutCommunities`, `GoHome`).
    pub p: f64,
    /// Mixing parameter (`DecreaseMix`).
    pub q: f64,
    /// Home contact probability for `GoHome`; defaults to the recovery
    /// probability.
    pub beta_home: Option<f64>,
    pub mix_groups: MixGroups,
    pub trigger: GoHomeTrigger,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            kind: StrategyKind::Baseline,
            p: 0.0,
            q: 1.0,
            beta_home: None,
            mix_groups: MixGroups::HomeAntenna,
            trigger: GoHomeTrigger::DestinationLower,
        }
    }
}

impl StrategyConfig {
    pub fn baseline() -> Self {
        Self::default()
    }

    pub fn cut_communities(p: f64) -> Self {
        Self {
            kind: StrategyKind::CutCommunities,
            p,
            ..Self::default()
        }
    }

    pub fn decrease_mix(q: f64) -> Self {
        Self {
            kind: StrategyKind::DecreaseMix,
            q,
            ..Self::default()
        }
    }

    pub fn go_home(p: f64) -> Self {
        Self {
            kind: StrategyKind::GoHome,
            p,
            ..Self::default()
        }
    }

    /// The parameter that varies across cells of a comparison.
    pub fn parameter(&self) -> Option<f64> {
        match self.kind {
            StrategyKind::Baseline => None,
            StrategyKind::CutCommunities | StrategyKind::GoHome => Some(self.p),
            StrategyKind::DecreaseMix => Some(self.q),
        }
    }

    /// Whether Louvain communities are needed to compile this strategy.
    pub fn needs_communities(&self) -> bool {
        match self.kind {
            StrategyKind::CutCommunities => true,
            StrategyKind::DecreaseMix => self.mix_groups == MixGroups::Community,
            _ => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_at("strategy")
    }

    /// Validate, naming keys under `prefix` in errors.
    pub fn validate_at(&self, prefix: &str) -> Result<()> {
        let unit = |key: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{prefix}.{key}"), format!("{v} is outside [0, 1]")))
            }
        };
        unit("p", self.p)?;
        unit("q", self.q)?;
        if let Some(b) = self.beta_home {
            unit("beta_home", b)?;
        }
        Ok(())
    }
}

/// Outcome of a single proposed trip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripDecision {
    Proceed,
    Cancel,
    /// Go to this region (the traveller's home) instead.
    Redirect(usize),
}

/// Per-region infective and population counts the operator sees when
/// deciding on trips (snapshot at the start of the mobility phase).
#[derive(Debug, Clone, Copy)]
pub struct RegionView<'a> {
    pub infective: &'a [u64],
    pub population: &'a [u64],
}

impl RegionView<'_> {
    /// Infective proportion, zero for an empty region.
    pub fn prevalence(&self, region: usize) -> f64 {
        match self.population[region] {
            0 => 0.0,
            n => self.infective[region] as f64 / n as f64,
        }
    }
}

fn comply<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    p >= 1.0 || (p > 0.0 && rng.random::<f64>() < p)
}

fn cut_applies(src: usize, dst: usize, view: &RegionView, communities: &CommunityAssignment) -> bool {
    communities.of_index(src) != communities.of_index(dst)
        && (view.infective[src] >= 1 || view.infective[dst] >= 1)
}

/// Cancel a cross-community trip touching an affected region, with
/// probability `p`.
pub fn cut_communities_hook<R: Rng + ?Sized>(
    src: usize,
    dst: usize,
    view: &RegionView,
    communities: &CommunityAssignment,
    p: f64,
    rng: &mut R,
) -> TripDecision {
    if cut_applies(src, dst, view, communities) && comply(p, rng) {
        TripDecision::Cancel
    } else {
        TripDecision::Proceed
    }
}

fn gohome_applies(src: usize, dst: usize, home: usize, view: &RegionView, trigger: GoHomeTrigger) -> bool {
    // A trip that already ends at home needs no recommendation.
    if dst == home {
        return false;
    }
    let (d, s) = (view.prevalence(dst), view.prevalence(src));
    match trigger {
        GoHomeTrigger::DestinationLower => d < s,
        GoHomeTrigger::DestinationHigher => d > s,
    }
}

/// Redirect the trip to `home` with probability `p` when the trigger holds.
pub fn gohome_hook<R: Rng + ?Sized>(
    src: usize,
    dst: usize,
    home: usize,
    view: &RegionView,
    p: f64,
    trigger: GoHomeTrigger,
    rng: &mut R,
) -> TripDecision {
    if gohome_applies(src, dst, home, view, trigger) && comply(p, rng) {
        TripDecision::Redirect(home)
    } else {
        TripDecision::Proceed
    }
}

/// Split of the contact probability into own-group and other-group parts:
/// `beta_own = (1 - q + q * n_group / n_region) * beta`, `beta_other = beta - beta_own`.
pub fn contact_split(beta: f64, q: f64, n_group: u64, n_region: u64) -> (f64, f64) {
    let share = if n_region == 0 {
        0.0
    } else {
        n_group as f64 / n_region as f64
    };
    let own = ((1.0 - q + q * share) * beta).clamp(0.0, beta);
    // One of the two subtractions has its result in [beta/2, beta] and is
    // therefore exact, so the returned pair sums to beta bit for bit.
    let other = beta - own;
    (beta - other, other)
}

/// `DecreaseMix` infection probability of a member of group C in region i:
/// `beta_own * I_C / N_C + beta_other * I_notC / N_notC`, with any term over an
/// empty denominator taken as zero.
pub fn decreasemix_lambda(beta: f64, q: f64, n_group: u64, n_region: u64, i_group: u64, i_region: u64) -> f64 {
    let (own, other) = contact_split(beta, q, n_group, n_region);
    let ratio = |i: u64, n: u64| if n == 0 { 0.0 } else { i as f64 / n as f64 };
    own * ratio(i_group, n_group) + other * ratio(i_region - i_group, n_region - n_group)
}

/// `GoHome` infection probabilities `(local, visitor)` in a region:
/// `local = beta_home * I / N`, `visitor = (beta * I_vis + beta_home * I_loc) / N`.
pub fn gohome_lambda(beta: f64, beta_home: f64, n_region: u64, i_local: u64, i_visitor: u64) -> (f64, f64) {
    if n_region == 0 {
        return (0.0, 0.0);
    }
    let n = n_region as f64;
    let local = beta_home * (i_local + i_visitor) as f64 / n;
    let visitor = beta * i_visitor as f64 / n + beta_home * i_local as f64 / n;
    (local, visitor)
}

/// How a batch of identical trips was resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Routed {
    pub proceed: u64,
    pub canceled: u64,
    pub redirected: u64,
}

/// A strategy ready to be plugged into the engine.
#[derive(Debug, Clone)]
pub struct Strategy {
    config: StrategyConfig,
    communities: Option<CommunityAssignment>,
    /// Mixing group of each home class (`DecreaseMix`).
    groups: Vec<u32>,
    group_count: usize,
    beta_home: f64,
}

impl Strategy {
    pub fn baseline() -> Self {
        Self {
            config: StrategyConfig::baseline(),
            communities: None,
            groups: Vec::new(),
            group_count: 0,
            beta_home: 0.0,
        }
    }

    /// Compile `config` for a country of `regions` regions with recovery
    /// probability `g` (the default home contact probability).
    pub fn new(config: StrategyConfig, regions: usize, g: f64, communities: Option<CommunityAssignment>) -> Result<Self> {
        config.validate()?;
        if config.needs_communities() {
            match &communities {
                None => return Err(Error::invalid("strategy", format!("{} needs communities", config.kind.name()))),
                Some(c) if c.len() != regions => {
                    return Err(Error::invalid("communities", format!("expected {regions} antennas, got {}", c.len())))
                }
                _ => {}
            }
        }
        let (groups, group_count) = match (config.kind, config.mix_groups, &communities) {
            (StrategyKind::DecreaseMix, MixGroups::Community, Some(c)) => (c.labels().to_vec(), c.count()),
            (StrategyKind::DecreaseMix, MixGroups::HomeAntenna, _) => ((0..regions as u32).collect(), regions),
            _ => (Vec::new(), 0),
        };
        Ok(Self {
            config,
            communities,
            groups,
            group_count,
            beta_home: config.beta_home.unwrap_or(g),
        })
    }

    pub fn config(&self) -> &StrategyConfig {
        &self.config
    }

    pub fn kind(&self) -> StrategyKind {
        self.config.kind
    }

    pub fn communities(&self) -> Option<&CommunityAssignment> {
        self.communities.as_ref()
    }

    /// Whether this strategy ever touches trips.
    pub fn has_trip_hook(&self) -> bool {
        matches!(self.config.kind, StrategyKind::CutCommunities | StrategyKind::GoHome) && self.config.p > 0.0
    }

    /// Resolve `count` identical trips of class `home` from `src` to `dst`.
    /// Each trip complies independently, so the number of complying trips is
    /// binomial.
    pub fn route<R: Rng + ?Sized>(&self, src: usize, dst: usize, home: usize, count: u64, view: &RegionView, rng: &mut R) -> Routed {
        let p = self.config.p;
        let applies = match self.config.kind {
            StrategyKind::CutCommunities => {
                cut_applies(src, dst, view, self.communities.as_ref().expect("checked in new"))
            }
            StrategyKind::GoHome => gohome_applies(src, dst, home, view, self.config.trigger),
            _ => false,
        };
        if !applies {
            return Routed {
                proceed: count,
                ..Routed::default()
            };
        }
        let hit = binomial(rng, count, p);
        match self.config.kind {
            StrategyKind::CutCommunities => Routed {
                proceed: count - hit,
                canceled: hit,
                redirected: 0,
            },
            _ => Routed {
                proceed: count - hit,
                canceled: 0,
                redirected: hit,
            },
        }
    }

    /// Mixing group of a home class, for `DecreaseMix`.
    pub fn group_of(&self, class: usize) -> usize {
        self.groups[class] as usize
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    /// Whether the force of infection deviates from random mixing.
    pub fn structured_mixing(&self) -> bool {
        match self.config.kind {
            StrategyKind::DecreaseMix => self.config.q != 1.0,
            // With p = 0 nobody takes part, so GoHome is inactive.
            StrategyKind::GoHome => self.config.p > 0.0,
            _ => false,
        }
    }

    pub fn beta_home(&self) -> f64 {
        self.beta_home
    }
}

/// Share of proposed trips that a strategy canceled or redirected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffectedSummary {
    /// One entry per simulated step (the initial state is excluded).
    pub per_step: Vec<f64>,
    pub mean: f64,
    pub max: f64,
    /// Step at which `max` is first reached.
    pub argmax_step: usize,
}

fn proportion(log: &TripLog) -> f64 {
    if log.proposed == 0 {
        0.0
    } else {
        (log.canceled + log.redirected) as f64 / log.proposed as f64
    }
}

/// Proportion of trips affected per step, with its mean and maximum.
pub fn affected_movements(series: &[StepRecord]) -> AffectedSummary {
    let steps: Vec<&StepRecord> = series.iter().filter(|s| s.step > 0).collect();
    let per_step: Vec<f64> = steps.iter().map(|s| proportion(&s.trips)).collect();
    let mean = if per_step.is_empty() {
        0.0
    } else {
        per_step.iter().sum::<f64>() / per_step.len() as f64
    };
    let (mut max, mut argmax_step) = (0.0, 0);
    for (s, &p) in steps.iter().zip(&per_step) {
        if p > max {
            max = p;
            argmax_step = s.step;
        }
    }
    AffectedSummary {
        per_step,
        mean,
        max,
        argmax_step,
    }
}
