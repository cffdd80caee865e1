//! Day periods, day types and the mapping from timestamps to time buckets.

use serde::{Deserialize, Serialize};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Number of periods per day. The mobility model conditions on exactly three.
pub const PERIODS_PER_DAY: usize = 3;

/// Number of distinct (period, day type) buckets.
pub const BUCKETS: usize = PERIODS_PER_DAY * 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Period {
    Morning,
    Afternoon,
    Night,
}

impl Period {
    pub const ALL: [Period; 3] = [Period::Morning, Period::Afternoon, Period::Night];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayType {
    Weekday,
    Weekend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weekday {
    Monday,
    Tuesday,
    Wednesday,
    Thursday,
    Friday,
    Saturday,
    Sunday,
}

impl Weekday {
    const ALL: [Weekday; 7] = [
        Weekday::Monday,
        Weekday::Tuesday,
        Weekday::Wednesday,
        Weekday::Thursday,
        Weekday::Friday,
        Weekday::Saturday,
        Weekday::Sunday,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// The weekday `days` days after `self`.
    pub fn add_days(self, days: i64) -> Weekday {
        Self::ALL[(self.index() as i64 + days).rem_euclid(7) as usize]
    }

    pub fn day_type(self) -> DayType {
        match self {
            Weekday::Saturday | Weekday::Sunday => DayType::Weekend,
            _ => DayType::Weekday,
        }
    }
}

/// A (period of day, day type) pair: the time covariate of the mobility model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeBucket {
    pub period: Period,
    pub daytype: DayType,
}

impl TimeBucket {
    pub fn new(period: Period, daytype: DayType) -> Self {
        Self { period, daytype }
    }

    /// Dense index in `0..BUCKETS`: weekday periods first, then weekend.
    pub fn index(self) -> usize {
        self.daytype as usize * PERIODS_PER_DAY + self.period.index()
    }

    pub fn from_index(index: usize) -> Self {
        assert!(index < BUCKETS, "bucket index {index} out of range");
        let daytype = if index < PERIODS_PER_DAY {
            DayType::Weekday
        } else {
            DayType::Weekend
        };
        Self::new(Period::ALL[index % PERIODS_PER_DAY], daytype)
    }

    pub fn all() -> impl Iterator<Item = TimeBucket> {
        (0..BUCKETS).map(Self::from_index)
    }

    /// Long-run fraction of simulation steps spent in this bucket.
    pub fn frequency(self) -> f64 {
        let days = match self.daytype {
            DayType::Weekday => 5.0,
            DayType::Weekend => 2.0,
        };
        days / 7.0 / PERIODS_PER_DAY as f64
    }
}

/// Hour boundaries of the three day periods.
///
/// Morning is `[morning, afternoon)`, afternoon is `[afternoon, night)` and
/// night wraps midnight: `[night, 24) ∪ [0, morning)`. Records before the
/// morning boundary belong to the night of the calendar day they occur on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayPartition {
    pub morning: u32,
    pub afternoon: u32,
    pub night: u32,
}

impl Default for DayPartition {
    fn default() -> Self {
        Self {
            morning: 6,
            afternoon: 13,
            night: 20,
        }
    }
}

/// Weekday of day 0 of the timestamp clock (1970-01-01 was a Thursday).
pub const EPOCH_WEEKDAY: Weekday = Weekday::Thursday;

impl DayPartition {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.morning < self.afternoon && self.afternoon < self.night && self.night <= 24) {
            return Err(crate::Error::invalid(
                "day_partition",
                "require morning < afternoon < night <= 24",
            ));
        }
        Ok(())
    }

    pub fn period_of_seconds(&self, second_of_day: i64) -> Period {
        let hour = (second_of_day / 3600) as u32;
        if hour >= self.morning && hour < self.afternoon {
            Period::Morning
        } else if hour >= self.afternoon && hour < self.night {
            Period::Afternoon
        } else {
            Period::Night
        }
    }

    /// Bucket of a local-time timestamp (seconds since the clock's day 0).
    pub fn bucket(&self, timestamp: i64) -> TimeBucket {
        let day = timestamp.div_euclid(SECONDS_PER_DAY);
        let second = timestamp.rem_euclid(SECONDS_PER_DAY);
        TimeBucket::new(
            self.period_of_seconds(second),
            EPOCH_WEEKDAY.add_days(day).day_type(),
        )
    }
}

/// Bucket of a timestamp under the default 06/13/20 partition.
pub fn bucket(timestamp: i64) -> TimeBucket {
    DayPartition::default().bucket(timestamp)
}

/// Bucket of simulation step `step`, three steps per day starting with the
/// morning of `start`.
pub fn step_bucket(start: Weekday, step: usize) -> TimeBucket {
    let day = (step / PERIODS_PER_DAY) as i64;
    TimeBucket::new(
        Period::ALL[step % PERIODS_PER_DAY],
        start.add_days(day).day_type(),
    )
}
