//! UTC calendar helpers shared by the day, week and month binning code.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Days, NaiveDate, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// UTC calendar date of a unix timestamp (seconds).
pub fn utc_date(ts: i64) -> NaiveDate {
    DateTime::<Utc>::from_timestamp(ts, 0)
        .map(|dt| dt.date_naive())
        .unwrap_or(NaiveDate::MIN)
}

/// Midnight UTC of `date` as a unix timestamp.
pub fn day_start(date: NaiveDate) -> i64 {
    date.and_hms_opt(0, 0, 0)
        .expect("midnight is always valid")
        .and_utc()
        .timestamp()
}

/// Monday of the ISO week containing `date`.
pub fn iso_week_start(date: NaiveDate) -> NaiveDate {
    let back = u64::from(date.weekday().num_days_from_monday());
    date.checked_sub_days(Days::new(back)).unwrap_or(date)
}

/// Inclusive iterator over the days `start..=end`.
pub fn days(start: NaiveDate, end: NaiveDate) -> impl Iterator<Item = NaiveDate> {
    start.iter_days().take_while(move |d| *d <= end)
}

/// Number of days in the inclusive span, zero when `end < start`.
pub fn day_span(start: NaiveDate, end: NaiveDate) -> usize {
    if end < start {
        0
    } else {
        (end - start).num_days() as usize + 1
    }
}

/// A calendar month, ordered chronologically and rendered as `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Option<Self> {
        (1..=12).contains(&month).then_some(Self { year, month })
    }

    pub fn of_date(date: NaiveDate) -> Self {
        Self {
            year: date.year(),
            month: date.month(),
        }
    }

    pub fn of_timestamp(ts: i64) -> Self {
        Self::of_date(utc_date(ts))
    }

    pub fn first_day(self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, self.month, 1).expect("validated month")
    }

    pub fn last_day(self) -> NaiveDate {
        self.succ().first_day().pred_opt().expect("not the first representable day")
    }

    pub fn succ(self) -> Self {
        if self.month == 12 {
            Self {
                year: self.year + 1,
                month: 1,
            }
        } else {
            Self {
                year: self.year,
                month: self.month + 1,
            }
        }
    }

    /// Months from `start` through `end`, inclusive.
    pub fn range(start: Self, end: Self) -> Vec<Self> {
        let mut out = Vec::new();
        let mut m = start;
        while m <= end {
            out.push(m);
            m = m.succ();
        }
        out
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid month `{0}`, expected YYYY-MM")]
pub struct ParseMonthError(String);

impl FromStr for YearMonth {
    type Err = ParseMonthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseMonthError(s.to_string());
        let (y, m) = s.trim().split_once('-').ok_or_else(err)?;
        let year = y.parse().map_err(|_| err())?;
        let month = m.parse().map_err(|_| err())?;
        YearMonth::new(year, month).ok_or_else(err)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iso_week_starts_on_monday() {
        let sunday = NaiveDate::from_ymd_opt(2021, 2, 7).unwrap();
        assert_eq!(
            iso_week_start(sunday),
            NaiveDate::from_ymd_opt(2021, 2, 1).unwrap()
        );
        let monday = NaiveDate::from_ymd_opt(2021, 2, 1).unwrap();
        assert_eq!(iso_week_start(monday), monday);
    }

    #[test]
    fn month_parsing_and_bounds() {
        let m: YearMonth = "2021-12".parse().unwrap();
        assert_eq!(m.succ().to_string(), "2022-01");
        assert_eq!(m.last_day(), NaiveDate::from_ymd_opt(2021, 12, 31).unwrap());
        assert!("2021-13".parse::<YearMonth>().is_err());
        assert_eq!(YearMonth::of_timestamp(1612137600).to_string(), "2021-02");
    }

    #[test]
    fn span_counts_inclusive_days() {
        let a = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
        let b = NaiveDate::from_ymd_opt(2021, 1, 10).unwrap();
        assert_eq!(day_span(a, b), 10);
        assert_eq!(days(a, b).count(), 10);
        assert_eq!(day_span(b, a), 0);
    }
}
