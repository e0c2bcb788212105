use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::TransferError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeriodKind {
    Yearly,
    Monthly,
}

/// Inclusive date range with a sortable label (`2016`, `2016-03`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Period {
    pub label: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Period {
    pub fn new(label: impl Into<String>, start: NaiveDate, end: NaiveDate) -> Result<Self, TransferError> {
        if end < start {
            return Err(TransferError::InvalidPeriod(format!("{end} is before {start}")));
        }
        Ok(Self {
            label: label.into(),
            start,
            end,
        })
    }

    pub fn year(year: i32) -> Self {
        Self {
            label: format!("{year}"),
            start: NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year"),
            end: NaiveDate::from_ymd_opt(year, 12, 31).expect("valid year"),
        }
    }

    pub fn month(year: i32, month: u32) -> Result<Self, TransferError> {
        let start = NaiveDate::from_ymd_opt(year, month, 1).ok_or_else(|| TransferError::InvalidPeriod(format!("{year}-{month}")))?;
        let next = if month == 12 {
            NaiveDate::from_ymd_opt(year + 1, 1, 1)
        } else {
            NaiveDate::from_ymd_opt(year, month + 1, 1)
        }
        .expect("valid month");
        Ok(Self {
            label: format!("{year}-{month:02}"),
            start,
            end: next.pred_opt().expect("not the first day"),
        })
    }

    /// Parses `YYYY` or `YYYY-MM`.
    pub fn parse(text: &str) -> Result<Self, TransferError> {
        let bad = || TransferError::InvalidPeriod(text.to_string());
        match text.split_once('-') {
            None => Ok(Self::year(text.parse().map_err(|_| bad())?)),
            Some((y, m)) => Self::month(y.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?),
        }
    }

    /// Consecutive periods covering `first_year..=last_year`.
    pub fn range(kind: PeriodKind, first_year: i32, last_year: i32) -> Vec<Self> {
        (first_year..=last_year)
            .flat_map(|y| match kind {
                PeriodKind::Yearly => vec![Self::year(y)],
                PeriodKind::Monthly => (1..=12).map(|m| Self::month(y, m).expect("valid month")).collect(),
            })
            .collect()
    }

    /// The period of `kind` that contains `date`.
    pub fn containing(kind: PeriodKind, date: NaiveDate) -> Self {
        match kind {
            PeriodKind::Yearly => Self::year(date.year()),
            PeriodKind::Monthly => Self::month(date.year(), date.month()).expect("valid month"),
        }
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        (self.start..=self.end).contains(&date)
    }
}

impl std::fmt::Display for Period {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calendar_periods() {
        let y = Period::year(2016);
        assert!(y.contains(NaiveDate::from_ymd_opt(2016, 12, 31).unwrap()));
        assert!(!y.contains(NaiveDate::from_ymd_opt(2017, 1, 1).unwrap()));
        let feb = Period::parse("2016-02").unwrap();
        assert_eq!(feb.end, NaiveDate::from_ymd_opt(2016, 2, 29).unwrap());
        assert_eq!(Period::range(PeriodKind::Yearly, 2015, 2020).len(), 6);
        assert_eq!(Period::range(PeriodKind::Monthly, 2015, 2015).len(), 12);
        assert!(Period::parse("2016-13").is_err());
        assert!(Period::parse("soon").is_err());
    }
}
