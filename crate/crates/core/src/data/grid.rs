use serde::{Deserialize, Serialize};

use super::records::ChildRecord;
use crate::error::{Error, Result};

/// Calendar periods used to bin child exposure, plus the number of extra
/// periods to project.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodGrid {
    /// `[start_year, end_year)` per period.
    bounds: Vec<(i32, i32)>,
    pub forecast_horizon: usize,
}

impl PeriodGrid {
    pub fn uniform(start_year: i32, period_years: i32, n_periods: usize, forecast_horizon: usize) -> Result<Self> {
        if period_years <= 0 || n_periods == 0 {
            return Err(Error::Grid("period length and count must be positive".into()));
        }
        let bounds = (0..n_periods as i32)
            .map(|k| (start_year + k * period_years, start_year + (k + 1) * period_years))
            .collect();
        Self::from_bounds(bounds, forecast_horizon)
    }

    pub fn from_bounds(bounds: Vec<(i32, i32)>, forecast_horizon: usize) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::Grid("no periods".into()));
        }
        for (k, &(a, b)) in bounds.iter().enumerate() {
            if b <= a {
                return Err(Error::Grid(format!("period {} is empty or reversed", k + 1)));
            }
            if k > 0 && bounds[k - 1].1 != a {
                return Err(Error::Grid(format!("periods {} and {} are not contiguous", k, k + 1)));
            }
        }
        Ok(Self { bounds, forecast_horizon })
    }

    pub fn n_periods(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(i32, i32)] {
        &self.bounds
    }

    pub fn label(&self, t: usize) -> String {
        let (a, b) = self.bounds[t];
        format!("{}-{}", a, b - 1)
    }

    /// Label for a projected period `T + h` (h >= 1), assuming the last
    /// period's length continues.
    pub fn forecast_label(&self, h: usize) -> String {
        let (a, b) = *self.bounds.last().unwrap();
        let len = b - a;
        let start = b + (h as i32 - 1) * len;
        format!("{}-{}", start, start + len - 1)
    }

    /// Period containing a calendar month, counted as `year * 12 + (month - 1)`.
    pub fn period_of_month(&self, calendar_month: i64) -> Option<usize> {
        self.bounds.iter().position(|&(a, b)| {
            calendar_month >= a as i64 * 12 && calendar_month < b as i64 * 12
        })
    }

    fn end_month(&self) -> i64 {
        self.bounds.last().unwrap().1 as i64 * 12
    }
}

/// Sets `birth_period` on every record. Births outside the grid are an
/// error.
pub fn assign_periods(records: &[ChildRecord], grid: &PeriodGrid) -> Result<Vec<ChildRecord>> {
    records
        .iter()
        .map(|r| {
            let t = grid.period_of_month(r.birth_calendar_month()).ok_or_else(|| {
                Error::Grid(format!(
                    "child `{}` born {}-{:02} lies outside the period grid",
                    r.child_id, r.birth_year, r.birth_month
                ))
            })?;
            let mut out = r.clone();
            out.birth_period = Some(t);
            Ok(out)
        })
        .collect()
}

/// Months of exposure a child contributes to each period. Months after the
/// end of the grid are counted in `after_grid`, so the total always equals
/// the child's exposure.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodExposure {
    pub months: Vec<u32>,
    pub after_grid: u32,
}

impl PeriodExposure {
    pub fn total(&self) -> u32 {
        self.months.iter().sum::<u32>() + self.after_grid
    }
}

pub fn exposure_by_period(record: &ChildRecord, grid: &PeriodGrid) -> Result<PeriodExposure> {
    let birth = record.birth_calendar_month();
    if grid.period_of_month(birth).is_none() {
        return Err(Error::Grid(format!("child `{}` born outside the period grid", record.child_id)));
    }
    let mut months = vec![0u32; grid.n_periods()];
    let mut after_grid = 0;
    for k in 0..record.age_end as i64 {
        let cm = birth + k;
        if cm >= grid.end_month() {
            after_grid += 1;
        } else if let Some(t) = grid.period_of_month(cm) {
            months[t] += 1;
        }
    }
    Ok(PeriodExposure { months, after_grid })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn child(year: i32, month: u8, age_end: u8, died: bool) -> ChildRecord {
        ChildRecord {
            child_id: "c".into(),
            region: 0,
            survey: 0,
            birth_year: year,
            birth_month: month,
            birth_period: None,
            age_end,
            died,
            weight: 1.0,
            stratum: "s".into(),
            cluster: "k".into(),
        }
    }

    #[test]
    fn birth_in_last_month_spills_into_next_period() {
        let grid = PeriodGrid::uniform(1980, 5, 6, 1).unwrap();
        let c = child(1984, 12, 60, false);
        let e = exposure_by_period(&c, &grid).unwrap();
        assert_eq!(e.months[0], 1);
        assert_eq!(e.months[1], 59);
        assert_eq!(e.total(), 60);
    }

    #[test]
    fn death_at_period_start_stays_in_period() {
        let grid = PeriodGrid::uniform(1980, 5, 6, 1).unwrap();
        let e = exposure_by_period(&child(1985, 1, 3, true), &grid).unwrap();
        assert_eq!(e.months, vec![0, 3, 0, 0, 0, 0]);
    }

    #[test]
    fn birth_after_grid_is_an_error() {
        let grid = PeriodGrid::uniform(1980, 5, 6, 1).unwrap();
        let recs = vec![child(2011, 1, 5, false)];
        assert!(assign_periods(&recs, &grid).is_err());
        let ok = assign_periods(&[child(1990, 6, 5, false)], &grid).unwrap();
        assert_eq!(ok[0].birth_period, Some(2));
    }

    #[test]
    fn months_after_grid_end_are_kept_aside() {
        let grid = PeriodGrid::uniform(1980, 5, 6, 1).unwrap();
        let e = exposure_by_period(&child(2009, 7, 24, false), &grid).unwrap();
        assert_eq!(e.months[5], 6);
        assert_eq!(e.after_grid, 18);
    }

    #[test]
    fn non_contiguous_bounds_rejected() {
        assert!(PeriodGrid::from_bounds(vec![(1980, 1985), (1986, 1990)], 0).is_err());
        assert!(PeriodGrid::from_bounds(vec![(1980, 1985), (1985, 1985)], 0).is_err());
        let g = PeriodGrid::uniform(1980, 5, 6, 1).unwrap();
        assert_eq!(g.label(0), "1980-1984");
        assert_eq!(g.forecast_label(1), "2010-2014");
    }
}
