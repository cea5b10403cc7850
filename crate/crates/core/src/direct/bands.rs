use std::sync::Arc;

use crate::data::ChildRecord;
use crate::error::{Error, Result};

/// Age intervals `[x_j, x_j + n_j)` in months covering the first five years.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeBands {
    starts: Vec<u32>,
    lengths: Vec<u32>,
    band_of_month: Vec<usize>,
}

impl AgeBands {
    pub fn new(lengths: Vec<u32>) -> Result<Self> {
        if lengths.is_empty() || lengths.contains(&0) {
            return Err(Error::InvalidArgument("age bands must have positive lengths".into()));
        }
        if lengths.iter().sum::<u32>() != 60 {
            return Err(Error::InvalidArgument("age band lengths must sum to 60 months".into()));
        }
        let mut starts = Vec::with_capacity(lengths.len());
        let mut band_of_month = Vec::with_capacity(60);
        let mut x = 0;
        for (j, &n) in lengths.iter().enumerate() {
            starts.push(x);
            band_of_month.extend(std::iter::repeat_n(j, n as usize));
            x += n;
        }
        Ok(Self { starts, lengths, band_of_month })
    }

    /// `[0,1), [1,12), [12,24), [24,36), [36,48), [48,60)`.
    pub fn standard() -> Self {
        Self::new(vec![1, 11, 12, 12, 12, 12]).expect("standard bands")
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn starts(&self) -> &[u32] {
        &self.starts
    }

    pub fn lengths(&self) -> &[u32] {
        &self.lengths
    }

    /// Band index of the month starting at age `month` (0-based).
    pub fn band_of(&self, month: u32) -> usize {
        self.band_of_month[month as usize]
    }
}

/// One month of exposure for one child.
#[derive(Debug, Clone, PartialEq)]
pub struct ChildMonth {
    pub band: usize,
    pub event: bool,
    pub weight: f64,
    pub stratum: Arc<str>,
    pub cluster: Arc<str>,
}

/// Expands children into child-months: one row per month lived from birth up
/// to and including the death month, with `event` set on the death month
/// only.
pub fn expand_child_months(records: &[ChildRecord], bands: &AgeBands) -> Vec<ChildMonth> {
    let mut out = Vec::new();
    for r in records {
        let stratum: Arc<str> = Arc::from(r.stratum.as_str());
        let cluster: Arc<str> = Arc::from(r.cluster.as_str());
        let n = r.age_end as u32;
        for k in 0..n {
            out.push(ChildMonth {
                band: bands.band_of(k),
                event: r.died && k + 1 == n,
                weight: r.weight,
                stratum: stratum.clone(),
                cluster: cluster.clone(),
            });
        }
    }
    out
}
