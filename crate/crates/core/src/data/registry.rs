use std::path::Path;

use super::graph::RegionGraph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurveyKind {
    /// Stratified multistage cluster household survey.
    Household,
    /// Full-population surveillance site covering a single region.
    Surveillance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveyEntry {
    pub label: String,
    pub kind: SurveyKind,
    /// `None` means every region.
    pub regions: Option<Vec<usize>>,
    /// 0-based periods; `None` means every period.
    pub periods: Option<Vec<usize>>,
    /// Rescale weights so they sum to the unweighted child count.
    pub renormalize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveyRegistry {
    surveys: Vec<SurveyEntry>,
}

impl SurveyRegistry {
    pub fn new(surveys: Vec<SurveyEntry>) -> Result<Self> {
        if surveys.is_empty() {
            return Err(Error::InvalidArgument("survey registry is empty".into()));
        }
        for s in &surveys {
            if s.kind == SurveyKind::Surveillance && s.regions.as_ref().is_none_or(|r| r.len() != 1) {
                return Err(Error::InvalidArgument(format!(
                    "surveillance site `{}` must cover exactly one region",
                    s.label
                )));
            }
        }
        Ok(Self { surveys })
    }

    /// `n` household surveys labelled `S1..Sn`, covering everything.
    pub fn households(n: usize) -> Self {
        Self::new(
            (1..=n)
                .map(|k| SurveyEntry {
                    label: format!("S{k}"),
                    kind: SurveyKind::Household,
                    regions: None,
                    periods: None,
                    renormalize: false,
                })
                .collect(),
        )
        .expect("non-empty")
    }

    pub fn len(&self) -> usize {
        self.surveys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surveys.is_empty()
    }

    pub fn entries(&self) -> &[SurveyEntry] {
        &self.surveys
    }

    pub fn get(&self, s: usize) -> &SurveyEntry {
        &self.surveys[s]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.surveys.iter().position(|s| s.label == label)
    }
}

fn parse_list(field: &str, what: &str, resolve: impl Fn(&str) -> Option<usize>) -> Result<Option<Vec<usize>>> {
    let field = field.trim();
    if field.is_empty() || field == "*" {
        return Ok(None);
    }
    field
        .split(';')
        .map(|t| {
            let t = t.trim();
            resolve(t).ok_or_else(|| Error::InvalidArgument(format!("unknown {what} `{t}` in registry")))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Parses a registry table with header `survey,kind,regions,periods[,renormalize]`.
/// `kind` is `household` or `surveillance`; `regions` is `*` or region
/// labels separated by `;`; `periods` is `*` or 1-based period numbers
/// separated by `;`.
pub fn parse_registry<R: std::io::Read>(reader: R, graph: &RegionGraph) -> Result<SurveyRegistry> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (c_survey, c_kind, c_regions, c_periods) = (col("survey")?, col("kind")?, col("regions")?, col("periods")?);
    let c_renorm = headers.iter().position(|h| h == "renormalize");
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let kind = match &rec[c_kind] {
            "household" | "survey" => SurveyKind::Household,
            "surveillance" | "hdss" => SurveyKind::Surveillance,
            other => {
                return Err(Error::InvalidRow {
                    row: row + 2,
                    message: format!("unknown survey kind `{other}`"),
                })
            }
        };
        let regions = parse_list(&rec[c_regions], "region", |t| graph.index_of(t))?;
        let periods = parse_list(&rec[c_periods], "period", |t| {
            t.parse::<usize>().ok().filter(|&p| p >= 1).map(|p| p - 1)
        })?;
        let renormalize = c_renorm.is_some_and(|c| matches!(&rec[c], "1" | "true" | "yes"));
        out.push(SurveyEntry { label: rec[c_survey].to_string(), kind, regions, periods, renormalize });
    }
    SurveyRegistry::new(out)
}

pub fn ingest_registry(path: impl AsRef<Path>, graph: &RegionGraph) -> Result<SurveyRegistry> {
    let f = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    parse_registry(f, graph)
}
