use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::graph::RegionGraph;
use super::registry::SurveyRegistry;
use crate::error::{Error, Result};

/// One child's survival history and design metadata.
///
/// `age_end` is the number of months of exposure: a child that died in its
/// fourth month of life has `age_end = 4`, and a child still alive at five
/// years has `age_end = 60`. Region and survey are 0-based indices into the
/// region graph and survey registry.
#[derive(Debug, Clone, PartialEq)]
pub struct ChildRecord {
    pub child_id: String,
    pub region: usize,
    pub survey: usize,
    pub birth_year: i32,
    pub birth_month: u8,
    pub birth_period: Option<usize>,
    pub age_end: u8,
    pub died: bool,
    pub weight: f64,
    pub stratum: String,
    pub cluster: String,
}

impl ChildRecord {
    pub fn birth_calendar_month(&self) -> i64 {
        self.birth_year as i64 * 12 + (self.birth_month as i64 - 1)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return Err(format!("weight > 0 required (got {})", self.weight));
        }
        if self.age_end > 60 {
            return Err(format!("age_end must lie in [0, 60] (got {})", self.age_end));
        }
        if self.died && self.age_end == 0 {
            return Err("a death needs at least one month of exposure (age_end >= 1)".into());
        }
        if !(1..=12).contains(&self.birth_month) {
            return Err(format!("birth_month must lie in [1, 12] (got {})", self.birth_month));
        }
        Ok(())
    }
}

/// Maps each input role to a column name.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMap {
    pub child_id: String,
    pub region: String,
    pub survey: String,
    pub birth_year: String,
    pub birth_month: String,
    pub age_end: String,
    pub died: String,
    pub weight: String,
    pub stratum: String,
    pub cluster: String,
    pub delimiter: u8,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            child_id: "child_id".into(),
            region: "region".into(),
            survey: "survey".into(),
            birth_year: "birth_year".into(),
            birth_month: "birth_month".into(),
            age_end: "age_end_months".into(),
            died: "died".into(),
            weight: "weight".into(),
            stratum: "stratum".into(),
            cluster: "cluster".into(),
            delimiter: b',',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    /// 1-based line number in the file (header is line 1).
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub records: Vec<ChildRecord>,
    pub rejected: Vec<Rejection>,
}

pub fn read_children<R: Read>(
    reader: R,
    schema: &ColumnMap,
    graph: &RegionGraph,
    registry: &SurveyRegistry,
) -> Result<IngestOutcome> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let c = [
        col(&schema.child_id)?,
        col(&schema.region)?,
        col(&schema.survey)?,
        col(&schema.birth_year)?,
        col(&schema.birth_month)?,
        col(&schema.age_end)?,
        col(&schema.died)?,
        col(&schema.weight)?,
        col(&schema.stratum)?,
        col(&schema.cluster)?,
    ];

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    // (survey, cluster) -> stratum, first seen wins
    let mut cluster_stratum: HashMap<(usize, String), String> = HashMap::new();

    for (k, row) in rdr.records().enumerate() {
        let line = k + 2;
        let row = row?;
        let parsed = (|| -> std::result::Result<ChildRecord, String> {
            let field = |i: usize| row.get(c[i]).unwrap_or("");
            let region = graph
                .index_of(field(1))
                .ok_or_else(|| format!("unknown region `{}`", field(1)))?;
            let survey = registry
                .index_of(field(2))
                .ok_or_else(|| format!("unknown survey `{}`", field(2)))?;
            let num = |i: usize, what: &str| -> std::result::Result<f64, String> {
                field(i).parse::<f64>().map_err(|_| format!("{what}: cannot parse `{}`", field(i)))
            };
            let birth_year = num(3, "birth_year")?;
            let birth_month = num(4, "birth_month")?;
            let age_end = num(5, "age_end")?;
            if birth_year.fract() != 0.0 || birth_month.fract() != 0.0 || age_end.fract() != 0.0 {
                return Err("birth_year, birth_month and age_end must be integers".into());
            }
            if !(0.0..=60.0).contains(&age_end) {
                return Err(format!("age_end must lie in [0, 60] (got {age_end})"));
            }
            if !(1.0..=12.0).contains(&birth_month) {
                return Err(format!("birth_month must lie in [1, 12] (got {birth_month})"));
            }
            let died = match field(6).to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" => true,
                "0" | "false" | "no" => false,
                other => return Err(format!("died: cannot parse `{other}`")),
            };
            let rec = ChildRecord {
                child_id: field(0).to_string(),
                region,
                survey,
                birth_year: birth_year as i32,
                birth_month: birth_month as u8,
                birth_period: None,
                age_end: age_end as u8,
                died,
                weight: num(7, "weight")?,
                stratum: field(8).to_string(),
                cluster: field(9).to_string(),
            };
            rec.validate()?;
            Ok(rec)
        })();
        match parsed {
            Ok(rec) => {
                let key = (rec.survey, rec.cluster.clone());
                match cluster_stratum.get(&key) {
                    Some(s) if *s != rec.stratum => rejected.push(Rejection {
                        line,
                        reason: format!(
                            "cluster `{}` already belongs to stratum `{}`, not `{}`",
                            rec.cluster, s, rec.stratum
                        ),
                    }),
                    _ => {
                        cluster_stratum.entry(key).or_insert_with(|| rec.stratum.clone());
                        records.push(rec);
                    }
                }
            }
            Err(reason) => rejected.push(Rejection { line, reason }),
        }
    }
    Ok(IngestOutcome { records, rejected })
}

pub fn ingest_children(
    path: impl AsRef<Path>,
    schema: &ColumnMap,
    graph: &RegionGraph,
    registry: &SurveyRegistry,
) -> Result<IngestOutcome> {
    let f = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    read_children(f, schema, graph, registry)
}

/// Writes records in the default column layout. Reading the output back and
/// writing it again reproduces the same bytes.
pub fn write_children<W: Write>(
    writer: W,
    records: &[ChildRecord],
    graph: &RegionGraph,
    registry: &SurveyRegistry,
) -> Result<()> {
    let schema = ColumnMap::default();
    let mut w = csv::WriterBuilder::new().delimiter(schema.delimiter).from_writer(writer);
    w.write_record([
        &schema.child_id,
        &schema.region,
        &schema.survey,
        &schema.birth_year,
        &schema.birth_month,
        &schema.age_end,
        &schema.died,
        &schema.weight,
        &schema.stratum,
        &schema.cluster,
    ])?;
    for r in records {
        w.write_record([
            r.child_id.as_str(),
            graph.names()[r.region].as_str(),
            registry.get(r.survey).label.as_str(),
            &r.birth_year.to_string(),
            &r.birth_month.to_string(),
            &r.age_end.to_string(),
            if r.died { "1" } else { "0" },
            &r.weight.to_string(),
            r.stratum.as_str(),
            r.cluster.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

/// Rescales weights of every survey flagged for renormalization so they sum
/// to that survey's unweighted child count.
pub fn renormalize_weights(records: &mut [ChildRecord], registry: &SurveyRegistry) {
    let mut totals = vec![(0.0f64, 0usize); registry.len()];
    for r in records.iter() {
        totals[r.survey].0 += r.weight;
        totals[r.survey].1 += 1;
    }
    for r in records.iter_mut() {
        if registry.get(r.survey).renormalize {
            let (w, n) = totals[r.survey];
            r.weight *= n as f64 / w;
        }
    }
}
