//! Line-delimited dataset files.
//!
//! ```text
//! #meta {"n_vars":2,"seed":7,...}
//! {"vars":[{"t":[..],"x":[..],"qt":[..],"qx":[..]},...],"obs_span":[a,b],"fc_span":[b,c]}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, DatasetMeta, QuerySet, Sample, Variable, VariableSeries};

const META_PREFIX: &str = "#meta ";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VarRecord {
    t: Vec<f64>,
    x: Vec<f64>,
    qt: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    qx: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    vars: Vec<VarRecord>,
    obs_span: [f64; 2],
    fc_span: [f64; 2],
}

impl From<&Sample> for SampleRecord {
    fn from(s: &Sample) -> Self {
        SampleRecord {
            vars: s
                .variables
                .iter()
                .map(|v| VarRecord {
                    t: v.observed.times.clone(),
                    x: v.observed.values.clone(),
                    qt: v.queries.times.clone(),
                    qx: v.queries.targets.clone(),
                })
                .collect(),
            obs_span: [s.observation_span.0, s.observation_span.1],
            fc_span: [s.forecast_span.0, s.forecast_span.1],
        }
    }
}

impl From<SampleRecord> for Sample {
    fn from(r: SampleRecord) -> Self {
        Sample {
            variables: r
                .vars
                .into_iter()
                .map(|v| Variable {
                    observed: VariableSeries {
                        times: v.t,
                        values: v.x,
                    },
                    queries: QuerySet {
                        times: v.qt,
                        targets: v.qx,
                    },
                })
                .collect(),
            observation_span: (r.obs_span[0], r.obs_span[1]),
            forecast_span: (r.fc_span[0], r.fc_span[1]),
        }
    }
}

pub fn write_dataset<W: Write>(dataset: &Dataset, mut out: W) -> Result<(), DataError> {
    if let Some(meta) = &dataset.meta {
        let json = serde_json::to_string(meta).map_err(std::io::Error::from)?;
        writeln!(out, "{META_PREFIX}{json}")?;
    }
    for s in &dataset.samples {
        let json = serde_json::to_string(&SampleRecord::from(s)).map_err(std::io::Error::from)?;
        writeln!(out, "{json}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    write_dataset(dataset, BufWriter::new(File::create(path)?))
}

/// Parses and validates a dataset. Blank lines are ignored.
pub fn read_dataset<R: Read>(input: R) -> Result<Dataset, DataError> {
    let mut meta: Option<DatasetMeta> = None;
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| DataError::Parse {
            line: line_no,
            message: e.to_string(),
        };
        if let Some(rest) = trimmed.strip_prefix(META_PREFIX) {
            if meta.is_some() || !samples.is_empty() {
                return Err(DataError::Parse {
                    line: line_no,
                    message: "meta header must be the first line".into(),
                });
            }
            meta = Some(serde_json::from_str(rest).map_err(parse_err)?);
            continue;
        }
        let record: SampleRecord = serde_json::from_str(trimmed).map_err(parse_err)?;
        samples.push(Sample::from(record));
    }
    let dataset = Dataset { meta, samples };
    dataset.validate()?;
    Ok(dataset)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    read_dataset(File::open(path)?)
}
