//! File formats: line-delimited datasets, parameter files and run outputs.
//!
//! Every file starts with a header record carrying a format name and
//! version. Numbers are written in shortest round-trip form, so reading a
//! written file reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::calib::CalibResult;
use crate::data::{Dataset, DatasetHeader, GroundTruthRecord, GyroSample, OdomRecord, ParamsTruthRecord};
use crate::dynamics::{ControlSample, DynamicsParams};
use crate::error::{Error, Result};
use crate::estimator::StateRecord;
use crate::sim::DATASET_VERSION;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetRecord {
    Header(DatasetHeader),
    Control(ControlSample),
    Gyro(GyroSample),
    Odom(OdomRecord),
    Groundtruth(GroundTruthRecord),
    ParamsTruth(ParamsTruthRecord),
}

impl DatasetRecord {
    fn time(&self) -> Option<f64> {
        match self {
            DatasetRecord::Header(_) => None,
            DatasetRecord::Control(r) => Some(r.t),
            DatasetRecord::Gyro(r) => Some(r.t),
            DatasetRecord::Odom(r) => Some(r.t),
            DatasetRecord::Groundtruth(r) => Some(r.t),
            DatasetRecord::ParamsTruth(r) => Some(r.t),
        }
    }
}

fn file_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::File(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| file_err(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| file_err(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| file_err(path, e))
}

fn write_line<T: Serialize>(w: &mut impl Write, path: &Path, value: &T) -> Result<()> {
    let line = serde_json::to_string(value).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    writeln!(w, "{line}").map_err(|e| file_err(path, e))
}

/// Non-empty lines with their 1-based numbers.
fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| file_err(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn parse_line<T: DeserializeOwned>(path: &Path, n: usize, line: &str) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::Schema(format!("{}:{n}: {e}", path.display())))
}

pub fn write_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let header = data.header.clone().ok_or_else(|| Error::Schema("dataset has no header".into()))?;
    let mut w = create(path)?;
    write_line(&mut w, path, &DatasetRecord::Header(header))?;
    let streams = data
        .controls
        .iter()
        .map(|r| DatasetRecord::Control(*r))
        .chain(data.gyro.iter().map(|r| DatasetRecord::Gyro(*r)))
        .chain(data.odom.iter().map(|r| DatasetRecord::Odom(*r)))
        .chain(data.groundtruth.iter().map(|r| DatasetRecord::Groundtruth(*r)))
        .chain(data.params_truth.iter().map(|r| DatasetRecord::ParamsTruth(*r)));
    for record in streams {
        write_line(&mut w, path, &record)?;
    }
    w.flush().map_err(|e| file_err(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut data = Dataset::default();
    let mut last = [f64::NEG_INFINITY; 5];
    for (n, line) in lines(path)? {
        let record: DatasetRecord = parse_line(path, n, &line)?;
        let schema = |msg: String| Error::Schema(format!("{}:{n}: {msg}", path.display()));
        if data.header.is_none() && !matches!(record, DatasetRecord::Header(_)) {
            return Err(schema("the first record must be the header".into()));
        }
        if let Some(t) = record.time() {
            let stream = match &record {
                DatasetRecord::Control(_) => 0,
                DatasetRecord::Gyro(_) => 1,
                DatasetRecord::Odom(_) => 2,
                DatasetRecord::Groundtruth(_) => 3,
                _ => 4,
            };
            if !(t > last[stream]) {
                return Err(schema(format!("timestamp {t} is not after {}", last[stream])));
            }
            last[stream] = t;
        }
        match record {
            DatasetRecord::Header(h) => {
                if data.header.is_some() {
                    return Err(schema("duplicate header".into()));
                }
                if h.version != DATASET_VERSION {
                    return Err(schema(format!("unsupported dataset version {}", h.version)));
                }
                data.header = Some(h);
            }
            DatasetRecord::Control(r) => {
                ControlSample::new(r.t, r.throttle, r.steering).map_err(|e| schema(e.to_string()))?;
                data.controls.push(r)
            }
            DatasetRecord::Gyro(r) => data.gyro.push(r),
            DatasetRecord::Odom(r) => data.odom.push(r),
            DatasetRecord::Groundtruth(r) => data.groundtruth.push(r),
            DatasetRecord::ParamsTruth(r) => data.params_truth.push(r),
        }
    }
    if data.header.is_none() {
        return Err(Error::Schema(format!("{}: empty dataset", path.display())));
    }
    Ok(data)
}

/// Header record of the single-object and line-delimited output files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileHeader {
    pub format: String,
    pub version: u32,
}

impl FileHeader {
    fn new(format: &str) -> Self {
        Self { format: format.into(), version: FORMAT_VERSION }
    }

    fn check(&self, path: &Path, format: &str) -> Result<()> {
        if self.format != format || self.version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "{}: expected {format} v{FORMAT_VERSION}, found {} v{}",
                path.display(),
                self.format,
                self.version
            )));
        }
        Ok(())
    }
}

/// Writes one JSON document tagged with `format`.
pub fn write_document<T: Serialize>(path: &Path, format: &str, body: &T) -> Result<()> {
    #[derive(Serialize)]
    struct Out<'a, T> {
        header: FileHeader,
        body: &'a T,
    }
    let text = serde_json::to_string_pretty(&Out { header: FileHeader::new(format), body })
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.write_all(b"\n")).map_err(|e| file_err(path, e))
}

pub fn read_document<T: DeserializeOwned>(path: &Path, format: &str) -> Result<T> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct In<T> {
        header: FileHeader,
        body: T,
    }
    let text = std::fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let doc: In<T> = serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    doc.header.check(path, format)?;
    Ok(doc.body)
}

pub const PARAMS_FORMAT: &str = "trackcal-params";
pub const STATES_FORMAT: &str = "trackcal-states";
pub const TRACE_FORMAT: &str = "trackcal-params-trace";

pub fn write_params(path: &Path, result: &CalibResult) -> Result<()> {
    write_document(path, PARAMS_FORMAT, result)
}

pub fn read_params(path: &Path) -> Result<CalibResult> {
    let r: CalibResult = read_document(path, PARAMS_FORMAT)?;
    if !r.params.is_valid() || !r.cost.is_finite() {
        return Err(Error::Schema(format!("{}: parameters must be finite and positive", path.display())));
    }
    Ok(r)
}

/// Writes a header line followed by one record per line.
pub fn write_records<T: Serialize>(path: &Path, format: &str, records: &[T]) -> Result<()> {
    let mut w = create(path)?;
    write_line(&mut w, path, &FileHeader::new(format))?;
    for r in records {
        write_line(&mut w, path, r)?;
    }
    w.flush().map_err(|e| file_err(path, e))
}

pub fn read_records<T: DeserializeOwned>(path: &Path, format: &str) -> Result<Vec<T>> {
    let mut it = lines(path)?.into_iter();
    let (n, first) = it.next().ok_or_else(|| Error::Schema(format!("{}: empty file", path.display())))?;
    parse_line::<FileHeader>(path, n, &first)?.check(path, format)?;
    it.map(|(n, line)| parse_line(path, n, &line)).collect()
}

pub fn write_states(path: &Path, records: &[StateRecord]) -> Result<()> {
    write_records(path, STATES_FORMAT, records)
}

pub fn read_states(path: &Path) -> Result<Vec<StateRecord>> {
    read_records(path, STATES_FORMAT)
}

/// Parameter estimate at one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSnapshot {
    pub frame: u64,
    pub t: f64,
    pub params: DynamicsParams,
}

/// One snapshot per frame from the first frame with an open gate on.
pub fn params_trace(records: &[StateRecord]) -> Vec<ParamsSnapshot> {
    records
        .iter()
        .skip_while(|r| !r.gate)
        .map(|r| ParamsSnapshot { frame: r.frame, t: r.t, params: r.params })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_must_come_first() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, "{\"kind\":\"gyro\",\"t\":0.0,\"omega\":[0.0,0.0,0.0]}\n").unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert_eq!(err.kind(), "SchemaError", "{err}");
    }

    #[test]
    fn missing_file_is_a_file_error() {
        let err = read_params(Path::new("/nonexistent/params.json")).unwrap_err();
        assert_eq!(err.kind(), "FileError");
    }
}
