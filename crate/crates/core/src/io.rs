//! CSV and JSON file formats.
//!
//! Records live in a directory as `<id>.spo2.csv` (`t_sec,spo2`, empty cell =
//! missing) plus an optional `<id>.events.csv` (`start_sec,end_sec,label`).
//! Floats are written with shortest round-trip formatting so that a write/read
//! cycle is bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::classifier::{param_blocks, params_from_blocks, Mlp, MlpDims};
use crate::discriminant::AtomScore;
use crate::error::{Error, Result};
use crate::signal::{class_name, Event, EventClass, Record, SegmentMatrix};
use crate::sparse::{Dictionary, SparseCodes};

pub const SPO2_SUFFIX: &str = ".spo2.csv";
pub const EVENTS_SUFFIX: &str = ".events.csv";

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: path.display().to_string(),
        msg: msg.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| parse_err(path, e.to_string()))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn expect_header(path: &Path, rdr: &mut csv::Reader<fs::File>, expected: &[&str]) -> Result<()> {
    let headers = rdr.headers()?;
    if headers.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(parse_err(
            path,
            format!("expected header `{}`, found `{}`", expected.join(","), headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    Ok(())
}

fn parse_f64(path: &Path, line: u64, s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| parse_err(path, format!("line {line}: `{s}` is not a number")))
}

fn parse_usize(path: &Path, line: u64, s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| parse_err(path, format!("line {line}: `{s}` is not a nonnegative integer")))
}

pub fn record_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{id}{SPO2_SUFFIX}")),
        dir.join(format!("{id}{EVENTS_SUFFIX}")),
    )
}

pub fn write_record(dir: &Path, record: &Record) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (spo2, events) = record_paths(dir, &record.id);
    let mut w = csv::Writer::from_path(spo2)?;
    w.write_record(["t_sec", "spo2"])?;
    for (t, v) in record.samples.iter().enumerate() {
        let cell = if v.is_nan() { String::new() } else { v.to_string() };
        w.write_record([t.to_string(), cell])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(events)?;
    w.write_record(["start_sec", "end_sec", "label"])?;
    for ev in &record.events {
        w.write_record([ev.start_sec.to_string(), ev.end_sec.to_string(), ev.class.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `<id>.spo2.csv` and, when present, `<id>.events.csv`.
pub fn read_record(dir: &Path, id: &str) -> Result<Record> {
    let (spo2, events_path) = record_paths(dir, id);
    let mut rdr = reader(&spo2)?;
    expect_header(&spo2, &mut rdr, &["t_sec", "spo2"])?;
    let mut samples = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let t = parse_usize(&spo2, line, row.get(0).unwrap_or(""))?;
        if t != samples.len() {
            return Err(parse_err(&spo2, format!("line {line}: expected t_sec {}, found {t}", samples.len())));
        }
        let cell = row.get(1).unwrap_or("").trim();
        samples.push(if cell.is_empty() {
            f64::NAN
        } else {
            parse_f64(&spo2, line, cell)?
        });
    }
    let mut events = Vec::new();
    if events_path.exists() {
        let mut rdr = reader(&events_path)?;
        expect_header(&events_path, &mut rdr, &["start_sec", "end_sec", "label"])?;
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line());
            let start_sec = parse_usize(&events_path, line, row.get(0).unwrap_or(""))?;
            let end_sec = parse_usize(&events_path, line, row.get(1).unwrap_or(""))?;
            let label = row.get(2).unwrap_or("").trim();
            let class = match EventClass::parse(label) {
                Some(c @ (EventClass::A | EventClass::H)) => c,
                _ => return Err(parse_err(&events_path, format!("line {line}: label `{label}` is not A or H"))),
            };
            events.push(Event {
                start_sec,
                end_sec,
                class,
            });
        }
    }
    Record::new(id, samples, events)
}

/// Record ids found in a directory, sorted.
pub fn list_record_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(SPO2_SUFFIX)) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn read_records(dir: &Path) -> Result<Vec<Record>> {
    let ids = list_record_ids(dir)?;
    if ids.is_empty() {
        return Err(parse_err(dir, "no *.spo2.csv records"));
    }
    ids.iter().map(|id| read_record(dir, id)).collect()
}

/// First row class labels, then one row per sample index, one column per segment.
pub fn write_segments(path: &Path, set: &SegmentMatrix) -> Result<()> {
    let header: Vec<String> = set
        .labels()
        .iter()
        .map(|&l| class_name(set.n_classes(), l))
        .collect();
    write_matrix(path, &header, set.signals())
}

pub fn read_segments(path: &Path) -> Result<SegmentMatrix> {
    let (header, values) = read_matrix(path)?;
    let n_classes = if header.iter().any(|h| h == "A+H") { 2 } else { 3 };
    let labels = header
        .iter()
        .map(|h| match (n_classes, h.as_str()) {
            (2, "N") => Ok(0),
            (2, "A+H") => Ok(1),
            (3, s) => EventClass::parse(s)
                .map(EventClass::index)
                .ok_or_else(|| parse_err(path, format!("unknown label `{s}`"))),
            (_, s) => Err(parse_err(path, format!("unknown label `{s}`"))),
        })
        .collect::<Result<Vec<_>>>()?;
    SegmentMatrix::new(values, labels, n_classes)
}

/// Column-major matrix CSV with a header row naming the columns.
pub fn write_matrix(path: &Path, header: &[String], values: ArrayView2<'_, f64>) -> Result<()> {
    if header.len() != values.ncols() {
        return Err(Error::Shape {
            what: "matrix header",
            expected: values.ncols(),
            found: header.len(),
        });
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in values.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let cols = header.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != cols {
            return Err(parse_err(path, format!("line {line}: {} cells, expected {cols}", row.len())));
        }
        for cell in row.iter() {
            data.push(parse_f64(path, line, cell)?);
        }
        rows += 1;
    }
    let values = Array2::from_shape_vec((rows, cols), data).map_err(|e| parse_err(path, e.to_string()))?;
    Ok((header, values))
}

pub fn write_dictionary(path: &Path, dict: &Dictionary) -> Result<()> {
    let header: Vec<String> = (0..dict.len()).map(|j| format!("atom_{j}")).collect();
    write_matrix(path, &header, dict.atoms())
}

pub fn read_dictionary(path: &Path) -> Result<Dictionary> {
    let (_, atoms) = read_matrix(path)?;
    Dictionary::new(atoms.view())
}

/// Plain text table with a header row.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Nonzero coefficients as `signal,atom,value` rows.
pub fn write_codes(path: &Path, codes: &SparseCodes) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["signal", "atom", "value"])?;
    for (i, j, v) in codes.triplets() {
        w.write_record([i.to_string(), j.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scores(path: &Path, scores: &[AtomScore]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in scores {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

/// Serializable form of a trained network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpFile {
    pub dims: MlpDims,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub w_hidden: Vec<f64>,
    pub b_hidden: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl From<&Mlp> for MlpFile {
    fn from(m: &Mlp) -> Self {
        let [w1, b1, w2, b2] = param_blocks(m).map(|(_, b)| b.to_vec());
        Self {
            dims: m.dims,
            input_mean: m.input_mean.clone(),
            input_scale: m.input_scale.clone(),
            w_hidden: w1,
            b_hidden: b1,
            w_out: w2,
            b_out: b2,
        }
    }
}

impl MlpFile {
    pub fn into_mlp(self) -> Result<Mlp> {
        let params = params_from_blocks(
            self.dims,
            [&self.w_hidden, &self.b_hidden, &self.w_out, &self.b_out],
        )?;
        if self.input_mean.len() != self.dims.input || self.input_scale.len() != self.dims.input {
            return Err(Error::Shape {
                what: "input standardization",
                expected: self.dims.input,
                found: self.input_mean.len().min(self.input_scale.len()),
            });
        }
        Ok(Mlp {
            dims: self.dims,
            params,
            input_mean: self.input_mean,
            input_scale: self.input_scale,
        })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| parse_err(path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn record_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let samples = vec![95.123456789012345, f64::NAN, 0.1 + 0.2, 100.0, 50.000000000000007];
        let events = vec![Event {
            start_sec: 1,
            end_sec: 4,
            class: EventClass::H,
        }];
        let rec = Record::new("r1", samples.clone(), events.clone()).unwrap();
        write_record(dir.path(), &rec).unwrap();
        let back = read_record(dir.path(), "r1").unwrap();
        assert_eq!(back.events, events);
        for (a, b) in samples.iter().zip(&back.samples) {
            assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
        assert_eq!(list_record_ids(dir.path()).unwrap(), vec!["r1".to_string()]);
    }

    #[test]
    fn bad_label_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x.spo2.csv"), "t_sec,spo2\n0,95\n1,96\n").unwrap();
        fs::write(dir.path().join("x.events.csv"), "start_sec,end_sec,label\n0,1,Q\n").unwrap();
        assert!(matches!(read_record(dir.path(), "x"), Err(Error::Parse { .. })));
    }

    #[test]
    fn segments_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let set = SegmentMatrix::new(array![[1.5, -2.0, 0.25], [3.0, 4.0, 1e-300]], vec![0, 2, 1], 3).unwrap();
        write_segments(&path, &set).unwrap();
        assert_eq!(read_segments(&path).unwrap(), set);
        let merged = set.merge_ah().unwrap();
        write_segments(&path, &merged).unwrap();
        assert_eq!(read_segments(&path).unwrap(), merged);
    }

    #[test]
    fn mlp_file_round_trip() {
        let dims = MlpDims {
            input: 2,
            hidden: 3,
            output: 2,
        };
        let m = Mlp {
            dims,
            params: (0..dims.n_params()).map(|i| i as f64 * 0.1).collect(),
            input_mean: vec![0.0, 1.0],
            input_scale: vec![1.0, 2.0],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        write_json(&path, &MlpFile::from(&m)).unwrap();
        let back: MlpFile = read_json(&path).unwrap();
        assert_eq!(back.into_mlp().unwrap(), m);
    }
}
