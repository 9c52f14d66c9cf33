//! Record I/O: the data manifest, CSV records, and the compact FPRD binary
//! format (magic "FPRD", u32 N, u32 T, f64 sample rate, f32 payload stored
//! row-major [N, T], all little-endian).

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::PressureRecord;
use crate::error::{Error, Result};
use crate::graph::GraphConfig;

pub const FPRD_MAGIC: &[u8; 4] = b"FPRD";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Csv,
    Fprd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordEntry {
    pub direction_deg: f64,
    pub path: String,
    pub format: RecordFormat,
}

/// Dataset manifest. Record paths are relative to the manifest location.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default = "default_facade_label")]
    pub facade: String,
    pub graph: GraphConfig,
    pub sample_rate_hz: f64,
    pub records: Vec<RecordEntry>,
    /// Samples to skip from the start of each file (default: 0).
    #[serde(default)]
    pub offset_samples: usize,
    /// Samples to keep after the offset (default: everything).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep_samples: Option<usize>,
}

fn default_facade_label() -> String {
    "facade".to_string()
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::json(path.display().to_string(), e))?;
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Load every record listed in a manifest, validating node count against the
/// graph. An empty manifest yields an empty list (callers warn).
pub fn load_records(manifest_path: &Path, expected_n: usize) -> Result<Vec<PressureRecord>> {
    let manifest = read_manifest(manifest_path)?;
    load_records_of(&manifest, manifest_path.parent().unwrap_or(Path::new(".")), expected_n)
}

pub fn load_records_of(manifest: &Manifest, base: &Path, expected_n: usize) -> Result<Vec<PressureRecord>> {
    let mut out = Vec::with_capacity(manifest.records.len());
    for entry in &manifest.records {
        let path: PathBuf = base.join(&entry.path);
        let mut rec = match entry.format {
            RecordFormat::Csv => read_csv_record(&path, entry.direction_deg, manifest.sample_rate_hz)?,
            RecordFormat::Fprd => read_fprd(&path, entry.direction_deg)?,
        };
        if rec.n != expected_n {
            return Err(Error::Data(format!(
                "{}: {} nodes but the graph expects {}",
                path.display(),
                rec.n,
                expected_n
            )));
        }
        if manifest.offset_samples > 0 || manifest.keep_samples.is_some() {
            rec = trim_record(&rec, manifest.offset_samples, manifest.keep_samples)?;
        }
        out.push(rec);
    }
    Ok(out)
}

fn trim_record(rec: &PressureRecord, offset: usize, keep: Option<usize>) -> Result<PressureRecord> {
    let keep = keep.unwrap_or(rec.t_full.saturating_sub(offset));
    if offset + keep > rec.t_full || keep == 0 {
        return Err(Error::Data(format!(
            "segment [offset {offset}, +{keep}) outside record of length {}",
            rec.t_full
        )));
    }
    let mut values = vec![0.0; rec.n * keep];
    for node in 0..rec.n {
        let src = &rec.values[node * rec.t_full + offset..node * rec.t_full + offset + keep];
        values[node * keep..(node + 1) * keep].copy_from_slice(src);
    }
    PressureRecord::new(rec.direction_deg, rec.sample_rate_hz, rec.n, keep, values)
}

/// CSV record: header row of node ids, then T rows x N columns.
pub fn read_csv_record(path: &Path, direction_deg: f64, sample_rate_hz: f64) -> Result<PressureRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty file", path.display())))?;
    let n = header.split(',').count();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n];
    for (row_idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        for (col, field) in line.split(',').enumerate() {
            if col >= n {
                return Err(Error::Data(format!("{}: row {} has more than {n} columns", path.display(), row_idx + 2)));
            }
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Data(format!("{}: bad value at (row {}, col {})", path.display(), row_idx + 2, col + 1))
            })?;
            columns[col].push(v);
            count += 1;
        }
        if count != n {
            return Err(Error::Data(format!("{}: row {} has {count} of {n} columns", path.display(), row_idx + 2)));
        }
    }
    let t = columns[0].len();
    let mut values = Vec::with_capacity(n * t);
    for col in columns {
        values.extend_from_slice(&col);
    }
    PressureRecord::new(direction_deg, sample_rate_hz, n, t, values)
}

pub fn write_csv_record(path: &Path, rec: &PressureRecord) -> Result<()> {
    let mut out = String::new();
    let header: Vec<String> = (0..rec.n).map(|i| i.to_string()).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for t in 0..rec.t_full {
        for node in 0..rec.n {
            if node > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}", rec.values[node * rec.t_full + t]));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_fprd(path: &Path, direction_deg: f64) -> Result<PressureRecord> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(|e| Error::io(path.display().to_string(), e))?;
    if buf.len() < 20 || &buf[0..4] != FPRD_MAGIC {
        return Err(Error::Data(format!("{}: not an FPRD file", path.display())));
    }
    let n = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let t = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let sample_rate = f64::from_le_bytes(buf[12..20].try_into().unwrap());
    let expected = 20 + n * t * 4;
    if buf.len() != expected {
        return Err(Error::Data(format!(
            "{}: payload is {} bytes, {}x{} needs {}",
            path.display(),
            buf.len() - 20,
            n,
            t,
            expected - 20
        )));
    }
    let mut values = Vec::with_capacity(n * t);
    for chunk in buf[20..].chunks_exact(4) {
        values.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    PressureRecord::new(direction_deg, sample_rate, n, t, values)
}

pub fn write_fprd(path: &Path, rec: &PressureRecord) -> Result<()> {
    write_fprd_values(path, rec.n, rec.t_full, rec.sample_rate_hz, &rec.values)
}

pub fn write_fprd_values(path: &Path, n: usize, t: usize, sample_rate_hz: f64, values: &[f64]) -> Result<()> {
    if values.len() != n * t {
        return Err(Error::shape("write_fprd", format!("{}x{} vs {} values", n, t, values.len())));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut buf = Vec::with_capacity(20 + values.len() * 4);
    buf.extend_from_slice(FPRD_MAGIC);
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    buf.extend_from_slice(&sample_rate_hz.to_le_bytes());
    for v in values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    file.write_all(&buf).map_err(|e| Error::io(path.display().to_string(), e))
}
