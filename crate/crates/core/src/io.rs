//! Matrix, mask and dataset interchange.
//!
//! Matrix CSV: a `rows,cols` line, then one line per matrix row holding
//! `re,im` pairs for every column. Matrix binary: `WSMX`, rows and cols as
//! little-endian u64, then row-major `re,im` f64 pairs. Masks: a `rows,cols`
//! line, then one column-major linear index (`row + col·rows`) per line.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{MatrixState, PulseDataMatrix, SampleMask};

const MAGIC: &[u8; 4] = b"WSMX";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixFormat {
    #[default]
    Csv,
    Binary,
}

impl MatrixFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MatrixFormat::Csv => "csv",
            MatrixFormat::Binary => "bin",
        }
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn write_matrix_csv(m: &Mat<Complex64>, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(create(path)?);
    let wrap = |e: csv::Error| format_err(path, e.to_string());
    w.write_record([m.nrows().to_string(), m.ncols().to_string()]).map_err(wrap)?;
    let mut row = Vec::with_capacity(2 * m.ncols());
    for i in 0..m.nrows() {
        row.clear();
        for j in 0..m.ncols() {
            row.push(format!("{:e}", m[(i, j)].re));
            row.push(format!("{:e}", m[(i, j)].im));
        }
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_shape(path: &Path, rec: Option<csv::StringRecord>) -> Result<(usize, usize)> {
    let rec = rec.ok_or_else(|| format_err(path, "missing rows,cols header"))?;
    if rec.len() != 2 {
        return Err(format_err(path, "header must be rows,cols"));
    }
    let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| format_err(path, format!("bad dimension {s:?}")));
    Ok((parse(&rec[0])?, parse(&rec[1])?))
}

fn records(path: &Path) -> Result<impl Iterator<Item = Result<csv::StringRecord>>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let owned = path.to_path_buf();
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file)
        .into_records()
        .map(move |r| r.map_err(|e| format_err(&owned, e.to_string()))))
}

pub fn read_matrix_csv(path: &Path) -> Result<Mat<Complex64>> {
    let mut recs = records(path)?;
    let (rows, cols) = parse_shape(path, recs.next().transpose()?)?;
    let mut m = Mat::<Complex64>::zeros(rows, cols);
    for i in 0..rows {
        let rec = recs
            .next()
            .transpose()?
            .ok_or_else(|| format_err(path, format!("expected {rows} rows, found {i}")))?;
        if rec.len() != 2 * cols {
            return Err(format_err(path, format!("row {i} has {} fields, expected {}", rec.len(), 2 * cols)));
        }
        for j in 0..cols {
            let f = |k: usize| {
                rec[k]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| format_err(path, format!("bad number {:?} in row {i}", &rec[k])))
            };
            m[(i, j)] = Complex64::new(f(2 * j)?, f(2 * j + 1)?);
        }
    }
    if recs.next().is_some() {
        return Err(format_err(path, "trailing rows after the matrix"));
    }
    Ok(m)
}

pub fn write_matrix_binary(m: &Mat<Complex64>, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let mut buf = Vec::with_capacity(20 + 16 * m.nrows() * m.ncols());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            buf.extend_from_slice(&m[(i, j)].re.to_le_bytes());
            buf.extend_from_slice(&m[(i, j)].im.to_le_bytes());
        }
    }
    w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_matrix_binary(path: &Path) -> Result<Mat<Complex64>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(format_err(path, "not a WSMX matrix file"));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let (rows, cols) = (word(4) as usize, word(12) as usize);
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(16))
        .and_then(|n| n.checked_add(20))
        .ok_or_else(|| format_err(path, "dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(format_err(path, format!("{} bytes for a {rows}×{cols} matrix, expected {expected}", bytes.len())));
    }
    let f = |at: usize| f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    Ok(Mat::from_fn(rows, cols, |i, j| {
        let at = 20 + 16 * (i * cols + j);
        Complex64::new(f(at), f(at + 8))
    }))
}

pub fn write_matrix(m: &Mat<Complex64>, path: &Path, format: MatrixFormat) -> Result<()> {
    match format {
        MatrixFormat::Csv => write_matrix_csv(m, path),
        MatrixFormat::Binary => write_matrix_binary(m, path),
    }
}

/// Reads either format, choosing by the leading magic bytes.
pub fn read_matrix(path: &Path) -> Result<Mat<Complex64>> {
    let mut head = [0u8; 4];
    let is_binary = fs::File::open(path)
        .and_then(|mut f| f.read(&mut head))
        .map_err(|e| Error::io(path, e))?
        == 4
        && &head == MAGIC;
    if is_binary {
        read_matrix_binary(path)
    } else {
        read_matrix_csv(path)
    }
}

pub fn write_mask(mask: &SampleMask, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let (rows, cols) = mask.shape();
    let mut text = format!("{rows},{cols}\n");
    for i in mask.observed() {
        text.push_str(&i.to_string());
        text.push('\n');
    }
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: &Path) -> Result<SampleMask> {
    let mut recs = records(path)?;
    let (rows, cols) = parse_shape(path, recs.next().transpose()?)?;
    let mut idx = Vec::new();
    for rec in recs {
        let rec = rec?;
        let s = rec.get(0).unwrap_or("").trim();
        idx.push(s.parse::<usize>().map_err(|_| format_err(path, format!("bad index {s:?}")))?);
    }
    SampleMask::new(rows, cols, idx).map_err(|e| format_err(path, e.to_string()))
}

/// Per-pair metadata of a stored dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub tx: usize,
    pub rx: usize,
    pub state: MatrixState,
    pub noise_variance: f64,
    pub signal_power: f64,
    pub matrix: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub pairs: Vec<PairEntry>,
}

pub const DATASET_INDEX: &str = "dataset.json";

/// Write every pair matrix (and mask) into `dir` with a JSON index.
pub fn save_dataset(matrices: &[PulseDataMatrix], dir: &Path, format: MatrixFormat) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut pairs = Vec::with_capacity(matrices.len());
    for m in matrices {
        let (tx, rx) = m.pair();
        let name = format!("pair_{tx}_{rx}.{}", format.extension());
        write_matrix(m.values(), &dir.join(&name), format)?;
        let mask = match m.mask() {
            Some(mask) => {
                let mname = format!("pair_{tx}_{rx}.mask");
                write_mask(mask, &dir.join(&mname))?;
                Some(mname)
            }
            None => None,
        };
        pairs.push(PairEntry {
            tx,
            rx,
            state: m.state(),
            noise_variance: m.noise_variance(),
            signal_power: m.signal_power(),
            matrix: name,
            mask,
        });
    }
    let index = dir.join(DATASET_INDEX);
    let text = serde_json::to_string_pretty(&DatasetIndex { pairs }).expect("index serialises");
    fs::write(&index, text).map_err(|e| Error::io(&index, e))?;
    Ok(index)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<PulseDataMatrix>> {
    let index = dir.join(DATASET_INDEX);
    let text = fs::read_to_string(&index).map_err(|e| Error::io(&index, e))?;
    let parsed: DatasetIndex = serde_json::from_str(&text).map_err(|e| format_err(&index, e.to_string()))?;
    parsed
        .pairs
        .into_iter()
        .map(|p| {
            let values = read_matrix(&dir.join(&p.matrix))?;
            let m = match (&p.mask, p.state) {
                (Some(name), MatrixState::Partial) => {
                    let mask = read_mask(&dir.join(name))?;
                    PulseDataMatrix::partial((p.tx, p.rx), values, mask)?
                }
                (None, MatrixState::Partial) => {
                    return Err(format_err(&index, format!("pair ({}, {}) is partial but has no mask", p.tx, p.rx)))
                }
                (_, state) => PulseDataMatrix::new((p.tx, p.rx), values, state),
            };
            Ok(m.with_noise_variance(p.noise_variance).with_signal_power(p.signal_power))
        })
        .collect()
}
