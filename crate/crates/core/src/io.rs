//! Binary tensor and mask files, CSV matrices and long-format CSV tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::{Dims, Mask, SpatioTensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"BCKL";
pub const MASK_MAGIC: &[u8; 4] = b"BCKM";
pub const FORMAT_VERSION: u32 = 1;

/// Quiet NaN written for every missing entry.
pub const CANONICAL_NAN: u64 = 0x7ff8_0000_0000_0000;

fn write_header<W: Write>(w: &mut W, magic: &[u8; 4], dims: Dims) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for d in [dims.m, dims.t, dims.p] {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    Ok(())
}

fn read_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<Dims> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got)
        .map_err(|_| Error::Format("file too short for header".into()))?;
    if &got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)
        .map_err(|_| Error::Format("file too short for header".into()))?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let mut d = [0usize; 3];
    for v in d.iter_mut() {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)
            .map_err(|_| Error::Format("file too short for header".into()))?;
        *v = usize::try_from(u64::from_le_bytes(b8)).map_err(|_| Error::Format("dimension overflow".into()))?;
    }
    Dims::new(d[0], d[1], d[2]).map_err(|e| Error::Format(e.to_string()))
}

fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok(())
}

/// Writes values in storage order; missing entries become the canonical NaN.
pub fn write_tensor<W: Write>(w: &mut W, t: &SpatioTensor) -> Result<()> {
    let vals: Vec<f64> = t
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if t.mask().is_observed(i) {
                v
            } else {
                f64::from_bits(CANONICAL_NAN)
            }
        })
        .collect();
    write_values(w, t.dims(), &vals)
}

/// Writes a raw array (NaN allowed anywhere).
pub fn write_values<W: Write>(w: &mut W, dims: Dims, values: &[f64]) -> Result<()> {
    if values.len() != dims.len() {
        return Err(Error::Dimension("payload length differs from dimensions".into()));
    }
    write_header(w, TENSOR_MAGIC, dims)?;
    for v in values {
        let bits = if v.is_nan() { CANONICAL_NAN } else { v.to_bits() };
        w.write_all(&bits.to_le_bytes())?;
    }
    Ok(())
}

/// Reads dimensions and the raw payload.
pub fn read_values<R: Read>(r: &mut R) -> Result<(Dims, Vec<f64>)> {
    let dims = read_header(r, TENSOR_MAGIC)?;
    let mut out = Vec::with_capacity(dims.len());
    let mut b8 = [0u8; 8];
    for _ in 0..dims.len() {
        r.read_exact(&mut b8)
            .map_err(|_| Error::Format(format!("payload shorter than {} values", dims.len())))?;
        out.push(f64::from_le_bytes(b8));
    }
    expect_eof(r)?;
    Ok((dims, out))
}

/// Reads a tensor; NaN entries are missing.
pub fn read_tensor<R: Read>(r: &mut R) -> Result<SpatioTensor> {
    let (dims, values) = read_values(r)?;
    if values.iter().any(|v| v.is_infinite()) {
        return Err(Error::Format("tensor contains infinite values".into()));
    }
    SpatioTensor::from_nan_encoded(dims, values)
}

pub fn write_mask<W: Write>(w: &mut W, mask: &Mask) -> Result<()> {
    write_header(w, MASK_MAGIC, mask.dims())?;
    let bytes: Vec<u8> = mask.bits().iter().map(|&b| u8::from(b)).collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_mask<R: Read>(r: &mut R) -> Result<Mask> {
    let dims = read_header(r, MASK_MAGIC)?;
    let mut bytes = vec![0u8; dims.len()];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format("mask payload too short".into()))?;
    expect_eof(r)?;
    let bits = bytes
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Format(format!("mask byte {other} is not 0 or 1"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Mask::new(dims, bits)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?))
}

pub fn load_tensor(path: &Path) -> Result<SpatioTensor> {
    read_tensor(&mut open(path)?)
}

pub fn save_tensor(path: &Path, t: &SpatioTensor) -> Result<()> {
    let mut w = create(path)?;
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_values(path: &Path) -> Result<(Dims, Vec<f64>)> {
    read_values(&mut open(path)?)
}

pub fn save_values(path: &Path, dims: Dims, values: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    write_values(&mut w, dims, values)?;
    w.flush()?;
    Ok(())
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    read_mask(&mut open(path)?)
}

pub fn save_mask(path: &Path, mask: &Mask) -> Result<()> {
    let mut w = create(path)?;
    write_mask(&mut w, mask)?;
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

fn parse_f64(s: &str, line: u64) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("line {line}: cannot parse {s:?} as a number")))
}

/// Headerless comma-separated dense matrix, one row per line.
pub fn read_matrix_csv<R: Read>(r: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push(rec.iter().map(|s| parse_f64(s, line)).collect::<Result<_>>()?);
    }
    let n = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if n == 0 || c == 0 {
        return Err(Error::Format("empty matrix".into()));
    }
    Ok(DMatrix::from_row_iterator(n, c, rows.into_iter().flatten()))
}

pub fn load_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    read_matrix_csv(open(path)?)
}

/// Long format `m,t,p,value` with 1-based indices and an optional header row.
/// Unlisted cells are missing. Dimensions default to the largest indices seen.
pub fn read_long_csv<R: Read>(r: R, dims: Option<Dims>) -> Result<SpatioTensor> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut cells = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 4 {
            return Err(Error::Format(format!(
                "line {line}: expected 4 fields, found {}",
                rec.len()
            )));
        }
        if k == 0 && rec[0].parse::<usize>().is_err() {
            continue;
        }
        let mut ix = [0usize; 3];
        for (j, v) in ix.iter_mut().enumerate() {
            *v = rec[j]
                .parse::<usize>()
                .ok()
                .filter(|&i| i >= 1)
                .ok_or_else(|| Error::Format(format!("line {line}: bad 1-based index {:?}", &rec[j])))?;
        }
        let value = parse_f64(&rec[3], line)?;
        if !value.is_finite() {
            return Err(Error::Format(format!("line {line}: value is not finite")));
        }
        cells.push((ix, value, line));
    }
    let dims = match dims {
        Some(d) => d,
        None => {
            let mx = |j: usize| cells.iter().map(|c| c.0[j]).max().unwrap_or(0);
            Dims::new(mx(0), mx(1), mx(2)).map_err(|e| Error::Format(e.to_string()))?
        }
    };
    let mut values = vec![f64::NAN; dims.len()];
    let mut seen = vec![false; dims.len()];
    for ([m, t, p], v, line) in cells {
        if m > dims.m || t > dims.t || p > dims.p {
            return Err(Error::Format(format!(
                "line {line}: index ({m},{t},{p}) outside tensor"
            )));
        }
        let idx = dims.index(m - 1, t - 1, p - 1);
        if seen[idx] {
            return Err(Error::Format(format!("line {line}: duplicate cell ({m},{t},{p})")));
        }
        seen[idx] = true;
        values[idx] = v;
    }
    SpatioTensor::new(dims, values, Mask::new(dims, seen)?)
}

pub fn load_long_csv(path: &Path, dims: Option<Dims>) -> Result<SpatioTensor> {
    read_long_csv(open(path)?, dims)
}

/// Writes observed cells in long format with a header.
pub fn write_long_csv<W: Write>(w: W, t: &SpatioTensor) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["m", "t", "p", "value"]).map_err(csv_err)?;
    for &i in t.mask().observed() {
        let (m, tt, p) = t.dims().coords(i);
        wtr.write_record([
            (m + 1).to_string(),
            (tt + 1).to_string(),
            (p + 1).to_string(),
            format!("{:?}", t.values()[i]),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}
