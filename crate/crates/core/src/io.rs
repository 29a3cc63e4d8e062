//! Persistence: binary field/trajectory/kernel/ensemble formats, JSON
//! manifests, and CSV tables.
//!
//! Field files carry the magic "WNLS", a format version, the cutoff, the
//! dense array side, then row-major interleaved little-endian f64 (re, im)
//! pairs.  A JSON sidecar (same path plus ".json") records the layout and
//! the coefficient convention.  Trajectories, kernels, and ensembles reuse
//! the same coefficient layout under their own magics.

use crate::spectral::SpectralField;
use num_complex::Complex64;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const FIELD_MAGIC: &[u8; 4] = b"WNLS";
pub const TRAJECTORY_MAGIC: &[u8; 4] = b"WNLT";
pub const KERNEL_MAGIC: &[u8; 4] = b"WNLK";
pub const ENSEMBLE_MAGIC: &[u8; 4] = b"WNLE";
pub const FORMAT_VERSION: u32 = 1;

/// Convention tag written to sidecars: coefficients are spatial means
/// against e^{-ik.x}, so the k=0 entry is the field mean.
pub const NORMALIZATION_TAG: &str = "space-mean";

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Field(#[from] crate::spectral::SpectralError),
    #[error("bad file format: {0}")]
    Format(String),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub magic: String,
    pub version: u32,
    pub cutoff: u32,
    pub side: u32,
    pub normalization: String,
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<(), IoError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_i32(w: &mut impl Write, v: i32) -> Result<(), IoError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64(w: &mut impl Write, v: f64) -> Result<(), IoError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, IoError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_i32(r: &mut impl Read) -> Result<i32, IoError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(i32::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64, IoError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn write_coeffs(w: &mut impl Write, coeffs: &[Complex64]) -> Result<(), IoError> {
    for c in coeffs {
        write_f64(w, c.re)?;
        write_f64(w, c.im)?;
    }
    Ok(())
}

fn read_coeffs(r: &mut impl Read, count: usize) -> Result<Vec<Complex64>, IoError> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let re = read_f64(r)?;
        let im = read_f64(r)?;
        out.push(Complex64::new(re, im));
    }
    Ok(out)
}

fn check_magic(r: &mut impl Read, expected: &[u8; 4]) -> Result<(), IoError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    if &buf != expected {
        return Err(IoError::Format(format!(
            "magic mismatch: expected {:?}, found {:?}",
            String::from_utf8_lossy(expected),
            String::from_utf8_lossy(&buf)
        )));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(IoError::Format(format!("unsupported format version {version}")));
    }
    Ok(())
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".json");
    path.with_file_name(name)
}

pub fn write_field(path: &Path, u: &SpectralField) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FIELD_MAGIC)?;
    write_u32(&mut w, FORMAT_VERSION)?;
    write_u32(&mut w, u.cutoff())?;
    write_u32(&mut w, u.side() as u32)?;
    write_coeffs(&mut w, u.raw())?;
    w.flush()?;
    let sidecar = FieldSidecar {
        magic: String::from_utf8_lossy(FIELD_MAGIC).into_owned(),
        version: FORMAT_VERSION,
        cutoff: u.cutoff(),
        side: u.side() as u32,
        normalization: NORMALIZATION_TAG.to_string(),
    };
    write_json(&sidecar_path(path), &sidecar)
}

pub fn read_field(path: &Path) -> Result<SpectralField, IoError> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, FIELD_MAGIC)?;
    let cutoff = read_u32(&mut r)?;
    let side = read_u32(&mut r)? as usize;
    let coeffs = read_coeffs(&mut r, side * side)?;
    let u = SpectralField::from_raw(cutoff, coeffs)?;
    if u.side() != side {
        return Err(IoError::Format(format!("side {side} inconsistent with cutoff {cutoff}")));
    }
    Ok(u)
}

pub fn write_trajectory(path: &Path, times: &[f64], states: &[SpectralField]) -> Result<(), IoError> {
    if times.len() != states.len() {
        return Err(IoError::Format("times/states length mismatch".into()));
    }
    if states.is_empty() {
        return Err(IoError::Format("empty trajectory".into()));
    }
    let cutoff = states[0].cutoff();
    if states.iter().any(|s| s.cutoff() != cutoff) {
        return Err(IoError::Format("trajectory states must share a cutoff".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TRAJECTORY_MAGIC)?;
    write_u32(&mut w, FORMAT_VERSION)?;
    write_u32(&mut w, cutoff)?;
    write_u32(&mut w, states[0].side() as u32)?;
    write_u32(&mut w, states.len() as u32)?;
    for &t in times {
        write_f64(&mut w, t)?;
    }
    for s in states {
        write_coeffs(&mut w, s.raw())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<(Vec<f64>, Vec<SpectralField>), IoError> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, TRAJECTORY_MAGIC)?;
    let cutoff = read_u32(&mut r)?;
    let side = read_u32(&mut r)? as usize;
    let nframes = read_u32(&mut r)? as usize;
    let mut times = Vec::with_capacity(nframes);
    for _ in 0..nframes {
        times.push(read_f64(&mut r)?);
    }
    let mut states = Vec::with_capacity(nframes);
    for _ in 0..nframes {
        let coeffs = read_coeffs(&mut r, side * side)?;
        states.push(SpectralField::from_raw(cutoff, coeffs)?);
    }
    Ok((times, states))
}

/// Dense kernel frames: `frames[t * nk * nkstar + i * nkstar + j]` is the
/// entry for the i-th retained row mode and j-th column mode at time t.
/// Row and column mode lists are deterministic functions of (N, L) and are
/// not stored.
pub fn write_kernel_raw(
    path: &Path,
    n: u32,
    l_exp: i32,
    times: &[f64],
    nk: usize,
    nkstar: usize,
    frames: &[Complex64],
) -> Result<(), IoError> {
    if frames.len() != times.len() * nk * nkstar {
        return Err(IoError::Format("kernel frame buffer length mismatch".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(KERNEL_MAGIC)?;
    write_u32(&mut w, FORMAT_VERSION)?;
    write_u32(&mut w, n)?;
    write_i32(&mut w, l_exp)?;
    write_u32(&mut w, times.len() as u32)?;
    write_u32(&mut w, nk as u32)?;
    write_u32(&mut w, nkstar as u32)?;
    for &t in times {
        write_f64(&mut w, t)?;
    }
    write_coeffs(&mut w, frames)?;
    w.flush()?;
    Ok(())
}

pub struct KernelRaw {
    pub n: u32,
    pub l_exp: i32,
    pub times: Vec<f64>,
    pub nk: usize,
    pub nkstar: usize,
    pub frames: Vec<Complex64>,
}

pub fn read_kernel_raw(path: &Path) -> Result<KernelRaw, IoError> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, KERNEL_MAGIC)?;
    let n = read_u32(&mut r)?;
    let l_exp = read_i32(&mut r)?;
    let ntimes = read_u32(&mut r)? as usize;
    let nk = read_u32(&mut r)? as usize;
    let nkstar = read_u32(&mut r)? as usize;
    let mut times = Vec::with_capacity(ntimes);
    for _ in 0..ntimes {
        times.push(read_f64(&mut r)?);
    }
    let frames = read_coeffs(&mut r, ntimes * nk * nkstar)?;
    Ok(KernelRaw { n, l_exp, times, nk, nkstar, frames })
}

pub fn write_ensemble(path: &Path, fields: &[SpectralField], log_weights: &[f64]) -> Result<(), IoError> {
    if fields.len() != log_weights.len() || fields.is_empty() {
        return Err(IoError::Format("ensemble fields/weights mismatch or empty".into()));
    }
    let cutoff = fields[0].cutoff();
    if fields.iter().any(|f| f.cutoff() != cutoff) {
        return Err(IoError::Format("ensemble fields must share a cutoff".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(ENSEMBLE_MAGIC)?;
    write_u32(&mut w, FORMAT_VERSION)?;
    write_u32(&mut w, cutoff)?;
    write_u32(&mut w, fields[0].side() as u32)?;
    write_u32(&mut w, fields.len() as u32)?;
    for (f, &lw) in fields.iter().zip(log_weights) {
        write_f64(&mut w, lw)?;
        write_coeffs(&mut w, f.raw())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ensemble(path: &Path) -> Result<(Vec<SpectralField>, Vec<f64>), IoError> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, ENSEMBLE_MAGIC)?;
    let cutoff = read_u32(&mut r)?;
    let side = read_u32(&mut r)? as usize;
    let count = read_u32(&mut r)? as usize;
    let mut fields = Vec::with_capacity(count);
    let mut log_weights = Vec::with_capacity(count);
    for _ in 0..count {
        log_weights.push(read_f64(&mut r)?);
        let coeffs = read_coeffs(&mut r, side * side)?;
        fields.push(SpectralField::from_raw(cutoff, coeffs)?);
    }
    Ok((fields, log_weights))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let r = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}

/// Plot-ready CSV table: one header row, then string-rendered records.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| IoError::Format(e.to_string()))?;
    w.write_record(header).map_err(|e| IoError::Format(e.to_string()))?;
    for row in rows {
        if row.len() != header.len() {
            return Err(IoError::Format("csv row width mismatch".into()));
        }
        w.write_record(row).map_err(|e| IoError::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
