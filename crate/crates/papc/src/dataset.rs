//! The `PAPCDS01` dataset file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            8 bytes  "PAPCDS01"
//! m                u32
//! k_max            u32
//! p (sample count) u32
//! tau_p            u32
//! records          p times:
//!   k_active       u32
//!   pilots         k_max × u16   (entries >= k_active are 0xFFFF)
//!   beta           m·k_max × f64 row-major, linear scale, padded columns
//!                  pre-filled with the pad constant
//! ```
//!
//! The pilot gram matrix is reconstructed on load, never stored.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::scenario::{Sample, SampleGenerator};
use crate::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"PAPCDS01";
const PAD_PILOT: u16 = 0xFFFF;

/// An in-memory dataset: header fields plus all sample records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub m: usize,
    pub k_max: usize,
    pub tau_p: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Generates `count` samples with indices `first_index..first_index+count`.
    pub fn generate(gen: &SampleGenerator, first_index: u64, count: usize) -> Self {
        let cfg = gen.config();
        let samples = (0..count).map(|i| gen.sample(first_index + i as u64)).collect();
        Dataset {
            m: cfg.m,
            k_max: cfg.k_max,
            tau_p: cfg.tau_p,
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Pilot gram of sample `i`.
    pub fn phi(&self, i: usize) -> Array2<f64> {
        self.samples[i].pilot_gram(self.k_max)
    }

    /// Fraction of samples containing at least one reused pilot.
    pub fn contamination_fraction(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let contaminated = self
            .samples
            .iter()
            .filter(|s| {
                let mut seen = std::collections::HashSet::new();
                s.pilots.iter().any(|p| !seen.insert(*p))
            })
            .count();
        contaminated as f64 / self.samples.len() as f64
    }
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut buf = [0u8; 2];
    r.read_exact(&mut buf)?;
    Ok(u16::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

/// Writes a dataset in `PAPCDS01` form.
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    write_u32(&mut w, ds.m as u32)?;
    write_u32(&mut w, ds.k_max as u32)?;
    write_u32(&mut w, ds.samples.len() as u32)?;
    write_u32(&mut w, ds.tau_p as u32)?;
    for (idx, s) in ds.samples.iter().enumerate() {
        if s.beta.dim() != (ds.m, ds.k_max) {
            return Err(Error::Data(format!(
                "sample {idx}: beta shape {:?} does not match header ({}, {})",
                s.beta.dim(),
                ds.m,
                ds.k_max
            )));
        }
        if s.pilots.len() != s.k_active || s.k_active > ds.k_max {
            return Err(Error::Data(format!(
                "sample {idx}: inconsistent pilots/k_active ({} pilots, k_active {})",
                s.pilots.len(),
                s.k_active
            )));
        }
        write_u32(&mut w, s.k_active as u32)?;
        for k in 0..ds.k_max {
            let p = if k < s.k_active { s.pilots[k] } else { PAD_PILOT };
            w.write_all(&p.to_le_bytes())?;
        }
        for &b in s.beta.iter() {
            w.write_all(&b.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a `PAPCDS01` dataset.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad magic {:?} (expected PAPCDS01)",
            path.display(),
            magic
        )));
    }
    let m = read_u32(&mut r)? as usize;
    let k_max = read_u32(&mut r)? as usize;
    let p = read_u32(&mut r)? as usize;
    let tau_p = read_u32(&mut r)? as usize;
    let mut samples = Vec::with_capacity(p);
    for idx in 0..p {
        let k_active = read_u32(&mut r)? as usize;
        if k_active > k_max {
            return Err(Error::Data(format!(
                "sample {idx}: k_active {k_active} exceeds k_max {k_max}"
            )));
        }
        let mut pilots = Vec::with_capacity(k_active);
        for k in 0..k_max {
            let v = read_u16(&mut r)?;
            if k < k_active {
                if v as usize >= tau_p {
                    return Err(Error::Data(format!(
                        "sample {idx}: pilot index {v} out of range (tau_p {tau_p})"
                    )));
                }
                pilots.push(v);
            } else if v != PAD_PILOT {
                return Err(Error::Data(format!(
                    "sample {idx}: padded pilot slot {k} holds {v}, expected 0xFFFF"
                )));
            }
        }
        let mut beta = Array2::zeros((m, k_max));
        for mi in 0..m {
            for ki in 0..k_max {
                beta[[mi, ki]] = read_f64(&mut r)?;
            }
        }
        samples.push(Sample { k_active, pilots, beta });
    }
    // Trailing bytes mean a corrupt or mislabeled file.
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Data(format!(
            "{}: trailing bytes after {} records",
            path.display(),
            p
        )));
    }
    Ok(Dataset { m, k_max, tau_p, samples })
}
