//! The `PAPCCK01` checkpoint file format.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic      8 bytes "PAPCCK01"
//! kind       u8   0 = transformer, 1 = FCN
//! m          u32
//! k_max      u32
//! width      u32  m_bar (transformer) or hidden width (FCN)
//! heads      u32  0 for FCN
//! blocks     u32  0 for FCN
//! d_mod      u32
//! params     all arrays as f64 little-endian, canonical order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::net::{FcnParams, Model, PapcHyper, PapcParams};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PAPCCK01";

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Writes a model checkpoint.
pub fn write_checkpoint(path: &Path, model: &Model) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    match model {
        Model::Papc(p) => {
            w.write_all(&[0u8])?;
            write_u32(&mut w, p.hyper.m as u32)?;
            write_u32(&mut w, p.hyper.k_max as u32)?;
            write_u32(&mut w, p.hyper.m_bar as u32)?;
            write_u32(&mut w, p.hyper.heads as u32)?;
            write_u32(&mut w, p.hyper.blocks as u32)?;
            write_u32(&mut w, p.hyper.d_mod as u32)?;
        }
        Model::Fcn(p) => {
            w.write_all(&[1u8])?;
            write_u32(&mut w, p.m as u32)?;
            write_u32(&mut w, p.k as u32)?;
            write_u32(&mut w, p.width as u32)?;
            write_u32(&mut w, 0)?;
            write_u32(&mut w, 0)?;
            write_u32(&mut w, p.d_mod as u32)?;
        }
    }
    for array in model.arrays() {
        for &v in array.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a model checkpoint, reconstructing every array at its declared
/// shape and rejecting truncated or oversized files.
pub fn read_checkpoint(path: &Path) -> Result<Model> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad magic {:?} (expected PAPCCK01)",
            path.display(),
            magic
        )));
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    let m = read_u32(&mut r)? as usize;
    let k_max = read_u32(&mut r)? as usize;
    let width = read_u32(&mut r)? as usize;
    let heads = read_u32(&mut r)? as usize;
    let blocks = read_u32(&mut r)? as usize;
    let d_mod = read_u32(&mut r)? as usize;

    let mut model = match kind[0] {
        0 => {
            let hyper = PapcHyper { m, k_max, m_bar: width, heads, blocks, d_mod };
            hyper.validate().map_err(|e| Error::Data(format!("checkpoint header: {e}")))?;
            Model::Papc(PapcParams::init(hyper, 0).map_err(|e| Error::Data(e.to_string()))?)
        }
        1 => Model::Fcn(
            FcnParams::init(m, k_max, width, d_mod, 0).map_err(|e| Error::Data(e.to_string()))?,
        ),
        other => {
            return Err(Error::Data(format!("unknown model kind byte {other}")));
        }
    };

    for array in model.arrays_mut() {
        for v in array.iter_mut() {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Data(format!(
            "{}: trailing bytes after parameter payload",
            path.display()
        )));
    }
    Ok(model)
}
