//! Binary model format, little-endian throughout:
//!
//! ```text
//! magic  "MAVAE\0\0\0"           8 bytes
//! version u32
//! L u32, K u32, 6 hidden widths u32 (encoder then decoder)
//! parameter count u64, parameters f64 in layer order (weights row-major, then bias)
//! log length u64, then (loss, reconstruction, kl) f64 triples
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{build_architecture, EpochLog, VaeModel, VaeParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MAVAE\0\0\0";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_model<W: Write>(model: &VaeModel, mut w: W) -> Result<()> {
    let a = &model.arch;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for d in [a.input_dim, a.latent_dim]
        .iter()
        .chain(&a.encoder_widths)
        .chain(&a.decoder_widths)
    {
        w.write_all(&(*d as u32).to_le_bytes())?;
    }
    let params = model.params.as_slice();
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for v in params {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(model.training_log.len() as u64).to_le_bytes())?;
    for e in &model.training_log {
        for v in [e.loss, e.reconstruction, e.kl] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::ModelFormat(format!("truncated file: {e}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

pub fn read_model<R: Read>(mut r: R) -> Result<VaeModel> {
    let magic: [u8; 8] = read_array(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::ModelFormat("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!("unsupported version {version}")));
    }
    let l = read_u32(&mut r)? as usize;
    let k = read_u32(&mut r)? as usize;
    let arch = build_architecture(l, k).map_err(|e| Error::ModelFormat(e.to_string()))?;
    let mut widths = [0usize; 6];
    for w in &mut widths {
        *w = read_u32(&mut r)? as usize;
    }
    if widths[..3] != arch.encoder_widths || widths[3..] != arch.decoder_widths {
        return Err(Error::ModelFormat(format!(
            "hidden widths {widths:?} do not match L={l}, K={k}"
        )));
    }
    let n = read_u64(&mut r)? as usize;
    if n != arch.num_params() {
        return Err(Error::ModelFormat(format!(
            "{n} parameters stored, architecture has {}",
            arch.num_params()
        )));
    }
    let values = (0..n).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
    let params = VaeParams::from_values(&arch, values)?;
    let log_len = read_u64(&mut r)? as usize;
    let mut training_log = Vec::with_capacity(log_len.min(1 << 20));
    for _ in 0..log_len {
        training_log.push(EpochLog {
            loss: read_f64(&mut r)?,
            reconstruction: read_f64(&mut r)?,
            kl: read_f64(&mut r)?,
        });
    }
    Ok(VaeModel {
        arch,
        params,
        training_log,
    })
}

pub fn save_model(model: &VaeModel, path: impl AsRef<Path>) -> Result<()> {
    write_model(model, BufWriter::new(File::create(path)?))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<VaeModel> {
    read_model(BufReader::new(File::open(path)?))
}
