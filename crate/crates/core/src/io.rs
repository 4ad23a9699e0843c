//! Binary artifact formats. All are versioned by magic bytes, little-endian,
//! and contain no timestamps or hostnames so byte-identical reruns are the
//! norm rather than the exception.
//!
//! Volume ".cfv": magic `CFVOL\0\0\x01`, u32 D/H/W, u8 contrast code, u8
//! alignment flag, three f64 rigid parameters, then D·H·W f64 voxels.
//!
//! Checkpoint ".cfckpt": magic `CFCKPT01`, u64 config hash, u32 completed
//! epochs, u8 mode code, RNG state (32-byte seed, u64 stream, u128 word
//! position), length-prefixed resolved-config text, then length-prefixed
//! named f64 blobs (parameters, optimizer moments, counters).
//!
//! Slice export: binary 16-bit PGM (P5), big-endian samples per the Netpbm
//! convention, [0,1] scaled to [0,65535].

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;
use crate::volume::{Alignment, Contrast, Volume};

pub const CFV_MAGIC: [u8; 8] = *b"CFVOL\0\0\x01";
pub const CKPT_MAGIC: [u8; 8] = *b"CFCKPT01";

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::io(path, e)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(io_err(self.path, format!("truncated file at offset {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().expect("16 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn write_volume(path: &Path, v: &Volume) -> Result<()> {
    let mut out = Vec::with_capacity(8 + 12 + 2 + 24 + v.numel() * 8);
    out.extend_from_slice(&CFV_MAGIC);
    for d in v.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.push(v.contrast.code());
    out.push(u8::from(v.alignment.is_misaligned()));
    for p in v.alignment.rigid_params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    for &x in &v.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let buf = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0, path };
    if r.take(8)? != CFV_MAGIC {
        return Err(io_err(path, "bad magic (not a .cfv volume)"));
    }
    let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let contrast = Contrast::from_code(r.u8()?)
        .map_err(|e| io_err(path, e))?;
    let misaligned = r.u8()? != 0;
    let rigid = [r.f64()?, r.f64()?, r.f64()?];
    let numel = dims[0] * dims[1] * dims[2];
    let data = r.f64s(numel)?;
    if r.pos != buf.len() {
        return Err(io_err(path, format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let alignment = if misaligned {
        Alignment::Misaligned { rot_deg: rigid[0], shift_y: rigid[1], shift_x: rigid[2] }
    } else {
        Alignment::Registered
    };
    Ok(Volume { dims, data, contrast, alignment })
}

/// Export one slice as a 16-bit binary PGM, [0,1] mapped to [0,65535].
pub fn write_pgm16(path: &Path, height: usize, width: usize, values: &[f64]) -> Result<()> {
    if values.len() != height * width {
        return Err(Error::usage(format!(
            "pgm export: {} values for {height}x{width}",
            values.len()
        )));
    }
    let mut out = Vec::with_capacity(32 + values.len() * 2);
    write!(&mut out, "P5\n{width} {height}\n65535\n").expect("header write");
    for &v in values {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Fully serialized training state.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointFile {
    pub config_hash: u64,
    pub epochs_completed: u32,
    pub mode_code: u8,
    pub rng: RngState,
    pub config_text: String,
    /// Named tensors: network parameters, optimizer moments, counters.
    pub blobs: Vec<(String, Tensor<f64>)>,
}

pub fn write_checkpoint(path: &Path, ckpt: &CheckpointFile) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(&CKPT_MAGIC);
    out.extend_from_slice(&ckpt.config_hash.to_le_bytes());
    out.extend_from_slice(&ckpt.epochs_completed.to_le_bytes());
    out.push(ckpt.mode_code);
    out.extend_from_slice(&ckpt.rng.seed);
    out.extend_from_slice(&ckpt.rng.stream.to_le_bytes());
    out.extend_from_slice(&ckpt.rng.word_pos.to_le_bytes());
    out.extend_from_slice(&(ckpt.config_text.len() as u32).to_le_bytes());
    out.extend_from_slice(ckpt.config_text.as_bytes());
    out.extend_from_slice(&(ckpt.blobs.len() as u32).to_le_bytes());
    for (name, tensor) in &ckpt.blobs {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(tensor.numel() as u64).to_le_bytes());
        for &x in tensor.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<CheckpointFile> {
    let buf = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0, path };
    if r.take(8)? != CKPT_MAGIC {
        return Err(io_err(path, "bad magic (not a .cfckpt checkpoint)"));
    }
    let config_hash = r.u64()?;
    let epochs_completed = r.u32()?;
    let mode_code = r.u8()?;
    let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let stream = r.u64()?;
    let word_pos = r.u128()?;
    let cfg_len = r.u32()? as usize;
    let config_text = String::from_utf8(r.take(cfg_len)?.to_vec())
        .map_err(|e| io_err(path, e))?;
    let n_blobs = r.u32()? as usize;
    let mut blobs = Vec::with_capacity(n_blobs);
    for _ in 0..n_blobs {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|e| io_err(path, e))?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let count = r.u64()? as usize;
        let data = r.f64s(count)?;
        let tensor = Tensor::new(shape, data).map_err(|e| io_err(path, e))?;
        blobs.push((name, tensor));
    }
    if r.pos != buf.len() {
        return Err(io_err(path, format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(CheckpointFile {
        config_hash,
        epochs_completed,
        mode_code,
        rng: RngState { seed, stream, word_pos },
        config_text,
        blobs,
    })
}
