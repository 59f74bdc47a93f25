//! The `MXL1` little-endian binary container shared by datasets, codebooks
//! and parameter checkpoints.
//!
//! Header: magic `MXL1`, then u32 version, u32 kind, u32 N_t, u32 count.

use num_complex::Complex64;
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::channel_sim::{ChannelSample, CovarianceSample};
use crate::error::{Error, Result};
use crate::grad::Tensor;

pub const MAGIC: &[u8; 4] = b"MXL1";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Channel = 0,
    Covariance = 1,
    Codebook = 2,
    Checkpoint = 3,
}

impl Kind {
    fn from_u32(v: u32) -> Result<Self> {
        Ok(match v {
            0 => Kind::Channel,
            1 => Kind::Covariance,
            2 => Kind::Codebook,
            3 => Kind::Checkpoint,
            _ => return Err(Error::Format(format!("unknown container kind {v}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Channels(Vec<ChannelSample>),
    Covariances(Vec<CovarianceSample>),
    Codebook(Vec<Vec<Complex64>>),
    /// Named tensors in store order.
    Checkpoint(Vec<(String, Tensor)>),
}

impl Payload {
    pub fn kind(&self) -> Kind {
        match self {
            Payload::Channels(_) => Kind::Channel,
            Payload::Covariances(_) => Kind::Covariance,
            Payload::Codebook(_) => Kind::Codebook,
            Payload::Checkpoint(_) => Kind::Checkpoint,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::Channels(v) => v.len(),
            Payload::Covariances(v) => v.len(),
            Payload::Codebook(v) => v.len(),
            Payload::Checkpoint(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

fn put_complex(out: &mut Vec<u8>, v: &[Complex64]) {
    for c in v {
        put_f64(out, c.re);
    }
    for c in v {
        put_f64(out, c.im);
    }
}

/// Serializes `payload` for an array of `n_t` antennas.
pub fn encode(n_t: usize, payload: &Payload) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, payload.kind() as u32);
    put_u32(&mut out, to_u32(n_t, "N_t")?);
    put_u32(&mut out, to_u32(payload.len(), "count")?);
    match payload {
        Payload::Channels(samples) => {
            for s in samples {
                if s.h.len() != n_t {
                    return Err(Error::Format("channel length differs from N_t".into()));
                }
                for p in s.position {
                    put_f64(&mut out, p);
                }
                put_complex(&mut out, &s.h);
                put_u32(&mut out, s.beam_label);
            }
        }
        Payload::Covariances(samples) => {
            for s in samples {
                if s.n != n_t || s.r.len() != n_t * n_t {
                    return Err(Error::Format("covariance size differs from N_t".into()));
                }
                put_u32(&mut out, s.block_id);
                put_complex(&mut out, &s.r);
            }
        }
        Payload::Codebook(vectors) => {
            for f in vectors {
                if f.len() != n_t {
                    return Err(Error::Format("beam length differs from N_t".into()));
                }
                put_complex(&mut out, f);
            }
        }
        Payload::Checkpoint(tensors) => {
            for (name, t) in tensors {
                put_u32(&mut out, to_u32(name.len(), "name length")?);
                out.extend_from_slice(name.as_bytes());
                put_u32(&mut out, to_u32(t.rank(), "rank")?);
                for &d in t.shape() {
                    put_u32(&mut out, to_u32(d, "extent")?);
                }
                for &v in t.data() {
                    put_f64(&mut out, v);
                }
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated container at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn complex(&mut self, n: usize) -> Result<Vec<Complex64>> {
        let re = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        let im = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect())
    }
}

/// Parses a container; returns `N_t` and the payload.
pub fn decode(bytes: &[u8]) -> Result<(usize, Payload)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("missing MXL1 magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let kind = Kind::from_u32(r.u32()?)?;
    let n_t = r.u32()? as usize;
    let count = r.u32()? as usize;
    let payload = match kind {
        Kind::Channel => {
            let mut v = Vec::with_capacity(count.min(1 << 20));
            for _ in 0..count {
                let position = [r.f64()?, r.f64()?, r.f64()?];
                let h = r.complex(n_t)?;
                let beam_label = r.u32()?;
                v.push(ChannelSample {
                    position,
                    h,
                    beam_label,
                });
            }
            Payload::Channels(v)
        }
        Kind::Covariance => {
            let mut v = Vec::with_capacity(count.min(1 << 20));
            for _ in 0..count {
                let block_id = r.u32()?;
                let m = r.complex(n_t * n_t)?;
                v.push(CovarianceSample {
                    block_id,
                    n: n_t,
                    r: m,
                });
            }
            Payload::Covariances(v)
        }
        Kind::Codebook => Payload::Codebook(
            (0..count)
                .map(|_| r.complex(n_t))
                .collect::<Result<Vec<_>>>()?,
        ),
        Kind::Checkpoint => {
            let mut v = Vec::with_capacity(count.min(1 << 16));
            for _ in 0..count {
                let len = r.u32()? as usize;
                let name = String::from_utf8(r.take(len)?.to_vec())
                    .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
                let rank = r.u32()? as usize;
                let shape = (0..rank)
                    .map(|_| r.u32().map(|d| d as usize))
                    .collect::<Result<Vec<_>>>()?;
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                v.push((name, Tensor::new(shape, data)?));
            }
            Payload::Checkpoint(v)
        }
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last record",
            bytes.len() - r.pos
        )));
    }
    Ok((n_t, payload))
}

pub fn write_file(path: &Path, n_t: usize, payload: &Payload) -> Result<String> {
    let bytes = encode(n_t, payload)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(checksum(&bytes))
}

pub fn read_file(path: &Path) -> Result<(usize, Payload)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Lowercase hex SHA-256.
pub fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
