//! Self-describing binary trajectory files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic            8 bytes  "SHKTRAJ\0"
//! version          u32
//! endian marker    u32      0x0102_0304
//! stage            u32      0 full, 1 reduced, 2 assimilation, 3 prediction
//! nmodes           u64
//! dt               f64      integrator step
//! stride           u64      integrator steps per snapshot
//! nu, sigma        f64, f64
//! k0, seed         u64, u64
//! snapshots        u64
//! forcing steps    u64      0 when absent
//! config hash      32 bytes (zero when unknown)
//! payload          snapshots × nmodes × (re, im) f64
//! forcing          forcing steps × k0 × (ΔW, ΔW') f64, at the snapshot interval
//! ```

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::forcing::ForcingPath;
use crate::full_model::{Trajectory, TrajectoryMeta};
use crate::spectral::SpectralState;

pub const MAGIC: &[u8; 8] = b"SHKTRAJ\0";
pub const FORMAT_VERSION: u32 = 1;
const ENDIAN_MARKER: u32 = 0x0102_0304;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Full = 0,
    Reduced = 1,
    Assimilation = 2,
    Prediction = 3,
}

impl Stage {
    fn from_u32(v: u32) -> Result<Self> {
        Ok(match v {
            0 => Stage::Full,
            1 => Stage::Reduced,
            2 => Stage::Assimilation,
            3 => Stage::Prediction,
            _ => return Err(Error::Format(format!("unknown stage tag {v}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryFile {
    pub stage: Stage,
    pub config_hash: [u8; 32],
    pub trajectory: Trajectory,
}

/// Parses a 64-character hex digest; anything else maps to zeros.
pub fn hash_bytes(hex: &str) -> [u8; 32] {
    let mut out = [0u8; 32];
    if hex.len() == 64 {
        for (i, b) in out.iter_mut().enumerate() {
            *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).unwrap_or(0);
        }
    }
    out
}

pub fn hash_hex(bytes: &[u8; 32]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl TrajectoryFile {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let t = &self.trajectory;
        let m = &t.meta;
        if t.states.iter().any(|s| s.nmodes() != m.nmodes) {
            return Err(Error::InvalidState("snapshots disagree with header mode count".into()));
        }
        let mut buf = Vec::with_capacity(128 + t.len() * m.nmodes * 16);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&ENDIAN_MARKER.to_le_bytes());
        buf.extend_from_slice(&(self.stage as u32).to_le_bytes());
        buf.extend_from_slice(&(m.nmodes as u64).to_le_bytes());
        buf.extend_from_slice(&m.dt.to_le_bytes());
        buf.extend_from_slice(&(m.stride as u64).to_le_bytes());
        buf.extend_from_slice(&m.nu.to_le_bytes());
        buf.extend_from_slice(&m.sigma.to_le_bytes());
        buf.extend_from_slice(&(m.k0 as u64).to_le_bytes());
        buf.extend_from_slice(&m.seed.to_le_bytes());
        buf.extend_from_slice(&(t.len() as u64).to_le_bytes());
        let fsteps = t.forcing.as_ref().map_or(0, |p| p.nsteps());
        if let Some(p) = &t.forcing {
            if p.k0() != m.k0 {
                return Err(Error::InvalidState("forcing section has a different k0".into()));
            }
        }
        buf.extend_from_slice(&(fsteps as u64).to_le_bytes());
        buf.extend_from_slice(&self.config_hash);
        for s in &t.states {
            for c in s.coeffs() {
                buf.extend_from_slice(&c.re.to_le_bytes());
                buf.extend_from_slice(&c.im.to_le_bytes());
            }
        }
        if let Some(p) = &t.forcing {
            for x in p.increments() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(Error::Format("not a trajectory file".into()));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported trajectory format version {version}")));
        }
        if cur.u32()? != ENDIAN_MARKER {
            return Err(Error::Format("byte order marker mismatch".into()));
        }
        let stage = Stage::from_u32(cur.u32()?)?;
        let nmodes = cur.u64()? as usize;
        let dt = cur.f64()?;
        let stride = cur.u64()? as usize;
        let nu = cur.f64()?;
        let sigma = cur.f64()?;
        let k0 = cur.u64()? as usize;
        let seed = cur.u64()?;
        let nsnap = cur.u64()? as usize;
        let fsteps = cur.u64()? as usize;
        let mut config_hash = [0u8; 32];
        config_hash.copy_from_slice(cur.take(32)?);
        let expected = nsnap
            .checked_mul(nmodes * 16)
            .and_then(|p| p.checked_add(fsteps.checked_mul(k0 * 16)?))
            .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
        if bytes.len() - cur.pos != expected {
            return Err(Error::Format(format!(
                "payload holds {} bytes, header implies {expected}",
                bytes.len() - cur.pos
            )));
        }
        let mut states = Vec::with_capacity(nsnap);
        for _ in 0..nsnap {
            let mut coeffs = Vec::with_capacity(nmodes);
            for _ in 0..nmodes {
                coeffs.push(Complex64::new(cur.f64()?, cur.f64()?));
            }
            states.push(SpectralState::from_coeffs(coeffs)?);
        }
        let forcing = if fsteps > 0 {
            let inc = (0..fsteps * 2 * k0).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
            Some(ForcingPath::from_increments(inc, k0, dt * stride as f64, seed)?)
        } else {
            None
        };
        let interval = dt * stride as f64;
        Ok(Self {
            stage,
            config_hash,
            trajectory: Trajectory {
                times: (0..nsnap).map(|i| i as f64 * interval).collect(),
                states,
                meta: TrajectoryMeta {
                    nmodes,
                    nu,
                    dt,
                    stride,
                    sigma,
                    k0,
                    seed,
                },
                forcing,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format("truncated trajectory file".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
