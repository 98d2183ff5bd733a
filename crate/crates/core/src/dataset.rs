//! Binary dataset container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "CRBD" | version: u16 | M: u32 | K: u32 | n: u32
//! n times: 2*M*K f64 (re, im interleaved, column-major by UE) | P: f64 | C: f64
//! ```
//!
//! A sidecar text file (`<path>.txt`) records the generator parameters and the
//! master seed as `key=value` lines.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::channel::{ChannelSample, InstanceSpec};
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};

pub const MAGIC: &[u8; 4] = b"CRBD";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 * 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

pub fn encode(samples: &[ChannelSample]) -> Result<Vec<u8>> {
    let first = samples.first().ok_or_else(|| Error::Config("cannot encode an empty dataset".into()))?;
    let (m, k) = (first.num_aps(), first.num_users());
    let to_u32 = |x: usize| u32::try_from(x).map_err(|_| Error::Format(format!("{x} does not fit in u32")));

    let mut out = Vec::with_capacity(HEADER_LEN + samples.len() * (2 * m * k + 2) * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for x in [m, k, samples.len()] {
        out.extend_from_slice(&to_u32(x)?.to_le_bytes());
    }
    for (idx, s) in samples.iter().enumerate() {
        if s.num_aps() != m || s.num_users() != k {
            return Err(Error::Dimension(format!("sample {idx} is {}x{}, expected {m}x{k}", s.num_aps(), s.num_users())));
        }
        for col in 0..k {
            for row in 0..m {
                let z = s.h[(row, col)];
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        out.extend_from_slice(&s.power_budget.to_le_bytes());
        out.extend_from_slice(&s.capacity.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_header(bytes: &[u8]) -> Result<DatasetHeader> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    Ok(DatasetHeader { m: r.u32()?, k: r.u32()?, n: r.u32()? })
}

pub fn decode(bytes: &[u8]) -> Result<Vec<ChannelSample>> {
    let header = decode_header(bytes)?;
    let DatasetHeader { m, k, n } = header;
    let expected = HEADER_LEN + n * (2 * m * k + 2) * 8;
    if bytes.len() != expected {
        return Err(Error::Format(format!("expected {expected} bytes for {header:?}, found {}", bytes.len())));
    }
    let mut r = Reader { bytes, pos: HEADER_LEN };
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let mut h = CMatrix::zeros(m, k);
        for col in 0..k {
            for row in 0..m {
                let re = r.f64()?;
                let im = r.f64()?;
                h[(row, col)] = C64::new(re, im);
            }
        }
        let p = r.f64()?;
        let c = r.f64()?;
        samples.push(ChannelSample::new(h, p, c)?);
    }
    Ok(samples)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

/// Human-readable description of how a dataset was generated.
pub fn sidecar_text(spec: &InstanceSpec, n: usize, seed: u64, provenance: &str) -> String {
    let p = &spec.params;
    let b = &spec.bounds;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| s.push_str(&format!("{k}={v}\n"));
    kv("format", "CRBD".into());
    kv("version", VERSION.to_string());
    kv("m", spec.m.to_string());
    kv("k", spec.k.to_string());
    kv("n", n.to_string());
    kv("seed", seed.to_string());
    kv("d0", p.d0.to_string());
    kv("ring_radius", p.ring_radius.to_string());
    kv("pathloss_exponent", p.pathloss_exponent.to_string());
    kv("scatterers", p.scatterers.to_string());
    kv("wavelength", p.wavelength.to_string());
    kv("cell_radius", p.cell_radius.to_string());
    kv("p_min", b.p_min.to_string());
    kv("p_max", b.p_max.to_string());
    kv("c_min", b.c_min.to_string());
    kv("c_max", b.c_max.to_string());
    kv("provenance", provenance.to_string());
    s
}

pub fn write_dataset(path: &Path, samples: &[ChannelSample], sidecar: &str) -> Result<()> {
    let bytes = encode(samples)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    fs::write(sidecar_path(path), sidecar)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<ChannelSample>> {
    decode(&fs::read(path)?)
}
