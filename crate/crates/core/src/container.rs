//! Binary container for dictionaries and coefficient maps, plus a JSON
//! metadata sidecar.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CDLA"  version:u8  kind:u8  dtype:u8  ndim:u8
//! count0:u32  count1:u32  support:[u32; ndim]  frame:[u32; ndim]
//! payload: f64 little-endian, row-major
//! ```
//!
//! A dictionary stores `count0 = M`, `count1 = 1` and `M` unpadded filters of
//! the support shape. Coefficient maps store `count0 = K`, `count1 = M`, a
//! support equal to the frame, and `K * M` full-frame maps.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{CoefficientMaps, Dictionary, Frame};

pub const MAGIC: [u8; 4] = *b"CDLA";
pub const VERSION: u8 = 1;
pub const DTYPE_F64LE: u8 = 1;
/// Largest accepted extent of one dimension.
pub const MAX_DIM: usize = 1 << 20;
/// Largest accepted number of stored values (2 GiB of payload).
pub const MAX_VALUES: usize = 1 << 28;

const KIND_DICTIONARY: u8 = 1;
const KIND_MAPS: u8 = 2;

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Dictionary(Dictionary),
    Maps(CoefficientMaps),
}

fn header(kind: u8, count0: usize, count1: usize, support: &Frame, frame: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * frame.ndim());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&[VERSION, kind, DTYPE_F64LE, frame.ndim() as u8]);
    for v in [count0, count1].iter().chain(support.dims()).chain(frame.dims()) {
        out.extend_from_slice(&(*v as u32).to_le_bytes());
    }
    out
}

fn push_values(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_dictionary(d: &Dictionary) -> Vec<u8> {
    let mut out = header(KIND_DICTIONARY, d.m_count(), 1, d.support(), d.frame());
    push_values(&mut out, d.filters());
    out
}

pub fn encode_maps(x: &CoefficientMaps) -> Vec<u8> {
    let mut out = header(KIND_MAPS, x.k_count(), x.m_count(), x.frame(), x.frame());
    push_values(&mut out, x.data());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn dims(&mut self, ndim: usize, what: &str) -> Result<Frame> {
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let d = self.u32(what)?;
            if d == 0 || d > MAX_DIM {
                return Err(Error::Format(format!("{what} dimension {d} outside 1..={MAX_DIM}")));
            }
            dims.push(d);
        }
        Frame::new(&dims).map_err(|e| Error::Format(format!("{what}: {e}")))
    }
}

/// Strictly validating decoder: exact length, bounded sizes, finite values.
pub fn decode(bytes: &[u8]) -> Result<Payload> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let kind = r.u8("kind")?;
    let dtype = r.u8("element type")?;
    if dtype != DTYPE_F64LE {
        return Err(Error::Format(format!("unsupported element type {dtype}")));
    }
    let ndim = r.u8("rank")? as usize;
    if !(1..=2).contains(&ndim) {
        return Err(Error::Format(format!("rank {ndim} is not 1 or 2")));
    }
    let count0 = r.u32("count")?;
    let count1 = r.u32("count")?;
    let support = r.dims(ndim, "support")?;
    let frame = r.dims(ndim, "frame")?;
    if !support.fits_within(&frame) {
        return Err(Error::Format(format!("support {support} exceeds frame {frame}")));
    }
    let (per_item, items) = match kind {
        KIND_DICTIONARY if count1 == 1 => (support.len(), count0),
        KIND_DICTIONARY => return Err(Error::Format(format!("dictionary with count1 = {count1}"))),
        KIND_MAPS if support == frame => (frame.len(), count0.checked_mul(count1).unwrap_or(usize::MAX)),
        KIND_MAPS => return Err(Error::Format("map support must equal the frame".into())),
        other => return Err(Error::Format(format!("unknown kind {other}"))),
    };
    if count0 == 0 || count1 == 0 {
        return Err(Error::Format("zero item count".into()));
    }
    let values = items
        .checked_mul(per_item)
        .filter(|&v| v <= MAX_VALUES)
        .ok_or_else(|| Error::Format("payload size exceeds the supported maximum".into()))?;
    let remaining = bytes.len() - r.pos;
    if remaining != values * 8 {
        return Err(Error::Format(format!(
            "payload holds {remaining} bytes, header implies {}",
            values * 8
        )));
    }
    let data: Vec<f64> = r
        .take(remaining, "payload")?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite value in payload".into()));
    }
    let wrap = |e: Error| Error::Format(e.to_string());
    Ok(match kind {
        KIND_DICTIONARY => Payload::Dictionary(Dictionary::new(support, frame, data).map_err(wrap)?),
        _ => Payload::Maps(CoefficientMaps::new(count0, count1, frame, data).map_err(wrap)?),
    })
}

pub fn decode_dictionary(bytes: &[u8]) -> Result<Dictionary> {
    match decode(bytes)? {
        Payload::Dictionary(d) => Ok(d),
        Payload::Maps(_) => Err(Error::Format("expected a dictionary, found coefficient maps".into())),
    }
}

pub fn decode_maps(bytes: &[u8]) -> Result<CoefficientMaps> {
    match decode(bytes)? {
        Payload::Maps(x) => Ok(x),
        Payload::Dictionary(_) => Err(Error::Format("expected coefficient maps, found a dictionary".into())),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SidecarKind {
    Dictionary,
    CoefficientMaps,
}

/// Human-readable description of a container file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub kind: SidecarKind,
    pub version: u8,
    pub element_type: String,
    pub layout: String,
    /// Number of signals (coefficient maps only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_count: Option<usize>,
    pub m_count: usize,
    pub support: Vec<usize>,
    pub frame: Vec<usize>,
    pub byte_len: usize,
}

impl Sidecar {
    pub fn describe(payload: &Payload) -> Self {
        let (kind, k_count, m_count, support, frame, values) = match payload {
            Payload::Dictionary(d) => (
                SidecarKind::Dictionary,
                None,
                d.m_count(),
                d.support().dims().to_vec(),
                d.frame().dims().to_vec(),
                d.filters().len(),
            ),
            Payload::Maps(x) => (
                SidecarKind::CoefficientMaps,
                Some(x.k_count()),
                x.m_count(),
                x.frame().dims().to_vec(),
                x.frame().dims().to_vec(),
                x.data().len(),
            ),
        };
        let header = 16 + 8 * frame.len();
        Sidecar {
            kind,
            version: VERSION,
            element_type: "f64-le".into(),
            layout: "row-major".into(),
            k_count,
            m_count,
            support,
            frame,
            byte_len: header + 8 * values,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sidecar serializes")
    }

    /// Parse and check internal consistency.
    pub fn parse(text: &str) -> Result<Self> {
        let s: Sidecar = serde_json::from_str(text).map_err(|e| Error::Format(format!("sidecar: {e}")))?;
        if s.version != VERSION {
            return Err(Error::Format(format!("sidecar version {} unsupported", s.version)));
        }
        if s.element_type != "f64-le" || s.layout != "row-major" {
            return Err(Error::Format(format!(
                "sidecar element type `{}` / layout `{}` unsupported",
                s.element_type, s.layout
            )));
        }
        let support = Frame::new(&s.support).map_err(|e| Error::Format(format!("sidecar support: {e}")))?;
        let frame = Frame::new(&s.frame).map_err(|e| Error::Format(format!("sidecar frame: {e}")))?;
        if !support.fits_within(&frame) {
            return Err(Error::Format("sidecar support exceeds frame".into()));
        }
        match (s.kind, s.k_count) {
            (SidecarKind::Dictionary, None) | (SidecarKind::CoefficientMaps, Some(_)) => {}
            _ => return Err(Error::Format("sidecar k_count present only for coefficient maps".into())),
        }
        if s.m_count == 0 || s.k_count == Some(0) {
            return Err(Error::Format("sidecar counts must be positive".into()));
        }
        Ok(s)
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn save(path: &Path, payload: &Payload, bytes: Vec<u8>) -> Result<()> {
    fs::write(path, bytes)?;
    fs::write(sidecar_path(path), Sidecar::describe(payload).to_json())?;
    Ok(())
}

/// Write `path` and a `.json` sidecar next to it.
pub fn save_dictionary(path: &Path, d: &Dictionary) -> Result<()> {
    save(path, &Payload::Dictionary(d.clone()), encode_dictionary(d))
}

pub fn save_maps(path: &Path, x: &CoefficientMaps) -> Result<()> {
    save(path, &Payload::Maps(x.clone()), encode_maps(x))
}

pub fn load_dictionary(path: &Path) -> Result<Dictionary> {
    decode_dictionary(&fs::read(path)?)
}

pub fn load_maps(path: &Path) -> Result<CoefficientMaps> {
    decode_maps(&fs::read(path)?)
}
