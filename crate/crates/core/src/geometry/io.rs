//! File formats: binary PGM (P5), raw int16 volumes with a JSON sidecar,
//! whitespace-separated landmark lists and JSON deformation maps.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DeformationMap, Direction, GridGeometry, LandmarkSet, ScalarImage};
use crate::{Error, Result};

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct PgmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl PgmCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(self.path, format!("byte {start}"), format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(self.path, format!("byte {start}"), format!("bad {what}")))
    }
}

/// Reads a binary P5 PGM into a 2D image (axis 0 = rows, unit spacing).
pub fn read_pgm(path: impl AsRef<Path>) -> Result<ScalarImage> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::format(path, "byte 0", "missing P5 magic"));
    }
    let mut cur = PgmCursor { bytes: &bytes, pos: 2, path };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(path, format!("byte {}", cur.pos), format!("maxval {maxval} out of range")));
    }
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(Error::format(path, format!("byte {}", cur.pos), "expected whitespace after maxval"));
    }
    let data_start = cur.pos + 1;
    let bps = if maxval < 256 { 1 } else { 2 };
    let need = width * height * bps;
    let data = &bytes[data_start..];
    if data.len() < need {
        return Err(Error::format(
            path,
            format!("byte {}", bytes.len()),
            format!("short pixel data: {} of {need} bytes", data.len()),
        ));
    }
    let values = if bps == 1 {
        data[..need].iter().map(|&b| b as f64).collect()
    } else {
        data[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64).collect()
    };
    let geom = GridGeometry::unit(&[height, width])?;
    ScalarImage::new(geom, values)
}

/// Writes a 2D image as binary PGM. Values are rounded and clamped; 8-bit
/// samples when everything fits in 0..=255, 16-bit big-endian otherwise.
pub fn write_pgm(img: &ScalarImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let g = img.geometry();
    if g.ndim() != 2 {
        return Err(Error::InvalidInput("PGM holds 2D images only".into()));
    }
    let (height, width) = (g.dims()[0], g.dims()[1]);
    let max = img.values().iter().copied().fold(0.0, f64::max).round();
    let maxval: u32 = if max <= 255.0 { 255 } else { 65535 };
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    for &v in img.values() {
        let q = v.round().clamp(0.0, maxval as f64) as u16;
        if maxval == 255 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    write_bytes(path, &out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Endianness {
    #[default]
    Little,
    Big,
}

/// Sidecar describing a raw int16 volume. `dims` lists axis 0 (slowest) first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawMeta {
    pub dims: Vec<usize>,
    pub spacing: Vec<f64>,
    #[serde(default)]
    pub origin: Option<Vec<f64>>,
    #[serde(default)]
    pub endianness: Endianness,
}

impl RawMeta {
    pub fn geometry(&self) -> Result<GridGeometry> {
        let origin = self.origin.clone().unwrap_or_else(|| vec![0.0; self.dims.len()]);
        GridGeometry::new(self.dims.clone(), self.spacing.clone(), origin)
    }
}

pub fn read_raw_meta(meta_path: impl AsRef<Path>) -> Result<RawMeta> {
    let meta_path = meta_path.as_ref();
    let text = fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(meta_path, format!("line {}", e.line()), e.to_string()))
}

/// Reads a raw signed 16-bit volume described by a JSON sidecar.
pub fn read_raw16(path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<ScalarImage> {
    let path = path.as_ref();
    let meta = read_raw_meta(meta_path)?;
    let geom = meta.geometry()?;
    let bytes = read_bytes(path)?;
    let need = geom.len() * 2;
    if bytes.len() != need {
        return Err(Error::format(
            path,
            format!("byte {}", bytes.len().min(need)),
            format!("file has {} bytes, sidecar dims {:?} need {need}", bytes.len(), meta.dims),
        ));
    }
    let values = bytes
        .chunks_exact(2)
        .map(|c| match meta.endianness {
            Endianness::Little => i16::from_le_bytes([c[0], c[1]]) as f64,
            Endianness::Big => i16::from_be_bytes([c[0], c[1]]) as f64,
        })
        .collect();
    ScalarImage::new(geom, values)
}

/// Writes a raw little-endian int16 volume plus its sidecar.
pub fn write_raw16(img: &ScalarImage, path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<()> {
    let g = img.geometry();
    let meta = RawMeta {
        dims: g.dims().to_vec(),
        spacing: g.spacing().to_vec(),
        origin: Some(g.origin().to_vec()),
        endianness: Endianness::Little,
    };
    let mut out = Vec::with_capacity(g.len() * 2);
    for &v in img.values() {
        let q = v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    write_bytes(path.as_ref(), &out)?;
    let meta_path = meta_path.as_ref();
    write_bytes(meta_path, serde_json::to_string_pretty(&meta)?.as_bytes())
}

/// Reads whitespace-separated landmarks, one point per line. Blank lines and
/// `#` comments are skipped. When `dims` is given, points are bounds-checked.
pub fn read_landmarks(path: impl AsRef<Path>, index_base: u8, dims: Option<&[usize]>) -> Result<LandmarkSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut points: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let loc = format!("line {}", lineno + 1);
        let p: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, loc.clone(), format!("bad number: {e}")))?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(path, loc, "non-finite coordinate"));
        }
        if let Some(first) = points.first() {
            if first.len() != p.len() {
                return Err(Error::format(path, loc, format!("expected {} coordinates, got {}", first.len(), p.len())));
            }
        }
        if let Some(dims) = dims {
            if p.len() != dims.len() {
                return Err(Error::format(path, loc, format!("expected {} coordinates", dims.len())));
            }
            for (a, &v) in p.iter().enumerate() {
                let z = v - index_base as f64;
                if !(z >= 0.0 && z <= (dims[a] - 1) as f64) {
                    return Err(Error::format(path, loc, format!("axis {a} coordinate {v} out of bounds")));
                }
            }
        }
        points.push(p);
    }
    LandmarkSet::new(points, index_base)
}

pub fn write_landmarks(lms: &LandmarkSet, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for p in &lms.points {
        let line: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    write_bytes(path.as_ref(), out.as_bytes())
}

#[derive(Serialize, Deserialize)]
struct MapDoc {
    geometry: GridGeometry,
    direction: Direction,
    targets: Vec<f64>,
}

/// JSON document: `{"geometry": {...}, "direction": "inverse", "targets": [...]}`
/// with node-major flattened targets.
pub fn write_map_json(map: &DeformationMap, path: impl AsRef<Path>) -> Result<()> {
    let doc = MapDoc {
        geometry: map.geometry().clone(),
        direction: map.direction(),
        targets: map.targets().to_vec(),
    };
    write_bytes(path.as_ref(), serde_json::to_string(&doc)?.as_bytes())
}

pub fn read_map_json(path: impl AsRef<Path>) -> Result<DeformationMap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: MapDoc =
        serde_json::from_str(&text).map_err(|e| Error::format(path, format!("line {}", e.line()), e.to_string()))?;
    DeformationMap::new(doc.geometry, doc.targets, doc.direction)
}
