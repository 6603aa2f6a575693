//! Point clouds and their on-disk / on-wire encodings.
//!
//! Three encodings are supported:
//!
//! - ASCII XYZ: one `x y z` triple per line; blank lines and lines starting with `#` are skipped.
//! - Raw float stream: little-endian `f32` triples with no header.
//! - Packed payload: a little-endian `u32` point count followed by that many `f32` triples.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::Vec3;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::Parse(format!("non-finite point {p:?}")));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn read_xyz<R: BufRead>(reader: R) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            if vals.len() != 3 {
                return Err(Error::Parse(format!(
                    "line {}: expected 3 values, found {}",
                    lineno + 1,
                    vals.len()
                )));
            }
            points.push(Vec3::new(vals[0], vals[1], vals[2]));
        }
        Self::new(points)
    }

    pub fn write_xyz<W: Write>(&self, mut w: W) -> Result<()> {
        for p in &self.points {
            writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
        }
        Ok(())
    }

    /// Decode a headerless stream of little-endian `f32` triples.
    pub fn from_f32_stream(bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 12 != 0 {
            return Err(Error::Parse(format!("stream length {} is not a multiple of 12", bytes.len())));
        }
        Self::new(decode_triples(bytes))
    }

    pub fn to_f32_stream(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.points.len() * 12);
        encode_triples(&self.points, &mut out);
        out
    }

    /// Encode as a count-prefixed packed payload.
    pub fn to_packed(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.points.len() * 12);
        out.extend_from_slice(&(self.points.len() as u32).to_le_bytes());
        encode_triples(&self.points, &mut out);
        out
    }

    pub fn from_packed(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Parse("packed cloud is missing its count header".into()));
        }
        let count = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
        let body = &bytes[4..];
        if body.len() != count * 12 {
            return Err(Error::Parse(format!(
                "packed cloud declares {count} points but carries {} bytes",
                body.len()
            )));
        }
        Self::new(decode_triples(body))
    }
}

fn encode_triples(points: &[Vec3], out: &mut Vec<u8>) {
    for p in points {
        for v in p.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
}

fn decode_triples(bytes: &[u8]) -> Vec<Vec3> {
    bytes
        .chunks_exact(12)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes([c[i], c[i + 1], c[i + 2], c[i + 3]]) as f64;
            Vec3::new(f(0), f(4), f(8))
        })
        .collect()
}
