//! PLY point-cloud I/O.
//!
//! Writing always produces `format ascii 1.0` with `float x y z` and, when
//! the cloud carries a per-point scalar, a trailing `float error` property.
//! Reading accepts ASCII and `binary_little_endian` vertex elements whose
//! properties are scalar `float`/`double`/integer types; extra properties are
//! skipped and a property named `error` is returned as the scalar.

use std::fmt::Write as _;
use std::path::Path;

use super::{Frame, PointCloud};
use crate::error::{Error, Result};

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut s = String::with_capacity(cloud.len() * 40 + 200);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "comment frame {:?}", cloud.frame());
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    if cloud.scalar().is_some() {
        s.push_str("property float error\n");
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.points().iter().enumerate() {
        let _ = write!(s, "{} {} {}", p[0] as f32, p[1] as f32, p[2] as f32);
        if let Some(e) = cloud.scalar() {
            let _ = write!(s, " {}", e[i] as f32);
        }
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

/// Reads a cloud in the given frame.
pub fn read_ply(path: &Path, frame: Frame) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let perr = |m: String| Error::parse(path, m);
    let header_end = find_subslice(&bytes, b"end_header")
        .ok_or_else(|| perr("missing end_header".into()))?;
    let mut body = header_end + b"end_header".len();
    if bytes.get(body) == Some(&b'\r') {
        body += 1;
    }
    if bytes.get(body) == Some(&b'\n') {
        body += 1;
    }
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|e| perr(e.to_string()))?;
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(perr("missing ply magic".into()));
    }
    let mut binary = false;
    let mut count = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut in_vertex = false;
    let mut before_vertex = 0usize;
    for line in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", "ascii", _] => binary = false,
            ["format", "binary_little_endian", _] => binary = true,
            ["format", f, _] => return Err(perr(format!("unsupported format {f}"))),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|e| perr(e.to_string()))?);
                in_vertex = true;
            }
            ["element", _, n] => {
                if count.is_none() && n.parse::<usize>().map(|v| v > 0).unwrap_or(true) {
                    before_vertex += 1;
                }
                in_vertex = false;
            }
            ["property", "list", ..] if in_vertex => return Err(perr("list properties on vertex".into())),
            ["property", ty, name] if in_vertex => {
                let s = Scalar::parse(ty).ok_or_else(|| perr(format!("unknown type {ty}")))?;
                props.push((name.to_string(), s));
            }
            _ => {}
        }
    }
    if before_vertex > 0 {
        return Err(perr("vertex element must come first".into()));
    }
    let n = count.ok_or_else(|| perr("no vertex element".into()))?;
    let pos = |name: &str| props.iter().position(|(p, _)| p == name);
    let (ix, iy, iz) = match (pos("x"), pos("y"), pos("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(perr("vertex needs x, y, z".into())),
    };
    let ie = pos("error");
    let mut points = Vec::with_capacity(n);
    let mut scalar = ie.map(|_| Vec::with_capacity(n));
    let mut row = vec![0.0f64; props.len()];
    if binary {
        let stride: usize = props.iter().map(|(_, s)| s.size()).sum();
        let data = &bytes[body..];
        if data.len() < n * stride {
            return Err(perr("truncated binary body".into()));
        }
        for v in 0..n {
            let mut off = v * stride;
            for (k, (_, s)) in props.iter().enumerate() {
                row[k] = s.read_le(&data[off..]);
                off += s.size();
            }
            points.push([row[ix], row[iy], row[iz]]);
            if let (Some(e), Some(sc)) = (ie, scalar.as_mut()) {
                sc.push(row[e]);
            }
        }
    } else {
        let text = std::str::from_utf8(&bytes[body..]).map_err(|e| perr(e.to_string()))?;
        let mut it = text.lines().filter(|l| !l.trim().is_empty());
        for v in 0..n {
            let line = it.next().ok_or_else(|| perr(format!("expected {n} vertices, got {v}")))?;
            let mut fields = line.split_whitespace();
            for (slot, (_, s)) in row.iter_mut().zip(&props) {
                let f = fields.next().ok_or_else(|| perr(format!("short vertex line {v}")))?;
                let bad = |_| perr(format!("bad number {f:?}"));
                // single-precision properties round like their binary form
                *slot = match s {
                    Scalar::F32 => f.parse::<f32>().map_err(bad)? as f64,
                    _ => f.parse::<f64>().map_err(bad)?,
                };
            }
            points.push([row[ix], row[iy], row[iz]]);
            if let (Some(e), Some(sc)) = (ie, scalar.as_mut()) {
                sc.push(row[e]);
            }
        }
    }
    let cloud = PointCloud::new(points, frame)?;
    match scalar {
        Some(s) => cloud.with_scalar(s),
        None => Ok(cloud),
    }
}

fn find_subslice(h: &[u8], n: &[u8]) -> Option<usize> {
    h.windows(n.len()).position(|w| w == n)
}
