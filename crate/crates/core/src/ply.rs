//! Binary little-endian PLY for point clouds.
//!
//! Vertices carry `float x, y, z`, optionally `float nx, ny, nz` and an
//! optional `uchar label`. The reader accepts any property order and the
//! common scalar types.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

pub fn write_ply<W: Write>(mut w: W, cloud: &PointCloud) -> Result<()> {
    cloud.validate()?;
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        cloud.len()
    );
    if cloud.normals.is_some() {
        header.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    if cloud.labels.is_some() {
        header.push_str("property uchar label\n");
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;

    let stride = 12 + if cloud.normals.is_some() { 12 } else { 0 } + usize::from(cloud.labels.is_some());
    let mut buf = Vec::with_capacity(stride * cloud.len());
    for i in 0..cloud.len() {
        push_vec(&mut buf, &cloud.points[i]);
        if let Some(n) = &cloud.normals {
            push_vec(&mut buf, &n[i]);
        }
        if let Some(l) = &cloud.labels {
            buf.push(l[i]);
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn push_vec(buf: &mut Vec<u8>, v: &Vector3<f64>) {
    for c in v.iter() {
        buf.extend_from_slice(&(*c as f32).to_le_bytes());
    }
}

pub fn save_ply(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_ply(&mut w, cloud)?;
    w.flush()?;
    Ok(())
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    read_ply(std::fs::File::open(path)?)
}

#[derive(Debug, Clone, Copy)]
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
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::Ply(format!("unsupported property type {other}"))),
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

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

pub fn read_ply<R: Read>(r: R) -> Result<PointCloud> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    let next_line = |r: &mut BufReader<R>, line: &mut String| -> Result<()> {
        line.clear();
        if r.read_line(line)? == 0 {
            return Err(Error::Ply("unexpected end of header".into()));
        }
        Ok(())
    };

    next_line(&mut r, &mut line)?;
    if line.trim() != "ply" {
        return Err(Error::Ply("missing ply magic".into()));
    }
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut format_ok = false;
    loop {
        next_line(&mut r, &mut line)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", _] => format_ok = true,
            ["format", other, _] => return Err(Error::Ply(format!("unsupported format {other}"))),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                if vertex_count.is_some() {
                    return Err(Error::Ply("duplicate vertex element".into()));
                }
                vertex_count = Some(n.parse::<usize>().map_err(|e| Error::Ply(e.to_string()))?);
                in_vertex = true;
            }
            ["element", ..] => {
                if vertex_count.is_none() {
                    return Err(Error::Ply("elements before vertex are not supported".into()));
                }
                in_vertex = false;
            }
            ["property", "list", ..] if in_vertex => {
                return Err(Error::Ply("list properties on vertices are not supported".into()))
            }
            ["property", ty, name] if in_vertex => props.push((name.to_string(), Scalar::parse(ty)?)),
            ["property", ..] => {}
            [] => {}
            other => return Err(Error::Ply(format!("unrecognized header line {other:?}"))),
        }
    }
    if !format_ok {
        return Err(Error::Ply("missing format line".into()));
    }
    let n = vertex_count.ok_or_else(|| Error::Ply("no vertex element".into()))?;
    let find = |name: &str| props.iter().position(|(p, _)| p == name);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(Error::Ply("vertex needs x, y, z".into())),
    };
    let normal_idx = match (find("nx"), find("ny"), find("nz")) {
        (Some(x), Some(y), Some(z)) => Some((x, y, z)),
        _ => None,
    };
    let label_idx = find("label");

    let mut offsets = Vec::with_capacity(props.len());
    let mut stride = 0;
    for (_, ty) in &props {
        offsets.push(stride);
        stride += ty.size();
    }
    let mut body = vec![0u8; stride * n];
    r.read_exact(&mut body)
        .map_err(|e| Error::Ply(format!("truncated vertex data: {e}")))?;

    let field = |rec: &[u8], i: usize| props[i].1.read(&rec[offsets[i]..]);
    let mut cloud = PointCloud {
        points: Vec::with_capacity(n),
        normals: normal_idx.map(|_| Vec::with_capacity(n)),
        labels: label_idx.map(|_| Vec::with_capacity(n)),
    };
    for rec in body.chunks_exact(stride.max(1)).take(n) {
        cloud
            .points
            .push(Vector3::new(field(rec, ix), field(rec, iy), field(rec, iz)));
        if let (Some((a, b, c)), Some(ns)) = (normal_idx, cloud.normals.as_mut()) {
            let v = Vector3::new(field(rec, a), field(rec, b), field(rec, c));
            // Stored as f32; restore unit length.
            ns.push(if v.norm() > 0.0 { v.normalize() } else { v });
        }
        if let (Some(l), Some(ls)) = (label_idx, cloud.labels.as_mut()) {
            ls.push(field(rec, l) as u8);
        }
    }
    cloud.validate()?;
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_with_all_channels() {
        let cloud = PointCloud {
            points: vec![Vector3::new(0.1, -0.2, 0.3), Vector3::new(1.0, 2.0, 3.0)],
            normals: Some(vec![Vector3::z(), Vector3::new(0.6, 0.8, 0.0)]),
            labels: Some(vec![0, 1]),
        };
        let mut bytes = Vec::new();
        write_ply(&mut bytes, &cloud).unwrap();
        let back = read_ply(&bytes[..]).unwrap();
        assert_eq!(back.labels, cloud.labels);
        for (a, b) in back.points.iter().zip(&cloud.points) {
            assert!((a - b).norm() < 1e-6);
        }
        for (a, b) in back.normals.unwrap().iter().zip(cloud.normals.as_ref().unwrap()) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn reads_reordered_double_properties() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\ncomment test\nelement vertex 1\nproperty uchar label\nproperty double z\nproperty double y\nproperty double x\nend_header\n".to_vec();
        bytes.push(1);
        for v in [3.0f64, 2.0, 1.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let cloud = read_ply(&bytes[..]).unwrap();
        assert_eq!(cloud.points[0], Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(cloud.labels, Some(vec![1]));
        assert!(cloud.normals.is_none());
    }

    #[test]
    fn rejects_ascii_and_truncation() {
        let ascii = b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n";
        assert!(read_ply(&ascii[..]).is_err());
        let short = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n\0\0\0\0";
        assert!(read_ply(&short[..]).is_err());
    }
}
