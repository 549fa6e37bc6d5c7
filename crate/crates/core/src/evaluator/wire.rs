//! Length-prefixed little-endian framing for remote evaluation.
//!
//! Request: `u32 batch_count`, then per cloud `u32 point_count` followed by
//! `point_count` records of `3 × f32` position and a `u8` label.
//! Response: `u32 batch_count` followed by that many `f32` qualities.

use std::io::{self, Read, Write};

use nalgebra::Vector3;

use crate::cloud::PointCloud;

/// Upper bound on counts read from the wire, to reject corrupt headers early.
pub const MAX_COUNT: u32 = 1 << 24;

pub fn write_request<W: Write>(w: &mut W, clouds: &[&PointCloud]) -> io::Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&(clouds.len() as u32).to_le_bytes());
    for c in clouds {
        buf.extend_from_slice(&(c.len() as u32).to_le_bytes());
        for i in 0..c.len() {
            for v in c.points[i].iter() {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            buf.push(c.label(i));
        }
    }
    w.write_all(&buf)?;
    w.flush()
}

pub fn read_request<R: Read>(r: &mut R) -> io::Result<Vec<PointCloud>> {
    let n = read_count(r)?;
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let m = read_count(r)? as usize;
        let mut body = vec![0u8; m * 13];
        r.read_exact(&mut body)?;
        let mut points = Vec::with_capacity(m);
        let mut labels = Vec::with_capacity(m);
        for rec in body.chunks_exact(13) {
            let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().expect("4 bytes")) as f64;
            points.push(Vector3::new(f(0), f(1), f(2)));
            labels.push(rec[12]);
        }
        out.push(PointCloud {
            points,
            normals: None,
            labels: Some(labels),
        });
    }
    Ok(out)
}

pub fn write_response<W: Write>(w: &mut W, scores: &[f64]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(4 + 4 * scores.len());
    buf.extend_from_slice(&(scores.len() as u32).to_le_bytes());
    for s in scores {
        buf.extend_from_slice(&(*s as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()
}

pub fn read_response<R: Read>(r: &mut R) -> io::Result<Vec<f64>> {
    let n = read_count(r)? as usize;
    let mut body = vec![0u8; 4 * n];
    r.read_exact(&mut body)?;
    Ok(body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect())
}

fn read_count<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    let n = u32::from_le_bytes(b);
    if n > MAX_COUNT {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("count {n} exceeds limit")));
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_layout_is_exact() {
        let c = PointCloud {
            points: vec![Vector3::new(1.0, 2.0, 3.0)],
            normals: None,
            labels: Some(vec![1]),
        };
        let mut buf = Vec::new();
        write_request(&mut buf, &[&c]).unwrap();
        let mut expected = vec![1, 0, 0, 0, 1, 0, 0, 0];
        for v in [1.0f32, 2.0, 3.0] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        expected.push(1);
        assert_eq!(buf, expected);
        let back = read_request(&mut &buf[..]).unwrap();
        assert_eq!(back, vec![c]);
    }

    #[test]
    fn response_roundtrip_and_truncation() {
        let mut buf = Vec::new();
        write_response(&mut buf, &[0.25, 1.0]).unwrap();
        assert_eq!(buf.len(), 12);
        assert_eq!(read_response(&mut &buf[..]).unwrap(), vec![0.25, 1.0]);
        assert!(read_response(&mut &buf[..10]).is_err());
    }

    #[test]
    fn oversized_count_is_rejected() {
        let buf = u32::MAX.to_le_bytes();
        assert!(read_response(&mut &buf[..]).is_err());
    }
}
