//! Point-cloud file formats.
//!
//! * XYZ text: one point per line as three whitespace-separated decimals,
//!   with an optional `# label <int>` header line.
//! * Binary: magic `RPC1`, little-endian `u32` point count, `u32` label flag,
//!   `N * 3` little-endian `f32` coordinates, then the `u32` label when the
//!   flag is non-zero.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{GeometryError, PointCloud};

pub const BINARY_MAGIC: &[u8; 4] = b"RPC1";

pub fn write_xyz<W: Write>(cloud: &PointCloud, mut w: W) -> Result<(), GeometryError> {
    if let Some(label) = cloud.label() {
        writeln!(w, "# label {label}")?;
    }
    for p in cloud.points() {
        writeln!(w, "{} {} {}", p[0], p[1], p[2])?;
    }
    Ok(())
}

pub fn read_xyz<R: Read>(r: R) -> Result<PointCloud, GeometryError> {
    let mut label = None;
    let mut points = Vec::new();
    for (lineno, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let mut parts = rest.split_whitespace();
            if parts.next() == Some("label") {
                let value = parts.next().ok_or_else(|| {
                    GeometryError::Format(format!("line {}: label header without value", lineno + 1))
                })?;
                label = Some(value.parse::<u32>().map_err(|e| {
                    GeometryError::Format(format!("line {}: bad label: {e}", lineno + 1))
                })?);
            }
            continue;
        }
        let coords = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| GeometryError::Format(format!("line {}: {e}", lineno + 1)))?;
        if coords.len() != 3 {
            return Err(GeometryError::Format(format!(
                "line {}: expected 3 coordinates, found {}",
                lineno + 1,
                coords.len()
            )));
        }
        points.push([coords[0], coords[1], coords[2]]);
    }
    Ok(PointCloud::new(points)?.with_label(label))
}

pub fn write_binary<W: Write>(cloud: &PointCloud, mut w: W) -> Result<(), GeometryError> {
    let n = u32::try_from(cloud.len())
        .map_err(|_| GeometryError::InvalidInput("too many points for the binary format".into()))?;
    let mut buf = Vec::with_capacity(16 + cloud.len() * 12);
    buf.extend_from_slice(BINARY_MAGIC);
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&u32::from(cloud.label().is_some()).to_le_bytes());
    for p in cloud.points() {
        for &c in p {
            buf.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    if let Some(label) = cloud.label() {
        buf.extend_from_slice(&label.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn take_u32(bytes: &[u8], pos: &mut usize) -> Result<u32, GeometryError> {
    let chunk = bytes
        .get(*pos..*pos + 4)
        .ok_or_else(|| GeometryError::Format("unexpected end of file".into()))?;
    *pos += 4;
    Ok(u32::from_le_bytes(chunk.try_into().expect("4-byte slice")))
}

pub fn read_binary<R: Read>(mut r: R) -> Result<PointCloud, GeometryError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.get(..4) != Some(BINARY_MAGIC.as_slice()) {
        return Err(GeometryError::Format("missing RPC1 magic".into()));
    }
    let mut pos = 4;
    let n = take_u32(&bytes, &mut pos)? as usize;
    let has_label = take_u32(&bytes, &mut pos)? != 0;
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let mut p = [0.0; 3];
        for c in &mut p {
            *c = f32::from_bits(take_u32(&bytes, &mut pos)?) as f64;
        }
        points.push(p);
    }
    let label = if has_label {
        Some(take_u32(&bytes, &mut pos)?)
    } else {
        None
    };
    if pos != bytes.len() {
        return Err(GeometryError::Format(format!(
            "{} trailing bytes",
            bytes.len() - pos
        )));
    }
    Ok(PointCloud::new(points)?.with_label(label))
}

/// Reads either format, choosing by the magic bytes.
pub fn load(path: &Path) -> Result<PointCloud, GeometryError> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(BINARY_MAGIC) {
        read_binary(bytes.as_slice())
    } else {
        read_xyz(bytes.as_slice())
    }
}

/// Writes the binary format for `.rpc`/`.bin` paths and XYZ text otherwise.
pub fn save(cloud: &PointCloud, path: &Path) -> Result<(), GeometryError> {
    let binary = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("rpc") | Some("bin")
    );
    let mut buf = Vec::new();
    if binary {
        write_binary(cloud, &mut buf)?;
    } else {
        write_xyz(cloud, &mut buf)?;
    }
    fs::write(path, buf)?;
    Ok(())
}
