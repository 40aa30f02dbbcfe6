//! Point cloud and trajectory files.

use std::collections::HashSet;
use std::path::Path;
use std::str::FromStr;

use crate::geometry::{Point3, PointCloud, Pose2};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    /// Whitespace-separated `x y z` per line.
    XyzText,
    /// Little-endian `3 × f32` records.
    XyzBin,
}

impl CloudFormat {
    /// Guesses from the extension: `.bin` is binary, anything else text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => CloudFormat::XyzBin,
            _ => CloudFormat::XyzText,
        }
    }
}

impl FromStr for CloudFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xyz-text" => Ok(CloudFormat::XyzText),
            "xyz-bin" => Ok(CloudFormat::XyzBin),
            _ => Err(Error::config(format!("unknown cloud format `{s}` (xyz-text, xyz-bin)"))),
        }
    }
}

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.into(),
        line,
        msg: msg.into(),
    }
}

/// Blank lines and `#` comments are skipped.
pub fn parse_cloud_text(text: &str, origin: &str) -> Result<PointCloud> {
    let mut cloud = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(origin, i + 1, format!("expected 3 fields, found {}", fields.len())));
        }
        let mut v = [0.0; 3];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f
                .parse::<f64>()
                .map_err(|_| parse_err(origin, i + 1, format!("bad number `{f}`")))?;
        }
        let p = Point3::new(v[0], v[1], v[2]);
        if !p.is_finite() {
            return Err(parse_err(origin, i + 1, "non-finite coordinate"));
        }
        cloud.push(p);
    }
    Ok(cloud)
}

pub fn format_cloud_text(cloud: &[Point3]) -> String {
    let mut s = String::with_capacity(cloud.len() * 30);
    for p in cloud {
        s.push_str(&format!("{:.6} {:.6} {:.6}\n", p.x, p.y, p.z));
    }
    s
}

pub fn decode_cloud_bin(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() % 12 != 0 {
        let offset = bytes.len() - bytes.len() % 12;
        return Err(Error::decode("xyz-bin cloud", offset, "truncated record"));
    }
    let mut cloud = Vec::with_capacity(bytes.len() / 12);
    for (k, rec) in bytes.chunks_exact(12).enumerate() {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().expect("4 bytes")) as f64;
        let p = Point3::new(f(0), f(1), f(2));
        if !p.is_finite() {
            return Err(Error::decode("xyz-bin cloud", k * 12, "non-finite coordinate"));
        }
        cloud.push(p);
    }
    Ok(cloud)
}

pub fn encode_cloud_bin(cloud: &[Point3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 12);
    for p in cloud {
        for v in [p.x, p.y, p.z] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn read_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        CloudFormat::XyzBin => decode_cloud_bin(&bytes),
        CloudFormat::XyzText => {
            let text = String::from_utf8(bytes).map_err(|e| {
                parse_err(&path.display().to_string(), 0, format!("not UTF-8 at byte {}", e.utf8_error().valid_up_to()))
            })?;
            parse_cloud_text(&text, &path.display().to_string())
        }
    }
}

pub fn write_cloud(path: &Path, cloud: &[Point3], format: CloudFormat) -> Result<()> {
    let bytes = match format {
        CloudFormat::XyzBin => encode_cloud_bin(cloud),
        CloudFormat::XyzText => format_cloud_text(cloud).into_bytes(),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEntry {
    pub frame_id: String,
    pub pose: Pose2,
}

/// Lines `frame_id x y yaw_rad`; yaw is normalized, file order is kept and
/// duplicate ids are rejected.
pub fn parse_trajectory(text: &str, origin: &str) -> Result<Vec<TrajectoryEntry>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(parse_err(origin, i + 1, format!("expected `frame_id x y yaw`, found {} fields", fields.len())));
        }
        let mut v = [0.0; 3];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| parse_err(origin, i + 1, format!("bad number `{f}`")))?;
        }
        let id = fields[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(parse_err(origin, i + 1, format!("duplicate frame id `{id}`")));
        }
        out.push(TrajectoryEntry {
            frame_id: id,
            pose: Pose2::new(v[0], v[1], v[2]),
        });
    }
    Ok(out)
}

pub fn format_trajectory(entries: &[TrajectoryEntry]) -> String {
    entries
        .iter()
        .map(|e| format!("{} {:.9} {:.9} {:.9}\n", e.frame_id, e.pose.x, e.pose.y, e.pose.yaw))
        .collect()
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryEntry>> {
    parse_trajectory(&read_text(path)?, &path.display().to_string())
}

pub fn write_trajectory(path: &Path, entries: &[TrajectoryEntry]) -> Result<()> {
    write_text(path, &format_trajectory(entries))
}
