//! PCB container: one ASCII header line, then raw little-endian payload.
//!
//! ```text
//! PCB1 count=<c> points=<n> dims=<d> labels=<none|class|point>\n
//! c·n·d f32 channel values (row-major per cloud, d channels per point)
//! labels=class → c i32; labels=point → c·n i32
//! ```
//!
//! Values are stored as f32; reading lifts them to f64 exactly, so
//! file → batch → file and batch → file → batch (for f32-representable
//! batches) are both bit-exact. When a cloud carries both label kinds the
//! per-point labels win — the container stores exactly one kind.

use std::path::Path;

use crate::data::PointCloud;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum LabelKind {
    None,
    Class,
    Point,
}

impl LabelKind {
    fn token(self) -> &'static str {
        match self {
            LabelKind::None => "none",
            LabelKind::Class => "class",
            LabelKind::Point => "point",
        }
    }

    fn infer(cloud: &PointCloud) -> Self {
        if cloud.part_labels.is_some() {
            LabelKind::Point
        } else if cloud.class_label.is_some() {
            LabelKind::Class
        } else {
            LabelKind::None
        }
    }
}

fn fmt_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        msg: msg.into(),
    }
}

/// Serializes a homogeneous batch (same point count, channel layout, and
/// label kind) to PCB bytes.
pub fn pcb_to_bytes(clouds: &[PointCloud]) -> Result<Vec<u8>> {
    let c = clouds.len();
    let (n, d, kind) = match clouds.first() {
        Some(first) => (first.len(), first.input_dim(), LabelKind::infer(first)),
        None => (0, 3, LabelKind::None),
    };
    for cloud in clouds {
        cloud.validate()?;
        if cloud.len() != n || cloud.input_dim() != d || LabelKind::infer(cloud) != kind {
            return Err(Error::Config(format!(
                "heterogeneous batch: expected {n} points x {d} dims with {} labels",
                kind.token()
            )));
        }
    }
    let mut out = format!("PCB1 count={c} points={n} dims={d} labels={}\n", kind.token())
        .into_bytes();
    for cloud in clouds {
        for i in 0..n {
            for &v in &cloud.coords[i * 3..(i + 1) * 3] {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
            for &v in &cloud.extra[i * cloud.extra_dim..(i + 1) * cloud.extra_dim] {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    match kind {
        LabelKind::None => {}
        LabelKind::Class => {
            for cloud in clouds {
                let label = cloud.class_label.expect("kind checked");
                out.extend_from_slice(&label.to_le_bytes());
            }
        }
        LabelKind::Point => {
            for cloud in clouds {
                for &p in cloud.part_labels.as_ref().expect("kind checked") {
                    out.extend_from_slice(&p.to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

pub fn pcb_from_bytes(bytes: &[u8]) -> Result<Vec<PointCloud>> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| fmt_err(bytes.len(), "truncated header (no newline)"))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| fmt_err(0, "header is not ASCII"))?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.is_empty() || !tokens[0].starts_with("PCB") {
        return Err(fmt_err(0, "bad magic (not a PCB file)"));
    }
    if tokens[0] != "PCB1" {
        return Err(fmt_err(0, format!("unsupported version '{}'", tokens[0])));
    }
    if tokens.len() != 5 {
        return Err(fmt_err(0, format!("header needs 4 fields, got {}", tokens.len() - 1)));
    }
    let field = |i: usize, key: &str| -> Result<&str> {
        tokens[i]
            .strip_prefix(key)
            .and_then(|rest| rest.strip_prefix('='))
            .ok_or_else(|| fmt_err(0, format!("header field {i} must be {key}=..., got '{}'", tokens[i])))
    };
    let int = |i: usize, key: &str| -> Result<usize> {
        field(i, key)?
            .parse()
            .map_err(|_| fmt_err(0, format!("bad integer in '{}'", tokens[i])))
    };
    let c = int(1, "count")?;
    let n = int(2, "points")?;
    let d = int(3, "dims")?;
    let kind = match field(4, "labels")? {
        "none" => LabelKind::None,
        "class" => LabelKind::Class,
        "point" => LabelKind::Point,
        other => return Err(fmt_err(0, format!("unknown labels kind '{other}'"))),
    };
    if d < 3 {
        return Err(fmt_err(0, format!("dims must be at least 3, got {d}")));
    }

    let mut pos = newline + 1;
    let mut take = |len: usize, what: &str| -> Result<&[u8]> {
        if pos + len > bytes.len() {
            return Err(fmt_err(
                bytes.len(),
                format!("truncated reading {what}: need {len} bytes at offset {pos}"),
            ));
        }
        let s = &bytes[pos..pos + len];
        pos += len;
        Ok(s)
    };

    let mut clouds = Vec::with_capacity(c);
    for ci in 0..c {
        let raw = take(n * d * 4, &format!("cloud {ci} channel payload"))?;
        let mut coords = Vec::with_capacity(n * 3);
        let mut extra = Vec::with_capacity(n * (d - 3));
        for i in 0..n {
            for ch in 0..d {
                let at = (i * d + ch) * 4;
                let v = f32::from_le_bytes(raw[at..at + 4].try_into().expect("len checked"));
                if ch < 3 {
                    coords.push(v as f64);
                } else {
                    extra.push(v as f64);
                }
            }
        }
        let mut cloud = PointCloud::new(coords)?;
        cloud.extra = extra;
        cloud.extra_dim = d - 3;
        clouds.push(cloud);
    }
    match kind {
        LabelKind::None => {}
        LabelKind::Class => {
            for ci in 0..c {
                let raw = take(4, &format!("class label {ci}"))?;
                clouds[ci].class_label =
                    Some(i32::from_le_bytes(raw.try_into().expect("len checked")));
            }
        }
        LabelKind::Point => {
            for ci in 0..c {
                let raw = take(n * 4, &format!("part labels of cloud {ci}"))?;
                let labels = raw
                    .chunks_exact(4)
                    .map(|b| i32::from_le_bytes(b.try_into().expect("len checked")))
                    .collect();
                clouds[ci].part_labels = Some(labels);
            }
        }
    }
    if pos != bytes.len() {
        return Err(fmt_err(pos, format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(clouds)
}

pub fn write_pcb(path: &Path, clouds: &[PointCloud]) -> Result<()> {
    std::fs::write(path, pcb_to_bytes(clouds)?)?;
    Ok(())
}

pub fn read_pcb(path: &Path) -> Result<Vec<PointCloud>> {
    pcb_from_bytes(&std::fs::read(path)?)
}
