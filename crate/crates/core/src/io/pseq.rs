//! PSEQ pose-sequence files.
//!
//! A PSEQ file is a JSON object:
//!
//! ```text
//! version       "pseq-v1"
//! fps           frames per second
//! frame_count   T
//! joint_count   J
//! topology      { joint_count, parent_of (-1 = root), names?, left_right_pairs, lateral_axis }
//! valid         [bool; T]
//! frames        [[[x, y, z]; J]; T], meters; null for non-finite values
//!   or
//! frames_f64le  base64 of T*J*3 little-endian f64, row-major
//! ```
//!
//! Other top-level keys are kept through a read-modify-write cycle.

use std::path::Path;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ndarray::Array3;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::skeleton::{PoseSequence, SkeletonTopology};

pub const PSEQ_VERSION: &str = "pseq-v1";
const KNOWN: [&str; 8] = [
    "version",
    "fps",
    "frame_count",
    "joint_count",
    "topology",
    "valid",
    "frames",
    "frames_f64le",
];

/// A sequence plus any extra top-level fields found in its file.
#[derive(Debug, Clone, PartialEq)]
pub struct PseqDocument {
    pub sequence: PoseSequence,
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum FrameEncoding {
    #[default]
    Text,
    Binary,
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| Error::Format(format!("PSEQ is missing {key:?}")))
}

fn as_usize(v: &Value, key: &str) -> Result<usize> {
    v.as_u64()
        .map(|n| n as usize)
        .ok_or_else(|| Error::Format(format!("PSEQ field {key:?} must be a nonnegative integer")))
}

fn coord(v: &Value) -> Result<f64> {
    match v {
        Value::Null => Ok(f64::NAN),
        v => v.as_f64().ok_or_else(|| Error::Format(format!("coordinate {v} is not a number"))),
    }
}

fn parse_text_frames(v: &Value, t: usize, j: usize) -> Result<Array3<f64>> {
    let rows = v.as_array().ok_or_else(|| Error::Format("frames must be an array".into()))?;
    if rows.len() != t {
        return Err(Error::Shape(format!(
            "frame_count declares {t} frames but the file has {} frame rows",
            rows.len()
        )));
    }
    let mut out = Array3::zeros((t, j, 3));
    for (ti, row) in rows.iter().enumerate() {
        let joints = row.as_array().ok_or_else(|| Error::Format(format!("frame {ti} must be an array")))?;
        if joints.len() != j {
            return Err(Error::Shape(format!(
                "joint_count declares {j} joints but frame {ti} has {}",
                joints.len()
            )));
        }
        for (ji, p) in joints.iter().enumerate() {
            let p = p.as_array().filter(|p| p.len() == 3).ok_or_else(|| {
                Error::Shape(format!("frame {ti} joint {ji} must have 3 coordinates"))
            })?;
            for d in 0..3 {
                out[[ti, ji, d]] = coord(&p[d])?;
            }
        }
    }
    Ok(out)
}

fn parse_binary_frames(v: &Value, t: usize, j: usize) -> Result<Array3<f64>> {
    let text = v.as_str().ok_or_else(|| Error::Format("frames_f64le must be a base64 string".into()))?;
    let bytes = B64
        .decode(text)
        .map_err(|e| Error::Format(format!("frames_f64le is not valid base64: {e}")))?;
    let want = t * j * 3 * 8;
    if bytes.len() != want {
        return Err(Error::Shape(format!(
            "frame_count {t} x joint_count {j} needs {want} bytes of frames but the file has {}",
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Array3::from_shape_vec((t, j, 3), data).expect("sized"))
}

pub fn parse_pseq(text: &str) -> Result<PseqDocument> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::Format(format!("PSEQ is not valid JSON: {e}")))?;
    let mut obj = match root {
        Value::Object(o) => o,
        _ => return Err(Error::Format("PSEQ must be a JSON object".into())),
    };
    let version = field(&obj, "version")?.as_str().unwrap_or_default().to_string();
    if version != PSEQ_VERSION {
        return Err(Error::Version {
            expected: PSEQ_VERSION.into(),
            found: version,
        });
    }
    let fps = field(&obj, "fps")?
        .as_f64()
        .ok_or_else(|| Error::Format("fps must be a number".into()))?;
    let t = as_usize(field(&obj, "frame_count")?, "frame_count")?;
    let j = as_usize(field(&obj, "joint_count")?, "joint_count")?;
    let topology: SkeletonTopology = serde_json::from_value(field(&obj, "topology")?.clone())
        .map_err(|e| Error::Topology(e.to_string()))?;
    if topology.joint_count() != j {
        return Err(Error::Shape(format!(
            "joint_count is {j} but the topology has {} joints",
            topology.joint_count()
        )));
    }
    let valid: Vec<bool> = serde_json::from_value(field(&obj, "valid")?.clone())
        .map_err(|_| Error::Format("valid must be an array of booleans".into()))?;
    if valid.len() != t {
        return Err(Error::Shape(format!(
            "frame_count declares {t} frames but valid has {} entries",
            valid.len()
        )));
    }
    let frames = match (obj.get("frames"), obj.get("frames_f64le")) {
        (Some(v), None) => parse_text_frames(v, t, j)?,
        (None, Some(v)) => parse_binary_frames(v, t, j)?,
        (Some(_), Some(_)) => return Err(Error::Format("PSEQ has both frames and frames_f64le".into())),
        (None, None) => return Err(Error::Format("PSEQ has no frames".into())),
    };
    let sequence = PoseSequence::new(frames, fps, valid, Arc::new(topology))?;
    for k in KNOWN {
        obj.remove(k);
    }
    Ok(PseqDocument { sequence, extra: obj })
}

pub fn render_pseq(doc: &PseqDocument, encoding: FrameEncoding) -> String {
    let seq = &doc.sequence;
    let (t, j, _) = seq.frames().dim();
    let mut obj = Map::new();
    obj.insert("version".into(), json!(PSEQ_VERSION));
    obj.insert("fps".into(), json!(seq.fps()));
    obj.insert("frame_count".into(), json!(t));
    obj.insert("joint_count".into(), json!(j));
    obj.insert("topology".into(), serde_json::to_value(seq.topology().as_ref()).expect("topology serializes"));
    obj.insert("valid".into(), json!(seq.valid()));
    match encoding {
        FrameEncoding::Text => {
            let frames: Vec<Value> = seq
                .frames()
                .outer_iter()
                .map(|f| {
                    f.rows()
                        .into_iter()
                        .map(|p| p.iter().map(|&v| if v.is_finite() { json!(v) } else { Value::Null }).collect::<Value>())
                        .collect()
                })
                .collect();
            obj.insert("frames".into(), Value::Array(frames));
        }
        FrameEncoding::Binary => {
            let mut bytes = Vec::with_capacity(t * j * 24);
            for v in seq.frames().iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            obj.insert("frames_f64le".into(), json!(B64.encode(bytes)));
        }
    }
    for (k, v) in &doc.extra {
        obj.insert(k.clone(), v.clone());
    }
    let mut text = serde_json::to_string(&Value::Object(obj)).expect("document serializes");
    text.push('\n');
    text
}

pub fn read_pseq_document(path: &Path) -> Result<PseqDocument> {
    let text = std::fs::read_to_string(path)?;
    parse_pseq(&text)
}

pub fn read_pseq(path: &Path) -> Result<PoseSequence> {
    Ok(read_pseq_document(path)?.sequence)
}

pub fn write_pseq_document(doc: &PseqDocument, path: &Path, encoding: FrameEncoding) -> Result<()> {
    std::fs::write(path, render_pseq(doc, encoding))?;
    Ok(())
}

pub fn write_pseq(seq: &PoseSequence, path: &Path) -> Result<()> {
    write_pseq_document(
        &PseqDocument {
            sequence: seq.clone(),
            extra: Map::new(),
        },
        path,
        FrameEncoding::Text,
    )
}
