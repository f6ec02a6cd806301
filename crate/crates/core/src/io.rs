//! JSON Lines readers and writers for boxes, detections, frames and tracks.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{Detection, GroundTruth};

/// One record per non-blank line.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    parse_jsonl(&std::fs::read_to_string(path)?).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        e => e,
    })
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// A detection tagged with its frame index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameDetection {
    pub frame: i64,
    #[serde(flatten)]
    pub det: Detection,
}

/// A ground-truth box tagged with its frame index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub frame: i64,
    #[serde(flatten)]
    pub gt: GroundTruth,
}

/// Groups detections by frame in ascending frame order, keeping file order
/// within a frame.
pub fn group_by_frame(dets: Vec<FrameDetection>) -> Vec<(i64, Vec<Detection>)> {
    let mut m: BTreeMap<i64, Vec<Detection>> = BTreeMap::new();
    for d in dets {
        m.entry(d.frame).or_default().push(d.det);
    }
    m.into_iter().collect()
}
