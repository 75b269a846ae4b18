use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};

/// One frame of an input stream.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub frame_index: u64,
    pub image_path: PathBuf,
    pub landmarks_path: PathBuf,
    pub is_keyframe: bool,
    pub gt_path: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    frame_index: u64,
    image: PathBuf,
    landmarks: PathBuf,
    #[serde(default)]
    keyframe: bool,
    #[serde(default)]
    gt: Option<PathBuf>,
}

/// Parses manifest text: one JSON object per line, blank lines and lines
/// starting with `#` ignored. Relative paths are joined onto `base`.
/// Frame indices must strictly increase.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<FrameRecord>> {
    let mut out: Vec<FrameRecord> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let l: Line = serde_json::from_str(line).map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        if let Some(prev) = out.last() {
            if l.frame_index <= prev.frame_index {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("frame_index {} does not follow {}", l.frame_index, prev.frame_index),
                });
            }
        }
        let resolve = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
        out.push(FrameRecord {
            frame_index: l.frame_index,
            image_path: resolve(l.image),
            landmarks_path: resolve(l.landmarks),
            is_keyframe: l.keyframe,
            gt_path: l.gt.map(resolve),
        });
    }
    Ok(out)
}

/// Reads a manifest file; paths are relative to its directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<FrameRecord>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    parse_manifest(&std::fs::read_to_string(path)?, path.parent().unwrap_or(Path::new(".")))
}
