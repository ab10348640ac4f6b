//! Line-delimited JSON annotation records.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Keypoints per pedestrian.
pub const NUM_KEYPOINTS: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

/// One pedestrian in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub video_id: String,
    pub frame: u64,
    pub ped_id: String,
    /// `[x1, y1, x2, y2]` in pixels.
    pub bbox: [f64; 4],
    pub keypoints: Vec<Keypoint>,
    pub cross: u8,
    pub speed: usize,
    /// Image path relative to the annotation file's directory.
    pub image: String,
    /// `(width, height)` in pixels.
    pub size: (u32, u32),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    video_id: String,
    frame: u64,
    ped_id: String,
    bbox: [f64; 4],
    keypoints: Vec<[f64; 3]>,
    cross: i64,
    speed: i64,
    image: String,
    size: [u32; 2],
}

impl From<&AnnotationRecord> for Line {
    fn from(r: &AnnotationRecord) -> Self {
        Line {
            video_id: r.video_id.clone(),
            frame: r.frame,
            ped_id: r.ped_id.clone(),
            bbox: r.bbox,
            keypoints: r.keypoints.iter().map(|k| [k.x, k.y, f64::from(u8::from(k.visible))]).collect(),
            cross: i64::from(r.cross),
            speed: r.speed as i64,
            image: r.image.clone(),
            size: [r.size.0, r.size.1],
        }
    }
}

/// Parsed records plus the warnings raised while clamping them.
#[derive(Debug, Clone, Default)]
pub struct Annotations {
    pub records: Vec<AnnotationRecord>,
    pub warnings: Vec<String>,
}

/// Reads and validates an annotation file. Malformed lines fail with their
/// line number; boxes and visible keypoints outside the image are clamped
/// and reported as warnings.
pub fn parse_annotations(path: &Path, speed_classes: usize) -> Result<Annotations> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotation_str(&text, path, speed_classes)
}

pub fn parse_annotation_str(text: &str, path: &Path, speed_classes: usize) -> Result<Annotations> {
    let mut out = Annotations::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fail = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let line: Line = serde_json::from_str(raw).map_err(|e| fail(e.to_string()))?;
        let record = validate(line, speed_classes, &mut |w| {
            let msg = format!("{}:{}: {}", path.display(), line_no, w);
            log::warn!("{}", msg);
            out.warnings.push(msg);
        })
        .map_err(fail)?;
        out.records.push(record);
    }
    Ok(out)
}

fn validate(line: Line, speed_classes: usize, warn: &mut dyn FnMut(String)) -> std::result::Result<AnnotationRecord, String> {
    let [w, h] = line.size;
    if w == 0 || h == 0 {
        return Err(format!("image size {}x{} must be positive", w, h));
    }
    let [x1, y1, x2, y2] = line.bbox;
    if line.bbox.iter().any(|v| !v.is_finite()) {
        return Err("bbox has non-finite coordinates".into());
    }
    if x1 >= x2 || y1 >= y2 {
        return Err(format!("bbox {:?} needs x1 < x2 and y1 < y2", line.bbox));
    }
    let (wf, hf) = (f64::from(w), f64::from(h));
    let clamped = [x1.clamp(0.0, wf), y1.clamp(0.0, hf), x2.clamp(0.0, wf), y2.clamp(0.0, hf)];
    if clamped != line.bbox {
        warn(format!("bbox {:?} clamped to image {}x{}", line.bbox, w, h));
    }
    if line.keypoints.len() != NUM_KEYPOINTS {
        return Err(format!("expected {} keypoints, got {}", NUM_KEYPOINTS, line.keypoints.len()));
    }
    let mut keypoints = Vec::with_capacity(NUM_KEYPOINTS);
    for (i, &[x, y, v]) in line.keypoints.iter().enumerate() {
        if !x.is_finite() || !y.is_finite() {
            return Err(format!("keypoint {} has non-finite coordinates", i));
        }
        let visible = match v {
            0.0 => false,
            1.0 => true,
            other => return Err(format!("keypoint {} visibility {} not in {{0, 1}}", i, other)),
        };
        let (cx, cy) = (x.clamp(0.0, wf), y.clamp(0.0, hf));
        if visible && (cx, cy) != (x, y) {
            warn(format!("visible keypoint {} ({}, {}) clamped to image", i, x, y));
        }
        let (x, y) = if visible { (cx, cy) } else { (x, y) };
        keypoints.push(Keypoint { x, y, visible });
    }
    let cross = match line.cross {
        0 | 1 => line.cross as u8,
        other => return Err(format!("cross label {} not in {{0, 1}}", other)),
    };
    if line.speed < 0 || line.speed as usize >= speed_classes {
        return Err(format!("speed class {} outside [0, {})", line.speed, speed_classes));
    }
    if line.video_id.is_empty() || line.ped_id.is_empty() || line.image.is_empty() {
        return Err("video_id, ped_id and image must be non-empty".into());
    }
    Ok(AnnotationRecord {
        video_id: line.video_id,
        frame: line.frame,
        ped_id: line.ped_id,
        bbox: clamped,
        keypoints,
        cross,
        speed: line.speed as usize,
        image: line.image,
        size: (w, h),
    })
}

/// Writes one JSON object per record and line.
pub fn write_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(&Line::from(r)).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(out, "{}", line).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
