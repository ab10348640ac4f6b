//! Per-pedestrian tracks and fixed-length windows over them.

use std::collections::BTreeMap;

use super::annotation::AnnotationRecord;
use crate::error::{Error, Result};

/// Frames per clip.
pub const CLIP_LEN: usize = 16;

/// A contiguous run of frames of one pedestrian.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub video_id: String,
    pub ped_id: String,
    /// Consecutive frame indices, ascending.
    pub records: Vec<AnnotationRecord>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first_frame(&self) -> u64 {
        self.records[0].frame
    }
}

/// Groups records by `(video_id, ped_id)`, orders them by frame and splits
/// each group wherever a frame is missing. The result is sorted by
/// `(video_id, ped_id, first frame)` whatever the input order.
pub fn build_tracks(records: Vec<AnnotationRecord>) -> Result<Vec<Track>> {
    let mut groups: BTreeMap<(String, String), Vec<AnnotationRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.video_id.clone(), r.ped_id.clone())).or_default().push(r);
    }
    let mut tracks = Vec::new();
    for ((video_id, ped_id), mut recs) in groups {
        recs.sort_by_key(|r| r.frame);
        if let Some(w) = recs.windows(2).find(|w| w[0].frame == w[1].frame) {
            return Err(Error::Data(format!(
                "duplicate annotation for video {}, frame {}, pedestrian {}",
                video_id, w[0].frame, ped_id
            )));
        }
        let mut run: Vec<AnnotationRecord> = Vec::new();
        for r in recs {
            if run.last().is_some_and(|prev| prev.frame + 1 != r.frame) {
                tracks.push(Track {
                    video_id: video_id.clone(),
                    ped_id: ped_id.clone(),
                    records: std::mem::take(&mut run),
                });
            }
            run.push(r);
        }
        if !run.is_empty() {
            tracks.push(Track {
                video_id: video_id.clone(),
                ped_id: ped_id.clone(),
                records: run,
            });
        }
    }
    Ok(tracks)
}

/// A window of `len` frames starting at `start` within a track.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub len: usize,
    /// Crossing label of the window's last frame.
    pub label: u8,
}

/// Windows at `0, stride, 2*stride, ...` that fit entirely in the track.
pub fn extract_windows(track: &Track, len: usize, stride: usize) -> Result<Vec<Window>> {
    if stride == 0 || len == 0 {
        return Err(Error::Validation(format!("window length {} and stride {} must be positive", len, stride)));
    }
    Ok((0..)
        .map(|k| k * stride)
        .take_while(|&start| start + len <= track.len())
        .map(|start| Window {
            start,
            len,
            label: track.records[start + len - 1].cross,
        })
        .collect())
}
