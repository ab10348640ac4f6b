//! Clip samples assembled from tracks, and batches of them.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use xint_tensor::{Tensor, TensorError};

use super::annotation::{parse_annotations, NUM_KEYPOINTS};
use super::crop::{crop_and_resize, crop_region, normalize_keypoints, normalize_keypoints_in};
use super::split::split_dataset;
use super::synth::ANNOTATION_FILE;
use super::tracks::{build_tracks, extract_windows, Track, CLIP_LEN};
use crate::error::{Error, Result};

/// Reference frame of pose targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseFrame {
    /// Relative to the context-expanded crop the model sees.
    Crop,
    /// Relative to the full image.
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataOptions {
    /// `(h, w)` of every crop.
    pub input_size: (usize, usize),
    pub context: f64,
    pub stride: usize,
    pub speed_classes: usize,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub pose_frame: PoseFrame,
}

impl Default for DataOptions {
    fn default() -> Self {
        DataOptions {
            input_size: (64, 64),
            context: 0.1,
            stride: 8,
            speed_classes: 5,
            train_fraction: 0.7,
            split_seed: 0,
            pose_frame: PoseFrame::Crop,
        }
    }
}

/// One 16-frame training example.
#[derive(Debug, Clone)]
pub struct ClipSample {
    pub video_id: String,
    pub ped_id: String,
    pub start_frame: u64,
    /// `[16, 3, h, w]` in `[0, 1]`.
    pub frames: Tensor<f32>,
    pub label: u8,
    /// `[16, 36]` keypoint ratios.
    pub pose_targets: Tensor<f32>,
    /// `[16, 36]`, 0 where the keypoint is invisible.
    pub pose_mask: Tensor<f32>,
    /// `[16, S]` one-hot speed classes.
    pub speed_targets: Tensor<f32>,
}

impl ClipSample {
    pub fn check_invariants(&self, input_size: (usize, usize), speed_classes: usize) -> Result<()> {
        let (h, w) = input_size;
        let fail = |what: &str| Err(Error::Data(format!("clip {}@{}: {}", self.video_id, self.start_frame, what)));
        if self.frames.shape() != [CLIP_LEN, 3, h, w] {
            return fail("frames shape");
        }
        if !self.frames.data().iter().all(|v| (0.0..=1.0).contains(v)) {
            return fail("pixel outside [0, 1]");
        }
        if self.pose_targets.shape() != [CLIP_LEN, 2 * NUM_KEYPOINTS] || self.pose_mask.shape() != self.pose_targets.shape() {
            return fail("pose shape");
        }
        let pairs = self.pose_targets.data().iter().zip(self.pose_mask.data());
        for (&t, &m) in pairs {
            if !(0.0..=1.0).contains(&t) || (m != 0.0 && m != 1.0) || (m == 0.0 && t != 0.0) {
                return fail("pose target/mask");
            }
        }
        if self.speed_targets.shape() != [CLIP_LEN, speed_classes] {
            return fail("speed shape");
        }
        if !self.speed_targets.data().chunks(speed_classes).all(|row| row.iter().sum::<f32>() == 1.0 && row.iter().all(|&v| v == 0.0 || v == 1.0)) {
            return fail("speed targets not one-hot");
        }
        if self.label > 1 {
            return fail("label");
        }
        Ok(())
    }
}

/// Stacked inputs and targets of several clips.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[n, 16, 3, h, w]`.
    pub clips: Tensor<f32>,
    pub labels: Vec<usize>,
    /// `[n*16, 36]`, clip-major.
    pub pose: Tensor<f32>,
    pub pose_mask: Tensor<f32>,
    /// `[n*16, S]`.
    pub speed: Tensor<f32>,
}

#[derive(Debug, Clone, Default)]
pub struct ClipDataset {
    pub samples: Vec<ClipSample>,
}

impl ClipDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(crossing, not crossing)` clip counts.
    pub fn counts(&self) -> (usize, usize) {
        let crossing = self.samples.iter().filter(|s| s.label == 1).count();
        (crossing, self.samples.len() - crossing)
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let pick = |f: fn(&ClipSample) -> &Tensor<f32>| {
            let mut shape = f(&self.samples[indices[0]]).shape().to_vec();
            let data: Vec<f32> = indices.iter().flat_map(|&i| f(&self.samples[i]).data().iter().copied()).collect();
            shape[0] *= indices.len();
            Tensor::from_vec(&shape, data)
        };
        let frames = pick(|s| &s.frames);
        let mut clip_shape = vec![indices.len()];
        clip_shape.extend_from_slice(self.samples[indices[0]].frames.shape());
        Batch {
            clips: frames.reshape(&clip_shape).expect("clip frames stack"),
            labels: indices.iter().map(|&i| usize::from(self.samples[i].label)).collect(),
            pose: pick(|s| &s.pose_targets),
            pose_mask: pick(|s| &s.pose_mask),
            speed: pick(|s| &s.speed_targets),
        }
    }
}

/// Cuts clips out of tracks whose images live under `root`.
pub fn build_clips(root: &Path, tracks: &[Track], opts: &DataOptions) -> Result<ClipDataset> {
    let mut samples = Vec::new();
    for track in tracks {
        let windows = extract_windows(track, CLIP_LEN, opts.stride)?;
        if windows.is_empty() {
            continue;
        }
        let needed: BTreeSet<usize> = windows.iter().flat_map(|w| w.start..w.start + w.len).collect();
        let mut frames: Vec<Option<FrameData>> = vec![None; track.len()];
        for i in needed {
            frames[i] = load_frame(root, track, i, opts)?;
        }
        for w in windows {
            let slice = &frames[w.start..w.start + w.len];
            if slice.iter().any(Option::is_none) {
                log::warn!("skipping clip {}/{} at frame {}: degenerate crop", track.video_id, track.ped_id, track.records[w.start].frame);
                continue;
            }
            let cat = |f: fn(&FrameData) -> &[f32]| slice.iter().flat_map(|fd| f(fd.as_ref().unwrap()).iter().copied()).collect::<Vec<_>>();
            let (h, wd) = opts.input_size;
            samples.push(ClipSample {
                video_id: track.video_id.clone(),
                ped_id: track.ped_id.clone(),
                start_frame: track.records[w.start].frame,
                frames: Tensor::from_vec(&[CLIP_LEN, 3, h, wd], cat(|f| f.pixels.data())),
                label: w.label,
                pose_targets: Tensor::from_vec(&[CLIP_LEN, 2 * NUM_KEYPOINTS], cat(|f| &f.pose)),
                pose_mask: Tensor::from_vec(&[CLIP_LEN, 2 * NUM_KEYPOINTS], cat(|f| &f.mask)),
                speed_targets: Tensor::from_vec(&[CLIP_LEN, opts.speed_classes], cat(|f| &f.speed)),
            });
        }
    }
    Ok(ClipDataset { samples })
}

#[derive(Debug, Clone)]
struct FrameData {
    pixels: Tensor<f32>,
    pose: Vec<f32>,
    mask: Vec<f32>,
    speed: Vec<f32>,
}

fn load_frame(root: &Path, track: &Track, i: usize, opts: &DataOptions) -> Result<Option<FrameData>> {
    let r = &track.records[i];
    let path = root.join(&r.image);
    let img = image::open(&path)
        .map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))?
        .to_rgb8();
    if img.dimensions() != r.size {
        return Err(Error::Data(format!(
            "{}: image is {:?} but the annotation says {:?}",
            path.display(),
            img.dimensions(),
            r.size
        )));
    }
    let Some(pixels) = crop_and_resize(&img, r.bbox, opts.input_size, opts.context) else {
        return Ok(None);
    };
    let (pose, mask) = match opts.pose_frame {
        PoseFrame::Image => normalize_keypoints(&r.keypoints, r.size),
        PoseFrame::Crop => {
            let region = crop_region(r.bbox, opts.context, r.size).expect("crop succeeded");
            normalize_keypoints_in(&r.keypoints, region)
        }
    };
    let mut speed = vec![0.0; opts.speed_classes];
    speed[r.speed] = 1.0;
    Ok(Some(FrameData { pixels, pose, mask, speed }))
}

/// Train and test clips of one annotated dataset directory.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub train: ClipDataset,
    pub test: ClipDataset,
    pub train_videos: usize,
    pub test_videos: usize,
    pub warnings: usize,
}

impl SplitData {
    pub fn part(&self, split: Split) -> &ClipDataset {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!("unknown split {:?} (train|test)", other))),
        }
    }
}

/// Parses `dir/annotations.jsonl`, builds tracks, splits them by video and
/// cuts clips for both sides.
pub fn load_split(dir: &Path, opts: &DataOptions) -> Result<SplitData> {
    let ann = parse_annotations(&dir.join(ANNOTATION_FILE), opts.speed_classes)?;
    let tracks = build_tracks(ann.records)?;
    let (train, test) = split_dataset(tracks, opts.train_fraction, opts.split_seed)?;
    let videos = |t: &[Track]| t.iter().map(|t| t.video_id.as_str()).collect::<BTreeSet<_>>().len();
    Ok(SplitData {
        train_videos: videos(&train),
        test_videos: videos(&test),
        train: build_clips(dir, &train, opts)?,
        test: build_clips(dir, &test, opts)?,
        warnings: ann.warnings.len(),
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    bbox: Option<[f64; 4]>,
    bboxes: Option<Vec<[f64; 4]>>,
}

pub const CLIP_SIDECAR: &str = "bbox.json";

/// Reads a directory of 16 PNG frames (taken in file-name order) and a
/// `bbox.json` holding either one `"bbox"` for every frame or sixteen
/// `"bboxes"`. Returns `[1, 16, 3, h, w]`.
pub fn load_clip_dir(dir: &Path, opts: &DataOptions) -> Result<Tensor<f32>> {
    let mut frames: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    frames.sort();
    if frames.len() != CLIP_LEN {
        return Err(TensorError::Contract(format!("clip directory {} holds {} frames, expected {}", dir.display(), frames.len(), CLIP_LEN)).into());
    }
    let sidecar = dir.join(CLIP_SIDECAR);
    let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let parsed: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: sidecar.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let boxes = match (parsed.bbox, parsed.bboxes) {
        (Some(b), None) => vec![b; CLIP_LEN],
        (None, Some(bs)) if bs.len() == CLIP_LEN => bs,
        _ => return Err(Error::Data(format!("{}: needs \"bbox\" or {} \"bboxes\"", sidecar.display(), CLIP_LEN))),
    };
    let (h, w) = opts.input_size;
    let mut data = Vec::with_capacity(CLIP_LEN * 3 * h * w);
    for (path, bbox) in frames.iter().zip(boxes) {
        if bbox[0] >= bbox[2] || bbox[1] >= bbox[3] {
            return Err(Error::Data(format!("{}: bbox {:?} needs x1 < x2 and y1 < y2", sidecar.display(), bbox)));
        }
        let img = image::open(path).map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))?.to_rgb8();
        let crop = crop_and_resize(&img, bbox, opts.input_size, opts.context)
            .ok_or_else(|| Error::Data(format!("{}: bbox {:?} lies outside the image", path.display(), bbox)))?;
        data.extend_from_slice(crop.data());
    }
    Ok(Tensor::from_vec(&[1, CLIP_LEN, 3, h, w], data))
}
