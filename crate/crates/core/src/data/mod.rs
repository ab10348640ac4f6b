//! Annotation ingestion, tracks and clips, crops, splits and the synthetic
//! data generator.

mod annotation;
mod crop;
mod dataset;
mod split;
mod synth;
mod tracks;

pub use annotation::{parse_annotation_str, parse_annotations, write_annotations, AnnotationRecord, Annotations, Keypoint, NUM_KEYPOINTS};
pub use crop::{crop_and_resize, crop_region, normalize_keypoints, normalize_keypoints_in};
pub use dataset::{build_clips, load_clip_dir, load_split, Batch, ClipDataset, ClipSample, DataOptions, PoseFrame, Split, SplitData, CLIP_SIDECAR};
pub use split::{split_dataset, video_hash_unit};
pub use synth::{generate_synthetic, synthetic_annotations, Difficulty, SynthConfig, ANNOTATION_FILE};
pub use tracks::{build_tracks, extract_windows, Track, Window, CLIP_LEN};
