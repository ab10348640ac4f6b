//! Train/test split by video.

use std::collections::BTreeSet;

use sha2::{Digest, Sha256};

use super::tracks::Track;
use crate::error::{Error, Result};

/// Deterministic position of a video in `[0, 1)` for a given seed.
pub fn video_hash_unit(video_id: &str, seed: u64) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(video_id.as_bytes());
    let digest = h.finalize();
    let word = u64::from_le_bytes(digest[..8].try_into().expect("digest holds 8 bytes"));
    (word >> 11) as f64 / (1u64 << 53) as f64
}

/// Ranks videos by their seeded hash and assigns the first
/// `round(train_fraction * videos)` to the train side (at least one video on
/// each side when there are two or more).
pub fn split_dataset(tracks: Vec<Track>, train_fraction: f64, seed: u64) -> Result<(Vec<Track>, Vec<Track>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Validation(format!("train fraction {} outside (0, 1)", train_fraction)));
    }
    let videos: BTreeSet<&str> = tracks.iter().map(|t| t.video_id.as_str()).collect();
    let mut ranked: Vec<(f64, &str)> = videos.into_iter().map(|v| (video_hash_unit(v, seed), v)).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
    let n = ranked.len();
    let mut k = (train_fraction * n as f64).round() as usize;
    if n >= 2 {
        k = k.clamp(1, n - 1);
    }
    let train: BTreeSet<String> = ranked[..k.min(n)].iter().map(|(_, v)| v.to_string()).collect();
    Ok(tracks.into_iter().partition(|t| train.contains(&t.video_id)))
}
