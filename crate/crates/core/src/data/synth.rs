//! Synthetic street scenes with one walking pedestrian per video.
//!
//! Crossing pedestrians walk horizontally across a vertical road band and
//! are seen in profile. The others walk along the sidewalk (vertically in
//! the image) or stand, seen from the front. The ego vehicle's speed
//! profile scrolls the background. The "hard" profile weakens every cue and
//! only correlates the body view with the label.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use xint_tensor::Rng;

use super::annotation::{write_annotations, AnnotationRecord, Keypoint, NUM_KEYPOINTS};
use crate::error::{Error, Result};

pub const ANNOTATION_FILE: &str = "annotations.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Hard,
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Difficulty::Easy => "easy",
            Difficulty::Hard => "hard",
        })
    }
}

impl FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "hard" => Ok(Difficulty::Hard),
            other => Err(Error::Validation(format!("unknown difficulty {:?} (easy|hard)", other))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub tracks: usize,
    pub seed: u64,
    /// `(width, height)` of each frame.
    pub image_size: (u32, u32),
    pub difficulty: Difficulty,
    pub frames: usize,
    pub speed_classes: usize,
}

impl SynthConfig {
    pub fn new(tracks: usize, seed: u64, difficulty: Difficulty) -> Self {
        SynthConfig {
            tracks,
            seed,
            image_size: (128, 96),
            difficulty,
            frames: 24,
            speed_classes: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.image_size;
        if w < 64 || h < 48 {
            return Err(Error::Validation(format!("synthetic frames must be at least 64x48, got {}x{}", w, h)));
        }
        if self.frames < 2 || self.frames > 200 {
            return Err(Error::Validation(format!("frames per track {} outside [2, 200]", self.frames)));
        }
        if self.speed_classes == 0 {
            return Err(Error::Validation("speed_classes must be positive".into()));
        }
        Ok(())
    }
}

/// Writes `annotations.jsonl` and `images/<video>/<frame>.png` under `out`
/// and returns the records.
pub fn generate_synthetic(out: &Path, cfg: &SynthConfig) -> Result<Vec<AnnotationRecord>> {
    cfg.validate()?;
    let labels = balanced_labels(cfg);
    let mut records = Vec::with_capacity(cfg.tracks * cfg.frames);
    for (i, &label) in labels.iter().enumerate() {
        let video = format!("video_{:04}", i);
        let dir = out.join("images").join(&video);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (record, image) in render_track(cfg, i, label) {
            let path = out.join(&record.image);
            image
                .save_with_format(&path, image::ImageFormat::Png)
                .map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))?;
            records.push(record);
        }
    }
    write_annotations(&out.join(ANNOTATION_FILE), &records)?;
    Ok(records)
}

/// Annotations only, without rendering or writing images.
pub fn synthetic_annotations(cfg: &SynthConfig) -> Result<Vec<AnnotationRecord>> {
    cfg.validate()?;
    let labels = balanced_labels(cfg);
    Ok(labels
        .iter()
        .enumerate()
        .flat_map(|(i, &label)| {
            let scene = Scene::sample(cfg, i, label);
            (0..cfg.frames).map(move |t| scene.record(t)).collect::<Vec<_>>()
        })
        .collect())
}

/// Half the tracks crossing (the odd one out not crossing), in shuffled
/// order.
fn balanced_labels(cfg: &SynthConfig) -> Vec<u8> {
    let mut labels: Vec<u8> = (0..cfg.tracks).map(|i| u8::from(i < cfg.tracks / 2)).collect();
    Rng::new(cfg.seed).split("labels").shuffle(&mut labels);
    labels
}

fn render_track(cfg: &SynthConfig, index: usize, label: u8) -> Vec<(AnnotationRecord, RgbImage)> {
    let scene = Scene::sample(cfg, index, label);
    (0..cfg.frames).map(|t| (scene.record(t), scene.render(t))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum View {
    Front,
    /// Facing +x (1.0) or -x (-1.0).
    Profile(f64),
}

/// Everything needed to draw one video.
#[derive(Debug, Clone)]
struct Scene {
    video: String,
    w: f64,
    h: f64,
    label: u8,
    speed_class: usize,
    road: (f64, f64),
    /// Centre x and foot y at frame 0, and their per-frame velocities.
    start: (f64, f64),
    velocity: (f64, f64),
    height: f64,
    view: View,
    walking: bool,
    gait_phase: f64,
    jitter: Vec<[f64; 4]>,
    texture_seed: u64,
    asphalt: f64,
    pavement: f64,
    building: [f64; 3],
    shirt: [f64; 3],
    pants: [f64; 3],
    skin: [f64; 3],
    brightness: f64,
    noise: f64,
}

const SKIN: [[f64; 3]; 4] = [[236.0, 200.0, 170.0], [200.0, 150.0, 110.0], [150.0, 100.0, 70.0], [95.0, 65.0, 45.0]];

impl Scene {
    fn sample(cfg: &SynthConfig, index: usize, label: u8) -> Scene {
        let mut rng = Rng::new(cfg.seed).split(&format!("track{}", index));
        let hard = cfg.difficulty == Difficulty::Hard;
        let (w, h) = (f64::from(cfg.image_size.0), f64::from(cfg.image_size.1));
        let n = cfg.frames as f64 - 1.0;
        let road = if hard { (0.15 * w, 0.85 * w) } else { (0.3 * w, 0.7 * w) };
        let height = rng.uniform_range(0.38, 0.46) * h;
        let half_w = 0.225 * height;
        let crossing = label == 1;

        let (start, velocity, walking) = if crossing {
            let dir = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
            let max_travel = 0.55 * w;
            let (lo, hi): (f64, f64) = if hard { (0.6, 1.5) } else { (1.5, 2.5) };
            let vx_max = (max_travel / n).min(hi);
            let vx = rng.uniform_range(lo.min(vx_max), vx_max);
            let x0 = if dir > 0.0 {
                rng.uniform_range(0.18, 0.3) * w
            } else {
                rng.uniform_range(0.7, 0.82) * w
            };
            let foot = rng.uniform_range(0.62, 0.92) * h;
            ((x0, foot), (dir * vx, rng.uniform_range(-0.2, 0.2)), true)
        } else {
            let on_road = hard && rng.bernoulli(0.5);
            let side = rng.bernoulli(0.5);
            let x0 = match (on_road, side) {
                (true, false) => rng.uniform_range(road.0 + half_w, road.0 + 0.12 * w),
                (true, true) => rng.uniform_range(road.1 - 0.12 * w, road.1 - half_w),
                (false, false) => rng.uniform_range(0.08, 0.22) * w,
                (false, true) => rng.uniform_range(0.78, 0.92) * w,
            };
            let walking = rng.bernoulli(0.6);
            let vx_noise = if hard { 0.5 } else { 0.2 };
            let vy = if walking {
                let max_vy = (0.25 * h / n).min(1.2);
                let vy = rng.uniform_range(0.5f64.min(max_vy), max_vy);
                if rng.bernoulli(0.5) {
                    vy
                } else {
                    -vy
                }
            } else {
                0.0
            };
            let foot_lo = 0.62 * h + vy.min(0.0).abs() * n;
            let foot_hi = 0.92 * h - vy.max(0.0) * n;
            let foot = rng.uniform_range(foot_lo, foot_hi.max(foot_lo));
            ((x0, foot), (rng.uniform_range(-vx_noise, vx_noise), vy), walking)
        };
        let view_matches = !hard || rng.bernoulli(0.8);
        let view = match (crossing, view_matches) {
            (true, true) | (false, false) => {
                let facing = if velocity.0 != 0.0 && crossing { velocity.0.signum() } else if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
                View::Profile(facing)
            }
            _ => View::Front,
        };
        let jitter_amp = if hard { 1.0 } else { 0.0 };
        let jitter = (0..cfg.frames)
            .map(|_| std::array::from_fn(|_| rng.uniform_range(-jitter_amp, jitter_amp)))
            .collect();
        let mut color = |lo: f64, hi: f64| -> [f64; 3] { std::array::from_fn(|_| rng.uniform_range(lo, hi)) };
        let (shirt, pants) = if hard {
            (color(70.0, 170.0), color(60.0, 140.0))
        } else {
            (color(40.0, 255.0), color(20.0, 120.0))
        };
        let building = color(90.0, 200.0);
        Scene {
            video: format!("video_{:04}", index),
            w,
            h,
            label,
            speed_class: rng.below(cfg.speed_classes),
            road,
            start,
            velocity,
            height,
            view,
            walking,
            gait_phase: rng.uniform_range(0.0, std::f64::consts::TAU),
            jitter,
            texture_seed: rng.next_u64(),
            asphalt: rng.uniform_range(55.0, 85.0),
            pavement: if hard { rng.uniform_range(100.0, 150.0) } else { rng.uniform_range(170.0, 205.0) },
            building,
            shirt,
            pants,
            skin: SKIN[rng.below(SKIN.len())],
            brightness: if hard { rng.uniform_range(0.7, 1.2) } else { 1.0 },
            noise: if hard { 14.0 } else { 4.0 },
        }
    }

    /// Ego speed in background pixels per frame.
    fn ego_speed(&self, t: usize, frames: usize) -> f64 {
        let s = t as f64 / (frames.max(2) - 1) as f64;
        match self.speed_class % 5 {
            0 => 0.0,
            1 => 1.0,
            2 => 3.0,
            3 => 3.0 * (1.0 - s),
            _ => 3.0 * s,
        }
    }

    fn scroll(&self, t: usize) -> f64 {
        let frames = self.jitter.len();
        (0..t).map(|k| self.ego_speed(k, frames)).sum()
    }

    /// True (unjittered) box at frame `t`.
    fn body_box(&self, t: usize) -> [f64; 4] {
        let cx = self.start.0 + self.velocity.0 * t as f64;
        let foot = self.start.1 + self.velocity.1 * t as f64;
        let half_w = 0.225 * self.height;
        [cx - half_w, foot - self.height, cx + half_w, foot]
    }

    fn keypoints(&self, t: usize) -> Vec<Keypoint> {
        let [x1, y1, x2, y2] = self.body_box(t);
        let phase = if self.walking { self.gait_phase + 0.6 * t as f64 } else { 0.0 };
        let swing = phase.sin();
        let plan = body_plan(self.view, if self.walking { swing } else { 0.0 });
        plan.iter()
            .map(|&(u, v, visible)| Keypoint {
                x: x1 + u * (x2 - x1),
                y: y1 + v * (y2 - y1),
                visible,
            })
            .collect()
    }

    fn record(&self, t: usize) -> AnnotationRecord {
        let b = self.body_box(t);
        let j = self.jitter[t];
        let (w, h) = (self.w, self.h);
        let bbox = [
            (b[0] + j[0]).clamp(0.0, w),
            (b[1] + j[1]).clamp(0.0, h),
            (b[2] + j[2]).clamp(0.0, w),
            (b[3] + j[3]).clamp(0.0, h),
        ];
        AnnotationRecord {
            video_id: self.video.clone(),
            frame: t as u64,
            ped_id: "ped_0".into(),
            bbox,
            keypoints: self
                .keypoints(t)
                .into_iter()
                .map(|k| Keypoint {
                    x: k.x.clamp(0.0, w),
                    y: k.y.clamp(0.0, h),
                    visible: k.visible,
                })
                .collect(),
            cross: self.label,
            speed: self.speed_class,
            image: format!("images/{}/{:04}.png", self.video, t),
            size: (self.w as u32, self.h as u32),
        }
    }

    fn background(&self, x: u32, y: u32, scroll: f64) -> [f64; 3] {
        let xf = f64::from(x) + 0.5;
        let wy = f64::from(y) - scroll;
        let row = wy.floor() as i64;
        let grain = (hash3(self.texture_seed, u64::from(x), row as u64) - 0.5) * 12.0;
        if xf >= self.road.0 && xf < self.road.1 {
            let centre = 0.5 * (self.road.0 + self.road.1);
            if (xf - centre).abs() < 1.5 && row.rem_euclid(16) < 8 {
                return [225.0; 3];
            }
            let v = self.asphalt + grain;
            return [v, v, v + 4.0];
        }
        if f64::from(y) < 0.3 * self.h {
            let window = (x / 6 + (row.rem_euclid(1 << 20) as u32) / 8) % 2 == 0 && x % 6 > 1 && row.rem_euclid(8) > 2;
            let base = if window { [60.0, 70.0, 90.0] } else { self.building };
            return base.map(|c| c + grain);
        }
        let tile = x % 8 == 0 || row.rem_euclid(8) == 0;
        let v = self.pavement + grain - if tile { 30.0 } else { 0.0 };
        [v, v * 0.97, v * 0.92]
    }

    fn render(&self, t: usize) -> RgbImage {
        let (w, h) = (self.w as u32, self.h as u32);
        let scroll = self.scroll(t);
        let mut canvas: Vec<[f64; 3]> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| self.background(x, y, scroll)).collect();
        self.draw_pedestrian(&mut canvas, t);
        let mut img = RgbImage::new(w, h);
        for (i, p) in img.pixels_mut().enumerate() {
            let (x, y) = (i as u32 % w, i as u32 / w);
            let n = (hash3(self.texture_seed ^ 0x9e37_79b9, u64::from(x), u64::from(y) + 1000 * t as u64) - 0.5) * 2.0 * self.noise;
            *p = Rgb(canvas[i].map(|c| (c * self.brightness + n).round().clamp(0.0, 255.0) as u8));
        }
        img
    }

    fn draw_pedestrian(&self, canvas: &mut [[f64; 3]], t: usize) {
        let k = self.keypoints(t);
        let hp = self.height;
        let limb = 0.05 * hp;
        let torso = match self.view {
            View::Front => 0.18 * hp,
            View::Profile(_) => 0.11 * hp,
        };
        let mid = |a: usize, b: usize| ((k[a].x + k[b].x) / 2.0, (k[a].y + k[b].y) / 2.0);
        let p = |i: usize| (k[i].x, k[i].y);
        let hips = mid(8, 11);
        let darker = self.shirt.map(|c| c * 0.8);
        // Back limbs first so the near side covers them in profile.
        let segments: [((f64, f64), (f64, f64), f64, [f64; 3]); 13] = [
            (p(11), p(12), limb, self.pants),
            (p(12), p(13), limb, self.pants),
            (p(5), p(6), limb, darker),
            (p(6), p(7), limb, darker),
            (p(8), p(9), limb, self.pants),
            (p(9), p(10), limb, self.pants),
            (p(1), hips, torso, self.shirt),
            (p(8), p(11), limb * 1.5, self.pants),
            (p(2), p(5), limb * 1.5, self.shirt),
            (p(2), p(3), limb, darker),
            (p(3), p(4), limb, darker),
            (p(1), p(0), limb, self.skin),
            (p(4), p(4), limb * 0.8, self.skin),
        ];
        let (w, h) = (self.w as usize, self.h as usize);
        for (a, b, thickness, color) in segments {
            draw_segment(canvas, w, h, a, b, thickness, color);
        }
        let head = (k[0].x * 0.5 + k[1].x * 0.5, k[0].y * 0.7 + k[1].y * 0.3 - 0.02 * hp);
        draw_segment(canvas, w, h, head, head, 0.17 * hp, self.skin);
    }
}

/// Keypoints as `(u, v, visible)` fractions of the body box, for a gait
/// swing in `[-1, 1]`. Order: nose, neck, right shoulder/elbow/wrist, left
/// shoulder/elbow/wrist, right hip/knee/ankle, left hip/knee/ankle, right
/// eye, left eye, right ear, left ear.
fn body_plan(view: View, swing: f64) -> [(f64, f64, bool); NUM_KEYPOINTS] {
    match view {
        View::Front => {
            let lift = 0.03 * swing;
            [
                (0.5, 0.10, true),
                (0.5, 0.22, true),
                (0.28, 0.24, true),
                (0.22, 0.38, true),
                (0.20, 0.52 - 0.02 * swing, true),
                (0.72, 0.24, true),
                (0.78, 0.38, true),
                (0.80, 0.52 + 0.02 * swing, true),
                (0.40, 0.55, true),
                (0.39, 0.75 - lift.max(0.0), true),
                (0.38, 0.97 - lift.max(0.0), true),
                (0.60, 0.55, true),
                (0.61, 0.75 - (-lift).max(0.0), true),
                (0.62, 0.97 - (-lift).max(0.0), true),
                (0.44, 0.08, true),
                (0.56, 0.08, true),
                (0.38, 0.09, true),
                (0.62, 0.09, true),
            ]
        }
        View::Profile(facing) => {
            let u = |d: f64| 0.5 + facing * d;
            // Facing +x shows the body's left side to the camera.
            let left_near = facing > 0.0;
            [
                (u(0.14), 0.10, true),
                (u(0.0), 0.22, true),
                (u(0.0), 0.24, !left_near),
                (u(-0.12 * swing), 0.38, true),
                (u(-0.22 * swing), 0.50, true),
                (u(0.0), 0.24, left_near),
                (u(0.12 * swing), 0.38, true),
                (u(0.22 * swing), 0.50, true),
                (u(0.0), 0.55, true),
                (u(0.14 * swing), 0.75, true),
                (u(0.30 * swing), 0.97, true),
                (u(0.0), 0.55, true),
                (u(-0.14 * swing), 0.75, true),
                (u(-0.30 * swing), 0.97, true),
                (u(0.08), 0.08, !left_near),
                (u(0.08), 0.08, left_near),
                (u(-0.04), 0.09, !left_near),
                (u(-0.04), 0.09, left_near),
            ]
        }
    }
}

/// Paints every pixel whose centre lies within `thickness / 2` of segment
/// `a`-`b`.
fn draw_segment(canvas: &mut [[f64; 3]], w: usize, h: usize, a: (f64, f64), b: (f64, f64), thickness: f64, color: [f64; 3]) {
    let r = thickness / 2.0;
    let x_lo = (a.0.min(b.0) - r).floor().max(0.0) as usize;
    let x_hi = ((a.0.max(b.0) + r).ceil() as usize).min(w);
    let y_lo = (a.1.min(b.1) - r).floor().max(0.0) as usize;
    let y_hi = ((a.1.max(b.1) + r).ceil() as usize).min(h);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let s = if len2 > 0.0 { (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let (ex, ey) = (a.0 + s * dx - px, a.1 + s * dy - py);
            if ex * ex + ey * ey <= r * r {
                canvas[y * w + x] = color;
            }
        }
    }
}

/// Uniform value in `[0, 1)` from three integers.
fn hash3(seed: u64, a: u64, b: u64) -> f64 {
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}
