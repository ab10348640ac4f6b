//! Cropping pedestrians out of frames and normalizing their keypoints.

use image::RgbImage;
use xint_tensor::Tensor;

use super::annotation::Keypoint;

/// The box grown by `context` of its width (height) on the left and right
/// (top and bottom), clamped to the image. `None` when nothing of it is
/// left inside the image.
pub fn crop_region(bbox: [f64; 4], context: f64, size: (u32, u32)) -> Option<[f64; 4]> {
    let [x1, y1, x2, y2] = bbox;
    let (dx, dy) = ((x2 - x1) * context, (y2 - y1) * context);
    let (w, h) = (f64::from(size.0), f64::from(size.1));
    let r = [
        (x1 - dx).clamp(0.0, w),
        (y1 - dy).clamp(0.0, h),
        (x2 + dx).clamp(0.0, w),
        (y2 + dy).clamp(0.0, h),
    ];
    (r[2] > r[0] && r[3] > r[1]).then_some(r)
}

/// Crops the context-expanded box and resizes it bilinearly to
/// `out = (h, w)`. Pixel centres sit at half-integer coordinates. Returns
/// `[3, h, w]` in `[0, 1]`, or `None` (with a warning) for a box with no
/// area inside the image.
pub fn crop_and_resize(image: &RgbImage, bbox: [f64; 4], out: (usize, usize), context: f64) -> Option<Tensor<f32>> {
    let Some([rx1, ry1, rx2, ry2]) = crop_region(bbox, context, image.dimensions()) else {
        log::warn!("bbox {:?} has no area inside the image; sample skipped", bbox);
        return None;
    };
    let (oh, ow) = out;
    let (iw, ih) = image.dimensions();
    let raw = image.as_raw();
    let (sx, sy) = ((rx2 - rx1) / ow as f64, (ry2 - ry1) / oh as f64);
    let taps = |start: f64, step: f64, n: usize, limit: u32| -> Vec<(usize, usize, f64)> {
        (0..n)
            .map(|i| {
                let p = (start + (i as f64 + 0.5) * step - 0.5).clamp(0.0, f64::from(limit - 1));
                let lo = p.floor() as usize;
                let hi = (lo + 1).min(limit as usize - 1);
                (lo, hi, p - lo as f64)
            })
            .collect()
    };
    let xs = taps(rx1, sx, ow, iw);
    let ys = taps(ry1, sy, oh, ih);
    let mut data = vec![0.0f32; 3 * oh * ow];
    let px = |x: usize, y: usize, c: usize| f64::from(raw[(y * iw as usize + x) * 3 + c]);
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..3 {
                let top = px(x0, y0, c) * (1.0 - fx) + px(x1, y0, c) * fx;
                let bottom = px(x0, y1, c) * (1.0 - fx) + px(x1, y1, c) * fx;
                let v = (top * (1.0 - fy) + bottom * fy) / 255.0;
                data[(c * oh + oy) * ow + ox] = v as f32;
            }
        }
    }
    Some(Tensor::from_vec(&[3, oh, ow], data))
}

/// Keypoint targets as `(x / W, y / H)` pairs interleaved, with a mask
/// that is 0 for invisible points (whose targets are 0).
pub fn normalize_keypoints(keypoints: &[Keypoint], size: (u32, u32)) -> (Vec<f32>, Vec<f32>) {
    normalize_keypoints_in(keypoints, [0.0, 0.0, f64::from(size.0), f64::from(size.1)])
}

/// Keypoint targets relative to a region `[x1, y1, x2, y2]` (such as the
/// crop the model sees), clamped to `[0, 1]`.
pub fn normalize_keypoints_in(keypoints: &[Keypoint], region: [f64; 4]) -> (Vec<f32>, Vec<f32>) {
    let [x1, y1, x2, y2] = region;
    let mut targets = Vec::with_capacity(2 * keypoints.len());
    let mut mask = Vec::with_capacity(2 * keypoints.len());
    for k in keypoints {
        if k.visible {
            targets.push(((k.x - x1) / (x2 - x1)).clamp(0.0, 1.0) as f32);
            targets.push(((k.y - y1) / (y2 - y1)).clamp(0.0, 1.0) as f32);
            mask.extend([1.0, 1.0]);
        } else {
            targets.extend([0.0, 0.0]);
            mask.extend([0.0, 0.0]);
        }
    }
    (targets, mask)
}
