use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use xint_core::data::*;
use xint_core::Error;
use xint_tensor::{Rng, Tape, Tensor};

fn record(video: &str, ped: &str, frame: u64, cross: u8) -> AnnotationRecord {
    AnnotationRecord {
        video_id: video.into(),
        frame,
        ped_id: ped.into(),
        bbox: [1.0, 1.0, 5.0, 9.0],
        keypoints: vec![Keypoint { x: 2.0, y: 3.0, visible: true }; NUM_KEYPOINTS],
        cross,
        speed: 0,
        image: format!("{}/{}.png", video, frame),
        size: (10, 10),
    }
}

/// Random annotations of a few pedestrians with holes in their frame runs.
fn random_records(rng: &mut Rng) -> Vec<AnnotationRecord> {
    let mut out = Vec::new();
    for v in 0..rng.below(4) + 1 {
        for p in 0..rng.below(3) + 1 {
            for f in 0..rng.below(60) as u64 {
                if rng.bernoulli(0.9) {
                    out.push(record(&format!("v{}", v), &format!("p{}", p), f, rng.bernoulli(0.5) as u8));
                }
            }
        }
    }
    rng.shuffle(&mut out);
    out
}

#[test]
fn track_count_matches_brute_force_run_count() {
    let mut rng = Rng::new(1);
    for _ in 0..50 {
        let recs = random_records(&mut rng);
        let mut frames: BTreeMap<(String, String), BTreeSet<u64>> = BTreeMap::new();
        for r in &recs {
            frames.entry((r.video_id.clone(), r.ped_id.clone())).or_default().insert(r.frame);
        }
        // A run starts at every frame whose predecessor is absent.
        let runs: usize = frames
            .values()
            .map(|fs| fs.iter().filter(|&&f| f == 0 || !fs.contains(&(f - 1))).count())
            .sum();
        let tracks = build_tracks(recs).unwrap();
        assert_eq!(tracks.len(), runs);
        for t in &tracks {
            assert!(t.records.windows(2).all(|w| w[0].frame + 1 == w[1].frame));
            assert!(t.records.iter().all(|r| r.video_id == t.video_id && r.ped_id == t.ped_id));
        }
    }
}

#[test]
fn window_count_matches_enumeration_and_ignores_record_order() {
    let mut rng = Rng::new(2);
    for _ in 0..30 {
        let recs = random_records(&mut rng);
        let stride = rng.below(12) + 1;
        let tracks = build_tracks(recs.clone()).unwrap();
        let mut enumerated = 0;
        for t in &tracks {
            for start in 0..t.len() {
                if start % stride == 0 && start + 16 <= t.len() {
                    enumerated += 1;
                }
            }
        }
        let windows = |ts: &[Track]| -> Vec<(String, String, u64, u8)> {
            ts.iter()
                .flat_map(|t| {
                    extract_windows(t, 16, stride)
                        .unwrap()
                        .into_iter()
                        .map(|w| (t.video_id.clone(), t.ped_id.clone(), t.records[w.start].frame, w.label))
                })
                .collect()
        };
        let a = windows(&tracks);
        assert_eq!(a.len(), enumerated);
        let mut shuffled = recs;
        rng.shuffle(&mut shuffled);
        assert_eq!(windows(&build_tracks(shuffled).unwrap()), a);
    }
}

#[test]
fn bilinear_resize_preserves_a_linear_ramp() {
    // Channel 0 rises 2 per column, channel 1 rises 3 per row.
    let mut img = RgbImage::new(100, 80);
    for (x, y, p) in img.enumerate_pixels_mut() {
        *p = Rgb([(2 * x) as u8, (3 * y) as u8, 9]);
    }
    let bbox = [20.0, 15.0, 60.0, 55.0];
    let (oh, ow) = (23, 17);
    let t = crop_and_resize(&img, bbox, (oh, ow), 0.1).unwrap();
    // Sample position of output pixel i in pixel-index space.
    let pos = |lo: f64, hi: f64, n: usize, i: usize| lo + (i as f64 + 0.5) * (hi - lo) / n as f64 - 0.5;
    let (rx1, ry1, rx2, ry2) = (16.0, 11.0, 64.0, 59.0);
    for y in 0..oh {
        for x in 0..ow {
            let want_r = 2.0 * pos(rx1, rx2, ow, x) / 255.0;
            let want_g = 3.0 * pos(ry1, ry2, oh, y) / 255.0;
            assert!((f64::from(t.data()[y * ow + x]) - want_r).abs() < 1e-6);
            assert!((f64::from(t.data()[oh * ow + y * ow + x]) - want_g).abs() < 1e-6);
        }
    }
}

#[test]
fn invisible_keypoints_do_not_affect_the_pose_loss() {
    let mut kps = vec![Keypoint { x: 30.0, y: 40.0, visible: true }; NUM_KEYPOINTS];
    kps[4].visible = false;
    let pred = Tensor::from_vec(&[1, 36], (0..36).map(|i| 0.1 + 0.02 * i as f64).collect());
    let loss = |kps: &[Keypoint]| {
        let (t, m) = normalize_keypoints(kps, (100, 80));
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(pred.clone());
        let target = Tensor::from_vec(&[1, 36], t.iter().map(|&v| f64::from(v)).collect());
        let mask = Tensor::from_vec(&[1, 36], m.iter().map(|&v| f64::from(v)).collect());
        let l = tape.binary_cross_entropy(p, &target, Some(&mask)).unwrap();
        tape.value(l).item()
    };
    let base = loss(&kps);
    for (x, y) in [(0.0, 0.0), (99.0, 1.0), (-50.0, 500.0)] {
        kps[4].x = x;
        kps[4].y = y;
        assert_eq!(loss(&kps), base);
    }
    kps[5].x = 70.0;
    assert_ne!(loss(&kps), base);
}

fn tracks_of(videos: usize) -> Vec<Track> {
    (0..videos)
        .flat_map(|v| {
            (0..2).map(move |p| Track {
                video_id: format!("video_{}", v),
                ped_id: format!("p{}", p),
                records: vec![record(&format!("video_{}", v), &format!("p{}", p), 0, 0)],
            })
        })
        .collect()
}

#[test]
fn split_keeps_videos_whole_and_is_reproducible() {
    let (train, test) = split_dataset(tracks_of(80), 0.7, 11).unwrap();
    let tv: BTreeSet<_> = train.iter().map(|t| t.video_id.clone()).collect();
    let sv: BTreeSet<_> = test.iter().map(|t| t.video_id.clone()).collect();
    assert!(tv.is_disjoint(&sv));
    assert_eq!(tv.len() + sv.len(), 80);
    let (again, _) = split_dataset(tracks_of(80), 0.7, 11).unwrap();
    assert_eq!(again, train);
    assert!(split_dataset(tracks_of(3), 1.0, 0).is_err());
    assert!(split_dataset(tracks_of(3), 0.0, 0).is_err());
}

#[test]
fn split_fraction_tracks_the_target() {
    for seed in 0..10 {
        for (videos, fraction) in [(50, 0.7), (200, 0.5), (120, 0.8)] {
            let (train, _) = split_dataset(tracks_of(videos), fraction, seed).unwrap();
            let got = train.len() as f64 / (2 * videos) as f64;
            assert!((got - fraction).abs() <= 0.1, "seed {} videos {}: {}", seed, videos, got);
        }
    }
}

fn synth(dir: &Path, tracks: usize, seed: u64, d: Difficulty) -> Vec<AnnotationRecord> {
    generate_synthetic(dir, &SynthConfig::new(tracks, seed, d)).unwrap()
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn synthetic_output_is_bit_identical_and_round_trips() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let recs = synth(a.path(), 6, 7, Difficulty::Hard);
    synth(b.path(), 6, 7, Difficulty::Hard);
    let (ba, bb) = (dir_bytes(a.path()), dir_bytes(b.path()));
    assert_eq!(ba.len(), 6 * 24 + 1);
    assert!(ba == bb);
    let parsed = parse_annotations(&a.path().join(ANNOTATION_FILE), 5).unwrap();
    assert!(parsed.warnings.is_empty());
    assert_eq!(parsed.records, recs);
    let c = tempfile::tempdir().unwrap();
    synth(c.path(), 6, 8, Difficulty::Hard);
    assert!(dir_bytes(c.path()) != ba);
}

#[test]
fn easy_labels_are_balanced() {
    for (tracks, seed) in [(40, 1), (101, 2), (64, 3)] {
        let recs = synthetic_annotations(&SynthConfig::new(tracks, seed, Difficulty::Easy)).unwrap();
        let tracks_built = build_tracks(recs).unwrap();
        let crossing = tracks_built.iter().filter(|t| t.records[0].cross == 1).count();
        let share = crossing as f64 / tracks_built.len() as f64;
        assert!((share - 0.5).abs() <= 0.05, "{}", share);
    }
}

fn mean_abs_dx(t: &Track) -> f64 {
    let cx: Vec<f64> = t.records.iter().map(|r| 0.5 * (r.bbox[0] + r.bbox[2])).collect();
    cx.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (cx.len() - 1) as f64
}

/// Best single threshold on one feature, fitted on `fit` and scored on
/// `score`.
fn stump_accuracy(fit: &[(f64, u8)], score: &[(f64, u8)]) -> f64 {
    let acc = |th: f64, data: &[(f64, u8)]| data.iter().filter(|&&(x, y)| u8::from(x > th) == y).count() as f64 / data.len() as f64;
    let mut candidates: Vec<f64> = fit.iter().map(|p| p.0).collect();
    candidates.push(f64::NEG_INFINITY);
    let best = candidates.into_iter().max_by(|a, b| acc(*a, fit).total_cmp(&acc(*b, fit))).unwrap();
    acc(best, score)
}

#[test]
fn horizontal_motion_stump_learns_easy_labels() {
    let recs = synthetic_annotations(&SynthConfig::new(200, 4, Difficulty::Easy)).unwrap();
    let points: Vec<(f64, u8)> = build_tracks(recs).unwrap().iter().map(|t| (mean_abs_dx(t), t.records[0].cross)).collect();
    let (fit, score) = points.split_at(100);
    let acc = stump_accuracy(fit, score);
    assert!(acc > 0.9, "stump accuracy {}", acc);
}

#[test]
fn every_clip_satisfies_its_invariants() {
    let dir = tempfile::tempdir().unwrap();
    for (d, seed) in [(Difficulty::Easy, 5), (Difficulty::Hard, 6)] {
        let sub = dir.path().join(d.to_string());
        fs::create_dir(&sub).unwrap();
        synth(&sub, 8, seed, d);
        for pose_frame in [PoseFrame::Crop, PoseFrame::Image] {
            let opts = DataOptions {
                pose_frame,
                ..DataOptions::default()
            };
            let split = load_split(&sub, &opts).unwrap();
            assert_eq!(split.warnings, 0);
            // 24-frame tracks at stride 8 give two clips each.
            assert_eq!(split.train.len() + split.test.len(), 16);
            assert_eq!(2 * (split.train_videos + split.test_videos), 16);
            for s in split.train.samples.iter().chain(&split.test.samples) {
                s.check_invariants(opts.input_size, 5).unwrap();
            }
        }
    }
}

#[test]
fn batches_stack_clips_in_order() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 4, 9, Difficulty::Easy);
    let tracks = build_tracks(parse_annotations(&dir.path().join(ANNOTATION_FILE), 5).unwrap().records).unwrap();
    let ds = build_clips(dir.path(), &tracks, &DataOptions::default()).unwrap();
    assert_eq!(ds.len(), 8);
    let b = ds.batch(&[3, 0]);
    assert_eq!(b.clips.shape(), &[2, 16, 3, 64, 64]);
    assert_eq!(b.pose.shape(), &[32, 36]);
    assert_eq!(b.speed.shape(), &[32, 5]);
    assert_eq!(b.labels, vec![usize::from(ds.samples[3].label), usize::from(ds.samples[0].label)]);
    let n = ds.samples[3].frames.numel();
    assert_eq!(&b.clips.data()[..n], ds.samples[3].frames.data());
    assert_eq!(&b.pose.data()[16 * 36..], ds.samples[0].pose_targets.data());
}

#[test]
fn clip_directories_need_sixteen_frames() {
    let data = tempfile::tempdir().unwrap();
    synth(data.path(), 1, 3, Difficulty::Easy);
    let clip = tempfile::tempdir().unwrap();
    let recs = parse_annotations(&data.path().join(ANNOTATION_FILE), 5).unwrap().records;
    for r in &recs[..16] {
        fs::copy(data.path().join(&r.image), clip.path().join(format!("{:03}.png", r.frame))).unwrap();
    }
    let boxes: Vec<_> = recs[..16].iter().map(|r| r.bbox).collect();
    fs::write(clip.path().join(CLIP_SIDECAR), serde_json::json!({ "bboxes": boxes }).to_string()).unwrap();
    let opts = DataOptions::default();
    let t = load_clip_dir(clip.path(), &opts).unwrap();
    assert_eq!(t.shape(), &[1, 16, 3, 64, 64]);
    let tracks = build_tracks(recs.clone()).unwrap();
    let ds = build_clips(data.path(), &tracks, &opts).unwrap();
    assert_eq!(t.data(), ds.samples[0].frames.data());

    fs::remove_file(clip.path().join("015.png")).unwrap();
    let err = load_clip_dir(clip.path(), &opts).unwrap_err();
    assert!(matches!(err, Error::Tensor(xint_tensor::TensorError::Contract(_))));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn malformed_annotation_file_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let recs = synth(dir.path(), 1, 3, Difficulty::Easy);
    let path = dir.path().join(ANNOTATION_FILE);
    let mut lines: Vec<String> = fs::read_to_string(&path).unwrap().lines().map(String::from).collect();
    lines[4] = lines[4].replace("\"cross\"", "\"crossing\"");
    fs::write(&path, lines.join("\n")).unwrap();
    match parse_annotations(&path, 5) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
        other => panic!("{:?}", other.map(|a| a.records.len())),
    }
    assert_eq!(recs.len(), 24);
}
