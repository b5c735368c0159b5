//! Library results checked against brute-force reference implementations.

mod common;

use common::gen::{
    bimodal, energy_trace, kmeans_hits_exhaustive_optimum, latent_stream, random_detector,
};
use common::*;
use laps::calibration::otsu_threshold;
use laps::cluster::{l2_normalize_rows, silhouette};
use laps::detector::{
    detect, ema_smooth, latent_action_energy, segment_energy, segment_smoothed, step, step_energy,
    DetectorConfig, DetectorState, Mode, OnlineDetector, StreamSegmenter,
};
use laps::embedder::sinusoidal_pe;
use laps::encoder::{Fsq, FsqConfig};
use laps::eval::boundary_f1;
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn fsq_code_is_nearest_grid_point() {
    let fsq = Fsq::new(&FsqConfig::default().levels).unwrap();
    let mut r = rng(1);
    for _ in 0..1000 {
        let x: Vec<f64> = (0..4).map(|_| r.random_range(-4.0..4.0)).collect();
        let q = fsq.quantize(&x);
        assert_eq!(
            q.code,
            nearest_code_bruteforce(&fsq, &q.bounded),
            "x = {x:?}"
        );
    }
}

#[test]
fn fsq_mixed_radix_extremes() {
    let fsq = Fsq::new(&[8, 8, 8, 4]).unwrap();
    assert_eq!(fsq.codebook_size(), 2048);
    assert_eq!(fsq.code_of(&[0, 0, 0, 0]), 0);
    assert_eq!(fsq.code_of(&[7, 7, 7, 3]), 2047);
    assert_eq!(fsq.quantize(&[-1e9; 4]).code, 0);
    assert_eq!(fsq.quantize(&[1e9; 4]).code, 2047);
}

#[test]
fn fsq_snap_is_idempotent_on_grid() {
    let fsq = Fsq::new(&FsqConfig::default().levels).unwrap();
    for code in 0..fsq.codebook_size() {
        let g = fsq.grid_point(code);
        let (snapped, c) = fsq.snap(&g);
        assert_eq!((snapped, c), (g, code));
    }
}

#[test]
fn hysteresis_hand_cases() {
    for (name, cfg, y, expected) in hysteresis_cases() {
        let got: Vec<_> = segment_smoothed(&y, &cfg)
            .iter()
            .map(|s| (s.start, s.end, s.truncated))
            .collect();
        assert_eq!(got, expected, "{name}");
        assert_eq!(reference_segments(&y, &cfg), expected, "{name} (reference)");
    }
}

#[test]
fn ema_hand_case() {
    assert_eq!(ema_smooth(&[0.0, 1.0, 1.0], 0.5, 0.0), vec![0.0, 0.5, 0.75]);
}

#[test]
fn stepwise_energy_matches_batch() {
    let mut r = rng(9);
    for _ in 0..100 {
        let len = r.random_range(2..100);
        let s = latent_stream(&mut r, len, 5);
        let batch = latent_action_energy(&s).unwrap();
        let direct: Vec<f64> = (1..s.len())
            .map(|t| {
                let d2: f64 = s
                    .vector(t)
                    .iter()
                    .zip(s.vector(t - 1))
                    .map(|(a, b)| ((a - b) as f64).powi(2))
                    .sum();
                d2.sqrt()
            })
            .collect();
        assert_eq!(batch.len(), direct.len());
        for (k, (a, b)) in batch.iter().zip(&direct).enumerate() {
            assert!((a - b).abs() <= 1e-9);
            assert_eq!(*a, step_energy(s.vector(k), s.vector(k + 1)));
        }
    }
}

#[test]
fn concatenation_of_quiet_ended_streams_composes() {
    let mut r = rng(10);
    let mut checked = 0;
    while checked < 200 {
        let cfg = random_detector(&mut r);
        let len = r.random_range(1..150);
        let mut a = energy_trace(&mut r, len);
        // Close with a long quiet tail so the controller rests OFF with no open runs.
        a.extend(std::iter::repeat_n(0.0, 40));
        let b = energy_trace(&mut r, 120);
        let ya = ema_smooth(&a, cfg.alpha, a[0]);
        let st = ya
            .iter()
            .enumerate()
            .fold(DetectorState::default(), |st, (t, &v)| {
                step(&st, v, t, &cfg).0
            });
        if st.mode != Mode::Off || st.run_above != 0 || st.run_below != 0 {
            continue;
        }
        let yb = ema_smooth(&b, cfg.alpha, b[0]);
        let joined: Vec<f64> = ya.iter().chain(&yb).copied().collect();
        let mut expected = segment_smoothed(&ya, &cfg);
        expected.extend(
            segment_smoothed(&yb, &cfg)
                .into_iter()
                .map(|s| laps::detector::Segment {
                    start: s.start + ya.len(),
                    end: s.end + ya.len(),
                    ..s
                }),
        );
        assert_eq!(segment_smoothed(&joined, &cfg), expected);
        checked += 1;
    }
}

#[test]
fn positional_encoding_matches_formula() {
    for t in 0..10 {
        let pe = sinusoidal_pe(t, 8);
        for i in 0..4 {
            let angle = t as f64 / 10000f64.powf(2.0 * i as f64 / 8.0);
            assert!((pe[2 * i] - angle.sin()).abs() <= 1e-12);
            assert!((pe[2 * i + 1] - angle.cos()).abs() <= 1e-12);
        }
    }
}

#[test]
fn detector_matches_reference_simulation() {
    let mut r = rng(2);
    for _ in 0..1000 {
        let cfg = random_detector(&mut r);
        let len = r.random_range(1..300);
        let e = energy_trace(&mut r, len);
        let y = ema_smooth(&e, cfg.alpha, e[0]);
        assert_eq!(y, reference_ema(&e, cfg.alpha));
        let ours: Vec<_> = segment_smoothed(&y, &cfg)
            .iter()
            .map(|s| (s.start, s.end, s.truncated))
            .collect();
        assert_eq!(ours, reference_segments(&y, &cfg), "cfg {cfg:?}");
    }
}

#[test]
fn online_detector_equals_batch() {
    let mut r = rng(3);
    for _ in 0..1000 {
        let cfg = random_detector(&mut r);
        let len = r.random_range(1..300);
        let e = energy_trace(&mut r, len);
        let mut online = OnlineDetector::new(cfg.clone()).unwrap();
        let mut streamed: Vec<_> = e.iter().filter_map(|&v| online.push(v)).collect();
        streamed.extend(online.finish());
        assert_eq!(streamed, segment_energy(&e, &cfg));
    }
}

#[test]
fn stream_segmenter_equals_detect() {
    let mut r = rng(4);
    for i in 0..200 {
        let cfg = DetectorConfig {
            theta_on: r.random_range(0.5..3.0),
            ..random_detector(&mut r)
        };
        let len = r.random_range(2..250);
        let s = latent_stream(&mut r, len, 3);
        let batch = detect(&s, &cfg, "s", 25.0).unwrap();
        let mut seg = StreamSegmenter::new(cfg, "s", 25.0, 3).unwrap();
        let mut streamed = Vec::new();
        for t in 0..s.len() {
            streamed.extend(
                seg.push(s.codes()[t], s.frame_of_step()[t], s.vector(t))
                    .unwrap(),
            );
        }
        streamed.extend(seg.finish().unwrap());
        assert_eq!(streamed, batch, "case {i}");
    }
}

#[test]
fn otsu_matches_exhaustive_search() {
    let mut r = rng(5);
    for i in 0..100 {
        let x = bimodal(&mut r);
        let bins = [16, 64, 256][i % 3];
        assert_eq!(
            otsu_threshold(&x, bins).unwrap(),
            otsu_exhaustive(&x, bins),
            "sample {i}"
        );
    }
}

fn unit_points(r: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / norm).collect()
        })
        .collect()
}

fn to_array(points: &[Vec<f64>]) -> Array2<f64> {
    Array2::from_shape_fn((points.len(), points[0].len()), |(i, j)| points[i][j])
}

#[test]
fn kmeans_reaches_exhaustive_optimum() {
    assert!(kmeans_hits_exhaustive_optimum(100) >= 95);
}

#[test]
fn silhouette_matches_naive() {
    let mut r = rng(6);
    for _ in 0..50 {
        let n = r.random_range(4..40);
        let k = r.random_range(2..5.min(n));
        let pts = unit_points(&mut r, n, 3);
        // Every cluster gets at least one member, the rest at random.
        let labels: Vec<usize> = (0..n)
            .map(|i| if i < k { i } else { r.random_range(0..k) })
            .collect();
        let ours = silhouette(&to_array(&pts), &labels, k).unwrap();
        assert!((ours - silhouette_naive(&pts, &labels, k)).abs() <= 1e-9);
    }
}

#[test]
fn cosine_identity_on_normalized_rows() {
    let mut r = rng(7);
    let raw: Vec<Vec<f64>> = (0..200)
        .map(|_| (0..16).map(|_| r.random_range(-3.0..3.0)).collect())
        .collect();
    let x = l2_normalize_rows(&to_array(&raw), &[]).unwrap();
    for _ in 0..2000 {
        let (i, j) = (r.random_range(0..200), r.random_range(0..200));
        let (a, b) = (x.row(i), x.row(j));
        let dist2: f64 = a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum();
        let cos = a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt());
        assert!((dist2 - 2.0 * (1.0 - cos)).abs() <= 1e-9);
    }
}

fn sorted_times(r: &mut ChaCha8Rng) -> Vec<f64> {
    let n = r.random_range(0..=8);
    let mut v: Vec<f64> = (0..n)
        .map(|_| (r.random_range(0.0..30.0f64) * 4.0).round() / 4.0)
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

#[test]
fn greedy_matching_is_maximum() {
    let mut r = rng(8);
    for _ in 0..2000 {
        let pred = sorted_times(&mut r);
        let gt = sorted_times(&mut r);
        let tol = [0.5, 1.0, 2.0, 5.0][r.random_range(0..4)];
        let res = boundary_f1(&pred, &gt, tol).unwrap();
        assert_eq!(
            res.tp,
            max_matching_bruteforce(&pred, &gt, tol),
            "{pred:?} {gt:?} {tol}"
        );
        assert_eq!(res.tp + res.fp, pred.len());
        assert_eq!(res.tp + res.fn_, gt.len());
    }
}
