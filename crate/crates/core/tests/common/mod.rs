//! Independent reference implementations used as test oracles.
//!
//! Each one is written for clarity over speed and shares no code with the
//! library beyond plain data types.

#![allow(dead_code)]

use laps::detector::DetectorConfig;
use laps::encoder::Fsq;

/// Code whose grid point is closest to `bounded`, by scanning every code.
pub fn nearest_code_bruteforce(fsq: &Fsq, bounded: &[f64]) -> u32 {
    (0..fsq.codebook_size())
        .map(|c| {
            let d: f64 = fsq
                .grid_point(c)
                .iter()
                .zip(bounded)
                .map(|(g, b)| (g - b) * (g - b))
                .sum();
            (d, c)
        })
        .fold(
            (f64::INFINITY, 0),
            |best, cur| if cur.0 < best.0 { cur } else { best },
        )
        .1
}

/// Hysteresis segmentation of a smoothed signal, by searching forward for
/// whole runs instead of keeping counters. Returns `(start, end, truncated)`.
pub fn reference_segments(y: &[f64], cfg: &DetectorConfig) -> Vec<(usize, usize, bool)> {
    let (on, off) = (cfg.theta_on, cfg.theta_off());
    let run = |from: usize, len: usize, pred: &dyn Fn(f64) -> bool| -> Option<usize> {
        (from..y.len()).find(|&p| p + len <= y.len() && y[p..p + len].iter().all(|&v| pred(v)))
    };
    let mut out = Vec::new();
    let mut i = 0;
    while let Some(p) = run(i, cfg.up_count, &|v| v > on) {
        let active = p + cfg.up_count;
        match run(active, cfg.down_count, &|v| v < off) {
            Some(q) => {
                if q - p >= cfg.min_len {
                    out.push((p, q, false));
                }
                i = q + cfg.down_count;
            }
            None => {
                if y.len() - p >= cfg.min_len {
                    out.push((p, y.len(), true));
                }
                break;
            }
        }
    }
    out
}

/// `y_t = alpha * e_t + (1 - alpha) * y_{t-1}`, seeded with `e_0`.
pub fn reference_ema(e: &[f64], alpha: f64) -> Vec<f64> {
    let mut y = Vec::with_capacity(e.len());
    for (t, &v) in e.iter().enumerate() {
        let prev = if t == 0 { e[0] } else { y[t - 1] };
        y.push(alpha * v + (1.0 - alpha) * prev);
    }
    y
}

/// Otsu over every interior bin edge, splitting the raw samples at the edge.
/// Near-equal maxima (equal splits) resolve to the first edge.
pub fn otsu_exhaustive(signal: &[f64], bins: usize) -> f64 {
    let lo = signal.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = signal.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return lo;
    }
    let w = (hi - lo) / bins as f64;
    let n = signal.len() as f64;
    let scores: Vec<(f64, f64)> = (1..bins)
        .map(|k| {
            let edge = lo + k as f64 * w;
            let (a, b): (Vec<f64>, Vec<f64>) = signal.iter().partition(|&&v| v < edge);
            if a.is_empty() || b.is_empty() {
                return (edge, f64::NEG_INFINITY);
            }
            let ma = a.iter().sum::<f64>() / a.len() as f64;
            let mb = b.iter().sum::<f64>() / b.len() as f64;
            (
                edge,
                (a.len() as f64 / n) * (b.len() as f64 / n) * (ma - mb) * (ma - mb),
            )
        })
        .collect();
    let best = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    scores
        .iter()
        .find(|s| s.1 >= best - 1e-12 * best.abs())
        .map_or(lo + w, |s| s.0)
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Smallest k = 2 inertia over every split into two non-empty groups.
pub fn two_means_exhaustive(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let d = points[0].len();
    let mut best = f64::INFINITY;
    // Point 0 always sits in group A; that halves the enumeration.
    for mask in 0u32..(1 << (n - 1)) {
        let in_b = |i: usize| i > 0 && mask & (1 << (i - 1)) != 0;
        let mut cost = 0.0;
        let mut ok = true;
        for group in [false, true] {
            let members: Vec<&Vec<f64>> = (0..n)
                .filter(|&i| in_b(i) == group)
                .map(|i| &points[i])
                .collect();
            if members.is_empty() {
                ok = false;
                break;
            }
            let centroid: Vec<f64> = (0..d)
                .map(|j| members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64)
                .collect();
            cost += members.iter().map(|p| sq(p, &centroid)).sum::<f64>();
        }
        if ok {
            best = best.min(cost);
        }
    }
    best
}

/// Mean silhouette from a full pairwise distance matrix.
pub fn silhouette_naive(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let n = points.len();
    let dist: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| sq(&points[i], &points[j]).sqrt()).collect())
        .collect();
    let mut total = 0.0;
    for i in 0..n {
        let mean_to = |c: usize| {
            let others: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == c).collect();
            if others.is_empty() {
                None
            } else {
                Some(others.iter().map(|&j| dist[i][j]).sum::<f64>() / others.len() as f64)
            }
        };
        let Some(a) = mean_to(labels[i]) else {
            continue;
        };
        let b = (0..k)
            .filter(|&c| c != labels[i])
            .filter_map(mean_to)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

/// Size of a maximum one-to-one matching with `|p - g| <= tol`, by trying
/// every assignment.
pub fn max_matching_bruteforce(pred: &[f64], gt: &[f64], tol: f64) -> usize {
    fn go(pred: &[f64], gt: &[f64], used: &mut Vec<bool>, tol: f64) -> usize {
        let Some((&p, rest)) = pred.split_first() else {
            return 0;
        };
        let mut best = go(rest, gt, used, tol);
        for j in 0..gt.len() {
            if !used[j] && (p - gt[j]).abs() <= tol {
                used[j] = true;
                best = best.max(1 + go(rest, gt, used, tol));
                used[j] = false;
            }
        }
        best
    }
    go(pred, gt, &mut vec![false; gt.len()], tol)
}

pub mod gen;

/// Worked hysteresis examples.
///
/// `(name, config, smoothed signal, expected (start, end, truncated) segments)`.
pub type HandCase = (
    &'static str,
    DetectorConfig,
    Vec<f64>,
    Vec<(usize, usize, bool)>,
);

pub fn hysteresis_cases() -> Vec<HandCase> {
    let cfg = |u, d, min_len| DetectorConfig {
        alpha: 1.0,
        theta_on: 1.0,
        hysteresis_ratio: 0.5,
        up_count: u,
        down_count: d,
        min_len,
    };
    vec![
        (
            "single burst",
            cfg(2, 2, 1),
            vec![0.0, 2.0, 2.0, 2.0, 0.3, 0.3, 0.0],
            vec![(1, 4, false)],
        ),
        (
            "broken up run restarts",
            cfg(3, 2, 1),
            vec![2.0, 2.0, 0.0, 2.0, 2.0, 2.0, 0.0, 0.0],
            vec![(3, 6, false)],
        ),
        (
            "band holds the active state",
            cfg(2, 2, 1),
            vec![2.0, 2.0, 0.7, 0.7, 0.7, 0.2, 0.7, 0.2, 0.2],
            vec![(0, 7, false)],
        ),
        (
            "band never switches on",
            cfg(1, 1, 1),
            vec![0.9, 1.0, 0.9, 0.6],
            vec![],
        ),
        (
            "threshold itself is not above",
            cfg(1, 1, 1),
            vec![1.0, 1.0, 0.5, 0.4],
            vec![],
        ),
        (
            "broken down run restarts",
            cfg(1, 3, 1),
            vec![2.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0],
            vec![(0, 4, false)],
        ),
        (
            "short segment dropped",
            cfg(1, 1, 3),
            vec![2.0, 0.0, 2.0, 2.0, 2.0, 0.0],
            vec![(2, 5, false)],
        ),
        (
            "truncated at end of stream",
            cfg(2, 2, 1),
            vec![0.0, 2.0, 2.0, 2.0, 2.0],
            vec![(1, 5, true)],
        ),
        (
            "truncated then too short",
            cfg(2, 2, 5),
            vec![0.0, 2.0, 2.0, 2.0, 2.0],
            vec![],
        ),
        (
            "partial down run at end",
            cfg(1, 3, 1),
            vec![2.0, 2.0, 0.1, 0.1],
            vec![(0, 4, true)],
        ),
        (
            "up run never completes",
            cfg(3, 1, 1),
            vec![0.0, 2.0, 2.0],
            vec![],
        ),
    ]
}
