//! Independent oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

use asap_stream::geom::BevRect;
use asap_stream::synth::{ObjectSpec, SceneSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Frames before this offset are not scored in the streaming fixtures, so
/// every scored frame has a finished prediction to match even at 8x load.
pub const WARMUP_US: i64 = 2_000_000;

/// One object per class, 40 m apart laterally so no displaced prediction can
/// reach another object's ground truth.
pub fn moving_fixture() -> SceneSpec {
    let objects = vec![
        ObjectSpec::new("car", [0.0, 0.0, 0.0], [1.9, 4.5, 1.6]).moving(5.0, 0.0),
        ObjectSpec::new("truck", [0.0, 40.0, 0.0], [2.5, 7.0, 3.0]).moving(0.0, 7.0),
        ObjectSpec::new("bus", [0.0, 80.0, 0.0], [2.9, 11.0, 3.4]).moving(-2.5, 0.0),
        ObjectSpec::new("pedestrian", [0.0, 120.0, 0.0], [0.6, 0.7, 1.7]).moving(1.3, 0.0),
        ObjectSpec::new("barrier", [0.0, 160.0, 0.0], [0.5, 2.5, 1.0]),
    ];
    SceneSpec {
        scene_id: "moving".into(),
        ..SceneSpec::new(10.0, 12.0, objects)
    }
}

pub fn static_fixture() -> SceneSpec {
    let objects = vec![
        ObjectSpec::new("car", [3.0, 1.0, 0.0], [1.9, 4.5, 1.6]).turning(0.4, 0.0),
        ObjectSpec::new("pedestrian", [10.0, -4.0, 0.0], [0.6, 0.7, 1.7]),
        ObjectSpec::new("traffic_cone", [-8.0, 6.0, 0.0], [0.4, 0.4, 0.8]),
    ];
    SceneSpec {
        scene_id: "static".into(),
        ..SceneSpec::new(6.0, 12.0, objects)
    }
}

/// Average precision by direct enumeration. `events` are
/// `(score, eval_timestamp, is_tp)`; ranking is by descending score, then
/// by evaluation timestamp. For each recall level on the grid the
/// precision is the best over all cut-offs reaching that recall.
pub fn brute_force_ap(events: &[(f64, i64, bool)], n_gt: usize) -> f64 {
    let mut ranked = events.to_vec();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut points = Vec::new();
    for cut in 1..=ranked.len() {
        let tp = ranked[..cut].iter().filter(|e| e.2).count();
        points.push((tp as f64 / n_gt as f64, tp as f64 / cut as f64));
    }
    let mut total = 0.0;
    for k in 11..=100 {
        let r = k as f64 / 100.0;
        let best = points
            .iter()
            .filter(|(rec, _)| *rec >= r)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        total += (best - 0.1).max(0.0);
    }
    total / 90.0 / 0.9
}

/// IoU by uniform point sampling inside the smaller rectangle.
pub fn monte_carlo_iou(a: &BevRect, b: &BevRect, samples: usize, seed: u64) -> f64 {
    let (small, other) = if a.area() <= b.area() { (a, b) } else { (b, a) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s, c) = small.yaw.sin_cos();
    let mut hits = 0usize;
    for _ in 0..samples {
        let lx = (rng.random::<f64>() - 0.5) * small.length;
        let ly = (rng.random::<f64>() - 0.5) * small.width;
        let x = small.center_x + c * lx - s * ly;
        let y = small.center_y + s * lx + c * ly;
        if other.contains(x, y) {
            hits += 1;
        }
    }
    let inter = small.area() * hits as f64 / samples as f64;
    inter / (a.area() + b.area() - inter)
}

/// Latest-frame schedule for a constant runtime, by exhaustive scan:
/// `(completion, source)` pairs. No job starts after the last capture.
pub fn naive_schedule(frames: &[i64], runtime_us: i64) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    let mut wall = frames[0];
    let mut last_source: Option<i64> = None;
    let end = *frames.iter().max().unwrap();
    while wall <= end {
        let candidates: Vec<i64> = frames
            .iter()
            .copied()
            .filter(|&t| t <= wall && last_source.is_none_or(|l| t > l))
            .collect();
        if let Some(&src) = candidates.iter().max() {
            wall += runtime_us;
            out.push((wall, src));
            last_source = Some(src);
        } else if let Some(&next) = frames.iter().find(|&&t| last_source.is_none_or(|l| t > l)) {
            wall = wall.max(next);
        } else {
            break;
        }
    }
    out
}

/// Record serving `t` under strict most-recent matching, by linear scan.
pub fn naive_match(schedule: &[(i64, i64)], t: i64) -> Option<(i64, i64)> {
    schedule
        .iter()
        .filter(|(c, _)| *c < t)
        .max_by_key(|(c, _)| *c)
        .copied()
}
