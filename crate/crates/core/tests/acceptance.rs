//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

mod common;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use asap_stream::baseline::{sv_pipeline, KalmanConfig, UpdateMode};
use asap_stream::data::{
    Box3D, DbEntry, FrameAnnotations, FrameDetections, RuntimeProfile, TemporalDatabase,
};
use asap_stream::geom::{angle_diff, bev_iou, slerp, BevRect, Quaternion, Vec3};
use asap_stream::interp::{extend_annotations, InterpolationConfig};
use asap_stream::metrics::{
    compute_nds_s, evaluate_streaming, match_recent, EvalConfig, MetricReport,
};
use asap_stream::stream_sim::{
    contention_sweep, simulate_stream, PredictionStream, SimConfig, StreamRecord,
};
use asap_stream::synth::{gen_scene, oracle_detector, DetectorNoise, SceneSpec, ScoreModel};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
/// `(score, eval_timestamp, is_tp)` per class and threshold index.
type EventTable = BTreeMap<(String, usize), Vec<(f64, i64, bool)>>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 NDS-S reproduces reference rows", nds_rows),
        ("2 most-recent matching", recent_matching),
        (
            "3 interpolation exact on smooth motion",
            interpolation_exact,
        ),
        ("4 auto-clean keeps only non-duplicates", auto_clean_case),
        ("5 latency lowers mAP-S, static stays 1", latency_degrades),
        ("6 velocity baseline beats raw stream", baseline_wins),
        ("7 contention monotone", contention_monotone),
        ("8 geometry against oracles", geometry_oracles),
        ("9 CLI outputs byte-identical on rerun", cli_deterministic),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f))
            .unwrap_or_else(|e| Err(format!("panicked: {:?}", e.downcast_ref::<String>())));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("[PASS] criterion {name}: {d} ({secs:.1}s)"),
            Err(d) => {
                failed += 1;
                println!("[FAIL] criterion {name}: {d} ({secs:.1}s)");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn nds_rows() -> Outcome {
    // mAP-S, ATE-S, ASE-S, AOE-S, AVE, AAE-S, reference NDS-S
    let rows = [
        (
            "BEVDepth",
            [0.323, 0.654, 0.272, 0.414, 0.440, 0.198],
            0.464,
        ),
        ("FCOS3D", [0.208, 0.828, 0.269, 0.512, 1.315, 0.175], 0.326),
        (
            "BEVFormer",
            [0.310, 0.760, 0.276, 0.385, 0.397, 0.216],
            0.452,
        ),
    ];
    let mut worst: f64 = 0.0;
    for (_, m, nds) in rows {
        let got = compute_nds_s(m[0], m[1], m[2], m[3], m[4], m[5]);
        worst = worst.max((got - nds).abs());
    }
    check(
        worst <= 0.0005,
        format!("max |delta| = {worst:.5} (tol 0.0005)"),
    )
}

fn random_stream(rng: &mut ChaCha8Rng) -> (PredictionStream, Vec<(i64, i64)>) {
    let n = rng.random_range(0..20);
    let mut records = Vec::new();
    let mut pairs = Vec::new();
    let mut source = rng.random_range(0..100_000i64);
    let mut completion = source;
    for _ in 0..n {
        source += rng.random_range(1..200_000);
        completion = completion.max(source) + rng.random_range(1..400_000);
        pairs.push((completion, source));
        records.push(StreamRecord {
            completion_timestamp_us: completion,
            source_timestamp_us: source,
            detections: FrameDetections::empty("s", source),
            refinements: Vec::new(),
        });
    }
    (PredictionStream::new("s", records).unwrap(), pairs)
}

fn recent_matching() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cases = 10_000;
    for case in 0..cases {
        let (stream, pairs) = random_stream(&mut rng);
        let hi = pairs.last().map_or(1_000_000, |p| p.0 + 200_000);
        // hit exact completion times as well as arbitrary points
        let t = if !pairs.is_empty() && rng.random_bool(0.3) {
            pairs[rng.random_range(0..pairs.len())].0
        } else {
            rng.random_range(0..hi)
        };
        let got = match_recent(&stream, t);
        let want = naive_match(&pairs, t);
        let got_pair = got.matched_record_index.map(|i| pairs[i]);
        if got_pair != want {
            return Err(format!("case {case}: t={t} got {got_pair:?} want {want:?}"));
        }
        if let Some((c, _)) = want {
            if c >= t || got.staleness_us != Some(t - c) {
                return Err(format!("case {case}: staleness {:?}", got.staleness_us));
            }
        }
    }
    for case in 0..1000 {
        let (stream, _) = random_stream(&mut rng);
        let mut prev = None;
        for t in (0..6_000_000).step_by(7_919) {
            let i = match_recent(&stream, t).matched_record_index;
            if i < prev {
                return Err(format!("monotonicity case {case}: index fell at t={t}"));
            }
            prev = i;
        }
    }
    Ok(format!(
        "{cases} random (stream, t) pairs match the linear-scan oracle; index monotone in t"
    ))
}

fn interpolation_exact() -> Outcome {
    let mut worst_c: f64 = 0.0;
    let mut worst_y: f64 = 0.0;
    for seed in 0..100 {
        let spec = SceneSpec::random(seed, 6, 15.0, 2.0);
        let dense = gen_scene(&spec).unwrap();
        let keys: Vec<FrameAnnotations> = dense.iter().filter(|f| f.is_keyframe).cloned().collect();
        let ext = extend_annotations(
            &keys,
            &TemporalDatabase::default(),
            &InterpolationConfig::default(),
        )
        .map_err(|e| e.to_string())?;
        let got: Vec<i64> = ext.iter().map(|f| f.timestamp_us).collect();
        let want: Vec<i64> = dense.iter().map(|f| f.timestamp_us).collect();
        if got != want {
            return Err(format!("seed {seed}: timestamps differ"));
        }
        for (e, d) in ext.iter().zip(&dense) {
            for g in &d.boxes {
                let b = e
                    .boxes
                    .iter()
                    .find(|b| b.instance_id == g.instance_id)
                    .ok_or(format!("seed {seed}: missing {:?}", g.instance_id))?;
                let c = (b.center.x - g.center.x)
                    .abs()
                    .max((b.center.y - g.center.y).abs())
                    .max((b.center.z - g.center.z).abs());
                worst_c = worst_c.max(c);
                worst_y = worst_y.max(angle_diff(b.yaw(), g.yaw()).abs());
            }
        }
    }
    check(
        worst_c <= 1e-9 && worst_y <= 1e-9,
        format!("100 scenes, max center err {worst_c:.1e}, max yaw err {worst_y:.1e} (tol 1e-9)"),
    )
}

fn auto_clean_case() -> Outcome {
    let car = |x: f64| Box3D::new("car", Vec3::new(x, 0.0, 0.0), [1.9, 4.5, 1.6], 0.0);
    // walks in from the side; annotated only in the later keyframe
    let walker = |t_us: i64| {
        Box3D::new(
            "pedestrian",
            Vec3::new(20.0, 15.0 + 1.2 * t_us as f64 / 1e6, 0.0),
            [0.6, 0.7, 1.7],
            0.0,
        )
    };
    let keys = vec![
        FrameAnnotations {
            scene_id: "fig".into(),
            timestamp_us: 0,
            is_keyframe: true,
            boxes: vec![car(0.0).with_instance("a")],
        },
        FrameAnnotations {
            scene_id: "fig".into(),
            timestamp_us: 500_000,
            is_keyframe: true,
            boxes: vec![
                car(5.0).with_instance("a"),
                walker(500_000).with_instance("b"),
            ],
        },
    ];
    // every 20 ms: a near-copy of the tracked car, the walker, a weak cone
    let entries: Vec<DbEntry> = (0..=25)
        .map(|k| {
            let t = k * 20_000;
            DbEntry {
                timestamp_us: t,
                boxes: vec![
                    car(10.0 * t as f64 / 1e6 + 0.1).with_score(0.95),
                    walker(t).with_score(0.9),
                    Box3D::new(
                        "traffic_cone",
                        Vec3::new(-5.0, 3.0, 0.0),
                        [0.4, 0.4, 0.8],
                        0.0,
                    )
                    .with_score(0.2),
                ],
            }
        })
        .collect();
    let db = TemporalDatabase::new(entries.clone()).unwrap();
    let cfg = InterpolationConfig::default();
    let with_db = extend_annotations(&keys, &db, &cfg).map_err(|e| e.to_string())?;
    let without =
        extend_annotations(&keys, &TemporalDatabase::default(), &cfg).map_err(|e| e.to_string())?;
    if with_db.len() != 7 || without.len() != 7 {
        return Err(format!(
            "expected 7 frames, got {} / {}",
            with_db.len(),
            without.len()
        ));
    }
    for (w, o) in with_db.iter().zip(&without) {
        if w.is_keyframe {
            if w.boxes != o.boxes {
                return Err(format!("keyframe {} altered", w.timestamp_us));
            }
            continue;
        }
        if o.boxes.iter().any(|b| b.category == "pedestrian") {
            return Err(format!(
                "frame {}: walker present without database",
                w.timestamp_us
            ));
        }
        // nearest entry by linear scan, earlier on ties
        let nearest = entries
            .iter()
            .min_by_key(|e| ((e.timestamp_us - w.timestamp_us).abs(), e.timestamp_us))
            .unwrap();
        let mut expected = o.boxes.clone();
        expected.push(walker(nearest.timestamp_us).with_score(0.9));
        if w.boxes != expected {
            return Err(format!("frame {}: {:?}", w.timestamp_us, w.boxes));
        }
    }
    Ok("walker appears at database positions in all 5 intermediate frames, absent without database".into())
}

/// Expected report for a constant-runtime stream on the moving fixture,
/// derived from the naive schedule and per-object distances.
fn expected_aps(
    dense: &[FrameAnnotations],
    det: &BTreeMap<i64, FrameDetections>,
    runtime_us: i64,
    thresholds: &[f64],
) -> BTreeMap<(String, usize), f64> {
    let frames: Vec<i64> = dense.iter().map(|f| f.timestamp_us).collect();
    let schedule = naive_schedule(&frames, runtime_us);
    let start = frames[0] + WARMUP_US;
    let mut events = EventTable::new();
    let mut n_gt: BTreeMap<String, usize> = BTreeMap::new();
    for f in dense.iter().filter(|f| f.timestamp_us >= start) {
        let served = naive_match(&schedule, f.timestamp_us);
        for g in &f.boxes {
            *n_gt.entry(g.category.clone()).or_default() += 1;
            let Some((_, src)) = served else { continue };
            let p = det[&src]
                .boxes
                .iter()
                .find(|b| b.category == g.category)
                .unwrap();
            let d = ((p.center.x - g.center.x).powi(2) + (p.center.y - g.center.y).powi(2)).sqrt();
            for (k, &thr) in thresholds.iter().enumerate() {
                events.entry((g.category.clone(), k)).or_default().push((
                    p.score,
                    f.timestamp_us,
                    d <= thr,
                ));
            }
        }
    }
    events
        .into_iter()
        .map(|((c, k), ev)| {
            let ap = brute_force_ap(&ev, n_gt[&c]);
            ((c, k), ap)
        })
        .collect()
}

fn stream_for(
    dense: &[FrameAnnotations],
    det: &BTreeMap<i64, FrameDetections>,
    profile: &RuntimeProfile,
    seed: u64,
) -> PredictionStream {
    let frames: Vec<i64> = dense.iter().map(|f| f.timestamp_us).collect();
    let cfg = SimConfig {
        seed,
        ..SimConfig::default()
    };
    simulate_stream(&frames, det, profile, &cfg).unwrap()
}

fn warm_cfg() -> EvalConfig {
    EvalConfig {
        warmup_us: WARMUP_US,
        ..EvalConfig::default()
    }
}

fn latency_degrades() -> Outcome {
    let noise = DetectorNoise {
        score: ScoreModel::Uniform { min: 0.3, max: 1.0 },
        ..DetectorNoise::default()
    };
    let cfg = warm_cfg();
    let moving = gen_scene(&moving_fixture()).unwrap();
    let still = gen_scene(&static_fixture()).unwrap();
    let det_moving = oracle_detector(&moving, &noise, 5).unwrap();
    let det_still = oracle_detector(&still, &noise, 5).unwrap();

    let mut maps = Vec::new();
    let mut worst: f64 = 0.0;
    for ms in [40.0, 250.0, 1000.0] {
        let profile = RuntimeProfile::constant(format!("{ms}ms"), ms).unwrap();
        let s = evaluate_streaming(
            &still,
            &stream_for(&still, &det_still, &profile, 0),
            None,
            &cfg,
        )
        .unwrap();
        if s.map_s != 1.0 {
            return Err(format!("static scene at {ms} ms: mAP-S {}", s.map_s));
        }
        let stream = stream_for(&moving, &det_moving, &profile, 0);
        let r = evaluate_streaming(&moving, &stream, None, &cfg).unwrap();
        let expected = expected_aps(
            &moving,
            &det_moving,
            (ms * 1000.0) as i64,
            &cfg.thresholds_m,
        );
        if expected.len() != r.per_class_ap.len() {
            return Err(format!(
                "{} APs, oracle has {}",
                r.per_class_ap.len(),
                expected.len()
            ));
        }
        for ((c, k), want) in &expected {
            let got = r
                .ap(c, cfg.thresholds_m[*k])
                .ok_or(format!("no AP for {c}"))?;
            worst = worst.max((got - want).abs());
        }
        let want_map = expected.values().sum::<f64>() / expected.len() as f64;
        worst = worst.max((r.map_s - want_map).abs());
        maps.push(r.map_s);
    }
    let decreasing = maps.windows(2).all(|w| w[1] < w[0]);
    check(
        decreasing && worst <= 1e-9,
        format!(
            "mAP-S at 40/250/1000 ms = {:.4}/{:.4}/{:.4}; static 1.0; max oracle delta {worst:.1e}",
            maps[0], maps[1], maps[2]
        ),
    )
}

fn baseline_wins() -> Outcome {
    let noise = DetectorNoise {
        vel_sigma: 0.5,
        score: ScoreModel::Uniform { min: 0.3, max: 1.0 },
        ..DetectorNoise::default()
    };
    let profile = RuntimeProfile::constant("250ms", 250.0).unwrap();
    let kcfg = KalmanConfig::default();
    let raw_cfg = EvalConfig::default();
    let sv_cfg = EvalConfig {
        use_refinements: true,
        ..EvalConfig::default()
    };
    let mut wins = 0;
    let (mut err_kf, mut err_cv, mut n) = (0.0, 0.0, 0usize);
    for seed in 0..100u64 {
        let dense = gen_scene(&SceneSpec::random(seed, 8, 15.0, 0.0)).unwrap();
        let det = oracle_detector(&dense, &noise, seed).unwrap();
        let stream = stream_for(&dense, &det, &profile, seed);
        let eval_ts: Vec<i64> = dense.iter().map(|f| f.timestamp_us).collect();
        let kf = sv_pipeline(&stream, &eval_ts, &kcfg, UpdateMode::Kalman).unwrap();
        let cv = sv_pipeline(&stream, &eval_ts, &kcfg, UpdateMode::ConstantVelocity).unwrap();
        let raw = evaluate_streaming(&dense, &stream, None, &raw_cfg).unwrap();
        let sv = evaluate_streaming(&dense, &kf, None, &sv_cfg).unwrap();
        if sv.map_s > raw.map_s {
            wins += 1;
        }
        let by_ts: BTreeMap<i64, &FrameAnnotations> =
            dense.iter().map(|f| (f.timestamp_us, f)).collect();
        for (a, b) in kf.records.iter().zip(&cv.records) {
            for (ra, rb) in a.refinements.iter().zip(&b.refinements) {
                let gt = &by_ts[&ra.eval_timestamp_us].boxes;
                for ((ka, cb), g) in ra.boxes.iter().zip(&rb.boxes).zip(gt) {
                    err_kf += (ka.center.x - g.center.x).hypot(ka.center.y - g.center.y);
                    err_cv += (cb.center.x - g.center.x).hypot(cb.center.y - g.center.y);
                    n += 1;
                }
            }
        }
    }
    let (err_kf, err_cv) = (err_kf / n as f64, err_cv / n as f64);
    check(
        wins >= 95 && err_kf < err_cv,
        format!("sv > raw on {wins}/100 seeds; mean center error Kalman {err_kf:.3} m vs CV {err_cv:.3} m"),
    )
}

fn contention_monotone() -> Outcome {
    let noise = DetectorNoise {
        score: ScoreModel::Uniform { min: 0.3, max: 1.0 },
        ..DetectorNoise::default()
    };
    let dense = gen_scene(&moving_fixture()).unwrap();
    let det = oracle_detector(&dense, &noise, 7).unwrap();
    let base = RuntimeProfile::empirical("base", vec![70.0, 85.0, 100.0, 115.0, 130.0]).unwrap();
    let mut maps = Vec::new();
    for p in contention_sweep(&base, &[1.0, 2.0, 4.0, 8.0]).unwrap() {
        let r: MetricReport =
            evaluate_streaming(&dense, &stream_for(&dense, &det, &p, 7), None, &warm_cfg())
                .unwrap();
        maps.push(r.map_s);
    }
    check(
        maps.windows(2).all(|w| w[1] <= w[0]),
        format!("mAP-S at x1/x2/x4/x8 = {maps:.4?}"),
    )
}

fn geometry_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_iou: f64 = 0.0;
    for i in 0..200u64 {
        let rect = |rng: &mut ChaCha8Rng| {
            BevRect::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(0.5..4.0),
                rng.random_range(0.5..6.0),
                rng.random_range(-PI..PI),
            )
            .unwrap()
        };
        let (a, b) = (rect(&mut rng), rect(&mut rng));
        let exact = bev_iou(&a, &b);
        let mc = monte_carlo_iou(&a, &b, 1_000_000, i);
        worst_iou = worst_iou.max((exact - mc).abs());
    }
    let mut worst_q: f64 = 0.0;
    for _ in 0..10_000 {
        let axis = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if axis.x.hypot(axis.y).hypot(axis.z) < 1e-3 {
            continue;
        }
        let a = rng.random_range(-PI..PI);
        let b = a + rng.random_range(-(PI - 0.01)..(PI - 0.01));
        let u = rng.random_range(0.0..=1.0);
        let qa = Quaternion::from_axis_angle(axis, a).unwrap();
        let qb = Quaternion::from_axis_angle(axis, b).unwrap();
        let want = Quaternion::from_axis_angle(axis, a + u * (b - a)).unwrap();
        let got = slerp(qa, qb, u).unwrap();
        let s = if got.dot(&want) < 0.0 { -1.0 } else { 1.0 };
        let d = got
            .to_array()
            .iter()
            .zip(want.to_array())
            .map(|(g, w)| (g - s * w).abs())
            .fold(0.0, f64::max);
        worst_q = worst_q.max(d);
    }
    check(
        worst_iou <= 2e-3 && worst_q <= 1e-9,
        format!("IoU vs Monte Carlo max delta {worst_iou:.1e} (tol 2e-3); coaxial slerp max delta {worst_q:.1e} (tol 1e-9)"),
    )
}

fn cli(args: &[&str]) -> Result<(), String> {
    let mut argv = vec!["asap", "--seed", "11", "--quiet"];
    argv.extend_from_slice(args);
    match asap_stream::cli::run(argv) {
        0 => Ok(()),
        code => Err(format!("`{}` exited {code}", args.join(" "))),
    }
}

fn run_pipeline(dir: &Path, spec: &Path, profile: &Path) -> Result<(), String> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let (spec, profile) = (spec.to_string_lossy(), profile.to_string_lossy());
    cli(&[
        "synth",
        "--spec",
        &spec,
        "--out-gt",
        &p("gt.jsonl"),
        "--out-det",
        &p("det.jsonl"),
        "--vel-sigma",
        "0.5",
    ])?;
    cli(&[
        "interpolate",
        "--gt",
        &p("gt.jsonl"),
        "--tdb",
        &p("det.jsonl"),
        "--out",
        &p("dense.jsonl"),
    ])?;
    cli(&[
        "simulate",
        "--det",
        &p("det.jsonl"),
        "--gt",
        &p("gt.jsonl"),
        "--profile",
        &profile,
        "--out",
        &p("stream.jsonl"),
    ])?;
    cli(&[
        "baseline-sv",
        "--stream",
        &p("stream.jsonl"),
        "--gt",
        &p("gt.jsonl"),
        "--out",
        &p("sv.jsonl"),
    ])?;
    cli(&[
        "evaluate",
        "--gt",
        &p("gt.jsonl"),
        "--stream",
        &p("sv.jsonl"),
        "--sv",
        "--out",
        &p("report.json"),
        "--csv",
        &p("report.csv"),
    ])?;
    cli(&[
        "report",
        &p("report.json"),
        "--out",
        &p("summary.csv"),
        "--pivot",
        &p("pivot.csv"),
    ])
}

fn cli_deterministic() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = tmp.path().join("spec.json");
    let profile = tmp.path().join("profile.json");
    fs::write(
        &spec,
        serde_json::to_string(&SceneSpec::random(3, 6, 10.0, 0.5)).unwrap(),
    )
    .unwrap();
    fs::write(
        &profile,
        r#"{"name":"lognormal","distribution":"lognormal","params":{"mu":5.3,"sigma":0.3}}"#,
    )
    .unwrap();
    let outputs = [
        "gt.jsonl",
        "det.jsonl",
        "dense.jsonl",
        "stream.jsonl",
        "sv.jsonl",
        "report.json",
        "report.csv",
        "summary.csv",
        "pivot.csv",
    ];
    let runs = [tmp.path().join("a"), tmp.path().join("b")];
    for d in &runs {
        fs::create_dir(d).unwrap();
        run_pipeline(d, &spec, &profile)?;
    }
    for name in outputs {
        let a = fs::read(runs[0].join(name)).map_err(|e| format!("{name}: {e}"))?;
        let b = fs::read(runs[1].join(name)).map_err(|e| format!("{name}: {e}"))?;
        if a != b {
            return Err(format!("{name} differs between runs"));
        }
    }
    Ok(format!(
        "{} outputs across all six subcommands identical",
        outputs.len()
    ))
}
