//! mAP-S and NDS-S of a noise-free detector as its runtime grows.

use asap_stream::data::RuntimeProfile;
use asap_stream::metrics::{evaluate_streaming, EvalConfig};
use asap_stream::stream_sim::{simulate_stream, SimConfig};
use asap_stream::synth::{gen_scene, oracle_detector, DetectorNoise, SceneSpec, ScoreModel};

fn main() -> asap_stream::Result<()> {
    let mut spec = SceneSpec::random(11, 10, 12.0, 0.2);
    spec.duration_s = 8.0;
    let dense = gen_scene(&spec)?;
    let noise = DetectorNoise {
        score: ScoreModel::Uniform { min: 0.3, max: 1.0 },
        ..DetectorNoise::default()
    };
    let det = oracle_detector(&dense, &noise, 11)?;
    let frames: Vec<i64> = dense.iter().map(|f| f.timestamp_us).collect();
    let cfg = EvalConfig {
        warmup_us: 1_500_000,
        ..EvalConfig::default()
    };

    println!(
        "{:>8}  {:>6}  {:>6}  {:>6}",
        "runtime", "mAP-S", "NDS-S", "ATE-S"
    );
    for ms in [40.0, 100.0, 250.0, 500.0, 1000.0] {
        let profile = RuntimeProfile::constant(format!("{ms}ms"), ms)?;
        let stream = simulate_stream(&frames, &det, &profile, &SimConfig::default())?;
        let r = evaluate_streaming(&dense, &stream, None, &cfg)?;
        println!(
            "{:>6} ms  {:.4}  {:.4}  {:.4}",
            ms, r.map_s, r.nds_s, r.ate_s
        );
    }
    Ok(())
}
