//! Raw stale predictions vs constant-velocity updating vs Kalman-filtered
//! updating, on a 250 ms detector with noisy velocities.

use asap_stream::baseline::{sv_pipeline, KalmanConfig, UpdateMode};
use asap_stream::data::RuntimeProfile;
use asap_stream::metrics::{evaluate_streaming, EvalConfig};
use asap_stream::stream_sim::{simulate_stream, SimConfig};
use asap_stream::synth::{gen_scene, oracle_detector, DetectorNoise, SceneSpec, ScoreModel};

fn main() -> asap_stream::Result<()> {
    let mut spec = SceneSpec::random(21, 10, 15.0, 0.0);
    spec.duration_s = 8.0;
    let dense = gen_scene(&spec)?;
    let noise = DetectorNoise {
        pos_sigma: 0.1,
        vel_sigma: 0.5,
        score: ScoreModel::Uniform { min: 0.3, max: 1.0 },
        ..DetectorNoise::default()
    };
    let det = oracle_detector(&dense, &noise, 21)?;
    let frames: Vec<i64> = dense.iter().map(|f| f.timestamp_us).collect();
    let profile = RuntimeProfile::constant("250ms", 250.0)?;
    let stream = simulate_stream(&frames, &det, &profile, &SimConfig::default())?;

    let raw = evaluate_streaming(&dense, &stream, None, &EvalConfig::default())?;
    println!("raw       mAP-S {:.4}  NDS-S {:.4}", raw.map_s, raw.nds_s);
    let refined_cfg = EvalConfig {
        use_refinements: true,
        ..EvalConfig::default()
    };
    for (name, mode) in [
        ("cv", UpdateMode::ConstantVelocity),
        ("kalman", UpdateMode::Kalman),
    ] {
        let sv = sv_pipeline(&stream, &frames, &KalmanConfig::default(), mode)?;
        let r = evaluate_streaming(&dense, &sv, None, &refined_cfg)?;
        println!("{name:<9} mAP-S {:.4}  NDS-S {:.4}", r.map_s, r.nds_s);
    }
    Ok(())
}
