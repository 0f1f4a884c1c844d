//! Slow one runtime profile down by increasing contention and tabulate the
//! resulting reports.

use asap_stream::data::RuntimeProfile;
use asap_stream::metrics::{EvalConfig, ReportMetadata, StreamingAccumulator};
use asap_stream::report::contention_pivot;
use asap_stream::stream_sim::{contention_sweep, simulate_stream, SimConfig};
use asap_stream::synth::{gen_scene, oracle_detector, DetectorNoise, SceneSpec, ScoreModel};

fn main() -> asap_stream::Result<()> {
    let noise = DetectorNoise {
        pos_sigma: 0.1,
        score: ScoreModel::Uniform { min: 0.3, max: 1.0 },
        ..DetectorNoise::default()
    };
    let scenes: Vec<_> = (0..4u64)
        .map(|seed| {
            let mut spec = SceneSpec::random(seed, 8, 10.0, 0.2);
            spec.duration_s = 6.0;
            let dense = gen_scene(&spec)?;
            let det = oracle_detector(&dense, &noise, seed)?;
            Ok((dense, det))
        })
        .collect::<asap_stream::Result<_>>()?;

    let base = RuntimeProfile::empirical("gpu", vec![80.0, 95.0, 110.0, 140.0])?;
    let cfg = EvalConfig {
        warmup_us: 2_000_000,
        ..EvalConfig::default()
    };
    let mut reports = Vec::new();
    for (profile, factor) in contention_sweep(&base, &[1.0, 2.0, 4.0, 8.0])?
        .into_iter()
        .zip([1.0, 2.0, 4.0, 8.0])
    {
        let mut acc = StreamingAccumulator::new(cfg.clone())?;
        for (dense, det) in &scenes {
            let frames: Vec<i64> = dense.iter().map(|f| f.timestamp_us).collect();
            let stream = simulate_stream(&frames, det, &profile, &SimConfig::default())?;
            acc.add_scene(dense, &stream, None)?;
        }
        let meta = ReportMetadata {
            profile: Some(profile.name.clone()),
            contention_factor: Some(factor),
            ..ReportMetadata::default()
        };
        reports.push((profile.name.clone(), acc.finish(meta)));
    }
    print!("{}", contention_pivot(&reports)?);
    Ok(())
}
