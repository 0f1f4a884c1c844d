//! Replay detector outputs under a runtime profile and show which frames
//! the deployed detector actually processes.

use asap_stream::data::RuntimeProfile;
use asap_stream::stream_sim::{simulate_stream, SimConfig};
use asap_stream::synth::{gen_scene, oracle_detector, DetectorNoise, SceneSpec};

fn main() -> asap_stream::Result<()> {
    let dense = gen_scene(&SceneSpec::random(1, 4, 10.0, 0.0))?;
    let det = oracle_detector(&dense, &DetectorNoise::default(), 1)?;
    let frames: Vec<i64> = dense.iter().map(|f| f.timestamp_us).collect();

    let profile = RuntimeProfile::from_json_str(
        r#"{"name":"edge-gpu","distribution":"lognormal","params":{"mu":5.3,"sigma":0.25}}"#,
    )?;
    let stream = simulate_stream(
        &frames,
        &det,
        &profile,
        &SimConfig {
            seed: 3,
            ..SimConfig::default()
        },
    )?;
    println!(
        "profile {} (mean {:.0} ms)",
        profile.name,
        profile.mean_ms()
    );
    println!("{} of {} frames processed", stream.len(), frames.len());
    for r in stream.records.iter().take(6) {
        println!(
            "source {:>8} us  done {:>8} us  latency {:>4} ms",
            r.source_timestamp_us,
            r.completion_timestamp_us,
            (r.completion_timestamp_us - r.source_timestamp_us) / 1000
        );
    }
    Ok(())
}
