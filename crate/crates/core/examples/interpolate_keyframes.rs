//! Densify 2 Hz keyframes to 12 Hz and measure the error against the
//! synthetic ground truth.

use asap_stream::data::{FrameAnnotations, TemporalDatabase};
use asap_stream::interp::{extend_annotations, InterpolationConfig};
use asap_stream::synth::{gen_scene, SceneSpec};

fn main() -> asap_stream::Result<()> {
    let dense = gen_scene(&SceneSpec::random(7, 8, 12.0, 1.0))?;
    let keys: Vec<FrameAnnotations> = dense.iter().filter(|f| f.is_keyframe).cloned().collect();
    let out = extend_annotations(
        &keys,
        &TemporalDatabase::default(),
        &InterpolationConfig::default(),
    )?;

    let mut worst: f64 = 0.0;
    for (e, g) in out.iter().zip(&dense) {
        for (b, t) in e.boxes.iter().zip(&g.boxes) {
            worst = worst.max((b.center.x - t.center.x).hypot(b.center.y - t.center.y));
        }
    }
    println!("{} keyframes -> {} frames", keys.len(), out.len());
    println!("max center error vs ground truth: {worst:.2e} m");
    Ok(())
}
