//! Discrete-event replay of a detector under a runtime distribution.
//!
//! The simulated model is busy for one sampled runtime per consumed frame.
//! Whenever it goes idle it takes the newest frame already captured and
//! skips anything older, so under load the prediction stream thins out and
//! each prediction describes a frame that is one runtime stale.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Box3D, FrameDetections, RuntimeDistribution, RuntimeProfile, TimestampUs};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FramePolicy {
    /// Consume the newest captured frame, drop stale ones.
    #[default]
    LatestFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub contention_factor: f64,
    pub policy: FramePolicy,
    /// Temporal stride of multi-frame detectors' history. Recorded for
    /// provenance; the detector outputs being replayed already reflect it.
    pub input_frame_interval: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            contention_factor: 1.0,
            policy: FramePolicy::LatestFrame,
            input_frame_interval: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.contention_factor.is_finite() && self.contention_factor >= 1.0) {
            return Err(Error::InvalidContention(self.contention_factor));
        }
        if self.input_frame_interval == 0 {
            return Err(Error::Config("input_frame_interval must be >= 1".into()));
        }
        Ok(())
    }
}

/// Box refinements for one evaluation timestamp, attached by the velocity baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub eval_timestamp_us: TimestampUs,
    pub boxes: Vec<Box3D>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub completion_timestamp_us: TimestampUs,
    pub source_timestamp_us: TimestampUs,
    pub detections: FrameDetections,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub refinements: Vec<Refinement>,
}

impl StreamRecord {
    pub fn refinement_at(&self, t: TimestampUs) -> Option<&Refinement> {
        self.refinements
            .binary_search_by_key(&t, |r| r.eval_timestamp_us)
            .ok()
            .map(|i| &self.refinements[i])
    }
}

/// Time-ordered predictions as emitted by a deployed detector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionStream {
    pub scene_id: String,
    pub records: Vec<StreamRecord>,
}

impl PredictionStream {
    pub fn new(scene_id: impl Into<String>, records: Vec<StreamRecord>) -> Result<Self> {
        let s = PredictionStream {
            scene_id: scene_id.into(),
            records,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if r.source_timestamp_us > r.completion_timestamp_us {
                return Err(Error::Config(format!(
                    "record {i}: source {} after completion {}",
                    r.source_timestamp_us, r.completion_timestamp_us
                )));
            }
            if r.detections.scene_id != self.scene_id {
                return Err(Error::SceneMismatch {
                    expected: self.scene_id.clone(),
                    found: r.detections.scene_id.clone(),
                });
            }
        }
        for (i, w) in self.records.windows(2).enumerate() {
            if w[1].completion_timestamp_us <= w[0].completion_timestamp_us {
                return Err(Error::UnsortedScene {
                    line: i + 2,
                    previous_us: w[0].completion_timestamp_us,
                    timestamp_us: w[1].completion_timestamp_us,
                });
            }
            if w[1].source_timestamp_us < w[0].source_timestamp_us {
                return Err(Error::Config(format!(
                    "record {}: source timestamps go backwards",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let rows: Vec<(usize, StreamRecord)> = crate::data::read_jsonl(path)?;
        let scene_id = rows
            .first()
            .map(|(_, r)| r.detections.scene_id.clone())
            .unwrap_or_default();
        PredictionStream::new(scene_id, rows.into_iter().map(|(_, r)| r).collect())
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::data::write_jsonl(path, &self.records)
    }
}

/// Seeded, platform-independent generator used for every simulation draw.
pub fn sim_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws one inference duration in microseconds (at least 1 us).
///
/// `contention_factor` multiplies on top of the profile's own factor;
/// overhead is added after scaling.
pub fn sample_runtime<R: Rng + ?Sized>(
    profile: &RuntimeProfile,
    contention_factor: f64,
    rng: &mut R,
) -> i64 {
    let base_ms = match &profile.distribution {
        RuntimeDistribution::Empirical(samples) => samples[rng.random_range(0..samples.len())],
        RuntimeDistribution::Constant { ms } => *ms,
        RuntimeDistribution::LogNormal { mu, sigma } => {
            // validated: sigma >= 0 and finite
            LogNormal::new(*mu, *sigma)
                .expect("validated lognormal params")
                .sample(rng)
        }
    };
    let ms = base_ms * profile.contention_factor * contention_factor + profile.overhead_ms;
    ((ms * 1000.0).round() as i64).max(1)
}

/// Replays precomputed per-frame outputs through the latest-frame scheduler.
pub fn simulate_stream(
    frame_timestamps: &[TimestampUs],
    outputs: &BTreeMap<TimestampUs, FrameDetections>,
    profile: &RuntimeProfile,
    cfg: &SimConfig,
) -> Result<PredictionStream> {
    cfg.validate()?;
    profile.validate()?;
    for w in frame_timestamps.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::UnsortedScene {
                line: 0,
                previous_us: w[0],
                timestamp_us: w[1],
            });
        }
    }
    let mut rng = sim_rng(cfg.seed);
    let mut records = Vec::new();
    let Some(&first) = frame_timestamps.first() else {
        return Ok(PredictionStream::default());
    };

    let last = frame_timestamps[frame_timestamps.len() - 1];
    let mut wall = first;
    // index of the next frame that may still be consumed
    let mut next = 0usize;
    // a job started after the last capture would finish after every
    // evaluation timestamp, so the stream ends there
    while next < frame_timestamps.len() && wall <= last {
        let newest = frame_timestamps[next..].partition_point(|&t| t <= wall);
        if newest == 0 {
            // idle until the next capture
            wall = frame_timestamps[next];
            continue;
        }
        let idx = next + newest - 1;
        let source = frame_timestamps[idx];
        let det = outputs
            .get(&source)
            .ok_or(Error::MissingDetectorOutput(source))?;
        let completion = wall + sample_runtime(profile, cfg.contention_factor, &mut rng);
        records.push(StreamRecord {
            completion_timestamp_us: completion,
            source_timestamp_us: source,
            detections: det.clone(),
            refinements: Vec::new(),
        });
        wall = completion;
        next = idx + 1;
    }
    let scene_id = records
        .first()
        .map(|r| r.detections.scene_id.clone())
        .unwrap_or_default();
    PredictionStream::new(scene_id, records)
}

/// One derived profile per slowdown factor.
pub fn contention_sweep(base: &RuntimeProfile, factors: &[f64]) -> Result<Vec<RuntimeProfile>> {
    factors
        .iter()
        .map(|&f| {
            if !(f.is_finite() && f >= 1.0) {
                return Err(Error::InvalidContention(f));
            }
            if f == 1.0 {
                return Ok(base.clone());
            }
            let mut p = base.clone();
            p.contention_factor *= f;
            p.name = format!("{}@x{}", base.name, f);
            Ok(p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts12(n: usize) -> Vec<i64> {
        (0..n as i64).map(|k| (k * 1_000_000 + 6) / 12).collect()
    }

    fn outputs(ts: &[i64]) -> BTreeMap<i64, FrameDetections> {
        ts.iter()
            .map(|&t| (t, FrameDetections::empty("s", t)))
            .collect()
    }

    #[test]
    fn constant_runtime_samples() {
        let p = RuntimeProfile::constant("c", 500.0).unwrap();
        let mut rng = sim_rng(1);
        assert_eq!(sample_runtime(&p, 1.0, &mut rng), 500_000);
        assert_eq!(sample_runtime(&p, 2.0, &mut rng), 1_000_000);
        let p = p.with_overhead(10.0).unwrap();
        assert_eq!(sample_runtime(&p, 2.0, &mut rng), 1_010_000);
    }

    #[test]
    fn keeps_up_when_fast() {
        let ts = ts12(12);
        let p = RuntimeProfile::constant("fast", 1000.0 / 12.0 - 1.0).unwrap();
        let s = simulate_stream(&ts, &outputs(&ts), &p, &SimConfig::default()).unwrap();
        assert_eq!(s.len(), 12);
        for (r, t) in s.records.iter().zip(&ts) {
            assert_eq!(r.source_timestamp_us, *t);
            assert_eq!(r.completion_timestamp_us, t + 82_333);
        }
    }

    #[test]
    fn single_frame() {
        let p = RuntimeProfile::constant("c", 40.0).unwrap();
        let s = simulate_stream(&[7], &outputs(&[7]), &p, &SimConfig::default()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.records[0].completion_timestamp_us, 40_007);
    }

    #[test]
    fn missing_output() {
        let ts = ts12(3);
        let mut out = outputs(&ts);
        out.remove(&ts[0]);
        let p = RuntimeProfile::constant("c", 40.0).unwrap();
        let err = simulate_stream(&ts, &out, &p, &SimConfig::default()).unwrap_err();
        assert!(err.to_string().starts_with("missing detector output"));
    }

    #[test]
    fn sweep() {
        let base = RuntimeProfile::constant("c", 500.0).unwrap();
        let one = contention_sweep(&base, &[1.0]).unwrap();
        assert_eq!(one, vec![base.clone()]);
        let ps = contention_sweep(&base, &[1.0, 2.0, 4.0]).unwrap();
        let means: Vec<_> = ps.iter().map(|p| p.mean_ms()).collect();
        assert_eq!(means, vec![500.0, 1000.0, 2000.0]);
        assert!(contention_sweep(&base, &[0.5]).is_err());
    }

    #[test]
    fn swept_empirical_draws_scale_exactly() {
        let base = RuntimeProfile::empirical("e", vec![101.0, 203.0, 307.0]).unwrap();
        let scaled = &contention_sweep(&base, &[3.0]).unwrap()[0];
        let mut a = sim_rng(9);
        let mut b = sim_rng(9);
        for _ in 0..1000 {
            assert_eq!(
                sample_runtime(scaled, 1.0, &mut a),
                3 * sample_runtime(&base, 1.0, &mut b)
            );
        }
    }

    #[test]
    fn rejects_bad_contention() {
        let cfg = SimConfig {
            contention_factor: 0.5,
            ..SimConfig::default()
        };
        let p = RuntimeProfile::constant("c", 40.0).unwrap();
        assert!(simulate_stream(&[0], &outputs(&[0]), &p, &cfg).is_err());
    }
}
