//! Synthetic scenes with exact constant-velocity kinematics, plus a noisy
//! "oracle" detector that copies ground truth.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{
    us_to_s, Box3D, FrameAnnotations, FrameDetections, TimestampUs, NUSCENES_CLASSES,
};
use crate::error::{Error, Result};
use crate::geom::{Quaternion, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
    pub category: String,
    pub center: [f64; 3],
    pub size: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub velocity: [f64; 2],
    #[serde(default)]
    pub yaw_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
}

impl ObjectSpec {
    pub fn new(category: &str, center: [f64; 3], size: [f64; 3]) -> Self {
        ObjectSpec {
            instance_id: None,
            category: category.into(),
            center,
            size,
            yaw: 0.0,
            velocity: [0.0, 0.0],
            yaw_rate: 0.0,
            attribute: None,
        }
    }

    pub fn moving(mut self, vx: f64, vy: f64) -> Self {
        self.velocity = [vx, vy];
        self
    }

    pub fn turning(mut self, yaw: f64, yaw_rate: f64) -> Self {
        self.yaw = yaw;
        self.yaw_rate = yaw_rate;
        self
    }

    /// Pose at `t` seconds after the scene start.
    pub fn box_at(&self, id: String, t: f64) -> Box3D {
        let [cx, cy, cz] = self.center;
        Box3D {
            instance_id: Some(id),
            category: self.category.clone(),
            center: Vec3::new(cx + self.velocity[0] * t, cy + self.velocity[1] * t, cz),
            size: self.size,
            rotation: Quaternion::from_yaw(self.yaw + self.yaw_rate * t),
            velocity: self.velocity,
            score: 1.0,
            attribute: self.attribute.clone(),
        }
    }
}

fn default_keyframe_rate() -> f64 {
    2.0
}

fn default_scene_id() -> String {
    "synthetic".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    #[serde(default = "default_scene_id")]
    pub scene_id: String,
    pub duration_s: f64,
    pub rate_hz: f64,
    /// Every `rate_hz / keyframe_rate_hz`-th frame is a keyframe.
    #[serde(default = "default_keyframe_rate")]
    pub keyframe_rate_hz: f64,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub seed: u64,
    /// Scene start time, microseconds.
    #[serde(default)]
    pub start_us: TimestampUs,
}

impl SceneSpec {
    pub fn new(duration_s: f64, rate_hz: f64, objects: Vec<ObjectSpec>) -> Self {
        SceneSpec {
            scene_id: default_scene_id(),
            duration_s,
            rate_hz,
            keyframe_rate_hz: default_keyframe_rate(),
            objects,
            seed: 0,
            start_us: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::Config("duration_s must be positive".into()));
        }
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(Error::Config("rate_hz must be positive".into()));
        }
        if !(self.keyframe_rate_hz > 0.0 && self.keyframe_rate_hz <= self.rate_hz) {
            return Err(Error::Config(
                "keyframe_rate_hz must be positive and at most rate_hz".into(),
            ));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.size.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::Config(format!("object {i}: sizes must be positive")));
            }
        }
        Ok(())
    }

    pub fn keyframe_every(&self) -> usize {
        ((self.rate_hz / self.keyframe_rate_hz).round() as usize).max(1)
    }

    /// Frame timestamps: `start + round(k * 1e6 / rate)` for `k = 0..=floor(duration * rate)`.
    pub fn timestamps(&self) -> Vec<TimestampUs> {
        let n = (self.duration_s * self.rate_hz + 1e-9).floor() as i64;
        (0..=n)
            .map(|k| self.start_us + (k as f64 * 1e6 / self.rate_hz).round() as i64)
            .collect()
    }

    /// Random scene: `n` objects of random class, position, heading, speed
    /// up to `max_speed` m/s and yaw rate up to `max_yaw_rate` rad/s.
    pub fn random(seed: u64, n: usize, max_speed: f64, max_yaw_rate: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let objects = (0..n)
            .map(|i| {
                let class = NUSCENES_CLASSES[rng.random_range(0..NUSCENES_CLASSES.len())];
                let speed = rng.random_range(0.0..=max_speed);
                let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                let yaw_rate = if max_yaw_rate > 0.0 {
                    rng.random_range(-max_yaw_rate..=max_yaw_rate)
                } else {
                    0.0
                };
                ObjectSpec {
                    instance_id: Some(format!("obj{i}")),
                    category: class.to_string(),
                    center: [
                        rng.random_range(-50.0..50.0),
                        rng.random_range(-50.0..50.0),
                        rng.random_range(-1.0..1.0),
                    ],
                    size: [
                        rng.random_range(0.5..3.0),
                        rng.random_range(0.5..6.0),
                        rng.random_range(1.0..3.0),
                    ],
                    yaw: heading,
                    velocity: [speed * heading.cos(), speed * heading.sin()],
                    yaw_rate,
                    attribute: None,
                }
            })
            .collect();
        SceneSpec {
            scene_id: format!("random-{seed}"),
            seed,
            ..SceneSpec::new(3.0, 12.0, objects)
        }
    }
}

/// Dense ground truth for a scene spec.
pub fn gen_scene(spec: &SceneSpec) -> Result<Vec<FrameAnnotations>> {
    spec.validate()?;
    let every = spec.keyframe_every();
    Ok(spec
        .timestamps()
        .into_iter()
        .enumerate()
        .map(|(k, ts)| {
            let t = us_to_s(ts - spec.start_us);
            FrameAnnotations {
                scene_id: spec.scene_id.clone(),
                timestamp_us: ts,
                is_keyframe: k % every == 0,
                boxes: spec
                    .objects
                    .iter()
                    .enumerate()
                    .map(|(i, o)| {
                        let id = o.instance_id.clone().unwrap_or_else(|| format!("obj{i}"));
                        o.box_at(id, t)
                    })
                    .collect(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScoreModel {
    Constant { score: f64 },
    Uniform { min: f64, max: f64 },
}

impl Default for ScoreModel {
    fn default() -> Self {
        ScoreModel::Constant { score: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorNoise {
    /// Per-axis Gaussian noise on the planar center, meters.
    pub pos_sigma: f64,
    /// Per-axis Gaussian noise on velocity, m/s.
    pub vel_sigma: f64,
    /// Probability that a box is missed.
    pub drop_rate: f64,
    pub score: ScoreModel,
}

impl DetectorNoise {
    pub fn validate(&self) -> Result<()> {
        if !(self.pos_sigma >= 0.0 && self.vel_sigma >= 0.0) {
            return Err(Error::Config("noise sigmas must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.drop_rate) {
            return Err(Error::Config("drop_rate outside [0, 1]".into()));
        }
        match self.score {
            ScoreModel::Constant { score } if !(0.0..=1.0).contains(&score) => {
                Err(Error::Config("score outside [0, 1]".into()))
            }
            ScoreModel::Uniform { min, max } if !(0.0 <= min && min <= max && max <= 1.0) => Err(
                Error::Config("uniform score bounds must satisfy 0 <= min <= max <= 1".into()),
            ),
            _ => Ok(()),
        }
    }
}

/// Per-frame detections derived from ground truth. Each frame draws from a
/// generator seeded by `(seed, timestamp)`, so a frame's detections do not
/// depend on which other frames are generated.
pub fn oracle_detector(
    scene: &[FrameAnnotations],
    noise: &DetectorNoise,
    seed: u64,
) -> Result<BTreeMap<TimestampUs, FrameDetections>> {
    noise.validate()?;
    let pos = Normal::new(0.0, noise.pos_sigma).expect("validated sigma");
    let vel = Normal::new(0.0, noise.vel_sigma).expect("validated sigma");
    let mut out = BTreeMap::new();
    for frame in scene {
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed ^ (frame.timestamp_us as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let mut boxes = Vec::with_capacity(frame.boxes.len());
        for gt in &frame.boxes {
            let dropped = noise.drop_rate > 0.0 && rng.random::<f64>() < noise.drop_rate;
            let (dx, dy) = (pos.sample(&mut rng), pos.sample(&mut rng));
            let (dvx, dvy) = (vel.sample(&mut rng), vel.sample(&mut rng));
            let score = match noise.score {
                ScoreModel::Constant { score } => score,
                ScoreModel::Uniform { min, max } => rng.random_range(min..=max),
            };
            if dropped {
                continue;
            }
            let mut b = gt.clone();
            b.instance_id = None;
            b.center.x += dx;
            b.center.y += dy;
            b.velocity[0] += dvx;
            b.velocity[1] += dvy;
            b.score = score;
            boxes.push(b);
        }
        out.insert(
            frame.timestamp_us,
            FrameDetections {
                scene_id: frame.scene_id.clone(),
                source_timestamp: frame.timestamp_us,
                boxes,
            },
        );
    }
    Ok(out)
}
