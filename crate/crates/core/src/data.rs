//! Domain records and their JSON-Lines file formats.
//!
//! One scene per file, one frame per line. Timestamps are integer
//! microseconds. Vectors are written as arrays: centers `[x, y, z]`,
//! sizes `[width, length, height]`, rotations `[w, x, y, z]`, velocities
//! `[vx, vy]`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{BevRect, Quaternion, Vec3};

/// Microseconds since an arbitrary scene epoch.
pub type TimestampUs = i64;

pub const US_PER_S: f64 = 1e6;

pub fn us_to_s(us: i64) -> f64 {
    us as f64 / US_PER_S
}

/// The ten nuScenes detection classes.
pub const NUSCENES_CLASSES: [&str; 10] = [
    "car",
    "truck",
    "bus",
    "trailer",
    "construction_vehicle",
    "pedestrian",
    "motorcycle",
    "bicycle",
    "traffic_cone",
    "barrier",
];

fn default_score() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
    pub category: String,
    pub center: Vec3,
    /// `[width, length, height]` in meters.
    pub size: [f64; 3],
    pub rotation: Quaternion,
    #[serde(default)]
    pub velocity: [f64; 2],
    #[serde(default = "default_score")]
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
}

impl Box3D {
    pub fn new(category: impl Into<String>, center: Vec3, size: [f64; 3], yaw: f64) -> Self {
        Box3D {
            instance_id: None,
            category: category.into(),
            center,
            size,
            rotation: Quaternion::from_yaw(yaw),
            velocity: [0.0, 0.0],
            score: 1.0,
            attribute: None,
        }
    }

    pub fn with_instance(mut self, id: impl Into<String>) -> Self {
        self.instance_id = Some(id.into());
        self
    }

    pub fn with_velocity(mut self, vx: f64, vy: f64) -> Self {
        self.velocity = [vx, vy];
        self
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    pub fn with_attribute(mut self, attr: impl Into<String>) -> Self {
        self.attribute = Some(attr.into());
        self
    }

    pub fn yaw(&self) -> f64 {
        self.rotation.yaw()
    }

    pub fn bev(&self) -> BevRect {
        BevRect {
            center_x: self.center.x,
            center_y: self.center.y,
            width: self.size[0],
            length: self.size[1],
            yaw: self.yaw(),
        }
    }

    /// Returns the first violated invariant as `(field, message)`.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        for (i, s) in self.size.iter().enumerate() {
            if !(*s > 0.0) || !s.is_finite() {
                let name = ["width", "length", "height"][i];
                return Err(("size", format!("{name} must be positive, got {s}")));
            }
        }
        if !self.center.is_finite() {
            return Err(("center", "non-finite".into()));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(("score", format!("must lie in [0, 1], got {}", self.score)));
        }
        if !self.velocity.iter().all(|v| v.is_finite()) {
            return Err(("velocity", "non-finite".into()));
        }
        if self.category.is_empty() {
            return Err(("category", "empty".into()));
        }
        Ok(())
    }
}

/// Ground truth for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotations {
    pub scene_id: String,
    pub timestamp_us: TimestampUs,
    #[serde(default)]
    pub is_keyframe: bool,
    pub boxes: Vec<Box3D>,
}

/// Detector output for one consumed frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub scene_id: String,
    /// Capture time of the frame the detector consumed.
    #[serde(rename = "timestamp_us")]
    pub source_timestamp: TimestampUs,
    pub boxes: Vec<Box3D>,
}

impl FrameDetections {
    pub fn empty(scene_id: impl Into<String>, source_timestamp: TimestampUs) -> Self {
        FrameDetections {
            scene_id: scene_id.into(),
            source_timestamp,
            boxes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbEntry {
    pub timestamp_us: TimestampUs,
    pub boxes: Vec<Box3D>,
}

/// High-rate auxiliary detections, queried by nearest timestamp.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TemporalDatabase {
    entries: Vec<DbEntry>,
}

impl TemporalDatabase {
    pub fn new(entries: Vec<DbEntry>) -> Result<Self> {
        for (i, w) in entries.windows(2).enumerate() {
            if w[1].timestamp_us <= w[0].timestamp_us {
                return Err(Error::UnsortedScene {
                    line: i + 2,
                    previous_us: w[0].timestamp_us,
                    timestamp_us: w[1].timestamp_us,
                });
            }
        }
        Ok(TemporalDatabase { entries })
    }

    pub fn entries(&self) -> &[DbEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

impl From<Vec<FrameDetections>> for TemporalDatabase {
    /// Assumes `frames` are already sorted; loaders validate that.
    fn from(frames: Vec<FrameDetections>) -> Self {
        TemporalDatabase {
            entries: frames
                .into_iter()
                .map(|f| DbEntry {
                    timestamp_us: f.source_timestamp,
                    boxes: f.boxes,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RuntimeDistribution {
    /// Measured inference times, sampled uniformly.
    Empirical(Vec<f64>),
    Constant {
        ms: f64,
    },
    /// `ln(ms) ~ Normal(mu, sigma)`.
    LogNormal {
        mu: f64,
        sigma: f64,
    },
}

/// Per-frame inference time distribution for one hardware/load setting.
#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeProfile {
    pub name: String,
    pub distribution: RuntimeDistribution,
    pub overhead_ms: f64,
    /// Multiplicative slowdown from co-running work, applied at sampling time.
    pub contention_factor: f64,
}

impl RuntimeProfile {
    pub fn constant(name: impl Into<String>, ms: f64) -> Result<Self> {
        let p = RuntimeProfile {
            name: name.into(),
            distribution: RuntimeDistribution::Constant { ms },
            overhead_ms: 0.0,
            contention_factor: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn empirical(name: impl Into<String>, samples_ms: Vec<f64>) -> Result<Self> {
        let p = RuntimeProfile {
            name: name.into(),
            distribution: RuntimeDistribution::Empirical(samples_ms),
            overhead_ms: 0.0,
            contention_factor: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_overhead(mut self, overhead_ms: f64) -> Result<Self> {
        self.overhead_ms = overhead_ms;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        match &self.distribution {
            RuntimeDistribution::Empirical(s) => {
                if s.is_empty() {
                    return Err(Error::EmptyProfile);
                }
                if let Some(bad) = s.iter().find(|v| !positive(**v)) {
                    return Err(Error::InvalidProfile(format!(
                        "non-positive sample {bad} ms"
                    )));
                }
            }
            RuntimeDistribution::Constant { ms } => {
                if !positive(*ms) {
                    return Err(Error::InvalidProfile(format!("constant {ms} ms")));
                }
            }
            RuntimeDistribution::LogNormal { mu, sigma } => {
                if !mu.is_finite() || !(sigma.is_finite() && *sigma >= 0.0) {
                    return Err(Error::InvalidProfile(format!(
                        "lognormal mu={mu} sigma={sigma}"
                    )));
                }
            }
        }
        if !(self.overhead_ms.is_finite() && self.overhead_ms >= 0.0) {
            return Err(Error::InvalidProfile(format!(
                "overhead_ms {} must be >= 0",
                self.overhead_ms
            )));
        }
        if !(self.contention_factor.is_finite() && self.contention_factor >= 1.0) {
            return Err(Error::InvalidContention(self.contention_factor));
        }
        Ok(())
    }

    /// Smallest runtime this profile can produce before contention and overhead.
    pub fn min_ms(&self) -> f64 {
        match &self.distribution {
            RuntimeDistribution::Empirical(s) => s.iter().copied().fold(f64::INFINITY, f64::min),
            RuntimeDistribution::Constant { ms } => *ms,
            RuntimeDistribution::LogNormal { .. } => 0.0,
        }
    }

    pub fn mean_ms(&self) -> f64 {
        let base = match &self.distribution {
            RuntimeDistribution::Empirical(s) => s.iter().sum::<f64>() / s.len() as f64,
            RuntimeDistribution::Constant { ms } => *ms,
            RuntimeDistribution::LogNormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
        };
        base * self.contention_factor + self.overhead_ms
    }
}

#[derive(Serialize, Deserialize)]
struct ProfileFile {
    #[serde(default)]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    samples_ms: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    distribution: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    params: Option<serde_json::Map<String, serde_json::Value>>,
    #[serde(default)]
    overhead_ms: f64,
    #[serde(default = "one")]
    contention_factor: f64,
}

fn one() -> f64 {
    1.0
}

impl Serialize for RuntimeProfile {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut f = ProfileFile {
            name: Some(self.name.clone()),
            samples_ms: None,
            distribution: None,
            params: None,
            overhead_ms: self.overhead_ms,
            contention_factor: self.contention_factor,
        };
        match &self.distribution {
            RuntimeDistribution::Empirical(v) => f.samples_ms = Some(v.clone()),
            RuntimeDistribution::Constant { ms } => {
                f.distribution = Some("constant".into());
                f.params = Some(serde_json::json!({ "ms": ms }).as_object().unwrap().clone());
            }
            RuntimeDistribution::LogNormal { mu, sigma } => {
                f.distribution = Some("lognormal".into());
                f.params = Some(
                    serde_json::json!({ "mu": mu, "sigma": sigma })
                        .as_object()
                        .unwrap()
                        .clone(),
                );
            }
        }
        f.serialize(s)
    }
}

impl RuntimeProfile {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: ProfileFile = serde_json::from_str(text)?;
        let param = |key: &str| -> Result<f64> {
            raw.params
                .as_ref()
                .and_then(|p| p.get(key))
                .and_then(|v| v.as_f64())
                .ok_or_else(|| Error::InvalidProfile(format!("missing numeric param `{key}`")))
        };
        let distribution = match (&raw.samples_ms, raw.distribution.as_deref()) {
            (Some(s), None) => RuntimeDistribution::Empirical(s.clone()),
            (None, Some("constant")) => RuntimeDistribution::Constant { ms: param("ms")? },
            (None, Some("lognormal")) => RuntimeDistribution::LogNormal {
                mu: param("mu")?,
                sigma: param("sigma")?,
            },
            (None, Some(other)) => {
                return Err(Error::InvalidProfile(format!(
                    "unknown distribution `{other}`"
                )))
            }
            (Some(_), Some(_)) => {
                return Err(Error::InvalidProfile(
                    "give either samples_ms or distribution, not both".into(),
                ))
            }
            (None, None) => return Err(Error::EmptyProfile),
        };
        let profile = RuntimeProfile {
            name: raw.name.unwrap_or_else(|| "unnamed".into()),
            distribution,
            overhead_ms: raw.overhead_ms,
            contention_factor: raw.contention_factor,
        };
        profile.validate()?;
        Ok(profile)
    }
}

pub fn load_runtime_profile(path: impl AsRef<Path>) -> Result<RuntimeProfile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RuntimeProfile::from_json_str(&text)
}

/// Reads a JSON-Lines file, skipping blank lines. Line numbers are 1-based.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<(usize, T)>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn check_boxes(line: usize, boxes: &[Box3D], unique_ids: bool) -> Result<()> {
    let mut seen = HashSet::new();
    for (k, b) in boxes.iter().enumerate() {
        b.check().map_err(|(field, msg)| Error::Field {
            line,
            field: format!("boxes[{k}].{field}"),
            msg,
        })?;
        if unique_ids {
            if let Some(id) = &b.instance_id {
                if !seen.insert(id.as_str()) {
                    return Err(Error::Field {
                        line,
                        field: format!("boxes[{k}].instance_id"),
                        msg: format!("duplicate instance `{id}`"),
                    });
                }
            }
        }
    }
    Ok(())
}

fn check_order_and_scene<'a>(
    items: impl Iterator<Item = (usize, &'a str, TimestampUs)>,
) -> Result<()> {
    let mut prev: Option<(&str, TimestampUs)> = None;
    for (line, scene, ts) in items {
        if let Some((pscene, pts)) = prev {
            if scene != pscene {
                return Err(Error::SceneMismatch {
                    expected: pscene.to_string(),
                    found: scene.to_string(),
                });
            }
            if ts <= pts {
                return Err(Error::UnsortedScene {
                    line,
                    previous_us: pts,
                    timestamp_us: ts,
                });
            }
        }
        prev = Some((scene, ts));
    }
    Ok(())
}

/// Loads and validates one scene's ground-truth frames.
pub fn load_scene_annotations(path: impl AsRef<Path>) -> Result<Vec<FrameAnnotations>> {
    let rows: Vec<(usize, FrameAnnotations)> = read_jsonl(path)?;
    for (line, f) in &rows {
        check_boxes(*line, &f.boxes, true)?;
    }
    check_order_and_scene(
        rows.iter()
            .map(|(l, f)| (*l, f.scene_id.as_str(), f.timestamp_us)),
    )?;
    Ok(rows.into_iter().map(|(_, f)| f).collect())
}

/// Loads and validates one scene's per-frame detector outputs.
pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<FrameDetections>> {
    let rows: Vec<(usize, FrameDetections)> = read_jsonl(path)?;
    for (line, f) in &rows {
        check_boxes(*line, &f.boxes, false)?;
    }
    check_order_and_scene(
        rows.iter()
            .map(|(l, f)| (*l, f.scene_id.as_str(), f.source_timestamp)),
    )?;
    Ok(rows.into_iter().map(|(_, f)| f).collect())
}

pub fn load_temporal_database(path: impl AsRef<Path>) -> Result<TemporalDatabase> {
    Ok(TemporalDatabase::from(load_detections(path)?))
}
