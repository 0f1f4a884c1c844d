//! Keyframe densification.
//!
//! Intermediate frames between two keyframes get every co-visible instance
//! interpolated (linear translation, slerp rotation). Objects the
//! interpolation cannot recover are taken from a high-rate temporal database
//! queried at the nearest timestamp, after dropping database boxes that
//! overlap an interpolated box.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{us_to_s, Box3D, FrameAnnotations, TemporalDatabase, TimestampUs};
use crate::error::{Error, Result};
use crate::geom::{bev_iou, lerp_translation, slerp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterpolationConfig {
    /// Database boxes whose BEV IoU with any interpolated box reaches this are dropped.
    pub clean_iou_threshold: f64,
    /// Database boxes scored below this are ignored.
    pub min_db_score: f64,
    pub target_rate_hz: f64,
}

impl Default for InterpolationConfig {
    fn default() -> Self {
        InterpolationConfig {
            clean_iou_threshold: 0.1,
            min_db_score: 0.3,
            target_rate_hz: 12.0,
        }
    }
}

impl InterpolationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.clean_iou_threshold) {
            return Err(Error::Config(format!(
                "clean_iou_threshold {} outside [0, 1]",
                self.clean_iou_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.min_db_score) {
            return Err(Error::Config(format!(
                "min_db_score {} outside [0, 1]",
                self.min_db_score
            )));
        }
        if !(self.target_rate_hz.is_finite() && self.target_rate_hz > 0.0) {
            return Err(Error::Config(format!(
                "target_rate_hz {} must be positive",
                self.target_rate_hz
            )));
        }
        Ok(())
    }
}

/// Pose of one instance at `t`, given its boxes at the bracketing keyframes.
pub fn interpolate_instance(
    box_s: &Box3D,
    box_e: &Box3D,
    t_s: TimestampUs,
    t_e: TimestampUs,
    t: TimestampUs,
) -> Result<Box3D> {
    if box_s.instance_id.is_none() || box_s.instance_id != box_e.instance_id {
        return Err(Error::InstanceMismatch {
            start: box_s.instance_id.clone(),
            end: box_e.instance_id.clone(),
        });
    }
    let (ts, te, tt) = (t_s as f64, t_e as f64, t as f64);
    let center = lerp_translation(box_s.center, box_e.center, ts, te, tt)?;
    let u = (tt - ts) / (te - ts);
    let rotation = slerp(box_s.rotation, box_e.rotation, u)?;
    let dt = us_to_s(t_e - t_s);
    let velocity = [
        (box_e.center.x - box_s.center.x) / dt,
        (box_e.center.y - box_s.center.y) / dt,
    ];
    Ok(Box3D {
        instance_id: box_s.instance_id.clone(),
        category: box_s.category.clone(),
        center,
        size: box_s.size,
        rotation,
        velocity,
        score: box_s.score,
        attribute: box_s.attribute.clone(),
    })
}

/// Boxes of the database entry nearest to `t`; ties go to the earlier entry.
pub fn query_temporal_db(
    db: &TemporalDatabase,
    t: TimestampUs,
    min_score: f64,
) -> Result<Vec<Box3D>> {
    let entries = db.entries();
    if entries.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let idx = entries.partition_point(|e| e.timestamp_us < t);
    let best = if idx == 0 {
        0
    } else if idx == entries.len() {
        idx - 1
    } else {
        let before = t - entries[idx - 1].timestamp_us;
        let after = entries[idx].timestamp_us - t;
        if after < before {
            idx
        } else {
            idx - 1
        }
    };
    Ok(entries[best]
        .boxes
        .iter()
        .filter(|b| b.score >= min_score)
        .cloned()
        .collect())
}

/// Appends queried boxes that do not duplicate an interpolated box.
pub fn auto_clean(
    interpolated: Vec<Box3D>,
    queried: Vec<Box3D>,
    cfg: &InterpolationConfig,
) -> Vec<Box3D> {
    let rects: Vec<_> = interpolated.iter().map(Box3D::bev).collect();
    let mut out = interpolated;
    for q in queried {
        let qr = q.bev();
        let max_iou = rects
            .iter()
            .map(|r| bev_iou(&qr, r))
            .fold(0.0_f64, f64::max);
        if max_iou < cfg.clean_iou_threshold {
            out.push(q);
        }
    }
    out
}

/// Timestamps strictly inside `(t_s, t_e)` on a grid of `rate_hz`, anchored at `t_s`.
pub fn intermediate_timestamps(
    t_s: TimestampUs,
    t_e: TimestampUs,
    rate_hz: f64,
) -> Vec<TimestampUs> {
    let span = t_e - t_s;
    let steps = (us_to_s(span) * rate_hz).round() as i64;
    if steps <= 1 {
        return Vec::new();
    }
    // round-half-up of j * span / steps, in integers
    (1..steps)
        .map(|j| t_s + (2 * j * span + steps) / (2 * steps))
        .filter(|t| *t > t_s && *t < t_e)
        .collect()
}

/// Densifies keyframe annotations to `cfg.target_rate_hz`.
///
/// An empty `db` disables the database query.
pub fn extend_annotations(
    keyframes: &[FrameAnnotations],
    db: &TemporalDatabase,
    cfg: &InterpolationConfig,
) -> Result<Vec<FrameAnnotations>> {
    cfg.validate()?;
    if keyframes.len() < 2 {
        return Err(Error::TooFewKeyframes(keyframes.len()));
    }
    for w in keyframes.windows(2) {
        if w[1].timestamp_us <= w[0].timestamp_us {
            return Err(Error::UnsortedScene {
                line: 0,
                previous_us: w[0].timestamp_us,
                timestamp_us: w[1].timestamp_us,
            });
        }
        if w[1].scene_id != w[0].scene_id {
            return Err(Error::SceneMismatch {
                expected: w[0].scene_id.clone(),
                found: w[1].scene_id.clone(),
            });
        }
    }

    let mut out = Vec::new();
    for w in keyframes.windows(2) {
        let (start, end) = (&w[0], &w[1]);
        out.push(FrameAnnotations {
            is_keyframe: true,
            ..start.clone()
        });

        let end_by_id: HashMap<&str, &Box3D> = end
            .boxes
            .iter()
            .filter_map(|b| b.instance_id.as_deref().map(|id| (id, b)))
            .collect();
        let pairs: Vec<(&Box3D, &Box3D)> = start
            .boxes
            .iter()
            .filter_map(|b| {
                let id = b.instance_id.as_deref()?;
                end_by_id.get(id).map(|e| (b, *e))
            })
            .collect();

        for t in intermediate_timestamps(start.timestamp_us, end.timestamp_us, cfg.target_rate_hz) {
            let interpolated = pairs
                .iter()
                .map(|(s, e)| interpolate_instance(s, e, start.timestamp_us, end.timestamp_us, t))
                .collect::<Result<Vec<_>>>()?;
            let boxes = if db.is_empty() {
                interpolated
            } else {
                auto_clean(
                    interpolated,
                    query_temporal_db(db, t, cfg.min_db_score)?,
                    cfg,
                )
            };
            out.push(FrameAnnotations {
                scene_id: start.scene_id.clone(),
                timestamp_us: t,
                is_keyframe: false,
                boxes,
            });
        }
    }
    let last = keyframes.last().expect("len >= 2");
    out.push(FrameAnnotations {
        is_keyframe: true,
        ..last.clone()
    });
    Ok(out)
}
