//! Velocity-based updating of stale predictions.
//!
//! Each stale box is pushed forward by its velocity for the time elapsed
//! since its source frame was captured. Optionally, boxes are associated
//! across consecutive predictions (greedy BEV IoU) and their position and
//! velocity are smoothed by a Kalman filter over `[x, y, z, vx, vy]` before
//! extrapolation.

use nalgebra::{SMatrix, SVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{us_to_s, Box3D, TimestampUs};
use crate::error::{Error, Result};
use crate::geom::{bev_iou, Vec3};
use crate::metrics::match_recent;
use crate::stream_sim::{PredictionStream, Refinement, StreamRecord};

pub type State = SVector<f64, 5>;
pub type Covariance = SMatrix<f64, 5, 5>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KalmanConfig {
    /// m^2/s, per axis
    pub process_noise_pos: f64,
    /// m^2/s^3, per axis
    pub process_noise_vel: f64,
    /// m^2
    pub meas_noise_pos: f64,
    /// m^2/s^2
    pub meas_noise_vel: f64,
    pub assoc_iou_threshold: f64,
    /// Tracks not updated for longer than this are dropped.
    pub max_coast_us: i64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        KalmanConfig {
            process_noise_pos: 0.5,
            process_noise_vel: 0.5,
            meas_noise_pos: 0.5,
            meas_noise_vel: 1.0,
            assoc_iou_threshold: 0.1,
            max_coast_us: 1_000_000,
        }
    }
}

impl KalmanConfig {
    pub fn validate(&self) -> Result<()> {
        let noises = [
            self.process_noise_pos,
            self.process_noise_vel,
            self.meas_noise_pos,
            self.meas_noise_vel,
        ];
        if noises.iter().any(|n| !(n.is_finite() && *n > 0.0)) {
            return Err(Error::Config("Kalman noise terms must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.assoc_iou_threshold) {
            return Err(Error::Config("assoc_iou_threshold outside [0, 1]".into()));
        }
        if self.max_coast_us < 0 {
            return Err(Error::Config("max_coast_us must be >= 0".into()));
        }
        Ok(())
    }

    fn measurement_noise(&self) -> Covariance {
        let r = self.meas_noise_pos;
        let v = self.meas_noise_vel;
        Covariance::from_diagonal(&State::from([r, r, r, v, v]))
    }
}

/// Constant-velocity extrapolation of the box center by `dt` seconds.
pub fn cv_update(b: &Box3D, dt: f64) -> Box3D {
    let mut out = b.clone();
    out.center.x += dt * b.velocity[0];
    out.center.y += dt * b.velocity[1];
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Association {
    /// `(prev_index, curr_index)` in acceptance order.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_prev: Vec<usize>,
    pub unmatched_curr: Vec<usize>,
}

/// Greedy one-to-one association by descending BEV IoU, same category only.
/// `prev` should already be propagated to the time of `curr`.
pub fn greedy_associate(prev: &[Box3D], curr: &[Box3D], cfg: &KalmanConfig) -> Association {
    let prev_rects: Vec<_> = prev.iter().map(Box3D::bev).collect();
    let curr_rects: Vec<_> = curr.iter().map(Box3D::bev).collect();
    let mut candidates = Vec::new();
    for (i, p) in prev.iter().enumerate() {
        for (j, c) in curr.iter().enumerate() {
            if p.category != c.category {
                continue;
            }
            let iou = bev_iou(&prev_rects[i], &curr_rects[j]);
            if iou >= cfg.assoc_iou_threshold && iou > 0.0 {
                candidates.push((iou, i, j));
            }
        }
    }
    // ties broken by index for determinism
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_prev = vec![false; prev.len()];
    let mut used_curr = vec![false; curr.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_prev[i] && !used_curr[j] {
            used_prev[i] = true;
            used_curr[j] = true;
            pairs.push((i, j));
        }
    }
    Association {
        pairs,
        unmatched_prev: (0..prev.len()).filter(|&i| !used_prev[i]).collect(),
        unmatched_curr: (0..curr.len()).filter(|&j| !used_curr[j]).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    /// `[x, y, z, vx, vy]`
    pub state: State,
    pub covariance: Covariance,
    pub last_update_us: TimestampUs,
    pub track_id: u64,
    pub hits: u32,
    /// Latest associated detection; supplies size, rotation and category.
    pub last_box: Box3D,
}

impl TrackState {
    /// New track from a first detection, with a covariance ten times the
    /// measurement noise.
    pub fn birth(track_id: u64, b: &Box3D, t: TimestampUs, cfg: &KalmanConfig) -> Self {
        TrackState {
            state: measurement(b),
            covariance: cfg.measurement_noise() * 10.0,
            last_update_us: t,
            track_id,
            hits: 1,
            last_box: b.clone(),
        }
    }

    /// The track's box at `t`, extrapolated at constant velocity.
    pub fn box_at(&self, t: TimestampUs) -> Box3D {
        let dt = us_to_s(t - self.last_update_us);
        cv_update(&self.refined_box(), dt)
    }

    /// The latest detection with center and velocity replaced by the filtered state.
    pub fn refined_box(&self) -> Box3D {
        let mut b = self.last_box.clone();
        b.center = Vec3::new(self.state[0], self.state[1], self.state[2]);
        b.velocity = [self.state[3], self.state[4]];
        b
    }
}

fn measurement(b: &Box3D) -> State {
    State::from([
        b.center.x,
        b.center.y,
        b.center.z,
        b.velocity[0],
        b.velocity[1],
    ])
}

fn transition(dt: f64) -> Covariance {
    let mut f = Covariance::identity();
    f[(0, 3)] = dt;
    f[(1, 4)] = dt;
    f
}

fn repair_covariance(p: Covariance) -> Result<Covariance> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite covariance".into()));
    }
    let sym = (p + p.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return Ok(sym);
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let rebuilt =
        eig.eigenvectors * Covariance::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    Ok((rebuilt + rebuilt.transpose()) * 0.5)
}

/// One constant-velocity predict step followed by a full-state update.
pub fn kalman_step(
    track: &TrackState,
    meas: &Box3D,
    dt: f64,
    cfg: &KalmanConfig,
) -> Result<TrackState> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("kalman_step needs dt > 0, got {dt}")));
    }
    let f = transition(dt);
    let q = Covariance::from_diagonal(&State::from([
        cfg.process_noise_pos * dt,
        cfg.process_noise_pos * dt,
        cfg.process_noise_pos * dt,
        cfg.process_noise_vel * dt,
        cfg.process_noise_vel * dt,
    ]));
    let x_pred = f * track.state;
    let p_pred = f * track.covariance * f.transpose() + q;

    let r = cfg.measurement_noise();
    let innovation = measurement(meas) - x_pred;
    let s = p_pred + r;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular innovation covariance".into()))?;
    let k = p_pred * s_inv;
    let x = x_pred + k * innovation;
    // Joseph form
    let i_k = Covariance::identity() - k;
    let p = i_k * p_pred * i_k.transpose() + k * r * k.transpose();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite state".into()));
    }
    let t = track.last_update_us + (dt * 1e6).round() as i64;
    Ok(TrackState {
        state: x,
        covariance: repair_covariance(p)?,
        last_update_us: t,
        track_id: track.track_id,
        hits: track.hits + 1,
        last_box: meas.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// Extrapolate each box with its own detected velocity.
    ConstantVelocity,
    /// Associate across records and extrapolate filtered state.
    #[default]
    Kalman,
}

/// Multi-record tracker feeding the velocity baseline.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: KalmanConfig,
    tracks: Vec<TrackState>,
    next_id: u64,
}

impl Tracker {
    pub fn new(cfg: KalmanConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Tracker {
            cfg,
            tracks: Vec::new(),
            next_id: 0,
        })
    }

    pub fn tracks(&self) -> &[TrackState] {
        &self.tracks
    }

    /// Ingests the boxes of a frame captured at `t`. Returns, per box, the
    /// box with filtered center/velocity when it continued a track, or the
    /// raw box when it started one.
    pub fn update(&mut self, boxes: &[Box3D], t: TimestampUs) -> Result<Vec<Box3D>> {
        let max_coast = self.cfg.max_coast_us;
        self.tracks.retain(|tr| t - tr.last_update_us <= max_coast);
        let predicted: Vec<Box3D> = self.tracks.iter().map(|tr| tr.box_at(t)).collect();
        let assoc = greedy_associate(&predicted, boxes, &self.cfg);

        let mut out: Vec<Box3D> = boxes.to_vec();
        for &(ti, bi) in &assoc.pairs {
            let tr = &self.tracks[ti];
            let dt = us_to_s(t - tr.last_update_us);
            let updated = if dt > 0.0 {
                let mut u = kalman_step(tr, &boxes[bi], dt, &self.cfg)?;
                u.last_update_us = t;
                u
            } else {
                TrackState::birth(tr.track_id, &boxes[bi], t, &self.cfg)
            };
            let mut refined = updated.refined_box();
            refined.score = boxes[bi].score;
            out[bi] = refined;
            self.tracks[ti] = updated;
        }
        for &bi in &assoc.unmatched_curr {
            self.tracks
                .push(TrackState::birth(self.next_id, &boxes[bi], t, &self.cfg));
            self.next_id += 1;
        }
        Ok(out)
    }
}

/// Attaches, to every record, the updated boxes for each evaluation
/// timestamp that the record serves under most-recent matching.
///
/// Only centers and velocities change; counts, categories, scores, sizes
/// and rotations are those of the matched record.
pub fn sv_pipeline(
    stream: &PredictionStream,
    eval_timestamps: &[TimestampUs],
    cfg: &KalmanConfig,
    mode: UpdateMode,
) -> Result<PredictionStream> {
    let mut tracker = Tracker::new(*cfg)?;
    let mut records: Vec<StreamRecord> = stream
        .records
        .iter()
        .map(|r| StreamRecord {
            refinements: Vec::new(),
            ..r.clone()
        })
        .collect();

    let mut refined: Vec<Vec<Box3D>> = Vec::with_capacity(records.len());
    for r in &records {
        let boxes = match mode {
            UpdateMode::Kalman => tracker.update(&r.detections.boxes, r.source_timestamp_us)?,
            UpdateMode::ConstantVelocity => r.detections.boxes.clone(),
        };
        refined.push(boxes);
    }

    let mut ts: Vec<TimestampUs> = eval_timestamps.to_vec();
    ts.sort_unstable();
    ts.dedup();
    for t in ts {
        let Some(i) = match_recent(stream, t).matched_record_index else {
            continue;
        };
        let dt = us_to_s(t - records[i].source_timestamp_us);
        let boxes = refined[i]
            .iter()
            .zip(&records[i].detections.boxes)
            .map(|(r, raw)| {
                let mut b = cv_update(r, dt);
                b.score = raw.score;
                b
            })
            .collect();
        records[i].refinements.push(Refinement {
            eval_timestamp_us: t,
            boxes,
        });
    }
    PredictionStream::new(stream.scene_id.clone(), records)
}
