//! Streaming detection metrics.
//!
//! Every ground-truth frame is scored against the most recent prediction
//! that completed strictly before it. Detections are matched to ground
//! truth by planar center distance, AP is accumulated over all evaluation
//! timestamps into one precision/recall curve per class and threshold, and
//! the true-positive errors are pooled the same way. Velocity error is the
//! exception: it compares each detector output with the ground truth of
//! its own source frame.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::{Box3D, FrameAnnotations, FrameDetections, TimestampUs};
use crate::error::{Error, Result};
use crate::geom::{angle_diff, center_distance};
use crate::stream_sim::PredictionStream;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const DISTANCE_THRESHOLDS_M: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
pub const TP_THRESHOLD_M: f64 = 2.0;
pub const MIN_RECALL: f64 = 0.1;
pub const MIN_PRECISION: f64 = 0.1;
/// Recall grid is `k / RECALL_STEPS` for `k = 0..=RECALL_STEPS`.
pub const RECALL_STEPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub eval_timestamp_us: TimestampUs,
    pub matched_record_index: Option<usize>,
    /// `eval - completion` of the matched record.
    pub staleness_us: Option<i64>,
}

/// Latest record whose completion strictly precedes `t_eval`.
pub fn match_recent(stream: &PredictionStream, t_eval: TimestampUs) -> MatchResult {
    let n = stream
        .records
        .partition_point(|r| r.completion_timestamp_us < t_eval);
    let idx = n.checked_sub(1);
    MatchResult {
        eval_timestamp_us: t_eval,
        matched_record_index: idx,
        staleness_us: idx.map(|i| t_eval - stream.records[i].completion_timestamp_us),
    }
}

/// Outcome of matching one frame for one class at one distance threshold.
/// Indices refer to the input slices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoxMatching {
    /// `(gt_index, pred_index)`
    pub tp: Vec<(usize, usize)>,
    pub fp: Vec<usize>,
    pub fn_: Vec<usize>,
}

/// Greedy center-distance matching in descending score order.
pub fn match_boxes(gt: &[Box3D], pred: &[Box3D], class: &str, threshold_m: f64) -> BoxMatching {
    let gt_idx: Vec<usize> = (0..gt.len()).filter(|&i| gt[i].category == class).collect();
    let mut pred_idx: Vec<usize> = (0..pred.len())
        .filter(|&i| pred[i].category == class)
        .collect();
    pred_idx.sort_by(|&a, &b| pred[b].score.total_cmp(&pred[a].score));

    let mut taken = vec![false; gt_idx.len()];
    let mut out = BoxMatching::default();
    for p in pred_idx {
        let mut best: Option<(usize, f64)> = None;
        for (k, &g) in gt_idx.iter().enumerate() {
            if taken[k] {
                continue;
            }
            let d = center_distance(gt[g].center, pred[p].center);
            if d <= threshold_m && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((k, d));
            }
        }
        match best {
            Some((k, _)) => {
                taken[k] = true;
                out.tp.push((gt_idx[k], p));
            }
            None => out.fp.push(p),
        }
    }
    out.fn_ = gt_idx
        .iter()
        .zip(&taken)
        .filter(|(_, t)| !**t)
        .map(|(g, _)| *g)
        .collect();
    out
}

/// One ranked prediction on a precision/recall curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrEvent {
    pub score: f64,
    pub is_tp: bool,
}

/// Average precision over the recall grid, nuScenes style: precision is
/// the running maximum from the right, recall below `MIN_RECALL` and
/// precision below `MIN_PRECISION` are discarded, and the result is
/// rescaled so a perfect detector scores 1.
///
/// `None` when there is no ground truth.
pub fn compute_ap(events: &[PrEvent], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by(|&a, &b| events[b].score.total_cmp(&events[a].score));

    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &i in &order {
        if events[i].is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }

    let first = (MIN_RECALL * RECALL_STEPS as f64).round() as usize + 1;
    // sum(p) - m * MIN_PRECISION over the m grid points above the floor,
    // so a perfect curve lands on exactly 1
    let (mut sum_p, mut m) = (0.0, 0usize);
    let mut j = 0usize;
    for k in first..=RECALL_STEPS {
        let r = k as f64 / RECALL_STEPS as f64;
        while j < recall.len() && recall[j] < r {
            j += 1;
        }
        let p = if j < recall.len() { precision[j] } else { 0.0 };
        if p > MIN_PRECISION {
            sum_p += p;
            m += 1;
        }
    }
    let n = (RECALL_STEPS + 1 - first) as f64;
    Some((sum_p - m as f64 * MIN_PRECISION) / (n * (1.0 - MIN_PRECISION)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpErrors {
    pub ate: f64,
    pub ase: f64,
    pub aoe: f64,
    pub aae: f64,
}

impl TpErrors {
    pub const WORST: TpErrors = TpErrors {
        ate: 1.0,
        ase: 1.0,
        aoe: 1.0,
        aae: 1.0,
    };
}

/// 1 - IoU of two boxes after aligning centers and orientation.
pub fn scale_error(gt: &[f64; 3], pred: &[f64; 3]) -> f64 {
    let inter: f64 = (0..3).map(|a| gt[a].min(pred[a])).product();
    let union = gt.iter().product::<f64>() + pred.iter().product::<f64>() - inter;
    1.0 - inter / union
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
struct TpSums {
    translation: f64,
    scale: f64,
    orientation: f64,
    attribute: f64,
    count: usize,
}

impl TpSums {
    fn add(&mut self, gt: &Box3D, pred: &Box3D) {
        self.translation += center_distance(gt.center, pred.center);
        self.scale += scale_error(&gt.size, &pred.size);
        self.orientation += angle_diff(gt.yaw(), pred.yaw());
        if gt.attribute != pred.attribute {
            self.attribute += 1.0;
        }
        self.count += 1;
    }

    fn merge(&mut self, o: &TpSums) {
        self.translation += o.translation;
        self.scale += o.scale;
        self.orientation += o.orientation;
        self.attribute += o.attribute;
        self.count += o.count;
    }

    fn finish(&self) -> TpErrors {
        if self.count == 0 {
            return TpErrors::WORST;
        }
        let n = self.count as f64;
        TpErrors {
            ate: self.translation / n,
            ase: self.scale / n,
            aoe: self.orientation / n,
            aae: self.attribute / n,
        }
    }
}

/// Mean translation, scale, orientation and attribute error over TP pairs
/// `(gt, pred)`. All four are 1 when there are no pairs.
pub fn compute_tp_errors<'a>(pairs: impl IntoIterator<Item = (&'a Box3D, &'a Box3D)>) -> TpErrors {
    let mut s = TpSums::default();
    for (g, p) in pairs {
        s.add(g, p);
    }
    s.finish()
}

pub fn velocity_error(gt: &Box3D, pred: &Box3D) -> f64 {
    (gt.velocity[0] - pred.velocity[0]).hypot(gt.velocity[1] - pred.velocity[1])
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
struct VelSums {
    sum: f64,
    count: usize,
}

impl VelSums {
    fn finish(&self) -> f64 {
        if self.count == 0 {
            1.0
        } else {
            self.sum / self.count as f64
        }
    }
}

/// Mean planar velocity error over `(gt, pred)` pairs; 1 when empty.
pub fn mean_velocity_error<'a>(pairs: impl IntoIterator<Item = (&'a Box3D, &'a Box3D)>) -> f64 {
    let mut s = VelSums::default();
    for (g, p) in pairs {
        s.sum += velocity_error(g, p);
        s.count += 1;
    }
    s.finish()
}

/// Offline velocity error: every detector output is matched (2 m) against
/// the ground truth of its own source frame, with no streaming delay.
/// Averaged per class, then over classes that have ground truth.
pub fn compute_ave_offline(
    gt_frames: &[FrameAnnotations],
    outputs: &[FrameDetections],
    classes: &[String],
) -> f64 {
    let by_ts: HashMap<TimestampUs, &FrameAnnotations> =
        gt_frames.iter().map(|f| (f.timestamp_us, f)).collect();
    let mut per_class: Vec<f64> = Vec::new();
    for class in classes {
        let has_gt = gt_frames
            .iter()
            .any(|f| f.boxes.iter().any(|b| &b.category == class));
        if !has_gt {
            continue;
        }
        let mut s = VelSums::default();
        for det in outputs {
            let Some(gt) = by_ts.get(&det.source_timestamp) else {
                continue;
            };
            let m = match_boxes(&gt.boxes, &det.boxes, class, TP_THRESHOLD_M);
            for (g, p) in m.tp {
                s.sum += velocity_error(&gt.boxes[g], &det.boxes[p]);
                s.count += 1;
            }
        }
        per_class.push(s.finish());
    }
    if per_class.is_empty() {
        1.0
    } else {
        per_class.iter().sum::<f64>() / per_class.len() as f64
    }
}

/// Detection score from mAP and the five TP errors, each clamped at 1.
pub fn compute_nds_s(map_s: f64, ate_s: f64, ase_s: f64, aoe_s: f64, ave: f64, aae_s: f64) -> f64 {
    let tp: f64 = [ave, ate_s, ase_s, aoe_s, aae_s]
        .iter()
        .map(|e| 1.0 - e.min(1.0))
        .sum();
    (5.0 * map_s + tp) / 10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Classes to score; `None` means every class present in the ground truth.
    pub classes: Option<Vec<String>>,
    pub thresholds_m: Vec<f64>,
    pub tp_threshold_m: f64,
    /// Score refined boxes attached to stream records when present.
    pub use_refinements: bool,
    /// Ground-truth frames earlier than first frame + warm-up are not scored.
    pub warmup_us: i64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            classes: None,
            thresholds_m: DISTANCE_THRESHOLDS_M.to_vec(),
            tp_threshold_m: TP_THRESHOLD_M,
            use_refinements: false,
            warmup_us: 0,
        }
    }
}

impl EvalConfig {
    fn validate(&self) -> Result<()> {
        if self.thresholds_m.is_empty() || self.thresholds_m.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("distance thresholds must be positive".into()));
        }
        if !(self.tp_threshold_m > 0.0) {
            return Err(Error::Config("tp threshold must be positive".into()));
        }
        if self.warmup_us < 0 {
            return Err(Error::Config("warmup must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct ClassAccumulator {
    n_gt: usize,
    /// One ranked event list per distance threshold.
    events: Vec<Vec<PrEvent>>,
    tp: TpSums,
    vel: VelSums,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub eval_timestamps: usize,
    pub unmatched_timestamps: usize,
}

/// Pooled per-scene evaluation state. Scenes merge associatively; merge in
/// a fixed order to keep tie-breaking between equal scores reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamingAccumulator {
    cfg: EvalConfig,
    classes: BTreeMap<String, ClassAccumulator>,
    counts: Counts,
    scene_ids: Vec<String>,
}

impl StreamingAccumulator {
    pub fn new(cfg: EvalConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(StreamingAccumulator {
            cfg,
            classes: BTreeMap::new(),
            counts: Counts::default(),
            scene_ids: Vec::new(),
        })
    }

    fn class_entry(&mut self, class: &str) -> &mut ClassAccumulator {
        let n = self.cfg.thresholds_m.len();
        self.classes
            .entry(class.to_string())
            .or_insert_with(|| ClassAccumulator {
                events: vec![Vec::new(); n],
                ..ClassAccumulator::default()
            })
    }

    /// Scores one scene. `offline` are the detector's per-frame outputs for
    /// velocity error; when absent, the stream's own records are used.
    pub fn add_scene(
        &mut self,
        gt_frames: &[FrameAnnotations],
        stream: &PredictionStream,
        offline: Option<&[FrameDetections]>,
    ) -> Result<()> {
        let first = gt_frames.first().ok_or(Error::EmptyGroundTruth)?;
        let scene = &first.scene_id;
        if !stream.is_empty() && &stream.scene_id != scene {
            return Err(Error::SceneMismatch {
                expected: scene.clone(),
                found: stream.scene_id.clone(),
            });
        }
        if let Some(f) = gt_frames.iter().find(|f| &f.scene_id != scene) {
            return Err(Error::SceneMismatch {
                expected: scene.clone(),
                found: f.scene_id.clone(),
            });
        }
        let classes: Vec<String> = match &self.cfg.classes {
            Some(c) => c.clone(),
            None => gt_frames
                .iter()
                .flat_map(|f| f.boxes.iter().map(|b| b.category.clone()))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        let thresholds = self.cfg.thresholds_m.clone();
        let tp_thr = self.cfg.tp_threshold_m;
        let start = first.timestamp_us + self.cfg.warmup_us;
        let empty: Vec<Box3D> = Vec::new();

        for frame in gt_frames.iter().filter(|f| f.timestamp_us >= start) {
            self.counts.eval_timestamps += 1;
            let m = match_recent(stream, frame.timestamp_us);
            let preds: &[Box3D] = match m.matched_record_index {
                None => {
                    self.counts.unmatched_timestamps += 1;
                    &empty
                }
                Some(i) => {
                    let rec = &stream.records[i];
                    match (
                        self.cfg.use_refinements,
                        rec.refinement_at(frame.timestamp_us),
                    ) {
                        (true, Some(r)) => &r.boxes,
                        _ => &rec.detections.boxes,
                    }
                }
            };
            for class in &classes {
                let n_gt = frame.boxes.iter().filter(|b| &b.category == class).count();
                let acc = self.class_entry(class);
                acc.n_gt += n_gt;
                for (k, &thr) in thresholds.iter().enumerate() {
                    let bm = match_boxes(&frame.boxes, preds, class, thr);
                    acc.events[k].extend(bm.tp.iter().map(|&(_, p)| PrEvent {
                        score: preds[p].score,
                        is_tp: true,
                    }));
                    acc.events[k].extend(bm.fp.iter().map(|&p| PrEvent {
                        score: preds[p].score,
                        is_tp: false,
                    }));
                }
                let bm = match_boxes(&frame.boxes, preds, class, tp_thr);
                for &(g, p) in &bm.tp {
                    acc.tp.add(&frame.boxes[g], &preds[p]);
                }
                self.counts.tp += bm.tp.len();
                self.counts.fp += bm.fp.len();
                self.counts.fn_ += bm.fn_.len();
            }
        }

        // Offline velocity error against each output's own source frame.
        let by_ts: HashMap<TimestampUs, &FrameAnnotations> =
            gt_frames.iter().map(|f| (f.timestamp_us, f)).collect();
        let stream_outputs: Vec<&FrameDetections>;
        let outputs: Vec<&FrameDetections> = match offline {
            Some(o) => o.iter().collect(),
            None => {
                stream_outputs = stream.records.iter().map(|r| &r.detections).collect();
                stream_outputs
            }
        };
        for det in outputs {
            let Some(gt) = by_ts.get(&det.source_timestamp) else {
                continue;
            };
            for class in &classes {
                let bm = match_boxes(&gt.boxes, &det.boxes, class, tp_thr);
                let acc = self.class_entry(class);
                for (g, p) in bm.tp {
                    acc.vel.sum += velocity_error(&gt.boxes[g], &det.boxes[p]);
                    acc.vel.count += 1;
                }
            }
        }
        self.scene_ids.push(scene.clone());
        Ok(())
    }

    pub fn merge(&mut self, other: StreamingAccumulator) -> Result<()> {
        if other.cfg != self.cfg {
            return Err(Error::Config(
                "cannot merge evaluations with different configs".into(),
            ));
        }
        for (class, acc) in other.classes {
            let mine = self.class_entry(&class);
            mine.n_gt += acc.n_gt;
            for (dst, src) in mine.events.iter_mut().zip(acc.events) {
                dst.extend(src);
            }
            mine.tp.merge(&acc.tp);
            mine.vel.sum += acc.vel.sum;
            mine.vel.count += acc.vel.count;
        }
        self.counts.tp += other.counts.tp;
        self.counts.fp += other.counts.fp;
        self.counts.fn_ += other.counts.fn_;
        self.counts.eval_timestamps += other.counts.eval_timestamps;
        self.counts.unmatched_timestamps += other.counts.unmatched_timestamps;
        self.scene_ids.extend(other.scene_ids);
        Ok(())
    }

    pub fn finish(&self, metadata: ReportMetadata) -> MetricReport {
        let mut per_class_ap = Vec::new();
        let mut per_class_tp = Vec::new();
        let mut aps = Vec::new();
        let mut tp_rows = Vec::new();
        for (class, acc) in &self.classes {
            if acc.n_gt == 0 {
                continue;
            }
            for (k, &thr) in self.cfg.thresholds_m.iter().enumerate() {
                let ap = compute_ap(&acc.events[k], acc.n_gt).expect("n_gt > 0");
                aps.push(ap);
                per_class_ap.push(ClassAp {
                    class: class.clone(),
                    threshold_m: thr,
                    ap,
                });
            }
            let e = acc.tp.finish();
            let ave = acc.vel.finish();
            tp_rows.push((e, ave));
            per_class_tp.push(ClassTpErrors {
                class: class.clone(),
                ate_s: e.ate,
                ase_s: e.ase,
                aoe_s: e.aoe,
                aae_s: e.aae,
                ave_offline: ave,
                tp_pairs: acc.tp.count,
            });
        }
        let mean = |v: Vec<f64>, empty: f64| {
            if v.is_empty() {
                empty
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        let map_s = mean(aps, 0.0);
        let ate_s = mean(tp_rows.iter().map(|(e, _)| e.ate).collect(), 1.0);
        let ase_s = mean(tp_rows.iter().map(|(e, _)| e.ase).collect(), 1.0);
        let aoe_s = mean(tp_rows.iter().map(|(e, _)| e.aoe).collect(), 1.0);
        let aae_s = mean(tp_rows.iter().map(|(e, _)| e.aae).collect(), 1.0);
        let ave_offline = mean(tp_rows.iter().map(|(_, v)| *v).collect(), 1.0);
        let nds_s = compute_nds_s(map_s, ate_s, ase_s, aoe_s, ave_offline, aae_s);
        let mut metadata = metadata;
        metadata.scene_ids = self.scene_ids.clone();
        MetricReport {
            schema_version: REPORT_SCHEMA_VERSION,
            per_class_ap,
            per_class_tp,
            map_s,
            ate_s,
            ase_s,
            aoe_s,
            aae_s,
            ave_offline,
            nds_s,
            counts: self.counts,
            metadata,
            config: self.cfg.clone(),
        }
    }
}

/// Scores one scene end to end.
pub fn evaluate_streaming(
    gt_frames: &[FrameAnnotations],
    stream: &PredictionStream,
    offline: Option<&[FrameDetections]>,
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    let mut acc = StreamingAccumulator::new(cfg.clone())?;
    acc.add_scene(gt_frames, stream, offline)?;
    Ok(acc.finish(ReportMetadata::default()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class: String,
    pub threshold_m: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTpErrors {
    pub class: String,
    pub ate_s: f64,
    pub ase_s: f64,
    pub aoe_s: f64,
    pub aae_s: f64,
    pub ave_offline: f64,
    pub tp_pairs: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportMetadata {
    pub scene_ids: Vec<String>,
    pub profile: Option<String>,
    pub seed: Option<u64>,
    pub contention_factor: Option<f64>,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub per_class_ap: Vec<ClassAp>,
    pub per_class_tp: Vec<ClassTpErrors>,
    pub map_s: f64,
    pub ate_s: f64,
    pub ase_s: f64,
    pub aoe_s: f64,
    pub aae_s: f64,
    pub ave_offline: f64,
    pub nds_s: f64,
    pub counts: Counts,
    pub metadata: ReportMetadata,
    pub config: EvalConfig,
}

impl MetricReport {
    pub fn recompute_nds(&self) -> f64 {
        compute_nds_s(
            self.map_s,
            self.ate_s,
            self.ase_s,
            self.aoe_s,
            self.ave_offline,
            self.aae_s,
        )
    }

    pub fn ap(&self, class: &str, threshold_m: f64) -> Option<f64> {
        self.per_class_ap
            .iter()
            .find(|r| r.class == class && r.threshold_m == threshold_m)
            .map(|r| r.ap)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let found = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .unwrap_or(0) as u32;
        if found != REPORT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: REPORT_SCHEMA_VERSION,
                found,
            });
        }
        Ok(serde_json::from_value(value)?)
    }

    /// One row per (class, threshold) AP, then a summary row.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["class", "threshold_m", "ap", "map_s", "nds_s"])?;
        for r in &self.per_class_ap {
            out.write_record([
                r.class.as_str(),
                &r.threshold_m.to_string(),
                &r.ap.to_string(),
                "",
                "",
            ])?;
        }
        out.write_record([
            "__summary__",
            "",
            "",
            &self.map_s.to_string(),
            &self.nds_s.to_string(),
        ])?;
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}
