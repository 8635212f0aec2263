//! OpenLane-style lane evaluation.
//!
//! Both ground truth and predictions are resampled at a fixed set of `y`
//! rows (3, 4, ..., 103 m by default). A row is point-matched when both
//! lanes cover it and their x-z distance is within the match threshold.
//! Lanes are paired by an optimal assignment maximising total matched
//! rows. A ground-truth lane counts as recalled when its paired prediction
//! matches at least `lane_iou` of the ground truth's covered rows; a
//! prediction counts as precise when at least `lane_iou` of its own
//! covered rows are matched.

pub mod assignment;

use std::borrow::Cow;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lane::{sample_polyline, DenseLane, Point3, SparseLane};

pub use assignment::max_weight_assignment;

/// Slack applied when deciding whether an eval row lies inside a lane.
const COVER_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub eval_y_values: Vec<f64>,
    pub point_match_threshold: f64,
    pub lane_iou: f64,
    pub near_far_split: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            eval_y_values: (3..=103).map(f64::from).collect(),
            point_match_threshold: 1.5,
            lane_iou: 0.75,
            near_far_split: 40.0,
        }
    }
}

impl EvalConfig {
    pub fn with_lane_iou(mut self, lane_iou: f64) -> Self {
        self.lane_iou = lane_iou;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval_y_values.is_empty() {
            return Err(Error::config("eval grid is empty"));
        }
        if !(self.point_match_threshold > 0.0) {
            return Err(Error::config("point_match_threshold must be > 0"));
        }
        if !(self.lane_iou > 0.0 && self.lane_iou <= 1.0) {
            return Err(Error::config("lane_iou must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Anything that can be laid out as a y-sorted polyline for evaluation.
pub trait EvalLane {
    fn polyline(&self) -> Cow<'_, [Point3]>;

    fn category(&self) -> u32;
}

impl EvalLane for DenseLane {
    fn polyline(&self) -> Cow<'_, [Point3]> {
        Cow::Borrowed(self.points())
    }

    fn category(&self) -> u32 {
        DenseLane::category(self)
    }
}

/// Sparse lanes are evaluated over their visible span, with stored endpoint
/// deltas applied (see [`SparseLane::to_polyline`]).
impl EvalLane for SparseLane {
    fn polyline(&self) -> Cow<'_, [Point3]> {
        let mut lane = self.clone();
        lane.repair_visibility();
        Cow::Owned(lane.to_polyline())
    }

    fn category(&self) -> u32 {
        SparseLane::category(self)
    }
}

impl<T: EvalLane + ?Sized> EvalLane for &T {
    fn polyline(&self) -> Cow<'_, [Point3]> {
        (**self).polyline()
    }

    fn category(&self) -> u32 {
        (**self).category()
    }
}

/// A lane resampled on the eval grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneSamples {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub covered: Vec<bool>,
    /// Longitudinal extent of the source polyline.
    pub length: f64,
    /// Number of polyline vertices the samples were taken from.
    pub vertices: usize,
}

impl LaneSamples {
    pub fn covered_count(&self) -> usize {
        self.covered.iter().filter(|&&c| c).count()
    }
}

fn resample_points(points: &[Point3], cfg: &EvalConfig) -> LaneSamples {
    let n = cfg.eval_y_values.len();
    let mut out = LaneSamples {
        x: vec![0.0; n],
        z: vec![0.0; n],
        covered: vec![false; n],
        length: 0.0,
        vertices: points.len(),
    };
    let (Some(first), Some(last)) = (points.first(), points.last()) else {
        return out;
    };
    let (lo, hi) = (first[1], last[1]);
    out.length = hi - lo;
    for (k, &y) in cfg.eval_y_values.iter().enumerate() {
        if y < lo - COVER_EPS || y > hi + COVER_EPS {
            continue;
        }
        let (x, z) = if points.len() == 1 {
            (first[0], first[2])
        } else {
            sample_polyline(points, y.clamp(lo, hi))
        };
        out.x[k] = x;
        out.z[k] = z;
        out.covered[k] = true;
    }
    out
}

pub fn resample_for_eval<L: EvalLane + ?Sized>(lane: &L, cfg: &EvalConfig) -> LaneSamples {
    resample_points(&lane.polyline(), cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairScore {
    pub matched: usize,
    pub gt_covered: usize,
    pub pred_covered: usize,
}

impl PairScore {
    pub fn gt_ratio(&self) -> f64 {
        ratio(self.matched, self.gt_covered)
    }

    pub fn pred_ratio(&self) -> f64 {
        ratio(self.matched, self.pred_covered)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn point_matched(gt: &LaneSamples, pred: &LaneSamples, k: usize, threshold: f64) -> bool {
    gt.covered[k] && pred.covered[k] && (gt.x[k] - pred.x[k]).hypot(gt.z[k] - pred.z[k]) <= threshold
}

pub fn pair_score(gt: &LaneSamples, pred: &LaneSamples, cfg: &EvalConfig) -> PairScore {
    let matched = (0..gt.covered.len())
        .filter(|&k| point_matched(gt, pred, k, cfg.point_match_threshold))
        .count();
    PairScore {
        matched,
        gt_covered: gt.covered_count(),
        pred_covered: pred.covered_count(),
    }
}

/// Same-side truncation test: a lane of `length` that loses `loss` meters
/// fails to reach `lane_iou` coverage.
pub fn truncation_bound(length: f64, loss: f64, lane_iou: f64) -> bool {
    (length - loss) / length < lane_iou
}

/// Associative per-run tallies; scene results are combined by summation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub scenes: usize,
    pub n_gt: usize,
    pub n_pred: usize,
    /// Ground-truth lanes whose paired prediction covers `lane_iou` of them.
    pub gt_matched: usize,
    /// Predictions with `lane_iou` of their own rows matched.
    pub pred_matched: usize,
    /// Pairs passing on both sides; the X/Z errors are taken over these.
    pub tp_pairs: usize,
    pub category_matched: usize,
    /// Lanes skipped because they cover no eval row (or, for predictions,
    /// have fewer than two points).
    pub gt_ignored: usize,
    pub pred_ignored: usize,
    pub total_matched_points: usize,
    pub x_err_near_sum: f64,
    pub x_err_far_sum: f64,
    pub z_err_near_sum: f64,
    pub z_err_far_sum: f64,
    pub near_points: usize,
    pub far_points: usize,
}

impl AddAssign<&EvalCounts> for EvalCounts {
    fn add_assign(&mut self, o: &EvalCounts) {
        self.scenes += o.scenes;
        self.n_gt += o.n_gt;
        self.n_pred += o.n_pred;
        self.gt_matched += o.gt_matched;
        self.pred_matched += o.pred_matched;
        self.tp_pairs += o.tp_pairs;
        self.category_matched += o.category_matched;
        self.gt_ignored += o.gt_ignored;
        self.pred_ignored += o.pred_ignored;
        self.total_matched_points += o.total_matched_points;
        self.x_err_near_sum += o.x_err_near_sum;
        self.x_err_far_sum += o.x_err_far_sum;
        self.z_err_near_sum += o.z_err_near_sum;
        self.z_err_far_sum += o.z_err_far_sum;
        self.near_points += o.near_points;
        self.far_points += o.far_points;
    }
}

/// Outcome for one ground-truth or predicted lane of a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneMatch {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub scene_id: String,
    pub gt: Option<usize>,
    pub pred: Option<usize>,
    pub matched_points: usize,
    pub gt_covered: usize,
    pub pred_covered: usize,
    pub gt_pass: bool,
    pub pred_pass: bool,
    pub gt_length: Option<f64>,
    pub pred_length: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneEval {
    pub counts: EvalCounts,
    pub matches: Vec<LaneMatch>,
}

pub fn evaluate_scene<G: EvalLane, P: EvalLane>(gt: &[G], pred: &[P], cfg: &EvalConfig) -> SceneEval {
    // Lanes that cannot be scored at all are set aside.
    let gt_samples: Vec<(usize, LaneSamples)> = gt
        .iter()
        .map(|l| resample_for_eval(l, cfg))
        .enumerate()
        .filter(|(_, s)| s.covered_count() > 0)
        .collect();
    let pred_samples: Vec<(usize, LaneSamples)> = pred
        .iter()
        .map(|l| resample_for_eval(l, cfg))
        .enumerate()
        .filter(|(_, s)| s.vertices >= 2 && s.covered_count() > 0)
        .collect();

    let mut counts = EvalCounts {
        scenes: 1,
        n_gt: gt_samples.len(),
        n_pred: pred_samples.len(),
        gt_ignored: gt.len() - gt_samples.len(),
        pred_ignored: pred.len() - pred_samples.len(),
        ..Default::default()
    };

    let scores: Vec<Vec<PairScore>> = gt_samples
        .iter()
        .map(|(_, g)| pred_samples.iter().map(|(_, p)| pair_score(g, p, cfg)).collect())
        .collect();
    let weights: Vec<Vec<i64>> = scores
        .iter()
        .map(|row| row.iter().map(|s| s.matched as i64).collect())
        .collect();
    let assignment = max_weight_assignment(&weights);

    let mut matches = Vec::with_capacity(gt_samples.len().max(pred_samples.len()));
    let mut pred_taken = vec![false; pred_samples.len()];
    for (gi, (g_idx, g)) in gt_samples.iter().enumerate() {
        let Some(pi) = assignment[gi] else {
            matches.push(LaneMatch {
                scene_id: String::new(),
                gt: Some(*g_idx),
                pred: None,
                matched_points: 0,
                gt_covered: g.covered_count(),
                pred_covered: 0,
                gt_pass: false,
                pred_pass: false,
                gt_length: Some(g.length),
                pred_length: None,
            });
            continue;
        };
        pred_taken[pi] = true;
        let (p_idx, p) = &pred_samples[pi];
        let s = scores[gi][pi];
        let gt_pass = s.matched > 0 && s.gt_ratio() >= cfg.lane_iou;
        let pred_pass = s.matched > 0 && s.pred_ratio() >= cfg.lane_iou;
        counts.total_matched_points += s.matched;
        counts.gt_matched += usize::from(gt_pass);
        counts.pred_matched += usize::from(pred_pass);
        if gt_pass && pred_pass {
            counts.tp_pairs += 1;
            if gt[*g_idx].category() == pred[*p_idx].category() {
                counts.category_matched += 1;
            }
            for (k, &y) in cfg.eval_y_values.iter().enumerate() {
                if !point_matched(g, p, k, cfg.point_match_threshold) {
                    continue;
                }
                let dx = (g.x[k] - p.x[k]).abs();
                let dz = (g.z[k] - p.z[k]).abs();
                if y < cfg.near_far_split {
                    counts.x_err_near_sum += dx;
                    counts.z_err_near_sum += dz;
                    counts.near_points += 1;
                } else {
                    counts.x_err_far_sum += dx;
                    counts.z_err_far_sum += dz;
                    counts.far_points += 1;
                }
            }
        }
        matches.push(LaneMatch {
            scene_id: String::new(),
            gt: Some(*g_idx),
            pred: Some(*p_idx),
            matched_points: s.matched,
            gt_covered: s.gt_covered,
            pred_covered: s.pred_covered,
            gt_pass,
            pred_pass,
            gt_length: Some(g.length),
            pred_length: Some(p.length),
        });
    }
    for (pi, (p_idx, p)) in pred_samples.iter().enumerate() {
        if !pred_taken[pi] {
            matches.push(LaneMatch {
                scene_id: String::new(),
                gt: None,
                pred: Some(*p_idx),
                matched_points: 0,
                gt_covered: 0,
                pred_covered: p.covered_count(),
                gt_pass: false,
                pred_pass: false,
                gt_length: None,
                pred_length: Some(p.length),
            });
        }
    }
    SceneEval { counts, matches }
}

/// A half-open length range `[lo, hi)` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthBucket {
    pub lo: f64,
    pub hi: f64,
}

impl LengthBucket {
    pub fn contains(&self, length: f64) -> bool {
        length >= self.lo && length < self.hi
    }

    /// Parses `0:20,20:40,40:103`.
    pub fn parse_list(s: &str) -> Result<Vec<LengthBucket>> {
        s.split(',')
            .map(|part| {
                let (lo, hi) = part
                    .split_once(':')
                    .ok_or_else(|| Error::config(format!("bucket `{part}` is not lo:hi")))?;
                let parse = |v: &str| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::config(format!("bad bucket bound `{v}`")))
                };
                let (lo, hi) = (parse(lo)?, parse(hi)?);
                if hi <= lo {
                    return Err(Error::config(format!("bucket `{part}` is empty")));
                }
                Ok(LengthBucket { lo, hi })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub lo: f64,
    pub hi: f64,
    pub n_gt: usize,
    pub n_pred: usize,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

/// Experiment metadata attached to a report for table layout.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLabel {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default)]
    pub label: RunLabel,
    pub lane_iou: f64,
    pub recall: f64,
    pub precision: f64,
    /// Harmonic mean of precision and recall.
    pub f1: f64,
    pub f1_harmonic: f64,
    /// Arithmetic mean of precision and recall.
    pub f1_arith: f64,
    pub category_accuracy: f64,
    pub x_err_near: f64,
    pub x_err_far: f64,
    pub z_err_near: f64,
    pub z_err_far: f64,
    /// Set when there is no ground truth; recall is then reported as 1.
    pub empty_gt: bool,
    /// Set when there are no predictions; precision is then reported as 1.
    pub empty_pred: bool,
    pub counts: EvalCounts,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub buckets: Vec<BucketReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_lane_matches: Vec<LaneMatch>,
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl EvalReport {
    pub fn from_counts(counts: EvalCounts, cfg: &EvalConfig) -> Self {
        let empty_gt = counts.n_gt == 0;
        let empty_pred = counts.n_pred == 0;
        let recall = if empty_gt { 1.0 } else { counts.gt_matched as f64 / counts.n_gt as f64 };
        let precision = if empty_pred {
            1.0
        } else {
            counts.pred_matched as f64 / counts.n_pred as f64
        };
        let f1 = f1_of(precision, recall);
        Self {
            label: RunLabel::default(),
            lane_iou: cfg.lane_iou,
            recall,
            precision,
            f1,
            f1_harmonic: f1,
            f1_arith: 0.5 * (precision + recall),
            category_accuracy: ratio(counts.category_matched, counts.tp_pairs),
            x_err_near: mean(counts.x_err_near_sum, counts.near_points),
            x_err_far: mean(counts.x_err_far_sum, counts.far_points),
            z_err_near: mean(counts.z_err_near_sum, counts.near_points),
            z_err_far: mean(counts.z_err_far_sum, counts.far_points),
            empty_gt,
            empty_pred,
            counts,
            buckets: Vec::new(),
            per_lane_matches: Vec::new(),
        }
    }

    pub fn with_label(mut self, label: RunLabel) -> Self {
        self.label = label;
        self
    }
}

/// Recall/precision per length bucket. Ground truth is bucketed by its own
/// length; each prediction by its own length.
pub fn bucket_reports(matches: &[LaneMatch], buckets: &[LengthBucket]) -> Vec<BucketReport> {
    buckets
        .iter()
        .map(|b| {
            let gts: Vec<&LaneMatch> = matches
                .iter()
                .filter(|m| m.gt_length.is_some_and(|l| b.contains(l)))
                .collect();
            let preds: Vec<&LaneMatch> = matches
                .iter()
                .filter(|m| m.pred_length.is_some_and(|l| b.contains(l)))
                .collect();
            let recall = if gts.is_empty() {
                1.0
            } else {
                gts.iter().filter(|m| m.gt_pass).count() as f64 / gts.len() as f64
            };
            let precision = if preds.is_empty() {
                1.0
            } else {
                preds.iter().filter(|m| m.pred_pass).count() as f64 / preds.len() as f64
            };
            BucketReport {
                lo: b.lo,
                hi: b.hi,
                n_gt: gts.len(),
                n_pred: preds.len(),
                recall,
                precision,
                f1: f1_of(precision, recall),
            }
        })
        .collect()
}

/// One scene's ground truth and predictions, borrowed.
pub struct ScenePair<'a, G, P> {
    pub scene_id: &'a str,
    pub gt: Vec<&'a G>,
    pub pred: Vec<&'a P>,
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub keep_matches: bool,
    pub buckets: Vec<LengthBucket>,
}

/// Evaluates scenes in parallel and sums their tallies.
pub fn evaluate_scenes<G, P>(scenes: &[ScenePair<'_, G, P>], cfg: &EvalConfig, opts: &EvalOptions) -> Result<EvalReport>
where
    G: EvalLane + Sync,
    P: EvalLane + Sync,
{
    use rayon::prelude::*;

    cfg.validate()?;
    let per_scene: Vec<SceneEval> = scenes
        .par_iter()
        .map(|s| {
            let mut e = evaluate_scene(&s.gt, &s.pred, cfg);
            for m in &mut e.matches {
                m.scene_id = s.scene_id.to_string();
            }
            e
        })
        .collect();
    let mut counts = EvalCounts::default();
    let mut matches = Vec::new();
    for s in per_scene {
        counts += &s.counts;
        if opts.keep_matches || !opts.buckets.is_empty() {
            matches.extend(s.matches);
        }
    }
    let mut report = EvalReport::from_counts(counts, cfg);
    report.buckets = bucket_reports(&matches, &opts.buckets);
    if opts.keep_matches {
        report.per_lane_matches = matches;
    }
    Ok(report)
}
