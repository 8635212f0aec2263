//! Deterministic synthetic road scenes.
//!
//! Each scene is a bundle of parallel lanes sharing a heading, a curvature
//! and a road slope:
//!
//! ```text
//! x(y) = x0 + t (y - y_ref) + k/2 (y - y_ref)^2
//! z(y) = z0 + s (y - y_ref)
//! ```
//!
//! Lane lengths are drawn from a piecewise-uniform histogram; start
//! positions are uniform inside the detection range so truncation happens
//! at either end. Each scene draws from its own ChaCha stream, so the
//! output does not depend on how scenes are scheduled across threads.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::LengthBucket;
use crate::lane::{DenseLane, Point3};
use crate::scene::{LaneEntry, Provenance, Scene, SceneSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub scenes: usize,
    pub lanes_per_scene: CountRange,
    pub length_hist: Vec<HistBin>,
    /// Allowed lane start positions (m); further limited so lanes end
    /// inside `detection_range`.
    pub start_y_range: [f64; 2],
    /// Shared second derivative `x''(y)` per scene (1/m).
    pub curvature_range: [f64; 2],
    /// Shared heading `x'(y_ref)` per scene.
    pub heading_range: [f64; 2],
    pub lateral_spacing: f64,
    /// Shared `dz/dy` per scene.
    pub z_slope_range: [f64; 2],
    pub detection_range: [f64; 2],
    /// Upper bound on the distance between dense samples (m).
    pub dense_step: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Preset::OpenLaneLike.config()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "openlane-like")]
    OpenLaneLike,
    #[serde(rename = "apollosim-like")]
    ApolloSimLike,
}

impl Preset {
    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::OpenLaneLike => "openlane-like",
            Preset::ApolloSimLike => "apollosim-like",
        }
    }

    pub fn config(&self) -> SynthConfig {
        let bins: &[(f64, f64, f64)] = match self {
            // 40% under 20 m, 70% under 40 m.
            Preset::OpenLaneLike => &[
                (2.0, 10.0, 0.03),
                (10.0, 20.0, 0.37),
                (20.0, 30.0, 0.15),
                (30.0, 40.0, 0.15),
                (40.0, 50.0, 0.06),
                (50.0, 60.0, 0.05),
                (60.0, 70.0, 0.04),
                (70.0, 80.0, 0.04),
                (80.0, 90.0, 0.03),
                (90.0, 100.0, 0.08),
            ],
            // 20% under 40 m.
            Preset::ApolloSimLike => &[
                (2.0, 10.0, 0.01),
                (10.0, 20.0, 0.03),
                (20.0, 30.0, 0.06),
                (30.0, 40.0, 0.10),
                (40.0, 50.0, 0.08),
                (50.0, 60.0, 0.10),
                (60.0, 70.0, 0.10),
                (70.0, 80.0, 0.12),
                (80.0, 90.0, 0.15),
                (90.0, 100.0, 0.25),
            ],
        };
        SynthConfig {
            seed: 7,
            scenes: 500,
            lanes_per_scene: CountRange { min: 2, max: 6 },
            length_hist: bins.iter().map(|&(lo, hi, p)| HistBin { lo, hi, p }).collect(),
            start_y_range: [3.0, 103.0],
            curvature_range: [-0.01, 0.01],
            heading_range: [-0.05, 0.05],
            lateral_spacing: 3.5,
            z_slope_range: [-0.03, 0.03],
            detection_range: [3.0, 103.0],
            dense_step: 0.5,
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "openlane-like" => Ok(Preset::OpenLaneLike),
            "apollosim-like" => Ok(Preset::ApolloSimLike),
            _ => Err(Error::config(format!(
                "unknown preset `{s}` (expected openlane-like or apollosim-like)"
            ))),
        }
    }
}

fn ordered(r: [f64; 2], name: &str) -> Result<()> {
    if r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be an ordered finite pair, got {r:?}")))
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length_hist.is_empty() {
            return Err(Error::config("length_hist is empty"));
        }
        let total: f64 = self.length_hist.iter().map(|b| b.p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("length_hist probabilities sum to {total}, not 1")));
        }
        for b in &self.length_hist {
            if !(b.p >= 0.0) || !(0.0 <= b.lo && b.lo < b.hi && b.hi <= 100.0) {
                return Err(Error::config(format!("bad length bin {b:?}")));
            }
        }
        let CountRange { min, max } = self.lanes_per_scene;
        if min == 0 || min > max {
            return Err(Error::config("lanes_per_scene must satisfy 1 <= min <= max"));
        }
        ordered(self.start_y_range, "start_y_range")?;
        ordered(self.curvature_range, "curvature_range")?;
        ordered(self.heading_range, "heading_range")?;
        ordered(self.z_slope_range, "z_slope_range")?;
        ordered(self.detection_range, "detection_range")?;
        let [lo, hi] = self.detection_range;
        if hi - lo < self.length_hist.iter().map(|b| b.hi).fold(0.0, f64::max) {
            return Err(Error::config("detection_range is shorter than the longest lane bin"));
        }
        if !(self.dense_step > 0.0) || !(self.lateral_spacing >= 0.0) {
            return Err(Error::config("dense_step must be > 0 and lateral_spacing >= 0"));
        }
        Ok(())
    }

    /// Largest `|x''(y)|` any generated lane can have.
    pub fn curvature_max(&self) -> f64 {
        self.curvature_range[0].abs().max(self.curvature_range[1].abs())
    }
}

fn uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn draw_length<R: Rng>(rng: &mut R, hist: &[HistBin]) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let bin = hist
        .iter()
        .find(|b| {
            acc += b.p;
            u < acc
        })
        .unwrap_or(&hist[hist.len() - 1]);
    uniform(rng, [bin.lo, bin.hi])
}

fn scene_rng(seed: u64, scene: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(scene as u64);
    rng
}

fn generate_scene(cfg: &SynthConfig, index: usize) -> Scene<DenseLane> {
    let mut rng = scene_rng(cfg.seed, index);
    let n = rng.random_range(cfg.lanes_per_scene.min..=cfg.lanes_per_scene.max);
    let curvature = uniform(&mut rng, cfg.curvature_range);
    let heading = uniform(&mut rng, cfg.heading_range);
    let slope = uniform(&mut rng, cfg.z_slope_range);
    let z0 = rng.random_range(-0.3..0.3);
    let [range_lo, range_hi] = cfg.detection_range;
    let y_ref = range_lo;

    let lanes = (0..n)
        .map(|i| {
            let x0 = (i as f64 - (n as f64 - 1.0) / 2.0) * cfg.lateral_spacing;
            let category = rng.random_range(1..=4u32);
            let length = draw_length(&mut rng, &cfg.length_hist).min(range_hi - range_lo);
            let lo = cfg.start_y_range[0].max(range_lo);
            let hi = cfg.start_y_range[1].min(range_hi - length).max(lo);
            let y0 = uniform(&mut rng, [lo, hi]);
            let steps = (length / cfg.dense_step).ceil().max(1.0) as usize;
            let points: Vec<Point3> = (0..=steps)
                .map(|k| {
                    let y = if k == steps {
                        y0 + length
                    } else {
                        y0 + length * k as f64 / steps as f64
                    };
                    let d = y - y_ref;
                    [x0 + heading * d + 0.5 * curvature * d * d, y, z0 + slope * d]
                })
                .collect();
            LaneEntry {
                lane_id: i.to_string(),
                lane: DenseLane::new(points, category).expect("generated lanes are monotone"),
            }
        })
        .collect();
    Scene {
        id: format!("scene_{index:06}"),
        lanes,
    }
}

pub fn generate_scene_set(cfg: &SynthConfig) -> Result<SceneSet<DenseLane>> {
    cfg.validate()?;
    let scenes = (0..cfg.scenes).into_par_iter().map(|i| generate_scene(cfg, i)).collect();
    Ok(SceneSet {
        scenes,
        provenance: Some(Provenance {
            seed: cfg.seed,
            config: cfg.clone(),
        }),
    })
}

/// Fraction of lanes per length bucket. The last bucket also takes lanes
/// exactly at its upper edge.
pub fn length_histogram(set: &SceneSet<DenseLane>, buckets: &[LengthBucket]) -> Vec<f64> {
    let total = set.lane_count();
    if total == 0 {
        return vec![0.0; buckets.len()];
    }
    let mut counts = vec![0usize; buckets.len()];
    for lane in set.lanes() {
        let len = lane.length();
        let last = buckets.len().saturating_sub(1);
        if let Some(i) = buckets
            .iter()
            .enumerate()
            .position(|(i, b)| b.contains(len) || (i == last && len == b.hi))
        {
            counts[i] += 1;
        }
    }
    counts.into_iter().map(|c| c as f64 / total as f64).collect()
}

/// Ten 10 m buckets covering `[0, 100]`.
pub fn decade_buckets() -> Vec<LengthBucket> {
    (0..10)
        .map(|i| LengthBucket {
            lo: 10.0 * i as f64,
            hi: 10.0 * (i + 1) as f64,
        })
        .collect()
}
