//! Training ground truth generation from dense lanes.
//!
//! Every mode samples the lane at the preset rows of a grid and differs only
//! in which rows are marked visible:
//!
//! | mode         | visible when                                  |
//! |--------------|-----------------------------------------------|
//! | `Short`      | `y_min <= g <= y_max`                         |
//! | `Long`       | `y_min - d <= g <= y_max + d`, `d` = spacing  |
//! | `Persformer` | `y_min - 5 < g < y_max + 5`                   |
//! | `AnchorLatr` | `y_min - 5 < g < y_max + 5`                   |
//! | `Patched`    | as `Short`, plus endpoint deltas at every row |
//!
//! Rows outside the lane's extent get linearly extrapolated coordinates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lane::{sub, DenseLane, PatchDeltas, Point3, PresetGrid, SparseLane};

/// Fixed margin used by the Persformer, Anchor3DLane and LATR loaders.
pub const FIXED_MARGIN: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GtMode {
    Short,
    Long,
    #[serde(rename = "persformer")]
    PersformerStyle,
    #[serde(rename = "anchor")]
    AnchorLatrStyle,
    Patched,
}

impl GtMode {
    pub const ALL: [GtMode; 5] = [
        GtMode::Short,
        GtMode::Long,
        GtMode::PersformerStyle,
        GtMode::AnchorLatrStyle,
        GtMode::Patched,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            GtMode::Short => "short",
            GtMode::Long => "long",
            GtMode::PersformerStyle => "persformer",
            GtMode::AnchorLatrStyle => "anchor",
            GtMode::Patched => "patched",
        }
    }
}

impl fmt::Display for GtMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GtMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GtMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown gt mode `{s}` (expected short, long, persformer, anchor or patched)")))
    }
}

pub fn visibility_mask(lane: &DenseLane, grid: &PresetGrid, mode: GtMode) -> Vec<bool> {
    let (lo, hi) = (lane.y_min(), lane.y_max());
    let d = grid.spacing();
    grid.y_values()
        .iter()
        .map(|&g| match mode {
            GtMode::Short | GtMode::Patched => g >= lo && g <= hi,
            GtMode::Long => g >= lo - d && g <= hi + d,
            GtMode::PersformerStyle | GtMode::AnchorLatrStyle => g > lo - FIXED_MARGIN && g < hi + FIXED_MARGIN,
        })
        .collect()
}

/// `(x, z)` of the lane at every preset row, extrapolating outside the lane.
fn sample_rows(lane: &DenseLane, grid: &PresetGrid) -> (Vec<f64>, Vec<f64>) {
    grid.y_values().iter().map(|&g| lane.sample_extended(g)).unzip()
}

/// Offsets from each preset point `(x_j, g_j, z_j)` to the lane's start and
/// end vertices. Defined at every row, visible or not, since any row may end
/// up being the first or last valid point of a prediction.
pub fn compute_patch_deltas(lane: &DenseLane, grid: &PresetGrid, vis: &[bool]) -> Result<PatchDeltas> {
    if vis.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            actual: vis.len(),
        });
    }
    let (start, end) = (lane.start(), lane.end());
    let (start, end): (Vec<Point3>, Vec<Point3>) = grid
        .y_values()
        .iter()
        .map(|&g| {
            let (x, z) = lane.sample_extended(g);
            let p = [x, g, z];
            (sub(start, p), sub(end, p))
        })
        .unzip();
    Ok(PatchDeltas { start, end })
}

pub fn generate_training_gt(lane: &DenseLane, grid: &PresetGrid, mode: GtMode) -> Result<SparseLane> {
    let vis = visibility_mask(lane, grid, mode);
    if !vis.iter().any(|&v| v) {
        return Err(Error::NoOverlap {
            lane_min: lane.y_min(),
            lane_max: lane.y_max(),
        });
    }
    let (x, z) = sample_rows(lane, grid);
    let patch = match mode {
        GtMode::Patched => Some(compute_patch_deltas(lane, grid, &vis)?),
        _ => None,
    };
    let sparse = SparseLane::new(grid.clone(), x, z, vis, lane.category())?;
    debug_assert!(sparse.is_contiguous());
    match patch {
        Some(p) => sparse.with_patch(p),
        None => Ok(sparse),
    }
}
