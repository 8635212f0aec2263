//! Lane geometry: dense annotated polylines, preset y-grids and the sparse
//! (optionally patched) representation used for training targets and
//! predictions.
//!
//! All coordinates are meters in the ego frame: `x` lateral, `y`
//! longitudinal (forward), `z` height. Lanes are parameterised by `y`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `[x, y, z]` in meters.
pub type Point3 = [f64; 3];

/// An annotated lane as delivered by a dataset: an ordered polyline with
/// strictly increasing `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLane {
    points: Vec<Point3>,
    category: u32,
}

impl DenseLane {
    /// Validates and wraps a polyline. Non-monotone input is rejected rather
    /// than sorted, since reordering could silently flip lane direction.
    pub fn new(points: Vec<Point3>, category: u32) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::lane(format!(
                "a lane needs at least 2 points, got {}",
                points.len()
            )));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::lane(format!("point {i} is not finite: {p:?}")));
            }
        }
        if let Some(i) = points.windows(2).position(|w| w[1][1] <= w[0][1]) {
            return Err(Error::lane(format!(
                "y must be strictly increasing (point {} has y = {}, point {} has y = {})",
                i,
                points[i][1],
                i + 1,
                points[i + 1][1]
            )));
        }
        Ok(Self { points, category })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn category(&self) -> u32 {
        self.category
    }

    pub fn start(&self) -> Point3 {
        self.points[0]
    }

    pub fn end(&self) -> Point3 {
        self.points[self.points.len() - 1]
    }

    pub fn y_min(&self) -> f64 {
        self.points[0][1]
    }

    pub fn y_max(&self) -> f64 {
        self.points[self.points.len() - 1][1]
    }

    /// Longitudinal extent `y_max - y_min`.
    pub fn length(&self) -> f64 {
        self.y_max() - self.y_min()
    }

    /// Linear interpolation of `(x, z)` at `y`; `OutOfRange` outside the lane.
    pub fn interpolate(&self, y: f64) -> Result<(f64, f64)> {
        if !(self.y_min()..=self.y_max()).contains(&y) {
            return Err(Error::OutOfRange {
                y,
                min: self.y_min(),
                max: self.y_max(),
            });
        }
        Ok(sample_polyline(&self.points, y))
    }

    /// Like [`interpolate`](Self::interpolate) inside the lane, and linear
    /// extrapolation along the nearest end segment outside it.
    pub fn sample_extended(&self, y: f64) -> (f64, f64) {
        sample_polyline(&self.points, y)
    }
}

/// Samples a y-sorted polyline at `y`. Values outside the polyline are
/// extrapolated along the first or last segment. Exact at vertices.
pub(crate) fn sample_polyline(points: &[Point3], y: f64) -> (f64, f64) {
    debug_assert!(points.len() >= 2);
    let n = points.len();
    let i = points.partition_point(|p| p[1] < y);
    if i < n && points[i][1] == y {
        return (points[i][0], points[i][2]);
    }
    let seg = i.clamp(1, n - 1);
    let a = points[seg - 1];
    let b = points[seg];
    let t = (y - a[1]) / (b[1] - a[1]);
    (a[0] + t * (b[0] - a[0]), a[2] + t * (b[2] - a[2]))
}

/// Free-function form of [`DenseLane::interpolate`].
pub fn interpolate(lane: &DenseLane, y: f64) -> Result<(f64, f64)> {
    lane.interpolate(y)
}

/// Free-function form of [`DenseLane::length`].
pub fn lane_length(lane: &DenseLane) -> f64 {
    lane.length()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpolationKind {
    #[default]
    Linear,
}

/// Queries `(x, z)` of a source lane at arbitrary `y`.
#[derive(Debug, Clone, Copy)]
pub struct Interpolator<'a> {
    source: &'a DenseLane,
    kind: InterpolationKind,
}

impl<'a> Interpolator<'a> {
    pub fn linear(source: &'a DenseLane) -> Self {
        Self {
            source,
            kind: InterpolationKind::Linear,
        }
    }

    pub fn kind(&self) -> InterpolationKind {
        self.kind
    }

    pub fn at(&self, y: f64) -> Result<(f64, f64)> {
        match self.kind {
            InterpolationKind::Linear => self.source.interpolate(y),
        }
    }

    pub fn extended(&self, y: f64) -> (f64, f64) {
        match self.kind {
            InterpolationKind::Linear => self.source.sample_extended(y),
        }
    }
}

/// Preset y-coordinates at which sparse lanes are sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetGrid {
    y_values: Vec<f64>,
    range_start: f64,
    range_end: f64,
    uniform: bool,
}

/// Anchor rows used by the Persformer reference implementation.
pub const PERSFORMER_ANCHORS: [f64; 10] = [5.0, 10.0, 15.0, 20.0, 30.0, 40.0, 50.0, 60.0, 80.0, 100.0];

impl PresetGrid {
    /// `m` evenly spaced values from `range_start` to `range_end`, both
    /// inclusive (numpy `linspace` semantics).
    pub fn linspace(m: usize, range_start: f64, range_end: f64) -> Result<Self> {
        if m < 2 {
            return Err(Error::config(format!("grid needs m >= 2, got {m}")));
        }
        if !(range_start.is_finite() && range_end.is_finite()) || range_end <= range_start {
            return Err(Error::config(format!(
                "grid range must satisfy start < end, got [{range_start}, {range_end}]"
            )));
        }
        let step = (range_end - range_start) / (m - 1) as f64;
        let mut y_values: Vec<f64> = (0..m).map(|i| range_start + i as f64 * step).collect();
        y_values[m - 1] = range_end;
        Ok(Self {
            y_values,
            range_start,
            range_end,
            uniform: true,
        })
    }

    /// An explicit, strictly ascending grid. The range is the first and last value.
    pub fn from_values(y_values: Vec<f64>) -> Result<Self> {
        if y_values.len() < 2 {
            return Err(Error::config("grid needs at least 2 values"));
        }
        if !y_values.iter().all(|v| v.is_finite()) || y_values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("grid values must be finite and strictly ascending"));
        }
        let range_start = y_values[0];
        let range_end = y_values[y_values.len() - 1];
        Ok(Self {
            y_values,
            range_start,
            range_end,
            uniform: false,
        })
    }

    pub fn persformer() -> Self {
        Self::from_values(PERSFORMER_ANCHORS.to_vec()).expect("static anchors are valid")
    }

    pub fn len(&self) -> usize {
        self.y_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_values.is_empty()
    }

    pub fn y_values(&self) -> &[f64] {
        &self.y_values
    }

    pub fn range_start(&self) -> f64 {
        self.range_start
    }

    pub fn range_end(&self) -> f64 {
        self.range_end
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Nominal interval `(end - start) / (M - 1)`; the true spacing for
    /// linspace grids and the mean spacing otherwise.
    pub fn spacing(&self) -> f64 {
        (self.range_end - self.range_start) / (self.len() - 1) as f64
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            m: self.len(),
            start: self.range_start,
            end: self.range_end,
            values: (!self.uniform).then(|| self.y_values.clone()),
        }
    }
}

/// Free-function form of [`PresetGrid::linspace`].
pub fn make_grid(m: usize, range_start: f64, range_end: f64) -> Result<PresetGrid> {
    PresetGrid::linspace(m, range_start, range_end)
}

/// Serialized grid description: linspace parameters, or explicit values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub m: usize,
    pub start: f64,
    pub end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

impl GridSpec {
    pub fn build(&self) -> Result<PresetGrid> {
        match &self.values {
            Some(values) => {
                if values.len() != self.m {
                    return Err(Error::DimensionMismatch {
                        expected: self.m,
                        actual: values.len(),
                    });
                }
                PresetGrid::from_values(values.clone())
            }
            None => PresetGrid::linspace(self.m, self.start, self.end),
        }
    }
}

/// Signed offsets from every preset point to the lane's true start and end
/// vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchDeltas {
    pub start: Vec<Point3>,
    pub end: Vec<Point3>,
}

/// A lane sampled at the `M` preset rows of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLane {
    grid: PresetGrid,
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    vis: Vec<bool>,
    patch: Option<PatchDeltas>,
    category: u32,
    endpoints_patched: bool,
}

impl SparseLane {
    pub fn new(grid: PresetGrid, x: Vec<f64>, z: Vec<f64>, vis: Vec<bool>, category: u32) -> Result<Self> {
        let m = grid.len();
        for len in [x.len(), z.len(), vis.len()] {
            if len != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    actual: len,
                });
            }
        }
        let y = grid.y_values().to_vec();
        Ok(Self {
            grid,
            x,
            y,
            z,
            vis,
            patch: None,
            category,
            endpoints_patched: false,
        })
    }

    pub fn with_patch(mut self, patch: PatchDeltas) -> Result<Self> {
        let m = self.len();
        for len in [patch.start.len(), patch.end.len()] {
            if len != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    actual: len,
                });
            }
        }
        self.patch = Some(patch);
        Ok(self)
    }

    /// Replaces the per-point `y` values (which default to the grid rows).
    pub fn with_y(mut self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: y.len(),
            });
        }
        self.y = y;
        Ok(self)
    }

    pub fn with_endpoints_patched(mut self, patched: bool) -> Self {
        self.endpoints_patched = patched;
        self
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn grid(&self) -> &PresetGrid {
        &self.grid
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn vis(&self) -> &[bool] {
        &self.vis
    }

    pub fn patch(&self) -> Option<&PatchDeltas> {
        self.patch.as_ref()
    }

    pub fn category(&self) -> u32 {
        self.category
    }

    /// Whether endpoint deltas have already been folded into `x/y/z`.
    pub fn endpoints_patched(&self) -> bool {
        self.endpoints_patched
    }

    pub fn point(&self, j: usize) -> Point3 {
        [self.x[j], self.y[j], self.z[j]]
    }

    pub(crate) fn set_point(&mut self, j: usize, p: Point3) {
        self.x[j] = p[0];
        self.y[j] = p[1];
        self.z[j] = p[2];
    }

    pub fn visible_count(&self) -> usize {
        self.vis.iter().filter(|&&v| v).count()
    }

    /// Indices of the first and last visible points.
    pub fn visible_span(&self) -> Option<(usize, usize)> {
        let first = self.vis.iter().position(|&v| v)?;
        let last = self.vis.iter().rposition(|&v| v)?;
        Some((first, last))
    }

    pub fn is_contiguous(&self) -> bool {
        match self.visible_span() {
            Some((first, last)) => self.vis[first..=last].iter().all(|&v| v),
            None => true,
        }
    }

    /// Marks every point between the first and last visible point visible.
    pub fn repair_visibility(&mut self) {
        if let Some((first, last)) = self.visible_span() {
            self.vis[first..=last].iter_mut().for_each(|v| *v = true);
        }
    }

    /// The polyline a downstream consumer sees: the visible span, with
    /// stored endpoint deltas applied when they have not been applied yet.
    ///
    /// A single visible point with deltas expands to `start, point, end`.
    /// Points that would break strictly increasing `y` are dropped.
    pub fn to_polyline(&self) -> Vec<Point3> {
        let Some((first, last)) = self.visible_span() else {
            return Vec::new();
        };
        let mut pts: Vec<Point3> = (first..=last).map(|j| self.point(j)).collect();
        if let (Some(patch), false) = (&self.patch, self.endpoints_patched) {
            let s = add(self.point(first), patch.start[first]);
            let e = add(self.point(last), patch.end[last]);
            if first == last {
                pts = vec![s, pts[0], e];
            } else {
                let n = pts.len();
                pts[0] = s;
                pts[n - 1] = e;
            }
        }
        let mut out: Vec<Point3> = Vec::with_capacity(pts.len());
        for p in pts {
            if out.last().is_none_or(|q| p[1] > q[1]) {
                out.push(p);
            }
        }
        out
    }

    /// The polyline as a validated [`DenseLane`]; fails below two points.
    pub fn to_dense(&self) -> Result<DenseLane> {
        DenseLane::new(self.to_polyline(), self.category)
    }
}

pub(crate) fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
