//! JSONL lane records.
//!
//! Dense record: `{"scene_id", "lane_id", "category", "points": [[x, y, z], ...]}`.
//!
//! Sparse record: `{"scene_id", "lane_id", "category", "grid": {"m", "start", "end"},
//! "x", "z", "vis"}` plus optional `"y"` (per-point y when it differs from the
//! grid), `"s"`/`"e"` (endpoint deltas), `"s_hat"`/`"e_hat"` (predicted
//! deltas) and `"patched"` (deltas already folded into the points).

use std::borrow::Cow;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

use crate::ep::EpPrediction;
use crate::error::{Error, Result};
use crate::eval::EvalLane;
use crate::lane::{DenseLane, GridSpec, PatchDeltas, Point3, SparseLane};
use crate::scene::{group_by_scene, SceneSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseRecord {
    pub scene_id: String,
    pub lane_id: String,
    #[serde(default)]
    pub category: u32,
    pub points: Vec<Point3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRecord {
    pub scene_id: String,
    pub lane_id: String,
    #[serde(default)]
    pub category: u32,
    pub grid: GridSpec,
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    pub z: Vec<f64>,
    #[serde(deserialize_with = "de_vis")]
    pub vis: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Vec<Point3>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<Vec<Point3>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_hat: Option<Vec<Point3>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_hat: Option<Vec<Point3>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub patched: bool,
}

/// Visibility may be given as booleans or as numbers (`> 0` is visible).
fn de_vis<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<bool>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Flag {
        Bool(bool),
        Num(f64),
    }
    let flags = Vec::<Flag>::deserialize(d)?;
    Ok(flags
        .into_iter()
        .map(|f| match f {
            Flag::Bool(b) => b,
            Flag::Num(v) => v > 0.0,
        })
        .collect())
}

fn pair<T>(a: Option<T>, b: Option<T>, what: &str) -> Result<Option<(T, T)>> {
    match (a, b) {
        (Some(a), Some(b)) => Ok(Some((a, b))),
        (None, None) => Ok(None),
        _ => Err(Error::lane(format!("{what} deltas must be given together"))),
    }
}

impl SparseRecord {
    pub fn from_lane(scene_id: &str, lane_id: &str, lane: &SparseLane) -> Self {
        let grid = lane.grid();
        let y = (lane.y() != grid.y_values()).then(|| lane.y().to_vec());
        let (s, e) = match lane.patch() {
            Some(p) => (Some(p.start.clone()), Some(p.end.clone())),
            None => (None, None),
        };
        Self {
            scene_id: scene_id.to_string(),
            lane_id: lane_id.to_string(),
            category: lane.category(),
            grid: grid.spec(),
            x: lane.x().to_vec(),
            y,
            z: lane.z().to_vec(),
            vis: lane.vis().to_vec(),
            s,
            e,
            s_hat: None,
            e_hat: None,
            patched: lane.endpoints_patched(),
        }
    }

    /// Predicted endpoint deltas, if the record carries them.
    pub fn ep_prediction(&self) -> Result<Option<EpPrediction>> {
        pair(self.s_hat.clone(), self.e_hat.clone(), "s_hat/e_hat")?
            .map(|(s, e)| EpPrediction::new(s, e))
            .transpose()
    }

    /// Ground-truth endpoint deltas, if the record carries them.
    pub fn ep_target(&self) -> Result<Option<EpPrediction>> {
        pair(self.s.clone(), self.e.clone(), "s/e")?
            .map(|(s, e)| EpPrediction::new(s, e))
            .transpose()
    }

    /// Builds the lane. Predicted deltas take precedence over stored ones as
    /// the lane's patch.
    pub fn to_lane(&self) -> Result<SparseLane> {
        let grid = self.grid.build()?;
        let coords = self.x.iter().chain(&self.z).chain(self.y.iter().flatten());
        if !coords.into_iter().all(|v| v.is_finite()) {
            return Err(Error::lane("non-finite coordinate"));
        }
        let mut lane = SparseLane::new(grid, self.x.clone(), self.z.clone(), self.vis.clone(), self.category)?;
        if let Some(y) = &self.y {
            lane = lane.with_y(y.clone())?;
        }
        let patch = match self.ep_prediction()? {
            Some(ep) => Some((ep.s_hat, ep.e_hat)),
            None => pair(self.s.clone(), self.e.clone(), "s/e")?,
        };
        if let Some((start, end)) = patch {
            lane = lane.with_patch(PatchDeltas { start, end })?;
        }
        Ok(lane.with_endpoints_patched(self.patched))
    }
}

impl DenseRecord {
    pub fn from_lane(scene_id: &str, lane_id: &str, lane: &DenseLane) -> Self {
        Self {
            scene_id: scene_id.to_string(),
            lane_id: lane_id.to_string(),
            category: lane.category(),
            points: lane.points().to_vec(),
        }
    }

    pub fn to_lane(&self) -> Result<DenseLane> {
        DenseLane::new(self.points.clone(), self.category)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum LaneRecord {
    Dense(DenseRecord),
    Sparse(SparseRecord),
}

impl LaneRecord {
    fn from_value(v: Value) -> Result<Self> {
        let has = |key| v.get(key).is_some();
        if has("points") {
            Ok(LaneRecord::Dense(serde_json::from_value(v)?))
        } else if has("grid") {
            Ok(LaneRecord::Sparse(serde_json::from_value(v)?))
        } else {
            Err(Error::lane("record has neither \"points\" nor \"grid\""))
        }
    }

    pub fn scene_id(&self) -> &str {
        match self {
            LaneRecord::Dense(r) => &r.scene_id,
            LaneRecord::Sparse(r) => &r.scene_id,
        }
    }

    pub fn lane_id(&self) -> &str {
        match self {
            LaneRecord::Dense(r) => &r.lane_id,
            LaneRecord::Sparse(r) => &r.lane_id,
        }
    }

    pub fn to_lane(&self) -> Result<AnyLane> {
        match self {
            LaneRecord::Dense(r) => r.to_lane().map(AnyLane::Dense),
            LaneRecord::Sparse(r) => r.to_lane().map(AnyLane::Sparse),
        }
    }
}

/// A lane loaded from either record kind.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyLane {
    Dense(DenseLane),
    Sparse(SparseLane),
}

impl EvalLane for AnyLane {
    fn polyline(&self) -> Cow<'_, [Point3]> {
        match self {
            AnyLane::Dense(l) => l.polyline(),
            AnyLane::Sparse(l) => l.polyline(),
        }
    }

    fn category(&self) -> u32 {
        match self {
            AnyLane::Dense(l) => l.category(),
            AnyLane::Sparse(l) => SparseLane::category(l),
        }
    }
}

fn with_line<T>(path: &Path, line: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Record {
        path: path.display().to_string(),
        line,
        source: Box::new(e),
    })
}

/// Reads every non-blank line of a JSONL file.
pub fn read_records(path: &Path) -> Result<Vec<(usize, LaneRecord)>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = with_line(path, i + 1, serde_json::from_str::<Value>(&line).map_err(Error::from))?;
        out.push((i + 1, with_line(path, i + 1, LaneRecord::from_value(value))?));
    }
    Ok(out)
}

/// Reads lanes of any record kind, grouped by scene.
pub fn read_lanes(path: &Path) -> Result<SceneSet<AnyLane>> {
    let items = read_records(path)?
        .into_iter()
        .map(|(line, r)| {
            let lane = with_line(path, line, r.to_lane())?;
            Ok((r.scene_id().to_string(), r.lane_id().to_string(), lane))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneSet::new(group_by_scene(items)))
}

/// Reads dense records only.
pub fn read_dense(path: &Path) -> Result<SceneSet<DenseLane>> {
    let items = read_records(path)?
        .into_iter()
        .map(|(line, r)| match r {
            LaneRecord::Dense(d) => {
                let lane = with_line(path, line, d.to_lane())?;
                Ok((d.scene_id, d.lane_id, lane))
            }
            LaneRecord::Sparse(_) => with_line(path, line, Err(Error::lane("expected a dense lane record"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneSet::new(group_by_scene(items)))
}

/// Reads sparse records only, keeping them as records.
pub fn read_sparse_records(path: &Path) -> Result<Vec<(usize, SparseRecord)>> {
    read_records(path)?
        .into_iter()
        .map(|(line, r)| match r {
            LaneRecord::Sparse(s) => Ok((line, s)),
            LaneRecord::Dense(_) => with_line(path, line, Err(Error::lane("expected a sparse lane record"))),
        })
        .collect()
}

pub fn dense_records(set: &SceneSet<DenseLane>) -> Vec<DenseRecord> {
    set.scenes
        .iter()
        .flat_map(|s| s.lanes.iter().map(|e| DenseRecord::from_lane(&s.id, &e.lane_id, &e.lane)))
        .collect()
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_atomic(path, &to_jsonl(items)?)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}
