//! Experiment manifests: a DAG of pipeline steps connected by the files they
//! read and write, all under one output directory and one seed.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ep::{ep_patch_inference, PatchStatus};
use crate::error::{Error, Result};
use crate::eval::{evaluate_scenes, EvalConfig, EvalLane, EvalOptions, EvalReport, LengthBucket, RunLabel, ScenePair};
use crate::gt::{generate_training_gt, GtMode};
use crate::io::{self, dense_records, read_dense, read_lanes, read_sparse_records, SparseRecord};
use crate::lane::PresetGrid;
use crate::scene::SceneSet;
use crate::synth::{generate_scene_set, Preset, SynthConfig};
use crate::table::{report_table, TableFormat};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const BUNDLED: [(&str, &str); 2] = [
    ("table1_trends", include_str!("../manifests/table1_trends.json")),
    ("table2_patched", include_str!("../manifests/table2_patched.json")),
];

pub fn bundled_manifest(name: &str) -> Result<ExperimentManifest> {
    let name = name.strip_suffix(".json").unwrap_or(name);
    let (_, text) = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::config(format!("no bundled manifest named `{name}`")))?;
    ExperimentManifest::from_json(text)
}

/// Grid choice for ground-truth generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Linspace,
    /// The fixed anchor rows `[5, 10, ..., 100]`.
    Persformer,
}

fn default_m() -> usize {
    20
}

fn default_range() -> [f64; 2] {
    [3.0, 103.0]
}

fn default_iou() -> f64 {
    0.75
}

pub fn build_grid(kind: &GridKind, m: usize, range: [f64; 2]) -> Result<PresetGrid> {
    match kind {
        GridKind::Linspace => PresetGrid::linspace(m, range[0], range[1]),
        GridKind::Persformer => Ok(PresetGrid::persformer()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepKind {
    Synth {
        #[serde(default = "default_preset")]
        preset: Preset,
        #[serde(default)]
        scenes: Option<usize>,
        /// Overrides the sub-seed derived from the manifest seed.
        #[serde(default)]
        seed: Option<u64>,
        /// Full configuration replacing the preset.
        #[serde(default)]
        config: Option<SynthConfig>,
        out: String,
    },
    GenGt {
        mode: GtMode,
        #[serde(default = "default_m")]
        m: usize,
        #[serde(default = "default_range")]
        range: [f64; 2],
        #[serde(default = "default_grid_kind")]
        grid: GridKind,
        input: String,
        out: String,
    },
    EpInfer {
        pred: String,
        out: String,
    },
    Eval {
        gt: String,
        pred: String,
        #[serde(default = "default_iou")]
        iou: f64,
        #[serde(default)]
        buckets: Option<String>,
        #[serde(default)]
        label: RunLabel,
        out: String,
    },
    Report {
        inputs: Vec<String>,
        out: String,
        #[serde(default)]
        csv: Option<String>,
    },
}

fn default_preset() -> Preset {
    Preset::OpenLaneLike
}

fn default_grid_kind() -> GridKind {
    GridKind::Linspace
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub id: String,
    #[serde(flatten)]
    pub kind: StepKind,
}

impl Step {
    pub fn inputs(&self) -> Vec<&str> {
        match &self.kind {
            StepKind::Synth { .. } => vec![],
            StepKind::GenGt { input, .. } => vec![input],
            StepKind::EpInfer { pred, .. } => vec![pred],
            StepKind::Eval { gt, pred, .. } => vec![gt, pred],
            StepKind::Report { inputs, .. } => inputs.iter().map(String::as_str).collect(),
        }
    }

    pub fn outputs(&self) -> Vec<&str> {
        match &self.kind {
            StepKind::Synth { out, .. }
            | StepKind::GenGt { out, .. }
            | StepKind::EpInfer { out, .. }
            | StepKind::Eval { out, .. } => vec![out],
            StepKind::Report { out, csv, .. } => std::iter::once(out.as_str()).chain(csv.as_deref()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Tool version the manifest was written for.
    #[serde(default)]
    pub version: Option<String>,
    /// Files that exist before the run, relative to the output directory.
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub steps: Vec<Step>,
}

impl ExperimentManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("bad manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Checks ids and file references; returns step indices in execution order.
    pub fn execution_order(&self) -> Result<Vec<usize>> {
        let mut ids = HashSet::new();
        let mut producer: HashMap<&str, usize> = HashMap::new();
        let external: HashSet<&str> = self.inputs.iter().map(String::as_str).collect();
        for (i, step) in self.steps.iter().enumerate() {
            if step.id.is_empty() || !ids.insert(step.id.as_str()) {
                return Err(Error::config(format!("step id `{}` is empty or repeated", step.id)));
            }
            for out in step.outputs() {
                if external.contains(out) || producer.insert(out, i).is_some() {
                    return Err(Error::config(format!("file `{out}` is written more than once")));
                }
            }
        }
        let mut deps: Vec<Vec<usize>> = vec![Vec::new(); self.steps.len()];
        for (i, step) in self.steps.iter().enumerate() {
            for input in step.inputs() {
                match producer.get(input) {
                    Some(&p) => deps[i].push(p),
                    None if external.contains(input) => {}
                    None => {
                        return Err(Error::config(format!(
                            "step `{}` reads undeclared file `{input}`",
                            step.id
                        )))
                    }
                }
            }
        }
        // Kahn's algorithm, lowest manifest index first.
        let mut indegree: Vec<usize> = deps.iter().map(Vec::len).collect();
        let mut order = Vec::with_capacity(self.steps.len());
        let mut done = vec![false; self.steps.len()];
        while order.len() < self.steps.len() {
            let Some(next) = (0..self.steps.len()).find(|&i| !done[i] && indegree[i] == 0) else {
                return Err(Error::config("steps do not form a DAG"));
            };
            done[next] = true;
            order.push(next);
            for (i, d) in deps.iter().enumerate() {
                indegree[i] -= d.iter().filter(|&&p| p == next).count();
            }
        }
        Ok(order)
    }
}

/// Stable per-step seed: the first 8 bytes of `SHA-256(seed_le || step_id)`.
pub fn derive_seed(seed: u64, step_id: &str) -> u64 {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(step_id.as_bytes())
        .finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn run_synth(cfg: &SynthConfig, out: &Path) -> Result<usize> {
    let set = generate_scene_set(cfg)?;
    io::write_jsonl(out, &dense_records(&set))?;
    Ok(set.lane_count())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GenGtSummary {
    pub lanes: usize,
    /// Lanes with no preset row inside their visibility window.
    pub skipped: usize,
}

pub fn gen_gt_records(set: &SceneSet<crate::lane::DenseLane>, grid: &PresetGrid, mode: GtMode) -> Result<(Vec<SparseRecord>, GenGtSummary)> {
    let mut records = Vec::with_capacity(set.lane_count());
    let mut summary = GenGtSummary::default();
    for scene in &set.scenes {
        for entry in &scene.lanes {
            match generate_training_gt(&entry.lane, grid, mode) {
                Ok(sparse) => {
                    records.push(SparseRecord::from_lane(&scene.id, &entry.lane_id, &sparse));
                    summary.lanes += 1;
                }
                Err(Error::NoOverlap { .. }) => summary.skipped += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok((records, summary))
}

pub fn run_gen_gt(input: &Path, out: &Path, grid: &PresetGrid, mode: GtMode) -> Result<GenGtSummary> {
    let set = read_dense(input)?;
    let (records, summary) = gen_gt_records(&set, grid, mode)?;
    if summary.skipped > 0 {
        warn!("{} lane(s) have no visible preset row under {mode} and were skipped", summary.skipped);
    }
    io::write_jsonl(out, &records)?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EpInferSummary {
    pub patched: usize,
    pub too_few_valid: usize,
    /// Records without `s_hat`/`e_hat` that used their stored `s`/`e`.
    pub used_stored_deltas: usize,
    /// Records carrying no deltas at all, passed through.
    pub no_deltas: usize,
}

/// Applies endpoint patching to one record.
pub fn ep_infer_record(rec: &SparseRecord, summary: &mut EpInferSummary) -> Result<SparseRecord> {
    if rec.patched {
        return Ok(rec.clone());
    }
    let ep = match rec.ep_prediction()? {
        Some(ep) => ep,
        None => match rec.ep_target()? {
            Some(ep) => {
                summary.used_stored_deltas += 1;
                ep
            }
            None => {
                summary.no_deltas += 1;
                return Ok(rec.clone());
            }
        },
    };
    let lane = rec.to_lane()?;
    let outcome = ep_patch_inference(&lane, &ep)?;
    match outcome.status {
        PatchStatus::Patched => summary.patched += 1,
        PatchStatus::TooFewValid => summary.too_few_valid += 1,
    }
    let mut out = SparseRecord::from_lane(&rec.scene_id, &rec.lane_id, &outcome.lane);
    out.s = rec.s.clone();
    out.e = rec.e.clone();
    out.s_hat = rec.s_hat.clone();
    out.e_hat = rec.e_hat.clone();
    Ok(out)
}

pub fn run_ep_infer(pred: &Path, out: &Path) -> Result<EpInferSummary> {
    let mut summary = EpInferSummary::default();
    let records = read_sparse_records(pred)?
        .into_iter()
        .map(|(line, rec)| {
            ep_infer_record(&rec, &mut summary).map_err(|e| Error::Record {
                path: pred.display().to_string(),
                line,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    io::write_jsonl(out, &records)?;
    Ok(summary)
}

/// Pairs scenes by id: ground-truth order first, then prediction-only scenes.
pub fn pair_scenes<'a, G, P>(gt: &'a SceneSet<G>, pred: &'a SceneSet<P>) -> Vec<ScenePair<'a, G, P>> {
    let mut pairs: Vec<ScenePair<'a, G, P>> = Vec::new();
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &gt.scenes {
        index.insert(&s.id, pairs.len());
        pairs.push(ScenePair {
            scene_id: &s.id,
            gt: s.lanes.iter().map(|e| &e.lane).collect(),
            pred: Vec::new(),
        });
    }
    for s in &pred.scenes {
        let i = *index.entry(&s.id).or_insert_with(|| {
            pairs.push(ScenePair {
                scene_id: &s.id,
                gt: Vec::new(),
                pred: Vec::new(),
            });
            pairs.len() - 1
        });
        pairs[i].pred.extend(s.lanes.iter().map(|e| &e.lane));
    }
    pairs
}

pub fn evaluate_sets<G, P>(gt: &SceneSet<G>, pred: &SceneSet<P>, cfg: &EvalConfig, opts: &EvalOptions) -> Result<EvalReport>
where
    G: EvalLane + Sync,
    P: EvalLane + Sync,
{
    evaluate_scenes(&pair_scenes(gt, pred), cfg, opts)
}

pub fn run_eval(gt: &Path, pred: &Path, cfg: &EvalConfig, opts: &EvalOptions) -> Result<EvalReport> {
    cfg.validate()?;
    let gt = read_lanes(gt)?;
    let pred = read_lanes(pred)?;
    evaluate_sets(&gt, &pred, cfg, opts)
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Writes a markdown table and optionally a CSV next to it.
pub fn write_tables(reports: &[EvalReport], md: &Path, csv: Option<&Path>) -> Result<()> {
    io::write_atomic(md, report_table(reports, TableFormat::Markdown).as_bytes())?;
    if let Some(csv) = csv {
        io::write_atomic(csv, report_table(reports, TableFormat::Csv).as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub seed: u64,
    pub version: String,
    pub reports: Vec<EvalReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub report: Option<ExperimentReport>,
    pub report_path: Option<PathBuf>,
    pub table_path: Option<PathBuf>,
}

fn run_step(step: &Step, manifest: &ExperimentManifest, dir: &Path, reports: &mut Vec<EvalReport>) -> Result<()> {
    let path = |p: &str| dir.join(p);
    match &step.kind {
        StepKind::Synth {
            preset,
            scenes,
            seed,
            config,
            out,
        } => {
            let mut cfg = config.clone().unwrap_or_else(|| preset.config());
            if let Some(n) = scenes {
                cfg.scenes = *n;
            }
            cfg.seed = seed.unwrap_or_else(|| derive_seed(manifest.seed, &step.id));
            let n = run_synth(&cfg, &path(out))?;
            info!("{}: {n} lanes", step.id);
        }
        StepKind::GenGt {
            mode,
            m,
            range,
            grid,
            input,
            out,
        } => {
            let grid = build_grid(grid, *m, *range)?;
            let s = run_gen_gt(&path(input), &path(out), &grid, *mode)?;
            info!("{}: {} lanes, {} skipped", step.id, s.lanes, s.skipped);
        }
        StepKind::EpInfer { pred, out } => {
            let s = run_ep_infer(&path(pred), &path(out))?;
            info!("{}: {} patched, {} too few valid", step.id, s.patched, s.too_few_valid);
        }
        StepKind::Eval {
            gt,
            pred,
            iou,
            buckets,
            label,
            out,
        } => {
            let cfg = EvalConfig::default().with_lane_iou(*iou);
            let opts = EvalOptions {
                keep_matches: false,
                buckets: buckets.as_deref().map(LengthBucket::parse_list).transpose()?.unwrap_or_default(),
            };
            let report = run_eval(&path(gt), &path(pred), &cfg, &opts)?.with_label(label.clone());
            io::write_json(&path(out), &report)?;
            reports.push(report);
        }
        StepKind::Report { inputs, out, csv } => {
            let rs = inputs.iter().map(|p| read_report(&path(p))).collect::<Result<Vec<_>>>()?;
            write_tables(&rs, &path(out), csv.as_deref().map(path).as_deref())?;
        }
    }
    Ok(())
}

/// Runs every step in dependency order under `out_dir`, then writes
/// `report.json` and `table.md` covering all evaluation steps. A manifest
/// without steps does nothing.
pub fn run_experiment(manifest: &ExperimentManifest, out_dir: &Path) -> Result<ExperimentOutcome> {
    let order = manifest.execution_order()?;
    if order.is_empty() {
        return Ok(ExperimentOutcome {
            report: None,
            report_path: None,
            table_path: None,
        });
    }
    std::fs::create_dir_all(out_dir)?;
    let mut reports = Vec::new();
    for i in order {
        let step = &manifest.steps[i];
        info!("running step `{}`", step.id);
        run_step(step, manifest, out_dir, &mut reports).map_err(|e| Error::StepFailed {
            step: step.id.clone(),
            source: Box::new(e),
        })?;
    }
    let report = ExperimentReport {
        name: manifest.name.clone(),
        seed: manifest.seed,
        version: manifest.version.clone().unwrap_or_else(|| TOOL_VERSION.to_string()),
        reports,
    };
    let report_path = out_dir.join("report.json");
    let table_path = out_dir.join("table.md");
    io::write_json(&report_path, &report)?;
    write_tables(&report.reports, &table_path, None)?;
    Ok(ExperimentOutcome {
        report: Some(report),
        report_path: Some(report_path),
        table_path: Some(table_path),
    })
}
