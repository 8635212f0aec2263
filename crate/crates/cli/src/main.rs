use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use lanepatch_core::attention::flops::{flop_estimate, AttentionKind, FlopEstimate, CONVENTION};
use lanepatch_core::attention::{msa_forward, pl_attention_forward, AttentionWeights, FeatureTensor, PlAttentionWeights};
use lanepatch_core::eval::{EvalConfig, EvalOptions, EvalReport, LengthBucket, RunLabel};
use lanepatch_core::experiment::{
    self, build_grid, bundled_manifest, run_ep_infer, run_eval, run_gen_gt, run_synth, ExperimentReport, GridKind,
};
use lanepatch_core::io::write_json;
use lanepatch_core::{Error, ExperimentManifest, GtMode, Preset, SynthConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_STEP: u8 = 3;

#[derive(Parser)]
#[command(name = "lanepatch", version, about = "Sparse 3D lane ground truth, endpoint patching and lane evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dense lane set.
    Synth(SynthArgs),
    /// Sample dense lanes at preset rows.
    GenGt(GenGtArgs),
    /// Apply predicted endpoint deltas to sparse lanes.
    EpInfer(EpInferArgs),
    /// Match predictions against ground truth and report metrics.
    Eval(EvalArgs),
    /// Count and time point-lane attention against full self-attention.
    AttnBench(AttnBenchArgs),
    /// Run an experiment manifest.
    Run(RunArgs),
    /// Render evaluation reports as a table.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "openlane-like")]
    preset: Preset,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scenes: Option<usize>,
    /// JSON file with a full generator configuration, replacing the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenGtArgs {
    #[arg(long)]
    mode: GtMode,
    #[arg(long, default_value_t = 20)]
    m: usize,
    /// Grid range as `start:end`.
    #[arg(long, default_value = "3:103", value_parser = parse_range)]
    range: [f64; 2],
    /// Use the fixed anchor rows 5..100 instead of a linspace grid.
    #[arg(long)]
    persformer_grid: bool,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EpInferArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, default_value_t = 0.75)]
    iou: f64,
    #[arg(long)]
    report: PathBuf,
    /// Length buckets such as `0:20,20:40,40:103`.
    #[arg(long)]
    per_length_bucket: Option<String>,
    /// Include every lane pairing in the report.
    #[arg(long)]
    per_lane: bool,
    /// Row labels for tables.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
struct AttnBenchArgs {
    #[arg(long, default_value_t = 40)]
    n: usize,
    #[arg(long, default_value_t = 30)]
    m: usize,
    #[arg(long, default_value_t = 256)]
    c: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip the timed forward passes.
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RunArgs {
    manifest: Option<PathBuf>,
    /// Name of a bundled manifest (`table1_trends`, `table2_patched`).
    #[arg(long, conflicts_with = "manifest")]
    bundled: Option<String>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Evaluation or experiment report files.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<[f64; 2], String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected start:end, got `{s}`"))?;
    let a: f64 = a.trim().parse().map_err(|e| format!("bad range start: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("bad range end: {e}"))?;
    Ok([a, b])
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("LANEPATCH_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidConfig(format!("LANEPATCH_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<SynthConfig>(&text)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?
        }
        None => a.preset.config(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(n) = a.scenes {
        cfg.scenes = n;
    }
    let n = run_synth(&cfg, &a.out)?;
    info!("wrote {n} lanes in {} scenes to {}", cfg.scenes, a.out.display());
    Ok(())
}

fn gen_gt(a: GenGtArgs) -> anyhow::Result<()> {
    let kind = if a.persformer_grid { GridKind::Persformer } else { GridKind::Linspace };
    let grid = build_grid(&kind, a.m, a.range)?;
    let s = run_gen_gt(&a.input, &a.out, &grid, a.mode)?;
    info!("wrote {} lanes ({} skipped) to {}", s.lanes, s.skipped, a.out.display());
    Ok(())
}

fn ep_infer(a: EpInferArgs) -> anyhow::Result<()> {
    let s = run_ep_infer(&a.pred, &a.out)?;
    info!(
        "patched {}, too few valid {}, used stored deltas {}, without deltas {}",
        s.patched, s.too_few_valid, s.used_stored_deltas, s.no_deltas
    );
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let cfg = EvalConfig::default().with_lane_iou(a.iou);
    let opts = EvalOptions {
        keep_matches: a.per_lane,
        buckets: a.per_length_bucket.as_deref().map(LengthBucket::parse_list).transpose()?.unwrap_or_default(),
    };
    let label = RunLabel {
        mode: a.mode,
        m: a.m,
        preset: a.preset,
    };
    let report = run_eval(&a.gt, &a.pred, &cfg, &opts)?.with_label(label);
    write_json(&a.report, &report)?;
    println!(
        "recall {:.4} precision {:.4} f1 {:.4} (gt {}, pred {})",
        report.recall, report.precision, report.f1, report.counts.n_gt, report.counts.n_pred
    );
    Ok(())
}

fn estimate_json(e: &FlopEstimate, seconds: Option<f64>) -> serde_json::Value {
    json!({
        "projection_macs": e.projection_macs,
        "score_macs": e.score_macs,
        "weighted_sum_macs": e.weighted_sum_macs,
        "attention_macs": e.attention_macs(),
        "total_macs": e.total(),
        "score_units": e.score_units,
        "seconds": seconds,
    })
}

fn attn_bench(a: AttnBenchArgs) -> anyhow::Result<()> {
    let pla = flop_estimate(AttentionKind::Pla, a.n, a.m, a.c, a.heads)?;
    let msa = flop_estimate(AttentionKind::Msa, a.n, a.m, a.c, a.heads)?;
    let (pla_s, msa_s) = if a.no_timing {
        (None, None)
    } else {
        let weights = PlAttentionWeights::seeded(a.c, a.heads, a.seed)?;
        let dense = AttentionWeights::seeded(a.c, a.heads, a.seed.wrapping_add(100))?;
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let points = Array3::from_shape_simple_fn((a.n, a.m, a.c), || rng.random_range(-1.0..1.0));
        let feat = FeatureTensor::with_cls(points.view(), weights.cls.view())?;
        let t = Instant::now();
        pl_attention_forward(&feat, &weights)?;
        let pla_s = t.elapsed().as_secs_f64();
        let t = Instant::now();
        msa_forward(&feat, &dense)?;
        (Some(pla_s), Some(t.elapsed().as_secs_f64()))
    };
    let ratio = |a: u64, b: u64| b as f64 / a as f64;
    if a.json {
        let out = json!({
            "n": a.n, "m": a.m, "c": a.c, "heads": a.heads, "seed": a.seed,
            "convention": CONVENTION,
            "pla": estimate_json(&pla, pla_s),
            "msa": estimate_json(&msa, msa_s),
            "msa_over_pla_attention": ratio(pla.attention_macs(), msa.attention_macs()),
            "msa_over_pla_total": ratio(pla.total(), msa.total()),
        });
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        println!("N={} M={} C={} heads={}", a.n, a.m, a.c, a.heads);
        for (name, e, s) in [("PLA", &pla, pla_s), ("MSA", &msa, msa_s)] {
            let time = s.map(|s| format!(", {:.3} ms", 1e3 * s)).unwrap_or_default();
            println!(
                "{name}: attention {} MACs, total {} MACs, score units {}{time}",
                e.attention_macs(),
                e.total(),
                e.score_units
            );
        }
        println!("convention: {CONVENTION}");
    }
    Ok(())
}

fn run(a: RunArgs) -> anyhow::Result<()> {
    let manifest = match (&a.manifest, &a.bundled) {
        (Some(p), None) => ExperimentManifest::load(p)?,
        (None, Some(name)) => bundled_manifest(name)?,
        _ => return Err(Error::InvalidConfig("give a manifest path or --bundled NAME".into()).into()),
    };
    let out = experiment::run_experiment(&manifest, &a.out_dir)?;
    match (out.report_path, out.table_path) {
        (Some(r), Some(t)) => println!("wrote {} and {}", r.display(), t.display()),
        _ => println!("manifest has no steps"),
    }
    Ok(())
}

fn load_reports(path: &Path) -> anyhow::Result<Vec<EvalReport>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("reports").is_some() {
        Ok(serde_json::from_value::<ExperimentReport>(value)?.reports)
    } else {
        Ok(vec![serde_json::from_value(value)?])
    }
}

fn report(a: ReportArgs) -> anyhow::Result<()> {
    let mut reports = Vec::new();
    for p in &a.inputs {
        reports.extend(load_reports(p)?);
    }
    experiment::write_tables(&reports, &a.out, a.csv.as_deref())?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_config_error() => EXIT_CONFIG,
        _ => EXIT_STEP,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Synth(a) => synth(a),
        Command::GenGt(a) => gen_gt(a),
        Command::EpInfer(a) => ep_infer(a),
        Command::Eval(a) => eval(a),
        Command::AttnBench(a) => attn_bench(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
