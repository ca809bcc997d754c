use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dpscale::eval::{ScaleReport, Stage};
use dpscale::io::{self, MANIFEST_FILE};
use dpscale::pipeline::{blur_map, run_estimate, FailureReport, Report};
use dpscale::synthetic::{multi_aperture_scene, random_scene, render_dataset, NoiseModel, RandomSceneOptions, SceneSpec};
use dpscale::RunConfig;

/// Metric scale recovery from dual-pixel defocus.
#[derive(Parser)]
#[command(name = "dpscale", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the metric scale of a manifest's reconstruction.
    Estimate(EstimateArgs),
    /// Render a synthetic dataset.
    Synth(SynthArgs),
    /// Dump per-patch blur estimates for one view.
    Blur(BlurArgs),
    /// Score estimation reports against ground truth.
    Eval(EvalArgs),
}

/// Overrides for individual run settings.
#[derive(Args, Default)]
struct ConfigArgs {
    /// JSON file with run settings; applied after the manifest's own overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    r_max: Option<f64>,
    #[arg(long)]
    blur_step: Option<f64>,
    #[arg(long)]
    t_p: Option<f64>,
    #[arg(long)]
    n_v: Option<usize>,
    #[arg(long)]
    t_c: Option<f64>,
    #[arg(long)]
    t_s: Option<f64>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    irls_max_iter: Option<usize>,
    #[arg(long)]
    irls_eps: Option<f64>,
    #[arg(long)]
    irls_tol: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Manifest file, or a directory containing manifest.json.
    manifest: PathBuf,
    /// Report destination; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Ground-truth scale; defaults to the manifest's value.
    #[arg(long)]
    s_gt: Option<f64>,
    /// Leave stage timings out of the report.
    #[arg(long)]
    no_timings: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
    /// Scene description in JSON; a random scene is generated when absent.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    views: usize,
    #[arg(long, default_value_t = 3)]
    planes: usize,
    #[arg(long, default_value_t = 512)]
    size: usize,
    /// Render every view at each of these f-numbers.
    #[arg(long, value_delimiter = ',')]
    apertures: Vec<f64>,
    #[arg(long)]
    mono: bool,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    gain_jitter: f64,
}

#[derive(Args)]
struct BlurArgs {
    /// Manifest file, or a directory containing manifest.json.
    manifest: PathBuf,
    /// View id; the first view when absent.
    #[arg(long)]
    view: Option<String>,
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Report files written by `estimate`.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Ground-truth file written by `synth`.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    s_gt: Option<f64>,
    /// Write the scores as JSON.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn merge(cfg: &RunConfig, overrides: &serde_json::Value) -> Result<RunConfig> {
    let mut merged = serde_json::to_value(cfg)?;
    let (Some(dst), Some(src)) = (merged.as_object_mut(), overrides.as_object()) else {
        bail!("config overrides must be a JSON object");
    };
    for (k, v) in src {
        dst.insert(k.clone(), v.clone());
    }
    Ok(serde_json::from_value(merged)?)
}

impl ConfigArgs {
    fn apply(&self, mut cfg: RunConfig) -> Result<RunConfig> {
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            cfg = merge(&cfg, &value).with_context(|| format!("applying {}", path.display()))?;
        }
        macro_rules! set {
            ($($field:ident).+ <- $arg:expr) => {
                if let Some(v) = $arg {
                    cfg.$($field).+ = v;
                }
            };
        }
        set!(m <- self.m);
        set!(stride <- self.stride);
        set!(blur_step <- self.blur_step);
        set!(t_p <- self.t_p);
        set!(n_v <- self.n_v);
        set!(t_c <- self.t_c);
        set!(t_s <- self.t_s);
        set!(candidates <- self.candidates);
        set!(irls.max_iter <- self.irls_max_iter);
        set!(irls.eps <- self.irls_eps);
        set!(irls.tol <- self.irls_tol);
        set!(threads <- self.threads);
        set!(seed <- self.seed);
        if self.r_max.is_some() {
            cfg.r_max = self.r_max;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn estimate(args: &EstimateArgs) -> Result<ExitCode> {
    let path = manifest_path(&args.manifest);
    let manifest = io::load_manifest(&path)?;
    let cfg = args.config.apply(manifest.run_config(RunConfig::default())?)?;
    let views = io::load_views(&manifest, &io::base_dir(&path))?;
    let s_gt = args.s_gt.or(manifest.ground_truth_scale);
    match run_estimate(&views, &cfg, s_gt) {
        Ok(mut report) => {
            if args.no_timings {
                report.timings.clear();
            }
            emit(args.out.as_deref(), &serde_json::to_string_pretty(&report)?)?;
            eprintln!("s_initial = {:.6}, s_optim = {:.6}", report.s_initial, report.s_optim);
            if let Some(e) = &report.evaluation {
                eprintln!("r_s initial = {:.3}, optim = {:.3}", e.ratio_initial, e.ratio_optim);
            }
            Ok(ExitCode::SUCCESS)
        }
        Err(err) => {
            let failure = FailureReport::new(&err, &cfg);
            emit(args.out.as_deref(), &serde_json::to_string_pretty(&failure)?)?;
            eprintln!("estimation failed: {err}");
            Ok(ExitCode::from(1))
        }
    }
}

fn synth(args: &SynthArgs) -> Result<ExitCode> {
    let spec: SceneSpec = match &args.scene {
        Some(path) => io::read_json(path)?,
        None => {
            let opts = RandomSceneOptions {
                views: args.views,
                planes: args.planes,
                size: args.size,
                color: !args.mono,
                noise: NoiseModel {
                    sigma: args.noise_sigma,
                    gain_jitter: args.gain_jitter,
                },
                ..Default::default()
            };
            if args.apertures.is_empty() {
                random_scene(args.seed, &opts)?
            } else {
                multi_aperture_scene(args.seed, &args.apertures, &opts)?
            }
        }
    };
    let data = render_dataset(&spec)?;
    let manifest = io::write_dataset(&args.out, &data, &spec)?;
    eprintln!("wrote {} views, scale {:.6}", data.views.len(), data.truth.scale);
    println!("{}", manifest.display());
    Ok(ExitCode::SUCCESS)
}

fn blur(args: &BlurArgs) -> Result<ExitCode> {
    let path = manifest_path(&args.manifest);
    let manifest = io::load_manifest(&path)?;
    let cfg = args.config.apply(manifest.run_config(RunConfig::default())?)?;
    let index = match &args.view {
        Some(id) => manifest
            .views
            .iter()
            .position(|v| &v.view_id == id)
            .with_context(|| format!("no view {id:?} in {}", path.display()))?,
        None => 0,
    };
    let view = io::load_view(&manifest.views[index], &io::base_dir(&path), manifest.gamma)?;
    let map = blur_map(&view, index, &cfg)?;
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&map)?)?;
    Ok(ExitCode::SUCCESS)
}

fn eval(args: &EvalArgs) -> Result<ExitCode> {
    let truth_scale = match (&args.truth, args.s_gt) {
        (_, Some(s)) => Some(s),
        (Some(path), None) => Some(io::read_truth(path)?.scale),
        (None, None) => None,
    };
    let mut scores = ScaleReport::default();
    for path in &args.reports {
        let report: Report = io::read_json(path)?;
        let s_gt = truth_scale
            .or(report.evaluation.as_ref().map(|e| e.s_gt))
            .with_context(|| format!("no ground truth for {}; pass --truth or --s-gt", path.display()))?;
        let label = path.display().to_string();
        scores.push(label.clone(), Stage::Initial, report.s_initial, s_gt)?;
        scores.push(label, Stage::Optim, report.s_optim, s_gt)?;
    }
    print!("{}", scores.table());
    if let Some(out) = &args.out {
        io::write_json(out, &scores)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Estimate(a) => estimate(a),
        Command::Synth(a) => synth(a),
        Command::Blur(a) => blur(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
