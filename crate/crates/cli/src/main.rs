//! Command-line front end: train, render, eval and bench-backward.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use budgetsplat::backward::{
    backward_per_pixel, backward_per_splat, bucket_counts, PerSplatOptions,
};
use budgetsplat::config::{BackwardEngine, ScheduleKind, TrainConfig};
use budgetsplat::io::synthetic::{make_synthetic_scene, SyntheticSpec};
use budgetsplat::io::{self, ply, SceneBundle};
use budgetsplat::render::{project, render};
use budgetsplat::train::{self, max_relative_grad_difference};
use budgetsplat::{Error, Result};

#[derive(Parser)]
#[command(
    name = "budgetsplat",
    about = "Deterministic Gaussian-splatting trainer with an exact primitive budget",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a scene and write model + report to an output directory.
    Train(TrainArgs),
    /// Render every view of a scene from a saved model.
    Render(RenderArgs),
    /// Evaluate a saved model on the scene's test split.
    Eval(EvalArgs),
    /// Time the two backward engines on an identical synthetic workload.
    BenchBackward(BenchArgs),
}

#[derive(Args)]
struct SceneArgs {
    /// Sparse-reconstruction directory (cameras/images/points3D tables).
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Directory with the ground-truth images (defaults to the scene dir).
    #[arg(long)]
    images: Option<PathBuf>,
    /// Synthetic scene spec instead of a dataset, e.g.
    /// "gaussians=20,views=8,res=64,jitter=0.03".
    #[arg(long, conflicts_with = "scene")]
    synthetic: Option<String>,
    /// Generator seed for the synthetic scene.
    #[arg(long, default_value_t = 0)]
    synthetic_seed: u64,
}

#[derive(Copy, Clone, ValueEnum)]
enum BackwardArg {
    PerPixel,
    PerSplat,
}

#[derive(Copy, Clone, ValueEnum)]
enum ScheduleArg {
    Vertex,
    PaperEq2,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Output directory for model.ply, run_config.toml and the reports.
    #[arg(long)]
    out: PathBuf,
    /// Run-configuration TOML; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Exact final Gaussian count.
    #[arg(long)]
    budget: Option<usize>,
    /// Budget as a multiple of the initial point count.
    #[arg(long, conflicts_with = "budget")]
    budget_multiplier: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    densify_interval: Option<usize>,
    /// Gradient engine.
    #[arg(long, value_enum)]
    backward: Option<BackwardArg>,
    /// Directory of per-view ROI masks (single-channel PNG named after the
    /// view, thresholded at 0.5).
    #[arg(long)]
    roi_mask_dir: Option<PathBuf>,
    /// TOML file with the eight score weights and the saliency lambdas.
    #[arg(long)]
    score_weights: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Keep the sigmoid opacity activation for the whole run.
    #[arg(long)]
    no_high_opacity: bool,
    /// Growth-curve variant.
    #[arg(long, value_enum)]
    schedule: Option<ScheduleArg>,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Background color as "r,g,b" in [0,1].
    #[arg(long, default_value = "0,0,0")]
    background: String,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long)]
    model: PathBuf,
    /// Metrics CSV path (defaults to stdout only).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "0,0,0")]
    background: String,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 5000)]
    gaussians: usize,
    #[arg(long, default_value_t = 128)]
    resolution: usize,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, serde::Deserialize)]
struct ScoreWeightsFile {
    #[serde(flatten)]
    weights: budgetsplat::ScoreWeights,
    lambda1: Option<f64>,
    lambda2: Option<f64>,
}

fn parse_synthetic_spec(text: &str) -> Result<SyntheticSpec> {
    let mut spec = SyntheticSpec::default();
    for part in text.split(',').filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::config(format!("bad synthetic field {part}")))?;
        let bad = || Error::config(format!("bad synthetic value {part}"));
        match key.trim() {
            "gaussians" => spec.gaussian_count = value.parse().map_err(|_| bad())?,
            "views" => spec.camera_count = value.parse().map_err(|_| bad())?,
            "res" => spec.resolution = value.parse().map_err(|_| bad())?,
            "jitter" => spec.jitter = value.parse().map_err(|_| bad())?,
            "test_stride" => spec.test_split_stride = value.parse().map_err(|_| bad())?,
            other => {
                return Err(Error::config(format!("unknown synthetic field {other}")));
            }
        }
    }
    Ok(spec)
}

fn parse_background(text: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::config("background must be r,g,b"));
    }
    let mut bg = [0.0; 3];
    for (slot, part) in bg.iter_mut().zip(parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("bad background component {part}")))?;
    }
    Ok(bg)
}

fn load_scene(args: &SceneArgs) -> Result<SceneBundle> {
    if let Some(spec_text) = &args.synthetic {
        let spec = parse_synthetic_spec(spec_text)?;
        let mut rng = ChaCha8Rng::seed_from_u64(args.synthetic_seed);
        return Ok(make_synthetic_scene(&spec, &mut rng).0);
    }
    let sparse = args
        .scene
        .as_ref()
        .ok_or_else(|| Error::config("either --scene or --synthetic is required"))?;
    let images = args.images.clone().unwrap_or_else(|| sparse.clone());
    io::colmap::load_colmap(sparse, &images)
}

fn attach_roi_masks(scene: &mut SceneBundle, dir: &Path) -> Result<usize> {
    let mut attached = 0;
    for view in scene.views.iter_mut() {
        let stem = Path::new(&view.name)
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| view.name.clone());
        let path = dir.join(format!("{stem}.png"));
        if path.is_file() {
            let mask = io::load_mask(&path)?;
            if mask.width != view.camera.width || mask.height != view.camera.height {
                return Err(Error::data(format!(
                    "mask {} does not match view {}",
                    path.display(),
                    view.name
                )));
            }
            view.roi = Some(mask);
            attached += 1;
        }
    }
    Ok(attached)
}

fn build_config(args: &TrainArgs, scene: &SceneBundle) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            TrainConfig::from_toml(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(b) = args.budget {
        cfg.budget = b;
    }
    if let Some(m) = args.budget_multiplier {
        if m <= 0.0 {
            return Err(Error::config("budget multiplier must be positive"));
        }
        cfg.budget = (m * scene.point_count() as f64).ceil() as usize;
    }
    if let Some(it) = args.iterations {
        cfg.total_iterations = it;
    }
    if let Some(di) = args.densify_interval {
        cfg.densify_interval = di;
    }
    if let Some(engine) = args.backward {
        cfg.backward_engine = match engine {
            BackwardArg::PerPixel => BackwardEngine::PerPixel,
            BackwardArg::PerSplat => BackwardEngine::PerSplat,
        };
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.no_high_opacity {
        cfg.high_opacity_enabled = false;
    }
    if let Some(schedule) = args.schedule {
        cfg.schedule = match schedule {
            ScheduleArg::Vertex => ScheduleKind::Vertex,
            ScheduleArg::PaperEq2 => ScheduleKind::PaperEq2,
        };
    }
    if let Some(path) = &args.score_weights {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed: ScoreWeightsFile =
            toml::from_str(&text).map_err(|e| Error::config(format!("bad score weights: {e}")))?;
        cfg.score_weights = parsed.weights;
        if let Some(l1) = parsed.lambda1 {
            cfg.saliency_lambda1 = l1;
        }
        if let Some(l2) = parsed.lambda2 {
            cfg.saliency_lambda2 = l2;
        }
    }
    cfg.derive_radius_threshold(scene.scene_extent);
    Ok(cfg)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut scene = load_scene(&args.scene)?;
    if let Some(dir) = &args.roi_mask_dir {
        let attached = attach_roi_masks(&mut scene, dir)?;
        eprintln!("attached {attached} ROI masks");
    }
    let cfg = build_config(&args, &scene)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    eprintln!(
        "training: {} points -> budget {}, {} iterations, {} views ({} engine)",
        scene.point_count(),
        cfg.budget,
        cfg.total_iterations,
        scene.views.len(),
        match cfg.backward_engine {
            BackwardEngine::PerPixel => "per-pixel",
            BackwardEngine::PerSplat => "per-splat",
        }
    );
    let (model, report) = train::train(&scene, &cfg)?;

    ply::save_model(&args.out.join("model.ply"), &model)?;
    write_file(&args.out.join("run_config.toml"), &cfg.to_toml())?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::data(format!("report serialization failed: {e}")))?;
    write_file(&args.out.join("report.json"), &json)?;

    let mut losses = String::from("iteration,loss\n");
    for (i, l) in report.losses.iter().enumerate() {
        losses.push_str(&format!("{},{}\n", i + 1, l));
    }
    write_file(&args.out.join("losses.csv"), &losses)?;

    let mut densify = String::from("step,target,live_before,pruned,added,split,cloned,live_after\n");
    for e in &report.densify_events {
        densify.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            e.step_index, e.target, e.live_before, e.pruned, e.added, e.split, e.cloned,
            e.live_after
        ));
    }
    write_file(&args.out.join("densify_log.csv"), &densify)?;
    write_file(
        &args.out.join("final_metrics.csv"),
        &metrics_csv(&report.final_metrics, report.mean_psnr, report.mean_ssim),
    )?;

    eprintln!(
        "done: {} gaussians (peak {}), mean PSNR {:.2} dB, SSIM {:.4}",
        report.final_count, report.peak_live, report.mean_psnr, report.mean_ssim
    );
    eprintln!(
        "phases: forward {:.2}s, backward {:.2}s, optimizer {:.2}s, densify {:.2}s (total {:.2}s)",
        report.timings.forward,
        report.timings.backward,
        report.timings.optimizer,
        report.timings.densify,
        report.timings.total
    );
    Ok(())
}

fn metrics_csv(metrics: &[train::ViewMetrics], mean_psnr: f64, mean_ssim: f64) -> String {
    let mut out = String::from("view,psnr,ssim\n");
    for m in metrics {
        out.push_str(&format!("{},{},{}\n", m.name, m.psnr, m.ssim));
    }
    out.push_str(&format!("mean,{mean_psnr},{mean_ssim}\n"));
    out
}

fn cmd_render(args: RenderArgs) -> Result<()> {
    let scene = load_scene(&args.scene)?;
    let model = ply::load_model(&args.model)?;
    let background = parse_background(&args.background)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    for view in &scene.views {
        let image = train::render_view(&model, &view.camera, background);
        let stem = view.name.replace(['/', '\\'], "_");
        let stem = stem.strip_suffix(".png").unwrap_or(&stem);
        io::save_png(&args.out.join(format!("{stem}.png")), &image)?;
    }
    eprintln!("rendered {} views to {}", scene.views.len(), args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let scene = load_scene(&args.scene)?;
    let model = ply::load_model(&args.model)?;
    let background = parse_background(&args.background)?;
    let (metrics, mean_psnr, mean_ssim) = train::evaluate(&model, &scene, background)?;
    println!("{:<24} {:>10} {:>10}", "view", "psnr", "ssim");
    for m in &metrics {
        println!("{:<24} {:>10.3} {:>10.5}", m.name, m.psnr, m.ssim);
    }
    println!("{:<24} {:>10.3} {:>10.5}", "mean", mean_psnr, mean_ssim);
    if let Some(path) = &args.out {
        write_file(path, &metrics_csv(&metrics, mean_psnr, mean_ssim))?;
    }
    Ok(())
}

fn cmd_bench_backward(args: BenchArgs) -> Result<()> {
    let spec = SyntheticSpec {
        gaussian_count: args.gaussians,
        camera_count: 2,
        resolution: args.resolution,
        jitter: 0.0,
        test_split_stride: 0,
        ..SyntheticSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (scene, truth) = make_synthetic_scene(&spec, &mut rng);
    let camera = &scene.views[0].camera;
    let splats = project(&truth, camera, 3);
    let artifacts = render(&splats, camera, spec.background);
    let dl: Vec<f64> = (0..3 * camera.width * camera.height)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();

    // Equivalence gate before any timing.
    let reference = backward_per_pixel(&truth, camera, &artifacts, &splats, &dl, 3);
    let bucketed = backward_per_splat(
        &truth,
        camera,
        &artifacts,
        &splats,
        &dl,
        3,
        PerSplatOptions::default(),
    );
    let diff = max_relative_grad_difference(&reference, &bucketed, 1e-8);
    if diff > 1e-5 {
        return Err(Error::data(format!(
            "engines disagree before timing: max relative difference {diff:.3e}"
        )));
    }

    let time = |f: &dyn Fn()| -> (f64, f64) {
        let mut samples = Vec::with_capacity(args.repeats);
        for _ in 0..args.repeats {
            let t = Instant::now();
            f();
            samples.push(t.elapsed().as_secs_f64() * 1e3);
        }
        let mean = samples.iter().sum::<f64>() / samples.len().max(1) as f64;
        let var = samples
            .iter()
            .map(|s| (s - mean) * (s - mean))
            .sum::<f64>()
            / samples.len().max(1) as f64;
        (mean, var.sqrt())
    };

    let (pixel_mean, pixel_sigma) = time(&|| {
        backward_per_pixel(&truth, camera, &artifacts, &splats, &dl, 3);
    });
    let (splat_mean, splat_sigma) = time(&|| {
        backward_per_splat(
            &truth,
            camera,
            &artifacts,
            &splats,
            &dl,
            3,
            PerSplatOptions::default(),
        );
    });

    let (total_buckets, max_tile) = bucket_counts(&artifacts);
    println!(
        "workload: {} splats, {}x{} px, {} repeats, {} build",
        splats.len(),
        camera.width,
        camera.height,
        args.repeats,
        if budgetsplat::parallel::is_parallel_build() {
            "parallel"
        } else {
            "sequential"
        }
    );
    println!("equivalence: max relative gradient difference {diff:.3e} (gate 1e-5)");
    println!("buckets: {total_buckets} total, busiest tile {max_tile}");
    println!("{:<12} {:>12} {:>12}", "engine", "mean_ms", "sigma_ms");
    println!("{:<12} {:>12.3} {:>12.3}", "per-pixel", pixel_mean, pixel_sigma);
    println!("{:<12} {:>12.3} {:>12.3}", "per-splat", splat_mean, splat_sigma);
    Ok(())
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Train(args) => cmd_train(args),
        Command::Render(args) => cmd_render(args),
        Command::Eval(args) => cmd_eval(args),
        Command::BenchBackward(args) => cmd_bench_backward(args),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err @ Error::Config(_)) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(3)
        }
    }
}
