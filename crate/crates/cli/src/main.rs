use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use mcst::config::ExperimentConfig;
use mcst::ct_sim::{
    counts_to_sinogram, fbp, parse_ellipses, random_head_ellipses, render_ellipses, simulate_counts, NoiseModel,
    ParallelBeamProjector, Phantom, ScanGeometry, WeightedScan,
};
use mcst::experiment::run_experiment;
use mcst::patching::extract_patches_many;
use mcst::recon::{circular_roi, pwls_ep, pwls_mcst, rmse_roi, ssim, EpConfig, ReconConfig};
use mcst::training::{train, TrainConfig};
use mcst::{io, Image};

mod png_out;

#[derive(Parser)]
#[command(name = "mcst", version, about = "Multi-layer clustering sparsifying transforms for low-dose CT")]
struct Cli {
    /// Worker threads for the parallel phases (default: one per core).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Log progress to standard error; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a phantom image.
    Phantom(PhantomArgs),
    /// Project a phantom and draw one noisy low-dose scan.
    Simulate(SimulateArgs),
    /// Learn an MCST model from patches or images.
    Train(TrainArgs),
    /// Reconstruct an image from a sinogram and its weights.
    Reconstruct(ReconstructArgs),
    /// Score reconstructions against a reference image.
    Evaluate(EvaluateArgs),
    /// Write an image as an 8-bit grayscale PNG through a display window.
    ExportPng(ExportPngArgs),
    /// Simulate, train, reconstruct and evaluate from one config file.
    RunExperiment(RunExperimentArgs),
}

#[derive(Args)]
struct PhantomArgs {
    /// shepp-logan, disk, random-head or ellipses-spec.
    #[arg(long, default_value = "shepp-logan")]
    name: String,
    /// Image side in pixels.
    #[arg(long, default_value_t = 128)]
    size: usize,
    /// Ellipse list for ellipses-spec: one `cx cy a b angle_deg value` per line.
    #[arg(long)]
    ellipses: Option<PathBuf>,
    /// Seed for random-head.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output image file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Phantom name (as for `phantom`) or an image file.
    #[arg(long, default_value = "shepp-logan")]
    phantom: String,
    /// Ellipse list when --phantom is ellipses-spec.
    #[arg(long)]
    ellipses: Option<PathBuf>,
    /// Image side in pixels; ignored when --phantom is a file.
    #[arg(long, default_value_t = 128)]
    size: usize,
    /// Number of projection views over 180 degrees.
    #[arg(long, default_value_t = 180)]
    views: usize,
    /// Detector bins per view.
    #[arg(long, default_value_t = 185)]
    dets: usize,
    /// Pixel size in mm.
    #[arg(long, default_value_t = 2.0)]
    pixel_mm: f64,
    /// Detector bin size in mm.
    #[arg(long, default_value_t = 2.0)]
    det_mm: f64,
    /// Incident photons per ray.
    #[arg(long, default_value_t = 1e4)]
    i0: f64,
    /// Electronic noise variance.
    #[arg(long, default_value_t = 25.0)]
    sigma2: f64,
    /// Seed of the noise stream (and of random-head).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Writes PREFIX.sin, PREFIX.wgt and PREFIX.truth.img.
    #[arg(long, value_name = "PREFIX")]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training data, comma separated: patch files (MCPAT1) or images (MCIMG1).
    #[arg(long, value_delimiter = ',', required = true)]
    patches: Vec<PathBuf>,
    /// Patch side used when cutting images into patches.
    #[arg(long, default_value_t = 8)]
    patch_side: usize,
    /// Patch stride used when cutting images into patches.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Number of layers; must match the lengths of --clusters and --eta.
    #[arg(long)]
    layers: usize,
    /// Clusters per layer, e.g. 5,5.
    #[arg(long, value_delimiter = ',', required = true)]
    clusters: Vec<usize>,
    /// Sparse-coding threshold per layer, e.g. 80,60.
    #[arg(long, value_delimiter = ',', required = true)]
    eta: Vec<f64>,
    /// Training iterations.
    #[arg(long)]
    iters: usize,
    /// Seed for k-means and deeper-layer initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Lloyd iterations for the first-layer k-means.
    #[arg(long, default_value_t = 20)]
    kmeans_iters: usize,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Objective trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Mcst,
    Ep,
    Fbp,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Sinogram file.
    #[arg(long)]
    sinogram: PathBuf,
    /// Statistical weights file.
    #[arg(long)]
    weights: PathBuf,
    /// Learned model; required for --method mcst.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Reconstruction method.
    #[arg(long, value_enum, default_value_t = Method::Mcst)]
    method: Method,
    /// Regularization weight for mcst.
    #[arg(long)]
    beta: Option<f64>,
    /// Sparsity threshold per layer for mcst, e.g. 30,10.
    #[arg(long, value_delimiter = ',')]
    gamma: Vec<f64>,
    /// Outer iterations.
    #[arg(long, default_value_t = 100)]
    outer: usize,
    /// Image updates per outer iteration.
    #[arg(long, default_value_t = 2)]
    inner: usize,
    /// Over-relaxation parameter in (1, 2].
    #[arg(long, default_value_t = 1.999)]
    alpha: f64,
    /// Patch stride used by the regularizer.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Code the initial image before the first image update.
    #[arg(long)]
    warm_start: bool,
    /// Drop the nonnegativity constraint.
    #[arg(long)]
    allow_negative: bool,
    /// Initial image for mcst: fbp, zero, ep or an image file.
    #[arg(long, default_value = "fbp")]
    init: String,
    /// PWLS-EP weight (for --method ep and --init ep).
    #[arg(long, default_value_t = 1e-4)]
    ep_beta: f64,
    /// PWLS-EP potential parameter in HU.
    #[arg(long, default_value_t = 20.0)]
    ep_delta: f64,
    /// PWLS-EP iterations.
    #[arg(long, default_value_t = 200)]
    ep_iters: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 128)]
    size: usize,
    /// Pixel size in mm.
    #[arg(long, default_value_t = 2.0)]
    pixel_mm: f64,
    /// Detector bin size in mm.
    #[arg(long, default_value_t = 2.0)]
    det_mm: f64,
    /// Output image file.
    #[arg(long)]
    out: PathBuf,
    /// Objective trace CSV (mcst and ep).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Metric {
    Rmse,
    Ssim,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Images to score, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    recon: Vec<PathBuf>,
    /// Reference image.
    #[arg(long)]
    truth: PathBuf,
    /// Metrics to report, in order.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Metric::Rmse, Metric::Ssim])]
    metrics: Vec<Metric>,
    /// Restrict RMSE to the inscribed circle.
    #[arg(long)]
    roi_circle: bool,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportPngArgs {
    /// Image file.
    #[arg(long = "in", value_name = "IMG")]
    input: PathBuf,
    /// Display window LO,HI mapped to 0..255.
    #[arg(long, default_value = "800,1200")]
    window: String,
    /// Output PNG.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunExperimentArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the noise and training seeds of the config.
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<mcst::Error> for Failure {
    fn from(e: mcst::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// Configuration errors caused by flags count as usage errors.
fn flag_error(e: mcst::Error) -> Failure {
    match e {
        mcst::Error::Config(msg) => Failure::Usage(msg),
        other => other.into(),
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Prefixes errors from reading `path` with the path.
fn ctx<T>(path: impl AsRef<Path>, r: mcst::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Runtime(format!("{}: {e}", path.as_ref().display())))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                _ => {
                    let text = e.render().to_string();
                    let text = text.strip_prefix("error: ").unwrap_or(&text);
                    eprint!("error: {text}");
                    ExitCode::from(1)
                }
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = configure_workers(cli.workers).and_then(|()| match cli.command {
        Command::Phantom(a) => phantom(a),
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train_cmd(a, cli.verbose > 0),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Evaluate(a) => evaluate(a),
        Command::ExportPng(a) => export_png(a),
        Command::RunExperiment(a) => run_experiment_cmd(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn configure_workers(workers: Option<usize>) -> Outcome {
    let Some(n) = workers else { return Ok(()) };
    if n == 0 {
        return Err(Failure::Usage("--workers must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(prefix.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

fn render_named(name: &str, size: usize, ellipses: Option<&Path>, seed: u64) -> Result<Image, Failure> {
    if size == 0 {
        return Err(Failure::Usage("--size must be positive".into()));
    }
    if name == "random-head" {
        return Ok(render_ellipses(&random_head_ellipses(seed), size, size));
    }
    let list = match ellipses {
        Some(p) => Some(parse_ellipses(&std::fs::read_to_string(p)?)?),
        None => None,
    };
    Ok(Phantom::by_name(name, list).map_err(flag_error)?.render(size, size)?)
}

fn phantom(a: PhantomArgs) -> Outcome {
    let img = render_named(&a.name, a.size, a.ellipses.as_deref(), a.seed)?;
    io::write_image(&a.out, &img)?;
    Ok(())
}

fn simulate(a: SimulateArgs) -> Outcome {
    let truth = if Path::new(&a.phantom).is_file() {
        ctx(&a.phantom, io::read_image(&a.phantom))?
    } else {
        render_named(&a.phantom, a.size, a.ellipses.as_deref(), a.seed)?
    };
    let geom = ScanGeometry::parallel(a.views, a.dets, a.det_mm, a.pixel_mm, truth.height(), truth.width())
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let noise = NoiseModel::new(a.i0, a.sigma2, a.seed).map_err(flag_error)?;
    let clean = ParallelBeamProjector::new(geom.clone()).project(&truth)?;
    let (sinogram, weights) = counts_to_sinogram(&simulate_counts(&clean, &noise)?, &noise)?;
    io::write_sinogram(with_suffix(&a.out_prefix, ".sin"), &sinogram)?;
    io::write_weights(with_suffix(&a.out_prefix, ".wgt"), geom.n_views, geom.n_detectors, &weights)?;
    io::write_image(with_suffix(&a.out_prefix, ".truth.img"), &truth)?;
    Ok(())
}

fn load_training_patches(paths: &[PathBuf], patch_side: usize, stride: usize) -> Result<DMatrix<f64>, Failure> {
    let mut images = Vec::new();
    let mut blocks = Vec::new();
    for p in paths {
        match &ctx(p, io::peek_magic(p))? {
            m if m == io::PATCHES_MAGIC => blocks.push(ctx(p, io::read_patches(p))?),
            m if m == io::IMAGE_MAGIC => images.push(ctx(p, io::read_image(p))?),
            _ => return Err(Failure::Runtime(format!("{}: neither a patch nor an image file", p.display()))),
        }
    }
    if !images.is_empty() {
        blocks.push(extract_patches_many(&images, patch_side, stride).map_err(flag_error)?);
    }
    let n = blocks[0].nrows();
    if let Some(b) = blocks.iter().find(|b| b.nrows() != n) {
        return Err(Failure::Runtime(format!("mixed patch lengths {n} and {}", b.nrows())));
    }
    let total = blocks.iter().map(|b| b.ncols()).sum();
    let mut data = Vec::with_capacity(n * total);
    for b in &blocks {
        data.extend_from_slice(b.as_slice());
    }
    Ok(DMatrix::from_vec(n, total, data))
}

fn train_cmd(a: TrainArgs, verbose: bool) -> Outcome {
    if a.clusters.len() != a.layers || a.eta.len() != a.layers {
        return Err(Failure::Usage(format!(
            "--layers {} needs that many --clusters and --eta values (got {} and {})",
            a.layers,
            a.clusters.len(),
            a.eta.len()
        )));
    }
    let patches = load_training_patches(&a.patches, a.patch_side, a.stride)?;
    let side = (patches.nrows() as f64).sqrt().round() as usize;
    if side * side != patches.nrows() {
        return Err(Failure::Runtime(format!("patch length {} is not a square", patches.nrows())));
    }
    let mut cfg = TrainConfig::new(a.clusters, a.eta, a.iters, a.seed);
    cfg.patch_side = side;
    cfg.kmeans_iters = a.kmeans_iters;
    cfg.log_every = if verbose { 10 } else { 0 };
    cfg.validate().map_err(flag_error)?;
    let (model, trace) = train(&patches, &cfg)?;
    io::write_model(&a.out, &model)?;
    if let Some(path) = &a.trace {
        trace.write_csv(BufWriter::new(File::create(path)?))?;
    }
    Ok(())
}

fn reconstruct(a: ReconstructArgs) -> Outcome {
    let sinogram = ctx(&a.sinogram, io::read_sinogram(&a.sinogram))?;
    let (nv, nb, weights) = ctx(&a.weights, io::read_weights(&a.weights))?;
    if (nv, nb) != (sinogram.n_views(), sinogram.n_detectors()) {
        return Err(Failure::Runtime(format!(
            "weights are {nv}x{nb}, sinogram is {}x{}",
            sinogram.n_views(),
            sinogram.n_detectors()
        )));
    }
    let geom = ScanGeometry::parallel(nv, nb, a.det_mm, a.pixel_mm, a.size, a.size)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let fbp_image = fbp(&sinogram, &geom)?;
    if a.method == Method::Fbp {
        io::write_image(&a.out, &fbp_image)?;
        return Ok(());
    }
    let projector = ParallelBeamProjector::new(geom.clone());
    let scan = WeightedScan::new(&projector, sinogram.as_slice().to_vec(), weights)?;
    let mut ep_cfg = EpConfig::new(a.ep_beta, a.ep_delta, a.ep_iters);
    ep_cfg.alpha = a.alpha;
    let run_ep = || -> Result<(Image, Vec<f64>), Failure> {
        ep_cfg.validate().map_err(flag_error)?;
        Ok(pwls_ep(&projector, &scan, &ep_cfg, &fbp_image)?)
    };
    if a.method == Method::Ep {
        let (image, objective) = run_ep()?;
        io::write_image(&a.out, &image)?;
        if let Some(path) = &a.trace {
            let mut out = BufWriter::new(File::create(path)?);
            writeln!(out, "iteration,objective")?;
            for (i, v) in objective.iter().enumerate() {
                writeln!(out, "{},{v:e}", i + 1)?;
            }
            out.flush()?;
        }
        return Ok(());
    }

    let model_path = a
        .model
        .as_ref()
        .ok_or_else(|| Failure::Usage("--method mcst needs --model".into()))?;
    let beta = a.beta.ok_or_else(|| Failure::Usage("--method mcst needs --beta".into()))?;
    let model = ctx(model_path, io::read_model(model_path))?;
    let mut cfg = ReconConfig::new(beta, a.gamma.clone(), a.outer, a.inner);
    cfg.alpha = a.alpha;
    cfg.stride = a.stride;
    cfg.warm_start = a.warm_start;
    cfg.nonnegative = !a.allow_negative;
    cfg.validate(&model).map_err(flag_error)?;
    let x0 = match a.init.as_str() {
        "fbp" => fbp_image.clone(),
        "zero" => Image::zeros(a.size, a.size),
        "ep" => run_ep()?.0,
        path => ctx(path, io::read_image(path))?,
    };
    let (image, trace) = pwls_mcst(&projector, &scan, &model, &cfg, &x0)?;
    io::write_image(&a.out, &image)?;
    if let Some(path) = &a.trace {
        trace.write_csv(BufWriter::new(File::create(path)?))?;
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Outcome {
    let truth = ctx(&a.truth, io::read_image(&a.truth))?;
    let roi = if a.roi_circle {
        circular_roi(truth.height(), truth.width())
    } else {
        vec![true; truth.len()]
    };
    let mut text = String::from("image");
    for m in &a.metrics {
        text.push_str(match m {
            Metric::Rmse => ",rmse",
            Metric::Ssim => ",ssim",
        });
    }
    text.push('\n');
    for path in &a.recon {
        let img = ctx(path, io::read_image(path))?;
        text.push_str(&path.display().to_string());
        for m in &a.metrics {
            let v = match m {
                Metric::Rmse => rmse_roi(&img, &truth, &roi)?,
                Metric::Ssim => ssim(&img, &truth)?,
            };
            text.push_str(&format!(",{v:.6}"));
        }
        text.push('\n');
    }
    match &a.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn parse_window(text: &str) -> Result<(f64, f64), Failure> {
    let bad = || Failure::Usage(format!("--window expects LO,HI with LO < HI, got '{text}'"));
    let (lo, hi) = text.split_once(',').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn export_png(a: ExportPngArgs) -> Outcome {
    let (lo, hi) = parse_window(&a.window)?;
    let img = ctx(&a.input, io::read_image(&a.input))?;
    png_out::write_windowed(&a.out, &img, lo, hi)
}

fn run_experiment_cmd(a: RunExperimentArgs) -> Outcome {
    let text = std::fs::read_to_string(&a.config).map_err(|e| Failure::Runtime(format!("{}: {e}", a.config.display())))?;
    let mut cfg = ExperimentConfig::parse(&text).map_err(flag_error)?;
    if let Some(seed) = a.seed {
        cfg.noise.seed = seed;
        cfg.train.seed = seed;
    }
    let report = run_experiment(&cfg, &a.out)?;
    println!("method,rmse,ssim");
    for s in &report.scores {
        println!("{},{:.6},{:.6}", s.method, s.rmse, s.ssim);
    }
    Ok(())
}
