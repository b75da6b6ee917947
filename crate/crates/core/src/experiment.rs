//! End-to-end desk experiment: simulate, train, reconstruct, evaluate.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::config::ExperimentConfig;
use crate::ct_sim::{
    counts_to_sinogram, fbp, random_head_ellipses, render_ellipses, simulate_counts,
    ParallelBeamProjector, Sinogram, WeightedScan,
};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io;
use crate::mcst::ModelBundle;
use crate::patching::extract_patches_many;
use crate::recon::{circular_roi, pwls_ep, pwls_mcst, rmse_roi, ssim, InitImage, ReconTrace};
use crate::training::{train, TrainTrace};

/// Noisy measurements as stored on disk (values rounded to `f32`).
#[derive(Clone, Debug)]
pub struct Measurement {
    pub truth: Image,
    pub sinogram: Sinogram,
    pub weights: Vec<f64>,
}

/// Renders the phantom, projects it and draws one noisy realization.
pub fn simulate(cfg: &ExperimentConfig, projector: &ParallelBeamProjector) -> Result<Measurement> {
    let size = cfg.scan.size;
    let truth = cfg.phantom.phantom()?.render(size, size)?;
    let clean = projector.project(&truth)?;
    let counts = simulate_counts(&clean, &cfg.noise)?;
    let (mut sinogram, mut weights) = counts_to_sinogram(&counts, &cfg.noise)?;
    io::quantize(sinogram.as_mut_slice());
    io::quantize(&mut weights);
    Ok(Measurement {
        truth,
        sinogram,
        weights,
    })
}

/// Synthetic head slices used as training images.
pub fn training_images(cfg: &ExperimentConfig) -> Vec<Image> {
    let size = cfg.train.size.unwrap_or(cfg.scan.size);
    (0..cfg.train.slices as u64)
        .map(|i| render_ellipses(&random_head_ellipses(cfg.train.slice_seed + i), size, size))
        .collect()
}

pub fn train_model(cfg: &ExperimentConfig) -> Result<(ModelBundle, TrainTrace)> {
    let patches = extract_patches_many(&training_images(cfg), cfg.train.patch_side, cfg.train.stride)?;
    train(&patches, &cfg.train.train_config())
}

/// Starting image for the MCST reconstruction. `ep_image` is only consulted
/// for [`InitImage::Ep`].
pub fn initial_image(init: InitImage, fbp_image: &Image, ep_image: Option<&Image>) -> Result<Image> {
    match init {
        InitImage::Fbp => Ok(fbp_image.clone()),
        InitImage::Zero => Ok(Image::zeros(fbp_image.height(), fbp_image.width())),
        InitImage::Ep => ep_image
            .cloned()
            .ok_or_else(|| Error::Config("init = \"ep\" needs a PWLS-EP image".into())),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodScore {
    pub method: &'static str,
    pub rmse: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub scores: Vec<MethodScore>,
    pub train_trace: TrainTrace,
    pub recon_trace: ReconTrace,
}

impl ExperimentReport {
    pub fn score(&self, method: &str) -> Option<&MethodScore> {
        self.scores.iter().find(|s| s.method == method)
    }
}

pub fn write_metrics_csv(path: &Path, scores: &[MethodScore]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "method,rmse,ssim")?;
    for s in scores {
        writeln!(out, "{},{:.6},{:.6}", s.method, s.rmse, s.ssim)?;
    }
    out.flush()?;
    Ok(())
}

fn score(method: &'static str, estimate: &Image, truth: &Image) -> Result<MethodScore> {
    let roi = circular_roi(truth.height(), truth.width());
    Ok(MethodScore {
        method,
        rmse: rmse_roi(estimate, truth, &roi)?,
        ssim: ssim(estimate, truth)?,
    })
}

/// Runs the whole chain and writes every artifact into `out_dir`:
/// `config.toml`, `truth.img`, `scan.sin`, `scan.wgt`, `fbp.img`,
/// `model.mcst`, `train_trace.csv`, `ep.img`, `recon.img`, `recon_trace.csv`
/// and `metrics.csv`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml())?;

    let geom = cfg.scan.geometry()?;
    let projector = ParallelBeamProjector::new(geom.clone());
    let m = simulate(cfg, &projector)?;
    io::write_image(out_dir.join("truth.img"), &m.truth)?;
    io::write_sinogram(out_dir.join("scan.sin"), &m.sinogram)?;
    io::write_weights(out_dir.join("scan.wgt"), geom.n_views, geom.n_detectors, &m.weights)?;
    log::info!("simulated {}x{} sinogram", geom.n_views, geom.n_detectors);

    let fbp_image = fbp(&m.sinogram, &geom)?;
    io::write_image(out_dir.join("fbp.img"), &fbp_image)?;

    let (model, train_trace) = train_model(cfg)?;
    io::write_model(out_dir.join("model.mcst"), &model)?;
    train_trace.write_csv(BufWriter::new(File::create(out_dir.join("train_trace.csv"))?))?;
    log::info!("trained model, final objective {:.6e}", train_trace.final_objective());

    let scan = WeightedScan::new(&projector, m.sinogram.as_slice().to_vec(), m.weights.clone())?;
    let (ep_image, _) = pwls_ep(&projector, &scan, &cfg.ep, &fbp_image)?;
    io::write_image(out_dir.join("ep.img"), &ep_image)?;

    let x0 = initial_image(cfg.recon.init, &fbp_image, Some(&ep_image))?;
    let (recon, recon_trace) = pwls_mcst(&projector, &scan, &model, &cfg.recon, &x0)?;
    io::write_image(out_dir.join("recon.img"), &recon)?;
    recon_trace.write_csv(BufWriter::new(File::create(out_dir.join("recon_trace.csv"))?))?;

    let scores = vec![
        score("fbp", &fbp_image, &m.truth)?,
        score("pwls-ep", &ep_image, &m.truth)?,
        score("pwls-mcst", &recon, &m.truth)?,
    ];
    write_metrics_csv(&out_dir.join("metrics.csv"), &scores)?;
    Ok(ExperimentReport {
        scores,
        train_trace,
        recon_trace,
    })
}
