//! `pigan interp`: a strip of generator outputs along a latent path.
//!
//! Every latent is generated on its own (batch of one, inference mode), so the
//! endpoint tiles are the exact computation a direct generation performs.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use pigan_core::evaluation::{lerp, slerp};
use pigan_core::image::mosaic;
use pigan_core::nn::{Checkpoint, Network};
use pigan_core::training::sample_prior;
use pigan_core::{Mode, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Allowed relative drift of latent norms along a slerp between equal-norm endpoints.
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InterpMode {
    Lerp,
    Slerp,
}

#[derive(Debug, Clone)]
pub struct InterpOptions {
    pub checkpoint: PathBuf,
    pub mode: InterpMode,
    pub steps: usize,
    pub seed: u64,
    /// Rescale the second endpoint to the first endpoint's norm.
    pub equal_norm: bool,
    /// `.pgm` strip for image generators, CSV of points otherwise.
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpReport {
    pub latents: Vec<Vec<f64>>,
    pub outputs: Vec<Tensor>,
    pub endpoints_match: bool,
    /// Largest `| |z_i| - |z_1| | / |z_1|`; only meaningful for equal-norm endpoints.
    pub max_norm_drift: f64,
}

fn norm(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn generate_one(g: &Network, z: &[f64]) -> Result<Tensor> {
    let input = Tensor::new(vec![1, z.len()], z.to_vec())?;
    Ok(g.forward(&input, Mode::Infer)?.0)
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

/// Endpoint latents drawn from the prior with `seed`.
pub fn endpoints(latent_dim: usize, seed: u64, equal_norm: bool) -> (Vec<f64>, Vec<f64>) {
    let z = sample_prior(latent_dim, 2, &mut ChaCha8Rng::seed_from_u64(seed));
    let z1 = z.sample(0).to_vec();
    let mut z2 = z.sample(1).to_vec();
    if equal_norm {
        let scale = norm(&z1) / norm(&z2);
        z2.iter_mut().for_each(|v| *v *= scale);
    }
    (z1, z2)
}

pub fn interpolate(g: &Network, opts: &InterpOptions) -> Result<InterpReport> {
    if opts.steps < 2 {
        bail!("interpolation needs at least 2 steps, got {}", opts.steps);
    }
    let (z1, z2) = endpoints(g.spec().input_shape[0], opts.seed, opts.equal_norm);
    let latents = match opts.mode {
        InterpMode::Lerp => lerp(&z1, &z2, opts.steps)?,
        InterpMode::Slerp => slerp(&z1, &z2, opts.steps)?,
    };
    let outputs = latents.iter().map(|z| generate_one(g, z)).collect::<Result<Vec<_>>>()?;
    let direct = [generate_one(g, &z1)?, generate_one(g, &z2)?];
    let endpoints_match = bits(&outputs[0]) == bits(&direct[0]) && bits(&outputs[opts.steps - 1]) == bits(&direct[1]);
    let n1 = norm(&z1);
    let max_norm_drift = latents.iter().map(|z| (norm(z) - n1).abs() / n1.max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
    Ok(InterpReport { latents, outputs, endpoints_match, max_norm_drift })
}

fn write_strip(report: &InterpReport, out: &std::path::Path) -> Result<()> {
    let first = &report.outputs[0];
    match first.sample_shape() {
        &[1, h, w] => {
            let tiles: Vec<&[f64]> = report.outputs.iter().map(|t| t.data()).collect();
            mosaic(&tiles, h, w, 1, tiles.len())?.save_pgm(out)?;
        }
        _ => {
            let dim = first.sample_len();
            let mut csv = String::from("step");
            (0..dim).for_each(|i| csv.push_str(&format!(",x{i}")));
            csv.push('\n');
            for (i, t) in report.outputs.iter().enumerate() {
                csv.push_str(&i.to_string());
                t.data().iter().for_each(|v| csv.push_str(&format!(",{v:?}")));
                csv.push('\n');
            }
            fs::write(out, csv)?;
        }
    }
    Ok(())
}

/// Writes the strip, then fails if an endpoint differs from direct generation or
/// an equal-norm slerp leaves the sphere.
pub fn cmd_interp(opts: &InterpOptions) -> Result<InterpReport> {
    let ckpt = Checkpoint::load(&opts.checkpoint).with_context(|| format!("loading {}", opts.checkpoint.display()))?;
    let g = &ckpt.network("generator").context("checkpoint has no generator network")?.network;
    let report = interpolate(g, opts)?;
    if let Some(dir) = opts.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_strip(&report, &opts.out)?;
    if !report.endpoints_match {
        bail!("endpoint tiles differ from direct generation");
    }
    if opts.mode == InterpMode::Slerp && opts.equal_norm && report.max_norm_drift > NORM_TOLERANCE {
        bail!("slerp latent norms drift by {:e}", report.max_norm_drift);
    }
    Ok(report)
}
