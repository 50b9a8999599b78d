//! `pigan train`: run directory layout
//!
//! ```text
//! <out>/config.json                   effective configuration (overrides applied)
//! <out>/losses.csv                    iteration,j_d,j_g
//! <out>/checkpoints/iter_NNNNNN.ckpt  every gan.checkpoint_every iterations
//! <out>/samples/iter_NNNNNN.pgm       6x6 grid every sample_every iterations (images)
//! <out>/samples/iter_NNNNNN.csv       x,y points instead, for 2-D data
//! <out>/final.ckpt
//! ```
//!
//! Sample grids always use the same latents, so successive grids are comparable.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pigan_core::image::mosaic;
use pigan_core::nn::Checkpoint;
use pigan_core::training::{sample_prior, TrainingSink};
use pigan_core::{GanState, LossRecord, PiWeight, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{RunConfig, SCHEMA_VERSION};

/// Side of the square sample grid.
pub const GRID_SIDE: usize = 6;
/// Points written per sample file for 2-D data.
pub const POINT_SAMPLES: usize = 1000;
const SAMPLE_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, Default)]
pub struct TrainOverrides {
    pub pi: Option<f64>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub iterations: Option<u64>,
    pub out: Option<PathBuf>,
    pub resume: Option<PathBuf>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub dir: PathBuf,
    pub state: GanState,
    pub records: Vec<LossRecord>,
}

impl RunConfig {
    pub fn apply(&mut self, o: &TrainOverrides) -> Result<()> {
        if let Some(pi) = o.pi {
            self.gan.pi = PiWeight::new(pi)?;
        }
        if o.k.is_some() {
            self.gan.k = o.k;
        }
        if let Some(seed) = o.seed {
            self.gan.seed = seed;
        }
        if let Some(n) = o.iterations {
            self.gan.iterations = n;
        }
        if let Some(out) = &o.out {
            self.output = Some(out.clone());
        }
        self.validate()
    }
}

/// Metadata stored in every checkpoint a run writes.
pub fn checkpoint_metadata(cfg: &RunConfig) -> serde_json::Value {
    json!({ "schema_version": SCHEMA_VERSION, "config": cfg })
}

/// The run configuration embedded in a checkpoint written by `train`.
pub fn checkpoint_config(ckpt: &Checkpoint) -> Result<RunConfig> {
    let version = ckpt.metadata.get("schema_version").and_then(serde_json::Value::as_u64);
    if version != Some(SCHEMA_VERSION as u64) {
        bail!("checkpoint schema version {version:?} is not supported (expected {SCHEMA_VERSION})");
    }
    let cfg = ckpt.metadata.get("config").context("checkpoint metadata has no run configuration")?;
    Ok(serde_json::from_value(cfg.clone()).context("checkpoint run configuration")?)
}

struct RunSink {
    dir: PathBuf,
    csv: BufWriter<File>,
    metadata: serde_json::Value,
    sample_every: u64,
    latents: Tensor,
}

impl RunSink {
    fn write_samples(&self, state: &GanState, stem: &str) -> pigan_core::Result<()> {
        write_samples(&self.dir.join("samples"), stem, state, &self.latents)
    }
}

impl TrainingSink for RunSink {
    fn record(&mut self, record: &LossRecord, state: &GanState) -> pigan_core::Result<()> {
        writeln!(self.csv, "{}", record.csv_row())?;
        if record.iteration % 100 == 0 {
            log::info!("iteration {}: j_d {:.4} j_g {:.4}", record.iteration, record.j_d, record.j_g);
        }
        if self.sample_every > 0 && record.iteration % self.sample_every == 0 {
            self.write_samples(state, &format!("iter_{:06}", record.iteration))?;
        }
        Ok(())
    }

    fn checkpoint(&mut self, state: &GanState) -> pigan_core::Result<()> {
        let path = self.dir.join("checkpoints").join(format!("iter_{:06}.ckpt", state.iteration));
        state.to_checkpoint(self.metadata.clone()).save(&path)
    }
}

/// Fixed latents for sample grids: 36 for images, [`POINT_SAMPLES`] for 2-D data.
pub fn sample_latents(state: &GanState, seed: u64) -> Result<Tensor> {
    let n = state.generator.spec().input_shape[0];
    let count = if state.generator.spec().output_shape()?.len() == 3 { GRID_SIDE * GRID_SIDE } else { POINT_SAMPLES };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SAMPLE_STREAM);
    Ok(sample_prior(n, count, &mut rng))
}

fn write_samples(dir: &Path, stem: &str, state: &GanState, latents: &Tensor) -> pigan_core::Result<()> {
    let x = state.generate(latents)?;
    match x.sample_shape() {
        &[1, h, w] => {
            let tiles: Vec<&[f64]> = (0..x.batch()).map(|i| x.sample(i)).collect();
            mosaic(&tiles, h, w, GRID_SIDE, GRID_SIDE)?.save_pgm(&dir.join(format!("{stem}.pgm")))
        }
        _ => {
            let mut out = point_header(x.sample_len());
            for i in 0..x.batch() {
                let row: Vec<String> = x.sample(i).iter().map(|v| format!("{v:?}")).collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
            Ok(fs::write(dir.join(format!("{stem}.csv")), out)?)
        }
    }
}

fn point_header(dim: usize) -> String {
    let names: Vec<String> = match dim {
        2 => vec!["x".into(), "y".into()],
        _ => (0..dim).map(|i| format!("x{i}")).collect(),
    };
    names.join(",") + "\n"
}

/// Existing loss rows up to `iteration`, so a resumed run extends the same file.
fn carried_rows(path: &Path, iteration: u64) -> Result<String> {
    let mut kept = String::from(LossRecord::CSV_HEADER);
    kept.push('\n');
    if iteration == 0 || !path.exists() {
        return Ok(kept);
    }
    let text = fs::read_to_string(path)?;
    for line in text.lines().skip(1) {
        let it: u64 = line.split(',').next().unwrap_or_default().parse().with_context(|| format!("bad row in {}", path.display()))?;
        if it <= iteration {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    Ok(kept)
}

fn resume_state(path: &Path, cfg: &RunConfig) -> Result<GanState> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let saved = checkpoint_config(&ckpt)?;
    let state = GanState::from_checkpoint(&ckpt)?;
    let (g, d) = cfg.model.build()?;
    if state.generator.spec() != &g || state.discriminator.spec() != &d {
        bail!("checkpoint {} holds different network layouts than the configured model", path.display());
    }
    if saved.gan.pi != cfg.gan.pi || saved.gan.seed != cfg.gan.seed || saved.gan.k() != cfg.gan.k() {
        log::warn!("resuming with pi/seed/k that differ from the checkpointed run");
    }
    Ok(state)
}

/// Runs (or resumes) a training job described by `config_path` plus overrides.
pub fn cmd_train(config_path: &Path, overrides: &TrainOverrides) -> Result<TrainOutcome> {
    let mut cfg = RunConfig::load(config_path)?;
    cfg.apply(overrides)?;
    let dir = cfg.output.clone().context("no output directory: pass --out or set \"output\" in the config")?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let data = cfg.data.load(base)?;
    let (g, d) = cfg.model.build()?;
    let want = g.output_shape()?;
    if data.source().sample_shape() != want {
        bail!("data samples {:?} do not match generator output {want:?}", data.source().sample_shape());
    }
    let mut state = match &overrides.resume {
        Some(p) => resume_state(p, &cfg)?,
        None => GanState::new(g, d, &cfg.gan)?,
    };

    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    let metadata = checkpoint_metadata(&cfg);
    if cfg.gan.iterations == 0 && overrides.resume.is_none() {
        state.to_checkpoint(metadata).save(&dir.join("final.ckpt"))?;
        return Ok(TrainOutcome { dir, state, records: Vec::new() });
    }

    fs::create_dir_all(dir.join("checkpoints"))?;
    fs::create_dir_all(dir.join("samples"))?;
    let losses = dir.join("losses.csv");
    let carried = carried_rows(&losses, state.iteration)?;
    let mut csv = BufWriter::new(File::create(&losses)?);
    csv.write_all(carried.as_bytes())?;
    let latents = sample_latents(&state, cfg.gan.seed)?;
    let mut sink = RunSink { dir: dir.clone(), csv, metadata: metadata.clone(), sample_every: cfg.sample_every, latents };
    let run = state.run(data.source(), &cfg.gan, &mut sink);
    sink.csv.flush()?;
    let records = run?;
    sink.write_samples(&state, "final")?;
    state.to_checkpoint(metadata).save(&dir.join("final.ckpt"))?;
    log::info!("finished {} iterations in {}", state.iteration, dir.display());
    Ok(TrainOutcome { dir, state, records })
}
