//! `pigan eval`: feature-based retrieval and one-shot classification,
//! mixture mode coverage and nearest-training-neighbor checks.
//!
//! | task | CSV | images |
//! |------|-----|--------|
//! | retrieval | `retrieval.csv`: `rank,accuracy` | `retrieval_query_NNNNN.pgm`: query then top 9 |
//! | oneshot | `oneshot.csv`: `method,accuracy` | |
//! | modes | `modes.csv`: `pi,kl_pq,kl_qp,modes_covered,hq_fraction` | |
//! | overfit | `overfit.csv`: `sample,nearest_index,nearest_label,distance` | `overfit.pgm`: generated over nearest |

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use pigan_core::datasets::{load_dataset, sample_gaussian_mixture, MixtureSpec};
use pigan_core::evaluation::{
    accuracy_retrieval_curve, empirical_kl_pair, encode_features, mode_coverage, nearest_training_neighbor, one_shot_nn,
    retrieve_all, train_linear_classifier, FeatureVector, LinearHyper, DEFAULT_MIN_FRACTION, DEFAULT_RADIUS_SIGMAS,
};
use pigan_core::image::mosaic;
use pigan_core::nn::{Checkpoint, Network};
use pigan_core::training::sample_prior;
use pigan_core::{LabeledDataset, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::DataConfig;
use crate::train::checkpoint_config;

/// Retrieved neighbors shown next to each query in the mosaics.
pub const MOSAIC_NEIGHBORS: usize = 9;
/// Histogram bounds extend this many component sigmas past the outermost means.
pub const MODE_BOUNDS_SIGMAS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalTask {
    Retrieval,
    Oneshot,
    Modes,
    Overfit,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub task: EvalTask,
    pub out: PathBuf,
    /// Deepest rank reported by the retrieval curve.
    pub k: usize,
    /// Retrieval queries rendered as mosaics.
    pub queries: usize,
    /// Generated samples for `modes` and `overfit`.
    pub samples: usize,
    pub grid: usize,
    pub mixture: Option<PathBuf>,
    pub seed: u64,
}

impl EvalOptions {
    pub fn new(task: EvalTask, out: PathBuf) -> Self {
        Self { checkpoint: None, dataset: None, task, out, k: 10, queries: 8, samples: 5000, grid: 32, mixture: None, seed: 0 }
    }
}

/// Accuracies of the two one-shot classifiers; `linear` is absent with a single class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneShotScores {
    pub nearest_neighbor: f64,
    pub linear: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalReport {
    Retrieval { curve: Vec<f64> },
    OneShot(OneShotScores),
    Modes { pi: Option<f64>, kl_pq: f64, kl_qp: f64, covered: usize, hq_fraction: f64 },
    Overfit { mean_distance: f64 },
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    p.as_ref().with_context(|| format!("this task needs --{what}"))
}

fn load_network(ckpt: &Checkpoint, name: &str) -> Result<Network> {
    Ok(ckpt.network(name).with_context(|| format!("checkpoint has no {name} network"))?.network.clone())
}

fn check_input(net: &Network, ds: &LabeledDataset) -> Result<()> {
    if ds.sample_shape() != net.spec().input_shape.as_slice() {
        bail!("dataset samples {:?} do not match discriminator input {:?}", ds.sample_shape(), net.spec().input_shape);
    }
    Ok(())
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Tile size when samples are single-channel images.
fn tile_dims(t: &Tensor) -> Option<(usize, usize)> {
    match t.sample_shape() {
        &[1, h, w] => Some((h, w)),
        _ => None,
    }
}

/// First example of each class as support, the rest as queries.
pub fn one_shot_split(features: &[FeatureVector], labels: &[u32]) -> (Vec<(u32, FeatureVector)>, Vec<FeatureVector>, Vec<u32>) {
    let mut support: Vec<(u32, FeatureVector)> = Vec::new();
    let mut queries = Vec::new();
    let mut truth = Vec::new();
    for (f, &l) in features.iter().zip(labels) {
        if support.iter().any(|(c, _)| *c == l) {
            queries.push(f.clone());
            truth.push(l);
        } else {
            support.push((l, f.clone()));
        }
    }
    (support, queries, truth)
}

/// 1-NN and linear one-shot accuracy on precomputed features.
pub fn one_shot_scores(features: &[FeatureVector], labels: &[u32]) -> Result<OneShotScores> {
    let (support, queries, truth) = one_shot_split(features, labels);
    if queries.is_empty() {
        bail!("every class has a single example; nothing left to query");
    }
    let nearest_neighbor = one_shot_nn(&support, &queries, Some(&truth))?.accuracy.unwrap_or(0.0);
    let linear = if support.len() < 2 {
        log::info!("single class: skipping the linear classifier");
        None
    } else {
        train_linear_classifier(&support, LinearHyper::default())?.classify(&queries, Some(&truth))?.accuracy
    };
    Ok(OneShotScores { nearest_neighbor, linear })
}

/// Top-1 .. top-`k` retrieval accuracy with every sample as a query.
pub fn retrieval_curve(features: &[FeatureVector], labels: &[u32], k: usize) -> Result<Vec<f64>> {
    let results = retrieve_all(features, k)?;
    Ok(accuracy_retrieval_curve(&results, labels, k)?)
}

fn retrieval(opts: &EvalOptions) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(required(&opts.checkpoint, "checkpoint")?)?;
    let ds = load_dataset(required(&opts.dataset, "dataset")?)?;
    let d = load_network(&ckpt, "discriminator")?;
    check_input(&d, &ds)?;
    if ds.len() < 2 {
        bail!("retrieval needs at least two samples");
    }
    let k = opts.k.clamp(1, ds.len() - 1);
    let features = encode_features(&d, ds.samples())?;
    let results = retrieve_all(&features, k.max(MOSAIC_NEIGHBORS.min(ds.len() - 1)))?;
    let curve = accuracy_retrieval_curve(&results, ds.labels(), k)?;
    let mut csv = String::from("rank,accuracy\n");
    for (r, a) in curve.iter().enumerate() {
        csv.push_str(&format!("{},{a:?}\n", r + 1));
    }
    fs::write(opts.out.join("retrieval.csv"), csv)?;

    if let Some((h, w)) = tile_dims(ds.samples()) {
        let n = opts.queries.min(ds.len());
        let mut picked = rand::seq::index::sample(&mut rng(opts.seed, 0), ds.len(), n).into_vec();
        picked.sort_unstable();
        for q in picked {
            let mut tiles = vec![ds.samples().sample(q)];
            tiles.extend(results[q].ranked.iter().take(MOSAIC_NEIGHBORS).map(|&(id, _)| ds.samples().sample(id)));
            let cols = tiles.len();
            mosaic(&tiles, h, w, 1, cols)?.save_pgm(&opts.out.join(format!("retrieval_query_{q:05}.pgm")))?;
        }
    }
    Ok(EvalReport::Retrieval { curve })
}

fn oneshot(opts: &EvalOptions) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(required(&opts.checkpoint, "checkpoint")?)?;
    let ds = load_dataset(required(&opts.dataset, "dataset")?)?;
    let d = load_network(&ckpt, "discriminator")?;
    check_input(&d, &ds)?;
    let features = encode_features(&d, ds.samples())?;
    let scores = one_shot_scores(&features, ds.labels())?;
    let mut csv = format!("method,accuracy\nnearest_neighbor,{:?}\n", scores.nearest_neighbor);
    if let Some(l) = scores.linear {
        csv.push_str(&format!("linear,{l:?}\n"));
    }
    fs::write(opts.out.join("oneshot.csv"), csv)?;
    Ok(EvalReport::OneShot(scores))
}

fn mixture_for(opts: &EvalOptions, ckpt: Option<&Checkpoint>) -> Result<MixtureSpec> {
    if let Some(p) = &opts.mixture {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        return Ok(serde_json::from_str(&text).with_context(|| format!("mixture spec {}", p.display()))?);
    }
    if let Some(cfg) = ckpt.map(checkpoint_config).transpose()? {
        match cfg.data {
            DataConfig::Ring(r) => return Ok(MixtureSpec::ring(r.count, r.radius, r.sigma)?),
            DataConfig::Mixture(m) => return Ok(m),
            _ => bail!("the checkpointed run was not trained on a mixture; pass --mixture"),
        }
    }
    Ok(MixtureSpec::ring8())
}

fn modes(opts: &EvalOptions) -> Result<EvalReport> {
    let ckpt = opts.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
    let spec = mixture_for(opts, ckpt.as_ref())?;
    let dataset = opts.dataset.as_deref().map(load_dataset).transpose()?;
    let (real, model, pi) = match &ckpt {
        Some(c) => {
            let g = load_network(c, "generator")?;
            let z = sample_prior(g.spec().input_shape[0], opts.samples, &mut rng(opts.seed, 1));
            let fake = g.forward(&z, pigan_core::Mode::Infer)?.0;
            let real = match &dataset {
                Some(ds) => ds.samples().clone(),
                None => sample_gaussian_mixture(&spec, opts.samples, &mut rng(opts.seed, 2)),
            };
            (real, fake, Some(checkpoint_config(c)?.gan.pi.value()))
        }
        None => {
            let ds = dataset.context("modes needs --checkpoint, --dataset or both")?;
            let real = sample_gaussian_mixture(&spec, opts.samples, &mut rng(opts.seed, 2));
            (real, ds.samples().clone(), None)
        }
    };
    if model.sample_shape() != [2] {
        bail!("mode coverage needs 2-D samples, got {:?}", model.sample_shape());
    }
    let bounds = spec.bounding_box(MODE_BOUNDS_SIGMAS);
    let (kl_pq, kl_qp) = empirical_kl_pair(&real, &model, &bounds, opts.grid)?;
    let cov = mode_coverage(&model, &spec, DEFAULT_RADIUS_SIGMAS, DEFAULT_MIN_FRACTION)?;
    let pi_field = pi.map(|p| format!("{p:?}")).unwrap_or_default();
    let csv = format!(
        "pi,kl_pq,kl_qp,modes_covered,hq_fraction\n{pi_field},{kl_pq:?},{kl_qp:?},{},{:?}\n",
        cov.covered, cov.high_quality_fraction
    );
    fs::write(opts.out.join("modes.csv"), csv)?;
    Ok(EvalReport::Modes { pi, kl_pq, kl_qp, covered: cov.covered, hq_fraction: cov.high_quality_fraction })
}

fn overfit(opts: &EvalOptions) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(required(&opts.checkpoint, "checkpoint")?)?;
    let ds = load_dataset(required(&opts.dataset, "dataset")?)?;
    let g = load_network(&ckpt, "generator")?;
    let count = opts.samples.clamp(1, 36);
    let z = sample_prior(g.spec().input_shape[0], count, &mut rng(opts.seed, 1));
    let fake = g.forward(&z, pigan_core::Mode::Infer)?.0;
    if fake.sample_shape() != ds.sample_shape() {
        bail!("generated samples {:?} do not match dataset samples {:?}", fake.sample_shape(), ds.sample_shape());
    }
    let neighbors = nearest_training_neighbor(&fake, ds.samples())?;
    let mut csv = String::from("sample,nearest_index,nearest_label,distance\n");
    for (i, n) in neighbors.iter().enumerate() {
        csv.push_str(&format!("{i},{},{},{:?}\n", n.index, ds.labels()[n.index], n.distance));
    }
    fs::write(opts.out.join("overfit.csv"), csv)?;
    if let Some((h, w)) = tile_dims(&fake) {
        let mut tiles: Vec<&[f64]> = (0..count).map(|i| fake.sample(i)).collect();
        tiles.extend(neighbors.iter().map(|n| ds.samples().sample(n.index)));
        mosaic(&tiles, h, w, 2, count)?.save_pgm(&opts.out.join("overfit.pgm"))?;
    }
    let mean_distance = neighbors.iter().map(|n| n.distance).sum::<f64>() / count as f64;
    Ok(EvalReport::Overfit { mean_distance })
}

pub fn cmd_eval(opts: &EvalOptions) -> Result<EvalReport> {
    fs::create_dir_all(&opts.out).with_context(|| format!("creating {}", opts.out.display()))?;
    match opts.task {
        EvalTask::Retrieval => retrieval(opts),
        EvalTask::Oneshot => oneshot(opts),
        EvalTask::Modes => modes(opts),
        EvalTask::Overfit => overfit(opts),
    }
}

