//! Measurement protocols: penultimate-layer features, cosine retrieval, one-shot
//! classification, latent interpolation, mixture mode coverage and empirical KL.

use serde::{Deserialize, Serialize};

use crate::datasets::{Bounds, MixtureSpec};
use crate::divergence::{kl_divergence, DiscreteDistribution};
use crate::error::{Error, Result};
use crate::nn::{Mode, Network, Tensor};

/// Additive histogram smoothing used by [`empirical_kl_pair`].
pub const HISTOGRAM_SMOOTHING: f64 = 0.5;

/// Penultimate-layer activations of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub id: usize,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(id: usize, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { layer: 0, detail: format!("feature vector {id} is not finite") });
        }
        Ok(Self { id, values })
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Activations immediately before the discriminator's last dense layer, in
/// inference mode. Sample `i` gets id `i`.
pub fn encode_features(d: &Network, samples: &Tensor) -> Result<Vec<FeatureVector>> {
    let upto = d
        .spec()
        .penultimate_index()
        .ok_or_else(|| Error::Argument("discriminator has no dense layer".into()))?;
    let (y, _) = d.forward_prefix(samples, Mode::Infer, upto)?;
    (0..y.batch()).map(|i| FeatureVector::new(i, y.sample(i).to_vec())).collect()
}

/// `dot(u, v) / (|u| |v|)`, clamped into `[-1, 1]`.
pub fn cosine_similarity(u: &FeatureVector, v: &FeatureVector) -> Result<f64> {
    if u.values.len() != v.values.len() {
        return Err(Error::Dimension(format!("feature lengths {} and {}", u.values.len(), v.values.len())));
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Domain(format!("zero feature vector ({} or {})", u.id, v.id)));
    }
    let dot: f64 = u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: usize,
    /// `(candidate id, similarity)`, similarity non-increasing.
    pub ranked: Vec<(usize, f64)>,
}

/// Top `k` corpus entries by cosine similarity, ties by ascending id. Corpus
/// entries sharing the query's id are skipped.
pub fn retrieve_topk(query: &FeatureVector, corpus: &[FeatureVector], k: usize) -> Result<RetrievalResult> {
    let mut scored = Vec::with_capacity(corpus.len());
    for c in corpus.iter().filter(|c| c.id != query.id) {
        scored.push((c.id, cosine_similarity(query, c)?));
    }
    if k > scored.len() {
        return Err(Error::Argument(format!("asked for top {k} of {} candidates", scored.len())));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(RetrievalResult { query: query.id, ranked: scored })
}

/// Leave-one-out retrieval of every feature against all others.
pub fn retrieve_all(features: &[FeatureVector], k: usize) -> Result<Vec<RetrievalResult>> {
    features.iter().map(|q| retrieve_topk(q, features, k)).collect()
}

/// `curve[r - 1]` is the mean over queries of the fraction of the top `r`
/// results sharing the query's label. `labels` is indexed by id.
pub fn accuracy_retrieval_curve(results: &[RetrievalResult], labels: &[u32], k: usize) -> Result<Vec<f64>> {
    if results.is_empty() {
        return Err(Error::Argument("no retrieval results".into()));
    }
    let label = |id: usize| labels.get(id).copied().ok_or_else(|| Error::Data(format!("no label for id {id}")));
    let mut curve = vec![0.0; k];
    for r in results {
        if r.ranked.len() < k {
            return Err(Error::Argument(format!("query {} has {} results, need {k}", r.query, r.ranked.len())));
        }
        let want = label(r.query)?;
        let mut hits = 0usize;
        for (rank, &(id, _)) in r.ranked[..k].iter().enumerate() {
            hits += (label(id)? == want) as usize;
            curve[rank] += hits as f64 / (rank + 1) as f64;
        }
    }
    for v in &mut curve {
        *v /= results.len() as f64;
    }
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub predicted: Vec<u32>,
    /// Fraction of predictions equal to the supplied truth, when given.
    pub accuracy: Option<f64>,
}

fn accuracy(predicted: &[u32], truth: Option<&[u32]>) -> Result<Option<f64>> {
    match truth {
        None => Ok(None),
        Some(t) if t.len() != predicted.len() => {
            Err(Error::Dimension(format!("{} predictions vs {} labels", predicted.len(), t.len())))
        }
        Some(_) if predicted.is_empty() => Ok(Some(0.0)),
        Some(t) => Ok(Some(predicted.iter().zip(t).filter(|(a, b)| a == b).count() as f64 / t.len() as f64)),
    }
}

fn check_support(support: &[(u32, FeatureVector)]) -> Result<()> {
    if support.is_empty() {
        return Err(Error::Argument("empty support set".into()));
    }
    let mut seen: Vec<u32> = support.iter().map(|s| s.0).collect();
    seen.sort_unstable();
    if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Argument(format!("class {} appears twice in the support set", w[0])));
    }
    Ok(())
}

/// Labels each query with the class of the nearest support vector under cosine
/// distance, ties by ascending class.
pub fn one_shot_nn(support: &[(u32, FeatureVector)], queries: &[FeatureVector], truth: Option<&[u32]>) -> Result<Classification> {
    check_support(support)?;
    let mut ordered: Vec<&(u32, FeatureVector)> = support.iter().collect();
    ordered.sort_by_key(|s| s.0);
    let mut predicted = Vec::with_capacity(queries.len());
    for q in queries {
        let mut best = (f64::INFINITY, 0u32);
        for (class, s) in &ordered {
            let d = 1.0 - cosine_similarity(q, s)?;
            if d < best.0 {
                best = (d, *class);
            }
        }
        predicted.push(best.1);
    }
    let accuracy = accuracy(&predicted, truth)?;
    Ok(Classification { predicted, accuracy })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearHyper {
    pub lambda: f64,
    pub steps: usize,
    /// Step `t` (from 1) uses `step_scale / sqrt(t)`.
    pub step_scale: f64,
}

impl Default for LinearHyper {
    fn default() -> Self {
        Self { lambda: 1e-3, steps: 500, step_scale: 0.1 }
    }
}

/// One-vs-rest linear scores `w_c . x + b_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub classes: Vec<u32>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

/// One-vs-rest hinge-loss classifier on the support set, fit by full-batch
/// subgradient descent with L2 penalty `lambda / 2 |w|^2` (bias unpenalized).
pub fn train_linear_classifier(support: &[(u32, FeatureVector)], hyper: LinearHyper) -> Result<LinearModel> {
    check_support(support)?;
    if support.len() < 2 {
        return Err(Error::Argument("linear classifier needs at least 2 classes".into()));
    }
    let dim = support[0].1.values.len();
    if support.iter().any(|s| s.1.values.len() != dim) {
        return Err(Error::Dimension("support vectors differ in length".into()));
    }
    if support.iter().flat_map(|s| &s.1.values).any(|v| !v.is_finite()) {
        return Err(Error::Numeric { layer: 0, detail: "non-finite support feature".into() });
    }
    let mut ordered: Vec<&(u32, FeatureVector)> = support.iter().collect();
    ordered.sort_by_key(|s| s.0);
    let n = ordered.len() as f64;
    let mut model = LinearModel {
        classes: ordered.iter().map(|s| s.0).collect(),
        weights: vec![vec![0.0; dim]; ordered.len()],
        biases: vec![0.0; ordered.len()],
    };
    for (c, (w, b)) in model.weights.iter_mut().zip(model.biases.iter_mut()).enumerate() {
        for t in 1..=hyper.steps {
            let eta = hyper.step_scale / (t as f64).sqrt();
            let mut gw: Vec<f64> = w.iter().map(|wi| hyper.lambda * wi).collect();
            let mut gb = 0.0;
            for (i, (_, x)) in ordered.iter().enumerate() {
                let y = if i == c { 1.0 } else { -1.0 };
                let margin = y * (dot(w, &x.values) + *b);
                if margin < 1.0 {
                    for (g, xi) in gw.iter_mut().zip(&x.values) {
                        *g -= y * xi / n;
                    }
                    gb -= y / n;
                }
            }
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= eta * g;
            }
            *b -= eta * gb;
        }
    }
    if model.weights.iter().flatten().chain(&model.biases).any(|v| !v.is_finite()) {
        return Err(Error::Numeric { layer: 0, detail: "linear classifier diverged".into() });
    }
    Ok(model)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LinearModel {
    /// Argmax of the one-vs-rest scores, ties by ascending class.
    pub fn classify(&self, queries: &[FeatureVector], truth: Option<&[u32]>) -> Result<Classification> {
        let mut predicted = Vec::with_capacity(queries.len());
        for q in queries {
            if q.values.len() != self.weights[0].len() {
                return Err(Error::Dimension(format!("query of length {}, model expects {}", q.values.len(), self.weights[0].len())));
            }
            let mut best = (f64::NEG_INFINITY, self.classes[0]);
            for ((w, b), &class) in self.weights.iter().zip(&self.biases).zip(&self.classes) {
                let s = dot(w, &q.values) + b;
                if s > best.0 {
                    best = (s, class);
                }
            }
            predicted.push(best.1);
        }
        let accuracy = accuracy(&predicted, truth)?;
        Ok(Classification { predicted, accuracy })
    }
}

fn check_pair(z1: &[f64], z2: &[f64], steps: usize) -> Result<()> {
    if z1.len() != z2.len() {
        return Err(Error::Dimension(format!("latent lengths {} and {}", z1.len(), z2.len())));
    }
    if steps < 2 {
        return Err(Error::Argument(format!("interpolation needs at least 2 steps, got {steps}")));
    }
    Ok(())
}

/// `z1 + t (z2 - z1)` for `t = i / (steps - 1)`; endpoints are copied exactly.
pub fn lerp(z1: &[f64], z2: &[f64], steps: usize) -> Result<Vec<Vec<f64>>> {
    check_pair(z1, z2, steps)?;
    Ok((0..steps)
        .map(|i| match i {
            0 => z1.to_vec(),
            i if i == steps - 1 => z2.to_vec(),
            i => {
                let t = i as f64 / (steps - 1) as f64;
                z1.iter().zip(z2).map(|(a, b)| a + t * (b - a)).collect()
            }
        })
        .collect())
}

/// Spherical interpolation `sin((1-t) W)/sin W z1 + sin(t W)/sin W z2`, where `W`
/// is the angle between the vectors; linear when `W < 1e-6`. Endpoints exact.
pub fn slerp(z1: &[f64], z2: &[f64], steps: usize) -> Result<Vec<Vec<f64>>> {
    check_pair(z1, z2, steps)?;
    let n1 = z1.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n2 = z2.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::Domain("slerp endpoint is the zero vector".into()));
    }
    let omega = (dot(z1, z2) / (n1 * n2)).clamp(-1.0, 1.0).acos();
    if omega < 1e-6 {
        return lerp(z1, z2, steps);
    }
    let so = omega.sin();
    Ok((0..steps)
        .map(|i| match i {
            0 => z1.to_vec(),
            i if i == steps - 1 => z2.to_vec(),
            i => {
                let t = i as f64 / (steps - 1) as f64;
                let (a, b) = (((1.0 - t) * omega).sin() / so, (t * omega).sin() / so);
                z1.iter().zip(z2).map(|(x, y)| a * x + b * y).collect()
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeCoverage {
    pub covered: usize,
    /// Fraction of samples within the radius of any component mean.
    pub high_quality_fraction: f64,
}

pub const DEFAULT_RADIUS_SIGMAS: f64 = 3.0;
pub const DEFAULT_MIN_FRACTION: f64 = 0.01;

/// A component is covered when at least `min_fraction` of the samples lie within
/// `radius_sigmas * sigma` of its mean.
pub fn mode_coverage(samples: &Tensor, spec: &MixtureSpec, radius_sigmas: f64, min_fraction: f64) -> Result<ModeCoverage> {
    if samples.shape().len() != 2 || samples.shape()[1] != 2 {
        return Err(Error::Dimension(format!("mode coverage needs (count, 2) samples, got {:?}", samples.shape())));
    }
    let n = samples.batch();
    if n == 0 {
        return Ok(ModeCoverage { covered: 0, high_quality_fraction: 0.0 });
    }
    let comps = spec.components();
    let mut hits = vec![0usize; comps.len()];
    let mut good = 0usize;
    for s in samples.data().chunks_exact(2) {
        let mut any = false;
        for (h, c) in hits.iter_mut().zip(comps) {
            let r = radius_sigmas * c.sigma;
            if (s[0] - c.mean[0]).powi(2) + (s[1] - c.mean[1]).powi(2) <= r * r {
                *h += 1;
                any = true;
            }
        }
        good += any as usize;
    }
    let covered = hits.iter().filter(|&&h| h as f64 >= min_fraction * n as f64).count();
    Ok(ModeCoverage { covered, high_quality_fraction: good as f64 / n as f64 })
}

/// Smoothed `g x g` histogram of 2-D samples; points outside `bounds` count
/// toward the nearest edge cell.
pub fn histogram_distribution(samples: &Tensor, bounds: &Bounds, g: usize, alpha: f64) -> Result<DiscreteDistribution> {
    bounds.validate()?;
    if g == 0 {
        return Err(Error::Argument("grid resolution must be positive".into()));
    }
    if samples.shape().len() != 2 || samples.shape()[1] != 2 {
        return Err(Error::Dimension(format!("histogram needs (count, 2) samples, got {:?}", samples.shape())));
    }
    if samples.batch() == 0 {
        return Err(Error::Argument("histogram of an empty sample set".into()));
    }
    let mut counts = vec![alpha; g * g];
    for s in samples.data().chunks_exact(2) {
        counts[bounds.cell(s[0], s[1], g)] += 1.0;
    }
    DiscreteDistribution::from_weights(&counts)
}

/// `(KL[P || Q], KL[Q || P])` between smoothed histograms of the two sample sets.
pub fn empirical_kl_pair(samples_p: &Tensor, samples_q: &Tensor, bounds: &Bounds, g: usize) -> Result<(f64, f64)> {
    let p = histogram_distribution(samples_p, bounds, g, HISTOGRAM_SMOOTHING)?;
    let q = histogram_distribution(samples_q, bounds, g, HISTOGRAM_SMOOTHING)?;
    Ok((kl_divergence(&p, &q)?, kl_divergence(&q, &p)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

/// Exact pixelwise-L2 nearest training sample for every generated sample; ties
/// by lowest index.
pub fn nearest_training_neighbor(generated: &Tensor, training: &Tensor) -> Result<Vec<Neighbor>> {
    if training.batch() == 0 {
        return Err(Error::Argument("empty training set".into()));
    }
    if generated.sample_len() != training.sample_len() {
        return Err(Error::Dimension(format!(
            "generated samples {:?} vs training samples {:?}",
            generated.sample_shape(),
            training.sample_shape()
        )));
    }
    Ok((0..generated.batch())
        .map(|i| {
            let g = generated.sample(i);
            let mut best = Neighbor { index: 0, distance: f64::INFINITY };
            for j in 0..training.batch() {
                let d2: f64 = g.iter().zip(training.sample(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2 < best.distance {
                    best = Neighbor { index: j, distance: d2 };
                }
            }
            best.distance = best.distance.sqrt();
            best
        })
        .collect())
}
