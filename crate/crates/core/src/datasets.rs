//! Synthetic data with known structure, the `PIGANDS1` dataset file, and PGM ingestion.
//!
//! `PIGANDS1` layout (little-endian):
//!
//! | field | type |
//! |-------|------|
//! | magic | `b"PIGANDS1"` |
//! | split | `u8` (0 background, 1 evaluation) |
//! | class count | `u32` |
//! | sample count | `u64` |
//! | sample rank, then each dim | `u32`, `u64 * rank` |
//! | has groups | `u8` (0 or 1) |
//! | samples | `f32 * count * prod(dims)` |
//! | labels | `u32 * count` |
//! | groups | `u32 * count`, present iff has groups |

use std::f64::consts::PI;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::binio::{put_u32, put_u64, Reader};
use crate::divergence::DiscreteDistribution;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::nn::{resample_planes, Tensor};

pub const DATASET_MAGIC: &[u8; 8] = b"PIGANDS1";

/// Largest per-file sample or dimension count accepted when reading.
const MAX_COUNT: u64 = 1 << 32;

/// Mixture mass that [`mixture_grid_density`] requires inside its bounds.
pub const DEFAULT_MIN_COVERAGE: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub mean: [f64; 2],
    pub sigma: f64,
    pub weight: f64,
}

/// Isotropic 2-D Gaussian mixture. Weights are normalized on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixture", into = "RawMixture")]
pub struct MixtureSpec {
    components: Vec<MixtureComponent>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMixture {
    components: Vec<MixtureComponent>,
}

impl TryFrom<RawMixture> for MixtureSpec {
    type Error = Error;

    fn try_from(raw: RawMixture) -> Result<Self> {
        Self::new(raw.components)
    }
}

impl From<MixtureSpec> for RawMixture {
    fn from(spec: MixtureSpec) -> Self {
        RawMixture { components: spec.components }
    }
}

impl MixtureSpec {
    pub fn new(mut components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Argument("mixture needs at least one component".into()));
        }
        for (i, c) in components.iter().enumerate() {
            if !(c.sigma > 0.0 && c.sigma.is_finite()) {
                return Err(Error::Domain(format!("component {i} sigma {} must be positive", c.sigma)));
            }
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::Domain(format!("component {i} weight {} must be positive", c.weight)));
            }
            if !c.mean.iter().all(|m| m.is_finite()) {
                return Err(Error::Domain(format!("component {i} mean is not finite")));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        for c in &mut components {
            c.weight /= total;
        }
        Ok(Self { components })
    }

    /// `count` equally weighted components evenly spaced on a circle, the first at angle 0.
    pub fn ring(count: usize, radius: f64, sigma: f64) -> Result<Self> {
        let components = (0..count)
            .map(|i| {
                let angle = 2.0 * PI * i as f64 / count as f64;
                MixtureComponent { mean: [radius * angle.cos(), radius * angle.sin()], sigma, weight: 1.0 }
            })
            .collect();
        Self::new(components)
    }

    /// The 8-mode benchmark: radius 5, sigma 0.25.
    pub fn ring8() -> Self {
        Self::ring(8, 5.0, 0.25).expect("valid constants")
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn density(&self, x: f64, y: f64) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let s2 = c.sigma * c.sigma;
                let d2 = (x - c.mean[0]).powi(2) + (y - c.mean[1]).powi(2);
                c.weight * (-d2 / (2.0 * s2)).exp() / (2.0 * PI * s2)
            })
            .sum()
    }

    /// Smallest box holding every component mean padded by `sigmas` of its standard deviation.
    pub fn bounding_box(&self, sigmas: f64) -> Bounds {
        let mut b = Bounds { x_min: f64::INFINITY, x_max: f64::NEG_INFINITY, y_min: f64::INFINITY, y_max: f64::NEG_INFINITY };
        for c in &self.components {
            let pad = sigmas * c.sigma;
            b.x_min = b.x_min.min(c.mean[0] - pad);
            b.x_max = b.x_max.max(c.mean[0] + pad);
            b.y_min = b.y_min.min(c.mean[1] - pad);
            b.y_max = b.y_max.max(c.mean[1] + pad);
        }
        b
    }
}

/// Axis-aligned rectangle `[x_min, x_max] x [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    pub fn square(half_width: f64) -> Self {
        Self { x_min: -half_width, x_max: half_width, y_min: -half_width, y_max: half_width }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max;
        if !ok {
            return Err(Error::Argument(format!("degenerate bounds {self:?}")));
        }
        Ok(())
    }

    /// Row-major cell index of `(x, y)` on a `g x g` grid; points outside land in
    /// the nearest edge cell.
    pub fn cell(&self, x: f64, y: f64, g: usize) -> usize {
        let fx = (x - self.x_min) / (self.x_max - self.x_min);
        let fy = (y - self.y_min) / (self.y_max - self.y_min);
        let ix = ((fx * g as f64).floor().max(0.0) as usize).min(g - 1);
        let iy = ((fy * g as f64).floor().max(0.0) as usize).min(g - 1);
        iy * g + ix
    }

    pub fn cell_center(&self, index: usize, g: usize) -> (f64, f64) {
        let (iy, ix) = (index / g, index % g);
        let x = self.x_min + (ix as f64 + 0.5) * (self.x_max - self.x_min) / g as f64;
        let y = self.y_min + (iy as f64 + 0.5) * (self.y_max - self.y_min) / g as f64;
        (x, y)
    }
}

/// i.i.d. draws: component by weight, then an isotropic Gaussian. Returns `(count, 2)`.
pub fn sample_gaussian_mixture<R: Rng + ?Sized>(spec: &MixtureSpec, count: usize, rng: &mut R) -> Tensor {
    sample_gaussian_mixture_with_components(spec, count, rng).0
}

/// As [`sample_gaussian_mixture`], also returning the component index of each draw.
pub fn sample_gaussian_mixture_with_components<R: Rng + ?Sized>(
    spec: &MixtureSpec,
    count: usize,
    rng: &mut R,
) -> (Tensor, Vec<usize>) {
    let mut data = Vec::with_capacity(2 * count);
    let mut which = Vec::with_capacity(count);
    let last = spec.components.len() - 1;
    for _ in 0..count {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = last;
        for (i, c) in spec.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                k = i;
                break;
            }
        }
        let c = &spec.components[k];
        let zx: f64 = StandardNormal.sample(rng);
        let zy: f64 = StandardNormal.sample(rng);
        data.push(c.mean[0] + c.sigma * zx);
        data.push(c.mean[1] + c.sigma * zy);
        which.push(k);
    }
    (Tensor::from_parts(vec![count, 2], data), which)
}

/// Upper bound on `P(N(0,1) > t)` for `t >= 0`.
fn gaussian_tail_bound(t: f64) -> f64 {
    if t <= 0.0 {
        1.0
    } else {
        0.5 * (-0.5 * t * t).exp()
    }
}

/// Lower bound on the mixture mass inside `bounds` (union bound over the four sides).
pub fn mixture_mass_lower_bound(spec: &MixtureSpec, bounds: &Bounds) -> f64 {
    spec.components
        .iter()
        .map(|c| {
            let s = c.sigma;
            let outside = gaussian_tail_bound((c.mean[0] - bounds.x_min) / s)
                + gaussian_tail_bound((bounds.x_max - c.mean[0]) / s)
                + gaussian_tail_bound((c.mean[1] - bounds.y_min) / s)
                + gaussian_tail_bound((bounds.y_max - c.mean[1]) / s);
            c.weight * (1.0 - outside).max(0.0)
        })
        .sum()
}

/// Cell masses on a `g x g` grid proportional to the density at cell centers,
/// renormalized. Row-major with `y` as the slow axis.
///
/// Fails with [`Error::Coverage`] unless the bounds provably hold at least
/// [`DEFAULT_MIN_COVERAGE`] of the mixture mass.
pub fn mixture_grid_density(spec: &MixtureSpec, bounds: &Bounds, g: usize) -> Result<DiscreteDistribution> {
    mixture_grid_density_with_coverage(spec, bounds, g, DEFAULT_MIN_COVERAGE)
}

/// [`mixture_grid_density`] with an explicit coverage requirement in `[0, 1)`.
pub fn mixture_grid_density_with_coverage(
    spec: &MixtureSpec,
    bounds: &Bounds,
    g: usize,
    min_coverage: f64,
) -> Result<DiscreteDistribution> {
    bounds.validate()?;
    if g < 2 {
        return Err(Error::Argument(format!("grid resolution {g} must be at least 2")));
    }
    if !(0.0..1.0).contains(&min_coverage) {
        return Err(Error::Argument(format!("coverage requirement {min_coverage} outside [0, 1)")));
    }
    let covered = mixture_mass_lower_bound(spec, bounds);
    if covered < min_coverage {
        return Err(Error::Coverage(format!("bounds hold at least {covered:.6} of the mass, need {min_coverage}")));
    }
    let weights: Vec<f64> = (0..g * g)
        .map(|i| {
            let (x, y) = bounds.cell_center(i, g);
            spec.density(x, y)
        })
        .collect();
    DiscreteDistribution::from_weights(&weights)
        .map_err(|e| Error::Coverage(format!("density vanishes on every cell center: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Background,
    Evaluation,
}

impl Split {
    fn code(self) -> u8 {
        match self {
            Split::Background => 0,
            Split::Evaluation => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Split::Background),
            1 => Some(Split::Evaluation),
            _ => None,
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Background => "background",
            Split::Evaluation => "evaluation",
        })
    }
}

/// Samples with integer class labels and optional alphabet groups.
///
/// Every sample value is exactly representable as `f32`, which makes the file
/// round trip bit-exact. Image datasets (rank-3 samples) hold values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Tensor,
    labels: Vec<u32>,
    groups: Option<Vec<u32>>,
    class_count: u32,
    split: Split,
}

impl LabeledDataset {
    /// Rounds samples through `f32` and validates labels, groups and pixel range.
    pub fn new(samples: Tensor, labels: Vec<u32>, groups: Option<Vec<u32>>, class_count: u32, split: Split) -> Result<Self> {
        if samples.shape().len() < 2 {
            return Err(Error::Dimension(format!("samples need a batch axis, got shape {:?}", samples.shape())));
        }
        let n = samples.batch();
        if labels.len() != n {
            return Err(Error::Dimension(format!("{n} samples but {} labels", labels.len())));
        }
        if let Some(g) = &groups {
            if g.len() != n {
                return Err(Error::Dimension(format!("{n} samples but {} groups", g.len())));
            }
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Data(format!("label {l} outside [0, {class_count})")));
        }
        let mut samples = samples;
        for v in samples.data_mut() {
            *v = *v as f32 as f64;
        }
        if let Some(i) = samples.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("sample value {i} is not finite in f32")));
        }
        if samples.shape().len() == 4 && samples.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("image pixel outside [0, 1]".into()));
        }
        Ok(Self { samples, labels, groups, class_count, split })
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn groups(&self) -> Option<&[u32]> {
        self.groups.as_deref()
    }

    pub fn class_count(&self) -> u32 {
        self.class_count
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of one sample, without the batch axis.
    pub fn sample_shape(&self) -> &[usize] {
        self.samples.sample_shape()
    }

    /// Number of samples per class, indexed by label.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count as usize];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// Keeps the samples at `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Argument(format!("index {i} out of range for {} samples", self.len())));
        }
        Ok(Self {
            samples: self.samples.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            groups: self.groups.as_ref().map(|g| indices.iter().map(|&i| g[i]).collect()),
            class_count: self.class_count,
            split: self.split,
        })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&[self.split.code()])?;
        put_u32(w, self.class_count)?;
        put_u64(w, self.len() as u64)?;
        let dims = self.sample_shape();
        put_u32(w, dims.len() as u32)?;
        for &d in dims {
            put_u64(w, d as u64)?;
        }
        w.write_all(&[self.groups.is_some() as u8])?;
        let mut buf = Vec::with_capacity(self.samples.len() * 4);
        for &v in self.samples.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for &l in &self.labels {
            buf.extend_from_slice(&l.to_le_bytes());
        }
        for &g in self.groups.iter().flatten() {
            buf.extend_from_slice(&g.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(reader: R) -> Result<Self> {
        let mut r = Reader::new(reader);
        if r.bytes(8, "magic")? != DATASET_MAGIC {
            return Err(Error::Format { offset: 0, detail: "not a PIGANDS1 dataset".into() });
        }
        let at = r.offset();
        let split = Split::from_code(r.u8("split")?)
            .ok_or_else(|| Error::Format { offset: at, detail: "unknown split code".into() })?;
        let class_count = r.u32("class count")?;
        let count = r.len_u64("sample count", MAX_COUNT)?;
        let at = r.offset();
        let rank = r.u32("rank")?;
        if rank == 0 || rank > 8 {
            return Err(Error::Format { offset: at, detail: format!("sample rank {rank} outside 1..=8") });
        }
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            dims.push(r.len_u64("dimension", MAX_COUNT)?);
        }
        let at = r.offset();
        let has_groups = match r.u8("group flag")? {
            0 => false,
            1 => true,
            other => return Err(Error::Format { offset: at, detail: format!("group flag {other}") }),
        };
        let per: usize = dims.iter().product();
        let total = count
            .checked_mul(per)
            .filter(|&t| (t as u64) < MAX_COUNT)
            .ok_or_else(|| r.error("sample payload too large"))?;
        let at = r.offset();
        let pixels = r.f32s(total, "samples")?;
        let labels = r.u32s(count, "labels")?;
        let groups = if has_groups { Some(r.u32s(count, "groups")?) } else { None };
        r.expect_end()?;
        let mut shape = vec![count];
        shape.extend(&dims);
        let samples = Tensor::new(shape, pixels.into_iter().map(f64::from).collect())
            .map_err(|e| Error::Format { offset: at, detail: e.to_string() })?;
        Self::new(samples, labels, groups, class_count, split)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(fs::File::open(path)?))
    }
}

pub fn save_dataset(ds: &LabeledDataset, path: &Path) -> Result<()> {
    ds.save(path)
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    LabeledDataset::load(path)
}

/// Something a training loop can draw real batches from.
pub trait DataSource {
    /// Shape of one sample, without the batch axis.
    fn sample_shape(&self) -> Vec<usize>;

    /// `m` samples as a `(m, ...)` tensor.
    fn sample_batch(&self, m: usize, rng: &mut ChaCha8Rng) -> Result<Tensor>;

    /// Number of stored samples, or `None` for an unbounded sampler.
    fn stored(&self) -> Option<usize> {
        None
    }
}

impl DataSource for LabeledDataset {
    fn sample_shape(&self) -> Vec<usize> {
        LabeledDataset::sample_shape(self).to_vec()
    }

    /// Uniform with replacement.
    fn sample_batch(&self, m: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        if self.is_empty() {
            return Err(Error::Data("cannot draw from an empty dataset".into()));
        }
        let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..self.len())).collect();
        Ok(self.samples.select(&idx))
    }

    fn stored(&self) -> Option<usize> {
        Some(self.len())
    }
}

impl DataSource for MixtureSpec {
    fn sample_shape(&self) -> Vec<usize> {
        vec![2]
    }

    fn sample_batch(&self, m: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        Ok(sample_gaussian_mixture(self, m, rng))
    }
}

/// Labels a mixture sample set by component, so it can be stored as a dataset.
pub fn mixture_dataset<R: Rng + ?Sized>(spec: &MixtureSpec, count: usize, rng: &mut R, split: Split) -> Result<LabeledDataset> {
    let (samples, which) = sample_gaussian_mixture_with_components(spec, count, rng);
    let labels = which.into_iter().map(|k| k as u32).collect();
    LabeledDataset::new(samples, labels, None, spec.components.len() as u32, split)
}

/// Synthetic stroke-glyph corpus: each class is a fixed set of random polyline
/// strokes, each example a jittered rendering of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlyphSpec {
    pub background_classes: usize,
    pub evaluation_classes: usize,
    pub examples_per_class: usize,
    /// Classes sharing a stroke style; becomes the `groups` field.
    pub classes_per_alphabet: usize,
    pub image_size: usize,
    pub min_strokes: usize,
    pub max_strokes: usize,
    /// Stroke width in pixels.
    pub thickness: f64,
    /// Scales control-point noise and the per-example affine perturbation; 0 disables both.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for GlyphSpec {
    fn default() -> Self {
        Self {
            background_classes: 40,
            evaluation_classes: 20,
            examples_per_class: 20,
            classes_per_alphabet: 5,
            image_size: 16,
            min_strokes: 2,
            max_strokes: 4,
            thickness: 1.2,
            jitter: 1.0,
            seed: 0,
        }
    }
}

type Point = [f64; 2];

impl GlyphSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("background_classes", self.background_classes),
            ("evaluation_classes", self.evaluation_classes),
            ("examples_per_class", self.examples_per_class),
            ("classes_per_alphabet", self.classes_per_alphabet),
            ("image_size", self.image_size),
            ("min_strokes", self.min_strokes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Argument(format!("glyph {name} must be positive")));
        }
        if self.max_strokes < self.min_strokes {
            return Err(Error::Argument("max_strokes below min_strokes".into()));
        }
        if !(self.thickness > 0.0 && self.thickness.is_finite()) {
            return Err(Error::Argument(format!("thickness {} must be positive", self.thickness)));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::Argument(format!("jitter {} must be non-negative", self.jitter)));
        }
        Ok(())
    }

    pub fn classes(&self, split: Split) -> usize {
        match split {
            Split::Background => self.background_classes,
            Split::Evaluation => self.evaluation_classes,
        }
    }

    /// Global class index of local label `label` in `split`. The two splits share
    /// neither classes nor alphabets.
    fn global_class(&self, split: Split, label: usize) -> usize {
        match split {
            Split::Background => label,
            Split::Evaluation => self.background_classes.div_ceil(self.classes_per_alphabet) * self.classes_per_alphabet + label,
        }
    }

    fn rng_for(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// Stroke style shared by an alphabet: `(points per stroke, curl)`.
    fn alphabet_style(&self, alphabet: usize) -> (usize, f64) {
        let mut rng = self.rng_for(1 << 40 | alphabet as u64);
        (rng.random_range(2..=4), rng.random_range(0.0..0.6))
    }

    /// Prototype strokes in unit coordinates.
    fn prototype(&self, global_class: usize) -> Vec<Vec<Point>> {
        let (points, curl) = self.alphabet_style(global_class / self.classes_per_alphabet);
        let mut rng = self.rng_for(global_class as u64);
        let strokes = rng.random_range(self.min_strokes..=self.max_strokes);
        (0..strokes)
            .map(|_| {
                let mut p = [rng.random_range(0.15..0.85), rng.random_range(0.15..0.85)];
                let mut heading: f64 = rng.random_range(0.0..2.0 * PI);
                let mut stroke = vec![p];
                for _ in 1..points {
                    heading += curl * rng.random_range(-PI..PI);
                    let len = rng.random_range(0.2..0.45);
                    p = [(p[0] + len * heading.cos()).clamp(0.1, 0.9), (p[1] + len * heading.sin()).clamp(0.1, 0.9)];
                    stroke.push(p);
                }
                stroke
            })
            .collect()
    }

    fn jittered(&self, proto: &[Vec<Point>], rng: &mut ChaCha8Rng) -> Vec<Vec<Point>> {
        if self.jitter == 0.0 {
            return proto.to_vec();
        }
        let j = self.jitter;
        let mut gauss = |s: f64| -> f64 {
            let z: f64 = StandardNormal.sample(rng);
            z * s * j
        };
        let angle = gauss(0.08);
        let scale = 1.0 + gauss(0.05);
        let shift = [gauss(0.03), gauss(0.03)];
        let (sin, cos) = angle.sin_cos();
        proto
            .iter()
            .map(|stroke| {
                stroke
                    .iter()
                    .map(|&[x, y]| {
                        let (x, y) = (x + gauss(0.02) - 0.5, y + gauss(0.02) - 0.5);
                        [scale * (cos * x - sin * y) + 0.5 + shift[0], scale * (sin * x + cos * y) + 0.5 + shift[1]]
                    })
                    .collect()
            })
            .collect()
    }

    /// Antialiased rendering: intensity falls off linearly over one pixel past the stroke edge.
    fn render(&self, strokes: &[Vec<Point>]) -> Vec<f64> {
        let n = self.image_size;
        let half = self.thickness / 2.0;
        let mut img = vec![0.0f64; n * n];
        for (i, px) in img.iter_mut().enumerate() {
            let p = [(i % n) as f64 + 0.5, (i / n) as f64 + 0.5];
            let mut d = f64::INFINITY;
            for stroke in strokes {
                for seg in stroke.windows(2) {
                    let a = [seg[0][0] * n as f64, seg[0][1] * n as f64];
                    let b = [seg[1][0] * n as f64, seg[1][1] * n as f64];
                    d = d.min(point_segment_distance(p, a, b));
                }
                if stroke.len() == 1 {
                    let a = [stroke[0][0] * n as f64, stroke[0][1] * n as f64];
                    d = d.min(point_segment_distance(p, a, a));
                }
            }
            *px = (half + 0.5 - d).clamp(0.0, 1.0);
        }
        img
    }
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 { ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let q = [a[0] + t * ab[0] - p[0], a[1] + t * ab[1] - p[1]];
    (q[0] * q[0] + q[1] * q[1]).sqrt()
}

/// One split of the glyph corpus: `classes(split) * examples_per_class` images of
/// shape `(1, size, size)`, class-major, labels local to the split, groups the
/// alphabet index.
pub fn generate_glyph_dataset(spec: &GlyphSpec, split: Split) -> Result<LabeledDataset> {
    spec.validate()?;
    let classes = spec.classes(split);
    let n = spec.image_size;
    let mut data = Vec::with_capacity(classes * spec.examples_per_class * n * n);
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for label in 0..classes {
        let global = spec.global_class(split, label);
        let proto = spec.prototype(global);
        let mut rng = spec.rng_for(1 << 41 | global as u64);
        for _ in 0..spec.examples_per_class {
            data.extend(spec.render(&spec.jittered(&proto, &mut rng)));
            labels.push(label as u32);
            groups.push((global / spec.classes_per_alphabet) as u32);
        }
    }
    let samples = Tensor::new(vec![labels.len(), 1, n, n], data)?;
    LabeledDataset::new(samples, labels, Some(groups), classes as u32, split)
}

/// Reads `root/<class>/<file>.pgm`, one subdirectory per class. Labels follow the
/// lexicographic order of subdirectory names; files within a class are read in
/// name order. Images are resized to `size x size` by bilinear resampling.
/// Unreadable or non-PGM files are skipped with a warning.
pub fn ingest_pgm_directory(root: &Path, size: usize, split: Split) -> Result<LabeledDataset> {
    if size == 0 {
        return Err(Error::Argument("image size must be positive".into()));
    }
    let mut classes: Vec<_> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_dir()).unwrap_or(false))
        .map(|e| e.path())
        .collect();
    classes.sort();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (label, dir) in classes.iter().enumerate() {
        let mut files: Vec<_> = fs::read_dir(dir)?.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_file()).collect();
        files.sort();
        for file in files {
            let img = match GrayImage::load_pgm(&file) {
                Ok(img) => img,
                Err(e) => {
                    log::warn!("skipping {}: {e}", file.display());
                    continue;
                }
            };
            if img.width() == size && img.height() == size {
                data.extend_from_slice(img.values());
            } else {
                let resized = resample_planes(img.values(), 1, img.height(), img.width(), size, size);
                data.extend(resized.into_iter().map(|v| v.clamp(0.0, 1.0)));
            }
            labels.push(label as u32);
        }
    }
    if labels.is_empty() {
        return Err(Error::Data(format!("no PGM images found under {}", root.display())));
    }
    let samples = Tensor::new(vec![labels.len(), 1, size, size], data)?;
    LabeledDataset::new(samples, labels, None, classes.len() as u32, split)
}
