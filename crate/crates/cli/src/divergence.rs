//! `pigan divergence`: tables of KL, JS_pi and the generator cost at the
//! optimal discriminator, with the residual of the identity
//! `C(G) = pi log pi + (1 - pi) log(1 - pi) + JS_pi`.
//!
//! Columns: `pair,pi,kl_pq,kl_qp,js_pi,constant,c_g,identity_residual,flag`;
//! limit mode appends `ratio,target,gap`. `flag` is `ok`, `residual` (identity
//! violated) or `infinite_kl` (limit target undefined).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use pigan_core::datasets::{load_dataset, Bounds};
use pigan_core::divergence::{
    generator_cost_with_residual, js_pi_divergence, kl_divergence, limit_ratio_profile, pi_entropy_constant,
    LimitDirection, IDENTITY_TOLERANCE,
};
use pigan_core::evaluation::{histogram_distribution, HISTOGRAM_SMOOTHING};
use pigan_core::{DiscreteDistribution, PiWeight, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_PIS: [f64; 5] = [0.01, 0.1, 0.5, 0.9, 0.99];
pub const LIMIT_TOWARD_ZERO: [f64; 3] = [1e-1, 1e-2, 1e-3];
pub const LIMIT_TOWARD_ONE: [f64; 3] = [0.9, 0.99, 0.999];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LimitArg {
    Zero,
    One,
}

/// Where the distribution pairs come from.
#[derive(Debug, Clone, PartialEq)]
pub enum PairSource {
    Exact { p: Vec<f64>, q: Vec<f64> },
    Random { pairs: usize, support: usize, seed: u64 },
    /// 2-D sample sets from two datasets, binned on a shared `grid x grid` histogram.
    Samples { p: PathBuf, q: PathBuf, grid: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceOptions {
    pub source: PairSource,
    /// Defaults to [`DEFAULT_PIS`], or the limit sequence in limit mode.
    pub pis: Option<Vec<f64>>,
    pub limit: Option<LimitArg>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Limit {
    pub ratio: f64,
    pub target: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceRow {
    pub pair: usize,
    pub pi: f64,
    pub kl_pq: f64,
    pub kl_qp: f64,
    pub js_pi: f64,
    pub constant: f64,
    pub c_g: f64,
    pub residual: f64,
    pub limit: Option<Limit>,
}

impl DivergenceRow {
    pub fn flag(&self) -> &'static str {
        if !(self.residual < IDENTITY_TOLERANCE) {
            "residual"
        } else if self.limit.as_ref().is_some_and(|l| !l.target.is_finite()) {
            "infinite_kl"
        } else {
            "ok"
        }
    }
}

fn samples_bounds(a: &Tensor, b: &Tensor) -> Result<Bounds> {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for s in a.data().chunks_exact(2).chain(b.data().chunks_exact(2)) {
        for i in 0..2 {
            lo[i] = lo[i].min(s[i]);
            hi[i] = hi[i].max(s[i]);
        }
    }
    let pad = |i: usize| ((hi[i] - lo[i]) * 0.05).max(1e-6);
    let bounds = Bounds { x_min: lo[0] - pad(0), x_max: hi[0] + pad(0), y_min: lo[1] - pad(1), y_max: hi[1] + pad(1) };
    bounds.validate()?;
    Ok(bounds)
}

fn load_points(path: &Path) -> Result<Tensor> {
    let ds = load_dataset(path).with_context(|| format!("loading {}", path.display()))?;
    if ds.sample_shape() != [2] {
        bail!("{} holds {:?} samples; the samples mode needs 2-D points", path.display(), ds.sample_shape());
    }
    Ok(ds.samples().clone())
}

pub fn pairs(source: &PairSource) -> Result<Vec<(DiscreteDistribution, DiscreteDistribution)>> {
    Ok(match source {
        PairSource::Exact { p, q } => vec![(DiscreteDistribution::new(p.clone())?, DiscreteDistribution::new(q.clone())?)],
        PairSource::Random { pairs, support, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..*pairs)
                .map(|_| {
                    Ok((
                        DiscreteDistribution::random_positive(*support, &mut rng)?,
                        DiscreteDistribution::random_positive(*support, &mut rng)?,
                    ))
                })
                .collect::<Result<_>>()?
        }
        PairSource::Samples { p, q, grid } => {
            let (a, b) = (load_points(p)?, load_points(q)?);
            let bounds = samples_bounds(&a, &b)?;
            vec![(
                histogram_distribution(&a, &bounds, *grid, HISTOGRAM_SMOOTHING)?,
                histogram_distribution(&b, &bounds, *grid, HISTOGRAM_SMOOTHING)?,
            )]
        }
    })
}

pub fn divergence_rows(opts: &DivergenceOptions) -> Result<Vec<DivergenceRow>> {
    let pis = match (&opts.pis, opts.limit) {
        (Some(p), _) => p.clone(),
        (None, Some(LimitArg::Zero)) => LIMIT_TOWARD_ZERO.to_vec(),
        (None, Some(LimitArg::One)) => LIMIT_TOWARD_ONE.to_vec(),
        (None, None) => DEFAULT_PIS.to_vec(),
    };
    let weights = pis.iter().map(|&p| PiWeight::new(p)).collect::<pigan_core::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (i, (p, q)) in pairs(&opts.source)?.iter().enumerate() {
        let (kl_pq, kl_qp) = (kl_divergence(p, q)?, kl_divergence(q, p)?);
        let limits = match opts.limit {
            None => None,
            Some(dir) => {
                let direction = match dir {
                    LimitArg::Zero => LimitDirection::TowardZero,
                    LimitArg::One => LimitDirection::TowardOne,
                };
                match limit_ratio_profile(p, q, &weights, direction) {
                    Ok(points) => Some(points.into_iter().map(|l| Limit { ratio: l.ratio, target: l.target, gap: l.gap }).collect()),
                    Err(pigan_core::Error::UnsupportedLimit(_)) => Some(
                        weights
                            .iter()
                            .map(|&w| {
                                let scale = if dir == LimitArg::Zero { w.value() } else { 1.0 - w.value() };
                                let ratio = js_pi_divergence(p, q, w).map(|js| js / scale).unwrap_or(f64::NAN);
                                Limit { ratio, target: f64::INFINITY, gap: f64::INFINITY }
                            })
                            .collect(),
                    ),
                    Err(e) => return Err(e.into()),
                }
            }
        };
        for (j, &w) in weights.iter().enumerate() {
            let (c_g, residual) = generator_cost_with_residual(p, q, w)?;
            rows.push(DivergenceRow {
                pair: i,
                pi: w.value(),
                kl_pq,
                kl_qp,
                js_pi: js_pi_divergence(p, q, w)?,
                constant: pi_entropy_constant(w),
                c_g,
                residual,
                limit: limits.as_ref().map(|l: &Vec<Limit>| l[j].clone()),
            });
        }
    }
    Ok(rows)
}

pub fn render_csv(rows: &[DivergenceRow], limit: bool) -> String {
    let mut out = String::from("pair,pi,kl_pq,kl_qp,js_pi,constant,c_g,identity_residual,flag");
    if limit {
        out.push_str(",ratio,target,gap");
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:e},{}",
            r.pair,
            r.pi,
            r.kl_pq,
            r.kl_qp,
            r.js_pi,
            r.constant,
            r.c_g,
            r.residual,
            r.flag()
        ));
        if let Some(l) = &r.limit {
            out.push_str(&format!(",{:?},{:?},{:?}", l.ratio, l.target, l.gap));
        }
        out.push('\n');
    }
    out
}

/// Writes the table (file or stdout) and fails if any identity residual
/// reaches the tolerance.
pub fn cmd_divergence(opts: &DivergenceOptions) -> Result<Vec<DivergenceRow>> {
    let rows = divergence_rows(opts)?;
    let csv = render_csv(&rows, opts.limit.is_some());
    match &opts.out {
        Some(path) => fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    if let Some(bad) = rows.iter().find(|r| !(r.residual < IDENTITY_TOLERANCE)) {
        bail!("identity residual {:e} at pair {} pi {}", bad.residual, bad.pair, bad.pi);
    }
    Ok(rows)
}
