//! The `pigan` command line: training, evaluation, interpolation, divergence
//! tables, dataset tooling and gradient checks.
//!
//! Every subcommand is also callable as a function so tests and benchmarks can
//! drive it without a subprocess. Exit status is 0 only when all outputs were
//! written and every internal check passed.

pub mod config;
pub mod data;
pub mod divergence;
pub mod eval;
pub mod gradcheck;
pub mod interp;
pub mod train;

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pigan_core::Split;

use crate::divergence::{DivergenceOptions, LimitArg, PairSource};
use crate::eval::{EvalOptions, EvalReport, EvalTask};
use crate::interp::{InterpMode, InterpOptions};
use crate::train::TrainOverrides;

#[derive(Debug, Parser)]
#[command(name = "pigan", version, about = "Pi-weighted adversarial training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a GAN from a JSON run configuration.
    Train(TrainArgs),
    /// Evaluate a checkpoint: retrieval, one-shot, mixture modes or overfitting.
    Eval(EvalArgs),
    /// Generate a strip of images along a latent interpolation.
    Interp(InterpArgs),
    /// Tabulate KL, JS_pi and the generator cost identity.
    Divergence(DivergenceArgs),
    /// Create, ingest or inspect datasets.
    #[command(subcommand)]
    Data(DataCommand),
    /// Compare backprop with finite differences.
    Gradcheck(GradcheckCliArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub pi: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub task: EvalTask,
    #[arg(long)]
    pub out: PathBuf,
    /// Deepest retrieval rank.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Retrieval queries rendered as mosaics.
    #[arg(long, default_value_t = 8)]
    pub queries: usize,
    /// Generated samples for `modes` (and up to 36 for `overfit`).
    #[arg(long, default_value_t = 5000)]
    pub samples: usize,
    /// Histogram resolution for `modes`.
    #[arg(long, default_value_t = 32)]
    pub grid: usize,
    /// Mixture spec JSON for `modes`; defaults to the checkpoint's training data.
    #[arg(long)]
    pub mixture: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct InterpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = InterpMode::Slerp)]
    pub mode: InterpMode,
    #[arg(long, default_value_t = 9)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rescale the second endpoint to the first endpoint's norm.
    #[arg(long)]
    pub equal_norm: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DivergenceArgs {
    /// Masses of P, comma separated.
    #[arg(long, value_delimiter = ',', requires = "q")]
    pub p: Option<Vec<f64>>,
    /// Masses of Q, comma separated.
    #[arg(long, value_delimiter = ',', requires = "p")]
    pub q: Option<Vec<f64>>,
    /// Number of random strictly positive pairs.
    #[arg(long, conflicts_with_all = ["p", "samples_p"])]
    pub random: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub support: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// PIGANDS1 file of 2-D points for P.
    #[arg(long, requires = "samples_q", conflicts_with = "p")]
    pub samples_p: Option<PathBuf>,
    #[arg(long, requires = "samples_p")]
    pub samples_q: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub grid: usize,
    #[arg(long, value_delimiter = ',')]
    pub pis: Option<Vec<f64>>,
    /// Report JS_pi / pi (zero) or JS_pi / (1 - pi) (one) against the KL limit.
    #[arg(long, value_enum)]
    pub limit: Option<LimitArg>,
    /// CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Background,
    Evaluation,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Background => Split::Background,
            SplitArg::Evaluation => Split::Evaluation,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum DataCommand {
    /// Render the synthetic glyph corpus.
    MakeGlyphs {
        /// Glyph spec JSON; defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Background)]
        split: SplitArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample a 2-D Gaussian mixture (the 8-mode ring by default).
    MakeMixture {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 5000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = SplitArg::Background)]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert `<dir>/<class>/*.pgm` into a dataset.
    IngestPgm {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, value_enum, default_value_t = SplitArg::Background)]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print counts, class histogram and split.
    Info {
        #[arg(long)]
        dataset: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct GradcheckCliArgs {
    #[arg(long, default_value_t = 100)]
    pub latent: usize,
    /// Sampled coordinates per preset network.
    #[arg(long, default_value_t = 2000)]
    pub coordinates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn pair_source(a: &DivergenceArgs) -> Result<PairSource> {
    Ok(match (&a.p, &a.q, a.random, &a.samples_p, &a.samples_q) {
        (Some(p), Some(q), None, None, None) => PairSource::Exact { p: p.clone(), q: q.clone() },
        (None, None, Some(pairs), None, None) => PairSource::Random { pairs, support: a.support, seed: a.seed },
        (None, None, None, Some(p), Some(q)) => PairSource::Samples { p: p.clone(), q: q.clone(), grid: a.grid },
        _ => bail!("give exactly one of --p/--q, --random or --samples-p/--samples-q"),
    })
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let overrides =
                TrainOverrides { pi: a.pi, k: a.k, seed: a.seed, iterations: a.iters, out: a.out, resume: a.resume };
            let outcome = train::cmd_train(&a.config, &overrides)?;
            println!("{}", outcome.dir.display());
        }
        Command::Eval(a) => {
            let opts = EvalOptions {
                checkpoint: a.checkpoint,
                dataset: a.dataset,
                task: a.task,
                out: a.out,
                k: a.k,
                queries: a.queries,
                samples: a.samples,
                grid: a.grid,
                mixture: a.mixture,
                seed: a.seed,
            };
            match eval::cmd_eval(&opts)? {
                EvalReport::Retrieval { curve } => println!("top1 {:.4}", curve[0]),
                EvalReport::OneShot(s) => match s.linear {
                    Some(l) => println!("nearest_neighbor {:.4} linear {l:.4}", s.nearest_neighbor),
                    None => println!("nearest_neighbor {:.4}", s.nearest_neighbor),
                },
                EvalReport::Modes { kl_pq, kl_qp, covered, hq_fraction, .. } => {
                    println!("kl_pq {kl_pq:.4} kl_qp {kl_qp:.4} modes {covered} hq {hq_fraction:.4}")
                }
                EvalReport::Overfit { mean_distance } => println!("mean nearest distance {mean_distance:.4}"),
            }
        }
        Command::Interp(a) => {
            let opts = InterpOptions {
                checkpoint: a.checkpoint,
                mode: a.mode,
                steps: a.steps,
                seed: a.seed,
                equal_norm: a.equal_norm,
                out: a.out,
            };
            let report = interp::cmd_interp(&opts)?;
            println!("endpoints_match {} max_norm_drift {:e}", report.endpoints_match, report.max_norm_drift);
        }
        Command::Divergence(a) => {
            let opts = DivergenceOptions { source: pair_source(&a)?, pis: a.pis, limit: a.limit, out: a.out };
            divergence::cmd_divergence(&opts)?;
        }
        Command::Data(cmd) => match cmd {
            DataCommand::MakeGlyphs { spec, split, seed, out } => {
                print!("{}", data::describe(&data::make_glyphs(spec.as_deref(), split.into(), seed, &out)?))
            }
            DataCommand::MakeMixture { spec, count, seed, split, out } => {
                print!("{}", data::describe(&data::make_mixture(spec.as_deref(), count, seed, split.into(), &out)?))
            }
            DataCommand::IngestPgm { dir, size, split, out } => {
                print!("{}", data::describe(&data::ingest(&dir, size, split.into(), &out)?))
            }
            DataCommand::Info { dataset } => print!("{}", data::info(&dataset)?),
        },
        Command::Gradcheck(a) => {
            let args =
                gradcheck::GradcheckArgs { latent_dim: a.latent, coordinates: a.coordinates, seed: a.seed, out: a.out };
            gradcheck::cmd_gradcheck(&args)?;
        }
    }
    Ok(())
}
