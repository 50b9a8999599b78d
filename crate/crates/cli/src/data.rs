//! `pigan data`: dataset generation, PGM ingestion and inspection.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use pigan_core::datasets::{generate_glyph_dataset, ingest_pgm_directory, load_dataset, mixture_dataset, save_dataset, MixtureSpec};
use pigan_core::{GlyphSpec, LabeledDataset, Split};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn save(ds: &LabeledDataset, out: &Path) -> Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_dataset(ds, out).with_context(|| format!("writing {}", out.display()))
}

/// Glyph corpus for one split; `seed` overrides the spec's seed.
pub fn make_glyphs(spec: Option<&Path>, split: Split, seed: Option<u64>, out: &Path) -> Result<LabeledDataset> {
    let mut spec: GlyphSpec = spec.map(read_json).transpose()?.unwrap_or_default();
    if let Some(s) = seed {
        spec.seed = s;
    }
    let ds = generate_glyph_dataset(&spec, split)?;
    save(&ds, out)?;
    Ok(ds)
}

/// Labeled mixture samples; the 8-mode ring when no spec is given.
pub fn make_mixture(spec: Option<&Path>, count: usize, seed: u64, split: Split, out: &Path) -> Result<LabeledDataset> {
    let spec: MixtureSpec = spec.map(read_json).transpose()?.unwrap_or_else(MixtureSpec::ring8);
    let ds = mixture_dataset(&spec, count, &mut ChaCha8Rng::seed_from_u64(seed), split)?;
    save(&ds, out)?;
    Ok(ds)
}

pub fn ingest(dir: &Path, size: usize, split: Split, out: &Path) -> Result<LabeledDataset> {
    let ds = ingest_pgm_directory(dir, size, split).with_context(|| format!("ingesting {}", dir.display()))?;
    save(&ds, out)?;
    Ok(ds)
}

/// Human-readable summary: split, counts, sample shape and class histogram.
pub fn describe(ds: &LabeledDataset) -> String {
    let mut s = String::new();
    let hist = ds.class_histogram();
    let _ = writeln!(s, "split: {}", ds.split());
    let _ = writeln!(s, "samples: {}", ds.len());
    let _ = writeln!(s, "classes: {}", ds.class_count());
    let _ = writeln!(s, "sample_shape: {:?}", ds.sample_shape());
    if let Some(groups) = ds.groups() {
        let mut distinct = groups.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let _ = writeln!(s, "groups: {}", distinct.len());
    }
    let (lo, hi) = (hist.iter().min().copied().unwrap_or(0), hist.iter().max().copied().unwrap_or(0));
    let _ = writeln!(s, "per_class: min {lo} max {hi}");
    let body: Vec<String> = hist.iter().enumerate().map(|(c, n)| format!("{c}:{n}")).collect();
    let _ = writeln!(s, "class_histogram: {}", body.join(" "));
    s
}

pub fn info(path: &Path) -> Result<String> {
    let ds = load_dataset(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(describe(&ds))
}
