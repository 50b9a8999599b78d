//! `pigan gradcheck`: backprop against finite differences for every layer
//! kind and the desk conv presets.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Result};
use pigan_core::nn::{standard_suite, SuiteCase, SUITE_TOLERANCE};

#[derive(Debug, Clone)]
pub struct GradcheckArgs {
    pub latent_dim: usize,
    /// Sampled coordinates per preset network.
    pub coordinates: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

pub fn render(cases: &[SuiteCase]) -> String {
    let mut s = String::from("case,mode,max_relative_error,checked,skipped_kinks,status\n");
    for c in cases {
        s.push_str(&format!(
            "{},{:?},{:e},{},{},{}\n",
            c.name,
            c.mode,
            c.report.max_relative_error,
            c.report.checked,
            c.report.skipped_kinks,
            if c.passed() { "pass" } else { "fail" }
        ));
    }
    s
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<Vec<SuiteCase>> {
    let cases = standard_suite(args.latent_dim, args.coordinates, args.seed)?;
    let csv = render(&cases);
    match &args.out {
        Some(p) => fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    let failed: Vec<&str> = cases.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
    if !failed.is_empty() {
        bail!("relative error at or above {SUITE_TOLERANCE:e} in: {}", failed.join(", "));
    }
    Ok(cases)
}
