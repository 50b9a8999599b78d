use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pigan_cli::divergence::{divergence_rows, DivergenceOptions, LimitArg, PairSource};
use pigan_cli::eval::{cmd_eval, EvalOptions, EvalReport, EvalTask};
use pigan_cli::interp::{cmd_interp, InterpMode, InterpOptions};
use pigan_core::datasets::{generate_glyph_dataset, load_dataset, save_dataset};
use pigan_core::image::GrayImage;
use pigan_core::nn::Checkpoint;
use pigan_core::training::sample_prior;
use pigan_core::{GanState, GlyphSpec, LabeledDataset, Mode, Split, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pigan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pigan")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = pigan(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = pigan(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ring_config(dir: &Path, iterations: u64, checkpoint_every: u64) -> PathBuf {
    let path = dir.join("ring.json");
    let text = format!(
        r#"{{
  "schema_version": 1,
  "gan": {{"pi": 0.3, "batch_size": 16, "latent_dim": 4, "iterations": {iterations}, "learning_rate": 0.002,
          "seed": 5, "checkpoint_every": {checkpoint_every}}},
  "model": {{"mlp": {{"latent_dim": 4, "hidden": 8}}}},
  "data": {{"ring": {{"count": 8, "radius": 5.0, "sigma": 0.25}}}},
  "sample_every": 5
}}"#
    );
    fs::write(&path, text).unwrap();
    path
}

fn tiny_glyphs() -> GlyphSpec {
    GlyphSpec { image_size: 8, background_classes: 3, evaluation_classes: 2, examples_per_class: 4, ..Default::default() }
}

fn conv_config(dir: &Path, iterations: u64) -> PathBuf {
    let path = dir.join("conv.json");
    let glyphs = serde_json::to_string(&tiny_glyphs()).unwrap();
    let text = format!(
        r#"{{
  "schema_version": 1,
  "gan": {{"pi": 0.1, "batch_size": 8, "latent_dim": 4, "iterations": {iterations}, "learning_rate": 0.002, "seed": 1}},
  "model": {{"conv": {{"latent_dim": 4, "width": 2, "image_size": 8}}}},
  "data": {{"glyphs": {glyphs}}},
  "sample_every": 2
}}"#
    );
    fs::write(&path, text).unwrap();
    path
}

fn list(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    names
}

#[test]
fn zero_iterations_write_snapshot_and_initial_checkpoint_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ring_config(dir.path(), 50, 10);
    let out = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--iters", "0", "--out", s(&out)]);
    assert_eq!(list(&out), ["config.json", "final.ckpt"]);
    let state = GanState::from_checkpoint(&Checkpoint::load(&out.join("final.ckpt")).unwrap()).unwrap();
    assert_eq!(state.iteration, 0);
    let snapshot: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(snapshot["gan"]["iterations"], 0);
}

#[test]
fn run_directory_layout_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ring_config(dir.path(), 10, 4);
    let out = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--pi", "0.9", "--k", "2", "--out", s(&out)]);
    assert_eq!(list(&out), ["checkpoints", "config.json", "final.ckpt", "losses.csv", "samples"]);
    assert_eq!(list(&out.join("checkpoints")), ["iter_000004.ckpt", "iter_000008.ckpt"]);
    assert_eq!(list(&out.join("samples")), ["final.csv", "iter_000005.csv", "iter_000010.csv"]);
    let losses = fs::read_to_string(out.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().next(), Some("iteration,j_d,j_g"));
    assert_eq!(losses.lines().count(), 11);
    let snapshot: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(snapshot["gan"]["pi"], 0.9);
    assert_eq!(snapshot["gan"]["k"], 2);
    let points = fs::read_to_string(out.join("samples/final.csv")).unwrap();
    assert_eq!(points.lines().next(), Some("x,y"));
    assert_eq!(points.lines().count(), 1001);
}

#[test]
fn identical_runs_write_identical_loss_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ring_config(dir.path(), 12, 0);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&["train", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["train", "--config", s(&cfg), "--out", s(&b)]);
    ok(&["train", "--config", s(&cfg), "--out", s(&c), "--seed", "6"]);
    let read = |p: &Path| fs::read(p.join("losses.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn resume_continues_the_same_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ring_config(dir.path(), 10, 4);
    let full = dir.path().join("full");
    ok(&["train", "--config", s(&cfg), "--out", s(&full)]);

    // Resume into a copy of the run directory: the loss file is rebuilt byte for byte.
    let copy = dir.path().join("copy");
    fs::create_dir_all(copy.join("checkpoints")).unwrap();
    fs::copy(full.join("losses.csv"), copy.join("losses.csv")).unwrap();
    let ckpt = full.join("checkpoints/iter_000004.ckpt");
    let before = fs::read(&ckpt).unwrap();
    ok(&["train", "--config", s(&cfg), "--out", s(&copy), "--resume", s(&ckpt)]);
    assert_eq!(fs::read(full.join("losses.csv")).unwrap(), fs::read(copy.join("losses.csv")).unwrap());
    assert_eq!(fs::read(&ckpt).unwrap(), before, "input checkpoint was modified");

    // Into a fresh directory only the remaining rows appear.
    let fresh = dir.path().join("fresh");
    ok(&["train", "--config", s(&cfg), "--out", s(&fresh), "--resume", s(&ckpt)]);
    let tail: Vec<String> = fs::read_to_string(full.join("losses.csv")).unwrap().lines().skip(5).map(String::from).collect();
    let rest: Vec<String> = fs::read_to_string(fresh.join("losses.csv")).unwrap().lines().skip(1).map(String::from).collect();
    assert_eq!(rest, tail);
    let a = GanState::from_checkpoint(&Checkpoint::load(&full.join("final.ckpt")).unwrap()).unwrap();
    let b = GanState::from_checkpoint(&Checkpoint::load(&fresh.join("final.ckpt")).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn invalid_or_incompatible_inputs_fail() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"schema_version": 1, "gan": {}, "extra": true}"#).unwrap();
    let err = fails(&["train", "--config", s(&bad), "--out", s(&dir.path().join("x"))]);
    assert!(err.contains("schema"), "{err}");

    let ring = ring_config(dir.path(), 2, 0);
    assert!(fails(&["train", "--config", s(&ring), "--pi", "1.0", "--out", s(&dir.path().join("y"))]).contains("pi"));
    let conv = conv_config(dir.path(), 1);
    let conv_run = dir.path().join("conv");
    ok(&["train", "--config", s(&conv), "--out", s(&conv_run)]);
    let err = fails(&["train", "--config", s(&ring), "--out", s(&dir.path().join("z")), "--resume", s(&conv_run.join("final.ckpt"))]);
    assert!(err.contains("different network layouts"), "{err}");

    let mut bytes = fs::read(conv_run.join("final.ckpt")).unwrap();
    bytes[9] = 7;
    let broken = dir.path().join("v7.ckpt");
    fs::write(&broken, bytes).unwrap();
    let err = fails(&["train", "--config", s(&conv), "--out", s(&dir.path().join("w")), "--resume", s(&broken)]);
    assert!(err.contains("version"), "{err}");
}

#[test]
fn conv_run_writes_six_by_six_grids() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = conv_config(dir.path(), 2);
    let out = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(list(&out.join("samples")), ["final.pgm", "iter_000002.pgm"]);
    let grid = GrayImage::load_pgm(&out.join("samples/final.pgm")).unwrap();
    // Six 8-pixel tiles with 2-pixel gutters and border.
    assert_eq!((grid.width(), grid.height()), (6 * 8 + 7 * 2, 6 * 8 + 7 * 2));
}

/// Checkpoint of an untrained tiny conv model plus a matching image dataset.
fn conv_fixture(dir: &Path) -> (PathBuf, LabeledDataset) {
    let cfg = conv_config(dir, 0);
    let run = dir.join("conv0");
    ok(&["train", "--config", s(&cfg), "--out", s(&run)]);
    let ds = generate_glyph_dataset(&tiny_glyphs(), Split::Evaluation).unwrap();
    (run.join("final.ckpt"), ds)
}

#[test]
fn retrieval_on_duplicated_corpus_is_perfect_at_rank_one() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, ds) = conv_fixture(dir.path());
    let twice: Vec<usize> = (0..ds.len()).flat_map(|i| [i, i]).collect();
    let dup = ds.subset(&twice).unwrap();
    let path = dir.path().join("dup.pigands");
    save_dataset(&dup, &path).unwrap();
    let out = dir.path().join("eval");
    ok(&["eval", "--checkpoint", s(&ckpt), "--dataset", s(&path), "--task", "retrieval", "--out", s(&out), "--k", "3"]);
    let csv = fs::read_to_string(out.join("retrieval.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "rank,accuracy");
    assert_eq!(lines[1], "1,1.0");
    assert_eq!(lines.len(), 4);
    let mosaics: Vec<String> = list(&out).into_iter().filter(|n| n.ends_with(".pgm")).collect();
    assert_eq!(mosaics.len(), 8);
    let m = GrayImage::load_pgm(&out.join(&mosaics[0])).unwrap();
    assert_eq!((m.width(), m.height()), (10 * 8 + 11 * 2, 8 + 2 * 2));
}

#[test]
fn oneshot_with_a_single_class_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, ds) = conv_fixture(dir.path());
    let one: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels()[i] == 0).collect();
    let single = LabeledDataset::new(ds.subset(&one).unwrap().samples().clone(), vec![0; one.len()], None, 1, Split::Evaluation).unwrap();
    let path = dir.path().join("one.pigands");
    save_dataset(&single, &path).unwrap();
    let out = dir.path().join("eval");
    ok(&["eval", "--checkpoint", s(&ckpt), "--dataset", s(&path), "--task", "oneshot", "--out", s(&out)]);
    assert_eq!(fs::read_to_string(out.join("oneshot.csv")).unwrap(), "method,accuracy\nnearest_neighbor,1.0\n");

    let full = dir.path().join("full.pigands");
    save_dataset(&ds, &full).unwrap();
    let mut opts = EvalOptions::new(EvalTask::Oneshot, out.clone());
    opts.checkpoint = Some(ckpt);
    opts.dataset = Some(full);
    match cmd_eval(&opts).unwrap() {
        EvalReport::OneShot(s) => {
            assert!((0.0..=1.0).contains(&s.nearest_neighbor));
            assert!(s.linear.is_some());
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn eval_reports_shape_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, _) = conv_fixture(dir.path());
    let ring = dir.path().join("ring.pigands");
    ok(&["data", "make-mixture", "--count", "50", "--out", s(&ring)]);
    let err = fails(&["eval", "--checkpoint", s(&ckpt), "--dataset", s(&ring), "--task", "retrieval", "--out", s(&dir.path().join("e"))]);
    assert!(err.contains("[2]") && err.contains("[1, 8, 8]"), "{err}");
}

#[test]
fn modes_on_mixture_samples_cover_all_components() {
    let dir = tempfile::tempdir().unwrap();
    let ring = dir.path().join("ring.pigands");
    ok(&["data", "make-mixture", "--count", "4000", "--seed", "3", "--out", s(&ring)]);
    let before = fs::read(&ring).unwrap();
    let out = dir.path().join("modes");
    ok(&["eval", "--dataset", s(&ring), "--task", "modes", "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("modes.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(csv.lines().next(), Some("pi,kl_pq,kl_qp,modes_covered,hq_fraction"));
    assert_eq!(row[0], "");
    assert_eq!(row[3], "8");
    assert!(row[1].parse::<f64>().unwrap() < 0.1);
    assert_eq!(fs::read(&ring).unwrap(), before);

    let cfg = ring_config(dir.path(), 3, 0);
    let run = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out", s(&run)]);
    ok(&["eval", "--checkpoint", s(&run.join("final.ckpt")), "--task", "modes", "--out", s(&out), "--samples", "500"]);
    let csv = fs::read_to_string(out.join("modes.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("0.3,"));
}

#[test]
fn overfit_pairs_generated_samples_with_neighbors() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, ds) = conv_fixture(dir.path());
    let path = dir.path().join("ds.pigands");
    save_dataset(&ds, &path).unwrap();
    let out = dir.path().join("over");
    ok(&["eval", "--checkpoint", s(&ckpt), "--dataset", s(&path), "--task", "overfit", "--out", s(&out), "--samples", "5"]);
    let csv = fs::read_to_string(out.join("overfit.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    let m = GrayImage::load_pgm(&out.join("overfit.pgm")).unwrap();
    assert_eq!((m.width(), m.height()), (5 * 8 + 6 * 2, 2 * 8 + 3 * 2));
}

fn generate_direct(ckpt: &Path, z: &[f64]) -> Tensor {
    let c = Checkpoint::load(ckpt).unwrap();
    let g = &c.network("generator").unwrap().network;
    g.forward(&Tensor::new(vec![1, z.len()], z.to_vec()).unwrap(), Mode::Infer).unwrap().0
}

#[test]
fn interpolation_endpoints_and_strips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = conv_config(dir.path(), 3);
    let run = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out", s(&run)]);
    let ckpt = run.join("final.ckpt");

    for mode in [InterpMode::Lerp, InterpMode::Slerp] {
        let opts = InterpOptions { checkpoint: ckpt.clone(), mode, steps: 2, seed: 4, equal_norm: false, out: dir.path().join("two.pgm") };
        let report = cmd_interp(&opts).unwrap();
        assert_eq!(report.outputs.len(), 2);
        let z = sample_prior(4, 2, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(report.outputs[0], generate_direct(&ckpt, z.sample(0)));
        assert_eq!(report.outputs[1], generate_direct(&ckpt, z.sample(1)));
    }

    let strip = dir.path().join("slerp.pgm");
    let stdout = ok(&["interp", "--checkpoint", s(&ckpt), "--mode", "slerp", "--equal-norm", "--out", s(&strip)]);
    assert!(stdout.contains("endpoints_match true"));
    let img = GrayImage::load_pgm(&strip).unwrap();
    assert_eq!((img.width(), img.height()), (9 * 8 + 10 * 2, 8 + 2 * 2));
    let opts = InterpOptions { checkpoint: ckpt.clone(), mode: InterpMode::Slerp, steps: 9, seed: 0, equal_norm: true, out: strip };
    let report = cmd_interp(&opts).unwrap();
    assert!(report.max_norm_drift < 1e-9, "{}", report.max_norm_drift);

    ok(&["interp", "--checkpoint", s(&ckpt), "--mode", "lerp", "--out", s(&dir.path().join("lerp.pgm"))]);
    assert!(fails(&["interp", "--checkpoint", s(&ckpt), "--steps", "1", "--out", s(&dir.path().join("x.pgm"))]).contains("at least 2"));
}

#[test]
fn divergence_tables() {
    let out = ok(&["divergence", "--p", "0.3,0.7", "--q", "0.3,0.7", "--pis", "0.2,0.5"]);
    let rows: Vec<Vec<&str>> = out.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(out.lines().next(), Some("pair,pi,kl_pq,kl_qp,js_pi,constant,c_g,identity_residual,flag"));
    for r in &rows {
        assert_eq!(r[4], "0.0");
        assert!((r[5].parse::<f64>().unwrap() - r[6].parse::<f64>().unwrap()).abs() < 1e-15);
        assert_eq!(r[8], "ok");
    }
    let half: f64 = rows[1][6].parse().unwrap();
    assert!((half + std::f64::consts::LN_2).abs() < 1e-15);

    let rows = divergence_rows(&DivergenceOptions {
        source: PairSource::Random { pairs: 20, support: 6, seed: 1 },
        pis: None,
        limit: None,
        out: None,
    })
    .unwrap();
    assert_eq!(rows.len(), 100);
    assert!(rows.iter().all(|r| r.residual < 1e-10 && r.flag() == "ok"));

    // KL[Q || P] is infinite here, so the limit toward one is flagged rather than fatal.
    let out = ok(&["divergence", "--p", "1,0", "--q", "0.5,0.5", "--limit", "one"]);
    assert_eq!(out.lines().count(), 4);
    assert!(out.lines().skip(1).all(|l| l.contains(",infinite_kl,")));
    let rows = divergence_rows(&DivergenceOptions {
        source: PairSource::Exact { p: vec![0.2, 0.8], q: vec![0.6, 0.4] },
        pis: None,
        limit: Some(LimitArg::Zero),
        out: None,
    })
    .unwrap();
    let gaps: Vec<f64> = rows.iter().map(|r| r.limit.as_ref().unwrap().gap).collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");

    assert!(!pigan(&["divergence", "--p", "0.5,0.6", "--q", "0.5,0.5"]).status.success());
}

#[test]
fn divergence_from_sample_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.pigands"), dir.path().join("b.pigands"));
    ok(&["data", "make-mixture", "--count", "500", "--seed", "1", "--out", s(&a)]);
    ok(&["data", "make-mixture", "--count", "500", "--seed", "2", "--out", s(&b)]);
    let out = ok(&["divergence", "--samples-p", s(&a), "--samples-q", s(&b), "--grid", "16", "--pis", "0.5"]);
    let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    assert!(row[2].parse::<f64>().unwrap() > 0.0);
    assert_eq!(row[8], "ok");
}

#[test]
fn data_commands_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let glyphs = dir.path().join("glyphs.pigands");
    ok(&["data", "make-glyphs", "--out", s(&glyphs)]);
    let info = ok(&["data", "info", "--dataset", s(&glyphs)]);
    assert!(info.contains("split: background"));
    assert!(info.contains("samples: 800"));
    assert!(info.contains("classes: 40"));
    assert!(info.contains("per_class: min 20 max 20"));
    let ds = load_dataset(&glyphs).unwrap();
    assert_eq!(ds.class_histogram(), vec![20; 40]);

    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"evaluation_classes": 5, "examples_per_class": 3}"#).unwrap();
    let eval = dir.path().join("eval.pigands");
    ok(&["data", "make-glyphs", "--spec", s(&spec), "--split", "evaluation", "--out", s(&eval)]);
    assert!(ok(&["data", "info", "--dataset", s(&eval)]).contains("samples: 15"));

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    fails(&["data", "ingest-pgm", "--dir", s(&empty), "--out", s(&dir.path().join("none.pigands"))]);

    let tree = dir.path().join("tree");
    for (class, v) in [("a", 0.2), ("b", 0.9)] {
        fs::create_dir_all(tree.join(class)).unwrap();
        for i in 0..2 {
            GrayImage::new(4, 4, vec![v; 16]).unwrap().save_pgm(&tree.join(class).join(format!("{i}.pgm"))).unwrap();
        }
    }
    let ingested = dir.path().join("ingested.pigands");
    ok(&["data", "ingest-pgm", "--dir", s(&tree), "--size", "8", "--out", s(&ingested)]);
    let ds = load_dataset(&ingested).unwrap();
    assert_eq!(ds.sample_shape(), &[1, 8, 8]);
    assert_eq!(ds.labels(), &[0, 0, 1, 1]);
}

#[test]
fn gradcheck_command_passes_on_a_small_budget() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("grad.csv");
    ok(&["gradcheck", "--latent", "4", "--coordinates", "60", "--out", s(&csv)]);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 13 + 4);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",pass")));
}
