use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pancal::io;

fn pancal(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pancal"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .env_remove("PANCAL_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = pancal(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn value_after(text: &str, key: &str) -> f64 {
    let line = text.lines().find(|l| l.starts_with(key)).unwrap_or_else(|| panic!("no {key:?} in {text}"));
    line[key.len()..].trim().split_whitespace().next().unwrap().parse().unwrap()
}

#[test]
fn synth_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok(a.path(), &["--seed", "7", "synth", "--panos", "10"]);
    ok(b.path(), &["--seed", "7", "synth", "--panos", "10"]);
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert!(fa.contains_key("truth.json") && fa.contains_key("matches.txt"));
    assert_eq!(fa, fb);
    let spec = io::read_scene_spec(&a.path().join("scene_spec.json")).unwrap();
    assert_eq!((spec.radius_m, spec.seed, spec.n_panos), (40.0, 7, 10));
}

#[test]
fn synth_rejects_single_panorama() {
    let d = tempfile::tempdir().unwrap();
    let out = pancal(d.path(), &["synth", "--panos", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("N ≥ 2"));
    assert!(out.stdout.is_empty());
}

#[test]
fn usage_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(pancal(d.path(), &["synth", "--bogus"]).status.code(), Some(2));
    assert_eq!(pancal(d.path(), &["frobnicate"]).status.code(), Some(2));

    let missing = d.path().join("nowhere.txt");
    ok(d.path(), &["synth", "--panos", "3", "--points", "400"]);
    let out = pancal(d.path(), &["reconstruct", "--matches", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.txt"));

    let empty = tempfile::tempdir().unwrap();
    let out = pancal(empty.path(), &["eval"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("truth.json"));
}

#[test]
fn help_lists_defaults() {
    let d = tempfile::tempdir().unwrap();
    let help = ok(d.path(), &["reconstruct", "--help"]);
    assert!(help.contains("[default: 0]"), "{help}");
    assert!(help.contains("[default: soft]"), "{help}");
    assert!(help.contains("PANCAL_THREADS"), "{help}");
}

#[test]
fn constraint_can_be_disabled() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["synth", "--panos", "3", "--points", "600"]);
    let s = ok(d.path(), &["reconstruct", "--no-pano-constraint"]);
    assert!(s.contains("panoramic constraint: disabled"), "{s}");
    assert!(d.path().join("reconstruction_summary.json").is_file());
    let s = ok(d.path(), &["reconstruct", "--pano-mode", "hard"]);
    assert!(s.contains("panoramic constraint: hard"), "{s}");
}

fn run_pipeline(dir: &Path, threads: &str) -> BTreeMap<String, String> {
    let t = ["--threads", threads];
    let mut out = BTreeMap::new();
    for stage in ["synth", "reconstruct", "georegister", "fit-plane", "localize", "measure", "speed", "heatmap", "eval"] {
        let mut args = t.to_vec();
        args.push(stage);
        let text = ok(dir, &args).replace(dir.to_str().unwrap(), "<dir>");
        out.insert(stage.to_string(), text);
    }
    out
}

#[test]
fn noiseless_pipeline_is_exact_and_thread_independent() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let sa = run_pipeline(a.path(), "1");
    let sb = run_pipeline(b.path(), "4");

    assert!(value_after(&sa["reconstruct"], "rms reprojection (px):") < 1e-6, "{}", sa["reconstruct"]);
    assert!(sa["reconstruct"].contains("registered views: 120/120"));
    let measure_row = sa["measure"].lines().last().unwrap();
    assert_eq!(measure_row.split_whitespace().collect::<Vec<_>>(), ["query", "0.00", "0.00", "0.00"]);
    assert!(sa["speed"].contains("15.0 m/s (54.0 km/h)"), "{}", sa["speed"]);
    assert!(sa["eval"].contains("center error (m)"));

    let manifest = io::read_manifest(&a.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.outputs.len(), 4);

    assert_eq!(sa, sb);
    assert_eq!(files(a.path()), files(b.path()));
}

#[test]
fn sweep_emits_one_row_per_count() {
    let d = tempfile::tempdir().unwrap();
    let s = ok(d.path(), &["sweep-panos", "--min", "2", "--max", "10", "--points", "600"]);
    let rows = io::read_sweep_csv(&d.path().join("sweep.csv")).unwrap();
    assert_eq!(rows.iter().map(|r| r.n_panos).collect::<Vec<_>>(), (2..=10).collect::<Vec<_>>());
    let body: Vec<&str> = s.lines().skip(2).collect();
    assert_eq!(body.len(), 18);
    assert_eq!(body.iter().filter(|l| l.split_whitespace().nth(1) == Some("with")).count(), 9);
}
