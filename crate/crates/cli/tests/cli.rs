use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::tempdir;
use tvmerge_core::metrics::{fixture, read_reported_table};

fn tvmerge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvmerge"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert_eq!(o.status.code(), Some(0), "stdout:\n{}\nstderr:\n{}", stdout(o), stderr(o));
}

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_spec(dir: &Path, spec: &str) -> PathBuf {
    let path = dir.join("family.json");
    fs::write(&path, spec).unwrap();
    path
}

const SMALL_SPEC: &str = r#"{"rng_seed": 3, "tensor_shapes": [[16, 8], [40]], "n_experts": 3,
    "delta_scale": 0.05, "delta_sparsity": 0.5, "conflict_rate": 0.3}"#;

fn synth(dir: &Path, spec: &str) -> PathBuf {
    let spec = write_spec(dir, spec);
    let out = dir.join("family");
    let o = tvmerge(&["synth", "--spec", p(&spec), "--out-dir", p(&out)]);
    assert_ok(&o);
    assert!(stdout(&o).contains("expert\t"));
    out
}

#[test]
fn synth_merge_diff_round_trip() {
    let dir = tempdir().unwrap();
    let fam = synth(dir.path(), SMALL_SPEC);
    let recipe = dir.path().join("recipe.json");
    fs::write(
        &recipe,
        r#"{"method": "average", "experts": ["family/expert-0", "family/expert-1"], "output_path": "merged"}"#,
    )
    .unwrap();
    let o = tvmerge(&["merge", "--recipe", p(&recipe)]);
    assert_ok(&o);
    let hash = stdout(&o).trim().to_string();
    assert_eq!(hash.len(), 64);

    let merged = dir.path().join("merged");
    let o = tvmerge(&["inspect", p(&merged), "--hash", "--tensors"]);
    assert_ok(&o);
    let text = stdout(&o);
    assert!(text.contains("model_id\tmerged"));
    assert!(text.contains("parameters\t168"));
    assert!(text.contains(&format!("hash\t{hash}")));

    let provenance: serde_json::Value = serde_json::from_slice(&fs::read(merged.join("provenance.json")).unwrap()).unwrap();
    assert_eq!(provenance["output_hash"], hash.as_str());
    assert_eq!(provenance["recipe"]["method"], "average");
    assert_eq!(provenance["experts"].as_array().unwrap().len(), 2);
    assert_eq!(provenance["recipe_hash"].as_str().unwrap().len(), 64);

    // Same recipe and inputs give the same checkpoint hash.
    let again = tvmerge(&["merge", "--recipe", p(&recipe)]);
    assert_ok(&again);
    assert_eq!(stdout(&again).trim(), hash);

    let o = tvmerge(&[
        "diff",
        "--base",
        p(&fam.join("base")),
        "--expert",
        p(&fam.join("expert-0")),
        "--expert",
        p(&fam.join("expert-1")),
        "--stats",
    ]);
    assert_ok(&o);
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("expert-0\tt000\t128\t")), "{text}");
    assert!(text.lines().any(|l| l.starts_with("conflict_rate\t")));
}

#[test]
fn flags_override_the_recipe() {
    let dir = tempdir().unwrap();
    synth(dir.path(), SMALL_SPEC);
    let recipe = dir.path().join("recipe.json");
    fs::write(
        &recipe,
        r#"{"method": "task_arithmetic", "lambda": 1.0, "base": "family/base",
            "experts": ["family/expert-0", "family/expert-2"], "output_path": "merged"}"#,
    )
    .unwrap();
    let out = dir.path().join("other");
    let o = tvmerge(&["merge", "--recipe", p(&recipe), "--lambda", "0.5", "--output", p(&out), "--output-dtype", "bf16"]);
    assert_ok(&o);
    let provenance: serde_json::Value = serde_json::from_slice(&fs::read(out.join("provenance.json")).unwrap()).unwrap();
    assert_eq!(provenance["recipe"]["lambda"], 0.5);
    assert_eq!(provenance["recipe"]["output_dtype"], "bf16");
    assert!(provenance["base"]["hash"].is_string());
    assert!(!dir.path().join("merged").exists());
}

#[test]
fn invalid_recipes_exit_with_one() {
    let dir = tempdir().unwrap();
    synth(dir.path(), SMALL_SPEC);
    let recipe = dir.path().join("recipe.json");
    fs::write(
        &recipe,
        r#"{"method": "dare_ties", "drop_p": 1.0, "base": "family/base",
            "experts": ["family/expert-0"], "output_path": "merged"}"#,
    )
    .unwrap();
    let o = tvmerge(&["merge", "--recipe", p(&recipe)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("drop_p"), "{}", stderr(&o));

    let o = tvmerge(&["merge", "--recipe", p(&recipe), "--drop-p", "0.5", "--expert", p(&dir.path().join("nope"))]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let o = tvmerge(&["merge", "--method", "average", "--expert", p(&dir.path().join("family/expert-0"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("output"));

    let o = tvmerge(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn io_failures_exit_with_two() {
    let dir = tempdir().unwrap();
    synth(dir.path(), SMALL_SPEC);
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let o = tvmerge(&[
        "merge",
        "--method",
        "average",
        "--expert",
        p(&dir.path().join("family/expert-0")),
        "--output",
        p(&blocker.join("out")),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn diff_identity_and_mismatch() {
    let dir = tempdir().unwrap();
    let fam = synth(dir.path(), SMALL_SPEC);
    let base = fam.join("base");
    let o = tvmerge(&["diff", "--base", p(&base), "--expert", p(&base)]);
    assert_ok(&o);
    let text = stdout(&o);
    let norms: Vec<f64> = text.lines().skip(1).map(|l| l.split('\t').nth(3).unwrap().parse().unwrap()).collect();
    assert!(!norms.is_empty() && norms.iter().all(|l2| *l2 == 0.0), "{text}");

    let other = dir.path().join("other");
    fs::create_dir(&other).unwrap();
    let spec = write_spec(&other, &SMALL_SPEC.replace("[40]", "[41]"));
    let o = tvmerge(&["synth", "--spec", p(&spec), "--out-dir", p(&other.join("fam"))]);
    assert_ok(&o);
    let o = tvmerge(&["diff", "--base", p(&base), "--expert", p(&other.join("fam/expert-0"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("structure mismatch"));
}

#[test]
fn diff_reports_generated_conflict_rate() {
    let dir = tempdir().unwrap();
    let fam = synth(
        dir.path(),
        r#"{"rng_seed": 1, "tensor_shapes": [[1000, 1000]], "n_experts": 2,
            "delta_scale": 0.02, "delta_sparsity": 0.1, "conflict_rate": 0.5}"#,
    );
    let o = tvmerge(&[
        "diff",
        "--base",
        p(&fam.join("base")),
        "--expert",
        p(&fam.join("expert-0")),
        "--expert",
        p(&fam.join("expert-1")),
    ]);
    assert_ok(&o);
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("conflict_rate")).unwrap();
    let rate: f64 = line.split('\t').nth(1).unwrap().parse().unwrap();
    assert!((rate - 0.5).abs() <= 0.05, "{line}");
}

#[test]
fn grid_plan_lists_384_records() {
    let o = tvmerge(&["grid", "--config", p(&repo("configs/full_grid.json")), "--plan-only"]);
    assert_ok(&o);
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("planned\t384"));
    assert_eq!(text.lines().filter(|l| l.starts_with("record\t")).count(), 384);
}

#[test]
fn grid_runs_and_resumes() {
    let dir = tempdir().unwrap();
    let root = dir.path().join("ckpt");
    let pool = ["a", "b", "c"];
    let spec = write_spec(dir.path(), SMALL_SPEC);
    let out = dir.path().join("fam");
    assert_ok(&tvmerge(&["synth", "--spec", p(&spec), "--out-dir", p(&out)]));
    // Lay the family out as <root>/pt/s/{base, experts/<cat>}.
    let size_dir = root.join("pt/s");
    fs::create_dir_all(size_dir.join("experts")).unwrap();
    fs::rename(out.join("base"), size_dir.join("base")).unwrap();
    for (i, c) in pool.iter().enumerate() {
        fs::rename(out.join(format!("expert-{i}")), size_dir.join("experts").join(c)).unwrap();
    }
    let config = dir.path().join("grid.json");
    fs::write(
        &config,
        r#"{"base_models": ["pt"], "sizes": ["s"], "methods": ["average", "ties", "dare_ties"],
            "expert_counts": [2, 3], "seeds": [0, 1], "category_pool": ["a", "b", "c"],
            "checkpoint_root": "ckpt"}"#,
    )
    .unwrap();
    let run = dir.path().join("run");
    let o = Command::new(env!("CARGO_BIN_EXE_tvmerge"))
        .args(["grid", "--config", p(&config), "--run-dir", p(&run)])
        .env("TVMERGE_WORKERS", "2")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert_ok(&o);
    let text = stdout(&o);
    assert!(text.contains("planned\t12") && text.contains("completed\t12") && text.contains("executed\t12"), "{text}");
    let o = tvmerge(&["grid", "--config", p(&config), "--run-dir", p(&run), "--resume"]);
    assert_ok(&o);
    assert!(stdout(&o).contains("executed\t0"));
}

#[test]
fn report_reproduces_published_cell() {
    let dir = tempdir().unwrap();
    let table = repo("crates/core/fixtures/reported_tables.csv");
    let reported = read_reported_table(fs::File::open(&table).unwrap()).unwrap();
    let (records, scores) = fixture::synthesize_run(&reported, &[0, 1, 2]).unwrap();
    let run = dir.path().join("run");
    fixture::write_records(&run, &records).unwrap();
    let scores_path = dir.path().join("scores.csv");
    scores.write_csv(fs::File::create(&scores_path).unwrap()).unwrap();

    let normalized = dir.path().join("normalized.json");
    let o = tvmerge(&["report", "--run-dir", p(&run), "--scores", p(&scores_path), "--normalized", p(&normalized)]);
    assert_ok(&o);
    let md = stdout(&o);
    let section = md.split("### ").find(|s| s.starts_with("base-it (held_in)")).unwrap();
    let average = section.lines().find(|l| l.starts_with("| Average |")).unwrap();
    assert_eq!(average.split('|').nth(2).unwrap().trim(), "0.85", "{average}");
    assert!(normalized.is_file());

    let o = tvmerge(&["report", "--table", p(&table), "--format", "csv"]);
    assert_ok(&o);
    assert!(stdout(&o).lines().any(|l| l.starts_with("base-it,held_in,Average,0.85,")), "{}", stdout(&o));

    let o = tvmerge(&["report", "--table", p(&table), "--format", "html"]);
    assert_eq!(o.status.code(), Some(1));
}
