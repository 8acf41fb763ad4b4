mod common;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use common::*;
use tempfile::tempdir;
use tvmerge_core::grid::{
    expand_grid, run_grid, select_expert_subset, Executor, ExperimentRecord, GridConfig, MergeExecutor, RecordStatus,
    RunDir, RunOptions,
};
use tvmerge_core::lab::{Family, FamilySpec};
use tvmerge_core::merge::{MethodKind, Merger};
use tvmerge_core::store::{checkpoint_hash, iter_tensors, open_checkpoint};

fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/full_grid.json")
}

#[test]
fn full_config_expands_to_384() {
    let config = GridConfig::load(config_path()).unwrap();
    assert_eq!(config.record_count(), 384);
    let records = expand_grid(&config).unwrap();
    assert_eq!(records.len(), 2 * 4 * 4 * 4 * 3);
    let unique: std::collections::HashSet<_> = records.iter().map(|r| &r.hash).collect();
    assert_eq!(unique.len(), 384);
}

#[test]
fn selection_depends_only_on_seed_and_count() {
    let config = GridConfig::load(config_path()).unwrap();
    let records = expand_grid(&config).unwrap();
    let mut by_key: HashMap<(u64, usize), &Vec<String>> = HashMap::new();
    for r in &records {
        let expected = by_key.entry((r.seed, r.n_experts)).or_insert(&r.selected_categories);
        assert_eq!(*expected, &r.selected_categories, "{} {} {}", r.base_model, r.size, r.method);
        assert_eq!(
            &r.selected_categories,
            &select_expert_subset(r.seed, r.n_experts, &config.category_pool).unwrap()
        );
    }
    for seed in &config.seeds {
        let eight = &by_key[&(*seed, 8)];
        for n in [2, 4, 6] {
            assert_eq!(by_key[&(*seed, n)][..], eight[..n]);
        }
    }
}

#[test]
fn product_of_axes_for_small_grid() {
    let mut config = GridConfig::load(config_path()).unwrap();
    config.base_models.truncate(1);
    config.sizes.truncate(1);
    config.expert_counts = vec![2, 4];
    assert_eq!(expand_grid(&config).unwrap().len(), 24);
}

/// Writes `<root>/pt/1k/{base, experts/<cat>}` for a synthetic family of
/// ~1k parameters with one expert per pool category.
fn synthetic_checkpoints(root: &Path, pool: &[String]) {
    let family = Family::new(FamilySpec {
        rng_seed: 4,
        tensor_shapes: vec![vec![24, 32], vec![200], vec![32]],
        n_experts: pool.len(),
        delta_scale: 0.05,
        delta_sparsity: 0.5,
        conflict_rate: 0.3,
        dtype: tvmerge_core::Dtype::F32,
    })
    .unwrap();
    let dir = root.join("pt").join("1k");
    family.write_base(dir.join("base"), "pt/1k/base").unwrap();
    for (i, cat) in pool.iter().enumerate() {
        family
            .write_expert(i, dir.join("experts").join(cat), &format!("pt/1k/{cat}"))
            .unwrap();
    }
}

fn small_config(root: &Path) -> GridConfig {
    GridConfig {
        base_models: vec!["pt".into()],
        sizes: vec!["1k".into()],
        methods: MethodKind::ALL.to_vec(),
        expert_counts: vec![2, 4],
        seeds: vec![0, 1, 2],
        category_pool: (0..4).map(|i| format!("cat{i}")).collect(),
        checkpoint_root: root.to_path_buf(),
        hyperparameters: Default::default(),
        output_dtype: None,
    }
}

#[test]
fn run_matches_direct_merges_and_resumes() {
    let ckpt = tempdir().unwrap();
    let run = tempdir().unwrap();
    let config = small_config(ckpt.path());
    synthetic_checkpoints(ckpt.path(), &config.category_pool);
    let records = expand_grid(&config).unwrap();
    assert_eq!(records.len(), 24);

    let first = run_grid(&records, &MergeExecutor::default(), run.path(), &RunOptions { resume: false, workers: 2 }).unwrap();
    assert_eq!((first.executed, first.skipped), (24, 0));
    assert_eq!((first.summary.completed, first.summary.failed), (24, 0));

    let dir = RunDir::new(run.path());
    for record in &records {
        let out = open_checkpoint(dir.output_path(&record.hash)).unwrap();
        assert_eq!(out.model_id, record.output_id);
        let plan = record.plan().unwrap();
        let base = open_checkpoint(plan.base.as_ref().unwrap()).unwrap();
        let experts: Vec<_> = plan.experts.iter().map(|p| open_checkpoint(p).unwrap()).collect();
        let direct = Merger::new(plan.method, Some(&base), &experts).unwrap().collect_all().unwrap();
        let stored: Vec<_> = iter_tensors(&out).collect::<Result<_, _>>().unwrap();
        assert_eq!(bits(&stored), bits(&direct), "{}", record.hash);
        let on_disk = dir.read_record(&record.hash).unwrap().unwrap();
        assert_eq!(on_disk.status, RecordStatus::Completed);
        assert_eq!(on_disk.output_hash.as_deref(), Some(checkpoint_hash(&out).unwrap().as_str()));
        assert!(on_disk.started_at_ms.unwrap() <= on_disk.finished_at_ms.unwrap());
    }

    let again = run_grid(&records, &MergeExecutor::default(), run.path(), &RunOptions { resume: true, workers: 1 }).unwrap();
    assert_eq!((again.executed, again.skipped), (0, 24));
    assert_eq!(again.summary, first.summary);

    let rerun = run_grid(&records, &MergeExecutor::default(), run.path(), &RunOptions { resume: false, workers: 1 }).unwrap();
    assert_eq!(rerun.executed, 24);
    assert_eq!(rerun.summary, first.summary);
}

#[test]
fn one_bad_checkpoint_fails_one_record() {
    let ckpt = tempdir().unwrap();
    let run = tempdir().unwrap();
    let mut config = small_config(ckpt.path());
    synthetic_checkpoints(ckpt.path(), &config.category_pool);
    config.methods = vec![MethodKind::Average];
    config.expert_counts = vec![2];
    // Find three seeds under which some expert is used by exactly one record.
    let (records, victim) = (0..100u64)
        .find_map(|s0| {
            config.seeds = vec![s0, s0 + 1, s0 + 2];
            let records = expand_grid(&config).unwrap();
            let mut uses: HashMap<String, usize> = HashMap::new();
            for r in &records {
                for c in &r.selected_categories {
                    *uses.entry(c.clone()).or_default() += 1;
                }
            }
            let victim = uses.into_iter().find(|(_, n)| *n == 1)?.0;
            Some((records, victim))
        })
        .expect("some seed window uses a category once");
    let shard = ckpt.path().join("pt/1k/experts").join(&victim).join("shard-00000.bin");
    std::fs::remove_file(shard).unwrap();

    let outcome = run_grid(&records, &MergeExecutor::default(), run.path(), &RunOptions::default()).unwrap();
    assert_eq!(outcome.summary.failed, 1);
    assert_eq!(outcome.summary.completed, records.len() - 1);
    let failure = outcome.summary.failures().next().unwrap();
    assert!(failure.error.as_deref().unwrap().contains("shard path missing"));
    assert!(!RunDir::new(run.path()).output_path(&failure.hash).exists());

    // The failed record is retried on resume; the others are not.
    let again = run_grid(&records, &MergeExecutor::default(), run.path(), &RunOptions { resume: true, workers: 1 }).unwrap();
    assert_eq!((again.executed, again.skipped), (1, records.len() - 1));
}

struct Counting(std::sync::atomic::AtomicUsize);

impl Executor for Counting {
    fn execute(&self, record: &ExperimentRecord, output_dir: &Path) -> tvmerge_core::Result<String> {
        self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        std::fs::create_dir_all(output_dir).unwrap();
        std::fs::write(output_dir.join("manifest.json"), b"{}").unwrap();
        Ok(record.hash.clone())
    }
}

#[test]
fn custom_executor_and_summary_file() {
    let run = tempdir().unwrap();
    let config = GridConfig::load(config_path()).unwrap();
    let records = expand_grid(&config).unwrap();
    let exec = Counting(Default::default());
    let outcome = run_grid(&records, &exec, run.path(), &RunOptions { resume: true, workers: 0 }).unwrap();
    assert_eq!(outcome.executed, 384);
    let again = run_grid(&records, &exec, run.path(), &RunOptions { resume: true, workers: 3 }).unwrap();
    assert_eq!(again.executed, 0);
    assert_eq!(exec.0.load(std::sync::atomic::Ordering::SeqCst), 384);
    let stored: tvmerge_core::grid::RunSummary =
        serde_json::from_slice(&std::fs::read(run.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(stored, again.summary);
    assert_eq!(RunDir::new(run.path()).load_records().unwrap().len(), 384);
}
