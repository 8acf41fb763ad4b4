use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plan::{ExperimentRecord, RecordStatus};
use crate::error::{Error, Result};
use crate::merge::Merger;
use crate::store::{checkpoint_hash, open_checkpoint, DEFAULT_MAX_SHARD_BYTES, MANIFEST_FILE};

/// Runs one record, writing the merged checkpoint to `output_dir`, and
/// returns the output checkpoint hash.
pub trait Executor: Sync {
    fn execute(&self, record: &ExperimentRecord, output_dir: &Path) -> Result<String>;
}

/// Executes records with the streaming merge engine.
#[derive(Debug, Clone, Copy)]
pub struct MergeExecutor {
    pub max_shard_bytes: u64,
}

impl Default for MergeExecutor {
    fn default() -> Self {
        Self {
            max_shard_bytes: DEFAULT_MAX_SHARD_BYTES,
        }
    }
}

impl Executor for MergeExecutor {
    fn execute(&self, record: &ExperimentRecord, output_dir: &Path) -> Result<String> {
        let plan = record.plan()?;
        let base = plan.base.as_ref().map(open_checkpoint).transpose()?;
        let experts = plan.experts.iter().map(open_checkpoint).collect::<Result<Vec<_>>>()?;
        let merger = Merger::new(plan.method, base.as_ref(), &experts)?;
        let manifest = merger.write(output_dir, plan.output_dtype, self.max_shard_bytes, &record.output_id)?;
        checkpoint_hash(&manifest)
    }
}

/// Directory layout of a grid run.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records_dir(&self) -> PathBuf {
        self.root.join("records")
    }

    pub fn record_path(&self, hash: &str) -> PathBuf {
        self.records_dir().join(format!("{hash}.json"))
    }

    pub fn output_path(&self, hash: &str) -> PathBuf {
        self.root.join("checkpoints").join(hash)
    }

    pub fn summary_path(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    pub fn read_record(&self, hash: &str) -> Result<Option<ExperimentRecord>> {
        let path = self.record_path(hash);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| Error::json(format!("parsing record {}", path.display()), e)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(format!("reading record {}", path.display()), e)),
        }
    }

    /// Every record file in the run, ordered by hash.
    pub fn load_records(&self) -> Result<Vec<ExperimentRecord>> {
        let dir = self.records_dir();
        let entries = fs::read_dir(&dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
        let mut paths = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?.path();
            if path.extension().is_some_and(|x| x == "json") {
                paths.push(path);
            }
        }
        paths.sort();
        paths
            .iter()
            .map(|p| {
                let bytes = fs::read(p).map_err(|e| Error::io(format!("reading record {}", p.display()), e))?;
                serde_json::from_slice(&bytes).map_err(|e| Error::json(format!("parsing record {}", p.display()), e))
            })
            .collect()
    }

    pub fn write_record(&self, record: &ExperimentRecord) -> Result<()> {
        write_json_atomic(&self.record_path(&record.hash), record)
    }
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value).expect("record serialization is infallible");
    bytes.push(b'\n');
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming {}", tmp.display()), e))
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Skip records whose stored record is completed under the same hash.
    pub resume: bool,
    /// Records executed concurrently; 0 means one per available CPU.
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            resume: false,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub hash: String,
    pub output_id: String,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Outcome of a grid run, in plan order. Contains no timestamps, so a
/// resumed re-run of a finished grid yields an identical summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub planned: usize,
    pub completed: usize,
    pub failed: usize,
    pub records: Vec<RecordSummary>,
}

impl RunSummary {
    pub fn failures(&self) -> impl Iterator<Item = &RecordSummary> {
        self.records.iter().filter(|r| r.status == RecordStatus::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub summary: RunSummary,
    /// Records the executor was invoked on.
    pub executed: usize,
    /// Records skipped because a completed result already existed.
    pub skipped: usize,
}

fn run_one(record: &ExperimentRecord, executor: &dyn Executor, dir: &RunDir, resume: bool) -> Result<(ExperimentRecord, bool)> {
    let output = dir.output_path(&record.hash);
    if resume {
        if let Some(stored) = dir.read_record(&record.hash)? {
            if stored.status == RecordStatus::Completed && stored.hash == record.hash && output.join(MANIFEST_FILE).is_file() {
                log::debug!("skipping completed record {}", record.hash);
                return Ok((stored, false));
            }
        }
    }
    let mut done = record.clone();
    done.started_at_ms = Some(now_ms());
    log::info!(
        "merging {} {} {} n={} seed={}",
        record.base_model,
        record.size,
        record.method,
        record.n_experts,
        record.seed
    );
    match executor.execute(record, &output) {
        Ok(hash) => {
            done.status = RecordStatus::Completed;
            done.output_hash = Some(hash);
        }
        Err(e) => {
            log::warn!("record {} failed: {e}", record.hash);
            done.status = RecordStatus::Failed;
            done.error = Some(e.to_string());
            let _ = fs::remove_dir_all(&output);
        }
    }
    done.finished_at_ms = Some(now_ms());
    dir.write_record(&done)?;
    Ok((done, true))
}

/// Executes every record, writing `records/<hash>.json`, outputs under
/// `checkpoints/<hash>` and `summary.json` in `run_dir`. A failing record is
/// recorded and does not stop the others; only failures to write the run
/// directory itself abort the run.
pub fn run_grid(
    records: &[ExperimentRecord],
    executor: &dyn Executor,
    run_dir: impl AsRef<Path>,
    options: &RunOptions,
) -> Result<RunOutcome> {
    let dir = RunDir::new(run_dir.as_ref());
    fs::create_dir_all(dir.records_dir()).map_err(|e| Error::io(format!("creating {}", dir.records_dir().display()), e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<(ExperimentRecord, bool)>> = pool.install(|| {
        records
            .par_iter()
            .map(|r| run_one(r, executor, &dir, options.resume))
            .collect()
    });

    let mut summaries = Vec::with_capacity(records.len());
    let (mut executed, mut skipped, mut completed, mut failed) = (0, 0, 0, 0);
    for result in results {
        let (record, ran) = result?;
        if ran {
            executed += 1;
        } else {
            skipped += 1;
        }
        match record.status {
            RecordStatus::Completed => completed += 1,
            RecordStatus::Failed => failed += 1,
            RecordStatus::Planned => {}
        }
        summaries.push(RecordSummary {
            hash: record.hash,
            output_id: record.output_id,
            status: record.status,
            output_hash: record.output_hash,
            error: record.error,
        });
    }
    let summary = RunSummary {
        planned: records.len(),
        completed,
        failed,
        records: summaries,
    };
    write_json_atomic(&dir.summary_path(), &summary)?;
    Ok(RunOutcome {
        summary,
        executed,
        skipped,
    })
}
