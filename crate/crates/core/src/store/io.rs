use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::manifest::{CheckpointManifest, Layout, TensorMeta, MANIFEST_FILE};
use crate::dtype::Dtype;
use crate::error::{Error, Result};

/// Elements converted per IO chunk. Keeps conversion scratch independent of tensor size.
const CHUNK_ELEMS: usize = 16 * 1024;

pub const DEFAULT_MAX_SHARD_BYTES: u64 = 4 << 30;

/// A tensor held in the float32 compute representation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    pub meta: TensorMeta,
    pub values: Vec<f32>,
}

impl DenseTensor {
    /// Creates an `f32` tensor with an unplaced meta (shard 0, offset 0).
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        let name = name.into();
        if numel != values.len() {
            return Err(Error::StructureMismatch(format!(
                "tensor `{name}` has shape {shape:?} ({numel} elements) but {} values",
                values.len()
            )));
        }
        Ok(Self {
            meta: TensorMeta {
                name,
                dtype: Dtype::F32,
                byte_length: numel as u64 * 4,
                shape,
                shard_id: 0,
                byte_offset: 0,
            },
            values,
        })
    }

    /// One-dimensional tensor.
    pub fn vector(name: impl Into<String>, values: Vec<f32>) -> Self {
        let n = values.len();
        Self::new(name, vec![n], values).expect("1-D shape always matches")
    }

    pub fn name(&self) -> &str {
        &self.meta.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.meta.shape
    }

    /// Same tensor layout with the values replaced.
    pub fn with_values(&self, values: Vec<f32>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            meta: self.meta.clone(),
            values,
        }
    }
}

/// Reads one tensor, converting to `f32`. The shard is streamed in fixed-size
/// chunks so the only tensor-sized allocation is the returned buffer.
pub fn read_tensor(manifest: &CheckpointManifest, name: &str) -> Result<DenseTensor> {
    let meta = manifest
        .get(name)
        .ok_or_else(|| Error::UnknownTensor(name.to_string()))?;
    let expected = meta.expected_byte_length();
    if meta.byte_length != expected {
        return Err(Error::ByteLengthMismatch {
            name: meta.name.clone(),
            recorded: meta.byte_length,
            expected,
        });
    }
    let numel = meta.numel();
    let mut values = vec![0.0f32; numel];
    if numel > 0 {
        let path = &manifest.shard_paths[meta.shard_id];
        let ctx = || format!("reading `{}` from {}", meta.name, path.display());
        let mut file = File::open(path).map_err(|e| Error::io(ctx(), e))?;
        file.seek(SeekFrom::Start(meta.byte_offset))
            .map_err(|e| Error::io(ctx(), e))?;
        let elem = meta.dtype.size_bytes();
        let mut buf = vec![0u8; CHUNK_ELEMS * elem];
        for chunk in values.chunks_mut(CHUNK_ELEMS) {
            let bytes = &mut buf[..chunk.len() * elem];
            file.read_exact(bytes).map_err(|e| Error::io(ctx(), e))?;
            meta.dtype.decode_into(bytes, chunk);
        }
    }
    Ok(DenseTensor {
        meta: meta.clone(),
        values,
    })
}

fn shard_file_name(index: usize) -> String {
    format!("shard-{index:05}.bin")
}

fn is_shard_file_name(name: &str) -> bool {
    name.starts_with("shard-") && name.ends_with(".bin")
}

struct ShardSink {
    writer: BufWriter<File>,
    path: PathBuf,
    written: u64,
}

/// Writes tensors as a sharded checkpoint under `path`.
///
/// Tensors are packed greedily in arrival order: a new shard opens whenever
/// the next tensor would push the current one past `max_shard_bytes`. Tensors
/// are never split. `output_dtype` of `None` keeps each tensor's `meta.dtype`.
/// Only one tensor is resident at a time when `tensors` is a lazy iterator.
pub fn write_checkpoint<I>(
    tensors: I,
    output_dtype: Option<Dtype>,
    path: impl AsRef<Path>,
    max_shard_bytes: u64,
    model_id: &str,
) -> Result<CheckpointManifest>
where
    I: IntoIterator<Item = Result<DenseTensor>>,
{
    let root = path.as_ref();
    prepare_output_dir(root)?;

    let mut metas = Vec::new();
    let mut shard_paths = Vec::new();
    let mut seen = HashSet::new();
    let mut sink: Option<ShardSink> = None;
    let mut scratch = Vec::with_capacity(CHUNK_ELEMS * 4);

    for tensor in tensors {
        let tensor = tensor?;
        let name = tensor.meta.name.clone();
        if !seen.insert(name.clone()) {
            return Err(Error::DuplicateName(name));
        }
        let dtype = output_dtype.unwrap_or(tensor.meta.dtype);
        let size = tensor.values.len() as u64 * dtype.size_bytes() as u64;
        if size > max_shard_bytes {
            return Err(Error::ShardBudgetTooSmall {
                budget: max_shard_bytes,
                name,
                size,
            });
        }
        let needs_new = match &sink {
            None => true,
            Some(s) => s.written > 0 && s.written + size > max_shard_bytes,
        };
        if needs_new {
            if let Some(done) = sink.take() {
                finish_shard(done)?;
            }
            let p = root.join(shard_file_name(shard_paths.len()));
            let file = File::create(&p).map_err(|e| Error::io(format!("creating {}", p.display()), e))?;
            shard_paths.push(p.clone());
            sink = Some(ShardSink {
                writer: BufWriter::new(file),
                path: p,
                written: 0,
            });
        }
        let s = sink.as_mut().expect("shard sink is open");
        for chunk in tensor.values.chunks(CHUNK_ELEMS) {
            scratch.clear();
            dtype.encode_into(chunk, &mut scratch);
            s.writer
                .write_all(&scratch)
                .map_err(|e| Error::io(format!("writing {}", s.path.display()), e))?;
        }
        metas.push(TensorMeta {
            name,
            dtype,
            shape: tensor.meta.shape.clone(),
            shard_id: shard_paths.len() - 1,
            byte_offset: s.written,
            byte_length: size,
        });
        s.written += size;
    }
    if let Some(done) = sink.take() {
        finish_shard(done)?;
    }

    let manifest = CheckpointManifest::new(model_id, metas, shard_paths, root, Layout::Sharded)?;
    let manifest_path = root.join(MANIFEST_FILE);
    fs::write(&manifest_path, manifest.to_json_bytes())
        .map_err(|e| Error::io(format!("writing {}", manifest_path.display()), e))?;
    Ok(manifest)
}

fn finish_shard(mut sink: ShardSink) -> Result<()> {
    sink.writer
        .flush()
        .map_err(|e| Error::io(format!("flushing {}", sink.path.display()), e))
}

/// Creates `root` and removes a previous checkpoint's manifest and shards.
fn prepare_output_dir(root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(format!("creating {}", root.display()), e))?;
    let entries = fs::read_dir(root).map_err(|e| Error::io(format!("listing {}", root.display()), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("listing {}", root.display()), e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name == MANIFEST_FILE || is_shard_file_name(&name) {
            fs::remove_file(entry.path())
                .map_err(|e| Error::io(format!("removing {}", entry.path().display()), e))?;
        }
    }
    Ok(())
}

/// Lazily reads every tensor of a checkpoint in manifest (name) order.
pub fn iter_tensors(manifest: &CheckpointManifest) -> impl Iterator<Item = Result<DenseTensor>> + '_ {
    manifest.tensors.iter().map(move |t| read_tensor(manifest, &t.name))
}

/// SHA-256 over the serialized manifest followed by every shard's bytes.
/// Identical logical checkpoints hash identically.
pub fn checkpoint_hash(manifest: &CheckpointManifest) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(manifest.to_json_bytes());
    let mut buf = vec![0u8; 1 << 16];
    for path in &manifest.shard_paths {
        let mut file = File::open(path).map_err(|e| Error::io(format!("hashing {}", path.display()), e))?;
        loop {
            let n = file
                .read(&mut buf)
                .map_err(|e| Error::io(format!("hashing {}", path.display()), e))?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
        }
    }
    Ok(hex::encode(hasher.finalize()))
}
