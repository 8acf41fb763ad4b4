use std::collections::HashMap;
use std::fs::{self, File};
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dtype::Dtype;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Location and layout of one tensor inside a checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    #[serde(rename = "shard")]
    pub shard_id: usize,
    #[serde(rename = "offset")]
    pub byte_offset: u64,
    #[serde(rename = "length")]
    pub byte_length: u64,
}

impl TensorMeta {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Byte length implied by shape and dtype.
    pub fn expected_byte_length(&self) -> u64 {
        self.numel() as u64 * self.dtype.size_bytes() as u64
    }
}

/// How the checkpoint is laid out on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// `manifest.json` plus headerless binary shards.
    Sharded,
    /// A single safetensors file.
    Safetensors,
}

/// Validated index of the tensors in a checkpoint. Holds no tensor data.
#[derive(Debug, Clone)]
pub struct CheckpointManifest {
    pub model_id: String,
    /// Sorted by name.
    pub tensors: Vec<TensorMeta>,
    /// Resolved shard file paths, indexed by `TensorMeta::shard_id`.
    pub shard_paths: Vec<PathBuf>,
    pub total_params: u64,
    root: PathBuf,
    layout: Layout,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    model_id: String,
    tensors: Vec<RawEntry>,
    shards: Vec<String>,
}

// dtype stays a string here so unknown tags surface as `Error::UnknownDtype`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    shard: usize,
    offset: u64,
    length: u64,
}

impl CheckpointManifest {
    /// Builds and validates a manifest. Tensors are re-ordered by name.
    pub fn new(
        model_id: impl Into<String>,
        mut tensors: Vec<TensorMeta>,
        shard_paths: Vec<PathBuf>,
        root: impl Into<PathBuf>,
        layout: Layout,
    ) -> Result<Self> {
        tensors.sort_by(|a, b| a.name.cmp(&b.name));
        let mut index = HashMap::with_capacity(tensors.len());
        for (i, t) in tensors.iter().enumerate() {
            if index.insert(t.name.clone(), i).is_some() {
                return Err(Error::DuplicateName(t.name.clone()));
            }
            if t.shard_id >= shard_paths.len() {
                return Err(Error::InvalidManifest(format!(
                    "tensor `{}` references shard {} but only {} shards are listed",
                    t.name,
                    t.shard_id,
                    shard_paths.len()
                )));
            }
            if t.byte_offset.checked_add(t.byte_length).is_none() {
                return Err(Error::InvalidManifest(format!(
                    "byte range of `{}` overflows",
                    t.name
                )));
            }
        }
        check_overlaps(&tensors, shard_paths.len())?;
        let total_params = tensors.iter().map(|t| t.numel() as u64).sum();
        Ok(Self {
            model_id: model_id.into(),
            tensors,
            shard_paths,
            total_params,
            root: root.into(),
            layout,
            index,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn get(&self, name: &str) -> Option<&TensorMeta> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|t| t.name.as_str())
    }

    pub fn largest_tensor_bytes(&self) -> u64 {
        self.tensors
            .iter()
            .map(|t| t.numel() as u64 * 4)
            .max()
            .unwrap_or(0)
    }

    /// Serializes the manifest in the on-disk JSON layout. Output is a pure
    /// function of the logical checkpoint, so repeated calls are byte-identical.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let file = ManifestFile {
            model_id: self.model_id.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| RawEntry {
                    name: t.name.clone(),
                    dtype: t.dtype.tag().to_string(),
                    shape: t.shape.clone(),
                    shard: t.shard_id,
                    offset: t.byte_offset,
                    length: t.byte_length,
                })
                .collect(),
            shards: self
                .shard_paths
                .iter()
                .map(|p| {
                    p.strip_prefix(&self.root)
                        .unwrap_or(p)
                        .to_string_lossy()
                        .into_owned()
                })
                .collect(),
        };
        let mut out = serde_json::to_vec_pretty(&file).expect("manifest serialization is infallible");
        out.push(b'\n');
        out
    }
}

fn check_overlaps(tensors: &[TensorMeta], n_shards: usize) -> Result<()> {
    let mut per_shard: Vec<Vec<&TensorMeta>> = vec![Vec::new(); n_shards];
    for t in tensors.iter().filter(|t| t.byte_length > 0) {
        per_shard[t.shard_id].push(t);
    }
    for (shard, mut ranges) in per_shard.into_iter().enumerate() {
        ranges.sort_by_key(|t| t.byte_offset);
        for pair in ranges.windows(2) {
            if pair[0].byte_offset + pair[0].byte_length > pair[1].byte_offset {
                return Err(Error::OverlappingRanges {
                    shard,
                    first: pair[0].name.clone(),
                    second: pair[1].name.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Opens a checkpoint: either a directory holding `manifest.json` plus shard
/// files, a directory holding a single `.safetensors` file, or a path to a
/// `.safetensors` file. Only metadata is read.
pub fn open_checkpoint(path: impl AsRef<Path>) -> Result<CheckpointManifest> {
    let path = path.as_ref();
    if path.is_file() {
        if is_safetensors(path) {
            return open_safetensors(path);
        }
        return Err(Error::MissingManifest(path.to_path_buf()));
    }
    if !path.is_dir() {
        return Err(Error::MissingManifest(path.to_path_buf()));
    }
    let manifest_path = path.join(MANIFEST_FILE);
    if manifest_path.is_file() {
        return open_sharded(path, &manifest_path);
    }
    let entries = fs::read_dir(path).map_err(|e| Error::io(format!("listing {}", path.display()), e))?;
    let mut candidates = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("listing {}", path.display()), e))?;
        if is_safetensors(&entry.path()) {
            candidates.push(entry.path());
        }
    }
    match candidates.as_slice() {
        [single] => open_safetensors(single),
        _ => Err(Error::MissingManifest(path.to_path_buf())),
    }
}

fn is_safetensors(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "safetensors")
}

fn open_sharded(root: &Path, manifest_path: &Path) -> Result<CheckpointManifest> {
    let bytes = fs::read(manifest_path)
        .map_err(|e| Error::io(format!("reading {}", manifest_path.display()), e))?;
    let file: ManifestFile = serde_json::from_slice(&bytes)
        .map_err(|e| Error::json(format!("parsing {}", manifest_path.display()), e))?;

    let mut shard_paths = Vec::with_capacity(file.shards.len());
    for shard in &file.shards {
        let p = root.join(shard);
        if !p.is_file() {
            return Err(Error::ShardPathMissing(p));
        }
        shard_paths.push(p);
    }
    let tensors = file
        .tensors
        .into_iter()
        .map(|raw| {
            Ok(TensorMeta {
                dtype: raw.dtype.parse()?,
                name: raw.name,
                shape: raw.shape,
                shard_id: raw.shard,
                byte_offset: raw.offset,
                byte_length: raw.length,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CheckpointManifest::new(file.model_id, tensors, shard_paths, root, Layout::Sharded)
}

const MAX_SAFETENSORS_HEADER: u64 = 100 * 1024 * 1024;

#[derive(Deserialize)]
struct SafetensorsEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [u64; 2],
}

fn open_safetensors(path: &Path) -> Result<CheckpointManifest> {
    let ctx = || format!("reading safetensors header of {}", path.display());
    let mut file = File::open(path).map_err(|e| Error::io(ctx(), e))?;
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes).map_err(|e| Error::io(ctx(), e))?;
    let header_len = u64::from_le_bytes(len_bytes);
    if header_len > MAX_SAFETENSORS_HEADER {
        return Err(Error::InvalidManifest(format!(
            "safetensors header of {} bytes exceeds the {} byte limit",
            header_len, MAX_SAFETENSORS_HEADER
        )));
    }
    let mut header = vec![0u8; header_len as usize];
    file.read_exact(&mut header).map_err(|e| Error::io(ctx(), e))?;
    let map: serde_json::Map<String, serde_json::Value> =
        serde_json::from_slice(&header).map_err(|e| Error::json(ctx(), e))?;

    let data_start = 8 + header_len;
    let mut tensors = Vec::with_capacity(map.len());
    for (name, value) in map {
        if name == "__metadata__" {
            continue;
        }
        let entry: SafetensorsEntry =
            serde_json::from_value(value).map_err(|e| Error::json(format!("tensor `{name}`"), e))?;
        let [begin, end] = entry.data_offsets;
        if end < begin {
            return Err(Error::InvalidManifest(format!(
                "tensor `{name}` has inverted data_offsets"
            )));
        }
        tensors.push(TensorMeta {
            dtype: Dtype::from_safetensors_tag(&entry.dtype)?,
            name,
            shape: entry.shape,
            shard_id: 0,
            byte_offset: data_start + begin,
            byte_length: end - begin,
        });
    }
    let model_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    CheckpointManifest::new(
        model_id,
        tensors,
        vec![path.to_path_buf()],
        root,
        Layout::Safetensors,
    )
}
