//! Whole-model task-vector operations: the individual TIES / DARE stages
//! exposed as standalone steps over in-memory deltas.

use super::engine::check_structure;
use super::kernels::{dare_in_place, disjoint_mean, elected_sign, trim_in_place};
use super::recipe::{check_density, check_drop_p};
use crate::error::{Error, Result};
use crate::rng::dare_stream;
use crate::store::{read_tensor, CheckpointManifest, DenseTensor};

/// `expert - base`, per tensor, in name order.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVector {
    pub base_id: String,
    pub expert_id: String,
    pub deltas: Vec<DenseTensor>,
}

impl TaskVector {
    pub fn new(base_id: impl Into<String>, expert_id: impl Into<String>, mut deltas: Vec<DenseTensor>) -> Self {
        deltas.sort_by(|a, b| a.meta.name.cmp(&b.meta.name));
        Self {
            base_id: base_id.into(),
            expert_id: expert_id.into(),
            deltas,
        }
    }

    pub fn get(&self, name: &str) -> Option<&DenseTensor> {
        self.deltas
            .binary_search_by(|t| t.meta.name.as_str().cmp(name))
            .ok()
            .map(|i| &self.deltas[i])
    }

    pub fn numel(&self) -> usize {
        self.deltas.iter().map(|t| t.values.len()).sum()
    }

    fn check_aligned(&self, other: &TaskVector) -> Result<()> {
        if self.deltas.len() != other.deltas.len() {
            return Err(Error::StructureMismatch(format!(
                "task vector `{}` has {} tensors, `{}` has {}",
                self.expert_id,
                self.deltas.len(),
                other.expert_id,
                other.deltas.len()
            )));
        }
        for (a, b) in self.deltas.iter().zip(&other.deltas) {
            if a.meta.name != b.meta.name || a.meta.shape != b.meta.shape {
                return Err(Error::StructureMismatch(format!(
                    "tensor `{}` {:?} in `{}` does not line up with `{}` {:?} in `{}`",
                    a.meta.name, a.meta.shape, self.expert_id, b.meta.name, b.meta.shape, other.expert_id
                )));
            }
        }
        Ok(())
    }
}

/// A task vector after magnitude trimming. Surviving entries are unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct TrimmedTaskVector {
    pub vector: TaskVector,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignTensor {
    pub name: String,
    pub signs: Vec<i8>,
}

/// Elected sign per parameter, in {-1, 0, +1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignVector {
    pub tensors: Vec<SignTensor>,
}

pub fn compute_task_vector(expert: &CheckpointManifest, base: &CheckpointManifest) -> Result<TaskVector> {
    check_structure(base, &[expert])?;
    let deltas = base
        .names()
        .map(|name| {
            let b = read_tensor(base, name)?;
            let mut e = read_tensor(expert, name)?;
            for (x, y) in e.values.iter_mut().zip(&b.values) {
                *x -= *y;
            }
            e.meta.dtype = crate::dtype::Dtype::F32;
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskVector::new(base.model_id.clone(), expert.model_id.clone(), deltas))
}

/// Keeps the `ceil(density * n)` largest-magnitude entries of each tensor
/// (ties to the lower flat index) and zeroes the rest.
pub fn trim_by_magnitude(tv: &TaskVector, density: f64) -> Result<TrimmedTaskVector> {
    check_density(density)?;
    let mut vector = tv.clone();
    for t in &mut vector.deltas {
        trim_in_place(&mut t.values, density);
    }
    Ok(TrimmedTaskVector { vector, density })
}

fn check_all_aligned(trimmed: &[TrimmedTaskVector]) -> Result<&TrimmedTaskVector> {
    let first = trimmed.first().ok_or(Error::EmptyExperts)?;
    for t in &trimmed[1..] {
        first.vector.check_aligned(&t.vector)?;
    }
    Ok(first)
}

/// Per-parameter sign of the elementwise sum of the trimmed vectors.
pub fn elect_signs(trimmed: &[TrimmedTaskVector]) -> Result<SignVector> {
    let first = check_all_aligned(trimmed)?;
    let mut gather = vec![0.0f32; trimmed.len()];
    let tensors = first
        .vector
        .deltas
        .iter()
        .enumerate()
        .map(|(ti, t)| {
            let signs = (0..t.values.len())
                .map(|p| {
                    for (g, tv) in gather.iter_mut().zip(trimmed) {
                        *g = tv.vector.deltas[ti].values[p];
                    }
                    elected_sign(&gather)
                })
                .collect();
            SignTensor {
                name: t.meta.name.clone(),
                signs,
            }
        })
        .collect();
    Ok(SignVector { tensors })
}

/// Per parameter, the mean over the vectors whose entry has the elected sign;
/// 0 where no entry matches.
pub fn disjoint_merge(trimmed: &[TrimmedTaskVector], signs: &SignVector) -> Result<TaskVector> {
    let first = check_all_aligned(trimmed)?;
    if signs.tensors.len() != first.vector.deltas.len() {
        return Err(Error::StructureMismatch(format!(
            "sign vector has {} tensors, task vectors have {}",
            signs.tensors.len(),
            first.vector.deltas.len()
        )));
    }
    let mut gather = vec![0.0f32; trimmed.len()];
    let mut scratch = Vec::with_capacity(trimmed.len());
    let mut deltas = Vec::with_capacity(first.vector.deltas.len());
    for (ti, (t, s)) in first.vector.deltas.iter().zip(&signs.tensors).enumerate() {
        if s.name != t.meta.name || s.signs.len() != t.values.len() {
            return Err(Error::StructureMismatch(format!(
                "sign tensor `{}` ({} entries) does not line up with `{}` ({} entries)",
                s.name,
                s.signs.len(),
                t.meta.name,
                t.values.len()
            )));
        }
        let values = (0..t.values.len())
            .map(|p| {
                for (g, tv) in gather.iter_mut().zip(trimmed) {
                    *g = tv.vector.deltas[ti].values[p];
                }
                disjoint_mean(&gather, s.signs[p], &mut scratch)
            })
            .collect();
        deltas.push(t.with_values(values));
    }
    Ok(TaskVector::new(first.vector.base_id.clone(), "merged", deltas))
}

/// Drops each entry with probability `drop_p` and rescales survivors by
/// `1 / (1 - drop_p)`. Mask bits come from `(rng_seed, tensor name, index)`.
pub fn dare_prune(tv: &TaskVector, drop_p: f64, rng_seed: u64) -> Result<TaskVector> {
    check_drop_p(drop_p)?;
    let mut out = tv.clone();
    for t in &mut out.deltas {
        let stream = dare_stream(rng_seed, &t.meta.name);
        dare_in_place(&mut t.values, drop_p, &stream);
    }
    Ok(out)
}
