use std::path::Path;

use super::kernels::{accumulate, dare_in_place, disjoint_mean, elected_sign, trim_in_place};
use super::recipe::{check_density, check_drop_p, check_lambda, MergeMethod};
use crate::dtype::Dtype;
use crate::error::{Error, Result};
use crate::rng::{dare_stream, expert_seed};
use crate::store::{read_tensor, write_checkpoint, CheckpointManifest, DenseTensor};

/// Verifies that every checkpoint in `others` has exactly the tensor names
/// and shapes of `reference`.
pub fn check_structure(reference: &CheckpointManifest, others: &[&CheckpointManifest]) -> Result<()> {
    for other in others {
        if other.tensors.len() != reference.tensors.len() {
            let missing = reference
                .names()
                .find(|n| other.get(n).is_none())
                .or_else(|| other.names().find(|n| reference.get(n).is_none()));
            return Err(Error::StructureMismatch(format!(
                "`{}` has {} tensors, `{}` has {} (first difference: `{}`)",
                other.model_id,
                other.tensors.len(),
                reference.model_id,
                reference.tensors.len(),
                missing.unwrap_or("?")
            )));
        }
        for meta in &reference.tensors {
            let theirs = other.get(&meta.name).ok_or_else(|| {
                Error::StructureMismatch(format!(
                    "`{}` is missing tensor `{}`",
                    other.model_id, meta.name
                ))
            })?;
            if theirs.shape != meta.shape {
                return Err(Error::StructureMismatch(format!(
                    "tensor `{}` has shape {:?} in `{}` but {:?} in `{}`",
                    meta.name, theirs.shape, other.model_id, meta.shape, reference.model_id
                )));
            }
        }
    }
    Ok(())
}

/// A configured merge over aligned checkpoints that produces the merged model
/// one tensor at a time.
///
/// Merging a tensor holds the base tensor plus one buffer per expert; all
/// intermediate stages (task vector, DARE, trim, the merged result) are
/// computed in place in those buffers.
#[derive(Debug, Clone)]
pub struct Merger<'a> {
    method: MergeMethod,
    base: Option<&'a CheckpointManifest>,
    experts: &'a [CheckpointManifest],
    layout: &'a CheckpointManifest,
}

impl<'a> Merger<'a> {
    /// `base` is required for every method except averaging; when given to
    /// averaging it only fixes the output dtype and is structure-checked, its
    /// values are never read.
    pub fn new(
        method: MergeMethod,
        base: Option<&'a CheckpointManifest>,
        experts: &'a [CheckpointManifest],
    ) -> Result<Self> {
        method.validate()?;
        if experts.is_empty() {
            return Err(Error::EmptyExperts);
        }
        if method.needs_base() && base.is_none() {
            return Err(Error::invalid(
                "base",
                format!("is required by method `{}`", method.kind()),
            ));
        }
        let layout = base.unwrap_or(&experts[0]);
        let others: Vec<&CheckpointManifest> = experts.iter().collect();
        check_structure(layout, &others)?;
        Ok(Self {
            method,
            base,
            experts,
            layout,
        })
    }

    pub fn method(&self) -> MergeMethod {
        self.method
    }

    /// Names of the output tensors, in lexicographic order.
    pub fn names(&self) -> impl Iterator<Item = &'a str> + 'a {
        self.layout.names()
    }

    /// Output dtype used when the caller does not override it.
    pub fn default_dtype(&self, name: &str) -> Option<Dtype> {
        self.layout.get(name).map(|m| m.dtype)
    }

    /// Merges a single tensor. Results do not depend on which other tensors
    /// were merged before or concurrently.
    pub fn merge_tensor(&self, name: &str) -> Result<DenseTensor> {
        let meta = self
            .layout
            .get(name)
            .ok_or_else(|| Error::UnknownTensor(name.to_string()))?;
        let values = match self.method {
            MergeMethod::Average => self.average(name)?,
            MergeMethod::TaskArithmetic { lambda } => self.task_arithmetic(name, lambda as f32)?,
            MergeMethod::Ties { lambda, density } => self.ties(name, lambda as f32, density, None)?,
            MergeMethod::DareTies {
                lambda,
                density,
                drop_p,
                seed,
            } => self.ties(name, lambda as f32, density, Some((drop_p, seed)))?,
        };
        Ok(DenseTensor {
            meta: meta.clone(),
            values,
        })
    }

    /// Lazily merges every tensor in name order.
    pub fn tensors(&self) -> impl Iterator<Item = Result<DenseTensor>> + '_ {
        self.layout.names().map(move |n| self.merge_tensor(n))
    }

    pub fn collect_all(&self) -> Result<Vec<DenseTensor>> {
        self.tensors().collect()
    }

    /// Streams the merged model into a sharded checkpoint.
    pub fn write(
        &self,
        path: impl AsRef<Path>,
        output_dtype: Option<Dtype>,
        max_shard_bytes: u64,
        model_id: &str,
    ) -> Result<CheckpointManifest> {
        write_checkpoint(self.tensors(), output_dtype, path, max_shard_bytes, model_id)
    }

    fn load_experts(&self, name: &str) -> Result<Vec<Vec<f32>>> {
        self.experts
            .iter()
            .map(|e| read_tensor(e, name).map(|t| t.values))
            .collect()
    }

    fn load_base_and_deltas(&self, name: &str) -> Result<(Vec<f32>, Vec<Vec<f32>>)> {
        let base = read_tensor(self.base.expect("checked in new"), name)?.values;
        let mut deltas = self.load_experts(name)?;
        for delta in &mut deltas {
            for (d, b) in delta.iter_mut().zip(&base) {
                *d -= *b;
            }
        }
        Ok((base, deltas))
    }

    fn average(&self, name: &str) -> Result<Vec<f32>> {
        let mut bufs = self.load_experts(name)?;
        let n = bufs.len() as f32;
        let mut gather = vec![0.0f32; bufs.len()];
        let (first, rest) = bufs.split_first_mut().expect("at least one expert");
        for p in 0..first.len() {
            gather[0] = first[p];
            for (g, b) in gather[1..].iter_mut().zip(rest.iter()) {
                *g = b[p];
            }
            first[p] = accumulate(&gather) / n;
        }
        Ok(bufs.swap_remove(0))
    }

    fn task_arithmetic(&self, name: &str, lambda: f32) -> Result<Vec<f32>> {
        let (mut out, deltas) = self.load_base_and_deltas(name)?;
        let mut gather = vec![0.0f32; deltas.len()];
        for (p, o) in out.iter_mut().enumerate() {
            for (g, d) in gather.iter_mut().zip(&deltas) {
                *g = d[p];
            }
            *o += lambda * accumulate(&gather);
        }
        Ok(out)
    }

    fn ties(&self, name: &str, lambda: f32, density: f64, dare: Option<(f64, u64)>) -> Result<Vec<f32>> {
        let (mut out, mut deltas) = self.load_base_and_deltas(name)?;
        for (delta, expert) in deltas.iter_mut().zip(self.experts) {
            if let Some((drop_p, seed)) = dare {
                let stream = dare_stream(expert_seed(seed, &expert.model_id), name);
                dare_in_place(delta, drop_p, &stream);
            }
            trim_in_place(delta, density);
        }
        let mut gather = vec![0.0f32; deltas.len()];
        let mut scratch = Vec::with_capacity(deltas.len());
        for (p, o) in out.iter_mut().enumerate() {
            for (g, d) in gather.iter_mut().zip(&deltas) {
                *g = d[p];
            }
            let sign = elected_sign(&gather);
            *o += lambda * disjoint_mean(&gather, sign, &mut scratch);
        }
        Ok(out)
    }
}

/// Plain parameter mean of the experts; the base model is not consulted.
pub fn merge_average(experts: &[CheckpointManifest]) -> Result<Merger<'_>> {
    Merger::new(MergeMethod::Average, None, experts)
}

/// `base + lambda * sum_i (expert_i - base)`.
pub fn merge_task_arithmetic<'a>(
    base: &'a CheckpointManifest,
    experts: &'a [CheckpointManifest],
    lambda: f64,
) -> Result<Merger<'a>> {
    check_lambda(lambda)?;
    Merger::new(MergeMethod::TaskArithmetic { lambda }, Some(base), experts)
}

/// Trim each task vector to `density`, elect per-parameter signs, average the
/// agreeing entries, scale by `lambda` and add to the base.
pub fn merge_ties<'a>(
    base: &'a CheckpointManifest,
    experts: &'a [CheckpointManifest],
    lambda: f64,
    density: f64,
) -> Result<Merger<'a>> {
    check_lambda(lambda)?;
    check_density(density)?;
    Merger::new(MergeMethod::Ties { lambda, density }, Some(base), experts)
}

/// DARE-prune each task vector (sub-seed keyed by the expert's `model_id`),
/// then run the TIES pipeline.
pub fn merge_dare_ties<'a>(
    base: &'a CheckpointManifest,
    experts: &'a [CheckpointManifest],
    lambda: f64,
    density: f64,
    drop_p: f64,
    seed: u64,
) -> Result<Merger<'a>> {
    check_lambda(lambda)?;
    check_density(density)?;
    check_drop_p(drop_p)?;
    Merger::new(
        MergeMethod::DareTies {
            lambda,
            density,
            drop_p,
            seed,
        },
        Some(base),
        experts,
    )
}
