//! Naive whole-model implementation of the merge formulas, used as a test
//! oracle for the streaming engine. Each model is loaded into one flat buffer;
//! every stage is a plain loop over it. Only the DARE mask derivation is
//! shared with the engine.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::merge::{MergeMethod, MergeRecipe};
use crate::rng::{dare_keeps, dare_stream, expert_seed};
use crate::store::{read_tensor, CheckpointManifest, DenseTensor, TensorMeta};

struct Flat {
    segments: Vec<(TensorMeta, Range<usize>)>,
    data: Vec<f32>,
}

fn load_flat(model: &CheckpointManifest, layout: &CheckpointManifest) -> Result<Flat> {
    let mut segments = Vec::new();
    let mut data = Vec::new();
    for meta in &layout.tensors {
        let other = model
            .get(&meta.name)
            .ok_or_else(|| Error::StructureMismatch(format!("`{}` is missing tensor `{}`", model.model_id, meta.name)))?;
        if other.shape != meta.shape {
            return Err(Error::StructureMismatch(format!(
                "tensor `{}` has shape {:?} in `{}` but {:?} in `{}`",
                meta.name, other.shape, model.model_id, meta.shape, layout.model_id
            )));
        }
        let start = data.len();
        data.extend_from_slice(&read_tensor(model, &meta.name)?.values);
        segments.push((meta.clone(), start..data.len()));
    }
    if model.tensors.len() != layout.tensors.len() {
        return Err(Error::StructureMismatch(format!(
            "`{}` has {} tensors, `{}` has {}",
            model.model_id,
            model.tensors.len(),
            layout.model_id,
            layout.tensors.len()
        )));
    }
    Ok(Flat { segments, data })
}

fn tree_sum(xs: &[f32]) -> f32 {
    if xs.is_empty() {
        return 0.0;
    }
    if xs.len() == 1 {
        return xs[0];
    }
    let (l, r) = xs.split_at(xs.len() / 2);
    tree_sum(l) + tree_sum(r)
}

fn sum_f32(xs: &[f32]) -> f32 {
    if xs.len() > 8 {
        return tree_sum(xs);
    }
    let mut s = 0.0f32;
    for x in xs {
        s += *x;
    }
    s
}

fn trim_segment(seg: &mut [f32], density: f64) {
    let n = seg.len();
    if n == 0 {
        return;
    }
    let k = ((density * n as f64) * (1.0 - 1e-12)).ceil() as usize;
    let k = k.max(1).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| seg[b].abs().partial_cmp(&seg[a].abs()).unwrap());
    for &i in &order[k..] {
        seg[i] = 0.0;
    }
}

/// Computes the merged tensors for `recipe` entirely in memory. DARE masks
/// are keyed by `recipe.expert_ids`, which must list one id per expert.
pub fn reference_merge(
    recipe: &MergeRecipe,
    base: Option<&CheckpointManifest>,
    experts: &[CheckpointManifest],
) -> Result<Vec<DenseTensor>> {
    recipe.method.validate()?;
    if experts.is_empty() {
        return Err(Error::EmptyExperts);
    }
    if recipe.expert_ids.len() != experts.len() {
        return Err(Error::invalid(
            "expert_ids",
            format!("lists {} ids for {} experts", recipe.expert_ids.len(), experts.len()),
        ));
    }
    let layout = base.unwrap_or(&experts[0]);
    let xs = experts
        .iter()
        .map(|e| load_flat(e, layout))
        .collect::<Result<Vec<_>>>()?;
    let total = xs[0].data.len();
    let nexp = xs.len();
    let mut column = vec![0.0f32; nexp];

    let (segments, out) = match recipe.method {
        MergeMethod::Average => {
            let mut out = vec![0.0f32; total];
            for (p, o) in out.iter_mut().enumerate() {
                for i in 0..nexp {
                    column[i] = xs[i].data[p];
                }
                *o = sum_f32(&column) / nexp as f32;
            }
            (&xs[0].segments, out)
        }
        method => {
            let b = load_flat(
                base.ok_or_else(|| Error::invalid("base", format!("is required by method `{}`", method.kind())))?,
                layout,
            )?;
            let mut taus: Vec<Vec<f32>> = xs
                .iter()
                .map(|x| x.data.iter().zip(&b.data).map(|(e, b)| e - b).collect())
                .collect();
            let mut out = b.data.clone();
            match method {
                MergeMethod::TaskArithmetic { lambda } => {
                    for p in 0..total {
                        for i in 0..nexp {
                            column[i] = taus[i][p];
                        }
                        out[p] += lambda as f32 * sum_f32(&column);
                    }
                }
                MergeMethod::Ties { lambda, density } => {
                    ties(&mut out, &mut taus, &b.segments, lambda, density, None, &recipe.expert_ids)
                }
                MergeMethod::DareTies {
                    lambda,
                    density,
                    drop_p,
                    seed,
                } => ties(
                    &mut out,
                    &mut taus,
                    &b.segments,
                    lambda,
                    density,
                    Some((drop_p, seed)),
                    &recipe.expert_ids,
                ),
                MergeMethod::Average => unreachable!(),
            }
            return Ok(split(&b.segments, out));
        }
    };
    Ok(split(segments, out))
}

fn ties(
    out: &mut [f32],
    taus: &mut [Vec<f32>],
    segments: &[(TensorMeta, Range<usize>)],
    lambda: f64,
    density: f64,
    dare: Option<(f64, u64)>,
    ids: &[String],
) {
    for (tau, id) in taus.iter_mut().zip(ids) {
        for (meta, range) in segments {
            let seg = &mut tau[range.clone()];
            if let Some((p, seed)) = dare {
                let stream = dare_stream(expert_seed(seed, id), &meta.name);
                for (j, v) in seg.iter_mut().enumerate() {
                    if dare_keeps(&stream, j as u64, p) {
                        *v = (*v as f64 / (1.0 - p)) as f32;
                    } else {
                        *v = 0.0;
                    }
                }
            }
            trim_segment(seg, density);
        }
    }
    let mut agree = Vec::new();
    for (p, o) in out.iter_mut().enumerate() {
        let mut total = 0.0f64;
        for tau in taus.iter() {
            total += tau[p] as f64;
        }
        agree.clear();
        for tau in taus.iter() {
            let v = tau[p];
            if (total > 0.0 && v > 0.0) || (total < 0.0 && v < 0.0) {
                agree.push(v);
            }
        }
        let mean = if agree.is_empty() {
            0.0
        } else {
            sum_f32(&agree) / agree.len() as f32
        };
        *o += lambda as f32 * mean;
    }
}

fn split(segments: &[(TensorMeta, Range<usize>)], data: Vec<f32>) -> Vec<DenseTensor> {
    segments
        .iter()
        .map(|(meta, range)| DenseTensor {
            meta: meta.clone(),
            values: data[range.clone()].to_vec(),
        })
        .collect()
}
