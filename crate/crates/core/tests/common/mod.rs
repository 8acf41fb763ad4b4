#![allow(dead_code)]

use std::path::Path;

use tvmerge_core::rng::CounterRng;
use tvmerge_core::store::{write_checkpoint, CheckpointManifest, DenseTensor, DEFAULT_MAX_SHARD_BYTES};

/// Writes an f32 checkpoint made of 1-D tensors.
pub fn write_vectors(dir: &Path, id: &str, tensors: &[(&str, &[f32])]) -> CheckpointManifest {
    let tensors = tensors
        .iter()
        .map(|(n, v)| Ok(DenseTensor::vector(*n, v.to_vec())));
    write_checkpoint(tensors, None, dir.join(id), DEFAULT_MAX_SHARD_BYTES, id).unwrap()
}

pub fn write_tensors(dir: &Path, id: &str, tensors: Vec<DenseTensor>, max_shard_bytes: u64) -> CheckpointManifest {
    write_checkpoint(tensors.into_iter().map(Ok), None, dir.join(id), max_shard_bytes, id).unwrap()
}

/// Normwise relative error `max|a - b| / max|b|`; absolute when `b` is all zero.
pub fn rel_err(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        diff = diff.max((*x as f64 - *y as f64).abs());
        scale = scale.max((*y as f64).abs());
    }
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn rel_err_all(a: &[DenseTensor], b: &[DenseTensor]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            assert_eq!(x.meta.name, y.meta.name);
            assert_eq!(x.meta.shape, y.meta.shape);
            rel_err(&x.values, &y.values)
        })
        .fold(0.0, f64::max)
}

pub fn bits(t: &[DenseTensor]) -> Vec<Vec<u32>> {
    t.iter().map(|t| t.values.iter().map(|v| v.to_bits()).collect()).collect()
}

/// A random base plus `n` experts over the same tensor layout. Expert deltas
/// are dense normal noise with a random fraction of exact zeros.
pub struct RandomFamily {
    pub base: Vec<DenseTensor>,
    pub experts: Vec<Vec<DenseTensor>>,
}

pub fn random_family(seed: u64, shapes: &[Vec<usize>], n: usize) -> RandomFamily {
    let rng = CounterRng::new(seed);
    let base: Vec<DenseTensor> = shapes
        .iter()
        .enumerate()
        .map(|(t, shape)| {
            let s = rng.stream("base").substream(t as u64);
            let numel: usize = shape.iter().product();
            let values = (0..numel as u64).map(|j| s.normal_at(j) as f32).collect();
            DenseTensor::new(format!("layer{t:02}.w"), shape.clone(), values).unwrap()
        })
        .collect();
    let experts = (0..n)
        .map(|i| {
            base.iter()
                .enumerate()
                .map(|(t, b)| {
                    let s = rng.stream("delta").substream(i as u64).substream(t as u64);
                    let zeros = rng.stream("zeros").substream(i as u64).substream(t as u64);
                    let values = b
                        .values
                        .iter()
                        .enumerate()
                        .map(|(j, v)| {
                            if zeros.unit_at(j as u64) < 0.1 {
                                *v
                            } else {
                                v + 0.1 * s.normal_at(j as u64) as f32
                            }
                        })
                        .collect();
                    b.with_values(values)
                })
                .collect()
        })
        .collect();
    RandomFamily { base, experts }
}

impl RandomFamily {
    pub fn write(&self, dir: &Path, max_shard_bytes: u64) -> (CheckpointManifest, Vec<CheckpointManifest>) {
        let base = write_tensors(dir, "base", self.base.clone(), max_shard_bytes);
        let experts = self
            .experts
            .iter()
            .enumerate()
            .map(|(i, e)| write_tensors(dir, &format!("expert-{i}"), e.clone(), max_shard_bytes))
            .collect();
        (base, experts)
    }
}
