//! Shared inputs for the benchmarks.

use std::path::Path;

use tvmerge_core::lab::{gen_family, FamilySpec, GeneratedFamily};
use tvmerge_core::rng::CounterRng;
use tvmerge_core::Dtype;

/// Standard-normal values scaled by `scale`, deterministic in `seed`.
pub fn normal_values(seed: u64, n: usize, scale: f32) -> Vec<f32> {
    let s = CounterRng::new(seed).stream("bench");
    (0..n as u64).map(|j| scale * s.normal_at(j) as f32).collect()
}

/// A synthetic family of `n_experts` checkpoints with `tensors` tensors of
/// `numel` elements each.
pub fn family(dir: &Path, n_experts: usize, tensors: usize, numel: usize) -> GeneratedFamily {
    let spec = FamilySpec {
        rng_seed: 17,
        tensor_shapes: vec![vec![numel]; tensors],
        n_experts,
        delta_scale: 0.01,
        delta_sparsity: 0.3,
        conflict_rate: if n_experts > 1 { 0.3 } else { 0.0 },
        dtype: Dtype::F32,
    };
    gen_family(&spec, dir).expect("benchmark family spec is valid")
}
