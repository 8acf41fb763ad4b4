use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dtype::Dtype;
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::store::{write_checkpoint, CheckpointManifest, DenseTensor, DEFAULT_MAX_SHARD_BYTES};

/// Parameters of a synthetic base/expert family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub rng_seed: u64,
    pub tensor_shapes: Vec<Vec<usize>>,
    pub n_experts: usize,
    /// Typical delta magnitude; magnitudes are `delta_scale * (0.25 + |z|)`, `z ~ N(0, 1)`.
    pub delta_scale: f64,
    /// Probability that an expert touches a given parameter.
    pub delta_sparsity: f64,
    /// Target fraction of overlapping-support parameters where at least two
    /// experts' deltas have opposite signs.
    pub conflict_rate: f64,
    #[serde(default = "default_dtype")]
    pub dtype: Dtype,
}

fn default_dtype() -> Dtype {
    Dtype::F32
}

impl FamilySpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading family spec {}", path.display()), e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::json(format!("parsing family spec {}", path.display()), e))
    }

    pub fn total_params(&self) -> u64 {
        self.tensor_shapes
            .iter()
            .map(|s| s.iter().product::<usize>() as u64)
            .sum()
    }

    /// Probability that at least two experts touch a given parameter.
    pub fn overlap_probability(&self) -> f64 {
        let n = self.n_experts as i32;
        let s = self.delta_sparsity;
        if n < 2 {
            return 0.0;
        }
        1.0 - (1.0 - s).powi(n) - n as f64 * s * (1.0 - s).powi(n - 1)
    }

    /// Largest conflict rate this spec can realise: any rate once at least one
    /// overlapping parameter is expected, otherwise 0.
    pub fn max_feasible_conflict_rate(&self) -> f64 {
        if self.overlap_probability() * self.total_params() as f64 >= 1.0 {
            1.0
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_experts == 0 {
            return Err(Error::invalid("n_experts", "must be at least 1"));
        }
        if !(self.delta_scale.is_finite() && self.delta_scale > 0.0) {
            return Err(Error::invalid("delta_scale", "must be a positive finite number"));
        }
        if !(self.delta_sparsity > 0.0 && self.delta_sparsity <= 1.0) {
            return Err(Error::invalid("delta_sparsity", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.conflict_rate) {
            return Err(Error::invalid("conflict_rate", "must lie in [0, 1]"));
        }
        let max = self.max_feasible_conflict_rate();
        if self.conflict_rate > max {
            return Err(Error::InfeasibleConflictRate {
                requested: self.conflict_rate,
                max_feasible: max,
            });
        }
        Ok(())
    }
}

/// Deterministic generator for a base model and its experts. Tensors are
/// produced on demand, so arbitrarily large families stream to disk.
///
/// Every value is a pure function of `(rng_seed, tensor name, index)`:
/// the base is standard normal; each expert adds a delta on a random support
/// of density `delta_sparsity`. A parameter is a conflict site with
/// probability `conflict_rate`; at conflict sites two supporting experts get
/// opposite signs and the rest random ones, elsewhere every supporting expert
/// shares one sign.
#[derive(Debug, Clone)]
pub struct Family {
    spec: FamilySpec,
    names: Vec<String>,
    root: CounterRng,
}

impl Family {
    pub fn new(spec: FamilySpec) -> Result<Self> {
        spec.validate()?;
        let width = spec.tensor_shapes.len().max(1).to_string().len().max(3);
        let names = (0..spec.tensor_shapes.len())
            .map(|i| format!("t{i:0width$}"))
            .collect();
        Ok(Self {
            root: CounterRng::new(spec.rng_seed),
            spec,
            names,
        })
    }

    pub fn spec(&self) -> &FamilySpec {
        &self.spec
    }

    pub fn tensor_names(&self) -> &[String] {
        &self.names
    }

    fn base_values(&self, tensor: usize) -> Vec<f32> {
        let n: usize = self.spec.tensor_shapes[tensor].iter().product();
        let s = self.root.stream(&self.names[tensor]).stream("base");
        (0..n as u64).map(|j| s.normal_at(j) as f32).collect()
    }

    pub fn base_tensor(&self, tensor: usize) -> DenseTensor {
        let shape = self.spec.tensor_shapes[tensor].clone();
        DenseTensor::new(self.names[tensor].clone(), shape, self.base_values(tensor))
            .expect("generated length matches shape")
    }

    pub fn expert_tensor(&self, expert: usize, tensor: usize) -> DenseTensor {
        assert!(expert < self.spec.n_experts, "expert index out of range");
        let mut values = self.base_values(tensor);
        let ts = self.root.stream(&self.names[tensor]);
        let support = ts.stream("support");
        let conflict = ts.stream("conflict");
        let dominant = ts.stream("sign");
        let pick = ts.stream("pick");
        let free = ts.stream("free").substream(expert as u64);
        let magnitude = ts.stream("magnitude").substream(expert as u64);
        let n_experts = self.spec.n_experts;
        let sparsity = self.spec.delta_sparsity;
        let supports = |i: usize, j: u64| support.substream(i as u64).unit_at(j) < sparsity;
        let mut supporters = Vec::with_capacity(n_experts);

        for (j, v) in values.iter_mut().enumerate() {
            let j = j as u64;
            if !supports(expert, j) {
                continue;
            }
            let dom = if dominant.unit_at(j) < 0.5 { 1.0 } else { -1.0 };
            let mut sign = dom;
            if conflict.unit_at(j) < self.spec.conflict_rate {
                supporters.clear();
                supporters.extend((0..n_experts).filter(|&i| supports(i, j)));
                let m = supporters.len();
                if m >= 2 {
                    let anchor = (pick.unit_at(2 * j) * m as f64) as usize % m;
                    let partner = (anchor + 1 + (pick.unit_at(2 * j + 1) * (m - 1) as f64) as usize) % m;
                    sign = if supporters[anchor] == expert {
                        dom
                    } else if supporters[partner] == expert {
                        -dom
                    } else if free.unit_at(j) < 0.5 {
                        1.0
                    } else {
                        -1.0
                    };
                }
            }
            let mag = self.spec.delta_scale * (0.25 + magnitude.normal_at(j).abs());
            *v = (*v as f64 + sign * mag) as f32;
        }
        let shape = self.spec.tensor_shapes[tensor].clone();
        DenseTensor::new(self.names[tensor].clone(), shape, values).expect("generated length matches shape")
    }

    pub fn write_base(&self, path: impl AsRef<Path>, model_id: &str) -> Result<CheckpointManifest> {
        let tensors = (0..self.names.len()).map(|t| Ok(self.base_tensor(t)));
        write_checkpoint(tensors, Some(self.spec.dtype), path, self.shard_budget(), model_id)
    }

    pub fn write_expert(&self, expert: usize, path: impl AsRef<Path>, model_id: &str) -> Result<CheckpointManifest> {
        let tensors = (0..self.names.len()).map(|t| Ok(self.expert_tensor(expert, t)));
        write_checkpoint(tensors, Some(self.spec.dtype), path, self.shard_budget(), model_id)
    }

    fn shard_budget(&self) -> u64 {
        let largest = self
            .spec
            .tensor_shapes
            .iter()
            .map(|s| s.iter().product::<usize>() as u64 * self.spec.dtype.size_bytes() as u64)
            .max()
            .unwrap_or(0);
        DEFAULT_MAX_SHARD_BYTES.max(largest)
    }
}

/// Paths and manifests of a family written by [`gen_family`].
#[derive(Debug, Clone)]
pub struct GeneratedFamily {
    pub base: CheckpointManifest,
    pub experts: Vec<CheckpointManifest>,
    pub base_path: PathBuf,
    pub expert_paths: Vec<PathBuf>,
}

/// Writes `base/` and `expert-<i>/` checkpoints under `out_dir`, with model
/// ids `base` and `expert-<i>`.
pub fn gen_family(spec: &FamilySpec, out_dir: impl AsRef<Path>) -> Result<GeneratedFamily> {
    let family = Family::new(spec.clone())?;
    let out_dir = out_dir.as_ref();
    let base_path = out_dir.join("base");
    let base = family.write_base(&base_path, "base")?;
    let mut experts = Vec::with_capacity(spec.n_experts);
    let mut expert_paths = Vec::with_capacity(spec.n_experts);
    for i in 0..spec.n_experts {
        let id = format!("expert-{i}");
        let path = out_dir.join(&id);
        experts.push(family.write_expert(i, &path, &id)?);
        expert_paths.push(path);
    }
    Ok(GeneratedFamily {
        base,
        experts,
        base_path,
        expert_paths,
    })
}
