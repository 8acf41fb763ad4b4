//! The four merge algorithms as per-tensor streaming transforms.
//!
//! * averaging: `(1/N) * sum_i theta_i`
//! * task arithmetic: `theta_base + lambda * sum_i tau_i`, `tau_i = theta_i - theta_base`
//! * TIES: trim each `tau_i` by magnitude, elect a sign per parameter from the
//!   summed trimmed vectors, average only the entries agreeing with it
//! * DARE-TIES: Bernoulli-drop and rescale each `tau_i`, then TIES

mod engine;
pub mod kernels;
mod recipe;
mod task_vector;

pub use engine::{
    check_structure, merge_average, merge_dare_ties, merge_task_arithmetic, merge_ties, Merger,
};
pub use recipe::{
    MergeMethod, MergePlan, MergeRecipe, MethodKind, RecipeFile, DEFAULT_DROP_P, DEFAULT_LAMBDA,
    DEFAULT_RNG_SEED, DEFAULT_TRIM_DENSITY,
};
pub use task_vector::{
    compute_task_vector, dare_prune, disjoint_merge, elect_signs, trim_by_magnitude, SignTensor,
    SignVector, TaskVector, TrimmedTaskVector,
};
