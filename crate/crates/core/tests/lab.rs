mod common;

use common::*;
use tempfile::tempdir;
use tvmerge_core::lab::{conflict_rate, gen_family, reference_merge, Family, FamilySpec};
use tvmerge_core::merge::{
    compute_task_vector, merge_task_arithmetic, merge_ties, MergeMethod, MergeRecipe, Merger,
};
use tvmerge_core::store::{checkpoint_hash, read_tensor};
use tvmerge_core::Error;

fn spec(conflict_rate: f64, sparsity: f64, n: usize, shapes: Vec<Vec<usize>>) -> FamilySpec {
    FamilySpec {
        rng_seed: 11,
        tensor_shapes: shapes,
        n_experts: n,
        delta_scale: 0.05,
        delta_sparsity: sparsity,
        conflict_rate,
        dtype: tvmerge_core::Dtype::F32,
    }
}

#[test]
fn zero_conflict_rate_never_opposes() {
    let fam = Family::new(spec(0.0, 0.6, 5, vec![vec![3000], vec![20, 50]])).unwrap();
    for t in 0..fam.tensor_names().len() {
        let base = fam.base_tensor(t).values;
        let deltas: Vec<Vec<f32>> = (0..5)
            .map(|i| fam.expert_tensor(i, t).values.iter().zip(&base).map(|(e, b)| e - b).collect())
            .collect();
        for p in 0..base.len() {
            for a in 0..5 {
                for b in a + 1..5 {
                    assert!(deltas[a][p] * deltas[b][p] >= 0.0, "tensor {t} param {p} experts {a},{b}");
                }
            }
        }
    }
}

#[test]
fn same_spec_gives_identical_checkpoints() {
    let s = spec(0.3, 0.5, 3, vec![vec![100], vec![4, 4, 4]]);
    let (d1, d2) = (tempdir().unwrap(), tempdir().unwrap());
    let a = gen_family(&s, d1.path()).unwrap();
    let b = gen_family(&s, d2.path()).unwrap();
    assert_eq!(checkpoint_hash(&a.base).unwrap(), checkpoint_hash(&b.base).unwrap());
    for (x, y) in a.experts.iter().zip(&b.experts) {
        assert_eq!(checkpoint_hash(x).unwrap(), checkpoint_hash(y).unwrap());
    }
    let mut other = s.clone();
    other.rng_seed += 1;
    let d3 = tempdir().unwrap();
    let c = gen_family(&other, d3.path()).unwrap();
    assert_ne!(checkpoint_hash(&a.base).unwrap(), checkpoint_hash(&c.base).unwrap());
}

#[test]
fn measured_conflict_rate_matches_target() {
    // sparsity 0.1, 2 experts: ~1% of parameters overlap, so 10^6 elements
    // give ~10^4 overlap sites and a binomial standard error of ~0.005.
    let s = spec(0.5, 0.1, 2, vec![vec![1000, 1000]]);
    let dir = tempdir().unwrap();
    let fam = gen_family(&s, dir.path()).unwrap();
    let tvs: Vec<_> = fam.experts.iter().map(|e| compute_task_vector(e, &fam.base).unwrap()).collect();
    let stats = conflict_rate(&tvs).unwrap();
    assert!(stats.overlapping > 5000, "{stats:?}");
    assert!((stats.rate() - 0.5).abs() <= 0.05, "{stats:?}");
}

#[test]
fn measured_conflict_rate_tracks_other_targets() {
    for target in [0.0, 0.2, 0.8, 1.0] {
        let fam = Family::new(spec(target, 0.3, 3, vec![vec![40_000]])).unwrap();
        let base = fam.base_tensor(0).values;
        let tvs: Vec<_> = (0..3)
            .map(|i| {
                let d = fam.expert_tensor(i, 0).values.iter().zip(&base).map(|(e, b)| e - b).collect();
                tvmerge_core::merge::TaskVector::new("base", format!("e{i}"), vec![tvmerge_core::DenseTensor::vector("t", d)])
            })
            .collect();
        let rate = conflict_rate(&tvs).unwrap().rate();
        assert!((rate - target).abs() <= 0.03, "target {target}, measured {rate}");
    }
}

#[test]
fn sparsity_and_scale_follow_spec() {
    let fam = Family::new(spec(0.0, 0.25, 1, vec![vec![100_000]])).unwrap();
    let base = fam.base_tensor(0).values;
    let expert = fam.expert_tensor(0, 0).values;
    let deltas: Vec<f32> = expert.iter().zip(&base).map(|(e, b)| e - b).collect();
    let nonzero = deltas.iter().filter(|d| **d != 0.0).count() as f64 / deltas.len() as f64;
    assert!((nonzero - 0.25).abs() < 0.01, "{nonzero}");
    assert!(deltas.iter().filter(|d| **d != 0.0).all(|d| d.abs() >= 0.0124));
    let mean: f64 = base.iter().map(|v| *v as f64).sum::<f64>() / base.len() as f64;
    let var: f64 = base.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / base.len() as f64;
    assert!(mean.abs() < 0.02 && (var - 1.0).abs() < 0.03, "{mean} {var}");
}

#[test]
fn infeasible_conflict_rate_reports_maximum() {
    let err = Family::new(spec(0.5, 0.1, 1, vec![vec![100]])).unwrap_err();
    assert!(matches!(err, Error::InfeasibleConflictRate { max_feasible, .. } if max_feasible == 0.0), "{err}");
    let err = Family::new(spec(0.5, 0.001, 2, vec![vec![10]])).unwrap_err();
    assert!(matches!(err, Error::InfeasibleConflictRate { .. }));
    assert!(Family::new(spec(0.0, 0.001, 2, vec![vec![10]])).is_ok());
    assert!(Family::new(spec(0.1, 0.0, 2, vec![vec![10]])).is_err());
    assert!(Family::new(spec(1.5, 0.5, 2, vec![vec![10]])).is_err());
}

#[test]
fn family_spec_parses_json() {
    let json = r#"{"rng_seed": 3, "tensor_shapes": [[2, 3], [5]], "n_experts": 2,
        "delta_scale": 0.1, "delta_sparsity": 0.5, "conflict_rate": 0.2}"#;
    let s: FamilySpec = serde_json::from_str(json).unwrap();
    assert_eq!(s.total_params(), 11);
    assert!(serde_json::from_str::<FamilySpec>(&json.replace("\"n_experts\"", "\"experts\"")).is_err());
}

#[test]
fn reference_examples() {
    let dir = tempdir().unwrap();
    let fam = random_family(5, &[vec![3, 5], vec![17]], 3);
    let (base, experts) = fam.write(dir.path(), 1 << 20);
    let ids: Vec<String> = experts.iter().map(|e| e.model_id.clone()).collect();

    let zero = MergeRecipe::new(MergeMethod::TaskArithmetic { lambda: 0.0 }, ids.clone()).unwrap();
    let out = reference_merge(&zero, Some(&base), &experts).unwrap();
    assert_eq!(bits(&out), bits(&fam.base));

    let one = MergeRecipe::new(MergeMethod::Average, ids[..1].to_vec()).unwrap();
    let out = reference_merge(&one, None, &experts[..1]).unwrap();
    assert_eq!(bits(&out), bits(&fam.experts[0]));

    let bad = MergeRecipe::new(MergeMethod::Average, ids[..2].to_vec()).unwrap();
    assert!(reference_merge(&bad, None, &experts).is_err());
}

#[test]
fn reference_agrees_with_engine_on_small_instances() {
    let dir = tempdir().unwrap();
    let fam = random_family(9, &[vec![33], vec![8, 8], vec![1]], 4);
    let (base, experts) = fam.write(dir.path(), 600);
    let ids: Vec<String> = experts.iter().map(|e| e.model_id.clone()).collect();
    let methods = [
        MergeMethod::Average,
        MergeMethod::TaskArithmetic { lambda: 0.4 },
        MergeMethod::Ties { lambda: 1.0, density: 0.3 },
        MergeMethod::DareTies { lambda: 0.9, density: 0.5, drop_p: 0.7, seed: 17 },
    ];
    for method in methods {
        let engine = Merger::new(method, Some(&base), &experts).unwrap().collect_all().unwrap();
        let oracle = reference_merge(&MergeRecipe::new(method, ids.clone()).unwrap(), Some(&base), &experts).unwrap();
        assert!(rel_err_all(&engine, &oracle) <= 1e-6, "{method:?}");
    }
}

fn max_dev(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).abs()).fold(0.0, f64::max)
}

#[test]
fn conflict_free_reduction_and_its_failure_under_conflict() {
    let deviation = |rate: f64| {
        let dir = tempdir().unwrap();
        let fam = gen_family(&spec(rate, 1.0, 4, vec![vec![5000]]), dir.path()).unwrap();
        let ties = merge_ties(&fam.base, &fam.experts, 1.0, 1.0).unwrap().collect_all().unwrap();
        let ta = merge_task_arithmetic(&fam.base, &fam.experts, 0.25).unwrap().collect_all().unwrap();
        (rel_err_all(&ties, &ta), max_dev(&ties[0].values, &ta[0].values))
    };
    let (rel_free, dev_free) = deviation(0.0);
    let (_, dev_conflict) = deviation(0.95);
    assert!(rel_free <= 1e-6, "{rel_free}");
    assert!(dev_conflict > 100.0 * dev_free.max(1e-7), "{dev_free} vs {dev_conflict}");
}

#[test]
fn written_family_round_trips_generator() {
    let s = spec(0.4, 0.5, 2, vec![vec![64]]);
    let dir = tempdir().unwrap();
    let written = gen_family(&s, dir.path()).unwrap();
    let fam = Family::new(s).unwrap();
    let name = &fam.tensor_names()[0];
    assert_eq!(read_tensor(&written.experts[1], name).unwrap().values, fam.expert_tensor(1, 0).values);
    assert_eq!(written.experts[1].model_id, "expert-1");
}
