use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dtype::Dtype;
use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_TRIM_DENSITY: f64 = 0.2;
pub const DEFAULT_DROP_P: f64 = 0.9;
pub const DEFAULT_RNG_SEED: u64 = 0;

/// Which merge algorithm, without hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Average,
    TaskArithmetic,
    DareTies,
    Ties,
}

impl MethodKind {
    pub const ALL: [MethodKind; 4] = [
        MethodKind::Average,
        MethodKind::TaskArithmetic,
        MethodKind::DareTies,
        MethodKind::Ties,
    ];

    pub const fn id(self) -> &'static str {
        match self {
            MethodKind::Average => "average",
            MethodKind::TaskArithmetic => "task_arithmetic",
            MethodKind::DareTies => "dare_ties",
            MethodKind::Ties => "ties",
        }
    }

    /// Label used in report tables.
    pub const fn display_name(self) -> &'static str {
        match self {
            MethodKind::Average => "Average",
            MethodKind::TaskArithmetic => "Task Arithmetic",
            MethodKind::DareTies => "Dare-TIES",
            MethodKind::Ties => "TIES",
        }
    }

    /// Builds the method with default hyperparameters.
    pub fn with_defaults(self) -> MergeMethod {
        match self {
            MethodKind::Average => MergeMethod::Average,
            MethodKind::TaskArithmetic => MergeMethod::TaskArithmetic {
                lambda: DEFAULT_LAMBDA,
            },
            MethodKind::Ties => MergeMethod::Ties {
                lambda: DEFAULT_LAMBDA,
                density: DEFAULT_TRIM_DENSITY,
            },
            MethodKind::DareTies => MergeMethod::DareTies {
                lambda: DEFAULT_LAMBDA,
                density: DEFAULT_TRIM_DENSITY,
                drop_p: DEFAULT_DROP_P,
                seed: DEFAULT_RNG_SEED,
            },
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| {
                Error::invalid(
                    "method",
                    format!("unknown method `{s}` (expected average, task_arithmetic, ties or dare_ties)"),
                )
            })
    }
}

/// A merge algorithm together with exactly the hyperparameters it uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MergeMethod {
    Average,
    TaskArithmetic {
        lambda: f64,
    },
    Ties {
        lambda: f64,
        density: f64,
    },
    DareTies {
        lambda: f64,
        density: f64,
        drop_p: f64,
        seed: u64,
    },
}

impl MergeMethod {
    pub fn kind(&self) -> MethodKind {
        match self {
            MergeMethod::Average => MethodKind::Average,
            MergeMethod::TaskArithmetic { .. } => MethodKind::TaskArithmetic,
            MergeMethod::Ties { .. } => MethodKind::Ties,
            MergeMethod::DareTies { .. } => MethodKind::DareTies,
        }
    }

    pub fn needs_base(&self) -> bool {
        !matches!(self, MergeMethod::Average)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MergeMethod::Average => Ok(()),
            MergeMethod::TaskArithmetic { lambda } => check_lambda(lambda),
            MergeMethod::Ties { lambda, density } => {
                check_lambda(lambda)?;
                check_density(density)
            }
            MergeMethod::DareTies {
                lambda,
                density,
                drop_p,
                ..
            } => {
                check_lambda(lambda)?;
                check_density(density)?;
                check_drop_p(drop_p)
            }
        }
    }
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("lambda", format!("must be finite, got {lambda}")))
    }
}

pub(crate) fn check_density(density: f64) -> Result<()> {
    if density > 0.0 && density <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            "trim_density",
            format!("must lie in (0, 1], got {density}"),
        ))
    }
}

pub(crate) fn check_drop_p(drop_p: f64) -> Result<()> {
    if (0.0..1.0).contains(&drop_p) {
        Ok(())
    } else {
        Err(Error::invalid("drop_p", format!("must lie in [0, 1), got {drop_p}")))
    }
}

/// A merge method applied to a list of experts.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeRecipe {
    pub method: MergeMethod,
    /// Non-empty; duplicates are allowed.
    pub expert_ids: Vec<String>,
}

impl MergeRecipe {
    pub fn new(method: MergeMethod, expert_ids: Vec<String>) -> Result<Self> {
        method.validate()?;
        if expert_ids.is_empty() {
            return Err(Error::EmptyExperts);
        }
        Ok(Self { method, expert_ids })
    }
}

/// On-disk recipe (JSON). Hyperparameters may only appear for the methods
/// that use them; absent ones take the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeFile {
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trim_density: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<PathBuf>,
    pub experts: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dtype: Option<String>,
}

/// A recipe file after validation.
#[derive(Debug, Clone, PartialEq)]
pub struct MergePlan {
    pub method: MergeMethod,
    pub base: Option<PathBuf>,
    pub experts: Vec<PathBuf>,
    pub output_path: Option<PathBuf>,
    pub output_dtype: Option<Dtype>,
}

impl RecipeFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading recipe {}", path.display()), e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::json(format!("parsing recipe {}", path.display()), e))
    }

    /// The same recipe as written by [`MergePlan::to_recipe_file`], with every
    /// applicable hyperparameter made explicit.
    pub fn effective(&self) -> Result<RecipeFile> {
        Ok(self.validate()?.to_recipe_file())
    }

    /// Content hash over the effective recipe (method, hyperparameters,
    /// inputs, output settings).
    pub fn content_hash(&self) -> Result<String> {
        let effective = self.effective()?;
        let bytes = serde_json::to_vec(&effective).expect("recipe serialization is infallible");
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn validate(&self) -> Result<MergePlan> {
        let kind: MethodKind = self.method.parse()?;
        let reject = |field: &str, present: bool| -> Result<()> {
            if present {
                Err(Error::invalid(
                    field,
                    format!("is not used by method `{kind}`"),
                ))
            } else {
                Ok(())
            }
        };
        let lambda = self.lambda.unwrap_or(DEFAULT_LAMBDA);
        let density = self.trim_density.unwrap_or(DEFAULT_TRIM_DENSITY);
        let method = match kind {
            MethodKind::Average => {
                reject("lambda", self.lambda.is_some())?;
                reject("trim_density", self.trim_density.is_some())?;
                reject("drop_p", self.drop_p.is_some())?;
                reject("rng_seed", self.rng_seed.is_some())?;
                MergeMethod::Average
            }
            MethodKind::TaskArithmetic => {
                reject("trim_density", self.trim_density.is_some())?;
                reject("drop_p", self.drop_p.is_some())?;
                reject("rng_seed", self.rng_seed.is_some())?;
                MergeMethod::TaskArithmetic { lambda }
            }
            MethodKind::Ties => {
                reject("drop_p", self.drop_p.is_some())?;
                reject("rng_seed", self.rng_seed.is_some())?;
                MergeMethod::Ties { lambda, density }
            }
            MethodKind::DareTies => MergeMethod::DareTies {
                lambda,
                density,
                drop_p: self.drop_p.unwrap_or(DEFAULT_DROP_P),
                seed: self.rng_seed.unwrap_or(DEFAULT_RNG_SEED),
            },
        };
        method.validate()?;
        if self.experts.is_empty() {
            return Err(Error::invalid("experts", "must list at least one expert checkpoint"));
        }
        if method.needs_base() && self.base.is_none() {
            return Err(Error::invalid("base", format!("is required by method `{kind}`")));
        }
        let output_dtype = self
            .output_dtype
            .as_deref()
            .map(|s| s.parse::<Dtype>().map_err(|_| Error::invalid("output_dtype", format!("unknown dtype `{s}`"))))
            .transpose()?;
        Ok(MergePlan {
            method,
            base: self.base.clone(),
            experts: self.experts.clone(),
            output_path: self.output_path.clone(),
            output_dtype,
        })
    }
}

impl MergePlan {
    pub fn to_recipe_file(&self) -> RecipeFile {
        let mut file = RecipeFile {
            method: self.method.kind().id().to_string(),
            base: self.base.clone(),
            experts: self.experts.clone(),
            output_path: self.output_path.clone(),
            output_dtype: self.output_dtype.map(|d| d.tag().to_string()),
            ..RecipeFile::default()
        };
        match self.method {
            MergeMethod::Average => {}
            MergeMethod::TaskArithmetic { lambda } => file.lambda = Some(lambda),
            MergeMethod::Ties { lambda, density } => {
                file.lambda = Some(lambda);
                file.trim_density = Some(density);
            }
            MergeMethod::DareTies {
                lambda,
                density,
                drop_p,
                seed,
            } => {
                file.lambda = Some(lambda);
                file.trim_density = Some(density);
                file.drop_p = Some(drop_p);
                file.rng_seed = Some(seed);
            }
        }
        file
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(json: &str) -> Result<RecipeFile> {
        serde_json::from_str(json).map_err(|e| Error::json("test", e))
    }

    #[test]
    fn defaults_fill_missing_hyperparameters() {
        let r = parse(r#"{"method":"dare_ties","base":"b","experts":["e1","e2"]}"#).unwrap();
        let plan = r.validate().unwrap();
        assert_eq!(
            plan.method,
            MergeMethod::DareTies {
                lambda: 1.0,
                density: 0.2,
                drop_p: 0.9,
                seed: 0
            }
        );
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(parse(r#"{"method":"average","experts":["a"],"weights":[1]}"#).is_err());
    }

    #[test]
    fn inapplicable_field_is_named() {
        let r = parse(r#"{"method":"average","lambda":0.5,"experts":["a"]}"#).unwrap();
        let err = r.validate().unwrap_err();
        assert!(err.to_string().contains("lambda"), "{err}");
    }

    #[test]
    fn drop_p_of_one_names_the_field() {
        let r = parse(r#"{"method":"dare_ties","drop_p":1.0,"base":"b","experts":["a"]}"#).unwrap();
        let err = r.validate().unwrap_err();
        assert!(err.to_string().contains("drop_p"), "{err}");
    }

    #[test]
    fn density_and_lambda_validated() {
        for bad in [
            r#"{"method":"ties","trim_density":0.0,"base":"b","experts":["a"]}"#,
            r#"{"method":"ties","trim_density":1.5,"base":"b","experts":["a"]}"#,
        ] {
            assert!(parse(bad).unwrap().validate().unwrap_err().to_string().contains("trim_density"));
        }
        let m = MergeMethod::TaskArithmetic { lambda: f64::NAN };
        assert!(m.validate().is_err());
        assert!(MergeMethod::TaskArithmetic { lambda: 0.0 }.validate().is_ok());
    }

    #[test]
    fn base_required_except_for_average() {
        let r = parse(r#"{"method":"ties","experts":["a"]}"#).unwrap();
        assert!(r.validate().unwrap_err().to_string().contains("base"));
        let r = parse(r#"{"method":"average","experts":["a"]}"#).unwrap();
        assert!(r.validate().is_ok());
    }

    #[test]
    fn empty_experts_rejected() {
        assert!(matches!(
            MergeRecipe::new(MergeMethod::Average, vec![]),
            Err(Error::EmptyExperts)
        ));
        let dup = MergeRecipe::new(MergeMethod::Average, vec!["a".into(), "a".into()]);
        assert!(dup.is_ok());
    }

    #[test]
    fn content_hash_ignores_default_spelling() {
        let implicit = parse(r#"{"method":"ties","base":"b","experts":["a"]}"#).unwrap();
        let explicit =
            parse(r#"{"method":"ties","lambda":1.0,"trim_density":0.2,"base":"b","experts":["a"]}"#).unwrap();
        assert_eq!(implicit.content_hash().unwrap(), explicit.content_hash().unwrap());
        let other = parse(r#"{"method":"ties","lambda":0.5,"base":"b","experts":["a"]}"#).unwrap();
        assert_ne!(implicit.content_hash().unwrap(), other.content_hash().unwrap());
    }
}
