//! Experiment configuration: JSON schema, per-experiment defaults, and
//! validation.
//!
//! A config file only needs the `experiment` field; everything else falls
//! back to that experiment's published defaults. Field names in validation
//! errors match the JSON keys so a bad file can be fixed from the message
//! alone.

use std::path::PathBuf;

use keql::kernels::KernelSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Which benchmark problem to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Duffing,
    Burgers,
    Darcy,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Duffing => "duffing",
            Experiment::Burgers => "burgers",
            Experiment::Darcy => "darcy",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "duffing" => Ok(Experiment::Duffing),
            "burgers" => Ok(Experiment::Burgers),
            "darcy" => Ok(Experiment::Darcy),
            other => Err(CliError::Config(format!(
                "field `experiment` must be one of duffing, burgers, darcy; got `{other}`"
            ))),
        }
    }
}

/// Which recovery pipeline to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    TwoStep,
    OneStepFull,
    OneStepReduced,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::TwoStep => "two_step",
            Mode::OneStepFull => "one_step_full",
            Mode::OneStepReduced => "one_step_reduced",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "two_step" => Ok(Mode::TwoStep),
            "one_step_full" => Ok(Mode::OneStepFull),
            "one_step_reduced" => Ok(Mode::OneStepReduced),
            other => Err(CliError::Config(format!(
                "field `mode` must be one of two_step, one_step_full, one_step_reduced; got `{other}`"
            ))),
        }
    }
}

/// Node placement for the collocation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridScheme {
    Uniform,
    Chebyshev,
}

/// Collocation grid spec: a scheme plus per-dimension sizes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Collocation {
    pub scheme: GridScheme,
    pub size: Vec<usize>,
}

impl Collocation {
    pub fn total(&self) -> usize {
        self.size.iter().product()
    }
}

/// A kernel choice: an explicit spec, or a data-driven rule (`"mle"` fits
/// lengthscales by marginal likelihood, `"auto"` derives polynomial shift
/// and scaling from a pilot fit's feature cloud).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelChoice {
    Rule(String),
    Spec(KernelSpec),
}

/// Raw experiment configuration as parsed from JSON. Optional fields fall
/// back to per-experiment defaults in [`ExperimentConfig::resolve`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Burgers only: `standard`, `shock`, or `one_shot`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    /// Number of training functions M.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// Interior observation count per function.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_interior: Option<usize>,
    /// Boundary observation count per function.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_boundary: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collocation: Option<Collocation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_u: Option<KernelChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_p: Option<KernelChoice>,
    /// Looseness of the observation constraints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_u: Option<f64>,
    /// Looseness of the equation constraints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_p: Option<f64>,
    /// Weight on the solution-norm penalties in the joint objective.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    /// Inducing-point count I for the equation basis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inducing: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output directory for reports and artifacts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// A fully populated, validated configuration.
#[derive(Clone, Debug)]
pub struct ResolvedConfig {
    pub experiment: Experiment,
    pub variant: String,
    pub m: usize,
    pub n_interior: usize,
    pub n_boundary: usize,
    pub collocation: Collocation,
    pub kernel_u: KernelChoice,
    pub kernel_p: KernelChoice,
    pub theta_u: f64,
    pub theta_p: f64,
    pub lambda: f64,
    pub mode: Mode,
    pub inducing: usize,
    pub seed: u64,
    pub output: PathBuf,
}

impl ExperimentConfig {
    /// The published defaults for one experiment.
    pub fn defaults(experiment: Experiment) -> ResolvedConfig {
        match experiment {
            Experiment::Duffing => ResolvedConfig {
                experiment,
                variant: "standard".into(),
                m: 1,
                n_interior: 32,
                n_boundary: 0,
                collocation: Collocation {
                    scheme: GridScheme::Uniform,
                    size: vec![1000],
                },
                kernel_u: KernelChoice::Spec(
                    KernelSpec::rational_quadratic(vec![1.0]).expect("static kernel"),
                ),
                kernel_p: KernelChoice::Spec(
                    KernelSpec::rbf(vec![1.0, 1.0, 1.0]).expect("static kernel"),
                ),
                theta_u: 5e-8,
                theta_p: 1e-9,
                lambda: 1.0,
                mode: Mode::OneStepFull,
                inducing: 500,
                seed: 0,
                output: PathBuf::from("keql-out"),
            },
            Experiment::Burgers => ResolvedConfig {
                experiment,
                variant: "standard".into(),
                m: 1,
                n_interior: 60,
                n_boundary: 131,
                collocation: Collocation {
                    scheme: GridScheme::Chebyshev,
                    size: vec![26, 31],
                },
                kernel_u: KernelChoice::Rule("mle".into()),
                kernel_p: KernelChoice::Rule("auto".into()),
                theta_u: 1e-9,
                theta_p: 1e-11,
                lambda: 1.0,
                mode: Mode::OneStepFull,
                inducing: 806,
                seed: 0,
                output: PathBuf::from("keql-out"),
            },
            Experiment::Darcy => ResolvedConfig {
                experiment,
                variant: "standard".into(),
                m: 8,
                n_interior: 2,
                n_boundary: 56,
                collocation: Collocation {
                    scheme: GridScheme::Uniform,
                    size: vec![15, 15],
                },
                kernel_u: KernelChoice::Spec(
                    KernelSpec::rbf(vec![0.25, 0.25]).expect("static kernel"),
                ),
                kernel_p: KernelChoice::Rule("auto".into()),
                theta_u: 5e-12,
                theta_p: 1e-12,
                lambda: 1.0,
                mode: Mode::OneStepReduced,
                inducing: 200,
                seed: 0,
                output: PathBuf::from("keql-out"),
            },
        }
    }

    /// Fill in defaults and validate. Every error names the offending JSON
    /// field.
    pub fn resolve(&self) -> Result<ResolvedConfig, CliError> {
        let mut r = Self::defaults(self.experiment);
        if let Some(v) = &self.variant {
            r.variant = v.clone();
        }
        if let Some(m) = self.m {
            r.m = m;
        }
        if let Some(n) = self.n_interior {
            r.n_interior = n;
        }
        if let Some(n) = self.n_boundary {
            r.n_boundary = n;
        }
        if let Some(c) = &self.collocation {
            r.collocation = c.clone();
        }
        if let Some(k) = &self.kernel_u {
            r.kernel_u = k.clone();
        }
        if let Some(k) = &self.kernel_p {
            r.kernel_p = k.clone();
        }
        if let Some(t) = self.theta_u {
            r.theta_u = t;
        }
        if let Some(t) = self.theta_p {
            r.theta_p = t;
        }
        if let Some(l) = self.lambda {
            r.lambda = l;
        }
        if let Some(m) = self.mode {
            r.mode = m;
        }
        if let Some(i) = self.inducing {
            r.inducing = i;
        }
        if let Some(s) = self.seed {
            r.seed = s;
        }
        if let Some(o) = &self.output {
            r.output = o.clone();
        }
        r.validate()?;
        Ok(r)
    }
}

impl ResolvedConfig {
    fn validate(&self) -> Result<(), CliError> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(CliError::Config(format!("field `{name}` must be positive")))
            } else {
                Ok(())
            }
        };
        positive("m", self.m)?;
        positive("inducing", self.inducing)?;
        if self.collocation.size.is_empty() || self.collocation.size.iter().any(|&s| s < 2) {
            return Err(CliError::Config(
                "field `collocation.size` must list at least 2 nodes per dimension".into(),
            ));
        }
        let expected_dim = match self.experiment {
            Experiment::Duffing => 1,
            Experiment::Burgers | Experiment::Darcy => 2,
        };
        if self.collocation.size.len() != expected_dim {
            return Err(CliError::Config(format!(
                "field `collocation.size` must have {expected_dim} entries for {}",
                self.experiment.name()
            )));
        }
        if self.n_interior == 0 && self.n_boundary == 0 {
            return Err(CliError::Config(
                "fields `n_interior` and `n_boundary` cannot both be zero".into(),
            ));
        }
        let k = self.collocation.total();
        if self.n_interior + self.n_boundary > k {
            return Err(CliError::Config(format!(
                "fields `n_interior` + `n_boundary` ({} + {}) exceed the collocation size {k}",
                self.n_interior, self.n_boundary
            )));
        }
        for (name, v) in [
            ("theta_u", self.theta_u),
            ("theta_p", self.theta_p),
            ("lambda", self.lambda),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CliError::Config(format!(
                    "field `{name}` must be a positive finite number"
                )));
            }
        }
        match self.experiment {
            Experiment::Burgers => {
                if !["standard", "shock", "one_shot"].contains(&self.variant.as_str()) {
                    return Err(CliError::Config(
                        "field `variant` must be one of standard, shock, one_shot".into(),
                    ));
                }
            }
            _ if self.variant != "standard" => {
                return Err(CliError::Config(format!(
                    "field `variant` is only configurable for burgers, got `{}`",
                    self.variant
                )));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Parse a config file, reporting missing or malformed fields by name.
pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))
}
