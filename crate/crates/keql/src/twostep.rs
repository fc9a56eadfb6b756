//! Sequential recovery: first interpolate each observed function, then learn
//! the equation from the interpolants' feature clouds.
//!
//! Both stages are linear solves. Stage one smooths or interpolates each
//! observation set with the solution kernel; stage two evaluates the feature
//! map of every fitted interpolant on the collocation grid and regresses the
//! right-hand side (minus the known part) onto the equation kernel over the
//! pooled feature cloud. The result doubles as the initial guess, inducing
//! point source, and hyperparameter reference for the joint fit.

use std::sync::Arc;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gram::{cross_points, gram_points, solve_psd};
use crate::kernels::KernelSpec;
use crate::operators::{
    feature_map, known_part_values, Basis, DiffOperatorSet, FeaturePoint, KnownPart,
    SolutionModel,
};

/// A shared, evaluable right-hand side function.
pub type RhsFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Observations of one function: points, values, and the evaluable
/// right-hand side paired with it.
#[derive(Clone)]
pub struct ObservationSet {
    /// Position of this function among the training functions.
    pub index: usize,
    /// Observation points, interior entries first.
    pub points: Vec<Vec<f64>>,
    /// How many leading entries of `points` are interior points.
    pub interior_count: usize,
    /// Observed values, aligned with `points`.
    pub values: Array1<f64>,
    /// The right-hand side, evaluable anywhere on the domain.
    pub rhs: RhsFn,
}

impl std::fmt::Debug for ObservationSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObservationSet")
            .field("index", &self.index)
            .field("points", &self.points.len())
            .field("interior_count", &self.interior_count)
            .finish()
    }
}

impl ObservationSet {
    /// Validate and build an observation set.
    pub fn new(
        index: usize,
        points: Vec<Vec<f64>>,
        interior_count: usize,
        values: Array1<f64>,
        rhs: RhsFn,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("observation points"));
        }
        if points.len() != values.len() {
            return Err(Error::DimensionMismatch {
                context: "observation values",
                expected: points.len(),
                got: values.len(),
            });
        }
        if interior_count > points.len() {
            return Err(Error::InvalidArgument(format!(
                "interior count {interior_count} exceeds {} observation points",
                points.len()
            )));
        }
        let d = points[0].len();
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::InvalidSpec(
                "observation points have inconsistent dimensions".into(),
            ));
        }
        Ok(ObservationSet {
            index,
            points,
            interior_count,
            values,
            rhs,
        })
    }

    /// Sample the right-hand side on a grid.
    pub fn rhs_on(&self, grid: &[Vec<f64>]) -> Array1<f64> {
        Array1::from_iter(grid.iter().map(|y| (self.rhs)(y)))
    }
}

/// The learned equation: a kernel expansion over inducing feature points plus
/// the fixed known part.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EquationModel {
    kernel: KernelSpec,
    inducing: Vec<Vec<f64>>,
    beta: Vec<f64>,
    known: KnownPart,
    point_dim: usize,
}

impl EquationModel {
    /// Validate and build an equation model.
    pub fn new(
        kernel: KernelSpec,
        inducing: Vec<Vec<f64>>,
        beta: Array1<f64>,
        known: KnownPart,
        point_dim: usize,
    ) -> Result<Self> {
        if inducing.is_empty() {
            return Err(Error::Empty("inducing feature points"));
        }
        if inducing.len() != beta.len() {
            return Err(Error::DimensionMismatch {
                context: "equation coefficients vs inducing points",
                expected: inducing.len(),
                got: beta.len(),
            });
        }
        let s_dim = inducing[0].len();
        if kernel.input_dim() != s_dim {
            return Err(Error::DimensionMismatch {
                context: "equation kernel input dimension",
                expected: s_dim,
                got: kernel.input_dim(),
            });
        }
        if point_dim >= s_dim {
            return Err(Error::InvalidArgument(format!(
                "point dimension {point_dim} must be smaller than feature dimension {s_dim}"
            )));
        }
        if inducing.iter().any(|s| s.len() != s_dim) {
            return Err(Error::InvalidSpec(
                "inducing feature points have inconsistent dimensions".into(),
            ));
        }
        Ok(EquationModel {
            kernel,
            inducing,
            beta: beta.to_vec(),
            known,
            point_dim,
        })
    }

    /// The equation kernel.
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    /// The inducing feature points.
    pub fn inducing(&self) -> &[Vec<f64>] {
        &self.inducing
    }

    /// The expansion coefficients.
    pub fn beta(&self) -> Array1<f64> {
        Array1::from(self.beta.clone())
    }

    /// The known part of the operator.
    pub fn known(&self) -> &KnownPart {
        &self.known
    }

    /// Leading coordinates of a feature point that are domain coordinates.
    pub fn point_dim(&self) -> usize {
        self.point_dim
    }

    /// The same model with new coefficients.
    pub fn with_beta(&self, beta: Array1<f64>) -> Result<Self> {
        EquationModel::new(
            self.kernel.clone(),
            self.inducing.clone(),
            beta,
            self.known.clone(),
            self.point_dim,
        )
    }

    /// Evaluate the learned (unknown) part at one feature point.
    pub fn eval(&self, s: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for (b, si) in self.beta.iter().zip(&self.inducing) {
            acc += b * self.kernel.eval(si, s)?;
        }
        Ok(acc)
    }

    /// Evaluate the learned part at many feature points.
    pub fn eval_many<T: AsRef<[f64]>>(&self, points: &[T]) -> Result<Array1<f64>> {
        let cross = cross_points(&self.kernel, &self.inducing, points)?;
        Ok(cross.t().dot(&Array1::from(self.beta.clone())))
    }

    /// Gradient of the learned part with respect to the feature coordinates.
    pub fn grad(&self, s: &[f64]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; s.len()];
        for (b, si) in self.beta.iter().zip(&self.inducing) {
            let g = self.kernel.grad_second_arg(si, s)?;
            for (a, gi) in acc.iter_mut().zip(g) {
                *a += b * gi;
            }
        }
        Ok(acc)
    }
}

/// Output of the sequential fit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TwoStepResult {
    /// One fitted interpolant per observed function.
    pub models: Vec<SolutionModel>,
    /// The equation learned from the pooled feature cloud.
    pub equation: EquationModel,
    /// Smoothing nugget used for the interpolants.
    pub nugget_u: f64,
    /// Nugget used for the equation recovery.
    pub nugget_p: f64,
}

/// Fit one function by kernel smoothing of its observations. With a zero
/// nugget this interpolates the data exactly (up to the jitter needed to
/// factor the Gram matrix).
pub fn fit_interpolant(
    obs: &ObservationSet,
    kernel: &KernelSpec,
    ops: &DiffOperatorSet,
    nugget: f64,
) -> Result<SolutionModel> {
    if !(nugget >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "smoothing nugget must be nonnegative, got {nugget}"
        )));
    }
    let mut gram = gram_points(kernel, &obs.points)?;
    for i in 0..gram.nrows() {
        gram[(i, i)] += nugget;
    }
    let alpha = solve_psd(&gram, &obs.values)?;
    SolutionModel::new(
        Basis::Reduced,
        obs.points.clone(),
        kernel.clone(),
        ops.clone(),
        alpha,
    )
}

/// Learn the equation from fitted interpolants: pool the feature clouds over
/// the collocation grid and regress `f - known part` onto the equation
/// kernel. The inducing set of the returned model is the full pooled cloud.
pub fn fit_equation_2step(
    models: &[SolutionModel],
    grid: &[Vec<f64>],
    f_values: &[Array1<f64>],
    kernel: &KernelSpec,
    nugget: f64,
    known: &KnownPart,
) -> Result<EquationModel> {
    if models.is_empty() {
        return Err(Error::Empty("interpolant list"));
    }
    if grid.is_empty() {
        return Err(Error::Empty("collocation grid"));
    }
    if models.len() != f_values.len() {
        return Err(Error::DimensionMismatch {
            context: "right-hand sides vs interpolants",
            expected: models.len(),
            got: f_values.len(),
        });
    }
    let k = grid.len();
    let mut cloud: Vec<Vec<f64>> = Vec::with_capacity(models.len() * k);
    let mut rhs = Array1::zeros(models.len() * k);
    for (m, model) in models.iter().enumerate() {
        if f_values[m].len() != k {
            return Err(Error::DimensionMismatch {
                context: "right-hand side sampled on the collocation grid",
                expected: k,
                got: f_values[m].len(),
            });
        }
        let features = feature_map(model, grid)?;
        let known_vals = known_part_values(known, model, grid)?;
        for (i, feat) in features.into_iter().enumerate() {
            cloud.push(feat.coords().to_vec());
            rhs[m * k + i] = f_values[m][i] - known_vals[i];
        }
    }
    let mut p_gram = gram_points(kernel, &cloud)?;
    for i in 0..p_gram.nrows() {
        p_gram[(i, i)] += nugget;
    }
    let beta = solve_psd(&p_gram, &rhs)?;
    EquationModel::new(
        kernel.clone(),
        cloud,
        beta,
        known.clone(),
        models[0].dim(),
    )
}

/// Run both stages with a shared kernel and nugget pair.
#[allow(clippy::too_many_arguments)]
pub fn fit_2step(
    observations: &[ObservationSet],
    grid: &[Vec<f64>],
    kernel_u: &KernelSpec,
    kernel_p: &KernelSpec,
    ops: &DiffOperatorSet,
    known: &KnownPart,
    nugget_u: f64,
    nugget_p: f64,
) -> Result<TwoStepResult> {
    if observations.is_empty() {
        return Err(Error::Empty("observation sets"));
    }
    let mut models = Vec::with_capacity(observations.len());
    let mut f_values = Vec::with_capacity(observations.len());
    for obs in observations {
        models.push(fit_interpolant(obs, kernel_u, ops, nugget_u)?);
        f_values.push(obs.rhs_on(grid));
    }
    let equation = fit_equation_2step(&models, grid, &f_values, kernel_p, nugget_p, known)?;
    Ok(TwoStepResult {
        models,
        equation,
        nugget_u,
        nugget_p,
    })
}

/// Data-derived shift and scaling for the state factor of a hybrid kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridDefaults {
    /// Per-coordinate mean of the state coordinates.
    pub shift: Vec<f64>,
    /// Per-coordinate inverse sample variance (diagonal scaling).
    pub scaling: Vec<f64>,
    /// State coordinates whose variance degenerated to zero; their scaling
    /// fell back to one.
    pub degenerate: Vec<usize>,
}

/// Compute [`HybridDefaults`] directly from a pooled feature cloud.
pub fn hybrid_defaults_from_features(features: &[FeaturePoint]) -> Result<HybridDefaults> {
    if features.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "hybrid defaults need at least 2 feature points, got {}",
            features.len()
        )));
    }
    let q = features[0].state().len();
    let n = features.len() as f64;
    let mut shift = vec![0.0; q];
    for f in features {
        for (s, v) in shift.iter_mut().zip(f.state()) {
            *s += v;
        }
    }
    for s in shift.iter_mut() {
        *s /= n;
    }
    let mut scaling = vec![0.0; q];
    let mut degenerate = Vec::new();
    for j in 0..q {
        // Unbiased sample variance with the n-1 divisor.
        let var: f64 = features
            .iter()
            .map(|f| {
                let d = f.state()[j] - shift[j];
                d * d
            })
            .sum::<f64>()
            / (n - 1.0);
        if var <= 1e-24 * (1.0 + shift[j] * shift[j]) {
            scaling[j] = 1.0;
            degenerate.push(j);
        } else {
            scaling[j] = 1.0 / var;
        }
    }
    Ok(HybridDefaults {
        shift,
        scaling,
        degenerate,
    })
}

/// Compute [`HybridDefaults`] from the pooled feature clouds of fitted
/// interpolants over a grid.
pub fn hybrid_defaults(models: &[SolutionModel], grid: &[Vec<f64>]) -> Result<HybridDefaults> {
    let mut features = Vec::with_capacity(models.len() * grid.len());
    for model in models {
        features.extend(feature_map(model, grid)?);
    }
    hybrid_defaults_from_features(&features)
}
