//! Solving a learned equation for new data: the solution-operator step.
//!
//! Given an equation (learned or analytic), a target right-hand side on a
//! collocation grid, and boundary or initial observations, recover the
//! solution as the minimiser of
//!
//! ```text
//! ||v||^2 + ||v at boundary - g||^2 / (2 sigma_b^2)
//!        + ||equation(v) on grid - f||^2 / (2 sigma_f^2)
//! ```
//!
//! over the span of the kernel at the grid and boundary points. The equation
//! coefficients stay frozen; only the solution coefficients move, driven by
//! the same damped least-squares rules as the joint fit.

use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::gram::{
    chol_default, cross_gram, gram_points, solve_psd, tri_solve_lower, tri_solve_lower_t_vec,
};
use crate::kernels::{KernelSpec, MultiIndex};
use crate::onestep::{update_damping, HistoryRow, LMConfig, Termination};
use crate::operators::{
    feature_jacobian, known_part_matrix, Basis, DiffFunctional, DiffOperatorSet, KnownPart,
    SolutionModel,
};
use crate::twostep::EquationModel;

/// A scalar function of a feature point.
pub type FeatureFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Gradient of a scalar function of a feature point.
pub type FeatureGradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// An equation given in closed form, for solver checks against manufactured
/// problems. The gradient is taken with respect to the feature coordinates;
/// only the state entries (after the leading domain coordinates) are used.
#[derive(Clone)]
pub struct AnalyticEquation {
    /// The nonlinear part as a function of a feature point.
    pub eval: FeatureFn,
    /// Its gradient with respect to the feature coordinates.
    pub grad: FeatureGradFn,
    /// The linear part applied outside the feature map.
    pub known: KnownPart,
    /// Feature dimension, domain plus state coordinates.
    pub feature_dim: usize,
}

impl std::fmt::Debug for AnalyticEquation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnalyticEquation")
            .field("feature_dim", &self.feature_dim)
            .field("known", &self.known)
            .finish()
    }
}

/// The equation to solve: learned coefficients or a closed form.
#[derive(Clone, Debug)]
pub enum EquationFn {
    /// A learned kernel expansion with frozen coefficients.
    Learned(EquationModel),
    /// A closed-form equation.
    Analytic(AnalyticEquation),
}

impl EquationFn {
    /// The nonlinear part at one feature point.
    pub fn eval(&self, s: &[f64]) -> Result<f64> {
        match self {
            EquationFn::Learned(m) => m.eval(s),
            EquationFn::Analytic(a) => Ok((a.eval)(s)),
        }
    }

    /// Gradient of the nonlinear part with respect to the feature
    /// coordinates.
    pub fn grad(&self, s: &[f64]) -> Result<Vec<f64>> {
        match self {
            EquationFn::Learned(m) => m.grad(s),
            EquationFn::Analytic(a) => {
                let g = (a.grad)(s);
                if g.len() != s.len() {
                    return Err(Error::DimensionMismatch {
                        context: "analytic equation gradient",
                        expected: s.len(),
                        got: g.len(),
                    });
                }
                Ok(g)
            }
        }
    }

    /// The linear part applied outside the feature map.
    pub fn known(&self) -> &KnownPart {
        match self {
            EquationFn::Learned(m) => m.known(),
            EquationFn::Analytic(a) => &a.known,
        }
    }

    /// Feature dimension the equation expects.
    pub fn feature_dim(&self) -> usize {
        match self {
            EquationFn::Learned(m) => m.inducing()[0].len(),
            EquationFn::Analytic(a) => a.feature_dim,
        }
    }
}

/// One boundary or initial observation: a derivative of the solution at a
/// point, with its target value. The identity derivative is a plain point
/// value.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryCondition {
    /// Where the condition applies.
    pub point: Vec<f64>,
    /// Which derivative is observed.
    pub op: MultiIndex,
    /// The observed value.
    pub value: f64,
}

impl BoundaryCondition {
    /// A point-value condition.
    pub fn value_at(point: Vec<f64>, value: f64) -> Self {
        let dim = point.len();
        BoundaryCondition {
            point,
            op: MultiIndex::zero(dim),
            value,
        }
    }

    /// A derivative condition.
    pub fn derivative_at(point: Vec<f64>, op: MultiIndex, value: f64) -> Self {
        BoundaryCondition { point, op, value }
    }
}

/// Penalty nuggets for the boundary and equation blocks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltyWeights {
    /// Boundary-residual nugget.
    pub sigma_b_sq: f64,
    /// Equation-residual nugget.
    pub sigma_f_sq: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        PenaltyWeights {
            sigma_b_sq: 1e-8,
            sigma_f_sq: 1e-8,
        }
    }
}

impl PenaltyWeights {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_b_sq", self.sigma_b_sq),
            ("sigma_f_sq", self.sigma_f_sq),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "penalty weight {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Everything one solve needs: the equation, the target data, the kernel and
/// feature operators, and the solver settings.
#[derive(Clone, Debug)]
pub struct SolveSpec {
    /// The equation to satisfy.
    pub equation: EquationFn,
    /// Solution kernel.
    pub kernel: KernelSpec,
    /// Operators feeding the feature map.
    pub ops: DiffOperatorSet,
    /// Collocation grid where the equation residual is enforced.
    pub grid: Vec<Vec<f64>>,
    /// Target right-hand side on the grid.
    pub f_values: Array1<f64>,
    /// Boundary and initial observations; may be empty for problems that do
    /// not need them.
    pub boundary: Vec<BoundaryCondition>,
    /// Penalty nuggets.
    pub weights: PenaltyWeights,
    /// Damped least-squares settings.
    pub config: LMConfig,
}

impl SolveSpec {
    fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Empty("collocation grid"));
        }
        let d = self.ops.dim();
        if self.grid.iter().any(|y| y.len() != d) {
            return Err(Error::InvalidSpec(
                "collocation grid dimension does not match the operator set".into(),
            ));
        }
        if self.kernel.input_dim() != d {
            return Err(Error::DimensionMismatch {
                context: "solution kernel input dimension",
                expected: d,
                got: self.kernel.input_dim(),
            });
        }
        if self.f_values.len() != self.grid.len() {
            return Err(Error::DimensionMismatch {
                context: "target values vs collocation grid",
                expected: self.grid.len(),
                got: self.f_values.len(),
            });
        }
        let expected = d + self.ops.q();
        if self.equation.feature_dim() != expected {
            return Err(Error::DimensionMismatch {
                context: "equation feature dimension",
                expected,
                got: self.equation.feature_dim(),
            });
        }
        for bc in &self.boundary {
            if bc.point.len() != d || bc.op.dim() != d {
                return Err(Error::InvalidSpec(
                    "boundary condition dimension does not match the domain".into(),
                ));
            }
        }
        self.weights.validate()
    }
}

/// Result of one solve: the recovered solution, convergence diagnostics, and
/// the relative equation residual at the solution.
#[derive(Clone, Debug)]
pub struct PdeSolveResult {
    /// The recovered solution.
    pub model: SolutionModel,
    /// Final objective value.
    pub objective: f64,
    /// Attempts made.
    pub iteration: usize,
    /// One row per attempted step.
    pub history: Vec<HistoryRow>,
    /// Why the driver stopped.
    pub termination: Termination,
    /// Relative equation residual at the solution, against the target norm
    /// (absolute when the target is zero).
    pub pde_residual: f64,
}

/// State-independent pieces of the solve, assembled once.
struct Assembled {
    basis: Vec<Vec<f64>>,
    chol: Array2<f64>,
    /// Boundary rows against the transformed coefficients, pre-scaled.
    o_tilde: Array2<f64>,
    o_gram: Array2<f64>,
    g_scaled: Array1<f64>,
    /// Derivative features as a linear map of the transformed coefficients.
    t_tilde: Array2<f64>,
    /// Known-part rows, pre-scaled. `None` when the known part is zero.
    r_tilde: Option<Array2<f64>>,
    f_scaled: Array1<f64>,
    cf_sqrt: f64,
}

fn assemble(spec: &SolveSpec) -> Result<Assembled> {
    let mut basis = spec.grid.clone();
    for bc in &spec.boundary {
        if !basis.iter().any(|x| x == &bc.point) {
            basis.push(bc.point.clone());
        }
    }
    let (chol, _) = chol_default(&gram_points(&spec.kernel, &basis)?)?;

    let cb_sqrt = (0.5 / spec.weights.sigma_b_sq).sqrt();
    let cf_sqrt = (0.5 / spec.weights.sigma_f_sq).sqrt();

    let n = basis.len();
    let n_b = spec.boundary.len();
    let (o_tilde, g_scaled) = if n_b == 0 {
        (Array2::zeros((0, n)), Array1::zeros(0))
    } else {
        let b_points: Vec<Vec<f64>> = spec.boundary.iter().map(|bc| bc.point.clone()).collect();
        let functionals: Vec<DiffFunctional> = spec
            .boundary
            .iter()
            .enumerate()
            .map(|(i, bc)| DiffFunctional {
                point: i,
                op: bc.op.clone(),
            })
            .collect();
        // Rows apply each boundary functional to the basis expansions.
        let vb = cross_gram(&spec.kernel, &functionals, &b_points, &basis)?;
        let mut o = tri_solve_lower(&chol, &vb.t().to_owned())?.t().to_owned();
        o *= cb_sqrt;
        let g = Array1::from(spec.boundary.iter().map(|bc| bc.value).collect::<Vec<_>>());
        (o, g * cb_sqrt)
    };
    let o_gram = o_tilde.t().dot(&o_tilde);

    let template = SolutionModel::new(
        Basis::Reduced,
        basis.clone(),
        spec.kernel.clone(),
        spec.ops.clone(),
        Array1::zeros(n),
    )?;
    let t = feature_jacobian(&template, &spec.grid)?;
    let t_tilde = tri_solve_lower(&chol, &t.t().to_owned())?.t().to_owned();

    let known = spec.equation.known();
    let r_tilde = if known.is_zero() {
        None
    } else {
        let r = known_part_matrix(known, &template, &spec.grid)?;
        let mut rt = tri_solve_lower(&chol, &r.t().to_owned())?.t().to_owned();
        rt *= cf_sqrt;
        Some(rt)
    };

    Ok(Assembled {
        basis,
        chol,
        o_tilde,
        o_gram,
        g_scaled,
        t_tilde,
        r_tilde,
        f_scaled: &spec.f_values * cf_sqrt,
        cf_sqrt,
    })
}

impl Assembled {
    fn features(&self, spec: &SolveSpec, w: &Array1<f64>) -> Vec<Vec<f64>> {
        let states = self.t_tilde.dot(w);
        let k = spec.grid.len();
        let q = spec.ops.q();
        spec.grid
            .iter()
            .enumerate()
            .map(|(i, y)| {
                let mut coords = Vec::with_capacity(y.len() + q);
                coords.extend_from_slice(y);
                for qi in 0..q {
                    coords.push(states[qi * k + i]);
                }
                coords
            })
            .collect()
    }

    fn residuals(&self, spec: &SolveSpec, w: &Array1<f64>) -> Result<ResidualParts> {
        let features = self.features(spec, w);
        let mut rp = Array1::zeros(features.len());
        for (i, s) in features.iter().enumerate() {
            rp[i] = self.cf_sqrt * spec.equation.eval(s)?;
        }
        if let Some(rt) = &self.r_tilde {
            rp += &rt.dot(w);
        }
        rp -= &self.f_scaled;
        let rb = self.o_tilde.dot(w) - &self.g_scaled;
        Ok(ResidualParts { rb, rp, features })
    }

    fn pde_jacobian(&self, spec: &SolveSpec, features: &[Vec<f64>]) -> Result<Array2<f64>> {
        let k = features.len();
        let d = spec.ops.dim();
        let q = spec.ops.q();
        let n = self.basis.len();
        let mut jp = Array2::zeros((k, n));
        for (i, s) in features.iter().enumerate() {
            let grad = spec.equation.grad(s)?;
            let mut row = jp.row_mut(i);
            for qi in 0..q {
                let c = self.cf_sqrt * grad[d + qi];
                if c != 0.0 {
                    row.scaled_add(c, &self.t_tilde.row(qi * k + i));
                }
            }
        }
        if let Some(rt) = &self.r_tilde {
            jp += rt;
        }
        Ok(jp)
    }
}

/// Boundary and equation residuals at one iterate, with the feature points
/// the equation was evaluated at.
struct ResidualParts {
    rb: Array1<f64>,
    rp: Array1<f64>,
    features: Vec<Vec<f64>>,
}

fn sq_norm(v: &Array1<f64>) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Recover the solution of the spec's equation by penalized optimal
/// recovery, reporting the final residual alongside the model. A run that
/// stops on the attempt budget or the rejection cap still returns its best
/// iterate; the termination field says what happened.
pub fn solve_learned_pde(spec: &SolveSpec) -> Result<PdeSolveResult> {
    spec.validate()?;
    let config = &spec.config;
    let a = assemble(spec)?;
    let n = a.basis.len();

    // Initial iterate: ridge fit of the boundary data alone, which is the
    // zero function when there is none.
    let mut normal0 = a.o_gram.clone();
    for i in 0..n {
        normal0[(i, i)] += 1.0;
    }
    let mut w = solve_psd(&normal0, &a.o_tilde.t().dot(&a.g_scaled))?;

    let ResidualParts {
        mut rb,
        mut rp,
        features: mut feats,
    } = a.residuals(spec, &w)?;
    let mut objective = sq_norm(&w) + sq_norm(&rb) + sq_norm(&rp);
    let mut damping = config.damping_init;
    let mut history = Vec::new();
    let mut iteration = 0;
    let mut termination = None;
    let mut rejects = 0usize;
    let mut jp = a.pde_jacobian(spec, &feats)?;
    let mut base = &a.o_gram + &jp.t().dot(&jp);
    let mut rhs = -(a.o_tilde.t().dot(&rb)) - &jp.t().dot(&rp) - &w;

    for iter in 1..=config.max_iters {
        let mut normal = base.clone();
        for i in 0..n {
            normal[(i, i)] += 1.0 + damping;
        }
        let delta = solve_psd(&normal, &rhs)?;
        if sq_norm(&delta).sqrt() <= config.step_tol {
            termination = Some(Termination::StepTolerance);
            break;
        }
        let cand = &w + &delta;
        let cparts = a.residuals(spec, &cand)?;
        let cand_obj = sq_norm(&cand) + sq_norm(&cparts.rb) + sq_norm(&cparts.rp);
        let ob_dir = a.o_tilde.dot(&delta);
        let jp_dir = jp.dot(&delta);
        let predicted = 2.0 * w.dot(&delta)
            + sq_norm(&delta)
            + 2.0 * rb.dot(&ob_dir)
            + sq_norm(&ob_dir)
            + 2.0 * rp.dot(&jp_dir)
            + sq_norm(&jp_dir);
        let rho = if predicted < 0.0 && cand_obj.is_finite() {
            Some((cand_obj - objective) / predicted)
        } else {
            None
        };
        let (new_damping, accepted) = update_damping(damping, rho, config);
        history.push(HistoryRow {
            iter,
            objective: if accepted { cand_obj } else { objective },
            rho: rho.unwrap_or(f64::NAN),
            lambda: damping,
            accepted,
        });
        iteration = iter;
        damping = new_damping;
        if accepted {
            let previous = objective;
            w = cand;
            rb = cparts.rb;
            rp = cparts.rp;
            feats = cparts.features;
            objective = cand_obj;
            rejects = 0;
            if previous - cand_obj <= config.objective_tol * previous.abs().max(f64::MIN_POSITIVE)
            {
                termination = Some(Termination::ObjectiveTolerance);
                break;
            }
            jp = a.pde_jacobian(spec, &feats)?;
            base = &a.o_gram + &jp.t().dot(&jp);
            rhs = -(a.o_tilde.t().dot(&rb)) - &jp.t().dot(&rp) - &w;
        } else {
            rejects += 1;
            if rejects >= config.max_rejections {
                termination = Some(Termination::RejectionCap);
                break;
            }
        }
    }
    let termination = termination.unwrap_or(Termination::MaxIterations);

    let alpha = tri_solve_lower_t_vec(&a.chol, &w)?;
    let model = SolutionModel::new(
        Basis::Reduced,
        a.basis.clone(),
        spec.kernel.clone(),
        spec.ops.clone(),
        alpha,
    )?;
    let f_norm = sq_norm(&a.f_scaled).sqrt();
    let r_norm = sq_norm(&rp).sqrt();
    let pde_residual = if f_norm > 0.0 {
        r_norm / f_norm
    } else {
        r_norm / a.cf_sqrt
    };
    Ok(PdeSolveResult {
        model,
        objective,
        iteration,
        history,
        termination,
        pde_residual,
    })
}

/// Simulate a time-dependent equation from new initial conditions: the
/// initial value and slope enter as observation functionals at the first
/// grid point, replacing the spec's boundary set, and the trajectory is
/// recovered by [`solve_learned_pde`].
pub fn forecast_ode(
    mut spec: SolveSpec,
    init_value: f64,
    init_slope: f64,
) -> Result<PdeSolveResult> {
    if spec.ops.dim() != 1 {
        return Err(Error::InvalidSpec(
            "forecasting needs a one-dimensional time domain".into(),
        ));
    }
    if spec.grid.is_empty() {
        return Err(Error::Empty("collocation grid"));
    }
    let t0 = spec.grid[0].clone();
    spec.boundary = vec![
        BoundaryCondition::value_at(t0.clone(), init_value),
        BoundaryCondition::derivative_at(t0, MultiIndex::unit(1, 0), init_slope),
    ];
    solve_learned_pde(&spec)
}

/// Render a solution on a grid as CSV, one row per point: the coordinates
/// then the value.
pub fn field_csv(model: &SolutionModel, grid: &[Vec<f64>]) -> Result<String> {
    let d = model.dim();
    let mut out = String::new();
    for i in 0..d {
        out.push_str(&format!("x{},", i + 1));
    }
    out.push_str("value\n");
    let values = model.eval_many(grid)?;
    for (point, value) in grid.iter().zip(values.iter()) {
        for c in point {
            out.push_str(&format!("{c},"));
        }
        out.push_str(&format!("{value}\n"));
    }
    Ok(out)
}
