//! Joint recovery of the solutions and the equation by damped least squares.
//!
//! The joint fit couples one coefficient block per observed function with a
//! shared block of equation coefficients over a fixed inducing set. A
//! Cholesky change of variables turns both regularisers into plain squared
//! norms, leaving a nonlinear least-squares problem in the transformed
//! coordinates `(z, w^1, ..., w^M)`. A Levenberg-Marquardt driver with
//! gain-ratio damping solves it, one block-arrowhead linear system per step.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::gram::{
    arrowhead_solve, arrowhead_solve_svd, chol_default, cross_gram, cross_points,
    full_functional_list, gram_functionals, gram_points, nystrom_select, solve_psd,
    tri_solve_lower, tri_solve_lower_t_vec, tri_solve_lower_vec, ArrowheadSolution,
    ArrowheadSystem,
};
use crate::kernels::KernelSpec;
use crate::operators::{
    feature_jacobian, feature_map, known_part_matrix, Basis, DiffOperatorSet, FeaturePoint,
    KnownPart, SolutionModel,
};
use crate::twostep::{EquationModel, ObservationSet};

/// How the equation-residual nugget is derived from its sharpness parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PdeNuggetRule {
    /// Scale with the number of residuals over all functions.
    PerProblem,
    /// Scale with the inducing count alone.
    Pooled,
}

/// Weights of the joint objective
///
/// ```text
/// scale * ( ||z||^2 + lambda * sum_m ||w^m||^2
///           + sum_m ||obs residual^m||^2 / (2 sigma_u^2)
///           + sum_m ||pde residual^m||^2 / (2 sigma_P^2) )
/// ```
///
/// with the norm terms dropped entirely when `omit_rkhs_terms` is set.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveWeights {
    /// Weight of the solution-norm terms.
    pub lambda: f64,
    /// Observation-residual nugget.
    pub sigma_u_sq: f64,
    /// Equation-residual nugget.
    pub sigma_p_sq: f64,
    /// Drop the two norm terms, keeping only the residual blocks.
    pub omit_rkhs_terms: bool,
    /// Global multiplier on the whole objective.
    pub scale: f64,
}

impl ObjectiveWeights {
    /// Build from explicit nuggets.
    pub fn new(lambda: f64, sigma_u_sq: f64, sigma_p_sq: f64) -> Result<Self> {
        let weights = ObjectiveWeights {
            lambda,
            sigma_u_sq,
            sigma_p_sq,
            omit_rkhs_terms: false,
            scale: 1.0,
        };
        weights.validate()?;
        Ok(weights)
    }

    /// Derive the nuggets from looseness parameters: the observation nugget
    /// is the square root of the total observation count times `theta_u`,
    /// the equation nugget the square root of the residual count (per the
    /// chosen rule) times `theta_p`. Smaller theta means a tighter fit to
    /// that block of the data.
    pub fn from_theta(
        lambda: f64,
        theta_u: f64,
        theta_p: f64,
        total_obs: usize,
        problems: usize,
        inducing: usize,
        rule: PdeNuggetRule,
    ) -> Result<Self> {
        if !(theta_u > 0.0) || !(theta_p > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "looseness parameters must be positive, got theta_u={theta_u}, theta_p={theta_p}"
            )));
        }
        let sigma_u_sq = (total_obs as f64 * theta_u).sqrt();
        let pde_count = match rule {
            PdeNuggetRule::PerProblem => problems * inducing,
            PdeNuggetRule::Pooled => inducing,
        };
        let sigma_p_sq = (pde_count as f64 * theta_p).sqrt();
        ObjectiveWeights::new(lambda, sigma_u_sq, sigma_p_sq)
    }

    /// Drop the norm terms (boundary-data-only fits use this).
    pub fn without_rkhs_terms(mut self) -> Self {
        self.omit_rkhs_terms = true;
        self
    }

    /// Multiply the whole objective by `scale`.
    pub fn scaled(mut self, scale: f64) -> Result<Self> {
        self.scale = scale;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("sigma_u_sq", self.sigma_u_sq),
            ("sigma_p_sq", self.sigma_p_sq),
            ("scale", self.scale),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "objective weight {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Weight on each squared observation residual.
    fn obs_weight(&self) -> f64 {
        self.scale / (2.0 * self.sigma_u_sq)
    }

    /// Weight on each squared equation residual.
    fn pde_weight(&self) -> f64 {
        self.scale / (2.0 * self.sigma_p_sq)
    }

    /// Weight on `||z||^2`.
    fn z_weight(&self) -> f64 {
        if self.omit_rkhs_terms {
            0.0
        } else {
            self.scale
        }
    }

    /// Weight on each `||w^m||^2`.
    fn w_weight(&self) -> f64 {
        if self.omit_rkhs_terms {
            0.0
        } else {
            self.scale * self.lambda
        }
    }
}

/// The joint problem in transformed coordinates. All Gram factors, the
/// inducing set, and the constant pieces of the residual are precomputed at
/// build time; iterations touch only kernel evaluations between the inducing
/// set and the current feature cloud.
#[derive(Clone, Debug)]
pub struct OneStepProblem {
    grid: Vec<Vec<f64>>,
    ops: DiffOperatorSet,
    kernel_u: KernelSpec,
    kernel_p: KernelSpec,
    known: KnownPart,
    basis: Basis,
    weights: ObjectiveWeights,
    inducing: Vec<FeaturePoint>,
    chol_u: Array2<f64>,
    chol_p: Array2<f64>,
    /// Per function: observation matrix, pre-scaled by the root observation
    /// weight; maps w^m to the fitted values at the observation points.
    obs_mats: Vec<Array2<f64>>,
    /// Per function: observed values, pre-scaled the same way.
    obs_scaled: Vec<Array1<f64>>,
    /// Per function: right-hand side on the grid, scaled by the root
    /// equation weight.
    f_scaled: Vec<Array1<f64>>,
    /// Derivative features as a linear map of w. `None` in full mode, where
    /// the map coincides with the Cholesky factor of the functional Gram.
    t_tilde: Option<Array2<f64>>,
    /// Known-part rows as a linear map of w, scaled by the root equation
    /// weight. `None` when the known part is zero.
    r_tilde: Option<Array2<f64>>,
    /// Cached `obs_mat^T obs_mat` blocks for the normal equations.
    obs_gram: Vec<Array2<f64>>,
    /// Transformed coordinates of the interpolants the problem was built
    /// from; the default initialisation.
    init_w: Vec<Array1<f64>>,
}

impl OneStepProblem {
    /// Collocation grid.
    pub fn grid(&self) -> &[Vec<f64>] {
        &self.grid
    }

    /// Differential operators feeding the feature map.
    pub fn ops(&self) -> &DiffOperatorSet {
        &self.ops
    }

    /// Solution kernel.
    pub fn kernel_u(&self) -> &KernelSpec {
        &self.kernel_u
    }

    /// Equation kernel.
    pub fn kernel_p(&self) -> &KernelSpec {
        &self.kernel_p
    }

    /// Basis mode of the solution blocks.
    pub fn basis(&self) -> Basis {
        self.basis
    }

    /// Objective weights.
    pub fn weights(&self) -> &ObjectiveWeights {
        &self.weights
    }

    /// The fixed inducing feature set.
    pub fn inducing(&self) -> &[FeaturePoint] {
        &self.inducing
    }

    /// Number of observed functions.
    pub fn problem_count(&self) -> usize {
        self.obs_mats.len()
    }

    /// Collocation grid size.
    pub fn grid_len(&self) -> usize {
        self.grid.len()
    }

    /// Length of each solution coefficient block.
    pub fn coeff_len(&self) -> usize {
        self.chol_u.nrows()
    }

    /// Observation counts per function.
    pub fn obs_counts(&self) -> Vec<usize> {
        self.obs_scaled.iter().map(|v| v.len()).collect()
    }

    /// Lower Cholesky factor of the solution-basis Gram matrix.
    pub fn chol_u(&self) -> &Array2<f64> {
        &self.chol_u
    }

    /// Lower Cholesky factor of the inducing Gram matrix.
    pub fn chol_p(&self) -> &Array2<f64> {
        &self.chol_p
    }

    /// Map natural coefficients to the transformed coordinates.
    pub fn to_transformed(
        &self,
        alphas: &[Array1<f64>],
        beta: &Array1<f64>,
    ) -> Result<(Array1<f64>, Vec<Array1<f64>>)> {
        if alphas.len() != self.problem_count() {
            return Err(Error::DimensionMismatch {
                context: "coefficient blocks vs observed functions",
                expected: self.problem_count(),
                got: alphas.len(),
            });
        }
        let z = self.chol_p.t().dot(beta);
        let w = alphas
            .iter()
            .map(|a| self.chol_u.t().dot(a))
            .collect::<Vec<_>>();
        Ok((z, w))
    }

    /// Map transformed coordinates back to natural coefficients.
    pub fn to_natural(
        &self,
        z: &Array1<f64>,
        w: &[Array1<f64>],
    ) -> Result<(Vec<Array1<f64>>, Array1<f64>)> {
        self.check_state(z, w)?;
        let beta = tri_solve_lower_t_vec(&self.chol_p, z)?;
        let alphas = w
            .iter()
            .map(|wm| tri_solve_lower_t_vec(&self.chol_u, wm))
            .collect::<Result<Vec<_>>>()?;
        Ok((alphas, beta))
    }

    /// Rows of the linear map from w to the derivative features, ordered
    /// operator-major to match feature Jacobians.
    fn t_rows(&self) -> &Array2<f64> {
        self.t_tilde.as_ref().unwrap_or(&self.chol_u)
    }

    fn check_state(&self, z: &Array1<f64>, w: &[Array1<f64>]) -> Result<()> {
        if z.len() != self.inducing.len() {
            return Err(Error::DimensionMismatch {
                context: "equation coefficient block",
                expected: self.inducing.len(),
                got: z.len(),
            });
        }
        if w.len() != self.problem_count() {
            return Err(Error::DimensionMismatch {
                context: "solution coefficient blocks",
                expected: self.problem_count(),
                got: w.len(),
            });
        }
        for wm in w {
            if wm.len() != self.coeff_len() {
                return Err(Error::DimensionMismatch {
                    context: "solution coefficient block",
                    expected: self.coeff_len(),
                    got: wm.len(),
                });
            }
        }
        Ok(())
    }

    /// Feature cloud of one solution block at the current coordinates.
    fn features_for(&self, w: &Array1<f64>) -> Vec<Vec<f64>> {
        let states = self.t_rows().dot(w);
        let k = self.grid_len();
        let q = self.ops.q();
        let mut features = Vec::with_capacity(k);
        for (i, y) in self.grid.iter().enumerate() {
            let mut coords = Vec::with_capacity(y.len() + q);
            coords.extend_from_slice(y);
            for qi in 0..q {
                coords.push(states[qi * k + i]);
            }
            features.push(coords);
        }
        features
    }
}

/// Assemble the joint problem: fix the inducing set by subsampling the
/// feature clouds of the supplied interpolants, factor the Gram matrices,
/// and precompute every state-independent piece of the residual. The
/// interpolants, one per observation set, also seed the default
/// initialisation of the solution blocks.
#[allow(clippy::too_many_arguments)]
pub fn build_problem(
    observations: &[ObservationSet],
    interpolants: &[SolutionModel],
    grid: &[Vec<f64>],
    ops: &DiffOperatorSet,
    kernel_u: &KernelSpec,
    kernel_p: &KernelSpec,
    known: &KnownPart,
    basis: Basis,
    inducing_count: usize,
    weights: &ObjectiveWeights,
    seed: u64,
) -> Result<OneStepProblem> {
    if observations.is_empty() {
        return Err(Error::Empty("observation sets"));
    }
    if grid.is_empty() {
        return Err(Error::Empty("collocation grid"));
    }
    if interpolants.len() != observations.len() {
        return Err(Error::DimensionMismatch {
            context: "interpolants vs observation sets",
            expected: observations.len(),
            got: interpolants.len(),
        });
    }
    weights.validate()?;
    let d = ops.dim();
    if grid.iter().any(|y| y.len() != d) {
        return Err(Error::InvalidSpec(
            "collocation grid dimension does not match the operator set".into(),
        ));
    }
    if kernel_u.input_dim() != d {
        return Err(Error::DimensionMismatch {
            context: "solution kernel input dimension",
            expected: d,
            got: kernel_u.input_dim(),
        });
    }
    let q = ops.q();
    if kernel_p.input_dim() != d + q {
        return Err(Error::DimensionMismatch {
            context: "equation kernel input dimension",
            expected: d + q,
            got: kernel_p.input_dim(),
        });
    }
    for obs in observations {
        if obs.points[0].len() != d {
            return Err(Error::DimensionMismatch {
                context: "observation point dimension",
                expected: d,
                got: obs.points[0].len(),
            });
        }
    }

    // Inducing set: pool the interpolant feature clouds and subsample once.
    let mut cloud = Vec::with_capacity(observations.len() * grid.len());
    for model in interpolants {
        if model.ops() != ops {
            return Err(Error::InvalidSpec(
                "interpolant operator set does not match the problem".into(),
            ));
        }
        cloud.extend(feature_map(model, grid)?);
    }
    let inducing = nystrom_select(&cloud, inducing_count, seed)?;

    let p_coords: Vec<Vec<f64>> = inducing.iter().map(|s| s.coords().to_vec()).collect();
    let (chol_p, _) = chol_default(&gram_points(kernel_p, &p_coords)?)?;

    let k = grid.len();
    let functionals = full_functional_list(ops, k);
    let (chol_u, t_tilde) = match basis {
        Basis::Full => {
            let g = gram_functionals(kernel_u, &functionals, grid)?;
            let (l, _) = chol_default(&g)?;
            // In full mode the derivative features of w are exactly the rows
            // of the Cholesky factor, so no separate map is stored.
            (l, None)
        }
        Basis::Reduced => {
            let g = gram_points(kernel_u, grid)?;
            let (l, _) = chol_default(&g)?;
            let template = SolutionModel::new(
                Basis::Reduced,
                grid.to_vec(),
                kernel_u.clone(),
                ops.clone(),
                Array1::zeros(k),
            )?;
            let t = feature_jacobian(&template, grid)?;
            let t_tilde = tri_solve_lower(&l, &t.t().to_owned())?.t().to_owned();
            (l, Some(t_tilde))
        }
    };

    let cu_sqrt = weights.obs_weight().sqrt();
    let cp_sqrt = weights.pde_weight().sqrt();

    let mut obs_mats = Vec::with_capacity(observations.len());
    let mut obs_scaled = Vec::with_capacity(observations.len());
    let mut f_scaled = Vec::with_capacity(observations.len());
    let mut obs_gram = Vec::with_capacity(observations.len());
    for obs in observations {
        let cross = match basis {
            Basis::Full => cross_gram(kernel_u, &functionals, grid, &obs.points)?,
            Basis::Reduced => cross_points(kernel_u, grid, &obs.points)?,
        };
        let mut o = tri_solve_lower(&chol_u, &cross)?.t().to_owned();
        o *= cu_sqrt;
        obs_gram.push(o.t().dot(&o));
        obs_mats.push(o);
        obs_scaled.push(&obs.values * cu_sqrt);
        f_scaled.push(&obs.rhs_on(grid) * cp_sqrt);
    }

    let r_tilde = if known.is_zero() {
        None
    } else {
        let template = SolutionModel::new(
            basis,
            grid.to_vec(),
            kernel_u.clone(),
            ops.clone(),
            Array1::zeros(chol_u.nrows()),
        )?;
        let r = known_part_matrix(known, &template, grid)?;
        let mut rt = tri_solve_lower(&chol_u, &r.t().to_owned())?.t().to_owned();
        rt *= cp_sqrt;
        Some(rt)
    };

    // Default initialisation of the solution blocks: match the interpolant
    // values on the grid within the identity span of the basis.
    let mut init_w = Vec::with_capacity(interpolants.len());
    match basis {
        Basis::Reduced => {
            for model in interpolants {
                let vals = model.eval_many(grid)?;
                init_w.push(tri_solve_lower_vec(&chol_u, &vals)?);
            }
        }
        Basis::Full => {
            let (point_chol, _) = chol_default(&gram_points(kernel_u, grid)?)?;
            for model in interpolants {
                let vals = model.eval_many(grid)?;
                let head = solve_via(&point_chol, &vals)?;
                let mut alpha = Array1::zeros(q * k);
                alpha.slice_mut(ndarray::s![..k]).assign(&head);
                init_w.push(chol_u.t().dot(&alpha));
            }
        }
    }

    Ok(OneStepProblem {
        grid: grid.to_vec(),
        ops: ops.clone(),
        kernel_u: kernel_u.clone(),
        kernel_p: kernel_p.clone(),
        known: known.clone(),
        basis,
        weights: weights.clone(),
        inducing,
        chol_u,
        chol_p,
        obs_mats,
        obs_scaled,
        f_scaled,
        t_tilde,
        r_tilde,
        obs_gram,
        init_w,
    })
}

fn solve_via(l: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let y = tri_solve_lower_vec(l, b)?;
    tri_solve_lower_t_vec(l, &y)
}

/// Residual blocks and the state-dependent Jacobian pieces at one iterate.
struct Blocks {
    /// Observation residuals per function.
    r_obs: Vec<Array1<f64>>,
    /// Equation residuals per function.
    r_pde: Vec<Array1<f64>>,
    /// Equation rows against z, per function. Empty when not requested.
    jz: Vec<Array2<f64>>,
    /// Equation rows against w, per function. Empty when not requested.
    jw: Vec<Array2<f64>>,
}

impl OneStepProblem {
    fn eval_blocks(&self, z: &Array1<f64>, w: &[Array1<f64>], with_jacobian: bool) -> Result<Blocks> {
        self.check_state(z, w)?;
        let cp_sqrt = self.weights.pde_weight().sqrt();
        let gamma_s = tri_solve_lower_t_vec(&self.chol_p, z)? * cp_sqrt;
        let k = self.grid_len();
        let i_count = self.inducing.len();
        let q = self.ops.q();
        let d = self.ops.dim();

        let mut blocks = Blocks {
            r_obs: Vec::with_capacity(w.len()),
            r_pde: Vec::with_capacity(w.len()),
            jz: Vec::new(),
            jw: Vec::new(),
        };
        for (m, wm) in w.iter().enumerate() {
            blocks
                .r_obs
                .push(self.obs_mats[m].dot(wm) - &self.obs_scaled[m]);

            let features = self.features_for(wm);
            let mut g = Array2::zeros((k, i_count));
            let mut wgt = Array2::zeros((k, q));
            for (ki, feat) in features.iter().enumerate() {
                for (ii, s) in self.inducing.iter().enumerate() {
                    if with_jacobian {
                        let grad = self.kernel_p.grad_second_arg(s.coords(), feat)?;
                        g[(ki, ii)] = self.kernel_p.eval(s.coords(), feat)?;
                        for qi in 0..q {
                            wgt[(ki, qi)] += gamma_s[ii] * grad[d + qi];
                        }
                    } else {
                        g[(ki, ii)] = self.kernel_p.eval(s.coords(), feat)?;
                    }
                }
            }

            let mut r_pde = g.dot(&gamma_s) - &self.f_scaled[m];
            if let Some(rt) = &self.r_tilde {
                r_pde += &rt.dot(wm);
            }
            blocks.r_pde.push(r_pde);

            if with_jacobian {
                let mut jz = tri_solve_lower(&self.chol_p, &g.t().to_owned())?.t().to_owned();
                jz *= cp_sqrt;
                blocks.jz.push(jz);

                let t = self.t_rows();
                let mut jw = Array2::zeros((k, self.coeff_len()));
                for ki in 0..k {
                    let mut row = jw.row_mut(ki);
                    for qi in 0..q {
                        let c = wgt[(ki, qi)];
                        if c != 0.0 {
                            row.scaled_add(c, &t.row(qi * k + ki));
                        }
                    }
                }
                if let Some(rt) = &self.r_tilde {
                    jw += rt;
                }
                blocks.jw.push(jw);
            }
        }
        Ok(blocks)
    }
}

/// Stacked residual vector, blocks ordered per function as observation rows
/// followed by equation rows.
pub fn residual(problem: &OneStepProblem, z: &Array1<f64>, w: &[Array1<f64>]) -> Result<Array1<f64>> {
    let blocks = problem.eval_blocks(z, w, false)?;
    let total: usize = blocks
        .r_obs
        .iter()
        .zip(&blocks.r_pde)
        .map(|(a, b)| a.len() + b.len())
        .sum();
    let mut f = Array1::zeros(total);
    let mut at = 0;
    for m in 0..blocks.r_obs.len() {
        for v in [&blocks.r_obs[m], &blocks.r_pde[m]] {
            f.slice_mut(ndarray::s![at..at + v.len()]).assign(v);
            at += v.len();
        }
    }
    Ok(f)
}

/// The block-sparse Jacobian of the residual: per function, one block of
/// columns for z and one for w^m, rows matching the residual layout.
#[derive(Clone, Debug)]
pub struct JacobianBlocks {
    /// Columns against z per function, shape (N_m + K) x I.
    pub z: Vec<Array2<f64>>,
    /// Columns against w^m per function, shape (N_m + K) x coeff_len.
    pub w: Vec<Array2<f64>>,
}

/// Jacobian of the residual at the given coordinates.
pub fn jacobian(
    problem: &OneStepProblem,
    z: &Array1<f64>,
    w: &[Array1<f64>],
) -> Result<JacobianBlocks> {
    let blocks = problem.eval_blocks(z, w, true)?;
    let k = problem.grid_len();
    let i_count = problem.inducing.len();
    let mut out = JacobianBlocks {
        z: Vec::with_capacity(w.len()),
        w: Vec::with_capacity(w.len()),
    };
    for m in 0..w.len() {
        let n = problem.obs_scaled[m].len();
        let mut jz = Array2::zeros((n + k, i_count));
        jz.slice_mut(ndarray::s![n.., ..]).assign(&blocks.jz[m]);
        let mut jw = Array2::zeros((n + k, problem.coeff_len()));
        jw.slice_mut(ndarray::s![..n, ..]).assign(&problem.obs_mats[m]);
        jw.slice_mut(ndarray::s![n.., ..]).assign(&blocks.jw[m]);
        out.z.push(jz);
        out.w.push(jw);
    }
    Ok(out)
}

/// Objective value at the given coordinates.
pub fn objective(problem: &OneStepProblem, z: &Array1<f64>, w: &[Array1<f64>]) -> Result<f64> {
    let blocks = problem.eval_blocks(z, w, false)?;
    Ok(objective_from_blocks(problem, &blocks, z, w))
}

fn sq_norm(v: &Array1<f64>) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn objective_from_blocks(
    problem: &OneStepProblem,
    blocks: &Blocks,
    z: &Array1<f64>,
    w: &[Array1<f64>],
) -> f64 {
    let mut obj = problem.weights.z_weight() * sq_norm(z);
    let ww = problem.weights.w_weight();
    for m in 0..w.len() {
        obj += ww * sq_norm(&w[m]);
        obj += sq_norm(&blocks.r_obs[m]) + sq_norm(&blocks.r_pde[m]);
    }
    obj
}

/// Damped least-squares configuration: the damping adaptation constants, the
/// termination rules, and the subproblem solver.
#[derive(Clone, Debug, PartialEq)]
pub struct LMConfig {
    /// Initial damping.
    pub damping_init: f64,
    /// Damping adaptation multiplier, greater than one.
    pub multiplier: f64,
    /// Gain ratio below which a step is rejected.
    pub reject_below: f64,
    /// Gain ratio below which the damping grows.
    pub increase_below: f64,
    /// Gain ratio above which the damping shrinks.
    pub decrease_above: f64,
    /// Maximum number of attempted steps.
    pub max_iters: usize,
    /// Stop once the relative objective decrease of an accepted step falls
    /// below this.
    pub objective_tol: f64,
    /// Stop once the step norm falls below this.
    pub step_tol: f64,
    /// Abort after this many consecutive rejections.
    pub max_rejections: usize,
    /// How the normal equations are solved.
    pub solver: SubproblemSolver,
}

/// Linear solver for the normal equations of each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubproblemSolver {
    /// Block elimination with Cholesky factors, SVD only as a fallback.
    Cholesky,
    /// Dense least squares on the assembled system.
    Svd,
}

impl Default for LMConfig {
    fn default() -> Self {
        LMConfig {
            damping_init: 1.0,
            multiplier: 2.0,
            reject_below: 1e-4,
            increase_below: 0.25,
            decrease_above: 0.75,
            max_iters: 500,
            objective_tol: 1e-10,
            step_tol: 1e-10,
            max_rejections: 25,
            solver: SubproblemSolver::Cholesky,
        }
    }
}

impl LMConfig {
    fn validate(&self) -> Result<()> {
        if !(self.reject_below > 0.0)
            || !(self.reject_below < self.increase_below)
            || !(self.increase_below < self.decrease_above)
            || !(self.decrease_above < 1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "gain thresholds must satisfy 0 < {} < {} < {} < 1",
                self.reject_below, self.increase_below, self.decrease_above
            )));
        }
        if !(self.multiplier > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "damping multiplier must exceed one, got {}",
                self.multiplier
            )));
        }
        if !(self.damping_init >= 0.0) || self.max_iters == 0 || self.max_rejections == 0 {
            return Err(Error::InvalidArgument(
                "damping must be nonnegative, with at least one iteration and one rejection allowed"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// One attempted step of the driver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRow {
    /// Attempt number, starting at one.
    pub iter: usize,
    /// Objective after this attempt (unchanged on rejection).
    pub objective: f64,
    /// Gain ratio of the attempt; NaN when the predicted decrease was not
    /// positive.
    pub rho: f64,
    /// Damping used for the attempt.
    pub lambda: f64,
    /// Whether the step was accepted.
    pub accepted: bool,
}

impl HistoryRow {
    /// Column names of the CSV form.
    pub const CSV_HEADER: &'static str = "iter,objective,rho,lambda,accepted";

    /// One CSV line, full double precision.
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.iter, self.objective, self.rho, self.lambda, self.accepted
        )
    }
}

/// Why the driver stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    /// The relative objective decrease of an accepted step fell below the
    /// tolerance.
    ObjectiveTolerance,
    /// The proposed step was shorter than the tolerance.
    StepTolerance,
    /// The attempt budget ran out.
    MaxIterations,
    /// Too many consecutive rejections.
    RejectionCap,
}

/// Mutable state of the damped least-squares iteration.
#[derive(Clone, Debug)]
pub struct LMState {
    /// Equation coefficient block.
    pub z: Array1<f64>,
    /// Solution coefficient blocks.
    pub w: Vec<Array1<f64>>,
    /// Current damping.
    pub damping: f64,
    /// Objective at (z, w).
    pub objective: f64,
    /// Attempts made so far.
    pub iteration: usize,
    /// One row per attempt.
    pub history: Vec<HistoryRow>,
    /// Set when the driver stopped.
    pub termination: Option<Termination>,
}

impl LMState {
    /// Build a state at explicit coordinates, computing its objective.
    pub fn new(
        problem: &OneStepProblem,
        z: Array1<f64>,
        w: Vec<Array1<f64>>,
        damping: f64,
    ) -> Result<Self> {
        let objective = objective(problem, &z, &w)?;
        Ok(LMState {
            z,
            w,
            damping,
            objective,
            iteration: 0,
            history: Vec::new(),
            termination: None,
        })
    }
}

/// The default starting point: the interpolants the problem was built from,
/// with the equation block set to the minimiser of the objective in z alone
/// at those solution blocks.
pub fn default_init(problem: &OneStepProblem, damping: f64) -> Result<LMState> {
    let w = problem.init_w.clone();
    let blocks = problem.eval_blocks(&Array1::zeros(problem.inducing.len()), &w, true)?;
    let i_count = problem.inducing.len();
    let mut normal = Array2::zeros((i_count, i_count));
    let mut rhs = Array1::zeros(i_count);
    for m in 0..w.len() {
        // At z = 0 the equation residual is the constant part, so the
        // right-hand side regresses its negation onto the z columns.
        normal += &blocks.jz[m].t().dot(&blocks.jz[m]);
        rhs -= &blocks.jz[m].t().dot(&blocks.r_pde[m]);
    }
    let wz = problem.weights.z_weight();
    for i in 0..i_count {
        normal[(i, i)] += wz;
    }
    let z = solve_psd(&normal, &rhs)?;
    LMState::new(problem, z, w, damping)
}

/// Normal-equation blocks without the damping diagonal; reusable across
/// rejected attempts at the same iterate.
struct NormalCache {
    a: Array2<f64>,
    b: Vec<Array2<f64>>,
    d: Vec<Array2<f64>>,
    rhs_z: Array1<f64>,
    rhs_w: Vec<Array1<f64>>,
}

fn normal_cache(
    problem: &OneStepProblem,
    blocks: &Blocks,
    z: &Array1<f64>,
    w: &[Array1<f64>],
) -> NormalCache {
    let i_count = problem.inducing.len();
    let wz = problem.weights.z_weight();
    let ww = problem.weights.w_weight();
    let mut a = Array2::zeros((i_count, i_count));
    let mut rhs_z = z * (-wz);
    let mut b = Vec::with_capacity(w.len());
    let mut d = Vec::with_capacity(w.len());
    let mut rhs_w = Vec::with_capacity(w.len());
    for m in 0..w.len() {
        let jz = &blocks.jz[m];
        let jw = &blocks.jw[m];
        a += &jz.t().dot(jz);
        rhs_z -= &jz.t().dot(&blocks.r_pde[m]);
        b.push(jw.t().dot(jz));
        d.push(&problem.obs_gram[m] + &jw.t().dot(jw));
        let mut r = -(problem.obs_mats[m].t().dot(&blocks.r_obs[m]));
        r -= &jw.t().dot(&blocks.r_pde[m]);
        r -= &(&w[m] * ww);
        rhs_w.push(r);
    }
    // Transpose products are symmetric up to rounding; make it exact so the
    // arrowhead validation never trips on noise.
    let at = a.t().to_owned();
    a += &at;
    a *= 0.5;
    NormalCache {
        a,
        b,
        d,
        rhs_z,
        rhs_w,
    }
}

fn solve_damped(
    problem: &OneStepProblem,
    cache: &NormalCache,
    damping: f64,
    solver: SubproblemSolver,
) -> Result<ArrowheadSolution> {
    let wz = problem.weights.z_weight();
    let ww = problem.weights.w_weight();
    let mut a_p = cache.a.clone();
    for i in 0..a_p.nrows() {
        a_p[(i, i)] += wz + damping;
    }
    let mut d_u = cache.d.clone();
    for dm in &mut d_u {
        for i in 0..dm.nrows() {
            dm[(i, i)] += ww + damping;
        }
    }
    let sys = ArrowheadSystem {
        a_p,
        b_up: cache.b.clone(),
        d_u,
        rhs_p: cache.rhs_z.clone(),
        rhs_u: cache.rhs_w.clone(),
    };
    match solver {
        SubproblemSolver::Cholesky => arrowhead_solve(&sys),
        SubproblemSolver::Svd => arrowhead_solve_svd(&sys),
    }
}

/// Candidate of one damped step: the minimiser of the linearised objective
/// with the proximal term `damping * ||step||^2`, solved through the
/// block-arrowhead normal equations.
pub fn lm_step(
    problem: &OneStepProblem,
    state: &LMState,
    config: &LMConfig,
) -> Result<(Array1<f64>, Vec<Array1<f64>>)> {
    config.validate()?;
    let blocks = problem.eval_blocks(&state.z, &state.w, true)?;
    let cache = normal_cache(problem, &blocks, &state.z, &state.w);
    let step = solve_damped(problem, &cache, state.damping, config.solver)?;
    let z = &state.z + &step.z;
    let w = state
        .w
        .iter()
        .zip(&step.w)
        .map(|(wm, dm)| wm + dm)
        .collect();
    Ok((z, w))
}

/// Gain ratio from the three objective values involved in one attempt: the
/// current objective, the candidate objective, and the linearised objective
/// at the candidate. `None` signals rejection (no predicted decrease).
pub fn gain_ratio_from_objectives(current: f64, candidate: f64, linearised: f64) -> Option<f64> {
    let predicted = linearised - current;
    if predicted < 0.0 {
        Some((candidate - current) / predicted)
    } else {
        None
    }
}

/// Ratio of the true objective decrease to the decrease predicted by the
/// linearisation at the current state. `None` signals rejection, including
/// a candidate equal to the current state.
pub fn gain_ratio(
    problem: &OneStepProblem,
    state: &LMState,
    candidate: &(Array1<f64>, Vec<Array1<f64>>),
) -> Result<Option<f64>> {
    let blocks = problem.eval_blocks(&state.z, &state.w, true)?;
    let dz = &candidate.0 - &state.z;
    let dw: Vec<Array1<f64>> = candidate
        .1
        .iter()
        .zip(&state.w)
        .map(|(c, s)| c - s)
        .collect();
    let predicted = predicted_change(problem, &blocks, &state.z, &state.w, &dz, &dw);
    let cand_obj = objective(problem, &candidate.0, &candidate.1)?;
    if predicted < 0.0 && cand_obj.is_finite() {
        Ok(Some((cand_obj - state.objective) / predicted))
    } else {
        Ok(None)
    }
}

/// Change of the linearised objective along the step, computed from inner
/// products so that tiny steps do not cancel.
fn predicted_change(
    problem: &OneStepProblem,
    blocks: &Blocks,
    z: &Array1<f64>,
    w: &[Array1<f64>],
    dz: &Array1<f64>,
    dw: &[Array1<f64>],
) -> f64 {
    let wz = problem.weights.z_weight();
    let ww = problem.weights.w_weight();
    let mut change = wz * (2.0 * z.dot(dz) + sq_norm(dz));
    for m in 0..w.len() {
        change += ww * (2.0 * w[m].dot(&dw[m]) + sq_norm(&dw[m]));
        let obs_dir = problem.obs_mats[m].dot(&dw[m]);
        change += 2.0 * blocks.r_obs[m].dot(&obs_dir) + sq_norm(&obs_dir);
        let pde_dir = blocks.jz[m].dot(dz) + blocks.jw[m].dot(&dw[m]);
        change += 2.0 * blocks.r_pde[m].dot(&pde_dir) + sq_norm(&pde_dir);
    }
    change
}

/// Damping update from the gain ratio: reject and grow below the rejection
/// threshold, grow on weak steps, keep in the middle band, shrink on strong
/// steps. Returns the new damping and the acceptance flag.
pub fn update_damping(damping: f64, rho: Option<f64>, config: &LMConfig) -> (f64, bool) {
    match rho {
        Some(r) if r >= config.reject_below && r < config.increase_below => {
            (damping * config.multiplier, true)
        }
        Some(r) if r >= config.increase_below && r <= config.decrease_above => (damping, true),
        Some(r) if r > config.decrease_above => (damping / config.multiplier, true),
        // Below the rejection threshold, NaN, or no predicted decrease.
        _ => (damping * config.multiplier, false),
    }
}

/// Result of the joint fit: the recovered solution models, the learned
/// equation, and the final iteration state with its history.
#[derive(Clone, Debug)]
pub struct OneStepFit {
    /// One recovered solution per observed function.
    pub models: Vec<SolutionModel>,
    /// The learned equation.
    pub equation: EquationModel,
    /// Final driver state.
    pub state: LMState,
}

/// Run the damped least-squares driver to convergence and unpack the result
/// into natural coordinates. Starts from the supplied state, or from
/// [`default_init`] when none is given. The supplied coordinates and damping
/// seed the run; its counters and history start fresh. Non-convergence is
/// reported through the state's termination and history, not as an error.
pub fn fit_1step(
    problem: &OneStepProblem,
    config: &LMConfig,
    init: Option<LMState>,
) -> Result<OneStepFit> {
    config.validate()?;
    let mut state = match init {
        Some(mut s) => {
            problem.check_state(&s.z, &s.w)?;
            s.objective = objective(problem, &s.z, &s.w)?;
            s.iteration = 0;
            s.history.clear();
            s.termination = None;
            s
        }
        None => default_init(problem, config.damping_init)?,
    };

    let mut blocks = problem.eval_blocks(&state.z, &state.w, true)?;
    let mut cache = normal_cache(problem, &blocks, &state.z, &state.w);
    let mut rejects = 0usize;
    for iter in 1..=config.max_iters {
        let step = solve_damped(problem, &cache, state.damping, config.solver)?;
        let step_norm =
            (sq_norm(&step.z) + step.w.iter().map(sq_norm).sum::<f64>()).sqrt();
        if step_norm <= config.step_tol {
            state.termination = Some(Termination::StepTolerance);
            break;
        }
        let cz = &state.z + &step.z;
        let cw: Vec<Array1<f64>> = state
            .w
            .iter()
            .zip(&step.w)
            .map(|(wm, dm)| wm + dm)
            .collect();
        let predicted = predicted_change(problem, &blocks, &state.z, &state.w, &step.z, &step.w);
        let cand_blocks = problem.eval_blocks(&cz, &cw, false)?;
        let cand_obj = objective_from_blocks(problem, &cand_blocks, &cz, &cw);
        let rho = if predicted < 0.0 && cand_obj.is_finite() {
            Some((cand_obj - state.objective) / predicted)
        } else {
            None
        };
        let (new_damping, accepted) = update_damping(state.damping, rho, config);
        state.history.push(HistoryRow {
            iter,
            objective: if accepted { cand_obj } else { state.objective },
            rho: rho.unwrap_or(f64::NAN),
            lambda: state.damping,
            accepted,
        });
        state.iteration = iter;
        state.damping = new_damping;
        if accepted {
            debug_assert!(cand_obj < state.objective);
            let previous = state.objective;
            state.z = cz;
            state.w = cw;
            state.objective = cand_obj;
            rejects = 0;
            if previous - cand_obj <= config.objective_tol * previous.abs().max(f64::MIN_POSITIVE)
            {
                state.termination = Some(Termination::ObjectiveTolerance);
                break;
            }
            blocks = problem.eval_blocks(&state.z, &state.w, true)?;
            cache = normal_cache(problem, &blocks, &state.z, &state.w);
        } else {
            rejects += 1;
            if rejects >= config.max_rejections {
                state.termination = Some(Termination::RejectionCap);
                break;
            }
        }
    }
    if state.termination.is_none() {
        state.termination = Some(Termination::MaxIterations);
    }

    let (alphas, beta) = problem.to_natural(&state.z, &state.w)?;
    let models = alphas
        .into_iter()
        .map(|alpha| {
            SolutionModel::new(
                problem.basis,
                problem.grid.clone(),
                problem.kernel_u.clone(),
                problem.ops.clone(),
                alpha,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let equation = EquationModel::new(
        problem.kernel_p.clone(),
        problem.inducing.iter().map(|s| s.coords().to_vec()).collect(),
        beta,
        problem.known.clone(),
        problem.ops.dim(),
    )?;
    Ok(OneStepFit {
        models,
        equation,
        state,
    })
}
