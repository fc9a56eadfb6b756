//! Forced Duffing oscillator benchmark: data generation and recovery
//! pipelines.
//!
//! The reference problem is the scalar second-order ODE
//! `u'' - 3u + 3u^3 + 0.2 u' = cos(2t)` on `(0, 50)` started from rest.
//! A single trajectory is observed at a few dozen points; the pipelines
//! recover the state everywhere (filtering), the nonlinear part of the
//! equation itself (equation learning), and forecasts from unseen initial
//! velocities obtained by solving the learned equation (operator learning).

use std::sync::Arc;

use ndarray::Array1;
use ode_solvers::{Dopri5, System, Vector2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use keql::kernels::{KernelSpec, MultiIndex};
use keql::onestep::{
    build_problem, default_init, fit_1step, LMConfig, ObjectiveWeights, OneStepFit,
    PdeNuggetRule,
};
use keql::operators::{Basis, DiffOperatorSet, KnownPart, KnownTerm, SolutionModel};
use keql::opsolve::{forecast_ode, EquationFn, PenaltyWeights, PdeSolveResult, SolveSpec};
use keql::twostep::{fit_2step, fit_interpolant, EquationModel, ObservationSet, TwoStepResult};

use crate::metrics::{mean_relative_sq_error, relative_sq_error, ErrorReport};
use crate::{CliError, Result};

/// Right endpoint of the training window.
pub const DOMAIN_END: f64 = 50.0;
/// Default collocation grid size.
pub const COLLOCATION_SIZE: usize = 1000;
/// Default test grid size.
pub const TEST_SIZE: usize = 5000;
/// Initial velocities of the three forecasting problems.
pub const FORECAST_VELOCITIES: [f64; 3] = [0.5, 1.0, -1.0];
/// Forecast horizons; each forecast runs on `[0, T]`.
pub const FORECAST_HORIZONS: [f64; 3] = [3.0, 6.0, 10.0];

/// The external forcing term.
pub fn forcing(t: f64) -> f64 {
    (2.0 * t).cos()
}

/// The state-dependent part of the operator: everything except `u''`,
/// written so that `u'' + state_part(u, u') = forcing(t)`.
pub fn state_part(u: f64, v: f64) -> f64 {
    -3.0 * u + 3.0 * u * u * u + 0.2 * v
}

struct DuffingSystem;

impl System<f64, Vector2<f64>> for DuffingSystem {
    fn system(&self, t: f64, y: &Vector2<f64>, dy: &mut Vector2<f64>) {
        dy[0] = y[1];
        dy[1] = forcing(t) - state_part(y[0], y[1]);
    }
}

/// Integrate the oscillator from `(u0, v0)` and return `(u, u')` sampled on
/// a uniform grid of `n_out` points spanning `[0, t_end]`.
///
/// Uses an adaptive embedded Runge-Kutta 5(4) pair with dense output at
/// tolerance 1e-8, so the emitted trajectory is accurate to well below the
/// benchmark tolerances.
pub fn trajectory(
    u0: f64,
    v0: f64,
    t_end: f64,
    n_out: usize,
) -> Result<(Array1<f64>, Array1<f64>)> {
    if n_out < 2 {
        return Err(CliError::Config(format!(
            "trajectory needs at least 2 output points, got {n_out}"
        )));
    }
    let dx = t_end / (n_out - 1) as f64;
    let mut stepper = Dopri5::new(
        DuffingSystem,
        0.0,
        t_end,
        dx,
        Vector2::new(u0, v0),
        1e-8,
        1e-8,
    );
    stepper
        .integrate()
        .map_err(|e| CliError::Config(format!("reference integrator failed: {e}")))?;
    let xs = stepper.x_out();
    let ys = stepper.y_out();
    if xs.len() != n_out {
        return Err(CliError::Config(format!(
            "integrator emitted {} points, expected {n_out}",
            xs.len()
        )));
    }
    let u = Array1::from_iter(ys.iter().map(|y| y[0]));
    let v = Array1::from_iter(ys.iter().map(|y| y[1]));
    Ok((u, v))
}

/// One generated instance of the benchmark.
#[derive(Clone, Debug)]
pub struct DuffingDataset {
    /// Uniform collocation grid on `[0, DOMAIN_END]`.
    pub collocation: Vec<Vec<f64>>,
    /// Truth on the collocation grid.
    pub coll_values: Array1<f64>,
    pub coll_velocity: Array1<f64>,
    /// Sorted indices of the observed collocation points.
    pub obs_idx: Vec<usize>,
    /// Uniform test grid on `[0, DOMAIN_END]`.
    pub test_points: Vec<Vec<f64>>,
    pub test_values: Array1<f64>,
    pub test_velocity: Array1<f64>,
    pub seed: u64,
}

impl DuffingDataset {
    pub fn obs_points(&self) -> Vec<Vec<f64>> {
        self.obs_idx
            .iter()
            .map(|&i| self.collocation[i].clone())
            .collect()
    }

    pub fn obs_values(&self) -> Array1<f64> {
        Array1::from_iter(self.obs_idx.iter().map(|&i| self.coll_values[i]))
    }

    fn observation_set(&self) -> Result<ObservationSet> {
        let points = self.obs_points();
        let n = points.len();
        ObservationSet::new(
            0,
            points,
            n,
            self.obs_values(),
            Arc::new(|t: &[f64]| forcing(t[0])),
        )
        .map_err(CliError::from)
    }
}

fn uniform_grid(n: usize, end: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| vec![end * i as f64 / (n - 1) as f64])
        .collect()
}

/// Generate a dataset: reference trajectory from rest, `n_obs` observation
/// points drawn without replacement from the collocation grid, and the
/// dense test-grid truth.
pub fn generate(
    n_obs: usize,
    collocation_size: usize,
    test_size: usize,
    seed: u64,
) -> Result<DuffingDataset> {
    if n_obs == 0 || n_obs > collocation_size {
        return Err(CliError::Config(format!(
            "field `n_interior` must be in 1..={collocation_size}, got {n_obs}"
        )));
    }
    let collocation = uniform_grid(collocation_size, DOMAIN_END);
    let (coll_values, coll_velocity) = trajectory(0.0, 0.0, DOMAIN_END, collocation_size)?;
    let test_points = uniform_grid(test_size, DOMAIN_END);
    let (test_values, test_velocity) = trajectory(0.0, 0.0, DOMAIN_END, test_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs_idx = sample(&mut rng, collocation_size, n_obs).into_vec();
    obs_idx.sort_unstable();
    Ok(DuffingDataset {
        collocation,
        coll_values,
        coll_velocity,
        obs_idx,
        test_points,
        test_values,
        test_velocity,
        seed,
    })
}

/// The operator set: identity and first time derivative. `u''` is the known
/// part, so the learned function sees features `(t, u, u')`.
pub fn operator_set() -> DiffOperatorSet {
    DiffOperatorSet::new(vec![MultiIndex::zero(1), MultiIndex::unit(1, 0)])
        .expect("static operator set")
}

/// The known part of the operator, `u''`.
pub fn known_part() -> KnownPart {
    KnownPart::new(vec![KnownTerm {
        coefficient: 1.0,
        op: MultiIndex(vec![2]),
    }])
    .expect("static known part")
}

/// Solution kernel: rational quadratic with unit squared lengthscale.
pub fn kernel_u() -> KernelSpec {
    KernelSpec::rational_quadratic(vec![1.0]).expect("static kernel")
}

/// Equation kernel over `(t, u, u')`: squared-exponential, unit scales.
pub fn kernel_p() -> KernelSpec {
    KernelSpec::rbf(vec![1.0, 1.0, 1.0]).expect("static kernel")
}

/// Smoothing nugget for the plain interpolation step. The split recovery has
/// no looseness schedule; it interpolates the observations nearly exactly.
pub const TWO_STEP_NUGGET_U: f64 = 1e-8;
/// Ridge used when regressing the equation on interpolated features.
pub const TWO_STEP_NUGGET_P: f64 = 1e-8;

/// Run the split pipeline: interpolate the trajectory, then regress the
/// equation on its feature cloud.
pub fn run_two_step(ds: &DuffingDataset) -> Result<TwoStepResult> {
    let obs = vec![ds.observation_set()?];
    fit_2step(
        &obs,
        &ds.collocation,
        &kernel_u(),
        &kernel_p(),
        &operator_set(),
        &known_part(),
        TWO_STEP_NUGGET_U,
        TWO_STEP_NUGGET_P,
    )
    .map_err(CliError::from)
}

/// Joint pipeline settings.
#[derive(Clone, Debug)]
pub struct OneStepSettings {
    pub basis: Basis,
    pub inducing: usize,
    pub theta_u: f64,
    pub theta_p: f64,
    pub lambda: f64,
    pub lm: LMConfig,
}

impl Default for OneStepSettings {
    fn default() -> Self {
        OneStepSettings {
            basis: Basis::Full,
            inducing: 500,
            theta_u: 5e-8,
            theta_p: 1e-9,
            lambda: 1.0,
            lm: LMConfig::default(),
        }
    }
}

/// Run the joint pipeline seeded by the interpolation fit.
pub fn run_one_step(ds: &DuffingDataset, settings: &OneStepSettings) -> Result<OneStepFit> {
    let obs = vec![ds.observation_set()?];
    let guide = fit_interpolant(&obs[0], &kernel_u(), &operator_set(), TWO_STEP_NUGGET_U)?;
    let weights = ObjectiveWeights::from_theta(
        settings.lambda,
        settings.theta_u,
        settings.theta_p,
        obs[0].points.len(),
        1,
        ds.collocation.len(),
        PdeNuggetRule::PerProblem,
    )?;
    let problem = build_problem(
        &obs,
        &[guide],
        &ds.collocation,
        &operator_set(),
        &kernel_u(),
        &kernel_p(),
        &known_part(),
        settings.basis,
        settings.inducing,
        &weights,
        ds.seed,
    )?;
    let init = default_init(&problem, settings.lm.damping_init)?;
    fit_1step(&problem, &settings.lm, Some(init)).map_err(CliError::from)
}

/// Filtering error of a recovered state on the test grid.
pub fn filter_error(ds: &DuffingDataset, model: &SolutionModel) -> Result<f64> {
    let estimate = model.eval_many(&ds.test_points)?;
    relative_sq_error(&ds.test_values, &estimate).map_err(|e| CliError::Config(e.to_string()))
}

/// Equation-recovery error: true vs. learned state part on the true
/// feature cloud of the test trajectory.
pub fn equation_error(ds: &DuffingDataset, equation: &EquationModel) -> Result<f64> {
    let n = ds.test_points.len();
    let mut truth = Array1::zeros(n);
    let mut learned = Array1::zeros(n);
    for i in 0..n {
        let t = ds.test_points[i][0];
        let u = ds.test_values[i];
        let v = ds.test_velocity[i];
        truth[i] = state_part(u, v);
        learned[i] = equation.eval(&[t, u, v])?;
    }
    relative_sq_error(&truth, &learned).map_err(|e| CliError::Config(e.to_string()))
}

/// Number of grid points per unit time in forecasting runs.
const FORECAST_DENSITY: f64 = 40.0;

/// Solve the learned equation forward from `(0, v0)` on `[0, horizon]`.
pub fn forecast(
    equation: &EquationModel,
    v0: f64,
    horizon: f64,
) -> Result<(PdeSolveResult, Vec<Vec<f64>>)> {
    let n = (horizon * FORECAST_DENSITY).round() as usize + 1;
    let grid = uniform_grid(n.max(61), horizon);
    let f_values = Array1::from_iter(grid.iter().map(|p| forcing(p[0])));
    let spec = SolveSpec {
        equation: EquationFn::Learned(equation.clone()),
        kernel: kernel_u(),
        ops: operator_set(),
        grid: grid.clone(),
        f_values,
        boundary: Vec::new(),
        weights: PenaltyWeights::default(),
        config: LMConfig::default(),
    };
    let result = forecast_ode(spec, 0.0, v0)?;
    Ok((result, grid))
}

/// Mean forecasting error over the three unseen initial velocities for one
/// horizon.
pub fn forecast_error(equation: &EquationModel, horizon: f64) -> Result<f64> {
    let mut pairs = Vec::new();
    for &v0 in &FORECAST_VELOCITIES {
        let (result, grid) = forecast(equation, v0, horizon)?;
        let (truth, _) = trajectory(0.0, v0, horizon, grid.len())?;
        let estimate = result.model.eval_many(&grid)?;
        pairs.push((truth, estimate));
    }
    mean_relative_sq_error(&pairs).map_err(|e| CliError::Config(e.to_string()))
}

/// Score one fitted equation and state: filtering, equation recovery, and
/// the three forecasting horizons.
pub fn score(
    ds: &DuffingDataset,
    method: &str,
    model: &SolutionModel,
    equation: &EquationModel,
    horizons: &[f64],
) -> ErrorReport {
    let mut report = ErrorReport::new("duffing", method, ds.seed);
    report.push("filter", "train", filter_error(ds, model));
    report.push("eql", "train", equation_error(ds, equation));
    for &h in horizons {
        let name = format!("opl_t{}", h.round() as i64);
        report.push(&name, "id", forecast_error(equation, h));
    }
    report
}
