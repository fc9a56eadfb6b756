//! Gram-matrix assembly and the structured linear algebra built on it.
//!
//! Covers four needs shared by the fitting pipelines: Gram matrices among
//! derivative functionals (and plain points), Cholesky factorisation with an
//! escalating jitter for nearly singular Grams, a Schur-complement solver for
//! the block-arrowhead normal equations of the joint fit, and the seeded
//! subsampling that picks inducing feature points.
//!
//! The arrowhead system couples one small corner block (the equation
//! coefficients) to M independent diagonal blocks (one per observed
//! function); eliminating the diagonal blocks first keeps the cost linear in
//! M instead of cubic.

use ndarray::{Array1, Array2};
use ndarray_linalg::cholesky::{Cholesky, CholeskyInto, UPLO};
use ndarray_linalg::least_squares::LeastSquaresSvd;
use ndarray_linalg::triangular::{Diag, SolveTriangular};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, MultiIndex};
use crate::operators::{DiffFunctional, DiffOperatorSet};

/// Default number of Cholesky attempts before giving up.
pub const DEFAULT_CHOL_TRIES: usize = 8;

/// The derivative functionals of every operator at every grid point,
/// operator-major: index q·K + k pairs operator q with point k. This ordering
/// matches full-basis coefficient vectors and feature Jacobian rows.
pub fn full_functional_list(ops: &DiffOperatorSet, grid_len: usize) -> Vec<DiffFunctional> {
    let mut list = Vec::with_capacity(ops.q() * grid_len);
    for op in ops.ops() {
        for point in 0..grid_len {
            list.push(DiffFunctional {
                point,
                op: op.clone(),
            });
        }
    }
    list
}

fn check_functionals(functionals: &[DiffFunctional], grid: &[Vec<f64>]) -> Result<()> {
    for f in functionals {
        if f.point >= grid.len() {
            return Err(Error::InvalidArgument(format!(
                "functional references point {} but the grid has {} points",
                f.point,
                grid.len()
            )));
        }
    }
    Ok(())
}

/// Symmetric Gram matrix among derivative functionals,
/// `G[i][j] = (phi_i (x) phi_j)(k)`.
pub fn gram_functionals(
    kernel: &KernelSpec,
    functionals: &[DiffFunctional],
    grid: &[Vec<f64>],
) -> Result<Array2<f64>> {
    check_functionals(functionals, grid)?;
    let n = functionals.len();
    let mut g = Array2::zeros((n, n));
    for i in 0..n {
        let fi = &functionals[i];
        for j in i..n {
            let fj = &functionals[j];
            let v = kernel.eval_deriv(&fi.op, &fj.op, &grid[fi.point], &grid[fj.point])?;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// Rectangular matrix pairing derivative functionals with plain evaluation
/// points, `G[i][p] = phi_i(k(., x_p))`.
pub fn cross_gram(
    kernel: &KernelSpec,
    functionals: &[DiffFunctional],
    grid: &[Vec<f64>],
    points: &[Vec<f64>],
) -> Result<Array2<f64>> {
    check_functionals(functionals, grid)?;
    let zero = MultiIndex::zero(kernel.input_dim());
    let mut g = Array2::zeros((functionals.len(), points.len()));
    for (i, f) in functionals.iter().enumerate() {
        for (p, x) in points.iter().enumerate() {
            g[(i, p)] = kernel.eval_deriv(&f.op, &zero, &grid[f.point], x)?;
        }
    }
    Ok(g)
}

/// Plain kernel matrix over a point set.
pub fn gram_points<T: AsRef<[f64]>>(kernel: &KernelSpec, points: &[T]) -> Result<Array2<f64>> {
    let n = points.len();
    let mut g = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval(points[i].as_ref(), points[j].as_ref())?;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// Rectangular kernel matrix between two point sets.
pub fn cross_points<T: AsRef<[f64]>, U: AsRef<[f64]>>(
    kernel: &KernelSpec,
    rows: &[T],
    cols: &[U],
) -> Result<Array2<f64>> {
    let mut g = Array2::zeros((rows.len(), cols.len()));
    for (i, r) in rows.iter().enumerate() {
        for (j, c) in cols.iter().enumerate() {
            g[(i, j)] = kernel.eval(r.as_ref(), c.as_ref())?;
        }
    }
    Ok(g)
}

/// Cholesky factorisation with an escalating diagonal jitter.
///
/// Attempts `A + jitter I` starting from `base_jitter` (default
/// `1e-10 · trace(A)/n`), multiplying the jitter by ten on each failure, up
/// to `max_tries` attempts. Returns the lower factor and the jitter actually
/// used. A `base_jitter` of zero makes the first attempt exact.
pub fn chol_jitter(
    a: &Array2<f64>,
    base_jitter: Option<f64>,
    max_tries: usize,
) -> Result<(Array2<f64>, f64)> {
    let n = a.nrows();
    if n == 0 {
        return Err(Error::Empty("matrix for Cholesky"));
    }
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "Cholesky input must be square",
            expected: n,
            got: a.ncols(),
        });
    }
    let trace: f64 = a.diag().sum();
    let default_base = if trace > 0.0 {
        1e-10 * trace / n as f64
    } else {
        1e-10
    };
    let mut jitter = base_jitter.unwrap_or(default_base);
    let mut last = jitter;
    for _ in 0..max_tries.max(1) {
        last = jitter;
        let mut aj = a.clone();
        for i in 0..n {
            aj[(i, i)] += jitter;
        }
        if let Ok(l) = aj.cholesky_into(UPLO::Lower) {
            return Ok((l, jitter));
        }
        jitter = if jitter == 0.0 {
            default_base
        } else {
            jitter * 10.0
        };
    }
    Err(Error::NotPositiveDefinite {
        tries: max_tries.max(1),
        last_jitter: last,
    })
}

/// [`chol_jitter`] with the default schedule.
pub fn chol_default(a: &Array2<f64>) -> Result<(Array2<f64>, f64)> {
    chol_jitter(a, None, DEFAULT_CHOL_TRIES)
}

/// Solve `L X = B` with `L` lower triangular.
pub fn tri_solve_lower(l: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(l.solve_triangular(UPLO::Lower, Diag::NonUnit, b)?)
}

/// Solve `L^T X = B` with `L` lower triangular.
pub fn tri_solve_lower_t(l: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let lt = l.t().to_owned();
    Ok(lt.solve_triangular(UPLO::Upper, Diag::NonUnit, b)?)
}

/// Solve `L X = B` for a single right-hand side.
pub fn tri_solve_lower_vec(l: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let b2 = b.clone().insert_axis(ndarray::Axis(1));
    let x = tri_solve_lower(l, &b2)?;
    Ok(x.remove_axis(ndarray::Axis(1)))
}

/// Solve `L^T X = B` for a single right-hand side.
pub fn tri_solve_lower_t_vec(l: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let b2 = b.clone().insert_axis(ndarray::Axis(1));
    let x = tri_solve_lower_t(l, &b2)?;
    Ok(x.remove_axis(ndarray::Axis(1)))
}

/// Solve an SPD system through its jittered Cholesky factorisation.
pub fn spd_solve(a: &Array2<f64>, b: &Array1<f64>, base_jitter: Option<f64>) -> Result<Array1<f64>> {
    let (l, _) = chol_jitter(a, base_jitter, DEFAULT_CHOL_TRIES)?;
    let y = tri_solve_lower_vec(&l, b)?;
    tri_solve_lower_t_vec(&l, &y)
}

/// Solve `A x = b` for symmetric positive semidefinite `A` without
/// perturbing it: plain Cholesky when `A` is numerically positive definite,
/// otherwise the minimum-norm least-squares solution via SVD. The fallback
/// keeps zero-nugget Gram solves exact on the span of a rank-deficient
/// kernel matrix, where any jitter would bias the coefficients.
pub fn solve_psd(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    if let Ok((l, _)) = chol_jitter(a, Some(0.0), 1) {
        let y = tri_solve_lower_vec(&l, b)?;
        return tri_solve_lower_t_vec(&l, &y);
    }
    Ok(a
        .least_squares(b)
        .map_err(|e| Error::SolveFailed(format!("least-squares Gram solve: {e}")))?
        .solution)
}

/// Gram matrices and Cholesky factors shared by the joint fit.
#[derive(Clone, Debug)]
pub struct GramBundle {
    /// Gram matrix of the solution-kernel basis functionals.
    pub u_basis: Array2<f64>,
    /// Cross matrices between basis functionals and each observation set.
    pub u_basis_obs: Vec<Array2<f64>>,
    /// Gram matrix of the equation kernel on the inducing feature points.
    pub p_inducing: Array2<f64>,
    /// Lower Cholesky factor of `u_basis` plus jitter.
    pub c_u: Array2<f64>,
    /// Lower Cholesky factor of `p_inducing` plus jitter.
    pub c_p: Array2<f64>,
    /// Jitter added to `u_basis` before factorisation.
    pub jitter_u: f64,
    /// Jitter added to `p_inducing` before factorisation.
    pub jitter_p: f64,
}

fn check_symmetric(a: &Array2<f64>, context: &'static str) -> Result<()> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            context,
            expected: n,
            got: a.ncols(),
        });
    }
    let scale = a.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::InvalidArgument(format!(
                    "{context}: matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

impl GramBundle {
    /// Validate the Gram matrices and compute their Cholesky factors.
    pub fn new(
        u_basis: Array2<f64>,
        u_basis_obs: Vec<Array2<f64>>,
        p_inducing: Array2<f64>,
    ) -> Result<Self> {
        check_symmetric(&u_basis, "solution-kernel Gram")?;
        check_symmetric(&p_inducing, "equation-kernel Gram")?;
        for obs in &u_basis_obs {
            if obs.nrows() != u_basis.nrows() {
                return Err(Error::DimensionMismatch {
                    context: "observation cross-Gram rows",
                    expected: u_basis.nrows(),
                    got: obs.nrows(),
                });
            }
        }
        let (c_u, jitter_u) = chol_default(&u_basis)?;
        let (c_p, jitter_p) = chol_default(&p_inducing)?;
        Ok(GramBundle {
            u_basis,
            u_basis_obs,
            p_inducing,
            c_u,
            c_p,
            jitter_u,
            jitter_p,
        })
    }
}

/// The normal equations of the damped least-squares subproblem: a corner
/// block for the equation coefficients, one diagonal block per observed
/// function, and the rectangular couplings between them.
///
/// The assembled system is
///
/// ```text
/// [ a_p      b_up[0]^T  ...  b_up[M-1]^T ] [ z    ]   [ rhs_p    ]
/// [ b_up[0]  d_u[0]                      ] [ w[0] ] = [ rhs_u[0] ]
/// [ ...                 ...              ] [ ...  ]   [ ...      ]
/// [ b_up[M-1]                d_u[M-1]    ] [w[M-1]]   [rhs_u[M-1]]
/// ```
#[derive(Clone, Debug)]
pub struct ArrowheadSystem {
    /// Corner block, size I x I.
    pub a_p: Array2<f64>,
    /// Coupling blocks, one per function, each n_m x I.
    pub b_up: Vec<Array2<f64>>,
    /// Diagonal blocks, one per function, each n_m x n_m.
    pub d_u: Vec<Array2<f64>>,
    /// Right-hand side for the corner block.
    pub rhs_p: Array1<f64>,
    /// Right-hand sides for the diagonal blocks.
    pub rhs_u: Vec<Array1<f64>>,
}

impl ArrowheadSystem {
    fn validate(&self) -> Result<()> {
        let i = self.a_p.nrows();
        check_symmetric(&self.a_p, "arrowhead corner block")?;
        if self.rhs_p.len() != i {
            return Err(Error::DimensionMismatch {
                context: "arrowhead corner rhs",
                expected: i,
                got: self.rhs_p.len(),
            });
        }
        if self.b_up.len() != self.d_u.len() || self.b_up.len() != self.rhs_u.len() {
            return Err(Error::InvalidArgument(
                "arrowhead block lists must have equal length".into(),
            ));
        }
        for m in 0..self.b_up.len() {
            let n = self.d_u[m].nrows();
            if self.d_u[m].ncols() != n {
                return Err(Error::DimensionMismatch {
                    context: "arrowhead diagonal block must be square",
                    expected: n,
                    got: self.d_u[m].ncols(),
                });
            }
            if self.b_up[m].nrows() != n || self.b_up[m].ncols() != i {
                return Err(Error::InvalidArgument(format!(
                    "arrowhead coupling block {m} has shape {:?}, expected ({n}, {i})",
                    self.b_up[m].shape()
                )));
            }
            if self.rhs_u[m].len() != n {
                return Err(Error::DimensionMismatch {
                    context: "arrowhead diagonal rhs",
                    expected: n,
                    got: self.rhs_u[m].len(),
                });
            }
        }
        Ok(())
    }

    fn total_dim(&self) -> usize {
        self.a_p.nrows() + self.d_u.iter().map(|d| d.nrows()).sum::<usize>()
    }

    /// Assemble the full dense matrix and stacked right-hand side. Used by
    /// the SVD fallback; quadratic in the total dimension.
    fn assemble_dense(&self) -> (Array2<f64>, Array1<f64>) {
        let i = self.a_p.nrows();
        let total = self.total_dim();
        let mut full = Array2::zeros((total, total));
        let mut rhs = Array1::zeros(total);
        full.slice_mut(ndarray::s![..i, ..i]).assign(&self.a_p);
        rhs.slice_mut(ndarray::s![..i]).assign(&self.rhs_p);
        let mut offset = i;
        for m in 0..self.d_u.len() {
            let n = self.d_u[m].nrows();
            full.slice_mut(ndarray::s![offset..offset + n, offset..offset + n])
                .assign(&self.d_u[m]);
            full.slice_mut(ndarray::s![offset..offset + n, ..i])
                .assign(&self.b_up[m]);
            full.slice_mut(ndarray::s![..i, offset..offset + n])
                .assign(&self.b_up[m].t());
            rhs.slice_mut(ndarray::s![offset..offset + n])
                .assign(&self.rhs_u[m]);
            offset += n;
        }
        (full, rhs)
    }
}

/// Solution of an arrowhead system, split into the corner unknowns and the
/// per-function blocks.
#[derive(Clone, Debug)]
pub struct ArrowheadSolution {
    pub z: Array1<f64>,
    pub w: Vec<Array1<f64>>,
}

/// Solve the block-arrowhead system by eliminating the diagonal blocks.
///
/// Each diagonal block is factored once; the corner unknowns then solve the
/// Schur complement `a_p - sum_m b_m^T d_m^-1 b_m`, and the per-function
/// blocks follow by back-substitution. The cost is linear in the number of
/// diagonal blocks. If any factorisation fails (an effectively singular
/// Schur complement, say), the solver falls back to a dense least-squares
/// solve of the assembled system via SVD.
pub fn arrowhead_solve(sys: &ArrowheadSystem) -> Result<ArrowheadSolution> {
    sys.validate()?;
    match arrowhead_solve_fast(sys) {
        Ok(solution) => Ok(solution),
        Err(_) => arrowhead_solve_svd(sys),
    }
}

fn arrowhead_solve_fast(sys: &ArrowheadSystem) -> Result<ArrowheadSolution> {
    let m_count = sys.d_u.len();
    let mut schur = sys.a_p.clone();
    let mut rhs_z = sys.rhs_p.clone();
    let mut factors = Vec::with_capacity(m_count);
    for m in 0..m_count {
        let l = sys.d_u[m].cholesky(UPLO::Lower)?;
        // x = L^-1 B and y = L^-1 f give B^T D^-1 B = x^T x and
        // B^T D^-1 f = x^T y without forming D^-1.
        let x = tri_solve_lower(&l, &sys.b_up[m])?;
        let y = tri_solve_lower_vec(&l, &sys.rhs_u[m])?;
        schur -= &x.t().dot(&x);
        rhs_z -= &x.t().dot(&y);
        factors.push((l, x, y));
    }
    let ls = schur.cholesky(UPLO::Lower)?;
    let z = tri_solve_lower_t_vec(&ls, &tri_solve_lower_vec(&ls, &rhs_z)?)?;
    let mut w = Vec::with_capacity(m_count);
    for (l, x, y) in factors {
        // L^T w = y - x z completes the back-substitution for this block.
        let rhs = &y - &x.dot(&z);
        w.push(tri_solve_lower_t_vec(&l, &rhs)?);
    }
    Ok(ArrowheadSolution { z, w })
}

/// Solve the assembled dense system by least squares. Slower than the block
/// elimination but tolerant of indefinite or singular blocks; also the
/// explicit choice when conditioning of the normal equations is in doubt.
pub fn arrowhead_solve_svd(sys: &ArrowheadSystem) -> Result<ArrowheadSolution> {
    sys.validate()?;
    let (full, rhs) = sys.assemble_dense();
    let solution = full
        .least_squares(&rhs)
        .map_err(|e| Error::SolveFailed(format!("dense least-squares fallback: {e}")))?
        .solution;
    let i = sys.a_p.nrows();
    let z = solution.slice(ndarray::s![..i]).to_owned();
    let mut w = Vec::with_capacity(sys.d_u.len());
    let mut offset = i;
    for d in &sys.d_u {
        let n = d.nrows();
        w.push(solution.slice(ndarray::s![offset..offset + n]).to_owned());
        offset += n;
    }
    Ok(ArrowheadSolution { z, w })
}

/// Draw `count` elements uniformly without replacement, deterministically
/// under the seed. The selection preserves the original ordering; asking for
/// every element returns the input unchanged.
pub fn nystrom_select<T: Clone>(candidates: &[T], count: usize, seed: u64) -> Result<Vec<T>> {
    if count > candidates.len() {
        return Err(Error::TooManyInducing {
            requested: count,
            available: candidates.len(),
        });
    }
    if count == candidates.len() {
        return Ok(candidates.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = rand::seq::index::sample(&mut rng, candidates.len(), count).into_vec();
    indices.sort_unstable();
    Ok(indices.into_iter().map(|i| candidates[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{KernelSpec, MaternNu};
    use approx::assert_relative_eq;
    use ndarray_linalg::solve::Solve;
    use rand::Rng;

    fn grid_1d(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect()
    }

    fn ops_1d() -> DiffOperatorSet {
        DiffOperatorSet::new(vec![MultiIndex::zero(1), MultiIndex::unit(1, 0)]).unwrap()
    }

    #[test]
    fn identity_functionals_give_the_point_gram() {
        let kernel = KernelSpec::rbf(vec![0.5]).unwrap();
        let grid = grid_1d(5);
        let fs = full_functional_list(&DiffOperatorSet::identity_only(1), grid.len());
        let g = gram_functionals(&kernel, &fs, &grid).unwrap();
        let p = gram_points(&kernel, &grid).unwrap();
        assert_eq!(g, p);
    }

    #[test]
    fn single_functional_is_a_scalar() {
        let kernel = KernelSpec::rbf(vec![0.5]).unwrap();
        let grid = vec![vec![0.3]];
        let fs = vec![DiffFunctional {
            point: 0,
            op: MultiIndex::unit(1, 0),
        }];
        let g = gram_functionals(&kernel, &fs, &grid).unwrap();
        let expected = kernel
            .eval_deriv(&fs[0].op, &fs[0].op, &grid[0], &grid[0])
            .unwrap();
        assert_eq!(g.shape(), &[1, 1]);
        assert_relative_eq!(g[(0, 0)], expected);
    }

    #[test]
    fn functional_gram_matches_finite_differences() {
        // Central finite differences of the plain kernel, iterated per
        // derivative order in each argument.
        fn fd_entry(k: &KernelSpec, a: usize, b: usize, x: f64, y: f64, h: f64) -> f64 {
            if a > 0 {
                return (fd_entry(k, a - 1, b, x + h, y, h) - fd_entry(k, a - 1, b, x - h, y, h))
                    / (2.0 * h);
            }
            if b > 0 {
                return (fd_entry(k, a, b - 1, x, y + h, h) - fd_entry(k, a, b - 1, x, y - h, h))
                    / (2.0 * h);
            }
            k.eval(&[x], &[y]).unwrap()
        }
        let kernel = KernelSpec::rbf(vec![0.7]).unwrap();
        let grid = vec![vec![0.1], vec![0.55], vec![0.9]];
        let fs = full_functional_list(&ops_1d(), grid.len());
        let g = gram_functionals(&kernel, &fs, &grid).unwrap();
        let h = 5e-3;
        for (i, fi) in fs.iter().enumerate() {
            for (j, fj) in fs.iter().enumerate() {
                let fd = fd_entry(
                    &kernel,
                    fi.op.total_order(),
                    fj.op.total_order(),
                    grid[fi.point][0],
                    grid[fj.point][0],
                    h,
                );
                let scale = g[(i, j)].abs().max(1.0);
                assert!(
                    (g[(i, j)] - fd).abs() <= 1e-4 * scale,
                    "entry ({i},{j}): {} vs fd {fd}",
                    g[(i, j)]
                );
            }
        }
    }

    #[test]
    fn cross_gram_cases() {
        let kernel = KernelSpec::rational_quadratic(vec![0.5]).unwrap();
        let grid = grid_1d(6);
        let id_fs = full_functional_list(&DiffOperatorSet::identity_only(1), grid.len());
        let full = gram_functionals(&kernel, &id_fs, &grid).unwrap();
        let sub_points = vec![grid[1].clone(), grid[4].clone()];
        let cross = cross_gram(&kernel, &id_fs, &grid, &sub_points).unwrap();
        for i in 0..grid.len() {
            assert_relative_eq!(cross[(i, 0)], full[(i, 1)]);
            assert_relative_eq!(cross[(i, 1)], full[(i, 4)]);
        }

        let empty = cross_gram(&kernel, &id_fs, &grid, &[]).unwrap();
        assert_eq!(empty.shape(), &[6, 0]);

        // Direct entrywise agreement for derivative functionals.
        let fs = full_functional_list(&ops_1d(), grid.len());
        let points = vec![vec![0.23], vec![0.77]];
        let c = cross_gram(&kernel, &fs, &grid, &points).unwrap();
        let zero = MultiIndex::zero(1);
        for (i, f) in fs.iter().enumerate() {
            for (p, x) in points.iter().enumerate() {
                let direct = kernel.eval_deriv(&f.op, &zero, &grid[f.point], x).unwrap();
                assert_eq!(c[(i, p)], direct);
            }
        }
    }

    #[test]
    fn chol_identity_and_explicit_zero_base() {
        let eye = Array2::<f64>::eye(4);
        let (l, jitter) = chol_jitter(&eye, Some(0.0), 8).unwrap();
        assert_eq!(jitter, 0.0);
        for i in 0..4 {
            assert_relative_eq!(l[(i, i)], 1.0);
        }
        let (_, jitter) = chol_default(&eye).unwrap();
        assert_relative_eq!(jitter, 1e-10);
    }

    #[test]
    fn chol_reconstruction_on_degenerate_matrices() {
        // Severely rank-deficient PSD matrix: outer products of 2 vectors in
        // dimension 5.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
        let a = g.dot(&g.t());
        let (l, jitter) = chol_default(&a).unwrap();
        let recon = l.dot(&l.t());
        let mut target = a.clone();
        for i in 0..5 {
            target[(i, i)] += jitter;
        }
        let err = (&recon - &target).iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err <= 1e-8 * scale, "reconstruction error {err}");

        let tiny = Array2::from_diag(&Array1::from(vec![1.0, 1e-20]));
        let (l, jitter) = chol_default(&tiny).unwrap();
        let recon = l.dot(&l.t());
        let err = ((recon[(0, 0)] - 1.0 - jitter).powi(2)
            + (recon[(1, 1)] - 1e-20 - jitter).powi(2))
        .sqrt();
        assert!(err <= jitter * 2f64.sqrt() + 1e-15);
    }

    #[test]
    fn chol_rejects_indefinite_input() {
        let a = Array2::from_diag(&Array1::from(vec![1.0, -1.0]));
        let result = chol_jitter(&a, Some(1e-16), 3);
        assert!(matches!(result, Err(Error::NotPositiveDefinite { .. })));
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let g = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
        g.dot(&g.t()) + Array2::<f64>::eye(n) * n as f64
    }

    fn random_system(m_count: usize, i_dim: usize, rng: &mut ChaCha8Rng) -> ArrowheadSystem {
        let a_p = random_spd(i_dim, rng);
        let mut b_up = Vec::new();
        let mut d_u = Vec::new();
        let mut rhs_u = Vec::new();
        for _ in 0..m_count {
            let n = rng.random_range(2..=12);
            d_u.push(random_spd(n, rng));
            b_up.push(Array2::from_shape_fn((n, i_dim), |_| {
                rng.random_range(-0.1..0.1)
            }));
            rhs_u.push(Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0)));
        }
        let rhs_p = Array1::from_shape_fn(i_dim, |_| rng.random_range(-1.0..1.0));
        ArrowheadSystem {
            a_p,
            b_up,
            d_u,
            rhs_p,
            rhs_u,
        }
    }

    #[test]
    fn arrowhead_without_coupling_decouples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut sys = random_system(3, 4, &mut rng);
        for b in sys.b_up.iter_mut() {
            b.fill(0.0);
        }
        let sol = arrowhead_solve(&sys).unwrap();
        let z_direct = sys.a_p.solve(&sys.rhs_p).unwrap();
        for (a, b) in sol.z.iter().zip(z_direct.iter()) {
            assert_relative_eq!(a, b, max_relative = 1e-10, epsilon = 1e-12);
        }
        for m in 0..3 {
            let w_direct = sys.d_u[m].solve(&sys.rhs_u[m]).unwrap();
            for (a, b) in sol.w[m].iter().zip(w_direct.iter()) {
                assert_relative_eq!(a, b, max_relative = 1e-10, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn arrowhead_zero_rhs_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut sys = random_system(2, 3, &mut rng);
        sys.rhs_p.fill(0.0);
        for r in sys.rhs_u.iter_mut() {
            r.fill(0.0);
        }
        let sol = arrowhead_solve(&sys).unwrap();
        assert!(sol.z.iter().all(|&v| v.abs() < 1e-14));
        assert!(sol.w.iter().flatten().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn arrowhead_matches_dense_solver_on_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..50 {
            let m_count = rng.random_range(1..=5);
            let i_dim = rng.random_range(2..=12);
            let sys = random_system(m_count, i_dim, &mut rng);
            let sol = arrowhead_solve(&sys).unwrap();
            let (full, rhs) = sys.assemble_dense();
            let dense = full.solve(&rhs).unwrap();
            let mut stacked = sol.z.to_vec();
            for w in &sol.w {
                stacked.extend(w.iter());
            }
            let norm = dense.iter().map(|v| v * v).sum::<f64>().sqrt();
            let err = stacked
                .iter()
                .zip(dense.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(
                err <= 1e-8 * norm.max(1e-12),
                "trial {trial}: relative error {}",
                err / norm
            );
        }
    }

    #[test]
    fn arrowhead_singular_schur_falls_back_consistently() {
        // a_p = B^T D^-1 B makes the Schur complement exactly zero.
        let b = ndarray::arr2(&[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]);
        let d = Array2::<f64>::eye(3);
        let a_p = b.t().dot(&b);
        // Consistent rhs: the assembled matrix applied to a known vector.
        let x0 = Array1::from(vec![0.3, -0.7, 1.1, 0.2, -0.4]);
        let sys0 = ArrowheadSystem {
            a_p: a_p.clone(),
            b_up: vec![b.clone()],
            d_u: vec![d.clone()],
            rhs_p: Array1::zeros(2),
            rhs_u: vec![Array1::zeros(3)],
        };
        let (full, _) = sys0.assemble_dense();
        let rhs = full.dot(&x0);
        let sys = ArrowheadSystem {
            a_p,
            b_up: vec![b],
            d_u: vec![d],
            rhs_p: rhs.slice(ndarray::s![..2]).to_owned(),
            rhs_u: vec![rhs.slice(ndarray::s![2..]).to_owned()],
        };
        let sol = arrowhead_solve(&sys).unwrap();
        let mut stacked = sol.z.to_vec();
        stacked.extend(sol.w[0].iter());
        let applied = full.dot(&Array1::from(stacked));
        for (a, b) in applied.iter().zip(rhs.iter()) {
            assert!((a - b).abs() < 1e-8, "residual entry {a} vs {b}");
        }
    }

    #[test]
    fn nystrom_selection_behaviour() {
        let candidates: Vec<usize> = (0..100).collect();
        let all = nystrom_select(&candidates, 100, 42).unwrap();
        assert_eq!(all, candidates);

        let first = nystrom_select(&candidates, 10, 42).unwrap();
        let second = nystrom_select(&candidates, 10, 42).unwrap();
        assert_eq!(first, second);
        assert_eq!(first.len(), 10);
        // Order-stable subsequence without duplicates.
        assert!(first.windows(2).all(|w| w[0] < w[1]));

        let other = nystrom_select(&candidates, 10, 43).unwrap();
        assert_ne!(first, other);

        assert!(matches!(
            nystrom_select(&candidates, 101, 0),
            Err(Error::TooManyInducing { .. })
        ));
    }

    #[test]
    fn functional_grams_are_positive_semidefinite() {
        use ndarray_linalg::eigh::Eigh;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let kernels = [
            KernelSpec::rbf(vec![0.5]).unwrap(),
            KernelSpec::rational_quadratic(vec![0.8]).unwrap(),
            KernelSpec::matern(MaternNu::SevenHalves, vec![0.6]).unwrap(),
        ];
        let mut configs = 0;
        while configs < 30 {
            for kernel in &kernels {
                let n = rng.random_range(3..8);
                let grid: Vec<Vec<f64>> =
                    (0..n).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
                let fs = full_functional_list(&ops_1d(), n);
                let g = gram_functionals(kernel, &fs, &grid).unwrap();
                let trace: f64 = g.diag().sum();
                let (eigs, _) = g.eigh(UPLO::Lower).unwrap();
                let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
                assert!(
                    min >= -1e-8 * trace,
                    "min eigenvalue {min} for trace {trace}"
                );
                configs += 1;
            }
        }
    }

    #[test]
    fn gram_bundle_factors_reconstruct() {
        let kernel = KernelSpec::rbf(vec![0.4]).unwrap();
        let grid = grid_1d(8);
        let fs = full_functional_list(&ops_1d(), grid.len());
        let u_basis = gram_functionals(&kernel, &fs, &grid).unwrap();
        let obs = cross_gram(&kernel, &fs, &grid, &grid[..3]).unwrap();
        let p_kernel = KernelSpec::polynomial(2, vec![0.0; 3], vec![1.0; 3]).unwrap();
        let feats: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![i as f64 * 0.1, (i as f64 * 0.3).sin(), (i as f64 * 0.2).cos()])
            .collect();
        let p_inducing = gram_points(&p_kernel, &feats).unwrap();
        let bundle = GramBundle::new(u_basis.clone(), vec![obs], p_inducing.clone()).unwrap();

        for (mat, factor, jitter) in [
            (&u_basis, &bundle.c_u, bundle.jitter_u),
            (&p_inducing, &bundle.c_p, bundle.jitter_p),
        ] {
            let n = mat.nrows();
            let mut target = mat.clone();
            for i in 0..n {
                target[(i, i)] += jitter;
            }
            let recon = factor.dot(&factor.t());
            let err = (&recon - &target).iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = target.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err <= 1e-8 * scale, "factor reconstruction error {err}");
        }
    }
}
