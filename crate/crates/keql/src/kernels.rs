//! Kernel families and their mixed partial derivatives in closed form.
//!
//! Every Gram matrix in this crate is assembled from pointwise evaluations of
//! a positive-definite kernel or of its derivatives in one or both arguments,
//! so this module is the numerical substrate for everything else.
//!
//! The radial families (RBF, Matérn, rational quadratic) are written as a
//! scalar profile `g` composed with the anisotropic squared distance
//!
//! ```text
//! u(x, x') = sum_i (x_i - x'_i)^2 / gamma_i,
//! ```
//!
//! where `gamma` is the diagonal of the lengthscale matrix. Because `u` is
//! quadratic, any mixed partial of `g(u)` up to total order four reduces to a
//! short chain-rule sum over first and second partials of `u`; the same
//! machinery evaluates the polynomial family through the bilinear form
//! `q(s, s') = sum_i B_i (s_i - c_i)(s'_i - c_i)`. Derivatives are therefore
//! exact, with no finite differencing or tape-based differentiation anywhere.
//!
//! Orders are capped at two per argument (second-order differential
//! operators), which is all the rest of the crate ever requests.

use ndarray::{Array1, Array2};
use ndarray_linalg::cholesky::{CholeskyInto, UPLO};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum derivative order taken in a single kernel argument.
pub const MAX_ORDER_PER_ARG: usize = 2;

/// Partial-derivative orders, one entry per input dimension.
///
/// `MultiIndex::from(vec![1, 0, 2])` denotes taking one derivative in the
/// first coordinate and two in the third.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    /// The zero multi-index on `dim` variables, i.e. the identity operator.
    pub fn zero(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    /// The first-order derivative in coordinate `i` of `dim` variables.
    pub fn unit(dim: usize, i: usize) -> Self {
        let mut orders = vec![0; dim];
        orders[i] = 1;
        MultiIndex(orders)
    }

    /// Number of input variables the index refers to.
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Total derivative order, the sum of all entries.
    pub fn total_order(&self) -> usize {
        self.0.iter().sum()
    }

    /// True when no derivative is taken at all.
    pub fn is_identity(&self) -> bool {
        self.0.iter().all(|&o| o == 0)
    }
}

impl From<Vec<usize>> for MultiIndex {
    fn from(orders: Vec<usize>) -> Self {
        MultiIndex(orders)
    }
}

/// Smoothness parameter of the Matérn family, restricted to the half-integer
/// values whose kernels are elementary functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaternNu {
    /// nu = 3/2: once differentiable at coincidence.
    ThreeHalves,
    /// nu = 5/2: twice differentiable at coincidence.
    FiveHalves,
    /// nu = 7/2: three times differentiable at coincidence.
    SevenHalves,
}

impl MaternNu {
    /// The integer p with nu = p + 1/2.
    fn p(self) -> usize {
        match self {
            MaternNu::ThreeHalves => 1,
            MaternNu::FiveHalves => 2,
            MaternNu::SevenHalves => 3,
        }
    }

    /// The value of nu as a float.
    pub fn value(self) -> f64 {
        self.p() as f64 + 0.5
    }

    /// Parse from a float, accepting only the supported half-integers.
    pub fn from_value(nu: f64) -> Result<Self> {
        if nu == 1.5 {
            Ok(MaternNu::ThreeHalves)
        } else if nu == 2.5 {
            Ok(MaternNu::FiveHalves)
        } else if nu == 3.5 {
            Ok(MaternNu::SevenHalves)
        } else {
            Err(Error::InvalidSpec(format!(
                "Matérn nu must be one of 1.5, 2.5, 3.5; got {nu}"
            )))
        }
    }
}

/// The kernel family together with its family-specific parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelFamily {
    /// `exp(-u/2)` with `u` the anisotropic squared distance.
    Rbf,
    /// Half-integer Matérn kernel.
    Matern(MaternNu),
    /// First-order rational quadratic `(1 + u)^-1`.
    RationalQuadratic,
    /// `((s - c)^T B (s' - c) + 1)^degree` with diagonal positive `B`.
    Polynomial {
        degree: u32,
        shift: Vec<f64>,
        scaling: Vec<f64>,
    },
    /// Product of a kernel on the leading `d` coordinates and a kernel on the
    /// remaining coordinates, typically radial in space and polynomial in the
    /// derivative values.
    HybridProduct {
        spatial: Box<KernelSpec>,
        state: Box<KernelSpec>,
    },
}

/// A positive-definite kernel with anisotropic scaling.
///
/// `lengthscales` is the diagonal of the scaling matrix in the weighted
/// squared distance; it is empty for the polynomial and hybrid families,
/// which carry their own parameters.
///
/// # Examples
///
/// ```
/// use keql::kernels::KernelSpec;
///
/// let k = KernelSpec::rbf(vec![1.0]).unwrap();
/// let v = k.eval(&[0.0], &[1.0]).unwrap();
/// assert!((v - (-0.5f64).exp()).abs() < 1e-15);
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    lengthscales: Vec<f64>,
}

impl KernelSpec {
    /// Squared-exponential kernel with the given squared-lengthscale diagonal.
    pub fn rbf(lengthscales: Vec<f64>) -> Result<Self> {
        Self::new(KernelFamily::Rbf, lengthscales)
    }

    /// Half-integer Matérn kernel.
    pub fn matern(nu: MaternNu, lengthscales: Vec<f64>) -> Result<Self> {
        Self::new(KernelFamily::Matern(nu), lengthscales)
    }

    /// First-order rational quadratic kernel.
    pub fn rational_quadratic(lengthscales: Vec<f64>) -> Result<Self> {
        Self::new(KernelFamily::RationalQuadratic, lengthscales)
    }

    /// Polynomial kernel `((s-c)^T B (s'-c) + 1)^degree`.
    pub fn polynomial(degree: u32, shift: Vec<f64>, scaling: Vec<f64>) -> Result<Self> {
        Self::new(
            KernelFamily::Polynomial {
                degree,
                shift,
                scaling,
            },
            Vec::new(),
        )
    }

    /// Product kernel acting on a split of the input coordinates.
    pub fn hybrid_product(spatial: KernelSpec, state: KernelSpec) -> Result<Self> {
        Self::new(
            KernelFamily::HybridProduct {
                spatial: Box::new(spatial),
                state: Box::new(state),
            },
            Vec::new(),
        )
    }

    /// Build and validate a spec from raw parts.
    pub fn new(family: KernelFamily, lengthscales: Vec<f64>) -> Result<Self> {
        let spec = KernelSpec {
            family,
            lengthscales,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let positive = |vals: &[f64], what: &str| -> Result<()> {
            if vals.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidSpec(format!(
                    "{what} entries must be strictly positive and finite"
                )));
            }
            Ok(())
        };
        match &self.family {
            KernelFamily::Rbf | KernelFamily::Matern(_) | KernelFamily::RationalQuadratic => {
                if self.lengthscales.is_empty() {
                    return Err(Error::InvalidSpec(
                        "radial kernels need at least one lengthscale".into(),
                    ));
                }
                positive(&self.lengthscales, "lengthscale")
            }
            KernelFamily::Polynomial {
                degree,
                shift,
                scaling,
            } => {
                if *degree == 0 {
                    return Err(Error::InvalidSpec(
                        "polynomial degree must be at least 1".into(),
                    ));
                }
                if shift.len() != scaling.len() || shift.is_empty() {
                    return Err(Error::InvalidSpec(format!(
                        "polynomial shift ({}) and scaling ({}) must have equal nonzero length",
                        shift.len(),
                        scaling.len()
                    )));
                }
                if !self.lengthscales.is_empty() {
                    return Err(Error::InvalidSpec(
                        "polynomial kernels are scaled by B, not by lengthscales".into(),
                    ));
                }
                positive(scaling, "scaling")
            }
            KernelFamily::HybridProduct { spatial, state } => {
                spatial.validate()?;
                state.validate()?;
                if !self.lengthscales.is_empty() {
                    return Err(Error::InvalidSpec(
                        "hybrid kernels carry lengthscales on their factors".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// The family and its parameters.
    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    /// Diagonal of the lengthscale matrix (empty for polynomial/hybrid).
    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    /// Replace the lengthscales, revalidating.
    pub fn with_lengthscales(&self, lengthscales: Vec<f64>) -> Result<Self> {
        Self::new(self.family.clone(), lengthscales)
    }

    /// Number of input coordinates the kernel acts on.
    pub fn input_dim(&self) -> usize {
        match &self.family {
            KernelFamily::Polynomial { shift, .. } => shift.len(),
            KernelFamily::HybridProduct { spatial, state } => {
                spatial.input_dim() + state.input_dim()
            }
            _ => self.lengthscales.len(),
        }
    }

    fn check_points(&self, x: &[f64], xp: &[f64]) -> Result<()> {
        let d = self.input_dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                context: "kernel first argument",
                expected: d,
                got: x.len(),
            });
        }
        if xp.len() != d {
            return Err(Error::DimensionMismatch {
                context: "kernel second argument",
                expected: d,
                got: xp.len(),
            });
        }
        Ok(())
    }

    /// Evaluate `k(x, x')`.
    pub fn eval(&self, x: &[f64], xp: &[f64]) -> Result<f64> {
        self.check_points(x, xp)?;
        Ok(self.eval_unchecked(x, xp))
    }

    fn eval_unchecked(&self, x: &[f64], xp: &[f64]) -> f64 {
        match &self.family {
            KernelFamily::Rbf => (-0.5 * sq_dist(x, xp, &self.lengthscales)).exp(),
            KernelFamily::RationalQuadratic => {
                1.0 / (1.0 + sq_dist(x, xp, &self.lengthscales))
            }
            KernelFamily::Matern(nu) => {
                matern_outer(*nu, sq_dist(x, xp, &self.lengthscales), 0)
            }
            KernelFamily::Polynomial {
                degree,
                shift,
                scaling,
            } => (bilinear(x, xp, shift, scaling) + 1.0).powi(*degree as i32),
            KernelFamily::HybridProduct { spatial, state } => {
                let d = spatial.input_dim();
                spatial.eval_unchecked(&x[..d], &xp[..d])
                    * state.eval_unchecked(&x[d..], &xp[d..])
            }
        }
    }

    /// Evaluate the mixed partial `D_x^a D_{x'}^b k(x, x')`.
    ///
    /// Orders are capped at two per argument; the Matérn family additionally
    /// requires `|a| + |b| <= 2p` for `nu = p + 1/2`, which is exactly the
    /// set of derivatives that exist and are continuous at coincidence.
    pub fn eval_deriv(&self, a: &MultiIndex, b: &MultiIndex, x: &[f64], xp: &[f64]) -> Result<f64> {
        self.check_points(x, xp)?;
        let d = self.input_dim();
        if a.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "first-argument multi-index",
                expected: d,
                got: a.dim(),
            });
        }
        if b.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "second-argument multi-index",
                expected: d,
                got: b.dim(),
            });
        }
        for order in [a.total_order(), b.total_order()] {
            if order > MAX_ORDER_PER_ARG {
                return Err(Error::UnsupportedDerivative {
                    order,
                    max: MAX_ORDER_PER_ARG,
                });
            }
        }
        self.eval_deriv_inner(a, b, x, xp)
    }

    fn eval_deriv_inner(
        &self,
        a: &MultiIndex,
        b: &MultiIndex,
        x: &[f64],
        xp: &[f64],
    ) -> Result<f64> {
        let vars = expand_vars(a, b);
        match &self.family {
            KernelFamily::Rbf => {
                let u = sq_dist(x, xp, &self.lengthscales);
                let e = (-0.5 * u).exp();
                Ok(chain_sum(
                    &vars,
                    &|v| radial_d1(v, x, xp, &self.lengthscales),
                    &|v, w| radial_d2(v, w, &self.lengthscales),
                    &mut |n| e * NEG_HALF_POWERS[n],
                ))
            }
            KernelFamily::RationalQuadratic => {
                let u = sq_dist(x, xp, &self.lengthscales);
                let base = 1.0 / (1.0 + u);
                Ok(chain_sum(
                    &vars,
                    &|v| radial_d1(v, x, xp, &self.lengthscales),
                    &|v, w| radial_d2(v, w, &self.lengthscales),
                    &mut |n| RQ_SIGN_FACT[n] * base.powi(n as i32 + 1),
                ))
            }
            KernelFamily::Matern(nu) => {
                let total = a.total_order() + b.total_order();
                let p = nu.p();
                if total > 2 * p {
                    return Err(Error::InsufficientSmoothness {
                        nu: nu.value(),
                        smoothness: 2 * p,
                        requested: total,
                    });
                }
                let u = sq_dist(x, xp, &self.lengthscales);
                let nu = *nu;
                Ok(chain_sum(
                    &vars,
                    &|v| radial_d1(v, x, xp, &self.lengthscales),
                    &|v, w| radial_d2(v, w, &self.lengthscales),
                    &mut |n| matern_outer(nu, u, n),
                ))
            }
            KernelFamily::Polynomial {
                degree,
                shift,
                scaling,
            } => {
                let q = bilinear(x, xp, shift, scaling);
                let deg = *degree as i32;
                Ok(chain_sum(
                    &vars,
                    &|v| {
                        let i = v.dim;
                        if v.first_arg {
                            scaling[i] * (xp[i] - shift[i])
                        } else {
                            scaling[i] * (x[i] - shift[i])
                        }
                    },
                    &|v, w| {
                        if v.dim == w.dim && v.first_arg != w.first_arg {
                            scaling[v.dim]
                        } else {
                            0.0
                        }
                    },
                    &mut |n| poly_outer(deg, q, n),
                ))
            }
            KernelFamily::HybridProduct { spatial, state } => {
                let d = spatial.input_dim();
                let (a_sp, a_st) = split_index(a, d);
                let (b_sp, b_st) = split_index(b, d);
                let left = spatial.eval_deriv_inner(&a_sp, &b_sp, &x[..d], &xp[..d])?;
                let right = state.eval_deriv_inner(&a_st, &b_st, &x[d..], &xp[d..])?;
                Ok(left * right)
            }
        }
    }

    /// Gradient of `k(s', s)` with respect to the second argument `s`.
    pub fn grad_second_arg(&self, sp: &[f64], s: &[f64]) -> Result<Vec<f64>> {
        self.check_points(sp, s)?;
        Ok(self.grad_second_arg_unchecked(sp, s))
    }

    fn grad_second_arg_unchecked(&self, sp: &[f64], s: &[f64]) -> Vec<f64> {
        match &self.family {
            KernelFamily::Rbf | KernelFamily::RationalQuadratic | KernelFamily::Matern(_) => {
                let gamma = &self.lengthscales;
                let u = sq_dist(sp, s, gamma);
                let g1 = match &self.family {
                    KernelFamily::Rbf => -0.5 * (-0.5 * u).exp(),
                    KernelFamily::RationalQuadratic => {
                        let base = 1.0 / (1.0 + u);
                        -base * base
                    }
                    KernelFamily::Matern(nu) => matern_outer(*nu, u, 1),
                    _ => unreachable!(),
                };
                // du/ds_i = 2 (s_i - s'_i) / gamma_i.
                (0..s.len())
                    .map(|i| g1 * 2.0 * (s[i] - sp[i]) / gamma[i])
                    .collect()
            }
            KernelFamily::Polynomial {
                degree,
                shift,
                scaling,
            } => {
                let q = bilinear(sp, s, shift, scaling);
                let h1 = poly_outer(*degree as i32, q, 1);
                (0..s.len())
                    .map(|i| h1 * scaling[i] * (sp[i] - shift[i]))
                    .collect()
            }
            KernelFamily::HybridProduct { spatial, state } => {
                let d = spatial.input_dim();
                let left = spatial.eval_unchecked(&sp[..d], &s[..d]);
                let right = state.eval_unchecked(&sp[d..], &s[d..]);
                let mut grad = spatial.grad_second_arg_unchecked(&sp[..d], &s[..d]);
                for g in grad.iter_mut() {
                    *g *= right;
                }
                let mut grad_state = state.grad_second_arg_unchecked(&sp[d..], &s[d..]);
                for g in grad_state.iter_mut() {
                    *g *= left;
                }
                grad.extend(grad_state);
                grad
            }
        }
    }
}

/// One differentiation variable: a coordinate of either the first or the
/// second kernel argument.
#[derive(Clone, Copy)]
struct DerivVar {
    dim: usize,
    first_arg: bool,
}

fn expand_vars(a: &MultiIndex, b: &MultiIndex) -> Vec<DerivVar> {
    let mut vars = Vec::with_capacity(a.total_order() + b.total_order());
    for (dim, &order) in a.0.iter().enumerate() {
        for _ in 0..order {
            vars.push(DerivVar {
                dim,
                first_arg: true,
            });
        }
    }
    for (dim, &order) in b.0.iter().enumerate() {
        for _ in 0..order {
            vars.push(DerivVar {
                dim,
                first_arg: false,
            });
        }
    }
    vars
}

fn split_index(a: &MultiIndex, d: usize) -> (MultiIndex, MultiIndex) {
    (
        MultiIndex(a.0[..d].to_vec()),
        MultiIndex(a.0[d..].to_vec()),
    )
}

/// Anisotropic squared distance `sum_i (x_i - x'_i)^2 / gamma_i`.
fn sq_dist(x: &[f64], xp: &[f64], gamma: &[f64]) -> f64 {
    let mut u = 0.0;
    for i in 0..x.len() {
        let d = x[i] - xp[i];
        u += d * d / gamma[i];
    }
    u
}

/// Bilinear form `sum_i B_i (x_i - c_i)(x'_i - c_i)`.
fn bilinear(x: &[f64], xp: &[f64], shift: &[f64], scaling: &[f64]) -> f64 {
    let mut q = 0.0;
    for i in 0..x.len() {
        q += scaling[i] * (x[i] - shift[i]) * (xp[i] - shift[i]);
    }
    q
}

fn radial_d1(v: DerivVar, x: &[f64], xp: &[f64], gamma: &[f64]) -> f64 {
    let delta = x[v.dim] - xp[v.dim];
    let sign = if v.first_arg { 2.0 } else { -2.0 };
    sign * delta / gamma[v.dim]
}

fn radial_d2(v: DerivVar, w: DerivVar, gamma: &[f64]) -> f64 {
    if v.dim != w.dim {
        return 0.0;
    }
    let sign = if v.first_arg == w.first_arg { 2.0 } else { -2.0 };
    sign / gamma[v.dim]
}

/// Chain-rule expansion of a mixed partial of `g(u(x, x'))` where `u` has
/// vanishing third derivatives. The sum runs over set partitions of the
/// differentiation variables into singletons and pairs; `outer(n)` returns
/// the n-th derivative of the profile `g` at the current `u` and is only
/// invoked for terms with a nonzero polynomial coefficient, so profiles whose
/// high derivatives blow up at coincidence are never evaluated there.
fn chain_sum(
    vars: &[DerivVar],
    d1: &dyn Fn(DerivVar) -> f64,
    d2: &dyn Fn(DerivVar, DerivVar) -> f64,
    outer: &mut dyn FnMut(usize) -> f64,
) -> f64 {
    let mut term = |n: usize, coeff: f64| if coeff == 0.0 { 0.0 } else { coeff * outer(n) };
    match vars.len() {
        0 => term(0, 1.0),
        1 => term(1, d1(vars[0])),
        2 => {
            let (u1, u2) = (d1(vars[0]), d1(vars[1]));
            term(2, u1 * u2) + term(1, d2(vars[0], vars[1]))
        }
        3 => {
            let u: Vec<f64> = vars.iter().map(|&v| d1(v)).collect();
            let p = |i: usize, j: usize| d2(vars[i], vars[j]);
            term(3, u[0] * u[1] * u[2])
                + term(2, p(0, 1) * u[2] + p(0, 2) * u[1] + p(1, 2) * u[0])
        }
        4 => {
            let u: Vec<f64> = vars.iter().map(|&v| d1(v)).collect();
            let p = |i: usize, j: usize| d2(vars[i], vars[j]);
            term(4, u[0] * u[1] * u[2] * u[3])
                + term(
                    3,
                    p(0, 1) * u[2] * u[3]
                        + p(0, 2) * u[1] * u[3]
                        + p(0, 3) * u[1] * u[2]
                        + p(1, 2) * u[0] * u[3]
                        + p(1, 3) * u[0] * u[2]
                        + p(2, 3) * u[0] * u[1],
                )
                + term(2, p(0, 1) * p(2, 3) + p(0, 2) * p(1, 3) + p(0, 3) * p(1, 2))
        }
        n => unreachable!("total derivative order {n} cannot arise with the per-argument cap"),
    }
}

/// Powers of -1/2, indexed by derivative order of exp(-u/2).
const NEG_HALF_POWERS: [f64; 5] = [1.0, -0.5, 0.25, -0.125, 0.0625];

/// `(-1)^n n!` for the rational quadratic profile (1+u)^-1.
const RQ_SIGN_FACT: [f64; 5] = [1.0, -1.0, 2.0, -6.0, 24.0];

/// n-th derivative with respect to `u` of the Matérn profile, written with
/// `w = sqrt(2 nu u)`. Differentiating the profile once maps the degree-p
/// polynomial factor to a degree-(p-1) one, so each entry below is elementary;
/// entries that divide by `w` are only reachable with a nonzero chain-rule
/// coefficient when `u > 0`.
fn matern_outer(nu: MaternNu, u: f64, n: usize) -> f64 {
    let two_nu = 2.0 * nu.value();
    let w = (two_nu * u).sqrt();
    let e = (-w).exp();
    match (nu, n) {
        (MaternNu::ThreeHalves, 0) => (1.0 + w) * e,
        (MaternNu::ThreeHalves, 1) => -1.5 * e,
        (MaternNu::ThreeHalves, 2) => 2.25 * e / w,
        (MaternNu::FiveHalves, 0) => (1.0 + w + w * w / 3.0) * e,
        (MaternNu::FiveHalves, 1) => -(5.0 / 6.0) * (1.0 + w) * e,
        (MaternNu::FiveHalves, 2) => (25.0 / 12.0) * e,
        (MaternNu::FiveHalves, 3) => -(125.0 / 24.0) * e / w,
        (MaternNu::FiveHalves, 4) => (625.0 / 48.0) * (1.0 + w) * e / (w * w * w),
        (MaternNu::SevenHalves, 0) => (1.0 + w + 0.4 * w * w + w * w * w / 15.0) * e,
        (MaternNu::SevenHalves, 1) => -0.7 * (1.0 + w + w * w / 3.0) * e,
        (MaternNu::SevenHalves, 2) => (49.0 / 60.0) * (1.0 + w) * e,
        (MaternNu::SevenHalves, 3) => -(343.0 / 120.0) * e,
        (MaternNu::SevenHalves, 4) => (2401.0 / 240.0) * e / w,
        _ => unreachable!("derivative order screened by the smoothness check"),
    }
}

/// n-th derivative of `(1 + q)^degree` with respect to `q`.
fn poly_outer(degree: i32, q: f64, n: usize) -> f64 {
    let n = n as i32;
    if n > degree {
        return 0.0;
    }
    let mut coeff = 1.0;
    for i in 0..n {
        coeff *= (degree - i) as f64;
    }
    coeff * (1.0 + q).powi(degree - n)
}

/// Select lengthscales by maximising the Gaussian log marginal likelihood
/// over a candidate grid.
///
/// Returns the candidate with the largest
/// `-1/2 z^T (K + sigma^2 I)^-1 z - 1/2 log det(K + sigma^2 I) - n/2 log 2pi`;
/// ties and the single-candidate case resolve to the earliest maximiser.
pub fn mle_lengthscales(
    base: &KernelSpec,
    candidates: &[Vec<f64>],
    points: &[Vec<f64>],
    values: &[f64],
    nugget: f64,
) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::Empty("lengthscale candidate grid"));
    }
    if points.len() != values.len() {
        return Err(Error::DimensionMismatch {
            context: "mle points vs values",
            expected: points.len(),
            got: values.len(),
        });
    }
    let mut best: Option<(usize, f64)> = None;
    for (idx, cand) in candidates.iter().enumerate() {
        let spec = base.with_lengthscales(cand.clone())?;
        let ll = log_marginal_likelihood(&spec, points, values, nugget)?;
        if best.is_none_or(|(_, bll)| ll > bll) {
            best = Some((idx, ll));
        }
    }
    let (idx, _) = best.expect("candidate list is nonempty");
    Ok(candidates[idx].clone())
}

/// Gaussian log marginal likelihood of `values` under the kernel, with an
/// additive noise variance `nugget`.
pub fn log_marginal_likelihood(
    spec: &KernelSpec,
    points: &[Vec<f64>],
    values: &[f64],
    nugget: f64,
) -> Result<f64> {
    let n = points.len();
    if n == 0 {
        return Err(Error::Empty("mle point set"));
    }
    let mut k = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = spec.eval(&points[i], &points[j])?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    for i in 0..n {
        k[(i, i)] += nugget;
    }
    // Direct Cholesky; the nugget is the caller's regularisation. A tiny
    // jitter retry keeps pathological grids (duplicate points, nugget 0)
    // from aborting a whole grid search.
    let trace: f64 = (0..n).map(|i| k[(i, i)]).sum();
    let mut jitter = 0.0;
    let l = loop {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        match kj.cholesky_into(UPLO::Lower) {
            Ok(l) => break l,
            Err(_) if jitter == 0.0 => jitter = 1e-10 * trace / n as f64,
            Err(_) if jitter < trace => jitter *= 10.0,
            Err(_) => {
                return Err(Error::NotPositiveDefinite {
                    tries: 8,
                    last_jitter: jitter,
                })
            }
        }
    };
    let z = Array1::from(values.to_vec());
    // Solve L y = z by forward substitution; then z^T K^-1 z = |y|^2.
    let mut y = z;
    for i in 0..n {
        let mut s = y[i];
        for j in 0..i {
            s -= l[(i, j)] * y[j];
        }
        y[i] = s / l[(i, i)];
    }
    let quad: f64 = y.iter().map(|v| v * v).sum();
    let logdet: f64 = (0..n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    Ok(-0.5 * quad - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Serialisable form of [`KernelSpec`]; one flat JSON object per kernel with
/// nested objects for hybrid factors.
#[derive(Serialize, Deserialize)]
struct KernelSpecRepr {
    family: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    lengthscales: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    degree: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shift: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scaling: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spatial: Option<Box<KernelSpecRepr>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state: Option<Box<KernelSpecRepr>>,
}

impl From<&KernelSpec> for KernelSpecRepr {
    fn from(spec: &KernelSpec) -> Self {
        let mut repr = KernelSpecRepr {
            family: String::new(),
            lengthscales: spec.lengthscales.clone(),
            nu: None,
            degree: None,
            shift: None,
            scaling: None,
            spatial: None,
            state: None,
        };
        match &spec.family {
            KernelFamily::Rbf => repr.family = "rbf".into(),
            KernelFamily::Matern(nu) => {
                repr.family = "matern".into();
                repr.nu = Some(nu.value());
            }
            KernelFamily::RationalQuadratic => repr.family = "rational_quadratic".into(),
            KernelFamily::Polynomial {
                degree,
                shift,
                scaling,
            } => {
                repr.family = "polynomial".into();
                repr.degree = Some(*degree);
                repr.shift = Some(shift.clone());
                repr.scaling = Some(scaling.clone());
            }
            KernelFamily::HybridProduct { spatial, state } => {
                repr.family = "hybrid_product".into();
                repr.spatial = Some(Box::new(KernelSpecRepr::from(spatial.as_ref())));
                repr.state = Some(Box::new(KernelSpecRepr::from(state.as_ref())));
            }
        }
        repr
    }
}

impl TryFrom<KernelSpecRepr> for KernelSpec {
    type Error = Error;

    fn try_from(repr: KernelSpecRepr) -> Result<Self> {
        let family = match repr.family.as_str() {
            "rbf" => KernelFamily::Rbf,
            "matern" => {
                let nu = repr.nu.ok_or_else(|| {
                    Error::InvalidSpec("matern kernel requires a \"nu\" field".into())
                })?;
                KernelFamily::Matern(MaternNu::from_value(nu)?)
            }
            "rational_quadratic" => KernelFamily::RationalQuadratic,
            "polynomial" => KernelFamily::Polynomial {
                degree: repr.degree.ok_or_else(|| {
                    Error::InvalidSpec("polynomial kernel requires a \"degree\" field".into())
                })?,
                shift: repr.shift.ok_or_else(|| {
                    Error::InvalidSpec("polynomial kernel requires a \"shift\" field".into())
                })?,
                scaling: repr.scaling.ok_or_else(|| {
                    Error::InvalidSpec("polynomial kernel requires a \"scaling\" field".into())
                })?,
            },
            "hybrid_product" => {
                let spatial = repr.spatial.ok_or_else(|| {
                    Error::InvalidSpec("hybrid kernel requires a \"spatial\" field".into())
                })?;
                let state = repr.state.ok_or_else(|| {
                    Error::InvalidSpec("hybrid kernel requires a \"state\" field".into())
                })?;
                KernelFamily::HybridProduct {
                    spatial: Box::new(KernelSpec::try_from(*spatial)?),
                    state: Box::new(KernelSpec::try_from(*state)?),
                }
            }
            other => {
                return Err(Error::InvalidSpec(format!("unknown kernel family {other:?}")))
            }
        };
        KernelSpec::new(family, repr.lengthscales)
    }
}

impl Serialize for KernelSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        KernelSpecRepr::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for KernelSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = KernelSpecRepr::deserialize(deserializer)?;
        KernelSpec::try_from(repr).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn all_families(dim: usize, rng: &mut ChaCha8Rng) -> Vec<KernelSpec> {
        let scales: Vec<f64> = (0..dim).map(|_| rng.random_range(0.5..2.0)).collect();
        let shift: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.3..0.3)).collect();
        let scaling: Vec<f64> = (0..dim).map(|_| rng.random_range(0.5..1.5)).collect();
        let mut specs = vec![
            KernelSpec::rbf(scales.clone()).unwrap(),
            KernelSpec::rational_quadratic(scales.clone()).unwrap(),
            KernelSpec::matern(MaternNu::FiveHalves, scales.clone()).unwrap(),
            KernelSpec::matern(MaternNu::SevenHalves, scales.clone()).unwrap(),
            KernelSpec::polynomial(2, shift.clone(), scaling.clone()).unwrap(),
            KernelSpec::polynomial(3, shift, scaling).unwrap(),
        ];
        if dim >= 2 {
            specs.push(
                KernelSpec::hybrid_product(
                    KernelSpec::rbf(scales[..1].to_vec()).unwrap(),
                    KernelSpec::polynomial(
                        2,
                        vec![0.1; dim - 1],
                        vec![1.0; dim - 1],
                    )
                    .unwrap(),
                )
                .unwrap(),
            );
        }
        specs
    }

    fn random_point(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Central finite differences of `eval`, iterated per differentiation
    /// variable. Second-order accurate in each variable.
    fn fd_deriv(k: &KernelSpec, a: &MultiIndex, b: &MultiIndex, x: &[f64], xp: &[f64], h: f64) -> f64 {
        fn go(
            k: &KernelSpec,
            vars: &[DerivVar],
            x: &mut Vec<f64>,
            xp: &mut Vec<f64>,
            h: f64,
        ) -> f64 {
            match vars.split_first() {
                None => k.eval(x, xp).unwrap(),
                Some((v, rest)) => {
                    let slot = v.dim;
                    let bump = |x: &mut Vec<f64>, xp: &mut Vec<f64>, s: f64| {
                        if v.first_arg {
                            x[slot] += s;
                        } else {
                            xp[slot] += s;
                        }
                    };
                    bump(x, xp, h);
                    let plus = go(k, rest, x, xp, h);
                    bump(x, xp, -2.0 * h);
                    let minus = go(k, rest, x, xp, h);
                    bump(x, xp, h);
                    (plus - minus) / (2.0 * h)
                }
            }
        }
        let vars = expand_vars(a, b);
        go(k, &vars, &mut x.to_vec(), &mut xp.to_vec(), h)
    }

    fn index_pairs(dim: usize, max_total: usize) -> Vec<(MultiIndex, MultiIndex)> {
        // All multi-indices with total order <= 2 on `dim` variables.
        let mut singles = vec![MultiIndex::zero(dim)];
        for i in 0..dim {
            singles.push(MultiIndex::unit(dim, i));
            for j in i..dim {
                let mut orders = vec![0; dim];
                orders[i] += 1;
                orders[j] += 1;
                singles.push(MultiIndex(orders));
            }
        }
        let mut pairs = Vec::new();
        for a in &singles {
            for b in &singles {
                if a.total_order() + b.total_order() <= max_total {
                    pairs.push((a.clone(), b.clone()));
                }
            }
        }
        pairs
    }

    #[test]
    fn closed_form_values() {
        let k = KernelSpec::rbf(vec![1.0, 1.0]).unwrap();
        assert_relative_eq!(k.eval(&[0.3, -0.2], &[0.3, -0.2]).unwrap(), 1.0);
        assert_relative_eq!(
            k.eval(&[0.0, 0.0], &[1.0, 0.0]).unwrap(),
            (-0.5f64).exp(),
            max_relative = 1e-15
        );

        let p = KernelSpec::polynomial(2, vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert_relative_eq!(p.eval(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 4.0);

        let rq = KernelSpec::rational_quadratic(vec![1.0]).unwrap();
        assert_relative_eq!(rq.eval(&[0.0], &[1.0]).unwrap(), 0.5);
    }

    #[test]
    fn matern_matches_published_closed_forms() {
        // Published polynomial-times-exponential forms in the scaled radius r.
        let gamma = 0.8f64;
        let x = [0.25];
        let xp = [-0.55];
        let r = ((x[0] - xp[0]) * (x[0] - xp[0]) / gamma).sqrt();
        let cases = [
            (MaternNu::ThreeHalves, {
                let s = 3f64.sqrt() * r;
                (1.0 + s) * (-s).exp()
            }),
            (MaternNu::FiveHalves, {
                let s = 5f64.sqrt() * r;
                (1.0 + s + s * s / 3.0) * (-s).exp()
            }),
            (MaternNu::SevenHalves, {
                let s = 7f64.sqrt() * r;
                (1.0 + s + 2.0 * s * s / 5.0 + s * s * s / 15.0) * (-s).exp()
            }),
        ];
        for (nu, expected) in cases {
            let k = KernelSpec::matern(nu, vec![gamma]).unwrap();
            assert_relative_eq!(k.eval(&x, &xp).unwrap(), expected, max_relative = 1e-10);
            assert_relative_eq!(k.eval(&x, &x).unwrap(), 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn symmetry_and_mixed_derivative_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dim in [1usize, 3] {
            for k in all_families(dim, &mut rng) {
                let pairs = index_pairs(dim, 4);
                for _ in 0..20 {
                    let x = random_point(dim, &mut rng);
                    let xp = random_point(dim, &mut rng);
                    let forward = k.eval(&x, &xp).unwrap();
                    let backward = k.eval(&xp, &x).unwrap();
                    assert!((forward - backward).abs() <= 1e-12);
                    for (a, b) in pairs.iter().take(12) {
                        let lhs = match k.eval_deriv(a, b, &x, &xp) {
                            Ok(v) => v,
                            Err(Error::InsufficientSmoothness { .. }) => continue,
                            Err(e) => panic!("unexpected error: {e}"),
                        };
                        let rhs = k.eval_deriv(b, a, &xp, &x).unwrap();
                        let scale = lhs.abs().max(rhs.abs()).max(1.0);
                        assert!(
                            (lhs - rhs).abs() <= 1e-10 * scale,
                            "mixed-derivative symmetry violated: {lhs} vs {rhs}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dim in [1usize, 2] {
            for k in all_families(dim, &mut rng) {
                let pairs = index_pairs(dim, 4);
                let mut checked = 0usize;
                'outer: while checked < 50 {
                    let x = random_point(dim, &mut rng);
                    let xp = random_point(dim, &mut rng);
                    // Keep FD stencils away from the Matérn coincidence kink.
                    if sq_dist(&x, &xp, &vec![1.0; dim]) < 0.05 {
                        continue 'outer;
                    }
                    for (a, b) in &pairs {
                        let exact = match k.eval_deriv(a, b, &x, &xp) {
                            Ok(v) => v,
                            Err(Error::InsufficientSmoothness { .. }) => continue,
                            Err(e) => panic!("unexpected error: {e}"),
                        };
                        // Richardson-extrapolated central differences: the
                        // plain h^2 truncation term alone can exceed the
                        // tolerance for sharply curved profiles.
                        let h = 4e-3;
                        let fd = (4.0 * fd_deriv(&k, a, b, &x, &xp, h / 2.0)
                            - fd_deriv(&k, a, b, &x, &xp, h))
                            / 3.0;
                        let scale = exact.abs().max(1.0);
                        assert!(
                            (exact - fd).abs() <= 1e-4 * scale,
                            "family {:?}, a={:?}, b={:?}: exact {exact} vs fd {fd}",
                            k.family(),
                            a,
                            b
                        );
                        checked += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn coincidence_identities() {
        let k = KernelSpec::rbf(vec![1.0]).unwrap();
        let x = [0.4];
        let zero = MultiIndex::zero(1);
        let one = MultiIndex::unit(1, 0);
        // Odd derivative of a stationary kernel vanishes at coincidence.
        assert_relative_eq!(k.eval_deriv(&zero, &one, &x, &x).unwrap(), 0.0);
        // D_x D_x' exp(-(x-x')^2/2) at coincidence equals 1 for unit scale.
        assert_relative_eq!(k.eval_deriv(&one, &one, &x, &x).unwrap(), 1.0);
        // Matérn cross derivative at coincidence: 2 nu / ((2 nu - 2) gamma)
        // equals 5/3 for nu=5/2, gamma=1 (classical value nu/(nu-1)).
        let m = KernelSpec::matern(MaternNu::FiveHalves, vec![1.0]).unwrap();
        assert_relative_eq!(
            m.eval_deriv(&one, &one, &x, &x).unwrap(),
            5.0 / 3.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn matern_smoothness_is_enforced() {
        let k = KernelSpec::matern(MaternNu::ThreeHalves, vec![1.0]).unwrap();
        let one = MultiIndex::unit(1, 0);
        let two = MultiIndex(vec![2]);
        assert!(k.eval_deriv(&one, &one, &[0.1], &[0.9]).is_ok());
        assert!(matches!(
            k.eval_deriv(&two, &one, &[0.1], &[0.9]),
            Err(Error::InsufficientSmoothness { .. })
        ));
        let k5 = KernelSpec::matern(MaternNu::FiveHalves, vec![1.0]).unwrap();
        assert!(k5.eval_deriv(&two, &two, &[0.1], &[0.9]).is_ok());
    }

    #[test]
    fn grad_second_arg_matches_eval_deriv() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for dim in [1usize, 3] {
            for k in all_families(dim, &mut rng) {
                for _ in 0..10 {
                    let sp = random_point(dim, &mut rng);
                    let s = random_point(dim, &mut rng);
                    let grad = k.grad_second_arg(&sp, &s).unwrap();
                    for (j, &g) in grad.iter().enumerate() {
                        let b = MultiIndex::unit(dim, j);
                        let expected = k
                            .eval_deriv(&MultiIndex::zero(dim), &b, &sp, &s)
                            .unwrap();
                        assert_relative_eq!(g, expected, max_relative = 1e-12, epsilon = 1e-14);
                    }
                }
            }
        }
        // Closed-form checks.
        let k = KernelSpec::rbf(vec![1.0, 1.0]).unwrap();
        let g = k.grad_second_arg(&[0.3, 0.4], &[0.3, 0.4]).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
        let lin = KernelSpec::polynomial(1, vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let g = lin.grad_second_arg(&[2.0, -1.0], &[0.5, 0.5]).unwrap();
        assert_relative_eq!(g[0], 2.0);
        assert_relative_eq!(g[1], -1.0);
    }

    #[test]
    fn gram_matrices_are_positive_semidefinite() {
        use ndarray_linalg::eigh::Eigh;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for dim in [1usize, 2] {
            for k in all_families(dim, &mut rng) {
                let pts: Vec<Vec<f64>> = (0..20).map(|_| random_point(dim, &mut rng)).collect();
                let mut g = Array2::<f64>::zeros((20, 20));
                for i in 0..20 {
                    for j in 0..20 {
                        g[(i, j)] = k.eval(&pts[i], &pts[j]).unwrap();
                    }
                }
                let trace: f64 = (0..20).map(|i| g[(i, i)]).sum();
                let (eigs, _) = g.eigh(UPLO::Lower).unwrap();
                let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
                assert!(
                    min >= -1e-8 * trace,
                    "family {:?} min eig {min} vs trace {trace}",
                    k.family()
                );
            }
        }
    }

    #[test]
    fn mle_selects_generating_lengthscale() {
        use ndarray_linalg::cholesky::Cholesky;
        let base = KernelSpec::rbf(vec![1.0, 1.0]).unwrap();
        let candidates = vec![vec![0.0625, 0.0625], vec![0.25, 0.25], vec![1.0, 1.0]];
        // gamma = 0.25 corresponds to lengthscale 0.5 in each coordinate.
        let truth = KernelSpec::rbf(vec![0.25, 0.25]).unwrap();
        let grid: Vec<Vec<f64>> = (0..15)
            .flat_map(|i| (0..15).map(move |j| vec![i as f64 / 14.0, j as f64 / 14.0]))
            .collect();
        let n = grid.len();
        let mut kmat = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                kmat[(i, j)] = truth.eval(&grid[i], &grid[j]).unwrap();
            }
        }
        for i in 0..n {
            kmat[(i, i)] += 1e-8;
        }
        let l = kmat.cholesky(UPLO::Lower).unwrap();
        let mut hits = 0;
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal: Vec<f64> = (0..n)
                .map(|_| {
                    // Box-Muller keeps the test free of extra dependencies.
                    let u1: f64 = rng.random_range(1e-12..1.0);
                    let u2: f64 = rng.random_range(0.0..1.0);
                    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                })
                .collect();
            let z = l.dot(&Array1::from(normal));
            let chosen = mle_lengthscales(&base, &candidates, &grid, z.as_slice().unwrap(), 1e-6)
                .unwrap();
            if chosen == vec![0.25, 0.25] {
                hits += 1;
            }
        }
        assert!(hits >= 9, "picked the generating lengthscale {hits}/10 times");

        // A single candidate is returned unconditionally.
        let only = mle_lengthscales(&base, &[vec![3.0, 3.0]], &grid[..5], &[0.0; 5], 1e-6).unwrap();
        assert_eq!(only, vec![3.0, 3.0]);
    }

    #[test]
    fn zero_values_reduce_mle_to_log_determinant() {
        let base = KernelSpec::rbf(vec![1.0]).unwrap();
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 9.0]).collect();
        let zeros = vec![0.0; 10];
        for cand in [vec![0.5], vec![2.0]] {
            let spec = base.with_lengthscales(cand.clone()).unwrap();
            let ll = log_marginal_likelihood(&spec, &pts, &zeros, 1e-4).unwrap();
            // Dense recomputation of -1/2 log det - n/2 log 2pi.
            let n = pts.len();
            let mut k = Array2::<f64>::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    k[(i, j)] = spec.eval(&pts[i], &pts[j]).unwrap();
                }
            }
            for i in 0..n {
                k[(i, i)] += 1e-4;
            }
            let l = k.cholesky_into(UPLO::Lower).unwrap();
            let logdet: f64 = (0..n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
            let expected = -0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
            assert_relative_eq!(ll, expected, max_relative = 1e-10);
        }
    }

    #[test]
    fn serde_round_trip() {
        let hybrid = KernelSpec::hybrid_product(
            KernelSpec::rbf(vec![0.16, 0.16]).unwrap(),
            KernelSpec::polynomial(1, vec![0.0; 6], vec![1.0; 6]).unwrap(),
        )
        .unwrap();
        let specs = vec![
            KernelSpec::rbf(vec![1.0, 2.0]).unwrap(),
            KernelSpec::matern(MaternNu::SevenHalves, vec![0.5]).unwrap(),
            KernelSpec::rational_quadratic(vec![1.0]).unwrap(),
            KernelSpec::polynomial(2, vec![0.1, 0.2], vec![1.0, 0.5]).unwrap(),
            hybrid,
        ];
        for spec in specs {
            let json = serde_json::to_string(&spec).unwrap();
            let back: KernelSpec = serde_json::from_str(&json).unwrap();
            assert_eq!(spec, back);
        }
        // Validation happens on deserialisation too.
        let bad: std::result::Result<KernelSpec, _> =
            serde_json::from_str(r#"{"family":"matern","lengthscales":[1.0],"nu":2.0}"#);
        assert!(bad.is_err());
        let bad: std::result::Result<KernelSpec, _> =
            serde_json::from_str(r#"{"family":"rbf","lengthscales":[-1.0]}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn dimension_errors_are_reported() {
        let k = KernelSpec::rbf(vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            k.eval(&[0.0], &[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        let a = MultiIndex(vec![3, 0]);
        assert!(matches!(
            k.eval_deriv(&a, &MultiIndex::zero(2), &[0.0, 0.0], &[1.0, 1.0]),
            Err(Error::UnsupportedDerivative { .. })
        ));
    }
}
