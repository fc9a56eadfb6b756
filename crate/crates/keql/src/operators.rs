//! Differential operators, candidate solutions, and the feature map.
//!
//! A candidate solution is a kernel expansion, either over derivative
//! functionals on a collocation grid (the full basis) or over plain point
//! evaluations (the reduced basis). The feature map sends such a model `v`
//! and a grid point `y` to the vector
//!
//! ```text
//! s = (y, L_1 v(y), ..., L_Q v(y)),
//! ```
//!
//! whose entries feed the equation kernel. Everything here is linear in the
//! expansion coefficients, which downstream solvers exploit through the
//! constant feature Jacobian.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, MultiIndex, MAX_ORDER_PER_ARG};

/// The ordered operator bundle (L_1, ..., L_Q) applied inside the feature
/// map. The first operator is always the identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<MultiIndex>", into = "Vec<MultiIndex>")]
pub struct DiffOperatorSet {
    ops: Vec<MultiIndex>,
}

impl DiffOperatorSet {
    /// Validate and build an operator set.
    pub fn new(ops: Vec<MultiIndex>) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::Empty("operator set"));
        }
        if !ops[0].is_identity() {
            return Err(Error::InvalidSpec(
                "the first operator must be the identity".into(),
            ));
        }
        let dim = ops[0].dim();
        for (i, op) in ops.iter().enumerate() {
            if op.dim() != dim {
                return Err(Error::DimensionMismatch {
                    context: "operator multi-index dimension",
                    expected: dim,
                    got: op.dim(),
                });
            }
            if op.total_order() > MAX_ORDER_PER_ARG {
                return Err(Error::UnsupportedDerivative {
                    order: op.total_order(),
                    max: MAX_ORDER_PER_ARG,
                });
            }
            if ops[..i].contains(op) {
                return Err(Error::InvalidSpec(format!(
                    "duplicate operator {:?} in operator set",
                    op.0
                )));
            }
        }
        Ok(DiffOperatorSet { ops })
    }

    /// The identity-only set on `dim` variables.
    pub fn identity_only(dim: usize) -> Self {
        DiffOperatorSet {
            ops: vec![MultiIndex::zero(dim)],
        }
    }

    /// Number of operators Q.
    pub fn q(&self) -> usize {
        self.ops.len()
    }

    /// Dimension of the domain the operators act on.
    pub fn dim(&self) -> usize {
        self.ops[0].dim()
    }

    /// All operators in order.
    pub fn ops(&self) -> &[MultiIndex] {
        &self.ops
    }

    /// The q-th operator (zero-based; index 0 is the identity).
    pub fn op(&self, q: usize) -> &MultiIndex {
        &self.ops[q]
    }
}

impl From<DiffOperatorSet> for Vec<MultiIndex> {
    fn from(set: DiffOperatorSet) -> Self {
        set.ops
    }
}

impl TryFrom<Vec<MultiIndex>> for DiffOperatorSet {
    type Error = Error;

    fn try_from(ops: Vec<MultiIndex>) -> Result<Self> {
        DiffOperatorSet::new(ops)
    }
}

/// One term of the known part: a constant coefficient times a derivative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnownTerm {
    pub coefficient: f64,
    pub op: MultiIndex,
}

/// The known linear part of the differential operator, a constant-coefficient
/// combination of derivatives evaluated directly through kernel derivatives.
/// It never passes through the feature map, so its operators may lie outside
/// the feature operator set (a second time derivative alongside first-order
/// features, say). An empty term list is the zero operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<KnownTerm>", into = "Vec<KnownTerm>")]
pub struct KnownPart {
    terms: Vec<KnownTerm>,
}

impl KnownPart {
    /// Validate and build a known part from (coefficient, operator) terms.
    pub fn new(terms: Vec<KnownTerm>) -> Result<Self> {
        for term in &terms {
            if !term.coefficient.is_finite() {
                return Err(Error::InvalidSpec(
                    "known-part coefficients must be finite".into(),
                ));
            }
            if term.op.total_order() > MAX_ORDER_PER_ARG {
                return Err(Error::UnsupportedDerivative {
                    order: term.op.total_order(),
                    max: MAX_ORDER_PER_ARG,
                });
            }
        }
        Ok(KnownPart { terms })
    }

    /// The zero known part.
    pub fn none() -> Self {
        KnownPart { terms: Vec::new() }
    }

    /// A single derivative with unit coefficient.
    pub fn single(op: MultiIndex) -> Result<Self> {
        Self::new(vec![KnownTerm {
            coefficient: 1.0,
            op,
        }])
    }

    /// The terms in order.
    pub fn terms(&self) -> &[KnownTerm] {
        &self.terms
    }

    /// True when the known part is identically zero.
    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }
}

impl From<KnownPart> for Vec<KnownTerm> {
    fn from(kp: KnownPart) -> Self {
        kp.terms
    }
}

impl TryFrom<Vec<KnownTerm>> for KnownPart {
    type Error = Error;

    fn try_from(terms: Vec<KnownTerm>) -> Result<Self> {
        KnownPart::new(terms)
    }
}

/// A derivative functional: evaluate the given derivative at one collocation
/// point, identified by its index into the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffFunctional {
    pub point: usize,
    pub op: MultiIndex,
}

/// Which expansion basis a [`SolutionModel`] uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    /// Derivative functionals of every operator at every grid point; the
    /// coefficient vector has length Q·K.
    Full,
    /// Plain point evaluations at the grid; coefficients have length K.
    Reduced,
}

/// A point in feature space, `(y, L_1 v(y), ..., L_Q v(y))`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePoint {
    s: Vec<f64>,
    point_dim: usize,
}

impl FeaturePoint {
    /// Assemble from the generating point and its derivative values.
    pub fn new(point: &[f64], state: &[f64]) -> Self {
        let mut s = Vec::with_capacity(point.len() + state.len());
        s.extend_from_slice(point);
        s.extend_from_slice(state);
        FeaturePoint {
            s,
            point_dim: point.len(),
        }
    }

    /// The full coordinate vector of length d + Q.
    pub fn coords(&self) -> &[f64] {
        &self.s
    }

    /// The leading d coordinates, equal to the generating grid point.
    pub fn point(&self) -> &[f64] {
        &self.s[..self.point_dim]
    }

    /// The trailing Q coordinates, the operator values at the point.
    pub fn state(&self) -> &[f64] {
        &self.s[self.point_dim..]
    }
}

/// A candidate solution as a kernel expansion over a collocation grid.
///
/// Full-basis models expand over the derivative functionals of their operator
/// set; reduced models expand over point evaluations only. Models are
/// immutable; optimisers produce updated copies through [`Self::with_alpha`].
#[derive(Clone, Debug)]
pub struct SolutionModel {
    basis: Basis,
    grid: Vec<Vec<f64>>,
    kernel: KernelSpec,
    ops: DiffOperatorSet,
    alpha: Array1<f64>,
}

impl SolutionModel {
    /// Validate and build a model.
    pub fn new(
        basis: Basis,
        grid: Vec<Vec<f64>>,
        kernel: KernelSpec,
        ops: DiffOperatorSet,
        alpha: Array1<f64>,
    ) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::Empty("collocation grid"));
        }
        let d = grid[0].len();
        if kernel.input_dim() != d {
            return Err(Error::DimensionMismatch {
                context: "solution kernel input dimension",
                expected: d,
                got: kernel.input_dim(),
            });
        }
        if ops.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "operator set dimension",
                expected: d,
                got: ops.dim(),
            });
        }
        if grid.iter().any(|p| p.len() != d) {
            return Err(Error::InvalidSpec(
                "collocation grid points have inconsistent dimensions".into(),
            ));
        }
        let expected = match basis {
            Basis::Full => ops.q() * grid.len(),
            Basis::Reduced => grid.len(),
        };
        if alpha.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "solution coefficient length",
                expected,
                got: alpha.len(),
            });
        }
        Ok(SolutionModel {
            basis,
            grid,
            kernel,
            ops,
            alpha,
        })
    }

    /// The expansion basis.
    pub fn basis(&self) -> Basis {
        self.basis
    }

    /// The collocation grid backing the expansion.
    pub fn grid(&self) -> &[Vec<f64>] {
        &self.grid
    }

    /// The solution kernel.
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    /// The operator set defining features (and the full basis).
    pub fn ops(&self) -> &DiffOperatorSet {
        &self.ops
    }

    /// The expansion coefficients.
    pub fn alpha(&self) -> &Array1<f64> {
        &self.alpha
    }

    /// Grid size K.
    pub fn grid_len(&self) -> usize {
        self.grid.len()
    }

    /// Domain dimension d.
    pub fn dim(&self) -> usize {
        self.grid[0].len()
    }

    /// Length of the coefficient vector for this basis.
    pub fn coeff_len(&self) -> usize {
        self.alpha.len()
    }

    /// The same model with new coefficients.
    pub fn with_alpha(&self, alpha: Array1<f64>) -> Result<Self> {
        SolutionModel::new(
            self.basis,
            self.grid.clone(),
            self.kernel.clone(),
            self.ops.clone(),
            alpha,
        )
    }

    /// The j-th basis functional as (operator, grid point). Full-basis
    /// functionals are ordered operator-major: index q·K + k pairs operator
    /// q with grid point k.
    pub fn basis_functional(&self, j: usize) -> (&MultiIndex, &[f64]) {
        match self.basis {
            Basis::Full => {
                let k = self.grid_len();
                (self.ops.op(j / k), &self.grid[j % k])
            }
            Basis::Reduced => (self.ops.op(0), &self.grid[j]),
        }
    }

    /// Apply a derivative to the model at an arbitrary point.
    pub fn apply_op(&self, op: &MultiIndex, x: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for j in 0..self.coeff_len() {
            let a = self.alpha[j];
            if a == 0.0 {
                continue;
            }
            let (basis_op, basis_pt) = self.basis_functional(j);
            acc += a * self.kernel.eval_deriv(basis_op, op, basis_pt, x)?;
        }
        Ok(acc)
    }

    /// Evaluate the model at a point.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.apply_op(&MultiIndex::zero(self.dim()), x)
    }

    /// Evaluate the model at many points.
    pub fn eval_many(&self, points: &[Vec<f64>]) -> Result<Array1<f64>> {
        let mut out = Array1::zeros(points.len());
        for (i, x) in points.iter().enumerate() {
            out[i] = self.eval(x)?;
        }
        Ok(out)
    }
}

/// Serialisable form of [`SolutionModel`].
#[derive(Serialize, Deserialize)]
struct SolutionModelRepr {
    basis: Basis,
    grid: Vec<Vec<f64>>,
    kernel: KernelSpec,
    ops: DiffOperatorSet,
    alpha: Vec<f64>,
}

impl Serialize for SolutionModel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        SolutionModelRepr {
            basis: self.basis,
            grid: self.grid.clone(),
            kernel: self.kernel.clone(),
            ops: self.ops.clone(),
            alpha: self.alpha.to_vec(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SolutionModel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = SolutionModelRepr::deserialize(deserializer)?;
        SolutionModel::new(
            repr.basis,
            repr.grid,
            repr.kernel,
            repr.ops,
            Array1::from(repr.alpha),
        )
        .map_err(serde::de::Error::custom)
    }
}

/// Apply a derivative functional to the model. The functional's point index
/// refers to the model's own collocation grid.
pub fn apply_functional(model: &SolutionModel, functional: &DiffFunctional) -> Result<f64> {
    if functional.point >= model.grid_len() {
        return Err(Error::InvalidArgument(format!(
            "functional point index {} out of range for grid of {} points",
            functional.point,
            model.grid_len()
        )));
    }
    let x = model.grid()[functional.point].clone();
    model.apply_op(&functional.op, &x)
}

/// Feature points of the model over a grid: one (y, L_1 v(y), ..., L_Q v(y))
/// per grid point, with the operators taken from the model.
pub fn feature_map(model: &SolutionModel, grid: &[Vec<f64>]) -> Result<Vec<FeaturePoint>> {
    let mut points = Vec::with_capacity(grid.len());
    for y in grid {
        let mut state = Vec::with_capacity(model.ops().q());
        for op in model.ops().ops() {
            state.push(model.apply_op(op, y)?);
        }
        points.push(FeaturePoint::new(y, &state));
    }
    Ok(points)
}

/// The constant matrix sending expansion coefficients to the derivative
/// coordinates of the feature points over `grid`.
///
/// Row q·K + k holds the coefficients of `(L_q v)(y_k)`, so stacking the
/// feature-map derivative coordinates operator-major equals this matrix
/// times alpha exactly.
pub fn feature_jacobian(model: &SolutionModel, grid: &[Vec<f64>]) -> Result<Array2<f64>> {
    let k = grid.len();
    let q = model.ops().q();
    let n = model.coeff_len();
    let mut jac = Array2::zeros((q * k, n));
    for (qi, op) in model.ops().ops().iter().enumerate() {
        for (ki, y) in grid.iter().enumerate() {
            let row = qi * k + ki;
            for j in 0..n {
                let (basis_op, basis_pt) = model.basis_functional(j);
                jac[(row, j)] = model.kernel().eval_deriv(basis_op, op, basis_pt, y)?;
            }
        }
    }
    Ok(jac)
}

/// Values of the known part applied to the model over a grid.
pub fn known_part_values(
    kp: &KnownPart,
    model: &SolutionModel,
    grid: &[Vec<f64>],
) -> Result<Array1<f64>> {
    let mut out = Array1::zeros(grid.len());
    if kp.is_zero() {
        return Ok(out);
    }
    for (i, y) in grid.iter().enumerate() {
        let mut acc = 0.0;
        for term in kp.terms() {
            acc += term.coefficient * model.apply_op(&term.op, y)?;
        }
        out[i] = acc;
    }
    Ok(out)
}

/// The constant matrix sending expansion coefficients to known-part values
/// over `grid`, so `known_part_values = matrix · alpha` exactly.
pub fn known_part_matrix(
    kp: &KnownPart,
    model: &SolutionModel,
    grid: &[Vec<f64>],
) -> Result<Array2<f64>> {
    let n = model.coeff_len();
    let mut mat = Array2::zeros((grid.len(), n));
    if kp.is_zero() {
        return Ok(mat);
    }
    for (i, y) in grid.iter().enumerate() {
        for j in 0..n {
            let (basis_op, basis_pt) = model.basis_functional(j);
            let mut acc = 0.0;
            for term in kp.terms() {
                acc += term.coefficient
                    * model.kernel().eval_deriv(basis_op, &term.op, basis_pt, y)?;
            }
            mat[(i, j)] = acc;
        }
    }
    Ok(mat)
}
