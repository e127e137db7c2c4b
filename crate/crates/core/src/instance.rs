//! Parametric SOCO problem data and primal-dual points.
//!
//! The primal-dual pair under study is
//!
//! ```txt
//! (P_ε)  inf  { (c + ε c̄)ᵀ x  |  A x = b,  x ∈ L }
//! (D_ε)  sup  { bᵀ y          |  Aᵀ y + s = c + ε c̄,  s ∈ L }
//! ```
//!
//! where `L` is a Cartesian product of second-order cones and `ε` perturbs
//! the objective along the fixed direction `c̄`.

use nalgebra::{DMatrix, DVector};

use crate::cones::{ConeStructure, ConeVector};

/// Relative singular-value threshold for the full-row-rank check on `A`.
const ROW_RANK_TOL: f64 = 1e-10;

/// A parametric SOCO instance: cone layout, constraint data, objective and
/// perturbation direction, plus an optional closed interval approximating
/// the interior of the parameter domain.
#[derive(Debug, Clone)]
pub struct ParametricInstance {
    structure: ConeStructure,
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    cbar: DVector<f64>,
    domain_bounds: Option<(f64, f64)>,
}

/// Errors raised while validating instance data.
#[derive(Debug, Clone, PartialEq)]
pub enum InstanceError {
    /// Matrix/vector dimensions are mutually inconsistent.
    DimensionMismatch(String),
    /// `A` does not have full row rank at the validation threshold.
    RankDeficient { rows: usize, rank: usize },
    /// Data contains NaN or infinite entries.
    NonFinite,
    /// Domain bounds are inverted or NaN.
    BadDomain,
}

impl std::fmt::Display for InstanceError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InstanceError::DimensionMismatch(what) => {
                write!(f, "dimension mismatch: {what}")
            }
            InstanceError::RankDeficient { rows, rank } => {
                write!(f, "A has {rows} rows but numerical rank {rank}")
            }
            InstanceError::NonFinite => write!(f, "data contains NaN or Inf"),
            InstanceError::BadDomain => write!(f, "invalid domain bounds"),
        }
    }
}

impl std::error::Error for InstanceError {}

impl ParametricInstance {
    /// Validate and build an instance. `A` must have full row rank
    /// (singular values above `1e-10 · σ_max`).
    pub fn new(
        structure: ConeStructure,
        a: DMatrix<f64>,
        b: DVector<f64>,
        c: DVector<f64>,
        cbar: DVector<f64>,
        domain_bounds: Option<(f64, f64)>,
    ) -> Result<Self, InstanceError> {
        let n = structure.total_dim();
        let m = a.nrows();
        if a.ncols() != n {
            return Err(InstanceError::DimensionMismatch(format!(
                "A has {} columns, cones total {}",
                a.ncols(),
                n
            )));
        }
        if b.len() != m {
            return Err(InstanceError::DimensionMismatch(format!(
                "b has length {}, A has {} rows",
                b.len(),
                m
            )));
        }
        if c.len() != n || cbar.len() != n {
            return Err(InstanceError::DimensionMismatch(format!(
                "c/cbar have lengths {}/{}, expected {}",
                c.len(),
                cbar.len(),
                n
            )));
        }
        let finite = a.iter().all(|v| v.is_finite())
            && b.iter().all(|v| v.is_finite())
            && c.iter().all(|v| v.is_finite())
            && cbar.iter().all(|v| v.is_finite());
        if !finite {
            return Err(InstanceError::NonFinite);
        }
        if let Some((lo, hi)) = domain_bounds {
            if lo.is_nan() || hi.is_nan() || lo >= hi {
                return Err(InstanceError::BadDomain);
            }
        }
        let rank = numerical_row_rank(&a, ROW_RANK_TOL);
        if rank < m {
            return Err(InstanceError::RankDeficient { rows: m, rank });
        }
        Ok(ParametricInstance { structure, a, b, c, cbar, domain_bounds })
    }

    pub fn structure(&self) -> &ConeStructure {
        &self.structure
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Columns of `A` belonging to cone block `i`.
    pub fn a_block(&self, i: usize) -> DMatrix<f64> {
        let range = self.structure.block_range(i);
        self.a.columns(range.start, range.len()).into_owned()
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn cbar(&self) -> &DVector<f64> {
        &self.cbar
    }

    pub fn domain_bounds(&self) -> Option<(f64, f64)> {
        self.domain_bounds
    }

    pub fn num_constraints(&self) -> usize {
        self.a.nrows()
    }

    /// Effective objective vector `c + ε c̄`.
    pub fn objective_at(&self, eps: f64) -> DVector<f64> {
        &self.c + eps * &self.cbar
    }

    /// True when `eps` lies strictly inside the declared domain bounds
    /// (always true if no bounds were given).
    pub fn in_domain(&self, eps: f64) -> bool {
        match self.domain_bounds {
            Some((lo, hi)) => eps > lo && eps < hi,
            None => true,
        }
    }
}

/// Number of singular values above `tol · σ_max`.
pub fn numerical_row_rank(a: &DMatrix<f64>, tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let svals = a.clone().singular_values();
    let smax = svals.max();
    if smax <= 0.0 {
        return 0;
    }
    svals.iter().filter(|&&s| s > tol * smax).count()
}

/// A primal-dual point `(x; y; s)` at a fixed `ε` with its quality measures.
#[derive(Debug, Clone)]
pub struct PrimalDualTriple {
    pub eps: f64,
    pub x: ConeVector,
    pub y: DVector<f64>,
    pub s: ConeVector,
}

impl PrimalDualTriple {
    /// Duality gap `xᵀ s`.
    pub fn gap(&self) -> f64 {
        self.x.flat().dot(self.s.flat())
    }

    /// `‖A x − b‖`.
    pub fn primal_residual(&self, inst: &ParametricInstance) -> f64 {
        (inst.a() * self.x.flat() - inst.b()).norm()
    }

    /// `‖Aᵀ y + s − c − ε c̄‖`.
    pub fn dual_residual(&self, inst: &ParametricInstance) -> f64 {
        (inst.a().transpose() * &self.y + self.s.flat() - inst.objective_at(self.eps)).norm()
    }

    /// Primal objective `(c + ε c̄)ᵀ x`, an estimate of the optimal value
    /// function ψ(ε) once the point is optimal.
    pub fn objective(&self, inst: &ParametricInstance) -> f64 {
        inst.objective_at(self.eps).dot(self.x.flat())
    }

    /// Dual objective `bᵀ y`.
    pub fn dual_objective(&self, inst: &ParametricInstance) -> f64 {
        inst.b().dot(&self.y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_instance() -> ParametricInstance {
        let st = ConeStructure::new(vec![3, 2]);
        let a = DMatrix::from_row_slice(
            3,
            5,
            &[
                1.0, 0.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 1.0, -1.0, 0.0, //
                0.0, 1.0, 0.0, 0.0, -1.0,
            ],
        );
        let b = DVector::from_row_slice(&[1.0, 0.0, 1.0]);
        let c = DVector::from_row_slice(&[0.0, 0.0, -1.0, 0.0, 0.0]);
        let cbar = DVector::from_row_slice(&[0.0, -1.0, 1.0, 0.0, 0.0]);
        ParametricInstance::new(st, a, b, c, cbar, None).unwrap()
    }

    #[test]
    fn accepts_full_rank_data() {
        let inst = toy_instance();
        assert_eq!(inst.num_constraints(), 3);
        assert_eq!(inst.structure().total_dim(), 5);
    }

    #[test]
    fn rejects_rank_deficient_rows() {
        let st = ConeStructure::new(vec![2]);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]);
        let b = DVector::from_row_slice(&[1.0, 2.0]);
        let c = DVector::zeros(2);
        let cbar = DVector::zeros(2);
        let err = ParametricInstance::new(st, a, b, c, cbar, None).unwrap_err();
        assert!(matches!(err, InstanceError::RankDeficient { rows: 2, rank: 1 }));
    }

    #[test]
    fn rejects_non_finite() {
        let st = ConeStructure::new(vec![2]);
        let a = DMatrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
        let b = DVector::from_row_slice(&[1.0]);
        let err =
            ParametricInstance::new(st, a, b, DVector::zeros(2), DVector::zeros(2), None)
                .unwrap_err();
        assert_eq!(err, InstanceError::NonFinite);
    }

    #[test]
    fn objective_shift_is_linear() {
        let inst = toy_instance();
        let c0 = inst.objective_at(0.0);
        let c1 = inst.objective_at(1.0);
        assert_eq!(&c1 - &c0, *inst.cbar());
    }
}
