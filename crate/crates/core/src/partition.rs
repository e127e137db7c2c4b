//! Optimal-partition classification and nondegeneracy tests.
//!
//! A maximally complementary solution assigns each cone block to one of six
//! classes:
//!
//! * `B`  — x interior, s = 0
//! * `N`  — s interior, x = 0
//! * `R`  — both on the boundary, both nonzero
//! * `T1` — both zero
//! * `T2` — x boundary-nonzero, s = 0
//! * `T3` — s boundary-nonzero, x = 0
//!
//! Strict complementarity is exactly `T1 ∪ T2 ∪ T3 = ∅`. The partition also
//! drives the primal/dual nondegeneracy rank tests and the radius δ(ε̄) of
//! the neighborhood on which the partition provably cannot change.

use nalgebra::DMatrix;

use crate::cones::{
    classify_block, soc_margin, spectral_decomposition, tail_norm, BlockClass,
};
use crate::instance::{numerical_row_rank, ParametricInstance, PrimalDualTriple};

/// Default classification tolerance: one order above the solver's default
/// feasibility tolerance.
pub const DEFAULT_CLASS_TOL: f64 = 1e-6;

/// Default relative singular-value threshold for rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Class of one block within the optimal partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockAssignment {
    B,
    N,
    R,
    T1,
    T2,
    T3,
}

/// The six-set optimal partition of the block index set {0, .., p-1}.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalPartition {
    assignments: Vec<BlockAssignment>,
    tol: f64,
    /// Blocks whose classification margins sit within 10x of the tolerance.
    low_confidence: Vec<usize>,
}

/// Errors raised during classification or radius computation.
#[derive(Debug, Clone, PartialEq)]
pub enum PartitionError {
    /// A block fits no partition class; the input is not optimal enough.
    InconsistentBlock { index: usize, x_class: BlockClass, s_class: BlockClass },
    /// The operation requires T = ∅.
    NotStrictlyComplementary,
}

impl std::fmt::Display for PartitionError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PartitionError::InconsistentBlock { index, x_class, s_class } => write!(
                f,
                "block {index} fits no partition class (x: {x_class:?}, s: {s_class:?})"
            ),
            PartitionError::NotStrictlyComplementary => {
                write!(f, "strict complementarity fails (T nonempty)")
            }
        }
    }
}

impl std::error::Error for PartitionError {}

impl OptimalPartition {
    pub fn assignments(&self) -> &[BlockAssignment] {
        &self.assignments
    }

    pub fn assignment(&self, i: usize) -> BlockAssignment {
        self.assignments[i]
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn low_confidence(&self) -> &[usize] {
        &self.low_confidence
    }

    fn set(&self, class: BlockAssignment) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == class)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn b(&self) -> Vec<usize> {
        self.set(BlockAssignment::B)
    }

    pub fn n(&self) -> Vec<usize> {
        self.set(BlockAssignment::N)
    }

    pub fn r(&self) -> Vec<usize> {
        self.set(BlockAssignment::R)
    }

    pub fn t1(&self) -> Vec<usize> {
        self.set(BlockAssignment::T1)
    }

    pub fn t2(&self) -> Vec<usize> {
        self.set(BlockAssignment::T2)
    }

    pub fn t3(&self) -> Vec<usize> {
        self.set(BlockAssignment::T3)
    }

    /// True iff `T1 ∪ T2 ∪ T3 = ∅`.
    pub fn is_strictly_complementary(&self) -> bool {
        self.assignments.iter().all(|a| {
            matches!(a, BlockAssignment::B | BlockAssignment::N | BlockAssignment::R)
        })
    }

    /// Compact display like `({2}, ∅, {1}, (∅, ∅, ∅))` with 1-based indices.
    pub fn display(&self) -> String {
        let fmt_set = |v: Vec<usize>| -> String {
            if v.is_empty() {
                "∅".to_string()
            } else {
                let items: Vec<String> = v.iter().map(|i| (i + 1).to_string()).collect();
                format!("{{{}}}", items.join(","))
            }
        };
        format!(
            "({}, {}, {}, ({}, {}, {}))",
            fmt_set(self.b()),
            fmt_set(self.n()),
            fmt_set(self.r()),
            fmt_set(self.t1()),
            fmt_set(self.t2()),
            fmt_set(self.t3())
        )
    }
}

/// Classify the optimal partition from a converged primal-dual triple.
pub fn classify(triple: &PrimalDualTriple, tol: f64) -> Result<OptimalPartition, PartitionError> {
    let st = triple.x.structure();
    let p = st.block_count();
    let mut assignments = Vec::with_capacity(p);
    let mut low_confidence = Vec::new();
    for i in 0..p {
        let xb = triple.x.block(i);
        let sb = triple.s.block(i);
        let cx = classify_block(xb, tol);
        let cs = classify_block(sb, tol);
        let assignment = match (cx, cs) {
            (BlockClass::Interior, BlockClass::Zero) => BlockAssignment::B,
            (BlockClass::Zero, BlockClass::Interior) => BlockAssignment::N,
            (BlockClass::BoundaryNonzero, BlockClass::BoundaryNonzero) => BlockAssignment::R,
            (BlockClass::Zero, BlockClass::Zero) => BlockAssignment::T1,
            (BlockClass::BoundaryNonzero, BlockClass::Zero) => BlockAssignment::T2,
            (BlockClass::Zero, BlockClass::BoundaryNonzero) => BlockAssignment::T3,
            (x_class, s_class) => {
                return Err(PartitionError::InconsistentBlock { index: i, x_class, s_class })
            }
        };
        if block_confidence_ratio(xb, tol).min(block_confidence_ratio(sb, tol)) < 10.0 {
            low_confidence.push(i);
        }
        assignments.push(assignment);
    }
    Ok(OptimalPartition { assignments, tol, low_confidence })
}

/// Smallest ratio between a decision quantity and its threshold; the block
/// is confidently classified when every quantity clears its cut by 10x.
fn block_confidence_ratio(block: &[f64], tol: f64) -> f64 {
    let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
    let eff = tol * norm.max(1.0);
    let margin = soc_margin(block);
    match classify_block(block, tol) {
        BlockClass::Interior => margin / eff,
        BlockClass::Zero => {
            if norm == 0.0 {
                f64::INFINITY
            } else {
                eff / norm
            }
        }
        BlockClass::BoundaryNonzero => {
            let sep = if margin.abs() == 0.0 { f64::INFINITY } else { eff / margin.abs() };
            sep.min(block[0] / eff)
        }
        BlockClass::Outside => (-margin) / eff,
    }
}

/// Primal nondegeneracy: the matrix `((Aⁱ P̄ⁱ)_{R ∪ T2}, (Aⁱ)_B)` has full
/// row rank, where the columns of P̄ⁱ span the eigenspaces of the positive
/// eigenvalues of L(xⁱ).
pub fn primal_nondegenerate(
    inst: &ParametricInstance,
    triple: &PrimalDualTriple,
    partition: &OptimalPartition,
    rank_tol: f64,
) -> bool {
    let m = inst.num_constraints();
    let mut cols: Vec<DMatrix<f64>> = Vec::new();
    for i in 0..inst.structure().block_count() {
        match partition.assignment(i) {
            BlockAssignment::R | BlockAssignment::T2 => {
                let xb = triple.x.block(i);
                let frame = spectral_decomposition(xb);
                let scale = 1.0_f64.max(xb.iter().map(|v| v.abs()).fold(0.0, f64::max));
                let pbar = frame.positive_basis(partition.tol() * scale);
                cols.push(inst.a_block(i) * pbar);
            }
            BlockAssignment::B => cols.push(inst.a_block(i)),
            _ => {}
        }
    }
    let total: usize = cols.iter().map(|c| c.ncols()).sum();
    if total == 0 {
        return m == 0;
    }
    let mut mat = DMatrix::zeros(m, total);
    let mut at = 0;
    for c in cols {
        mat.view_mut((0, at), (m, c.ncols())).copy_from(&c);
        at += c.ncols();
    }
    numerical_row_rank(&mat, rank_tol) == m
}

/// Dual nondegeneracy: the matrix `((Aⁱ Rⁱ sⁱ)_{R ∪ T3}, (Aⁱ)_{B ∪ T1 ∪ T2})`
/// has full column rank.
pub fn dual_nondegenerate(
    inst: &ParametricInstance,
    triple: &PrimalDualTriple,
    partition: &OptimalPartition,
    rank_tol: f64,
) -> bool {
    let m = inst.num_constraints();
    let mut cols: Vec<DMatrix<f64>> = Vec::new();
    for i in 0..inst.structure().block_count() {
        match partition.assignment(i) {
            BlockAssignment::R | BlockAssignment::T3 => {
                let rs = crate::cones::reflection_apply(triple.s.block(i));
                let v = inst.a_block(i) * nalgebra::DVector::from_row_slice(&rs);
                cols.push(DMatrix::from_column_slice(m, 1, v.as_slice()));
            }
            BlockAssignment::B | BlockAssignment::T1 | BlockAssignment::T2 => {
                cols.push(inst.a_block(i))
            }
            _ => {}
        }
    }
    let total: usize = cols.iter().map(|c| c.ncols()).sum();
    if total == 0 {
        return true; // zero columns are vacuously independent
    }
    let mut mat = DMatrix::zeros(m, total);
    let mut at = 0;
    for c in cols {
        mat.view_mut((0, at), (m, c.ncols())).copy_from(&c);
        at += c.ncols();
    }
    numerical_row_rank(&mat, rank_tol) == total
}

/// The radii δ_B, δ_N, δ_R and their minimum δ(ε̄). Components over empty
/// index sets are +∞ and drop out of the minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaRadii {
    pub delta_b: f64,
    pub delta_n: f64,
    pub delta_r: f64,
    pub delta: f64,
}

/// Radius of the semialgebraic neighborhood on which the partition is
/// preserved (requires a strictly complementary anchor):
///
/// ```txt
/// δ_B = (√2/2) min_{i∈B} (x1ⁱ − ||x̄ⁱ||)
/// δ_N = (√2/2) min_{i∈N} (s1ⁱ − ||s̄ⁱ||)
/// δ_R = min( min_{i∈R} x1ⁱ, min_{i∈R} s1ⁱ )
/// δ   = min(δ_B, δ_N, δ_R)
/// ```
pub fn delta_radius(
    triple: &PrimalDualTriple,
    partition: &OptimalPartition,
) -> Result<DeltaRadii, PartitionError> {
    if !partition.is_strictly_complementary() {
        return Err(PartitionError::NotStrictlyComplementary);
    }
    let half_sqrt2 = std::f64::consts::SQRT_2 / 2.0;
    let mut delta_b = f64::INFINITY;
    let mut delta_n = f64::INFINITY;
    let mut delta_r = f64::INFINITY;
    for i in 0..triple.x.structure().block_count() {
        match partition.assignment(i) {
            BlockAssignment::B => {
                delta_b = delta_b.min(half_sqrt2 * soc_margin(triple.x.block(i)));
            }
            BlockAssignment::N => {
                delta_n = delta_n.min(half_sqrt2 * soc_margin(triple.s.block(i)));
            }
            BlockAssignment::R => {
                delta_r = delta_r.min(triple.x.block(i)[0]).min(triple.s.block(i)[0]);
            }
            _ => unreachable!("strictly complementary partition"),
        }
    }
    let delta = delta_b.min(delta_n).min(delta_r);
    Ok(DeltaRadii { delta_b, delta_n, delta_r, delta })
}

/// Snap a near-optimal triple onto its partition: zero blocks become exactly
/// zero, boundary blocks are projected onto the cone boundary, and R-block
/// duals are realigned to `s = (s1/x1) R x` so complementarity holds exactly.
pub fn round_to_partition(
    triple: &PrimalDualTriple,
    partition: &OptimalPartition,
) -> PrimalDualTriple {
    let mut x = triple.x.clone();
    let mut s = triple.s.clone();
    for i in 0..x.structure().block_count() {
        match partition.assignment(i) {
            BlockAssignment::B => zero_block(s.block_mut(i)),
            BlockAssignment::N => zero_block(x.block_mut(i)),
            BlockAssignment::R => {
                project_boundary(x.block_mut(i));
                align_dual(x.block(i), s.block_mut(i));
            }
            BlockAssignment::T1 => {
                zero_block(x.block_mut(i));
                zero_block(s.block_mut(i));
            }
            BlockAssignment::T2 => {
                zero_block(s.block_mut(i));
                project_boundary(x.block_mut(i));
            }
            BlockAssignment::T3 => {
                zero_block(x.block_mut(i));
                project_boundary(s.block_mut(i));
            }
        }
    }
    PrimalDualTriple { eps: triple.eps, x, y: triple.y.clone(), s }
}

fn zero_block(block: &mut [f64]) {
    for v in block {
        *v = 0.0;
    }
}

/// Nearest point on the cone boundary: average the first component with the
/// tail norm and rescale the tail.
fn project_boundary(block: &mut [f64]) {
    let t = tail_norm(block);
    if t < f64::MIN_POSITIVE {
        return; // degenerate tail; leave untouched
    }
    let a = 0.5 * (block[0] + t);
    let scale = a / t;
    block[0] = a;
    for v in &mut block[1..] {
        *v *= scale;
    }
}

/// Replace an R-block dual by its exactly complementary form `σ R x` with
/// `σ = s1 / x1`.
fn align_dual(x_block: &[f64], s_block: &mut [f64]) {
    let sigma = s_block[0] / x_block[0];
    s_block[0] = sigma * x_block[0];
    for (sv, xv) in s_block[1..].iter_mut().zip(&x_block[1..]) {
        *sv = -sigma * xv;
    }
}

/// Convenience: blockwise complementarity consistency used in diagnostics,
/// `i ∈ B ⟹ ||sⁱ|| ≤ tol` and `i ∈ N ⟹ ||xⁱ|| ≤ tol`.
pub fn complementarity_consistent(
    triple: &PrimalDualTriple,
    partition: &OptimalPartition,
    tol: f64,
) -> bool {
    (0..triple.x.structure().block_count()).all(|i| match partition.assignment(i) {
        BlockAssignment::B => norm_of(triple.s.block(i)) <= tol,
        BlockAssignment::N => norm_of(triple.x.block(i)) <= tol,
        _ => true,
    })
}

fn norm_of(block: &[f64]) -> f64 {
    block.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Partition-aware vector check used by tests and reports.
pub fn partitions_equal(a: &OptimalPartition, b: &OptimalPartition) -> bool {
    a.assignments == b.assignments
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cones::{ConeStructure, ConeVector};
    use nalgebra::DVector;

    fn triple_from(
        dims: Vec<usize>,
        x: &[f64],
        s: &[f64],
        m: usize,
    ) -> PrimalDualTriple {
        let st = ConeStructure::new(dims);
        PrimalDualTriple {
            eps: 0.0,
            x: ConeVector::from_slice(st.clone(), x),
            y: DVector::zeros(m),
            s: ConeVector::from_slice(st, s),
        }
    }

    #[test]
    fn classify_mixed_partition() {
        // Block 1: x interior, s zero (B). Block 2: both boundary (R).
        // Block 3: both zero (T1).
        let t = triple_from(
            vec![3, 2, 2],
            &[2.0, 0.5, 0.5, 1.0, 1.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0, 0.5, -0.5, 0.0, 0.0],
            1,
        );
        let p = classify(&t, 1e-6).unwrap();
        assert_eq!(p.b(), vec![0]);
        assert_eq!(p.r(), vec![1]);
        assert_eq!(p.t1(), vec![2]);
        assert!(!p.is_strictly_complementary());
    }

    #[test]
    fn classify_rejects_both_interior() {
        let t = triple_from(vec![2], &[1.0, 0.0], &[1.0, 0.0], 1);
        let err = classify(&t, 1e-6).unwrap_err();
        assert!(matches!(err, PartitionError::InconsistentBlock { index: 0, .. }));
    }

    #[test]
    fn partition_sets_are_disjoint_and_cover() {
        let t = triple_from(
            vec![3, 2],
            &[2.0, 0.5, 0.5, 1.0, 1.0],
            &[0.0, 0.0, 0.0, 0.5, -0.5],
            1,
        );
        let p = classify(&t, 1e-6).unwrap();
        let mut all: Vec<usize> = Vec::new();
        all.extend(p.b());
        all.extend(p.n());
        all.extend(p.r());
        all.extend(p.t1());
        all.extend(p.t2());
        all.extend(p.t3());
        all.sort_unstable();
        assert_eq!(all, vec![0, 1]);
    }

    #[test]
    fn delta_radius_unit_r_blocks() {
        // B = N = ∅, R-blocks with x1 = s1 = 1 give δ = 1.
        let t = triple_from(
            vec![2, 2],
            &[1.0, 1.0, 1.0, -1.0],
            &[1.0, -1.0, 1.0, 1.0],
            1,
        );
        let p = classify(&t, 1e-6).unwrap();
        assert_eq!(p.r(), vec![0, 1]);
        let d = delta_radius(&t, &p).unwrap();
        assert_eq!(d.delta, 1.0);
        assert!(d.delta_b.is_infinite());
        assert!(d.delta_n.is_infinite());
    }

    #[test]
    fn delta_radius_requires_strict_complementarity() {
        let t = triple_from(vec![2], &[0.0, 0.0], &[0.0, 0.0], 1);
        let p = classify(&t, 1e-6).unwrap();
        assert_eq!(
            delta_radius(&t, &p).unwrap_err(),
            PartitionError::NotStrictlyComplementary
        );
    }

    #[test]
    fn empty_index_sets_in_rank_tests() {
        // All blocks in N: the primal matrix has no columns (rank 0 < m),
        // the dual matrix is vacuously independent.
        use crate::fileio::bundled;
        let inst = bundled("p5").unwrap();
        let st = inst.structure().clone();
        let t = PrimalDualTriple {
            eps: 0.0,
            x: ConeVector::zeros(st.clone()),
            y: nalgebra::DVector::zeros(inst.num_constraints()),
            s: ConeVector::from_slice(st, &[2.0, 0.1, 0.1, 2.0, 0.1]),
        };
        let p = classify(&t, 1e-6).unwrap();
        assert_eq!(p.n().len(), 2);
        assert!(!primal_nondegenerate(&inst, &t, &p, DEFAULT_RANK_TOL));
        assert!(dual_nondegenerate(&inst, &t, &p, DEFAULT_RANK_TOL));
    }

    #[test]
    fn near_threshold_blocks_are_flagged_low_confidence() {
        // Interior margin at 3x the tolerance: classified B but flagged.
        let t = triple_from(vec![3], &[1.0 + 3e-6, 1.0, 0.0], &[0.0, 0.0, 0.0], 1);
        let p = classify(&t, 1e-6).unwrap();
        assert_eq!(p.b(), vec![0]);
        assert_eq!(p.low_confidence(), &[0]);
        // A comfortable margin is not flagged.
        let t = triple_from(vec![3], &[2.0, 1.0, 0.0], &[0.0, 0.0, 0.0], 1);
        let p = classify(&t, 1e-6).unwrap();
        assert!(p.low_confidence().is_empty());
    }

    #[test]
    fn rounding_restores_exact_complementarity() {
        let t = triple_from(
            vec![3],
            &[1.0 + 3e-8, 0.6, 0.8],
            &[0.5, -0.3 + 1e-8, -0.4],
            1,
        );
        let p = classify(&t, 1e-6).unwrap();
        assert_eq!(p.r(), vec![0]);
        let r = round_to_partition(&t, &p);
        assert!(crate::cones::soc_margin(r.x.block(0)).abs() < 1e-15);
        let gap = r.x.flat().dot(r.s.flat());
        assert!(gap.abs() < 1e-14);
    }
}
