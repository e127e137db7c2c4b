//! Transition-point identification from the nonlinear dual reformulation.
//!
//! With the partition π̄ = (B̄, N̄, R̄, T̄1, T̄2, T̄3) frozen at ε̄, the dual
//! problem is rewritten as an NLP whose first-order conditions form a square
//! system `G((w; z; u; v), ε) = 0`:
//!
//! ```txt
//! −(Aⁱ)_Ī u − b                = 0
//! −uⁱ − 2 vᵢ Rⁱ zⁱ             = 0   i ∈ R̄
//! −uⁱ                          = 0   i ∈ N̄
//! −uⁱ − 2 vᵢ Rⁱ zⁱ             = 0   i ∈ T̄3
//! (Aⁱ)ᵀ w − cⁱ − ε c̄ⁱ          = 0   i ∈ B̄ ∪ T̄1 ∪ T̄2
//! (Aⁱ)ᵀ w + zⁱ − cⁱ − ε c̄ⁱ     = 0   i ∈ R̄ ∪ N̄ ∪ T̄3
//! (zⁱ)ᵀ Rⁱ zⁱ                  = 0   i ∈ R̄ ∪ T̄3
//! ```
//!
//! Under primal and dual nondegeneracy ∇G is nonsingular at the solution, so
//! χ(ε) = (w; z; u; v) is real analytic there and its expansion coefficients
//! follow from repeated solves against the same factorization: the order-1
//! right-hand side stacks c̄ into both dual-feasibility groups, and higher
//! orders collect the convolution cross-terms of the bilinear rows. ε̄ lies
//! in a nonlinearity interval iff every derivative of `uⁱ (i ∈ T̄1)`,
//! `(u₁ⁱ)² − ||ū ⁱ||² (i ∈ T̄2)` and `vᵢ (i ∈ T̄3)` vanishes; the first
//! nonzero order certifies a transition point.

use nalgebra::{DMatrix, DVector};

use crate::cones::reflection_apply;
use crate::instance::{ParametricInstance, PrimalDualTriple};
use crate::linalg::{sigma_min, EquilibratedLu};
use crate::partition::{self, BlockAssignment, OptimalPartition, DEFAULT_RANK_TOL};
use crate::solver::{self, SolveOptions, SolverError};

/// Variable layout of the reformulated system for a fixed partition.
#[derive(Debug, Clone)]
pub struct ReformulationDN {
    partition: OptimalPartition,
    dims: Vec<usize>,
    m: usize,
    /// Blocks carrying a z variable (R̄ ∪ N̄ ∪ T̄3, ascending).
    z_blocks: Vec<usize>,
    /// Blocks carrying a v multiplier (R̄ ascending, then T̄3 ascending).
    v_blocks: Vec<usize>,
    /// Offset of each z block inside the z segment.
    z_offset: Vec<usize>,
    n_total: usize,
    n_c: usize,
}

impl ReformulationDN {
    pub fn partition(&self) -> &OptimalPartition {
        &self.partition
    }

    /// Total system dimension n̄_c.
    pub fn dimension(&self) -> usize {
        self.n_c
    }

    pub fn w_range(&self) -> std::ops::Range<usize> {
        0..self.m
    }

    /// Range of block i's z variable, if it has one.
    pub fn z_range(&self, block: usize) -> Option<std::ops::Range<usize>> {
        let pos = self.z_blocks.iter().position(|&b| b == block)?;
        let start = self.m + self.z_offset[pos];
        Some(start..start + self.dims[block])
    }

    fn z_len(&self) -> usize {
        self.z_blocks.iter().map(|&b| self.dims[b]).sum()
    }

    pub fn u_range(&self, block: usize) -> std::ops::Range<usize> {
        let base = self.m + self.z_len();
        let offset: usize = self.dims[..block].iter().sum();
        base + offset..base + offset + self.dims[block]
    }

    /// Index of block i's v multiplier, if it has one.
    pub fn v_index(&self, block: usize) -> Option<usize> {
        let pos = self.v_blocks.iter().position(|&b| b == block)?;
        Some(self.m + self.z_len() + self.n_total + pos)
    }

    pub fn v_blocks(&self) -> &[usize] {
        &self.v_blocks
    }

    /// Whether z lies strictly in the open cone 𝒲̄: first components
    /// positive over R̄ ∪ T̄3 and interior blocks over N̄.
    pub fn z_in_open_cone(&self, point: &DVector<f64>) -> bool {
        for &b in &self.z_blocks {
            let r = self.z_range(b).unwrap();
            let blk = &point.as_slice()[r];
            match self.partition.assignment(b) {
                BlockAssignment::N => {
                    if crate::cones::soc_margin(blk) <= 0.0 {
                        return false;
                    }
                }
                _ => {
                    if blk[0] <= 0.0 {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Failures along the Newton-correction / derivative pipeline.
#[derive(Debug)]
pub enum TransitionError {
    /// ∇G is numerically singular: a nondegeneracy condition fails and the
    /// derivative test is inapplicable.
    SingularJacobian { sigma_min: f64 },
    Diverged(String),
    Solver(SolverError),
    Partition(partition::PartitionError),
}

impl std::fmt::Display for TransitionError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransitionError::SingularJacobian { sigma_min } => {
                write!(f, "∇G numerically singular (σ_min = {sigma_min:.2e})")
            }
            TransitionError::Diverged(msg) => write!(f, "Newton correction diverged: {msg}"),
            TransitionError::Solver(e) => write!(f, "solver failure: {e}"),
            TransitionError::Partition(e) => write!(f, "partition failure: {e}"),
        }
    }
}

impl std::error::Error for TransitionError {}

/// Freeze the constraint layout for a partition.
pub fn build_reformulation(
    inst: &ParametricInstance,
    partition: &OptimalPartition,
) -> ReformulationDN {
    let st = inst.structure();
    let dims: Vec<usize> = st.dims().to_vec();
    let p = st.block_count();
    let z_blocks: Vec<usize> = (0..p)
        .filter(|&i| {
            matches!(
                partition.assignment(i),
                BlockAssignment::R | BlockAssignment::N | BlockAssignment::T3
            )
        })
        .collect();
    let mut v_blocks: Vec<usize> = (0..p)
        .filter(|&i| partition.assignment(i) == BlockAssignment::R)
        .collect();
    v_blocks.extend((0..p).filter(|&i| partition.assignment(i) == BlockAssignment::T3));
    let mut z_offset = Vec::with_capacity(z_blocks.len());
    let mut acc = 0;
    for &b in &z_blocks {
        z_offset.push(acc);
        acc += dims[b];
    }
    let n_total = st.total_dim();
    let m = inst.num_constraints();
    let n_c = m + acc + n_total + v_blocks.len();
    ReformulationDN {
        partition: partition.clone(),
        dims,
        m,
        z_blocks,
        v_blocks,
        z_offset,
        n_total,
        n_c,
    }
}

/// Row layout shared by `eval_g`, `jacobian_g` and the derivative right-hand
/// sides: returns for each row group its starting row.
struct RowLayout {
    stationarity: Vec<(usize, usize)>, // (block, start row) for R̄, N̄, T̄3 in display order
    feas_no_z: Vec<(usize, usize)>,    // B̄ ∪ T̄1 ∪ T̄2
    feas_z: Vec<(usize, usize)>,       // R̄ ∪ N̄ ∪ T̄3
    quad: Vec<(usize, usize)>,         // R̄ then T̄3, aligned with v order
    total: usize,
}

fn row_layout(reform: &ReformulationDN) -> RowLayout {
    let p = reform.dims.len();
    let part = &reform.partition;
    let mut row = reform.m;
    let mut stationarity = Vec::new();
    for class in [BlockAssignment::R, BlockAssignment::N, BlockAssignment::T3] {
        for i in 0..p {
            if part.assignment(i) == class {
                stationarity.push((i, row));
                row += reform.dims[i];
            }
        }
    }
    let mut feas_no_z = Vec::new();
    for i in 0..p {
        if matches!(
            part.assignment(i),
            BlockAssignment::B | BlockAssignment::T1 | BlockAssignment::T2
        ) {
            feas_no_z.push((i, row));
            row += reform.dims[i];
        }
    }
    let mut feas_z = Vec::new();
    for i in 0..p {
        if matches!(
            part.assignment(i),
            BlockAssignment::R | BlockAssignment::N | BlockAssignment::T3
        ) {
            feas_z.push((i, row));
            row += reform.dims[i];
        }
    }
    let mut quad = Vec::new();
    for &i in &reform.v_blocks {
        quad.push((i, row));
        row += 1;
    }
    RowLayout { stationarity, feas_no_z, feas_z, quad, total: row }
}

/// Residual vector G((w; z; u; v), ε).
pub fn eval_g(
    inst: &ParametricInstance,
    reform: &ReformulationDN,
    point: &DVector<f64>,
    eps: f64,
) -> DVector<f64> {
    assert_eq!(point.len(), reform.n_c, "point does not match the layout");
    let layout = row_layout(reform);
    debug_assert_eq!(layout.total, reform.n_c);
    let mut g = DVector::zeros(reform.n_c);
    let c_eff = inst.objective_at(eps);
    let w = point.rows(0, reform.m);

    // −(Aⁱ)_Ī u − b: u occupies one contiguous segment in block order.
    let u_start = reform.u_range(0).start;
    let u_all = point.rows(u_start, reform.n_total);
    g.rows_mut(0, reform.m).copy_from(&(-(inst.a() * u_all) - inst.b()));

    for &(i, row) in &layout.stationarity {
        let ni = reform.dims[i];
        let u_i = point.rows(reform.u_range(i).start, ni);
        let mut val = -u_i.into_owned();
        if let Some(vi) = reform.v_index(i) {
            let zr = reform.z_range(i).unwrap();
            let rz = reflection_apply(&point.as_slice()[zr]);
            for (k, rv) in rz.iter().enumerate() {
                val[k] -= 2.0 * point[vi] * rv;
            }
        }
        g.rows_mut(row, ni).copy_from(&val);
    }

    for &(i, row) in &layout.feas_no_z {
        let ni = reform.dims[i];
        let r = inst.structure().block_range(i);
        let atw = inst.a_block(i).transpose() * w;
        for k in 0..ni {
            g[row + k] = atw[k] - c_eff[r.start + k];
        }
    }
    for &(i, row) in &layout.feas_z {
        let ni = reform.dims[i];
        let r = inst.structure().block_range(i);
        let atw = inst.a_block(i).transpose() * w;
        let zr = reform.z_range(i).unwrap();
        for k in 0..ni {
            g[row + k] = atw[k] + point[zr.start + k] - c_eff[r.start + k];
        }
    }
    for &(i, row) in &layout.quad {
        let zr = reform.z_range(i).unwrap();
        let z_i = &point.as_slice()[zr];
        g[row] = crate::cones::soc_det(z_i);
    }
    g
}

/// Jacobian ∇G with respect to (w; z; u; v).
pub fn jacobian_g(
    inst: &ParametricInstance,
    reform: &ReformulationDN,
    point: &DVector<f64>,
) -> DMatrix<f64> {
    let layout = row_layout(reform);
    let mut jac = DMatrix::zeros(reform.n_c, reform.n_c);

    // Row group 1: derivative w.r.t. u is −A.
    let u_start = reform.u_range(0).start;
    let neg_a = -inst.a();
    jac.view_mut((0, u_start), (reform.m, reform.n_total)).copy_from(&neg_a);

    for &(i, row) in &layout.stationarity {
        let ni = reform.dims[i];
        let ur = reform.u_range(i);
        for k in 0..ni {
            jac[(row + k, ur.start + k)] = -1.0;
        }
        if let Some(vi) = reform.v_index(i) {
            let zr = reform.z_range(i).unwrap();
            let v = point[vi];
            let z_i = &point.as_slice()[zr.clone()];
            // ∂/∂z: −2 v Rⁱ; ∂/∂v: −2 Rⁱ zⁱ.
            jac[(row, zr.start)] = -2.0 * v;
            for k in 1..ni {
                jac[(row + k, zr.start + k)] = 2.0 * v;
            }
            let rz = reflection_apply(z_i);
            for (k, rv) in rz.iter().enumerate() {
                jac[(row + k, vi)] = -2.0 * rv;
            }
        }
    }

    for &(i, row) in &layout.feas_no_z {
        let at = inst.a_block(i).transpose();
        jac.view_mut((row, 0), (reform.dims[i], reform.m)).copy_from(&at);
    }
    for &(i, row) in &layout.feas_z {
        let ni = reform.dims[i];
        let at = inst.a_block(i).transpose();
        jac.view_mut((row, 0), (ni, reform.m)).copy_from(&at);
        let zr = reform.z_range(i).unwrap();
        for k in 0..ni {
            jac[(row + k, zr.start + k)] = 1.0;
        }
    }
    for &(i, row) in &layout.quad {
        let zr = reform.z_range(i).unwrap();
        let rz = reflection_apply(&point.as_slice()[zr.clone()]);
        for (k, rv) in rz.iter().enumerate() {
            jac[(row, zr.start + k)] = 2.0 * rv;
        }
    }
    jac
}

/// Assemble the starting point ϑ from a (rounded) optimal triple:
/// ŵ = y, ẑⁱ = sⁱ, ûⁱ = −xⁱ, v̂ᵢ = ½ x₁ⁱ / s₁ⁱ.
pub fn theta_point(reform: &ReformulationDN, triple: &PrimalDualTriple) -> DVector<f64> {
    let mut point = DVector::zeros(reform.n_c);
    point.rows_mut(0, reform.m).copy_from(&triple.y);
    for &b in &reform.z_blocks {
        let zr = reform.z_range(b).unwrap();
        point.rows_mut(zr.start, zr.len()).copy_from_slice(triple.s.block(b));
    }
    for i in 0..reform.dims.len() {
        let ur = reform.u_range(i);
        let xb = triple.x.block(i);
        for (k, xv) in xb.iter().enumerate() {
            point[ur.start + k] = -xv;
        }
    }
    for &b in reform.v_blocks() {
        let vi = reform.v_index(b).unwrap();
        let s1 = triple.s.block(b)[0];
        point[vi] = if s1.abs() > 0.0 { 0.5 * triple.x.block(b)[0] / s1 } else { 0.0 };
    }
    point
}

/// Relative σ_min threshold below which ∇G is declared singular.
const JAC_SINGULAR_TOL: f64 = 1e-9;

/// Newton-iterate a near-solution onto G = 0 (full iteration rather than a
/// single step; higher-order derivatives amplify base-point error).
pub fn newton_correct(
    inst: &ParametricInstance,
    reform: &ReformulationDN,
    triple: &PrimalDualTriple,
    eps_bar: f64,
    newton_tol: f64,
) -> Result<DVector<f64>, TransitionError> {
    let mut point = theta_point(reform, triple);
    let jac0 = jacobian_g(inst, reform, &point);
    let smin = sigma_min(&jac0);
    let smax = jac0.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
    if smin < JAC_SINGULAR_TOL * smax {
        return Err(TransitionError::SingularJacobian { sigma_min: smin });
    }
    for _iter in 0..60 {
        let g = eval_g(inst, reform, &point, eps_bar);
        if g.norm() <= newton_tol {
            if !reform.z_in_open_cone(&point) {
                return Err(TransitionError::Diverged(
                    "converged point left the open cone".into(),
                ));
            }
            return Ok(point);
        }
        let jac = jacobian_g(inst, reform, &point);
        let lu = EquilibratedLu::new(&jac)
            .ok_or_else(|| TransitionError::Diverged("factorization failed".into()))?;
        let step = lu
            .solve(&(-&g))
            .ok_or(TransitionError::SingularJacobian { sigma_min: 0.0 })?;
        point += &step;
        if point.norm() > 1e9 {
            return Err(TransitionError::Diverged("iterates unbounded".into()));
        }
    }
    let g = eval_g(inst, reform, &point, eps_bar);
    if g.norm() <= newton_tol {
        Ok(point)
    } else {
        Err(TransitionError::Diverged(format!("residual stuck at {:.2e}", g.norm())))
    }
}

/// Expansion coefficients of χ(ε) at ε̄ and the Theorem-style test
/// quantities per order.
#[derive(Debug, Clone)]
pub struct DerivativeSeries {
    pub base: DVector<f64>,
    /// Coefficient vectors for orders 1..=K.
    pub derivs: Vec<DVector<f64>>,
    /// Per order: (block, quantity) pairs checked by the verdict.
    pub quantities: Vec<Vec<(usize, f64)>>,
    /// Per-order linear-solve residual estimates.
    pub solve_residuals: Vec<f64>,
}

impl DerivativeSeries {
    pub fn order(&self) -> usize {
        self.derivs.len()
    }
}

/// Compute the series up to order K from a corrected base point, reusing one
/// factorization of ∇G.
pub fn derivative_series(
    inst: &ParametricInstance,
    reform: &ReformulationDN,
    point: &DVector<f64>,
    order: usize,
) -> Result<DerivativeSeries, TransitionError> {
    assert!(order >= 1);
    let layout = row_layout(reform);
    let jac = jacobian_g(inst, reform, point);
    let smin = sigma_min(&jac);
    let smax = jac.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
    if smin < JAC_SINGULAR_TOL * smax {
        return Err(TransitionError::SingularJacobian { sigma_min: smin });
    }
    let lu = EquilibratedLu::new(&jac)
        .ok_or_else(|| TransitionError::Diverged("factorization failed".into()))?;

    let mut derivs: Vec<DVector<f64>> = Vec::with_capacity(order);
    let mut residuals = Vec::with_capacity(order);

    // Order 1: the ε-gradient of G moves to the right-hand side, stacking c̄
    // over both dual-feasibility groups.
    let mut rhs = DVector::zeros(reform.n_c);
    for group in [&layout.feas_no_z, &layout.feas_z] {
        for &(i, row) in group.iter() {
            let r = inst.structure().block_range(i);
            for k in 0..reform.dims[i] {
                rhs[row + k] = inst.cbar()[r.start + k];
            }
        }
    }
    let chi1 = lu
        .solve(&rhs)
        .ok_or(TransitionError::SingularJacobian { sigma_min: smin })?;
    residuals.push((&jac * &chi1 - &rhs).norm());
    derivs.push(chi1);

    // Higher orders: convolution cross-terms of the bilinear rows.
    for k in 2..=order {
        let mut eta = DVector::zeros(reform.n_c);
        for &(i, row) in &layout.stationarity {
            let Some(vi) = reform.v_index(i) else { continue };
            let zr = reform.z_range(i).unwrap();
            for j in 1..k {
                let vj = derivs[j - 1][vi];
                let z_other = derivs[k - j - 1].rows(zr.start, zr.len());
                let rz = reflection_apply(z_other.as_slice());
                for (t, rv) in rz.iter().enumerate() {
                    eta[row + t] += 2.0 * vj * rv;
                }
            }
        }
        for &(i, row) in &layout.quad {
            let zr = reform.z_range(i).unwrap();
            let mut acc = 0.0;
            for j in 1..k {
                let za = derivs[j - 1].rows(zr.start, zr.len());
                let zb = derivs[k - j - 1].rows(zr.start, zr.len());
                let rzb = reflection_apply(zb.as_slice());
                acc -= za.iter().zip(&rzb).map(|(p, q)| p * q).sum::<f64>();
            }
            eta[row] = acc;
        }
        let chi_k = lu
            .solve(&eta)
            .ok_or(TransitionError::SingularJacobian { sigma_min: smin })?;
        residuals.push((&jac * &chi_k - &eta).norm());
        derivs.push(chi_k);
    }

    // Verdict quantities per order.
    let p = reform.dims.len();
    let mut quantities = Vec::with_capacity(order);
    for k in 1..=order {
        let mut qs: Vec<(usize, f64)> = Vec::new();
        for i in 0..p {
            match reform.partition.assignment(i) {
                BlockAssignment::T1 => {
                    let ur = reform.u_range(i);
                    let norm = derivs[k - 1].rows(ur.start, ur.len()).norm();
                    qs.push((i, norm));
                }
                BlockAssignment::T2 => {
                    // k-th coefficient of (uⁱ)ᵀ Rⁱ uⁱ: convolution over
                    // orders 0..k with the base point as order 0.
                    let ur = reform.u_range(i);
                    let u_of = |ord: usize| -> DVector<f64> {
                        if ord == 0 {
                            point.rows(ur.start, ur.len()).into_owned()
                        } else {
                            derivs[ord - 1].rows(ur.start, ur.len()).into_owned()
                        }
                    };
                    let mut acc = 0.0;
                    for j in 0..=k {
                        let ua = u_of(j);
                        let ub = u_of(k - j);
                        let rub = reflection_apply(ub.as_slice());
                        acc += ua.iter().zip(&rub).map(|(pv, q)| pv * q).sum::<f64>();
                    }
                    qs.push((i, acc));
                }
                BlockAssignment::T3 => {
                    let vi = reform.v_index(i).unwrap();
                    qs.push((i, derivs[k - 1][vi]));
                }
                _ => {}
            }
        }
        quantities.push(qs);
    }

    Ok(DerivativeSeries { base: point.clone(), derivs, quantities, solve_residuals: residuals })
}

/// Verdict of the derivative test at a point.
#[derive(Debug, Clone, PartialEq)]
pub enum PointVerdict {
    /// No test quantity exceeded tolerance up to the checked order. The
    /// verdict is a truncation: membership certified only to that order.
    NonlinearityMember { checked_to_order: usize, note: Option<String> },
    TransitionPoint { order: usize, block: usize, value: f64 },
    Inapplicable { reason: String },
}

/// Outcome of `classify_point`: verdict plus the series when one was built.
#[derive(Debug)]
pub struct ClassifyOutcome {
    pub verdict: PointVerdict,
    pub series: Option<DerivativeSeries>,
    pub partition: OptimalPartition,
}

/// Options for the derivative test.
#[derive(Debug, Clone)]
pub struct ClassifyOptions {
    pub order: usize,
    /// Base tolerance; order k is tested against `deriv_tol · growth(k)`
    /// with growth(k) = 10^((k−1)/2), matching the observed error
    /// amplification of the recursion.
    pub deriv_tol: f64,
    pub newton_tol: f64,
    pub rank_tol: f64,
    pub solve_opts: SolveOptions,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            order: 10,
            deriv_tol: 1e-8,
            newton_tol: 1e-12,
            rank_tol: DEFAULT_RANK_TOL,
            solve_opts: SolveOptions::default(),
        }
    }
}

pub fn growth_factor(k: usize) -> f64 {
    10f64.powf((k as f64 - 1.0) / 2.0)
}

/// Solve at ε̄, verify both nondegeneracy conditions, Newton-correct onto
/// G = 0 and render the derivative verdict up to the requested order.
pub fn classify_point(
    inst: &ParametricInstance,
    eps_bar: f64,
    opts: &ClassifyOptions,
) -> Result<ClassifyOutcome, TransitionError> {
    let rep = solver::solve(inst, eps_bar, &opts.solve_opts).map_err(TransitionError::Solver)?;
    let part = match rep.partition.clone() {
        Some(p) => p,
        None => {
            return Err(TransitionError::Partition(partition::PartitionError::InconsistentBlock {
                index: 0,
                x_class: crate::cones::BlockClass::Outside,
                s_class: crate::cones::BlockClass::Outside,
            }))
        }
    };

    let primal_ok = partition::primal_nondegenerate(inst, &rep.triple, &part, opts.rank_tol);
    let dual_ok = partition::dual_nondegenerate(inst, &rep.triple, &part, opts.rank_tol);
    if !primal_ok || !dual_ok {
        let reason = format!(
            "nondegeneracy fails (primal: {primal_ok}, dual: {dual_ok}); the derivative test needs both"
        );
        return Ok(ClassifyOutcome {
            verdict: PointVerdict::Inapplicable { reason },
            series: None,
            partition: part,
        });
    }

    if part.is_strictly_complementary() {
        // T̄ = ∅ leaves nothing to test: the condition set is empty.
        return Ok(ClassifyOutcome {
            verdict: PointVerdict::NonlinearityMember {
                checked_to_order: 0,
                note: Some(
                    "strictly complementary point: no T-blocks to test; use the \
                     interval expansion instead"
                        .into(),
                ),
            },
            series: None,
            partition: part,
        });
    }

    let reform = build_reformulation(inst, &part);
    let point = newton_correct(inst, &reform, &rep.triple, eps_bar, opts.newton_tol)?;
    let series = derivative_series(inst, &reform, &point, opts.order)?;

    for k in 1..=opts.order {
        let bound = opts.deriv_tol * growth_factor(k);
        for &(block, value) in &series.quantities[k - 1] {
            if value.abs() > bound {
                return Ok(ClassifyOutcome {
                    verdict: PointVerdict::TransitionPoint { order: k, block, value },
                    series: Some(series),
                    partition: part,
                });
            }
        }
    }
    Ok(ClassifyOutcome {
        verdict: PointVerdict::NonlinearityMember { checked_to_order: opts.order, note: None },
        series: Some(series),
        partition: part,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fileio::bundled;
    use approx::assert_abs_diff_eq;

    fn p14_at_zero() -> (ParametricInstance, crate::solver::SolveReport) {
        let inst = bundled("p14").unwrap();
        let rep = solver::solve(&inst, 0.0, &SolveOptions::default()).unwrap();
        (inst, rep)
    }

    #[test]
    fn reformulation_dimension_matches_formula() {
        let (inst, rep) = p14_at_zero();
        let part = rep.partition.clone().unwrap();
        // π(0) = (∅, ∅, {1}, (∅, ∅, {2})) in 1-based indexing.
        assert_eq!(part.r(), vec![0]);
        assert_eq!(part.t3(), vec![1]);
        let reform = build_reformulation(&inst, &part);
        // Σn + Σ_{R∪N∪T3} n + |R| + |T3| + m = 5 + 5 + 1 + 1 + 2.
        assert_eq!(reform.dimension(), 14);
    }

    #[test]
    fn theta_point_zeroes_g_after_rounding() {
        let (inst, rep) = p14_at_zero();
        let part = rep.partition.clone().unwrap();
        let reform = build_reformulation(&inst, &part);
        let theta = theta_point(&reform, &rep.triple);
        let g = eval_g(&inst, &reform, &theta, 0.0);
        assert!(g.norm() <= 1e-8, "||G(ϑ)|| = {:.2e}", g.norm());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (inst, rep) = p14_at_zero();
        let part = rep.partition.clone().unwrap();
        let reform = build_reformulation(&inst, &part);
        let mut point = theta_point(&reform, &rep.triple);
        // Move off the solution to exercise the bilinear terms.
        for (j, v) in point.iter_mut().enumerate() {
            *v += 0.01 * ((j as f64 * 0.7).sin());
        }
        let jac = jacobian_g(&inst, &reform, &point);
        let h = 1e-6;
        let mut max_err = 0.0_f64;
        for col in 0..reform.dimension() {
            let mut plus = point.clone();
            let mut minus = point.clone();
            plus[col] += h;
            minus[col] -= h;
            let gp = eval_g(&inst, &reform, &plus, 0.0);
            let gm = eval_g(&inst, &reform, &minus, 0.0);
            for row in 0..reform.dimension() {
                let fd = (gp[row] - gm[row]) / (2.0 * h);
                max_err = max_err.max((fd - jac[(row, col)]).abs());
            }
        }
        assert!(max_err <= 1e-5, "max FD deviation {max_err:.2e}");
    }

    #[test]
    fn newton_correction_reaches_tight_residual() {
        let (inst, rep) = p14_at_zero();
        let part = rep.partition.clone().unwrap();
        let reform = build_reformulation(&inst, &part);
        let point = newton_correct(&inst, &reform, &rep.triple, 0.0, 1e-12).unwrap();
        let g = eval_g(&inst, &reform, &point, 0.0);
        assert!(g.norm() <= 1e-12);
        // Corrected point is a Newton fixed point: another pass stays put.
        let again = newton_correct(
            &inst,
            &reform,
            &rep.triple,
            0.0,
            1e-12,
        )
        .unwrap();
        assert_abs_diff_eq!(point.as_slice(), again.as_slice(), epsilon = 1e-10);
        assert!(sigma_min(&jacobian_g(&inst, &reform, &point)) > 1e-6);
    }

    #[test]
    fn first_derivative_of_t3_multiplier() {
        let (inst, rep) = p14_at_zero();
        let part = rep.partition.clone().unwrap();
        let reform = build_reformulation(&inst, &part);
        let point = newton_correct(&inst, &reform, &rep.triple, 0.0, 1e-12).unwrap();
        let series = derivative_series(&inst, &reform, &point, 1).unwrap();
        let vi = reform.v_index(1).unwrap();
        assert_abs_diff_eq!(series.derivs[0][vi], -0.5, epsilon = 1e-6);
    }

    #[test]
    fn zero_direction_means_zero_series() {
        // With c̄ = 0 the order-1 right-hand side vanishes and the recursion
        // stays at zero for all orders.
        let inst0 = bundled("p14").unwrap();
        let inst = ParametricInstance::new(
            inst0.structure().clone(),
            inst0.a().clone(),
            inst0.b().clone(),
            inst0.c().clone(),
            nalgebra::DVector::zeros(inst0.structure().total_dim()),
            None,
        )
        .unwrap();
        let rep = solver::solve(&inst, 0.0, &SolveOptions::default()).unwrap();
        let part = rep.partition.clone().unwrap();
        let reform = build_reformulation(&inst, &part);
        let point = newton_correct(&inst, &reform, &rep.triple, 0.0, 1e-12).unwrap();
        let series = derivative_series(&inst, &reform, &point, 6).unwrap();
        for d in &series.derivs {
            assert!(d.norm() <= 1e-11, "coefficient norm {:.2e}", d.norm());
        }
    }

    #[test]
    fn all_interior_partition_reduces_to_a_linear_system() {
        // A triple with every x-block interior classifies as all-B; the
        // reformulation then has no z and no v, and ∇G is constant in the
        // point (the system is linear).
        use crate::cones::ConeVector;
        use nalgebra::DVector;
        let inst = bundled("p5").unwrap();
        let st = inst.structure().clone();
        let x = ConeVector::from_slice(st.clone(), &[2.0, 0.1, 0.1, 2.0, 0.1]);
        let s = ConeVector::zeros(st.clone());
        let t = crate::instance::PrimalDualTriple {
            eps: 0.0,
            x,
            y: DVector::zeros(inst.num_constraints()),
            s,
        };
        let part = partition::classify(&t, 1e-6).unwrap();
        assert_eq!(part.b().len(), 2);
        let reform = build_reformulation(&inst, &part);
        // n̄_c = Σn + 0 + 0 + m.
        assert_eq!(reform.dimension(), 5 + 3);
        let p1 = DVector::from_element(reform.dimension(), 0.3);
        let p2 = DVector::from_element(reform.dimension(), -1.7);
        let j1 = jacobian_g(&inst, &reform, &p1);
        let j2 = jacobian_g(&inst, &reform, &p2);
        assert_eq!(j1, j2);
        // With b = 0, c = 0, ε = 0 the residual at the origin vanishes.
        let zero_inst = ParametricInstance::new(
            st.clone(),
            inst.a().clone(),
            DVector::zeros(inst.num_constraints()),
            DVector::zeros(st.total_dim()),
            DVector::zeros(st.total_dim()),
            None,
        )
        .unwrap();
        let origin = DVector::zeros(reform.dimension());
        let g = eval_g(&zero_inst, &reform, &origin, 0.0);
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn degenerate_face_makes_newton_refuse() {
        // The optimal face of this instance leaves ∇G singular (the B-block
        // multipliers only enter the aggregate row), so the correction must
        // fail with the singularity error rather than diverge quietly.
        let inst = bundled("p15").unwrap();
        let rep = solver::solve(&inst, -0.5, &SolveOptions::default()).unwrap();
        let part = rep.partition.clone().unwrap();
        let reform = build_reformulation(&inst, &part);
        match newton_correct(&inst, &reform, &rep.triple, -0.5, 1e-12) {
            Err(TransitionError::SingularJacobian { .. }) => {}
            other => panic!("expected SingularJacobian, got {other:?}"),
        }
    }

    #[test]
    fn strictly_complementary_point_is_vacuously_a_member() {
        let inst = bundled("p5").unwrap();
        let outcome = classify_point(&inst, 0.5, &ClassifyOptions::default()).unwrap();
        match outcome.verdict {
            PointVerdict::NonlinearityMember { checked_to_order, note } => {
                assert_eq!(checked_to_order, 0);
                assert!(note.is_some(), "vacuous verdict should carry a note");
            }
            other => panic!("expected vacuous member, got {other:?}"),
        }
        assert!(outcome.series.is_none());
    }

    #[test]
    fn transition_point_detected_on_p14() {
        let inst = bundled("p14").unwrap();
        let outcome = classify_point(&inst, 0.0, &ClassifyOptions::default()).unwrap();
        match outcome.verdict {
            PointVerdict::TransitionPoint { order, block, value } => {
                assert_eq!(order, 1);
                assert_eq!(block, 1);
                assert_abs_diff_eq!(value, -0.5, epsilon = 1e-6);
            }
            other => panic!("expected a transition point, got {other:?}"),
        }
    }
}
