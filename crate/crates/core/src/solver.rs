//! Primal-dual path-following interior-point solver for a fixed ε.
//!
//! Nesterov-Todd scaled Mehrotra predictor-corrector. Each iteration solves
//! the full Newton system
//!
//! ```txt
//! [ A        0    0      ] [Δx]   [ b − Ax             ]
//! [ 0        Aᵀ   I      ] [Δy] = [ c + εc̄ − Aᵀy − s   ]
//! [ L(λ)W⁻¹  0    L(λ)W  ] [Δs]   [ rc                 ]
//! ```
//!
//! where `W = Q_{w^{1/2}}` is the NT scaling block and `λ = W⁻¹x = Ws`.
//! The barrier parameter is pushed well below the duality-gap target
//! (default floor ~1e-13) so that the returned iterate approximates the
//! central-path limit — a maximally complementary solution — tightly enough
//! for partition classification at tolerance 1e-6: blocks that lose strict
//! complementarity shrink like √μ along the path.
//!
//! After convergence the iterate is rounded onto the classified partition
//! (zero blocks snapped to zero, boundary blocks projected onto the cone
//! boundary) and the KKT Jacobian ∇F is evaluated there for the σ_min
//! diagnostics.

use nalgebra::{DMatrix, DVector};

use crate::cones::{soc_det, soc_margin, tail_norm, ConeStructure, ConeVector};
use crate::instance::{ParametricInstance, PrimalDualTriple};
use crate::linalg::{null_space, sigma_min as sigma_min_impl, solve_equilibrated};
use crate::partition::{self, OptimalPartition};

/// Options controlling a single solve.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Target for duality gap and feasibility residuals.
    pub tol: f64,
    /// Barrier parameter floor; the solver keeps walking the path until
    /// μ ≤ mu_floor or progress stalls.
    pub mu_floor: f64,
    /// Iteration cap.
    pub max_iter: usize,
    /// Classification tolerance used for post-solve rounding.
    pub class_tol: f64,
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        // Degenerate blocks shrink like √μ along the path; the floor must
        // sit well below (class_tol)² for the partition to classify cleanly.
        SolveOptions {
            tol,
            mu_floor: (tol * 1e-6).max(2e-14),
            max_iter: 300,
            class_tol: partition::DEFAULT_CLASS_TOL,
        }
    }
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions::with_tol(1e-8)
    }
}

/// Solver failure modes.
#[derive(Debug, Clone, PartialEq)]
pub enum SolverError {
    /// Iterates diverged or no interior exists; the problem pair is judged
    /// infeasible or unbounded.
    InfeasibleOrUnbounded,
    /// Iteration cap reached before tolerances were met.
    MaxIterations { gap: f64, primal_res: f64, dual_res: f64 },
    /// The scaled KKT system became effectively singular beyond recovery.
    NumericalBreakdown(String),
}

impl std::fmt::Display for SolverError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SolverError::InfeasibleOrUnbounded => {
                write!(f, "problem judged infeasible or unbounded")
            }
            SolverError::MaxIterations { gap, primal_res, dual_res } => write!(
                f,
                "iteration cap reached (gap {gap:.2e}, primal {primal_res:.2e}, dual {dual_res:.2e})"
            ),
            SolverError::NumericalBreakdown(what) => {
                write!(f, "numerical breakdown: {what}")
            }
        }
    }
}

impl std::error::Error for SolverError {}

/// Outcome of a converged solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Partition-rounded maximally complementary approximation.
    pub triple: PrimalDualTriple,
    /// Iterate as returned by the interior-point loop, before rounding.
    pub raw_triple: PrimalDualTriple,
    /// Partition used for rounding (classification at `class_tol`).
    pub partition: Option<OptimalPartition>,
    pub iterations: usize,
    /// Barrier parameter at termination.
    pub final_mu: f64,
    /// Smallest singular value of ∇F at the rounded triple.
    pub sigma_min_f: f64,
}

/// NT scaling data for one cone block.
struct BlockScaling {
    /// Dense `W = Q_{w^{1/2}}`.
    w_mat: DMatrix<f64>,
    /// Dense `W⁻¹`.
    w_inv: DMatrix<f64>,
    /// Scaled point `λ = Ws = W⁻¹x`.
    lambda: DVector<f64>,
}

/// Quadratic representation `Q_u = 2uuᵀ − det(u)R` of a block.
fn quad_rep(u: &[f64]) -> DMatrix<f64> {
    let n = u.len();
    let d = soc_det(u);
    let uv = DVector::from_row_slice(u);
    let mut m = 2.0 * &uv * uv.transpose();
    m[(0, 0)] -= d;
    for j in 1..n {
        m[(j, j)] += d;
    }
    m
}

/// Jordan square root of an interior block via its spectral values.
fn jordan_sqrt(u: &[f64]) -> Vec<f64> {
    let n = u.len();
    let t = tail_norm(u);
    if t == 0.0 {
        let mut r = vec![0.0; n];
        r[0] = u[0].sqrt();
        return r;
    }
    let lp = (u[0] + t).sqrt();
    let lm = (u[0] - t).max(0.0).sqrt();
    let mut r = vec![0.0; n];
    r[0] = 0.5 * (lp + lm);
    let coef = 0.5 * (lp - lm) / t;
    for j in 1..n {
        r[j] = coef * u[j];
    }
    r
}

fn nt_scaling(x: &[f64], s: &[f64]) -> Option<BlockScaling> {
    let n = x.len();
    let dx = soc_det(x);
    let ds = soc_det(s);
    if dx <= 0.0 || ds <= 0.0 || x[0] <= 0.0 || s[0] <= 0.0 {
        return None;
    }
    let gx = dx.sqrt();
    let gs = ds.sqrt();
    // Unit-determinant scaling point: ŵ = (x̂ + Rŝ) / √(2(1 + x̂ᵀŝ)).
    let mut w = vec![0.0; n];
    let mut dot = x[0] / gx * (s[0] / gs);
    for j in 1..n {
        dot += x[j] / gx * (s[j] / gs);
    }
    let denom = (2.0 * (1.0 + dot)).sqrt();
    if !denom.is_finite() || denom <= 0.0 {
        return None;
    }
    w[0] = (x[0] / gx + s[0] / gs) / denom;
    for j in 1..n {
        w[j] = (x[j] / gx - s[j] / gs) / denom;
    }
    let eta = (gx / gs).sqrt();
    for v in &mut w {
        *v *= eta;
    }
    let half = jordan_sqrt(&w);
    let det_half = soc_det(&half);
    if det_half <= 0.0 {
        return None;
    }
    // Jordan inverse of w^{1/2} is R w^{1/2} / det(w^{1/2}).
    let mut half_inv = half.clone();
    half_inv[0] /= det_half;
    for v in &mut half_inv[1..] {
        *v = -*v / det_half;
    }
    let w_mat = quad_rep(&half);
    let w_inv = quad_rep(&half_inv);
    let lambda = &w_mat * DVector::from_row_slice(s);
    Some(BlockScaling { w_mat, w_inv, lambda })
}

/// Largest τ ≥ 0 with `u + τ d` still in the cone (∞ if the whole ray stays).
///
/// For interior u the exit point is the smallest positive root of
/// `det(u + τd) = det(d) τ² + 2 (uᵀRd) τ + det(u)`; the leading component is
/// automatically nonnegative there because det goes negative before the
/// first component can cross zero.
fn step_to_boundary(u: &[f64], d: &[f64]) -> f64 {
    if u.len() == 1 {
        return if d[0] >= 0.0 { f64::INFINITY } else { -u[0] / d[0] };
    }
    let a = soc_det(d);
    let b = u[0] * d[0] - u[1..].iter().zip(&d[1..]).map(|(p, q)| p * q).sum::<f64>();
    let c = soc_det(u).max(0.0);
    let mut best = f64::INFINITY;
    let mut consider = |t: f64| {
        if t > 0.0 && t < best {
            best = t;
        }
    };
    if a.abs() < 1e-300 {
        if b < 0.0 {
            consider(-c / (2.0 * b));
        }
    } else {
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            // Numerically stable roots of a τ² + 2b τ + c.
            let q = -(b + b.signum() * sq);
            if q != 0.0 {
                consider(q / a);
                consider(c / q);
            } else if a < 0.0 {
                consider((c / -a).sqrt());
            }
        }
    }
    best
}

fn max_step(v: &ConeVector, dir: &DVector<f64>) -> f64 {
    let st = v.structure();
    let mut alpha = f64::INFINITY;
    for i in 0..st.block_count() {
        let range = st.block_range(i);
        let a = step_to_boundary(v.block(i), &dir.as_slice()[range]);
        if a < alpha {
            alpha = a;
        }
    }
    alpha
}

struct NewtonSystem {
    mat: DMatrix<f64>,
    n: usize,
    m: usize,
}

impl NewtonSystem {
    fn assemble(inst: &ParametricInstance, scalings: &[BlockScaling]) -> Self {
        let st = inst.structure();
        let n = st.total_dim();
        let m = inst.num_constraints();
        let dim = 2 * n + m;
        let mut mat = DMatrix::zeros(dim, dim);
        mat.view_mut((0, 0), (m, n)).copy_from(inst.a());
        mat.view_mut((m, n), (n, m)).copy_from(&inst.a().transpose());
        for j in 0..n {
            mat[(m + j, n + m + j)] = 1.0;
        }
        for (i, sc) in scalings.iter().enumerate() {
            let range = st.block_range(i);
            let ni = range.len();
            let arrow_lam = crate::cones::arrow_matrix(sc.lambda.as_slice());
            let left = &arrow_lam * &sc.w_inv;
            let right = &arrow_lam * &sc.w_mat;
            mat.view_mut((m + n + range.start, range.start), (ni, ni)).copy_from(&left);
            mat.view_mut((m + n + range.start, n + m + range.start), (ni, ni))
                .copy_from(&right);
        }
        NewtonSystem { mat, n, m }
    }

    fn solve(
        &self,
        rp: &DVector<f64>,
        rd: &DVector<f64>,
        rc: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let mut rhs = DVector::zeros(2 * self.n + self.m);
        rhs.rows_mut(0, self.m).copy_from(rp);
        rhs.rows_mut(self.m, self.n).copy_from(rd);
        rhs.rows_mut(self.m + self.n, self.n).copy_from(rc);
        let sol = solve_equilibrated(&self.mat, &rhs)?;
        let dx = sol.rows(0, self.n).into_owned();
        let dy = sol.rows(self.n, self.m).into_owned();
        let ds = sol.rows(self.n + self.m, self.n).into_owned();
        Some((dx, dy, ds))
    }
}

/// Solve (P_ε), (D_ε) at a fixed ε.
pub fn solve(
    inst: &ParametricInstance,
    eps: f64,
    opts: &SolveOptions,
) -> Result<SolveReport, SolverError> {
    let st = inst.structure().clone();
    let n = st.total_dim();
    let m = inst.num_constraints();
    let c_eff = inst.objective_at(eps);
    let rank = st.jordan_rank() as f64;
    let feas_scale = 1.0_f64.max(inst.b().norm()).max(c_eff.norm());

    let mut x = st.identity();
    let mut s = st.identity();
    let mut y = DVector::zeros(m);

    let mut iterations = 0;
    let mut mu;
    let mut stall_count = 0;

    for _iter in 0..opts.max_iter {
        let rp_vec = inst.b() - inst.a() * x.flat();
        let rd_vec = &c_eff - inst.a().transpose() * &y - s.flat();
        let gap = x.flat().dot(s.flat());
        mu = gap / rank;
        let rp_norm = rp_vec.norm();
        let rd_norm = rd_vec.norm();

        let feasible = rp_norm <= opts.tol * feas_scale && rd_norm <= opts.tol * feas_scale;
        if feasible && gap <= opts.tol && mu <= opts.mu_floor {
            break;
        }
        if x.flat().norm() + s.flat().norm() > 1e10 {
            return Err(SolverError::InfeasibleOrUnbounded);
        }

        let scalings: Option<Vec<BlockScaling>> = (0..st.block_count())
            .map(|i| nt_scaling(x.block(i), s.block(i)))
            .collect();
        let scalings = match scalings {
            Some(sc) => sc,
            None => {
                if feasible && gap <= opts.tol {
                    break; // iterate already acceptable, scaling exhausted
                }
                return Err(SolverError::NumericalBreakdown(
                    "NT scaling undefined: iterate left the interior".into(),
                ));
            }
        };
        let system = NewtonSystem::assemble(inst, &scalings);

        // λ∘λ per block.
        let mut lam_sq = DVector::zeros(n);
        for (i, sc) in scalings.iter().enumerate() {
            let range = st.block_range(i);
            let mut out = vec![0.0; range.len()];
            crate::cones::jordan_block_product(
                sc.lambda.as_slice(),
                sc.lambda.as_slice(),
                &mut out,
            );
            lam_sq.rows_mut(range.start, range.len()).copy_from_slice(&out);
        }

        // Predictor: pure Newton step toward μ = 0.
        let rc_aff = -&lam_sq;
        let (dx_a, _dy_a, ds_a) = match system.solve(&rp_vec, &rd_vec, &rc_aff) {
            Some(d) => d,
            None => {
                return Err(SolverError::NumericalBreakdown(
                    "singular Newton system in predictor".into(),
                ))
            }
        };
        let ap = max_step(&x, &dx_a).min(1.0);
        let ad = max_step(&s, &ds_a).min(1.0);
        let gap_aff = (x.flat() + ap * &dx_a).dot(&(s.flat() + ad * &ds_a));
        // After a short step, fall back to plain short-step centering: the
        // Mehrotra corrector is what misbehaves near degenerate limits.
        let conservative = stall_count > 0;
        let sigma = if conservative {
            0.5
        } else {
            ((gap_aff / gap).max(0.0)).powi(3).clamp(1e-8, 0.9999)
        };

        // Corrector with Mehrotra second-order term (W⁻¹Δx_a) ∘ (WΔs_a).
        let mut rc = DVector::zeros(n);
        for (i, sc) in scalings.iter().enumerate() {
            let range = st.block_range(i);
            let mut cross = vec![0.0; range.len()];
            if !conservative {
                let vx = &sc.w_inv * dx_a.rows(range.start, range.len());
                let vs = &sc.w_mat * ds_a.rows(range.start, range.len());
                crate::cones::jordan_block_product(vx.as_slice(), vs.as_slice(), &mut cross);
            }
            for (j, idx) in range.clone().enumerate() {
                rc[idx] = -lam_sq[idx] - cross[j];
            }
            rc[range.start] += sigma * mu;
        }
        let (dx, dy, ds) = match system.solve(&rp_vec, &rd_vec, &rc) {
            Some(d) => d,
            None => {
                return Err(SolverError::NumericalBreakdown(
                    "singular Newton system in corrector".into(),
                ))
            }
        };

        let frac = if conservative {
            0.9
        } else if mu > 1e-7 {
            0.99
        } else {
            0.9995
        };
        let alpha = max_step(&x, &dx).min(max_step(&s, &ds)).min(1.0 / frac) * frac;
        if alpha < 1e-6 {
            stall_count += 1;
            if stall_count >= 5 {
                if feasible && gap <= opts.tol {
                    break;
                }
                return Err(SolverError::NumericalBreakdown(
                    "step length collapsed before convergence".into(),
                ));
            }
            if alpha < 1e-12 {
                continue;
            }
        } else {
            stall_count = 0;
        }
        *x.flat_mut() += alpha * &dx;
        y += alpha * &dy;
        *s.flat_mut() += alpha * &ds;
        iterations += 1;
    }

    let raw = PrimalDualTriple { eps, x, y, s };
    mu = raw.gap() / rank;
    let gap = raw.gap();
    let rp = raw.primal_residual(inst);
    let rd = raw.dual_residual(inst);
    if gap > opts.tol || rp > opts.tol * feas_scale || rd > opts.tol * feas_scale {
        return Err(SolverError::MaxIterations { gap, primal_res: rp, dual_res: rd });
    }

    // Round onto the classified partition so exact complementarity and exact
    // cone membership hold blockwise, then polish by Newton on the
    // partition-reduced optimality system (tangential iterate error is
    // O(√μ) and the polish removes it whenever ∇G is nonsingular).
    let (triple, part) = match partition::classify(&raw, opts.class_tol) {
        Ok(p) => {
            let rounded = partition::round_to_partition(&raw, &p);
            let polished = polish_on_partition(inst, &rounded, &p, eps, opts)
                .unwrap_or(rounded);
            (polished, Some(p))
        }
        Err(_) => (raw.clone(), None),
    };
    let sigma_min_f = sigma_min(&jacobian_f(inst, &triple));

    Ok(SolveReport {
        triple,
        raw_triple: raw,
        partition: part,
        iterations,
        final_mu: mu,
        sigma_min_f,
    })
}

/// Newton-refine a rounded triple through the square system G = 0 of the
/// partition-fixed dual reformulation and map the solution back to
/// (x; y; s). Returns None (leaving the rounded triple in place) when ∇G is
/// singular, Newton fails, or the refined point stops classifying to the
/// same partition.
fn polish_on_partition(
    inst: &ParametricInstance,
    rounded: &PrimalDualTriple,
    part: &OptimalPartition,
    eps: f64,
    opts: &SolveOptions,
) -> Option<PrimalDualTriple> {
    use crate::transition;
    let reform = transition::build_reformulation(inst, part);
    let point = transition::newton_correct(inst, &reform, rounded, eps, 1e-12).ok()?;

    let st = inst.structure().clone();
    let mut x = ConeVector::zeros(st.clone());
    let mut s = ConeVector::zeros(st.clone());
    for i in 0..st.block_count() {
        let ur = reform.u_range(i);
        for (k, idx) in ur.enumerate() {
            x.block_mut(i)[k] = -point[idx];
        }
        if let Some(zr) = reform.z_range(i) {
            for (k, idx) in zr.enumerate() {
                s.block_mut(i)[k] = point[idx];
            }
        }
    }
    let y = DVector::from_iterator(inst.num_constraints(), reform.w_range().map(|j| point[j]));
    let cand = PrimalDualTriple { eps, x, y, s };

    let feas_scale = 1.0_f64.max(inst.b().norm()).max(inst.objective_at(eps).norm());
    if cand.primal_residual(inst) > opts.tol * feas_scale
        || cand.dual_residual(inst) > opts.tol * feas_scale
        || cand.gap().abs() > opts.tol
    {
        return None;
    }
    let reclass = partition::classify(&cand, opts.class_tol).ok()?;
    if !partition::partitions_equal(&reclass, part) {
        return None;
    }
    Some(partition::round_to_partition(&cand, part))
}

/// Jacobian of the KKT map F at a point: `[A 0 0; 0 Aᵀ I; L(s) 0 L(x)]`,
/// square of side `n̄ + m + n̄` in the unknown order (x; y; s).
pub fn jacobian_f(inst: &ParametricInstance, triple: &PrimalDualTriple) -> DMatrix<f64> {
    let st = inst.structure();
    let n = st.total_dim();
    let m = inst.num_constraints();
    let dim = 2 * n + m;
    let mut mat = DMatrix::zeros(dim, dim);
    mat.view_mut((0, 0), (m, n)).copy_from(inst.a());
    mat.view_mut((m, n), (n, m)).copy_from(&inst.a().transpose());
    for j in 0..n {
        mat[(m + j, n + m + j)] = 1.0;
    }
    for i in 0..st.block_count() {
        let range = st.block_range(i);
        let ni = range.len();
        let ls = crate::cones::arrow_matrix(triple.s.block(i));
        let lx = crate::cones::arrow_matrix(triple.x.block(i));
        mat.view_mut((m + n + range.start, range.start), (ni, ni)).copy_from(&ls);
        mat.view_mut((m + n + range.start, n + m + range.start), (ni, ni)).copy_from(&lx);
    }
    mat
}

/// Smallest singular value of a dense matrix.
pub fn sigma_min(mat: &DMatrix<f64>) -> f64 {
    sigma_min_impl(mat)
}

/// Result of the interior-point-condition probe at a fixed ε.
#[derive(Debug, Clone)]
pub struct InteriorCheck {
    pub primal_margin: f64,
    pub dual_margin: f64,
    pub primal_witness: Option<ConeVector>,
    pub dual_witness: Option<(DVector<f64>, ConeVector)>,
}

impl InteriorCheck {
    pub fn holds(&self) -> bool {
        self.primal_witness.is_some() && self.dual_witness.is_some()
    }
}

const INTERIOR_MARGIN: f64 = 1e-8;

/// Check whether both (P_ε) and (D_ε) admit strictly interior feasible
/// points, returning witnesses when they do.
///
/// Both sides reduce to finding an interior point of an affine slice of the
/// cone product: `x = x_ls + Nξ` over the null space of A for the primal,
/// `s = c + εc̄ − Aᵀy` for the dual. Each search runs a shifted barrier
/// homotopy: minimize `−Σ ln det(u + t·e)` by damped Newton while driving
/// the shift t to zero. Success is declared as soon as the unshifted margin
/// clears the threshold, so unbounded feasible sets exit early.
pub fn check_interior_point(inst: &ParametricInstance, eps: f64) -> InteriorCheck {
    let st = inst.structure();
    let scale = 1.0_f64.max(inst.b().norm());

    // b must lie in range(A); otherwise the primal is infeasible outright.
    let svd = inst.a().clone().svd(true, true);
    let x_ls = svd.solve(inst.b(), 1e-12).unwrap_or_else(|_| DVector::zeros(st.total_dim()));
    let lstsq_resid = (inst.a() * &x_ls - inst.b()).norm();
    let (primal_margin, primal_witness) = if lstsq_resid > 1e-8 * scale {
        (f64::NEG_INFINITY, None)
    } else {
        let nullb = null_space(inst.a());
        let (margin, u) = interior_search(st, &x_ls, &nullb);
        let wit = (margin > INTERIOR_MARGIN).then(|| ConeVector::from_flat(st.clone(), u));
        (margin, wit)
    };

    let c_eff = inst.objective_at(eps);
    let neg_at = -inst.a().transpose();
    let (dual_margin, dual_vals) = interior_search(st, &c_eff, &neg_at);
    let dual_witness = (dual_margin > INTERIOR_MARGIN).then(|| {
        // Recover y from s = c_eff − Aᵀy by least squares on the map.
        let diff = &c_eff - &dual_vals;
        let y = inst
            .a()
            .transpose()
            .clone()
            .svd(true, true)
            .solve(&diff, 1e-12)
            .unwrap_or_else(|_| DVector::zeros(inst.num_constraints()));
        (y, ConeVector::from_flat(st.clone(), dual_vals.clone()))
    });

    InteriorCheck { primal_margin, dual_margin, primal_witness, dual_witness }
}

/// Shifted-barrier interior search over `u = u0 + M ν`.
/// Returns the best margin found and the corresponding u.
fn interior_search(
    st: &ConeStructure,
    u0: &DVector<f64>,
    map: &DMatrix<f64>,
) -> (f64, DVector<f64>) {
    let k = map.ncols();
    let margin_of = |u: &DVector<f64>| -> f64 {
        (0..st.block_count())
            .map(|i| {
                let r = st.block_range(i);
                soc_margin(&u.as_slice()[r])
            })
            .fold(f64::INFINITY, f64::min)
    };
    let e_vec = st.identity();
    let mut nu = DVector::zeros(k);
    let mut u = u0.clone();
    let mut best_margin = margin_of(&u);
    let mut best_u = u.clone();
    if k == 0 {
        return (best_margin, u);
    }
    let mut t = (2.0 * (-best_margin).max(0.0)) + 1.0;
    let threshold = INTERIOR_MARGIN * 100.0;

    for _outer in 0..70 {
        // Damped Newton on Φ_t(ν) = −Σ ln det(u0 + Mν + t e).
        for _inner in 0..25 {
            let shifted = &u + t * e_vec.flat();
            let mut grad = DVector::zeros(k);
            let mut hess = DMatrix::zeros(k, k);
            let mut in_domain = true;
            for i in 0..st.block_count() {
                let r = st.block_range(i);
                let blk = &shifted.as_slice()[r.clone()];
                let d = soc_det(blk);
                if d <= 0.0 || blk[0] <= 0.0 {
                    in_domain = false;
                    break;
                }
                let mut ru = DVector::from_row_slice(blk);
                for v in ru.iter_mut().skip(1) {
                    *v = -*v;
                }
                let mi = map.rows(r.start, r.len());
                let g_u = -2.0 / d * &ru;
                grad += mi.transpose() * &g_u;
                // ∇²(−ln det u) = −2R/det + 4(Ru)(Ru)ᵀ/det².
                let mut h_u = 4.0 / (d * d) * &ru * ru.transpose();
                h_u[(0, 0)] -= 2.0 / d;
                for j in 1..r.len() {
                    h_u[(j, j)] += 2.0 / d;
                }
                hess += mi.transpose() * h_u * mi;
            }
            if !in_domain {
                break;
            }
            let gnorm = grad.norm();
            if gnorm < 1e-11 {
                break;
            }
            for j in 0..k {
                hess[(j, j)] += 1e-12;
            }
            let step = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => match solve_equilibrated(&hess, &(-&grad)) {
                    Some(sv) => sv,
                    None => break,
                },
            };
            // Backtrack to stay in the shifted domain and decrease Φ.
            let mut alpha = 1.0;
            let phi = |candidate: &DVector<f64>| -> Option<f64> {
                let cu = u0 + map * candidate + t * e_vec.flat();
                let mut val = 0.0;
                for i in 0..st.block_count() {
                    let r = st.block_range(i);
                    let blk = &cu.as_slice()[r];
                    let d = soc_det(blk);
                    if d <= 0.0 || blk[0] <= 0.0 {
                        return None;
                    }
                    val -= d.ln();
                }
                Some(val)
            };
            let phi0 = phi(&nu).unwrap_or(f64::INFINITY);
            let slope = grad.dot(&step);
            let mut accepted = false;
            for _bt in 0..50 {
                let cand = &nu + alpha * &step;
                if let Some(val) = phi(&cand) {
                    if val <= phi0 + 1e-4 * alpha * slope {
                        nu = cand;
                        u = u0 + map * &nu;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
            let mg = margin_of(&u);
            if mg > best_margin {
                best_margin = mg;
                best_u = u.clone();
            }
            if best_margin > threshold {
                return (best_margin, best_u);
            }
        }
        if best_margin > threshold || nu.norm() > 1e9 {
            break;
        }
        if t < 1e-11 {
            break;
        }
        // Shrink the shift, but keep the shifted point interior. When the
        // margin is pinned at ~0 the shift stalls and we give up below.
        let current = margin_of(&u);
        let previous = t;
        t *= 0.25;
        if current < 0.0 {
            t = t.max(-current * 1.05 + 1e-14);
        }
        if t >= 0.999 * previous {
            break;
        }
    }
    (best_margin, best_u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fileio::bundled;
    use approx::assert_abs_diff_eq;

    #[test]
    fn solves_rotating_ray_instance_at_midpoint() {
        // ε = 1/2 on the 2-block instance with known unique optimum.
        let inst = bundled("p5").unwrap();
        let rep = solve(&inst, 0.5, &SolveOptions::default()).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let expect_x = [1.0, r, r, r, r - 1.0];
        let expect_s = [r, -0.5, -0.5, 0.0, 0.0];
        for (got, want) in rep.triple.x.flat().iter().zip(expect_x) {
            assert_abs_diff_eq!(got, &want, epsilon = 1e-6);
        }
        for (got, want) in rep.triple.s.flat().iter().zip(expect_s) {
            assert_abs_diff_eq!(got, &want, epsilon = 1e-6);
        }
        // Table value for σ_min(∇F) at this point.
        assert!((rep.sigma_min_f - 0.169).abs() / 0.169 < 0.2);
    }

    #[test]
    fn weak_duality_holds_at_solution() {
        let inst = bundled("p6").unwrap();
        let rep = solve(&inst, 0.1, &SolveOptions::default()).unwrap();
        let gap = rep.raw_triple.gap();
        let diff = rep.raw_triple.objective(&inst) - rep.raw_triple.dual_objective(&inst);
        assert!(gap >= 0.0);
        assert_abs_diff_eq!(diff, gap, epsilon = 1e-6);
    }

    #[test]
    fn interior_point_condition_on_bundled_instances() {
        for name in ["p5", "p6", "p8", "p14", "p15"] {
            let inst = bundled(name).unwrap();
            let chk = check_interior_point(&inst, 0.3);
            assert!(chk.holds(), "{name} should satisfy the interior point condition");
        }
    }

    #[test]
    fn detects_b_outside_range() {
        // A maps into a 1-dim subspace of R², b points elsewhere.
        use crate::cones::ConeStructure;
        use nalgebra::{DMatrix, DVector};
        let st = ConeStructure::new(vec![2]);
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let inst = crate::instance::ParametricInstance::new(
            st,
            a,
            DVector::from_row_slice(&[1.0]),
            DVector::zeros(2),
            DVector::zeros(2),
            None,
        )
        .unwrap();
        // Make the single constraint unsatisfiable in the cone: x1 = -1.
        let inst_bad = crate::instance::ParametricInstance::new(
            inst.structure().clone(),
            inst.a().clone(),
            DVector::from_row_slice(&[-1.0]),
            DVector::zeros(2),
            DVector::zeros(2),
            None,
        )
        .unwrap();
        let chk = check_interior_point(&inst_bad, 0.0);
        assert!(!chk.holds());
    }

    #[test]
    fn boundary_step_brackets_the_exit_point() {
        // For random interior points and directions, u + (α∓η)d must lie
        // inside/outside the cone around the computed exit step α.
        let mut state: u64 = 0xabcd_1234;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state as f64 / u64::MAX as f64) * 4.0 - 2.0
        };
        for trial in 0..500 {
            let n = 1 + (trial % 5);
            let mut u: Vec<f64> = (0..n).map(|_| next()).collect();
            u[0] = u[0].abs() + tail_norm(&u) + 0.1; // strictly interior
            let d: Vec<f64> = (0..n).map(|_| next()).collect();
            let alpha = step_to_boundary(&u, &d);
            if !alpha.is_finite() {
                // The whole ray must stay inside; check far out.
                let far: Vec<f64> =
                    u.iter().zip(&d).map(|(a, b)| a + 1e6 * b).collect();
                assert!(soc_margin(&far) >= -1e-6, "trial {trial}");
                continue;
            }
            let eta = 1e-7 * (1.0 + alpha);
            let inside: Vec<f64> =
                u.iter().zip(&d).map(|(a, b)| a + (alpha - eta) * b).collect();
            let outside: Vec<f64> =
                u.iter().zip(&d).map(|(a, b)| a + (alpha + eta) * b).collect();
            assert!(soc_margin(&inside) >= -1e-5, "trial {trial}: margin {:.2e}", soc_margin(&inside));
            assert!(soc_margin(&outside) <= 1e-5, "trial {trial}: margin {:.2e}", soc_margin(&outside));
        }
    }

    #[test]
    fn jacobian_f_zero_point_is_singular() {
        let inst = bundled("p5").unwrap();
        let st = inst.structure().clone();
        let triple = PrimalDualTriple {
            eps: 0.0,
            x: crate::cones::ConeVector::zeros(st.clone()),
            y: DVector::zeros(inst.num_constraints()),
            s: crate::cones::ConeVector::zeros(st),
        };
        let jf = jacobian_f(&inst, &triple);
        // Lower block row is entirely zero.
        let n = inst.structure().total_dim();
        let m = inst.num_constraints();
        for i in (n + m)..(2 * n + m) {
            for j in 0..(2 * n + m) {
                assert_eq!(jf[(i, j)], 0.0);
            }
        }
        assert_abs_diff_eq!(sigma_min(&jf), 0.0, epsilon = 1e-14);
    }
}
