//! Iterated expansion of a nonlinearity interval and grid-based diagnostics.
//!
//! Starting from ε̄ with a strictly complementary solution, the backward loop
//! repeatedly solves the conic pair at the current point, computes the
//! partition-preserving radius δ, and pushes the minimization auxiliary
//! problem to obtain the next, smaller α value; the forward loop mirrors this
//! with maximization. The α-sequence is nonincreasing and the β-sequence
//! nondecreasing; both converge into the closure of the surrounding
//! nonlinearity interval. The connectivity subroutine of the original
//! procedure is replaced by a partition-equality check at every accepted
//! point plus the monotone-trace assertion.

use crate::auxnlp::{self, AuxError, AuxOptions, AuxiliaryProblem, Sense};
use crate::instance::ParametricInstance;
use crate::partition::{self, OptimalPartition};
use crate::solver::{self, SolveOptions, SolverError};

/// Controls for the interval computation.
#[derive(Debug, Clone)]
pub struct ScanOptions {
    /// Loop stops once |α_k − α_{k−1}| falls to this value.
    pub stop_tol: f64,
    /// Iteration cap per direction.
    pub max_iter: usize,
    pub solve_opts: SolveOptions,
    pub aux_opts: AuxOptions,
}

impl Default for ScanOptions {
    fn default() -> Self {
        let mut aux_opts = AuxOptions::default();
        // The loop re-solves at every accepted point anyway.
        aux_opts.verify_partition = false;
        ScanOptions {
            stop_tol: 1e-7,
            max_iter: 200,
            solve_opts: SolveOptions::default(),
            aux_opts,
        }
    }
}

/// One line of the convergence trace (mirrors the table columns:
/// k, value, Optim., Viol., δ, σ_min(∇F), distance to the limit).
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub k: usize,
    pub value: f64,
    pub optim: Option<f64>,
    pub viol: Option<f64>,
    pub delta: f64,
    pub sigma_min_f: f64,
    pub dist_to_limit: Option<f64>,
}

/// Outcome classification of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// α̂ < ε̄ < β̂: a certified subinterval of a nonlinearity interval.
    NonlinearitySubinterval,
    /// At least one side collapsed onto ε̄: a singleton invariancy set at
    /// which the set-convergence conditions fail.
    SingletonConditionsFail,
}

/// Full report of one bidirectional run.
#[derive(Debug, Clone)]
pub struct IntervalReport {
    pub eps_bar: f64,
    pub alpha_hat: f64,
    pub beta_hat: f64,
    pub backward: Vec<TraceRow>,
    pub forward: Vec<TraceRow>,
    pub verdict: Verdict,
    /// Degradation notes (classification failures near transition points).
    pub annotations: Vec<String>,
}

/// Errors carrying whatever partial trace existed when the run aborted.
#[derive(Debug)]
pub enum ScanError {
    NotStrictlyComplementary { eps: f64 },
    Solver { eps: f64, source: SolverError, partial: Vec<TraceRow> },
    Aux { eps: f64, source: AuxError, partial: Vec<TraceRow> },
}

impl std::fmt::Display for ScanError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScanError::NotStrictlyComplementary { eps } => {
                write!(f, "strict complementarity fails at ε = {eps}")
            }
            ScanError::Solver { eps, source, .. } => {
                write!(f, "solver failed at ε = {eps}: {source}")
            }
            ScanError::Aux { eps, source, .. } => {
                write!(f, "auxiliary solve failed at ε = {eps}: {source}")
            }
        }
    }
}

impl std::error::Error for ScanError {}

struct DirectionOutcome {
    limit: f64,
    rows: Vec<TraceRow>,
    annotations: Vec<String>,
}

fn run_direction(
    inst: &ParametricInstance,
    eps_bar: f64,
    sense: Sense,
    opts: &ScanOptions,
    anchor_partition: &OptimalPartition,
) -> Result<DirectionOutcome, ScanError> {
    let mut rows: Vec<TraceRow> = Vec::new();
    let mut annotations: Vec<String> = Vec::new();

    let mut current = eps_bar;
    let mut report = solver::solve(inst, current, &opts.solve_opts).map_err(|e| {
        ScanError::Solver { eps: current, source: e, partial: Vec::new() }
    })?;
    let mut prev = f64::NAN;
    let mut pending_optim: Option<f64> = None;
    let mut pending_viol: Option<f64> = None;

    for k in 0..=opts.max_iter {
        let part = match &report.partition {
            Some(p) => p.clone(),
            None => {
                annotations.push(format!(
                    "NUMERICALLY_DEGRADED: partition unclassifiable at {current}"
                ));
                break;
            }
        };
        if !partition::partitions_equal(&part, anchor_partition) {
            annotations.push(format!(
                "NUMERICALLY_DEGRADED: partition at {} is {}, anchor has {}",
                current,
                part.display(),
                anchor_partition.display()
            ));
            break;
        }
        let radii = match partition::delta_radius(&report.triple, &part) {
            Ok(r) => r,
            Err(_) => {
                annotations
                    .push(format!("NUMERICALLY_DEGRADED: δ undefined at {current}"));
                break;
            }
        };
        rows.push(TraceRow {
            k,
            value: current,
            optim: pending_optim.take(),
            viol: pending_viol.take(),
            delta: radii.delta,
            sigma_min_f: report.sigma_min_f,
            dist_to_limit: None,
        });

        if k > 0 && (current - prev).abs() <= opts.stop_tol {
            break;
        }
        if k == opts.max_iter {
            break;
        }

        // Largest certified radius, shaved by a fixed safety margin.
        let delta_used = radii.delta - 1e-12;
        if delta_used <= 0.0 {
            annotations.push(format!("NUMERICALLY_DEGRADED: δ collapsed at {current}"));
            break;
        }
        let prob = AuxiliaryProblem {
            instance: inst,
            anchor: &report.triple,
            delta: delta_used,
            sense,
        };
        let aux = match auxnlp::solve_auxiliary(&prob, &opts.aux_opts) {
            Ok(r) => r,
            Err(AuxError::NoProgress(_)) => {
                // The neighborhood collapses on this side; the loop is done.
                annotations.push(format!("no further progress below tolerance at {current}"));
                break;
            }
            Err(e) => {
                return Err(ScanError::Aux { eps: current, source: e, partial: rows })
            }
        };
        let next = aux.eps_star;
        let next_report = match solver::solve(inst, next, &opts.solve_opts) {
            Ok(r) => r,
            Err(e) => {
                return Err(ScanError::Solver { eps: next, source: e, partial: rows })
            }
        };
        // Monotone trace enforcement: never step past the previous point.
        let monotone_ok = match sense {
            Sense::Min => next <= current + opts.stop_tol,
            Sense::Max => next >= current - opts.stop_tol,
        };
        if !monotone_ok {
            annotations.push(format!(
                "NUMERICALLY_DEGRADED: non-monotone step {current} -> {next}"
            ));
            break;
        }
        // Accept only if the partition is preserved at the new point.
        match &next_report.partition {
            Some(p) if partition::partitions_equal(p, anchor_partition) => {}
            Some(p) => {
                annotations.push(format!(
                    "NUMERICALLY_DEGRADED: rejected {} with partition {}",
                    next,
                    p.display()
                ));
                break;
            }
            None => {
                annotations.push(format!(
                    "NUMERICALLY_DEGRADED: rejected {next}; partition unclassifiable"
                ));
                break;
            }
        }
        prev = current;
        current = next;
        report = next_report;
        pending_optim = Some(aux.kkt_residual);
        pending_viol = Some(aux.constraint_violation);
    }

    let limit = current;
    for row in &mut rows {
        row.dist_to_limit = if row.k == 0 { None } else { Some((row.value - limit).abs()) };
    }
    Ok(DirectionOutcome { limit, rows, annotations })
}

/// Bidirectional computation of a nonlinearity subinterval around `eps_bar`.
pub fn run_algorithm1(
    inst: &ParametricInstance,
    eps_bar: f64,
    opts: &ScanOptions,
) -> Result<IntervalReport, ScanError> {
    let report = solver::solve(inst, eps_bar, &opts.solve_opts)
        .map_err(|e| ScanError::Solver { eps: eps_bar, source: e, partial: Vec::new() })?;
    let anchor_partition = report
        .partition
        .clone()
        .ok_or(ScanError::NotStrictlyComplementary { eps: eps_bar })?;
    if !anchor_partition.is_strictly_complementary() {
        return Err(ScanError::NotStrictlyComplementary { eps: eps_bar });
    }

    let backward = run_direction(inst, eps_bar, Sense::Min, opts, &anchor_partition)?;
    let forward = run_direction(inst, eps_bar, Sense::Max, opts, &anchor_partition)?;

    let alpha_hat = backward.limit;
    let beta_hat = forward.limit;
    let verdict = if eps_bar - alpha_hat > opts.stop_tol && beta_hat - eps_bar > opts.stop_tol {
        Verdict::NonlinearitySubinterval
    } else {
        Verdict::SingletonConditionsFail
    };
    let mut annotations = backward.annotations;
    annotations.extend(forward.annotations);
    Ok(IntervalReport {
        eps_bar,
        alpha_hat,
        beta_hat,
        backward: backward.rows,
        forward: forward.rows,
        verdict,
        annotations,
    })
}

/// One solved grid point.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub eps: f64,
    pub partition: Option<OptimalPartition>,
    pub error: Option<String>,
}

/// Result of a pointwise partition sweep.
#[derive(Debug, Clone)]
pub struct GridScan {
    pub points: Vec<GridPoint>,
    /// Indices i such that points i and i+1 carry different partitions.
    pub change_cells: Vec<usize>,
}

/// Number of worker threads for grid scans: the SOCO_PART_THREADS
/// environment variable when set, otherwise machine parallelism.
pub fn scan_parallelism() -> usize {
    if let Ok(v) = std::env::var("SOCO_PART_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Solve and classify the partition at every grid point, flagging cells
/// where consecutive partitions differ.
pub fn grid_scan(
    inst: &ParametricInstance,
    lo: f64,
    hi: f64,
    n_points: usize,
    opts: &SolveOptions,
) -> GridScan {
    assert!(lo < hi && n_points >= 2, "need lo < hi and at least two points");
    let step = (hi - lo) / (n_points - 1) as f64;
    let grid: Vec<f64> = (0..n_points).map(|j| lo + step * j as f64).collect();
    let points = scan_points(inst, &grid, opts);
    let change_cells = detect_changes(&points);
    GridScan { points, change_cells }
}

/// Solve and classify at arbitrary (strictly increasing) parameter values.
pub fn scan_points(
    inst: &ParametricInstance,
    grid: &[f64],
    opts: &SolveOptions,
) -> Vec<GridPoint> {
    let workers = scan_parallelism().min(grid.len()).max(1);
    let mut points: Vec<Option<GridPoint>> = vec![None; grid.len()];
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: std::sync::Mutex<&mut Vec<Option<GridPoint>>> =
        std::sync::Mutex::new(&mut points);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if idx >= grid.len() {
                    break;
                }
                let eps = grid[idx];
                let point = match solver::solve(inst, eps, opts) {
                    Ok(rep) => GridPoint {
                        eps,
                        partition: rep.partition.clone(),
                        error: if rep.partition.is_some() {
                            None
                        } else {
                            Some("UNKNOWN: partition unclassifiable".into())
                        },
                    },
                    Err(e) => {
                        GridPoint { eps, partition: None, error: Some(format!("UNKNOWN: {e}")) }
                    }
                };
                results.lock().unwrap()[idx] = Some(point);
            });
        }
    });
    points.into_iter().map(|p| p.expect("all grid points visited")).collect()
}

fn detect_changes(points: &[GridPoint]) -> Vec<usize> {
    let mut cells = Vec::new();
    for i in 0..points.len().saturating_sub(1) {
        if let (Some(a), Some(b)) = (&points[i].partition, &points[i + 1].partition) {
            if !partition::partitions_equal(a, b) {
                cells.push(i);
            }
        }
    }
    cells
}

/// Interval kinds distinguished by whether boundary extreme rays move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalKind {
    Invariancy,
    Nonlinearity,
}

/// Errors from interval-kind classification.
#[derive(Debug)]
pub enum KindError {
    PartitionNotConstant { at: f64 },
    Solver { eps: f64, source: SolverError },
}

impl std::fmt::Display for KindError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KindError::PartitionNotConstant { at } => {
                write!(f, "partition changes within the interval (at ε = {at})")
            }
            KindError::Solver { eps, source } => {
                write!(f, "solver failed at ε = {eps}: {source}")
            }
        }
    }
}

impl std::error::Error for KindError {}

/// Distinguish invariancy from nonlinearity on an open interval by sampling:
/// the interval is a nonlinearity interval iff some boundary-block direction
/// `x*ⁱ/||x*ⁱ||` (i ∈ R ∪ T2) or `s*ⁱ/||s*ⁱ||` (i ∈ R ∪ T3) moves by more
/// than `direction_tol` across the samples. A single sample is vacuously an
/// invariancy verdict.
pub fn classify_interval_kind(
    inst: &ParametricInstance,
    interval: (f64, f64),
    samples: usize,
    direction_tol: f64,
    opts: &SolveOptions,
) -> Result<IntervalKind, KindError> {
    assert!(samples >= 1);
    let (lo, hi) = interval;
    let grid: Vec<f64> = (0..samples)
        .map(|j| lo + (hi - lo) * (j as f64 + 1.0) / (samples as f64 + 1.0))
        .collect();
    let mut solved = Vec::with_capacity(grid.len());
    for &eps in &grid {
        let rep = solver::solve(inst, eps, opts)
            .map_err(|e| KindError::Solver { eps, source: e })?;
        let part = rep
            .partition
            .clone()
            .ok_or(KindError::PartitionNotConstant { at: eps })?;
        solved.push((eps, rep, part));
    }
    let base = &solved[0].2;
    for (eps, _, part) in &solved[1..] {
        if !partition::partitions_equal(base, part) {
            return Err(KindError::PartitionNotConstant { at: *eps });
        }
    }
    if solved.len() == 1 {
        return Ok(IntervalKind::Invariancy);
    }

    let st = inst.structure();
    let unit = |block: &[f64]| -> Option<Vec<f64>> {
        let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
        (norm > 0.0).then(|| block.iter().map(|v| v / norm).collect())
    };
    let mut moved = false;
    for i in 0..st.block_count() {
        use crate::partition::BlockAssignment as Ba;
        let a = base.assignment(i);
        let track_x = matches!(a, Ba::R | Ba::T2);
        let track_s = matches!(a, Ba::R | Ba::T3);
        for tracked in [(track_x, true), (track_s, false)] {
            let (on, is_x) = tracked;
            if !on {
                continue;
            }
            let dirs: Vec<Option<Vec<f64>>> = solved
                .iter()
                .map(|(_, rep, _)| {
                    let v = if is_x { rep.triple.x.block(i) } else { rep.triple.s.block(i) };
                    unit(v)
                })
                .collect();
            if let Some(first) = dirs[0].as_ref() {
                for d in dirs.iter().skip(1).flatten() {
                    let dev = first
                        .iter()
                        .zip(d)
                        .map(|(p, q)| (p - q).abs())
                        .fold(0.0, f64::max);
                    if dev > direction_tol {
                        moved = true;
                    }
                }
            }
        }
    }
    Ok(if moved { IntervalKind::Nonlinearity } else { IntervalKind::Invariancy })
}
