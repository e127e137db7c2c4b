//! Pointwise sampling of the optimal value function ψ(ε).
//!
//! ψ is proper, concave and continuous on the domain of finite values, so a
//! midpoint-concavity check over the samples doubles as a solver diagnostic.

use crate::instance::ParametricInstance;
use crate::interval_scan::scan_parallelism;
use crate::solver::{self, SolveOptions};

/// One sample of the value function.
#[derive(Debug, Clone)]
pub struct ValueSample {
    pub eps: f64,
    pub psi: Option<f64>,
    pub error: Option<String>,
}

/// Sampled curve plus the concavity diagnostic.
#[derive(Debug, Clone)]
pub struct ValueFunction {
    pub samples: Vec<ValueSample>,
    /// Worst (most negative) slack of the three-point concavity test
    /// `ψ(mid) − (ψ(left) + ψ(right))/2` over consecutive equispaced
    /// triples; `None` with fewer than three solved points.
    pub concavity_slack: Option<f64>,
}

impl ValueFunction {
    pub fn concave_within(&self, tol: f64) -> bool {
        self.concavity_slack.map(|s| s >= -tol).unwrap_or(true)
    }
}

/// Evaluate ψ on the given grid (parallel over points).
pub fn emit_value_function(
    inst: &ParametricInstance,
    grid: &[f64],
    opts: &SolveOptions,
) -> ValueFunction {
    let workers = scan_parallelism().min(grid.len().max(1));
    let mut samples: Vec<Option<ValueSample>> = vec![None; grid.len()];
    let next = std::sync::atomic::AtomicUsize::new(0);
    let out = std::sync::Mutex::new(&mut samples);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if idx >= grid.len() {
                    break;
                }
                let eps = grid[idx];
                let sample = match solver::solve(inst, eps, opts) {
                    Ok(rep) => ValueSample {
                        eps,
                        psi: Some(rep.triple.objective(inst)),
                        error: None,
                    },
                    Err(e) => ValueSample { eps, psi: None, error: Some(e.to_string()) },
                };
                out.lock().unwrap()[idx] = Some(sample);
            });
        }
    });
    let samples: Vec<ValueSample> = samples.into_iter().map(|s| s.unwrap()).collect();

    // Midpoint concavity over consecutive triples of solved samples.
    let mut slack: Option<f64> = None;
    for w in samples.windows(3) {
        if let (Some(a), Some(b), Some(c)) = (w[0].psi, w[1].psi, w[2].psi) {
            // Only meaningful when the spacing is (near) uniform.
            let left = w[1].eps - w[0].eps;
            let right = w[2].eps - w[1].eps;
            if (left - right).abs() > 1e-9 * left.abs().max(right.abs()) {
                continue;
            }
            let s = b - 0.5 * (a + c);
            slack = Some(slack.map_or(s, |cur: f64| cur.min(s)));
        }
    }
    ValueFunction { samples, concavity_slack: slack }
}

/// Equispaced grid helper.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 1);
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|j| lo + step * j as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fileio::bundled;

    #[test]
    fn singleton_grid_gives_single_row() {
        let inst = bundled("p5").unwrap();
        let vf = emit_value_function(&inst, &[0.5], &SolveOptions::default());
        assert_eq!(vf.samples.len(), 1);
        assert!(vf.samples[0].psi.is_some());
        assert!(vf.concavity_slack.is_none());
        assert!(vf.concave_within(1e-7));
    }

    #[test]
    fn closed_form_value_curve() {
        // ψ(ε) = −√(4ε² − 4ε + 2) for the two-block analytic instance,
        // evaluated through the optimal solution's objective.
        let inst = bundled("p6").unwrap();
        let grid = linspace(0.0, 1.0, 11);
        let vf = emit_value_function(&inst, &grid, &SolveOptions::default());
        for s in &vf.samples {
            let expect = -(4.0 * s.eps * s.eps - 4.0 * s.eps + 2.0).sqrt();
            let got = s.psi.expect("solved");
            assert!((got - expect).abs() < 1e-6, "ψ({}) = {got}, expected {expect}", s.eps);
        }
        assert!(vf.concave_within(1e-7));
    }
}
