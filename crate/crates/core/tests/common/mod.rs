//! Closed-form optimal solutions of the bundled instances, used as
//! independent oracles for the solver and the analysis pipeline.
//!
//! Not every integration-test binary touches every oracle.
#![allow(dead_code)]

use nalgebra::DVector;
use socopart::cones::ConeVector;
use socopart::fileio::bundled;
use socopart::{ParametricInstance, PrimalDualTriple};

pub fn instance(name: &str) -> ParametricInstance {
    bundled(name).expect("bundled instance")
}

fn triple(inst: &ParametricInstance, eps: f64, x: Vec<f64>, y: Vec<f64>, s: Vec<f64>) -> PrimalDualTriple {
    let st = inst.structure().clone();
    PrimalDualTriple {
        eps,
        x: ConeVector::from_slice(st.clone(), &x),
        y: DVector::from_vec(y),
        s: ConeVector::from_slice(st, &s),
    }
}

/// Unique maximally complementary solution of the p5 instance on (0, 1).
pub fn p5_solution(inst: &ParametricInstance, eps: f64) -> PrimalDualTriple {
    assert!(eps > 0.0 && eps < 1.0);
    let r = (eps * eps + (1.0 - eps) * (1.0 - eps)).sqrt();
    let x = vec![1.0, eps / r, (1.0 - eps) / r, (1.0 - eps) / r, eps / r - 1.0];
    let s = vec![r, -eps, eps - 1.0, 0.0, 0.0];
    let y = vec![-r, 0.0, 0.0];
    triple(inst, eps, x, y, s)
}

/// Unique maximally complementary solution of the p6 instance away from 1/2.
pub fn p6_solution(inst: &ParametricInstance, eps: f64) -> PrimalDualTriple {
    assert!((eps - 0.5).abs() > 1e-9);
    let r = (4.0 * eps * eps - 4.0 * eps + 2.0).sqrt();
    let q = (2.0 * eps - 1.0) / r;
    let x = vec![1.0, q, 1.0 / r, 2.0, q, 2.0 / r];
    let s = vec![r, 1.0 - 2.0 * eps, -1.0, 0.0, 0.0, 0.0];
    let y = vec![-r, 0.0, 0.0, 0.0];
    triple(inst, eps, x, y, s)
}

/// Strictly complementary solution of the p8 instance on (-1/2, 3/2);
/// unique away from 1/2.
pub fn p8_solution(inst: &ParametricInstance, eps: f64) -> PrimalDualTriple {
    assert!(eps > -0.5 && eps < 1.5);
    let e2 = eps * eps;
    let e3 = e2 * eps;
    let x = vec![
        4.0 * e3 - 6.0 * e2 + eps + 2.5,
        4.0 * e2 - 2.0 * eps - 2.0,
        -4.0 * e3 + 6.0 * e2 + eps - 1.5,
        -4.0 * e3 + 6.0 * e2 - eps + 1.5,
        6.0 * eps - 4.0 * e2,
        4.0 * e3 - 6.0 * e2 - eps + 1.5,
    ];
    let s = vec![
        0.5 * e2 - eps + 0.625,
        0.5 - 0.5 * eps,
        0.5 * e2 - eps + 0.375,
        0.5 * e2 + 0.125,
        -0.5 * eps,
        0.5 * e2 - 0.125,
    ];
    let y = vec![-(0.5 * e2 - eps + 0.625), -(0.5 * e2 - eps + 0.375)];
    triple(inst, eps, x, y, s)
}

/// Unique optimal solution of p14 (and p14mod) on the invariancy side;
/// for p14 the formulas hold on (0, 2) and at the transition point 0,
/// for p14mod on (-inf, 1).
pub fn p14_solution(inst: &ParametricInstance, eps: f64, modified: bool) -> PrimalDualTriple {
    if modified {
        assert!(eps < 1.0);
        let x = vec![1.0, 0.0, -1.0, 0.0, 0.0];
        let s = vec![1.0, 0.0, 1.0, 1.0 - eps, eps - 1.0];
        let y = vec![1.0 - eps, eps - 1.0];
        triple(inst, eps, x, y, s)
    } else {
        assert!((0.0..2.0).contains(&eps));
        let x = vec![1.0, 0.0, -1.0, 0.0, 0.0];
        let s = vec![1.0, 0.0, 1.0, 1.0, eps - 1.0];
        let y = vec![1.0 - eps, -1.0];
        triple(inst, eps, x, y, s)
    }
}

/// Infinity-norm distance between two flat vectors.
pub fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

/// Check a solved triple against an oracle triple in the infinity norm.
pub fn matches_oracle(got: &PrimalDualTriple, want: &PrimalDualTriple, tol: f64) -> Result<(), String> {
    let dx = inf_dist(got.x.flat().as_slice(), want.x.flat().as_slice());
    let ds = inf_dist(got.s.flat().as_slice(), want.s.flat().as_slice());
    if dx > tol || ds > tol {
        return Err(format!("x off by {dx:.2e}, s off by {ds:.2e} at eps = {}", want.eps));
    }
    Ok(())
}
