//! Small dense linear-algebra helpers shared across the crate.

use nalgebra::{DMatrix, DVector};

/// Row-equilibrated LU factorization with iterative refinement on solves.
/// Keeps partial pivoting honest on matrices mixing O(1) and huge rows.
pub struct EquilibratedLu {
    mat: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    row_scale: Vec<f64>,
}

impl EquilibratedLu {
    pub fn new(mat: &DMatrix<f64>) -> Option<Self> {
        let n = mat.nrows();
        if n != mat.ncols() {
            return None;
        }
        let mut scaled = mat.clone();
        let mut row_scale = vec![1.0; n];
        for i in 0..n {
            let mx = (0..n).map(|j| scaled[(i, j)].abs()).fold(0.0, f64::max);
            if mx > 0.0 {
                row_scale[i] = 1.0 / mx;
            }
        }
        for i in 0..n {
            for j in 0..n {
                scaled[(i, j)] *= row_scale[i];
            }
        }
        let lu = scaled.lu();
        Some(EquilibratedLu { mat: mat.clone(), lu, row_scale })
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let n = self.row_scale.len();
        if rhs.len() != n {
            return None;
        }
        let mut rs = rhs.clone();
        for i in 0..n {
            rs[i] *= self.row_scale[i];
        }
        let mut sol = self.lu.solve(&rs)?;
        let mut resid = rhs - &self.mat * &sol;
        for i in 0..n {
            resid[i] *= self.row_scale[i];
        }
        if let Some(corr) = self.lu.solve(&resid) {
            sol += corr;
        }
        if sol.iter().all(|v| v.is_finite()) {
            Some(sol)
        } else {
            None
        }
    }
}

/// One-shot equilibrated solve.
pub fn solve_equilibrated(mat: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    EquilibratedLu::new(mat)?.solve(rhs)
}

/// Smallest singular value of a dense matrix.
pub fn sigma_min(mat: &DMatrix<f64>) -> f64 {
    let svals = mat.clone().singular_values();
    svals.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Minimum-norm least-squares solution of `A x = b` via SVD.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    a.clone()
        .svd(true, true)
        .solve(b, 1e-13)
        .unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// Orthonormal basis of the null space of `a` (as matrix columns).
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    let svd = a.clone().svd(false, true);
    let vt = svd.v_t.expect("svd with v_t");
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&sv| sv > 1e-12 * smax.max(1.0))
        .count();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for k in rank..vt.nrows() {
        cols.push(vt.row(k).transpose());
    }
    // The thin SVD only carries min(m, n) right singular vectors; complete
    // the basis against the row space by Gram-Schmidt over canonical vectors.
    if vt.nrows() < n {
        let mut against: Vec<DVector<f64>> =
            (0..vt.nrows()).map(|k| vt.row(k).transpose()).collect();
        against.extend(cols.iter().cloned());
        let mut idx = 0;
        while against.len() < n && idx < n {
            let mut cand = DVector::zeros(n);
            cand[idx] = 1.0;
            for b in &against {
                let d = cand.dot(b);
                cand -= d * b;
            }
            let nrm = cand.norm();
            if nrm > 1e-8 {
                cand /= nrm;
                cols.push(cand.clone());
                against.push(cand);
            }
            idx += 1;
        }
    }
    let mut basis = DMatrix::zeros(n, cols.len());
    for (k, c) in cols.iter().enumerate() {
        basis.set_column(k, c);
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn equilibrated_solve_mixed_scales() {
        let mat = DMatrix::from_row_slice(2, 2, &[1e8, 3.0, 1.0, 1e-8]);
        let x_true = DVector::from_row_slice(&[2.0, -3.0]);
        let rhs = &mat * &x_true;
        let sol = solve_equilibrated(&mat, &rhs).unwrap();
        assert_abs_diff_eq!(sol.as_slice(), x_true.as_slice(), epsilon = 1e-6);
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let ns = null_space(&a);
        assert_eq!(ns.ncols(), 2);
        let prod = &a * &ns;
        assert!(prod.iter().all(|v| v.abs() < 1e-12));
        let gram = ns.transpose() * &ns;
        assert_abs_diff_eq!(
            gram.as_slice(),
            DMatrix::identity(2, 2).as_slice(),
            epsilon = 1e-12
        );
    }
}
