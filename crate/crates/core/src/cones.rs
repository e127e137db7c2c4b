//! Jordan-algebraic primitives for Cartesian products of second-order cones.
//!
//! A block `x = (x1, x2, ..., xn)` belongs to the second-order cone `L^n_+`
//! when `x1 >= ||x[2..n]||`. The arrow matrix
//!
//! ```txt
//! L(x) = [ x1   x̄ᵀ  ]        x̄ = x[2..n]
//!        [ x̄   x1·I ]
//! ```
//!
//! realizes the Jordan product `x ∘ s = L(x) s`. Its eigenvalues are
//! `x1 ± ||x̄||` (multiplicity 1 each) and `x1` (multiplicity n - 2), which
//! makes spectral decompositions cheap and exact. One-dimensional blocks are
//! half-lines `x1 >= 0` and are supported throughout.

use nalgebra::{DMatrix, DVector};

/// Block layout of a Cartesian product of second-order cones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConeStructure {
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl ConeStructure {
    /// Build a structure from per-block dimensions. Every block must have
    /// dimension at least 1.
    pub fn new(dims: Vec<usize>) -> Self {
        assert!(!dims.is_empty(), "cone product needs at least one block");
        assert!(dims.iter().all(|&n| n >= 1), "block dimensions must be >= 1");
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        let mut acc = 0;
        for &n in &dims {
            offsets.push(acc);
            acc += n;
        }
        offsets.push(acc);
        ConeStructure { dims, offsets }
    }

    /// Number of cone blocks `p`.
    pub fn block_count(&self) -> usize {
        self.dims.len()
    }

    /// Total dimension `n̄ = Σ nᵢ`.
    pub fn total_dim(&self) -> usize {
        self.offsets[self.dims.len()]
    }

    /// Dimension of block `i`.
    pub fn block_dim(&self, i: usize) -> usize {
        self.dims[i]
    }

    /// Per-block dimensions.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Half-open index range of block `i` inside a flat vector.
    pub fn block_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// The Jordan identity `e = ((1,0,..,0); ...; (1,0,..,0))`.
    pub fn identity(&self) -> ConeVector {
        let mut v = ConeVector::zeros(self.clone());
        for i in 0..self.block_count() {
            v.data[self.offsets[i]] = 1.0;
        }
        v
    }

    /// Rank of the Jordan algebra: 2 per block of dimension >= 2, 1 per
    /// half-line block. Normalizes the barrier parameter in the solver.
    pub fn jordan_rank(&self) -> usize {
        self.dims.iter().map(|&n| if n >= 2 { 2 } else { 1 }).sum()
    }
}

/// Block-structured vector in the cone product (used for x, s, z, u).
#[derive(Debug, Clone, PartialEq)]
pub struct ConeVector {
    structure: ConeStructure,
    data: DVector<f64>,
}

impl ConeVector {
    pub fn zeros(structure: ConeStructure) -> Self {
        let n = structure.total_dim();
        ConeVector { structure, data: DVector::zeros(n) }
    }

    /// Wrap a flat vector; its length must match the structure.
    pub fn from_flat(structure: ConeStructure, data: DVector<f64>) -> Self {
        assert_eq!(
            data.len(),
            structure.total_dim(),
            "flat vector length does not match cone structure"
        );
        ConeVector { structure, data }
    }

    pub fn from_slice(structure: ConeStructure, data: &[f64]) -> Self {
        Self::from_flat(structure, DVector::from_row_slice(data))
    }

    pub fn structure(&self) -> &ConeStructure {
        &self.structure
    }

    pub fn flat(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut DVector<f64> {
        &mut self.data
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.data.as_slice()[self.structure.block_range(i)]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        let range = self.structure.block_range(i);
        &mut self.data.as_mut_slice()[range]
    }

    /// Blockwise membership report at tolerance `tol`.
    pub fn classify_blocks(&self, tol: f64) -> Vec<BlockClass> {
        (0..self.structure.block_count())
            .map(|i| classify_block(self.block(i), tol))
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.data.norm()
    }
}

/// Euclidean norm of the tail `x[1..]` of a block.
pub fn tail_norm(block: &[f64]) -> f64 {
    block[1..].iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Interior margin `x1 - ||x̄||`; positive inside the cone, zero on the
/// boundary, negative outside.
pub fn soc_margin(block: &[f64]) -> f64 {
    block[0] - tail_norm(block)
}

/// Jordan determinant `x1² - ||x̄||²` (product of the two extreme
/// eigenvalues). For half-line blocks this degenerates to `x1²`.
pub fn soc_det(block: &[f64]) -> f64 {
    block[0] * block[0] - block[1..].iter().map(|v| v * v).sum::<f64>()
}

/// Arrow (arrowhead) matrix `L(x)` of a single block.
pub fn arrow_matrix(block: &[f64]) -> DMatrix<f64> {
    let n = block.len();
    let mut m = DMatrix::zeros(n, n);
    m[(0, 0)] = block[0];
    for j in 1..n {
        m[(0, j)] = block[j];
        m[(j, 0)] = block[j];
        m[(j, j)] = block[0];
    }
    m
}

/// Jordan product of two blocks written into `out`: `out = L(x) s`.
pub fn jordan_block_product(x: &[f64], s: &[f64], out: &mut [f64]) {
    let n = x.len();
    debug_assert_eq!(s.len(), n);
    debug_assert_eq!(out.len(), n);
    out[0] = x.iter().zip(s).map(|(a, b)| a * b).sum();
    for j in 1..n {
        out[j] = x[0] * s[j] + s[0] * x[j];
    }
}

/// Blockwise Jordan product `x ∘ s`. Panics if the structures differ.
pub fn jordan_product(x: &ConeVector, s: &ConeVector) -> ConeVector {
    assert_eq!(
        x.structure(),
        s.structure(),
        "jordan product requires matching cone structures"
    );
    let mut out = ConeVector::zeros(x.structure().clone());
    for i in 0..x.structure().block_count() {
        jordan_block_product(x.block(i), s.block(i), out.block_mut(i));
    }
    out
}

/// Apply the reflection `Rⁱ = diag(1, -1, ..., -1)` to a block.
pub fn reflection_apply(block: &[f64]) -> Vec<f64> {
    let mut out = block.to_vec();
    for v in &mut out[1..] {
        *v = -*v;
    }
    out
}

/// Membership classification of a block relative to its cone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockClass {
    /// Strictly inside: `x1 - ||x̄|| > tol`.
    Interior,
    /// On the boundary away from the origin.
    BoundaryNonzero,
    /// Numerically the zero vector.
    Zero,
    /// Violates the cone inequality.
    Outside,
}

/// Classify a block with the scale-aware tolerance `tol · max(1, ||x||)`.
///
/// The checks are ordered so the four classes are exhaustive and mutually
/// exclusive for any input.
pub fn classify_block(block: &[f64], tol: f64) -> BlockClass {
    debug_assert!(tol >= 0.0);
    let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
    let eff = tol * norm.max(1.0);
    let margin = soc_margin(block);
    if margin > eff {
        BlockClass::Interior
    } else if norm <= eff {
        BlockClass::Zero
    } else if margin.abs() <= eff && block[0] > eff {
        BlockClass::BoundaryNonzero
    } else {
        BlockClass::Outside
    }
}

/// Spectral frame of the arrow matrix of one block.
///
/// Eigenvalues are stored as `[x1 + ||x̄||, x1 - ||x̄||, x1, ..., x1]`
/// (the repeated eigenvalue fills positions `2..n`). Column `j` of
/// `eigenvectors` is the unit eigenvector of `eigenvalues[j]`.
#[derive(Debug, Clone)]
pub struct SpectralFrame {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralFrame {
    /// Rebuild `L(x)` from the frame: `Σ λⱼ qⱼ qⱼᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let n = self.eigenvalues.len();
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let q = self.eigenvectors.column(j);
            m += self.eigenvalues[j] * q * q.transpose();
        }
        m
    }

    /// Columns spanning the eigenspaces of eigenvalues `> tol` — the matrix
    /// `P̄` used by the primal nondegeneracy test.
    pub fn positive_basis(&self, tol: f64) -> DMatrix<f64> {
        let n = self.eigenvalues.len();
        let cols: Vec<usize> =
            (0..n).filter(|&j| self.eigenvalues[j] > tol).collect();
        let mut m = DMatrix::zeros(n, cols.len());
        for (k, &j) in cols.iter().enumerate() {
            m.set_column(k, &self.eigenvectors.column(j));
        }
        m
    }
}

/// Closed-form spectral decomposition of `L(x)` for a block.
///
/// The extreme eigenvectors are `(1; ±x̄/||x̄||)/√2`; the eigenspace of the
/// repeated eigenvalue `x1` is `{(0; w) : w ⊥ x̄}`, completed by
/// Gram-Schmidt over canonical basis vectors in index order so the output
/// is deterministic. When `||x̄|| = 0` the matrix is `x1·I` and the frame
/// is the canonical basis.
pub fn spectral_decomposition(block: &[f64]) -> SpectralFrame {
    let n = block.len();
    if n == 1 {
        return SpectralFrame {
            eigenvalues: vec![block[0]],
            eigenvectors: DMatrix::identity(1, 1),
        };
    }
    let x1 = block[0];
    let t = tail_norm(block);
    let mut eigenvalues = Vec::with_capacity(n);
    eigenvalues.push(x1 + t);
    eigenvalues.push(x1 - t);
    eigenvalues.extend(std::iter::repeat_n(x1, n - 2));

    let mut vecs = DMatrix::zeros(n, n);
    if t == 0.0 {
        vecs.fill_with_identity();
        return SpectralFrame { eigenvalues, eigenvectors: vecs };
    }

    let unit: Vec<f64> = block[1..].iter().map(|v| v / t).collect();
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    vecs[(0, 0)] = inv_sqrt2;
    vecs[(0, 1)] = inv_sqrt2;
    for j in 0..n - 1 {
        vecs[(j + 1, 0)] = inv_sqrt2 * unit[j];
        vecs[(j + 1, 1)] = -inv_sqrt2 * unit[j];
    }

    // Orthonormal basis of the complement of x̄ inside the tail space.
    let mut basis: Vec<Vec<f64>> = vec![unit.clone()];
    let mut col = 2;
    for k in 0..n - 1 {
        if col == n {
            break;
        }
        let mut cand = vec![0.0; n - 1];
        cand[k] = 1.0;
        for b in &basis {
            let dot: f64 = cand.iter().zip(b).map(|(a, c)| a * c).sum();
            for (c, bv) in cand.iter_mut().zip(b) {
                *c -= dot * bv;
            }
        }
        let nrm = cand.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nrm < 1e-12 {
            continue; // canonical vector already spanned
        }
        for c in &mut cand {
            *c /= nrm;
        }
        for j in 0..n - 1 {
            vecs[(j + 1, col)] = cand[j];
        }
        basis.push(cand);
        col += 1;
    }
    debug_assert_eq!(col, n, "eigenbasis completion fell short");

    SpectralFrame { eigenvalues, eigenvectors: vecs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn arrow_of_identity_block() {
        let m = arrow_matrix(&[1.0, 0.0, 0.0]);
        assert_eq!(m, DMatrix::identity(3, 3));
    }

    #[test]
    fn arrow_matches_definition() {
        let m = arrow_matrix(&[1.0, 0.0, 1.0]);
        let expect = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
        );
        assert_eq!(m, expect);
    }

    #[test]
    fn arrow_eigenvalues_from_dense_solver() {
        // Independent oracle: dense symmetric eigensolver on L((1,0,1)).
        let m = arrow_matrix(&[1.0, 0.0, 1.0]);
        let mut eig = m.symmetric_eigenvalues().as_slice().to_vec();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_abs_diff_eq!(eig[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig[2], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn arrow_scalar_block() {
        let m = arrow_matrix(&[5.0]);
        assert_eq!(m, DMatrix::from_element(1, 1, 5.0));
    }

    #[test]
    fn jordan_identity_element() {
        let st = ConeStructure::new(vec![3, 2]);
        let e = st.identity();
        let s = ConeVector::from_slice(st, &[0.3, -0.1, 2.0, 1.5, -0.5]);
        assert_eq!(jordan_product(&e, &s), s);
    }

    #[test]
    fn jordan_product_dense_oracle() {
        // L((2,1,0)) * (1,1,0) via explicit matrix-vector product.
        let st = ConeStructure::new(vec![3]);
        let x = ConeVector::from_slice(st.clone(), &[2.0, 1.0, 0.0]);
        let s = ConeVector::from_slice(st, &[1.0, 1.0, 0.0]);
        let got = jordan_product(&x, &s);
        let oracle = arrow_matrix(x.block(0)) * DVector::from_row_slice(s.block(0));
        assert_abs_diff_eq!(got.flat().as_slice(), oracle.as_slice(), epsilon = 1e-14);
        assert_abs_diff_eq!(got.flat()[0], 3.0);
        assert_abs_diff_eq!(got.flat()[1], 3.0);
        assert_abs_diff_eq!(got.flat()[2], 0.0);
    }

    #[test]
    fn jordan_product_complementary_pair_at_half() {
        // Optimal pair of the two-block analytic instance at ε = 1/2, γ = 1.
        let st = ConeStructure::new(vec![3, 3]);
        let x = ConeVector::from_slice(st.clone(), &[1.0, 0.0, 1.0, 2.0, 0.0, 2.0]);
        let s = ConeVector::from_slice(st, &[1.0, 0.0, -1.0, 0.0, 0.0, 0.0]);
        let prod = jordan_product(&x, &s);
        assert!(prod.norm() < 1e-15);
    }

    #[test]
    fn classification_cases() {
        assert_eq!(classify_block(&[1.0, 0.0, 0.0], 1e-8), BlockClass::Interior);
        assert_eq!(classify_block(&[1.0, 1.0, 0.0], 1e-8), BlockClass::BoundaryNonzero);
        assert_eq!(classify_block(&[1.0, 2.0, 0.0], 1e-8), BlockClass::Outside);
        assert_eq!(classify_block(&[0.0, 0.0, 0.0], 1e-8), BlockClass::Zero);
        // Half-line block: interior means strictly positive.
        assert_eq!(classify_block(&[0.5], 1e-8), BlockClass::Interior);
        assert_eq!(classify_block(&[-0.5], 1e-8), BlockClass::Outside);
    }

    #[test]
    fn reflection_basics() {
        assert_eq!(reflection_apply(&[1.0, 2.0, 3.0]), vec![1.0, -2.0, -3.0]);
        assert_eq!(reflection_apply(&[5.0]), vec![5.0]);
        let x = [1.0, 1.0, 0.0];
        let rx = reflection_apply(&x);
        let dot: f64 = x.iter().zip(&rx).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(dot, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn spectral_identity_block() {
        let f = spectral_decomposition(&[1.0, 0.0, 0.0]);
        assert_eq!(f.eigenvalues, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn spectral_positive_basis_on_boundary() {
        // Boundary block (1,0,1): eigenvalues {2, 0, 1}, two positive.
        let f = spectral_decomposition(&[1.0, 0.0, 1.0]);
        let dense = arrow_matrix(&[1.0, 0.0, 1.0]).symmetric_eigenvalues();
        let positive_count = dense.iter().filter(|&&l| l > 1e-10).count();
        assert_eq!(f.positive_basis(1e-10).ncols(), positive_count);
        assert_eq!(positive_count, 2);
    }

    #[test]
    fn spectral_zero_block() {
        let f = spectral_decomposition(&[0.0, 0.0, 0.0]);
        assert!(f.eigenvalues.iter().all(|&l| l == 0.0));
        assert_eq!(f.positive_basis(1e-10).ncols(), 0);
    }

    #[test]
    fn spectral_reconstructs_arrow() {
        let block = [1.3, -0.2, 0.75, 0.1];
        let f = spectral_decomposition(&block);
        let rebuilt = f.reconstruct();
        let direct = arrow_matrix(&block);
        assert_abs_diff_eq!(
            rebuilt.as_slice(),
            direct.as_slice(),
            epsilon = 1e-12
        );
        // Frame orthogonality.
        let qtq = f.eigenvectors.transpose() * &f.eigenvectors;
        assert_abs_diff_eq!(
            qtq.as_slice(),
            DMatrix::identity(4, 4).as_slice(),
            epsilon = 1e-12
        );
    }
}
