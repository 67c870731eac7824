//! Numerical check that learning only the input side against a fixed
//! orthonormal label basis loses nothing.
//!
//! Given two orthonormal bases `A` and `B` of the same space, `P = A Bᵀ` is
//! orthogonal and maps one onto the other (`A = P B`). If labels are embedded
//! by the columns of `B` (learned) or `A` (fixed), the input map `x -> P x`
//! reproduces every inner product, and therefore every ranking.
//!
//! The checks here run on dense, exactly orthonormal bases. The sparse binary
//! label codes are only near-orthogonal and are not claimed to satisfy the
//! hypothesis exactly.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SolarError};

/// Default tolerance for all orthogonality checks in double precision.
pub const THEORY_TOL: f64 = 1e-10;

/// Columns form an orthonormal basis of `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis {
    columns: DMatrix<f64>,
}

impl OrthonormalBasis {
    /// Accepts `columns` if `‖AᵀA − I‖_max <= tol`.
    pub fn from_matrix(columns: DMatrix<f64>, tol: f64) -> Result<Self> {
        if !columns.is_square() || columns.nrows() == 0 {
            return Err(SolarError::config("basis must be a non-empty square matrix"));
        }
        let dev = gram_deviation(&columns);
        if dev > tol {
            return Err(SolarError::config(format!("columns are not orthonormal (deviation {dev:e})")));
        }
        Ok(Self { columns })
    }

    pub fn dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn negated(&self) -> Self {
        Self {
            columns: -&self.columns,
        }
    }
}

/// Orthogonal `P` with `A = P B`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeOfBasis {
    pub p: DMatrix<f64>,
}

impl ChangeOfBasis {
    /// `‖P Pᵀ − I‖_max`.
    pub fn orthogonality_error(&self) -> f64 {
        let n = self.p.nrows();
        max_abs(&(&self.p * self.p.transpose() - DMatrix::identity(n, n)))
    }

    /// `‖A − P B‖_max`.
    pub fn reconstruction_error(&self, a: &OrthonormalBasis, b: &OrthonormalBasis) -> f64 {
        max_abs(&(a.matrix() - &self.p * b.matrix()))
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

fn gram_deviation(m: &DMatrix<f64>) -> f64 {
    let n = m.ncols();
    max_abs(&(m.transpose() * m - DMatrix::identity(n, n)))
}

/// QR of a seeded Gaussian matrix, with `R`'s diagonal made positive so the
/// basis is unique for the seed.
pub fn random_orthonormal_basis(n: usize, seed: u64) -> Result<OrthonormalBasis> {
    if n == 0 {
        return Err(SolarError::config("basis dimension must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussian = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
    let qr = gaussian.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(OrthonormalBasis { columns: q })
}

/// `P = A Bᵀ`, so that `A = P B`.
pub fn change_of_basis(a: &OrthonormalBasis, b: &OrthonormalBasis) -> Result<ChangeOfBasis> {
    if a.dim() != b.dim() {
        return Err(SolarError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(ChangeOfBasis {
        p: a.matrix() * b.matrix().transpose(),
    })
}

/// Similarity used by [`verify_deferred_equivalence`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Similarity {
    InnerProduct,
    Cosine,
}

fn similarity(kind: Similarity, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    match kind {
        Similarity::InnerProduct => x.dot(y),
        Similarity::Cosine => x.dot(y) / (x.norm() * y.norm()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeferredCheck {
    /// Max over inputs and labels of `|S(x, fL_j) − S(P x, R_j)|`.
    pub max_deviation: f64,
    /// Inputs whose best label differs between the two embeddings.
    pub argmax_mismatches: usize,
    pub num_inputs: usize,
}

/// Builds `P` from `(R, fL)` and compares the two-sided scores
/// `S(x, fL_j)` with the one-sided scores `S(P x, R_j)`.
pub fn verify_deferred_equivalence(
    inputs: &[DVector<f64>],
    learned: &OrthonormalBasis,
    fixed: &OrthonormalBasis,
    kind: Similarity,
) -> Result<DeferredCheck> {
    let cob = change_of_basis(fixed, learned)?;
    let n = learned.dim();
    let mut check = DeferredCheck {
        max_deviation: 0.0,
        argmax_mismatches: 0,
        num_inputs: inputs.len(),
    };
    for x in inputs {
        if x.len() != n {
            return Err(SolarError::DimensionMismatch {
                expected: n,
                actual: x.len(),
            });
        }
        let mapped = &cob.p * x;
        let mut best_two_sided = (0usize, f64::NEG_INFINITY);
        let mut best_one_sided = (0usize, f64::NEG_INFINITY);
        for j in 0..n {
            let two = similarity(kind, x, &learned.matrix().column(j).into_owned());
            let one = similarity(kind, &mapped, &fixed.matrix().column(j).into_owned());
            check.max_deviation = check.max_deviation.max((two - one).abs());
            if two > best_two_sided.1 {
                best_two_sided = (j, two);
            }
            if one > best_one_sided.1 {
                best_one_sided = (j, one);
            }
        }
        if best_two_sided.0 != best_one_sided.0 {
            check.argmax_mismatches += 1;
        }
    }
    Ok(check)
}

/// `max |<P x, P y> − <x, y>|` over consecutive pairs of unit vectors.
pub fn inner_product_preservation(p: &DMatrix<f64>, vectors: &[DVector<f64>]) -> f64 {
    vectors
        .windows(2)
        .map(|w| {
            let (x, y) = (w[0].normalize(), w[1].normalize());
            ((p * &x).dot(&(p * &y)) - x.dot(&y)).abs()
        })
        .fold(0.0, f64::max)
}

/// Seeded standard-Gaussian vectors.
pub fn random_inputs(n: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryReport {
    pub dim: usize,
    pub orthogonality_error: f64,
    pub reconstruction_error: f64,
    pub inner_product_deviation: f64,
    pub cosine_deviation: f64,
    pub preservation_error: f64,
    pub argmax_mismatches: usize,
}

impl TheoryReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.orthogonality_error <= tol
            && self.reconstruction_error <= tol
            && self.inner_product_deviation <= tol
            && self.cosine_deviation <= tol
            && self.preservation_error <= tol
            && self.argmax_mismatches == 0
    }
}

/// Runs every check at dimension `n` with `num_inputs` random inputs.
pub fn run_theory_checks(n: usize, num_inputs: usize, seed: u64) -> Result<TheoryReport> {
    let learned = random_orthonormal_basis(n, seed)?;
    let fixed = random_orthonormal_basis(n, seed.wrapping_add(1))?;
    let cob = change_of_basis(&fixed, &learned)?;
    let inputs = random_inputs(n, num_inputs, seed.wrapping_add(2));
    let ip = verify_deferred_equivalence(&inputs, &learned, &fixed, Similarity::InnerProduct)?;
    let cos = verify_deferred_equivalence(&inputs, &learned, &fixed, Similarity::Cosine)?;
    Ok(TheoryReport {
        dim: n,
        orthogonality_error: cob.orthogonality_error(),
        reconstruction_error: cob.reconstruction_error(&fixed, &learned),
        inner_product_deviation: ip.max_deviation,
        cosine_deviation: cos.max_deviation,
        preservation_error: inner_product_preservation(&cob.p, &inputs),
        argmax_mismatches: ip.argmax_mismatches + cos.argmax_mismatches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_basis_is_unit() {
        let b = random_orthonormal_basis(1, 3).unwrap();
        assert_eq!(b.matrix()[(0, 0)].abs(), 1.0);
        assert!(random_orthonormal_basis(0, 3).is_err());
    }

    #[test]
    fn basis_columns_unit_norm_and_deterministic() {
        let b = random_orthonormal_basis(24, 8).unwrap();
        for col in b.matrix().column_iter() {
            assert!((col.norm() - 1.0).abs() < 1e-12);
        }
        assert_eq!(b, random_orthonormal_basis(24, 8).unwrap());
        assert_ne!(b, random_orthonormal_basis(24, 9).unwrap());
    }

    #[test]
    fn identity_and_negation_cases() {
        let a = random_orthonormal_basis(16, 1).unwrap();
        let same = change_of_basis(&a, &a).unwrap();
        assert!(max_abs(&(&same.p - DMatrix::identity(16, 16))) < 1e-12);
        let neg = change_of_basis(&a.negated(), &a).unwrap();
        assert!(max_abs(&(&neg.p + DMatrix::identity(16, 16))) < 1e-12);
    }

    #[test]
    fn change_of_basis_reconstructs() {
        let a = random_orthonormal_basis(32, 4).unwrap();
        let b = random_orthonormal_basis(32, 5).unwrap();
        let cob = change_of_basis(&a, &b).unwrap();
        assert!(cob.reconstruction_error(&a, &b) <= THEORY_TOL);
        assert!(cob.orthogonality_error() <= THEORY_TOL);
        let c = random_orthonormal_basis(8, 5).unwrap();
        assert!(change_of_basis(&a, &c).is_err());
    }

    #[test]
    fn same_basis_has_zero_deviation() {
        let r = random_orthonormal_basis(12, 2).unwrap();
        let inputs = random_inputs(12, 20, 1);
        let check = verify_deferred_equivalence(&inputs, &r, &r, Similarity::InnerProduct).unwrap();
        assert!(check.max_deviation < 1e-14);
        assert_eq!(check.argmax_mismatches, 0);
    }

    #[test]
    fn deferred_equivalence_at_32() {
        let report = run_theory_checks(32, 100, 77).unwrap();
        assert!(report.passes(THEORY_TOL), "{report:?}");
    }

    #[test]
    fn non_orthonormal_matrix_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(OrthonormalBasis::from_matrix(m, THEORY_TOL).is_err());
        assert!(OrthonormalBasis::from_matrix(DMatrix::identity(3, 3), THEORY_TOL).is_ok());
    }

    #[test]
    fn dimension_mismatch_in_inputs() {
        let r = random_orthonormal_basis(4, 2).unwrap();
        let inputs = random_inputs(5, 1, 0);
        assert!(verify_deferred_equivalence(&inputs, &r, &r, Similarity::Cosine).is_err());
    }
}
