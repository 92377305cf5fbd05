//! Thin helpers over nalgebra for the dense complex algebra used everywhere else.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[inline]
pub fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Largest entry magnitude.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn max_abs_vec(v: &CVector) -> f64 {
    v.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// `max |A - A^H|`.
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Eigenvalues of a general complex matrix via the complex Schur form.
pub fn eigenvalues(m: &CMatrix) -> Vec<Complex64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let schur = m.clone().schur();
    match schur.eigenvalues() {
        Some(ev) => ev.iter().copied().collect(),
        // complex Schur forms are always triangular; keep the diagonal regardless
        None => {
            let (_, t) = schur.unpack();
            t.diagonal().iter().copied().collect()
        }
    }
}

/// Eigenvalue nearest to `target`, with its distance.
pub fn nearest_eigenvalue(eigs: &[Complex64], target: Complex64) -> Option<(Complex64, f64)> {
    eigs.iter()
        .map(|&l| (l, (l - target).norm()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Right singular vector belonging to the smallest singular value, and that value.
pub fn null_vector(m: &CMatrix) -> (CVector, f64) {
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let (idx, sigma) = svd
        .singular_values
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty matrix");
    let v = v_t.row(idx).transpose().map(|z| z.conj());
    (v, sigma)
}

/// Dense matrix exponential (nalgebra's Padé scaling-and-squaring).
pub fn expm(m: &CMatrix) -> CMatrix {
    m.exp()
}

/// Solve `a x = b`, returning `None` when `a` is numerically singular.
pub fn solve(a: &CMatrix, b: &CMatrix) -> Option<CMatrix> {
    a.clone().lu().solve(b)
}

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(re)
}
