//! Small dense linear-algebra helpers shared by the frequency and time-domain engines.

use nalgebra::{Complex, DMatrix};

pub type Mat = DMatrix<f64>;
pub type CMat = DMatrix<Complex<f64>>;
pub type C64 = Complex<f64>;

/// Largest singular value of a real matrix.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    m.clone().singular_values().max()
}

/// Largest singular value of a complex matrix.
pub fn spectral_norm_c(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].norm();
    }
    m.clone().singular_values().max()
}

pub fn to_complex(m: &Mat) -> CMat {
    m.map(|v| Complex::new(v, 0.0))
}

pub fn is_zero(m: &Mat) -> bool {
    m.iter().all(|v| *v == 0.0)
}

/// Solves `a x = b`, reporting failure when `a` is numerically singular.
///
/// `a` is treated as singular when its smallest LU pivot falls below
/// `rel_tol * scale`, where `scale` is the caller's magnitude reference for
/// the entries of `a`.
pub fn solve_c(a: &CMat, b: &CMat, rel_tol: f64, scale: f64) -> Option<CMat> {
    let n = a.nrows();
    let threshold = rel_tol * scale.max(f64::MIN_POSITIVE);
    if n == 1 {
        let d = a[(0, 0)];
        if d.norm() <= threshold {
            return None;
        }
        return Some(b.map(|v| v / d));
    }
    let lu = a.clone().lu();
    let u = lu.u();
    let min_pivot = (0..n).map(|i| u[(i, i)].norm()).fold(f64::INFINITY, f64::min);
    if min_pivot <= threshold {
        return None;
    }
    lu.solve(b)
}

pub fn det_c(a: &CMat) -> C64 {
    if a.nrows() == 1 {
        return a[(0, 0)];
    }
    a.clone().lu().determinant()
}
