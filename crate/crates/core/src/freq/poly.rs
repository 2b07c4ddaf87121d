//! Scalar polynomial roots through companion-matrix eigenvalues, and
//! determinants of matrix polynomials by interpolation on the unit circle.

use nalgebra::Complex;

use crate::linalg::{det_c, CMat, Mat, C64};

/// Polynomial value at `z`; coefficients in ascending powers.
pub fn eval(coeffs: &[f64], z: C64) -> C64 {
    coeffs
        .iter()
        .rev()
        .fold(Complex::new(0.0, 0.0), |acc, c| acc * z + c)
}

/// Drops leading (highest-power) coefficients below `rel_tol * max|c|`.
pub fn trim(coeffs: &[f64], rel_tol: f64) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let mut v = coeffs.to_vec();
    while v.len() > 1 && v.last().is_some_and(|c| c.abs() <= rel_tol * scale) {
        v.pop();
    }
    v
}

/// All complex roots of `Σ c_k z^k`, each polished by a few Newton steps.
pub fn roots(coeffs: &[f64]) -> Vec<C64> {
    let c = trim(coeffs, 0.0);
    let deg = c.len().saturating_sub(1);
    if deg == 0 {
        return Vec::new();
    }
    let zeros_at_origin = c.iter().take_while(|v| **v == 0.0).count();
    let reduced = &c[zeros_at_origin..];
    let mut out = vec![Complex::new(0.0, 0.0); zeros_at_origin];
    let d = reduced.len() - 1;
    if d == 0 {
        return out;
    }
    let lead = reduced[d];
    // companion matrix of the monic polynomial
    let mut comp = Mat::zeros(d, d);
    for i in 1..d {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..d {
        comp[(i, d - 1)] = -reduced[i] / lead;
    }
    let eig = comp.complex_eigenvalues();
    let deriv: Vec<f64> = reduced
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, v)| k as f64 * v)
        .collect();
    for mut z in eig.iter().copied() {
        for _ in 0..3 {
            let f = eval(reduced, z);
            let df = eval(&deriv, z);
            if df.norm() == 0.0 {
                break;
            }
            let step = f / df;
            let cand = z - step;
            if eval(reduced, cand).norm() < f.norm() {
                z = cand;
            } else {
                break;
            }
        }
        out.push(z);
    }
    out
}

/// Real roots of `Σ c_k x^k` lying in `[lo, hi]`.
pub fn real_roots_in(coeffs: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    if coeffs.iter().all(|c| *c == 0.0) {
        return Vec::new();
    }
    roots(coeffs)
        .into_iter()
        .filter(|z| z.im.abs() <= 1e-9 * (1.0 + z.re.abs()))
        .map(|z| z.re)
        .filter(|x| *x >= lo && *x <= hi)
        .collect()
}

/// Coefficients (ascending) of the scalar polynomial `det(Σ_k M_k z^k)`.
///
/// The determinant has degree at most `n · (len − 1)`; it is sampled at that
/// many plus one roots of unity and recovered by an inverse DFT.
pub fn det_matrix_poly(mats: &[Mat]) -> Vec<f64> {
    let n = mats[0].nrows();
    let deg = n * (mats.len() - 1);
    let m = deg + 1;
    let samples: Vec<C64> = (0..m)
        .map(|j| {
            let z = Complex::from_polar(1.0, 2.0 * std::f64::consts::PI * j as f64 / m as f64);
            let mut acc = CMat::zeros(n, n);
            let mut zk = Complex::new(1.0, 0.0);
            for mk in mats {
                acc += mk.map(|v| Complex::new(v, 0.0)) * zk;
                zk *= z;
            }
            det_c(&acc)
        })
        .collect();
    let coeffs: Vec<C64> = (0..m)
        .map(|k| {
            let mut s = Complex::new(0.0, 0.0);
            for (j, v) in samples.iter().enumerate() {
                let w = Complex::from_polar(1.0, -2.0 * std::f64::consts::PI * (j * k) as f64 / m as f64);
                s += v * w;
            }
            s / m as f64
        })
        .collect();
    let scale = coeffs.iter().fold(0.0f64, |a, c| a.max(c.norm()));
    coeffs
        .iter()
        .map(|c| if c.re.abs() <= 1e-14 * scale { 0.0 } else { c.re })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_roots() {
        // (z − 1)(z + 2) = z² + z − 2
        let mut r: Vec<f64> = roots(&[-2.0, 1.0, 1.0]).iter().map(|z| z.re).collect();
        r.sort_by(f64::total_cmp);
        assert!((r[0] + 2.0).abs() < 1e-13 && (r[1] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn roots_with_zero_at_origin() {
        let r = roots(&[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(r.len(), 3);
        assert_eq!(r.iter().filter(|z| z.norm() == 0.0).count(), 2);
    }

    #[test]
    fn real_roots_filter() {
        // (x − 0.5)(x² + 1)
        let c = [-0.5, 1.0, -0.5, 1.0];
        let r = real_roots_in(&c, 0.0, 1.0);
        assert_eq!(r.len(), 1);
        assert!((r[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn matrix_poly_determinant() {
        // det(I + diag(0.3, 0.6) z) = 1 + 0.9 z + 0.18 z²
        let i = Mat::identity(2, 2);
        let a = Mat::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.6]);
        let c = det_matrix_poly(&[i, a]);
        assert_eq!(c.len(), 3);
        assert!((c[0] - 1.0).abs() < 1e-14);
        assert!((c[1] - 0.9).abs() < 1e-14);
        assert!((c[2] - 0.18).abs() < 1e-14);
    }
}
