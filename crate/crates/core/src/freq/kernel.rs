//! Laplace transform of a polynomial kernel truncated to `[0, D]`.

use nalgebra::Complex;

use crate::linalg::C64;
use crate::quad::gk15_panels;

/// Below this `|sD|` the power series is used.
const SERIES_RADIUS: f64 = 1.0;

/// `∫₀^D h(θ) e^{−sθ} dθ` for `h(θ) = Σ c_k θ^k`.
///
/// Three regimes, each accurate to about 1e-13 relative:
/// * `|sD| < 1`: power series in `sD`;
/// * `|sD| ≥ 2(d+1)`: closed form by repeated integration by parts, whose
///   forward recursion is stable once `|sD|` exceeds the monomial degree;
/// * otherwise: Gauss–Kronrod on panels with `|s|·width ≤ 1`.
pub fn kernel_transform(coeffs: &[f64], d: f64, s: C64) -> C64 {
    let z = s * d;
    let deg = coeffs.len().saturating_sub(1);
    let r = z.norm();
    if r < SERIES_RADIUS {
        series(coeffs, d, z)
    } else if r >= 2.0 * (deg as f64 + 1.0) {
        closed_form(coeffs, d, s)
    } else {
        let panels = r.ceil() as usize;
        gk15_panels(
            |theta| {
                let h: f64 = coeffs.iter().rev().fold(0.0, |acc, c| acc * theta + c);
                (-s * theta).exp() * h
            },
            0.0,
            d,
            panels,
        )
    }
}

/// `∫₀^D θ h(θ) e^{−sθ} dθ`, the kernel part of `dΔ/ds`.
pub fn kernel_moment_transform(coeffs: &[f64], d: f64, s: C64) -> C64 {
    let mut shifted = Vec::with_capacity(coeffs.len() + 1);
    shifted.push(0.0);
    shifted.extend_from_slice(coeffs);
    kernel_transform(&shifted, d, s)
}

// ∫₀^D θ^k e^{−sθ} dθ = D^{k+1} Σ_m (−z)^m / (m! (k+m+1))
fn series(coeffs: &[f64], d: f64, z: C64) -> C64 {
    let mut total = Complex::new(0.0, 0.0);
    let mut dk = d;
    for (k, c) in coeffs.iter().enumerate() {
        if *c != 0.0 {
            let mut term = Complex::new(1.0, 0.0);
            let mut acc = Complex::new(0.0, 0.0);
            for m in 0..60 {
                let contrib = term / (k + m + 1) as f64;
                acc += contrib;
                if contrib.norm() < 1e-18 * acc.norm() {
                    break;
                }
                term = term * (-z) / (m + 1) as f64;
            }
            total += acc * (c * dk);
        }
        dk *= d;
    }
    total
}

// I_0 = (1 − e^{−sD})/s,  I_k = (k I_{k−1} − D^k e^{−sD}) / s
fn closed_form(coeffs: &[f64], d: f64, s: C64) -> C64 {
    let e = (-s * d).exp();
    let mut ik = (Complex::new(1.0, 0.0) - e) / s;
    let mut total = ik * coeffs[0];
    let mut dk = 1.0;
    for (k, c) in coeffs.iter().enumerate().skip(1) {
        dk *= d;
        ik = (ik * k as f64 - e * dk) / s;
        total += ik * *c;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() <= tol * b.norm().max(1e-300)
    }

    #[test]
    fn constant_kernel_at_zero_and_one() {
        assert!(close(kernel_transform(&[1.0], 1.0, Complex::new(0.0, 0.0)), Complex::new(1.0, 0.0), 1e-15));
        let v = kernel_transform(&[1.0], 1.0, Complex::new(1.0, 0.0));
        assert!((v.re - (1.0 - (-1.0f64).exp())).abs() < 1e-14 && v.im.abs() < 1e-15);
    }

    #[test]
    fn linear_kernel_at_i() {
        // (1/s²)(1 − e^{−2s}(1 + 2s)) at s = i
        let s = Complex::new(0.0, 1.0);
        let want = (Complex::new(1.0, 0.0) - (-s * 2.0).exp() * (s * 2.0 + 1.0)) / (s * s);
        assert!(close(kernel_transform(&[0.0, 1.0], 2.0, s), want, 1e-13));
    }

    #[test]
    fn regimes_agree_at_boundaries() {
        let c = [0.3, -1.0, 0.5, 0.25, -0.125];
        for &r in &[0.999_999, 1.000_001, 9.999_999, 10.000_001] {
            for &ang in &[0.0, 0.7, 1.5707963, -2.0] {
                let s = Complex::from_polar(r / 1.5, ang);
                let a = kernel_transform(&c, 1.5, s);
                // dense panel quadrature as an independent reference
                let b: C64 = gk15_panels(
                    |t| (-s * t).exp() * c.iter().rev().fold(0.0, |acc, k| acc * t + k),
                    0.0,
                    1.5,
                    64,
                );
                assert!(close(a, b, 1e-12), "r={r} ang={ang}: {a} vs {b}");
            }
        }
    }
}
