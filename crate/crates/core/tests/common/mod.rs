#![allow(dead_code)]

use delaymargin::linalg::{spectral_norm, Mat};
use delaymargin::DelaySystem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest eigenvalue of the symmetric part of `a`.
pub fn log_norm(a: &Mat) -> f64 {
    let s = (a + a.transpose()) * 0.5;
    s.symmetric_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Retarded system with `log_norm(A) + Σ‖A_j‖ < 0`, stable for every delay.
pub fn stable_retarded(seed: u64) -> DelaySystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=2);
    let c = rng.random_range(1.0..3.0);
    let a = Mat::identity(n, n) * -c + random_mat(&mut rng, n, n) * 0.3;
    let b = random_mat(&mut rng, n, 1) + Mat::from_element(n, 1, 0.5);
    let mut sys = DelaySystem::new(a.clone(), b);
    let budget = -log_norm(&a) * rng.random_range(0.2..0.7);
    let terms = rng.random_range(1..=2);
    let mut delays: Vec<f64> = (0..terms).map(|_| rng.random_range(0.2..2.0)).collect();
    delays.sort_by(f64::total_cmp);
    delays.dedup();
    for d in &delays {
        let m = random_mat(&mut rng, n, n);
        let share = budget / delays.len() as f64;
        sys = sys.with_discrete(*d, &m * (share / spectral_norm(&m)));
    }
    sys
}

/// Scalar `ẋ = a x + b u`.
pub fn scalar(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (rng.random_range(-3.0..-0.5), rng.random_range(0.5..2.0))
}
