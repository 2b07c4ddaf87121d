//! Supremum of a nonnegative function of frequency over `[0, ω_max]`.
//!
//! Grid: `ω = 0`, a log grid from 1e-4 to `ω_max`, and a uniform grid whose
//! step resolves the `e^{−iωh}` ripple of the largest delay. Local maxima are
//! refined by golden-section search and intervals whose bound could exceed
//! the maximum are bisected; the reported error bounds what the grid
//! could have missed, using twice the largest neighbouring slope as a local
//! Lipschitz constant.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub omega_max: f64,
    pub omega_min_log: f64,
    pub points_per_decade: usize,
    pub uniform_step: f64,
    /// Number of local maxima refined by golden-section search.
    pub refine_peaks: usize,
}

impl SweepGrid {
    /// Grid for a system whose largest delay is `max_delay`; `density` > 0
    /// multiplies the point counts (1 when zero).
    pub fn new(omega_max: f64, max_delay: f64, density: f64) -> Self {
        let density = if density > 0.0 { density } else { 1.0 };
        let ripple = if max_delay > 0.0 {
            std::f64::consts::PI / (8.0 * max_delay)
        } else {
            f64::INFINITY
        };
        let uniform_step = ripple.min(omega_max / 2000.0) / density;
        Self {
            omega_max,
            omega_min_log: 1e-4,
            points_per_decade: (60.0 * density).ceil() as usize,
            uniform_step,
            refine_peaks: 32,
        }
    }

    pub fn points(&self) -> Vec<f64> {
        let mut pts = vec![0.0];
        let lo = self.omega_min_log.log10();
        let hi = self.omega_max.log10();
        if hi > lo {
            let n = ((hi - lo) * self.points_per_decade as f64).ceil() as usize;
            for i in 0..=n {
                pts.push(10f64.powf(lo + (hi - lo) * i as f64 / n as f64));
            }
        }
        let m = (self.omega_max / self.uniform_step).ceil() as usize;
        for i in 1..=m {
            pts.push((i as f64 * self.uniform_step).min(self.omega_max));
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * b.abs().max(1e-300));
        pts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub value: f64,
    pub argmax: f64,
    pub error: f64,
    pub evaluations: usize,
    #[serde(skip)]
    pub samples: Vec<(f64, f64)>,
}

/// Maximizes `f` over the grid; `f` must be finite on `[0, ω_max]`.
pub fn sup_on_axis<F>(f: F, grid: &SweepGrid) -> SweepResult
where
    F: Fn(f64) -> f64 + Sync,
{
    let pts = grid.points();
    let vals: Vec<f64> = pts.par_iter().map(|w| f(*w)).collect();
    let mut samples: Vec<(f64, f64)> = pts.into_iter().zip(vals).collect();
    let gmax = samples.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);

    let mut peaks: Vec<usize> = (0..samples.len())
        .filter(|&i| {
            let left = i == 0 || samples[i].1 >= samples[i - 1].1;
            let right = i + 1 == samples.len() || samples[i].1 >= samples[i + 1].1;
            left && right && samples[i].1 >= 0.5 * gmax
        })
        .collect();
    peaks.sort_by(|a, b| samples[*b].1.total_cmp(&samples[*a].1).then(a.cmp(b)));
    peaks.truncate(grid.refine_peaks);

    let refined: Vec<Vec<(f64, f64)>> = peaks
        .par_iter()
        .map(|&i| {
            let a = if i == 0 { samples[0].0 } else { samples[i - 1].0 };
            let b = if i + 1 == samples.len() { samples[i].0 } else { samples[i + 1].0 };
            golden_max(&f, a, b)
        })
        .collect();
    let mut evaluations = samples.len();
    for r in refined {
        evaluations += r.len();
        samples.extend(r);
    }
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    samples.dedup_by(|a, b| a.0 == b.0);

    let (mut argmax, mut value) = best(&samples);
    // bisect every interval whose Lipschitz bound could still exceed the maximum
    for _ in 0..REFINE_ROUNDS {
        let bounds = interval_bounds(&samples);
        let tol = value.abs() * 1e-6 + 1e-12;
        let mids: Vec<f64> = samples
            .windows(2)
            .zip(&bounds)
            .filter(|(p, b)| **b > value + tol && p[1].0 - p[0].0 > 1e-12 * (1.0 + p[0].0))
            .map(|(p, _)| 0.5 * (p[0].0 + p[1].0))
            .collect();
        if mids.is_empty() || evaluations + mids.len() > REFINE_BUDGET {
            break;
        }
        evaluations += mids.len();
        let new: Vec<(f64, f64)> = mids.par_iter().map(|w| (*w, f(*w))).collect();
        samples.extend(new);
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        (argmax, value) = best(&samples);
    }
    let error = interval_bounds(&samples)
        .into_iter()
        .fold(0.0f64, |e, b| e.max(b - value));

    SweepResult {
        value,
        argmax,
        error: error.max(0.0),
        evaluations,
        samples,
    }
}

const REFINE_ROUNDS: usize = 24;
const REFINE_BUDGET: usize = 400_000;

fn best(samples: &[(f64, f64)]) -> (f64, f64) {
    let (mut argmax, mut value) = (0.0, f64::NEG_INFINITY);
    for (w, v) in samples {
        if *v > value {
            value = *v;
            argmax = *w;
        }
    }
    (argmax, value)
}

/// Upper bound of `f` on each grid interval, with twice the largest
/// neighbouring slope as Lipschitz constant.
fn interval_bounds(samples: &[(f64, f64)]) -> Vec<f64> {
    let slopes: Vec<f64> = samples
        .windows(2)
        .map(|p| {
            let dw = p[1].0 - p[0].0;
            if dw > 0.0 {
                (p[1].1 - p[0].1).abs() / dw
            } else {
                0.0
            }
        })
        .collect();
    samples
        .windows(2)
        .enumerate()
        .map(|(k, p)| {
            let dw = p[1].0 - p[0].0;
            let lo = k.saturating_sub(1);
            let hi = (k + 1).min(slopes.len() - 1);
            let lip = 2.0 * slopes[lo..=hi].iter().fold(0.0f64, |m, s| m.max(*s));
            0.5 * (p[0].1 + p[1].1) + 0.5 * lip * dw
        })
        .collect()
}

fn golden_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64) -> Vec<(f64, f64)> {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut out = Vec::new();
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    out.push((c, fc));
    out.push((d, fd));
    for _ in 0..80 {
        if (b - a) <= 1e-12 * (1.0 + a.abs()) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
            out.push((c, fc));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
            out.push((d, fd));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_resonance_peak() {
        // |1/(s² + 0.1 s + 1)| peaks near ω = 1 at ≈ 1/(0.1·sqrt(1 − 0.0025))
        let f = |w: f64| 1.0 / ((1.0 - w * w).powi(2) + (0.1 * w).powi(2)).sqrt();
        let r = sup_on_axis(f, &SweepGrid::new(100.0, 0.0, 1.0));
        let exact = 1.0 / (0.1 * (1.0f64 - 0.0025).sqrt());
        assert!((r.value - exact).abs() < 1e-9, "{} vs {exact}", r.value);
        assert!(r.value + r.error >= exact - 1e-12);
    }

    #[test]
    fn maximum_at_zero() {
        let f = |w: f64| 1.0 / (1.0 + w * w).sqrt();
        let r = sup_on_axis(f, &SweepGrid::new(10.0, 0.0, 1.0));
        assert_eq!(r.argmax, 0.0);
        assert_eq!(r.value, 1.0);
    }
}
