//! Argument-principle count of characteristic roots in a right half-disc.
//!
//! The contour encloses `{Re s ≥ −σ₀, |s| ≤ Ω}` where `Ω` bounds every root in
//! that half-plane, so a zero winding number of `det Δ` certifies that no root
//! has `Re s ≥ −σ₀`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use nalgebra::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{chain_location, char_matrix, root_bound, ChainLocation, FreqError};
use crate::linalg::{det_c, C64};
use crate::model::DelaySystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Stable,
    Unstable,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Stable => "stable",
            Verdict::Unstable => "unstable",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContourConfig {
    /// Left shift of the imaginary-axis segment.
    pub sigma0: f64,
    /// Relative enlargement of the root bound.
    pub slack: f64,
    /// `|det Δ|` below `separation · (1 + R)^n` makes the verdict inconclusive.
    pub separation: f64,
    pub arc_samples: usize,
    pub line_samples: usize,
    /// Initial samples per `2π/h_max` period along the line.
    pub samples_per_period: usize,
    pub max_depth: u32,
}

impl Default for ContourConfig {
    fn default() -> Self {
        Self {
            sigma0: 1e-6,
            slack: 0.1,
            separation: 1e-10,
            arc_samples: 256,
            line_samples: 512,
            samples_per_period: 16,
            max_depth: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub verdict: Verdict,
    /// Root bound `Ω` on `Re s ≥ −σ₀`.
    pub root_bound: f64,
    /// Half-disc radius around `−σ₀`.
    pub radius: f64,
    pub sigma0: f64,
    /// Smallest parameter step used after refinement, in units of `|s|`.
    pub min_step: f64,
    pub winding_number: i64,
    pub min_abs_det: f64,
    pub threshold: f64,
    pub evaluations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chains: Option<ChainLocation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

pub fn certify_stability(sys: &DelaySystem) -> Result<StabilityCertificate, FreqError> {
    certify_stability_with(sys, &ContourConfig::default())
}

struct Piece {
    phase: f64,
    min_det: f64,
    evals: usize,
    min_step: f64,
    exhausted: bool,
}

pub fn certify_stability_with(sys: &DelaySystem, cfg: &ContourConfig) -> Result<StabilityCertificate, FreqError> {
    let h_sum = sys.neutral_norm_sum();
    if sys.is_neutral() && h_sum >= 1.0 {
        return Err(FreqError::HypothesisH(h_sum));
    }
    let chains = if sys.is_neutral() { chain_location(sys).ok() } else { None };
    let sigma0 = cfg.sigma0;
    let omega = root_bound(sys, sigma0)?;
    let radius = omega * (1.0 + cfg.slack) + sigma0 + 1e-3;
    let threshold = cfg.separation * (1.0 + radius).powi(sys.n as i32);

    let hmax = sys.max_delay();
    let arc_n = cfg.arc_samples.max((cfg.samples_per_period as f64 * radius * hmax).ceil() as usize);
    let periods = 2.0 * radius * hmax / (2.0 * PI);
    let line_n = cfg
        .line_samples
        .max((cfg.samples_per_period as f64 * periods).ceil() as usize);

    // parameter t ∈ [0, 1] on the arc, [1, 2] on the line
    let path = |t: f64| -> C64 {
        if t <= 1.0 {
            let th = -FRAC_PI_2 + PI * t;
            Complex::new(-sigma0 + radius * th.cos(), radius * th.sin())
        } else {
            Complex::new(-sigma0, radius * (1.0 - 2.0 * (t - 1.0)))
        }
    };
    let det = |t: f64| det_c(&char_matrix(sys, path(t)));

    let mut knots: Vec<f64> = (0..arc_n).map(|i| i as f64 / arc_n as f64).collect();
    knots.extend((0..=line_n).map(|i| 1.0 + i as f64 / line_n as f64));
    let values: Vec<C64> = knots.par_iter().map(|t| det(*t)).collect();

    let pieces: Vec<Piece> = (0..knots.len() - 1)
        .into_par_iter()
        .map(|i| {
            let mut p = Piece {
                phase: 0.0,
                min_det: values[i].norm().min(values[i + 1].norm()),
                evals: 0,
                min_step: f64::INFINITY,
                exhausted: false,
            };
            refine(&det, &path, knots[i], knots[i + 1], values[i], values[i + 1], 0, cfg.max_depth, &mut p);
            p
        })
        .collect();

    let mut phase = 0.0;
    let mut min_det = f64::INFINITY;
    let mut evaluations = knots.len();
    let mut min_step = f64::INFINITY;
    let mut exhausted = false;
    for p in &pieces {
        phase += p.phase;
        min_det = min_det.min(p.min_det);
        evaluations += p.evals;
        min_step = min_step.min(p.min_step);
        exhausted |= p.exhausted;
    }
    let turns = phase / (2.0 * PI);
    let winding = turns.round() as i64;

    let (verdict, reason) = if !min_det.is_finite() {
        (Verdict::Inconclusive, Some("non-finite determinant on the contour".to_string()))
    } else if min_det < threshold {
        (
            Verdict::Inconclusive,
            Some(format!("|det Δ| = {min_det:.3e} on the contour is below the separation threshold {threshold:.3e}")),
        )
    } else if exhausted || (turns - winding as f64).abs() > 0.05 {
        (Verdict::Inconclusive, Some("phase unwrapping did not converge".to_string()))
    } else if let Some(ch) = chains.as_ref().filter(|c| !c.chains_in_lhp()) {
        (
            Verdict::Inconclusive,
            Some(format!("neutral root chain at Re s = {:.3e}", ch.abscissa)),
        )
    } else if winding == 0 {
        (Verdict::Stable, None)
    } else if winding > 0 {
        (Verdict::Unstable, Some(format!("{winding} characteristic root(s) with Re s ≥ −{sigma0:e}")))
    } else {
        (Verdict::Inconclusive, Some(format!("negative winding number {winding}")))
    };

    Ok(StabilityCertificate {
        verdict,
        root_bound: omega,
        radius,
        sigma0,
        min_step,
        winding_number: winding,
        min_abs_det: min_det,
        threshold,
        evaluations,
        chains,
        reason,
    })
}

#[allow(clippy::too_many_arguments)]
fn refine<D, P>(det: &D, path: &P, ta: f64, tb: f64, da: C64, db: C64, depth: u32, max_depth: u32, acc: &mut Piece)
where
    D: Fn(f64) -> C64,
    P: Fn(f64) -> C64,
{
    let inc = (db / da).arg();
    if inc.abs() < FRAC_PI_2 || !inc.is_finite() {
        acc.phase += inc;
        acc.min_step = acc.min_step.min((path(tb) - path(ta)).norm());
        return;
    }
    if depth >= max_depth {
        acc.phase += inc;
        acc.exhausted = true;
        return;
    }
    let tm = 0.5 * (ta + tb);
    let dm = det(tm);
    acc.evals += 1;
    acc.min_det = acc.min_det.min(dm.norm());
    refine(det, path, ta, tm, da, dm, depth + 1, max_depth, acc);
    refine(det, path, tm, tb, dm, db, depth + 1, max_depth, acc);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;
    use crate::model::m1;

    fn gh(h: f64) -> DelaySystem {
        DelaySystem::scalar(0.0, 1.0).with_discrete(h, m1(-1.0))
    }

    #[test]
    fn delayed_feedback_boundary() {
        assert_eq!(certify_stability(&gh(1.0)).unwrap().verdict, Verdict::Stable);
        assert_eq!(certify_stability(&gh(1.55)).unwrap().verdict, Verdict::Stable);
        let c = certify_stability(&gh(1.6)).unwrap();
        assert_eq!(c.verdict, Verdict::Unstable);
        // a complex-conjugate pair crosses at π/2
        assert_eq!(c.winding_number, 2);
    }

    #[test]
    fn positive_feedback_is_unstable() {
        let c = certify_stability(&DelaySystem::scalar(1.0, 1.0)).unwrap();
        assert_eq!(c.verdict, Verdict::Unstable);
        assert_eq!(c.winding_number, 1);
    }

    #[test]
    fn root_on_axis_is_inconclusive() {
        // ẋ = 0: root exactly at s = 0
        let c = certify_stability(&DelaySystem::scalar(0.0, 1.0)).unwrap();
        assert_ne!(c.verdict, Verdict::Stable);
    }

    #[test]
    fn neutral_stable_and_violating() {
        let sys = DelaySystem::scalar(-1.0, 1.0).with_neutral(1.0, m1(0.5));
        let c = certify_stability(&sys).unwrap();
        assert_eq!(c.verdict, Verdict::Stable);
        assert!(c.chains.unwrap().chains_in_lhp());
        let bad = DelaySystem::scalar(-1.0, 1.0).with_neutral(1.0, m1(1.2));
        assert!(matches!(certify_stability(&bad), Err(FreqError::HypothesisH(_))));
    }

    #[test]
    fn multivariable_counts_each_root() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let c = certify_stability(&DelaySystem::new(a, Mat::identity(2, 1))).unwrap();
        assert_eq!(c.winding_number, 2);
    }
}
