//! Randomized search for counterexamples to a margin certificate.
//!
//! Each trial draws one delay realization inside the scaled bands and one
//! input, simulates, and records the empirical gains. A divergent trajectory
//! at a certified scaling would contradict the certificate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{integrate, InputSignal, SimError, Waveform};
use crate::margins::MarginReport;
use crate::model::{
    delay_key, Controller, DelayRealization, DelaySystem, DelayTerm, PerturbationBounds, Trajectory,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FalsifyConfig {
    pub trials: usize,
    pub seed: u64,
    /// Radii scaling to test; defaults to `min(α*, 1)` from the report.
    pub scaling: Option<f64>,
    pub t_end: f64,
    /// Step; defaults to a twentieth of the smallest nominal delay.
    pub dt: Option<f64>,
}

impl Default for FalsifyConfig {
    fn default() -> Self {
        Self {
            trials: 64,
            seed: 0,
            scaling: None,
            t_end: 200.0,
            dt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub linf_gain: f64,
    pub l2_gain: f64,
    pub divergence: Option<f64>,
    pub realization: DelayRealization,
    pub input: InputSignal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsificationSummary {
    pub theorem: String,
    pub certified: bool,
    pub scaling: f64,
    pub trials: usize,
    pub dt: f64,
    pub t_end: f64,
    pub diverged: usize,
    pub max_linf_gain: f64,
    pub max_l2_gain: f64,
    /// Certified `L∞` gain bound, when the report carries one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linf_gain_bound: Option<f64>,
    pub bound_violations: usize,
    /// `"consistent"` or `"counterexample"`.
    pub verdict: String,
    /// Divergent or bound-violating trials.
    pub counterexamples: Vec<TrialOutcome>,
}

/// Samples delay realizations at the report's scaling and simulates.
///
/// With a controller the perturbed closed loop is simulated, the plant's
/// delays varying and the controller's fixed. Trial `i` uses seed `seed + i`.
pub fn falsify_margin(
    report: &MarginReport,
    sys: &DelaySystem,
    pert: &PerturbationBounds,
    ctrl: Option<&Controller>,
    cfg: &FalsifyConfig,
) -> Result<FalsificationSummary, SimError> {
    let alpha = cfg.scaling.unwrap_or_else(|| match report.admissible_scaling {
        Some(a) => a.0.min(1.0),
        None => 0.0,
    });
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(SimError::Input(format!("scaling {alpha} must be finite and nonnegative")));
    }
    let band = pert.scaled(alpha);
    let dt = match cfg.dt {
        Some(dt) => dt,
        None => default_step(sys, &band)?,
    };
    let outcomes: Vec<TrialOutcome> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let seed = cfg.seed.wrapping_add(trial as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let real = draw_realization(sys, &band, cfg.t_end, &mut rng);
            let input = draw_input(&mut rng);
            let ts = match ctrl {
                Some(k) => {
                    let (cl, cl_real) = perturbed_closed_loop(sys, k, &real)?;
                    integrate(&cl, &cl_real, &input, cfg.t_end, dt)?
                }
                None => integrate(sys, &real, &input, cfg.t_end, dt)?,
            };
            let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
            let (linf, l2) = match ts.divergence {
                Some(_) => (f64::INFINITY, f64::INFINITY),
                None => (ratio(ts.linf_x(), ts.linf_u()), ratio(ts.l2_x(), ts.l2_u())),
            };
            Ok(TrialOutcome {
                trial,
                seed,
                linf_gain: linf,
                l2_gain: l2,
                divergence: ts.divergence,
                realization: real,
                input,
            })
        })
        .collect::<Result<_, SimError>>()?;

    let bound = report.quantities.get("linf_gain_bound").copied();
    let violates = |o: &TrialOutcome| {
        o.divergence.is_some() || bound.is_some_and(|b| o.linf_gain > b * (1.0 + 1e-3))
    };
    let diverged = outcomes.iter().filter(|o| o.divergence.is_some()).count();
    let bound_violations = outcomes.iter().filter(|o| bound.is_some_and(|b| o.linf_gain > b * (1.0 + 1e-3))).count();
    let max_linf_gain = outcomes.iter().map(|o| o.linf_gain).fold(0.0, f64::max);
    let max_l2_gain = outcomes.iter().map(|o| o.l2_gain).fold(0.0, f64::max);
    let certified = report
        .admissible_scaling
        .map_or(report.certified, |a| alpha <= a.0);
    let counterexamples: Vec<TrialOutcome> = outcomes.into_iter().filter(|o| violates(o)).collect();
    let verdict = if certified && !counterexamples.is_empty() {
        "counterexample"
    } else {
        "consistent"
    };
    Ok(FalsificationSummary {
        theorem: report.theorem.clone(),
        certified,
        scaling: alpha,
        trials: cfg.trials,
        dt,
        t_end: cfg.t_end,
        diverged,
        max_linf_gain,
        max_l2_gain,
        linf_gain_bound: bound,
        bound_violations,
        verdict: verdict.into(),
        counterexamples,
    })
}

fn default_step(sys: &DelaySystem, band: &PerturbationBounds) -> Result<f64, SimError> {
    let mut dt = sys.min_positive_delay().map_or(0.01, |d| (d / 20.0).min(0.05));
    for (t, r) in sys.neutral.iter().zip(&band.eta) {
        let (lo, _) = band.band(t.delay, *r);
        if !(lo > 0.0) {
            return Err(SimError::Input(format!(
                "neutral delay band reaches {lo}; reduce the scaling"
            )));
        }
        dt = dt.min(0.5 * lo);
    }
    Ok(dt)
}

/// Sinusoid or piecewise-linear trajectory filling `[lo, hi]`.
fn draw_trajectory(lo: f64, hi: f64, t_end: f64, rng: &mut ChaCha8Rng) -> Trajectory {
    if !(hi > lo) {
        return Trajectory::Constant { value: lo };
    }
    if rng.random::<bool>() {
        let omega = (rng.random_range(0.05f64.ln()..10f64.ln())).exp();
        Trajectory::Sinusoid {
            center: 0.5 * (lo + hi),
            amplitude: 0.5 * (hi - lo),
            omega,
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        }
    } else {
        let mut times = vec![0.0];
        let mut values = vec![rng.random_range(lo..=hi)];
        let mut t = 0.0;
        while t < t_end {
            t += rng.random_range(0.1..3.0);
            times.push(t);
            values.push(if rng.random::<bool>() {
                // dwell at the band edges, where the worst case usually sits
                if rng.random::<bool>() {
                    lo
                } else {
                    hi
                }
            } else {
                rng.random_range(lo..=hi)
            });
        }
        Trajectory::PiecewiseLinear { times, values }
    }
}

fn draw_realization(sys: &DelaySystem, band: &PerturbationBounds, t_end: f64, rng: &mut ChaCha8Rng) -> DelayRealization {
    let group = |terms: &[DelayTerm], radii: &[f64], rng: &mut ChaCha8Rng| -> Vec<Trajectory> {
        terms
            .iter()
            .zip(radii)
            .map(|(t, r)| {
                let (lo, hi) = band.band(t.delay, *r);
                draw_trajectory(lo.max(0.0), hi, t_end, rng)
            })
            .collect()
    };
    let neutral = group(&sys.neutral, &band.eta, rng);
    let discrete = group(&sys.discrete, &band.mu, rng);
    let input = group(&sys.input_delays, &band.nu, rng);
    let distributed = sys.distributed.as_ref().map(|k| {
        let (lo, hi) = band.band(k.length, band.eps);
        draw_trajectory(lo.max(1e-9), hi, t_end, rng)
    });
    DelayRealization {
        neutral,
        discrete,
        distributed,
        input,
    }
}

fn draw_input(rng: &mut ChaCha8Rng) -> InputSignal {
    let seed = rng.random::<u64>();
    match rng.random_range(0..3) {
        0 => InputSignal::step(1.0),
        1 => Waveform::Sinusoid {
            amplitude: 1.0,
            omega: (rng.random_range(0.01f64.ln()..10f64.ln())).exp(),
            phase: 0.0,
        }
        .into(),
        _ => InputSignal::random_switching(1.0, rng.random_range(0.2..5.0), seed),
    }
}

fn shifted(tr: &Trajectory, by: f64) -> Trajectory {
    match tr {
        Trajectory::Constant { value } => Trajectory::Constant { value: value + by },
        Trajectory::Sinusoid {
            center,
            amplitude,
            omega,
            phase,
        } => Trajectory::Sinusoid {
            center: center + by,
            amplitude: *amplitude,
            omega: *omega,
            phase: *phase,
        },
        Trajectory::PiecewiseLinear { times, values } => Trajectory::PiecewiseLinear {
            times: times.clone(),
            values: values.iter().map(|v| v + by).collect(),
        },
    }
}

/// Closed loop under `u = 𝒦 ∗ x + r` with the plant's delays following `real`.
///
/// `B_k K_i` acts at `σ_k(t) + t_i`. Constant terms at equal delays are merged;
/// a varying term that collides with another is rejected.
pub fn perturbed_closed_loop(
    sys: &DelaySystem,
    ctrl: &Controller,
    real: &DelayRealization,
) -> Result<(DelaySystem, DelayRealization), SimError> {
    ctrl.check(sys)?;
    let mut cl = sys.clone();
    let mut cl_real = real.clone();
    let mut extra: Vec<(Trajectory, crate::linalg::Mat)> = Vec::new();
    for k in &ctrl.kernel {
        extra.push((Trajectory::Constant { value: k.delay }, &sys.b * &k.matrix));
        for (bk, tr) in sys.input_delays.iter().zip(&real.input) {
            extra.push((shifted(tr, k.delay), &bk.matrix * &k.matrix));
        }
    }
    for (tr, m) in extra {
        if m.iter().all(|v| *v == 0.0) {
            continue;
        }
        let nominal = match &tr {
            Trajectory::Constant { value } => *value,
            other => {
                let (lo, hi) = other.range();
                0.5 * (lo + hi)
            }
        };
        if let Trajectory::Constant { value } = tr {
            if delay_key(value) == 0.0 {
                cl.a += m;
                continue;
            }
        }
        let key = delay_key(nominal);
        let hit = cl.discrete.iter().position(|t| delay_key(t.delay) == key);
        match hit {
            Some(j) if tr == cl_real.discrete[j] && matches!(tr, Trajectory::Constant { .. }) => {
                cl.discrete[j].matrix += m;
            }
            Some(_) => {
                return Err(SimError::Input(format!(
                    "closed-loop delay {nominal} coincides with a varying plant delay"
                )))
            }
            None => {
                cl.discrete.push(DelayTerm::new(nominal, m));
                cl_real.discrete.push(tr);
            }
        }
    }
    Ok((cl, cl_real))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::margins::{Scaling, MarginReport};
    use crate::model::m1;
    use std::collections::BTreeMap;

    fn report(alpha: f64) -> MarginReport {
        MarginReport {
            theorem: "thm31_hinf".into(),
            title: String::new(),
            verdict: "certified".into(),
            certified: true,
            quantities: BTreeMap::new(),
            conditions: Vec::new(),
            statement_variant: BTreeMap::new(),
            admissible_scaling: Some(Scaling(alpha)),
            scaling_cap: Scaling(f64::INFINITY),
            gains_used: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    fn plant() -> (DelaySystem, PerturbationBounds) {
        let sys = DelaySystem::scalar(0.0, 1.0).with_discrete(1.0, m1(-1.0));
        let mut p = PerturbationBounds::zero(&sys);
        p.mu = vec![1.0];
        p.one_sided = true;
        (sys, p)
    }

    #[test]
    fn realizations_stay_in_band() {
        let (sys, p) = plant();
        let band = p.scaled(0.3);
        for s in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let r = draw_realization(&sys, &band, 50.0, &mut rng);
            r.check(&sys, Some(&band)).unwrap();
        }
    }

    #[test]
    fn certified_scaling_has_no_counterexample() {
        let (sys, p) = plant();
        let cfg = FalsifyConfig {
            trials: 8,
            t_end: 60.0,
            ..FalsifyConfig::default()
        };
        let s = falsify_margin(&report(0.3), &sys, &p, None, &cfg).unwrap();
        assert_eq!(s.diverged, 0);
        assert_eq!(s.verdict, "consistent");
        assert!(s.max_linf_gain.is_finite() && s.max_linf_gain > 0.5);
    }

    #[test]
    fn deterministic() {
        let (sys, p) = plant();
        let cfg = FalsifyConfig {
            trials: 4,
            t_end: 20.0,
            seed: 11,
            ..FalsifyConfig::default()
        };
        let a = falsify_margin(&report(0.3), &sys, &p, None, &cfg).unwrap();
        let b = falsify_margin(&report(0.3), &sys, &p, None, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn closed_loop_folds_static_gain() {
        let sys = DelaySystem::scalar(0.0, 1.0).with_discrete(2.0, m1(-1.0));
        let real = DelayRealization::nominal(&sys);
        let (cl, cr) = perturbed_closed_loop(&sys, &Controller::static_gain(m1(-1.0)), &real).unwrap();
        assert_eq!(cl.a[(0, 0)], -1.0);
        assert_eq!(cr.discrete.len(), 1);
    }

    #[test]
    fn input_delay_product_follows_trajectory() {
        let sys = DelaySystem::scalar(-1.0, 0.0).with_input_delay(1.0, m1(1.0));
        let mut real = DelayRealization::nominal(&sys);
        real.input[0] = Trajectory::Sinusoid { center: 1.1, amplitude: 0.1, omega: 1.0, phase: 0.0 };
        let k = Controller { kernel: vec![DelayTerm::new(0.5, m1(-0.5))] };
        let (cl, cr) = perturbed_closed_loop(&sys, &k, &real).unwrap();
        assert_eq!(cl.discrete.len(), 1);
        let (lo, hi) = cr.discrete[0].range();
        assert!((lo - 1.5).abs() < 1e-12 && (hi - 1.7).abs() < 1e-12);
    }
}
