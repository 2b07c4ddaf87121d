//! Closed loops under `u = 𝒦 ∗ x + r` and their gains.

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::bibo::{self, BiboConfig, BiboError, L1Norm};
use crate::freq::{
    self, certify_stability_with, sweep, Channel, ContourConfig, FreqError, HinfConfig, StabilityCertificate,
    SweepGrid, Verdict,
};
use crate::linalg::{spectral_norm_c, to_complex, CMat, C64};
use crate::margins::ClosedLoopGains;
use crate::model::{close_loop, controller_gains, Controller, DelaySystem, GainEstimate, GainMethod, GainSet};

/// `𝒦̂(s) = Σ K_i e^{−s t_i}`.
pub fn controller_transfer(ctrl: &Controller, p: usize, n: usize, s: C64) -> CMat {
    let mut k = CMat::zeros(p, n);
    for t in &ctrl.kernel {
        k += to_complex(&t.matrix) * (-s * t.delay).exp();
    }
    k
}

/// `r → u` of the closed loop `cl`: `I + 𝒦̂(s) G_cl(s)`.
pub fn control_transfer(cl: &DelaySystem, ctrl: &Controller, s: C64) -> Result<CMat, FreqError> {
    let g = freq::transfer_channel(cl, Channel::InputToState, s)?;
    Ok(CMat::identity(cl.p, cl.p) + controller_transfer(ctrl, cl.p, cl.n, s) * g)
}

/// Sweep estimate of `‖I + 𝒦̂ G_cl‖_∞`; the high-frequency limit is 1.
pub fn control_hinf(cl: &DelaySystem, ctrl: &Controller, cfg: &HinfConfig) -> Result<GainEstimate, FreqError> {
    let omega_bound = freq::root_bound(cl, 0.0)?;
    let dmax = cl
        .max_delay()
        .max(ctrl.kernel.iter().map(|t| t.delay).fold(0.0, f64::max));
    let mut omega_max = (cfg.omega_factor * omega_bound).max(10.0);
    if dmax > 0.0 {
        omega_max = omega_max.max(cfg.delay_factor / dmax);
    }
    let eval = |w: f64| {
        control_transfer(cl, ctrl, Complex::new(0.0, w))
            .map(|g| spectral_norm_c(&g))
            .unwrap_or(f64::INFINITY)
    };
    let sw = sweep::sup_on_axis(eval, &SweepGrid::new(omega_max, dmax, cfg.density));
    let ktotal: f64 = ctrl.kernel.iter().map(|t| crate::linalg::spectral_norm(&t.matrix)).sum();
    // ‖𝒦̂ G‖ ≤ ‖𝒦‖ ‖G‖ and ‖G(iω)‖ ≲ C/ω beyond the sweep
    let tail_c = (0..32)
        .map(|i| omega_max * 0.1f64.powf(i as f64 / 31.0))
        .filter_map(|w| {
            let g = freq::transfer_channel(cl, Channel::InputToState, Complex::new(0.0, w)).ok()?;
            Some(spectral_norm_c(&g) * w)
        })
        .fold(0.0, f64::max);
    let tail = 1.0 + ktotal * tail_c / omega_max;
    let value = sw.value.max(1.0);
    Ok(GainEstimate::new(value, GainMethod::FrequencySweep, sw.error.max(tail - value).max(0.0)))
}

/// 𝒜-norm of `r → u`: impulse `δ I + Σ K_i g_cl(t − t_i)`.
pub fn control_l1(cl: &DelaySystem, ctrl: &Controller, cfg: &BiboConfig) -> Result<L1Norm, BiboError> {
    let (ir, norm) = bibo::certified_l1(cl, Channel::InputToState, cfg)?;
    let (n, p) = (cl.n, cl.p);
    let len = ir.len();
    let dt = ir.dt;
    let mut samples = vec![0.0; len * p * p];
    for i in 0..len {
        let t = i as f64 * dt;
        for k in &ctrl.kernel {
            let r = t - k.delay;
            if r < 0.0 {
                continue;
            }
            let pos = r / dt;
            let j = pos.floor() as usize;
            if j >= len {
                continue;
            }
            let frac = pos - j as f64;
            let g = if j + 1 < len && frac > 1e-12 {
                ir.at(j) * (1.0 - frac) + ir.at(j + 1) * frac
            } else {
                ir.at(j)
            };
            let prod = &k.matrix * g;
            for a in 0..p {
                for b in 0..p {
                    samples[i * p * p + a * p + b] += prod[(a, b)];
                }
            }
        }
    }
    let ktotal: f64 = ctrl.kernel.iter().map(|t| crate::linalg::spectral_norm(&t.matrix)).sum();
    let mut tail = ir.tail;
    tail.amplitude *= ktotal.max(f64::MIN_POSITIVE) * (n as f64).sqrt();
    let mut jumps = Vec::new();
    for k in &ctrl.kernel {
        for (t, j) in &ir.jumps {
            let jm = crate::linalg::Mat::from_fn(n, p, |a, b| j[a][b]);
            let m = &k.matrix * jm;
            jumps.push((t + k.delay, (0..p).map(|a| (0..p).map(|b| m[(a, b)]).collect()).collect()));
        }
        if k.delay > 0.0 {
            let m = &k.matrix * &cl.b;
            jumps.push((k.delay, (0..p).map(|a| (0..p).map(|b| m[(a, b)]).collect()).collect()));
        }
    }
    let u = bibo::ImpulseResponse {
        channel: Channel::InputToState,
        dt,
        t_end: ir.t_end,
        rows: p,
        cols: p,
        samples,
        deltas: vec![(0.0, (0..p).map(|a| (0..p).map(|b| if a == b { 1.0 } else { 0.0 }).collect()).collect())],
        jumps,
        tail,
    };
    let mut out = bibo::l1_norm(&u);
    // the closed-loop integration error carries through 𝒦
    out.error += ktotal * norm.error;
    Ok(out)
}

/// Nominal closed loop, its certificate, and the gains the stabilization
/// conditions read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopAnalysis {
    pub system: DelaySystem,
    pub certificate: StabilityCertificate,
    pub gains: Option<ClosedLoopGains>,
    /// `r → u` gains.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_hinf: Option<GainEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_bibo: Option<GainEstimate>,
    pub notes: Vec<String>,
}

/// Which gain families to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GainSelection {
    L2,
    Linf,
    #[default]
    All,
}

impl GainSelection {
    pub fn l2(self) -> bool {
        matches!(self, GainSelection::L2 | GainSelection::All)
    }

    pub fn linf(self) -> bool {
        matches!(self, GainSelection::Linf | GainSelection::All)
    }
}

impl std::str::FromStr for GainSelection {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "l2" => Ok(Self::L2),
            "linf" => Ok(Self::Linf),
            "all" => Ok(Self::All),
            other => Err(format!("unknown gain selection '{other}' (expected l2, linf or all)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FeedbackError {
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Freq(#[from] FreqError),
    #[error(transparent)]
    Bibo(#[from] BiboError),
}

pub fn analyze_closed_loop(
    plant: &DelaySystem,
    ctrl: &Controller,
    sel: GainSelection,
    contour: &ContourConfig,
    hinf: &HinfConfig,
    bcfg: &BiboConfig,
) -> Result<ClosedLoopAnalysis, FeedbackError> {
    let cl = close_loop(plant, ctrl)?;
    let certificate = certify_stability_with(&cl, contour)?;
    let mut notes = Vec::new();
    if certificate.verdict != Verdict::Stable {
        notes.push(format!("closed loop is {}: stabilization conditions skipped", certificate.verdict));
        return Ok(ClosedLoopAnalysis {
            system: cl,
            certificate,
            gains: None,
            control_hinf: None,
            control_bibo: None,
            notes,
        });
    }
    let mut gains = GainSet::default();
    let mut control_hinf_v = None;
    let mut control_bibo_v = None;
    if sel.l2() {
        let mut g = GainSet::default();
        for (slot, ch) in [
            (&mut g.m2_nom, Channel::InputToState),
            (&mut g.m2_nomd, Channel::InputToStateRate),
            (&mut g.m2, Channel::DisturbanceToState),
            (&mut g.m2d, Channel::DisturbanceToStateRate),
        ] {
            *slot = Some(freq::hinf_norm_with(&cl, ch, hinf, &certificate)?.estimate());
        }
        gains = gains.merge(g);
        control_hinf_v = Some(control_hinf(&cl, ctrl, hinf)?);
    }
    if sel.linf() {
        match bibo::linf_gains(&cl, bcfg) {
            Ok(l) => gains = gains.merge(l.gains),
            Err(e) => notes.push(format!("closed-loop L-infinity gains unavailable: {e}")),
        }
        match control_l1(&cl, ctrl, bcfg) {
            Ok(n) => control_bibo_v = Some(GainEstimate::new(n.value, GainMethod::ImpulseL1, n.error)),
            Err(e) => notes.push(format!("r->u BIBO gain unavailable: {e}")),
        }
    }
    let (minf_k, m2_k) = controller_gains(ctrl);
    Ok(ClosedLoopAnalysis {
        system: cl,
        certificate,
        gains: Some(ClosedLoopGains { gains, minf_k, m2_k }),
        control_hinf: control_hinf_v,
        control_bibo: control_bibo_v,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::m1;

    fn example() -> (DelaySystem, Controller) {
        let plant = DelaySystem::scalar(0.0, 1.0).with_discrete(2.0, m1(-1.0));
        (plant, Controller::static_gain(m1(-1.0)))
    }

    #[test]
    fn control_transfer_formula() {
        let (plant, k) = example();
        let cl = close_loop(&plant, &k).unwrap();
        let s = Complex::new(0.3, 1.7);
        let e = (-s * 2.0).exp();
        let expected = (s + e) / (s + 1.0 + e);
        let got = control_transfer(&cl, &k, s).unwrap()[(0, 0)];
        assert!((got - expected).norm() < 1e-13);
    }

    #[test]
    fn zero_controller_is_identity() {
        let sys = DelaySystem::scalar(-1.0, 1.0);
        let k = Controller::static_gain(m1(0.0));
        let g = control_hinf(&sys, &k, &HinfConfig::default()).unwrap();
        assert!((g.value - 1.0).abs() < 1e-12);
        let l = control_l1(&sys, &k, &BiboConfig::default()).unwrap();
        assert!((l.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn first_order_control_channel() {
        // ẋ = u, u = −x + r: r → u is s/(s+1), 𝒜-norm 1 + ∫e^{−t} = 2
        let sys = DelaySystem::scalar(0.0, 1.0);
        let k = Controller::static_gain(m1(-1.0));
        let cl = close_loop(&sys, &k).unwrap();
        let l = control_l1(&cl, &k, &BiboConfig::default()).unwrap();
        assert!((l.value - 2.0).abs() < 1e-6, "{}", l.value);
        let h = control_hinf(&cl, &k, &HinfConfig::default()).unwrap();
        assert!((h.value - 1.0).abs() < 1e-9);
    }
}
