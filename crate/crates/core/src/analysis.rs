//! End-to-end pipeline: validate, certify, compute gains, evaluate every
//! applicable margin condition, optionally falsify.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bibo::{self, BiboConfig, BiboError, LinfCandidate};
use crate::feedback::{analyze_closed_loop, ClosedLoopAnalysis, FeedbackError, GainSelection};
use crate::freq::{self, certify_stability_with, Channel, ContourConfig, FreqError, HinfConfig, StabilityCertificate, Verdict};
use crate::margins::{self, MarginError, MarginInput, MarginReport, Registry};
use crate::model::{validate, Controller, DelaySystem, GainSet, ModelError, PerturbationBounds, ValidationReport};
use crate::simulate::{falsify_margin, FalsificationSummary, FalsifyConfig, SimError};

/// Every tunable, with the documented defaults. Loaded from `--config`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub contour: ContourConfig,
    pub hinf: HinfConfig,
    pub bibo: BiboConfig,
    pub falsify: FalsifyConfig,
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Freq(#[from] FreqError),
    #[error(transparent)]
    Bibo(#[from] BiboError),
    #[error(transparent)]
    Margin(#[from] MarginError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl From<FeedbackError> for AnalysisError {
    fn from(e: FeedbackError) -> Self {
        match e {
            FeedbackError::Model(e) => e.into(),
            FeedbackError::Freq(e) => e.into(),
            FeedbackError::Bibo(e) => e.into(),
        }
    }
}

impl AnalysisError {
    /// True when the failure is the caller's input rather than the numerics.
    pub fn is_input(&self) -> bool {
        match self {
            AnalysisError::Model(_) => true,
            AnalysisError::Freq(FreqError::HypothesisH(_)) | AnalysisError::Freq(FreqError::NotCommensurate) => true,
            AnalysisError::Margin(MarginError::Unknown(_) | MarginError::NotApplicable { .. }) => true,
            AnalysisError::Sim(SimError::Model(_) | SimError::StepTooLarge { .. } | SimError::Input(_) | SimError::Horizon(_)) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub theorem: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub version: String,
    /// SHA-256 of the input file, filled in by the caller.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system_hash: Option<String>,
    pub validation: ValidationReport,
    pub stability: StabilityCertificate,
    pub gains: GainSet,
    pub gain_candidates: Vec<LinfCandidate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closed_loop: Option<ClosedLoopAnalysis>,
    pub margins: Vec<MarginReport>,
    pub skipped: Vec<Skipped>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub falsification: Vec<FalsificationSummary>,
    pub notes: Vec<String>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

/// Options of [`analyze`] beyond the model.
#[derive(Debug, Clone, Default)]
pub struct AnalyzeOptions {
    pub gains: GainSelection,
    /// Restrict to one theorem id.
    pub theorem: Option<String>,
    /// Run a falsification campaign for every margin with `α* > 0`.
    pub falsify: bool,
}

pub fn analyze(
    sys: &DelaySystem,
    pert: &PerturbationBounds,
    ctrl: Option<&Controller>,
    opts: &AnalyzeOptions,
    cfg: &AnalysisConfig,
) -> Result<AnalysisReport, AnalysisError> {
    let mut timings = BTreeMap::new();
    let mut notes = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, t: &mut BTreeMap<String, f64>| {
        t.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let registry = Registry::standard();
    if let Some(id) = &opts.theorem {
        registry.get(id)?;
    }
    let validation = validate(sys, pert)?;
    if !validation.passed {
        for c in validation.checks.iter().filter(|c| !c.passed) {
            notes.push(format!("validation: {} failed ({})", c.name, c.detail));
        }
    }
    let stability = certify_stability_with(sys, &cfg.contour)?;
    lap("stability", &mut timings);

    let mut gains = GainSet::default();
    let mut gain_candidates = Vec::new();
    let stable = stability.verdict == Verdict::Stable;
    if stable {
        if opts.gains.l2() {
            let mut g = GainSet::default();
            for (slot, ch) in [
                (&mut g.m2_nom, Channel::InputToState),
                (&mut g.m2_nomd, Channel::InputToStateRate),
                (&mut g.m2, Channel::DisturbanceToState),
                (&mut g.m2d, Channel::DisturbanceToStateRate),
            ] {
                *slot = Some(freq::hinf_norm_with(sys, ch, &cfg.hinf, &stability)?.estimate());
            }
            gains = gains.merge(g);
            lap("gains_l2", &mut timings);
        }
        if opts.gains.linf() {
            match bibo::linf_gains(sys, &cfg.bibo) {
                Ok(l) => {
                    gains = gains.merge(l.gains);
                    gain_candidates = l.candidates;
                }
                Err(e @ (BiboError::Sim(_) | BiboError::Diverged(_) | BiboError::NoCertificate(_))) => {
                    notes.push(format!("L-infinity gains unavailable: {e}"));
                }
                Err(e) => return Err(e.into()),
            }
            lap("gains_linf", &mut timings);
        }
    } else {
        notes.push(format!(
            "nominal system is {}: open-loop gains and margins skipped{}",
            stability.verdict,
            stability.reason.as_ref().map(|r| format!(" ({r})")).unwrap_or_default()
        ));
    }

    let closed_loop = match ctrl {
        Some(k) => {
            let a = analyze_closed_loop(sys, k, opts.gains, &cfg.contour, &cfg.hinf, &cfg.bibo)?;
            lap("closed_loop", &mut timings);
            Some(a)
        }
        None => None,
    };
    let cl_gains = closed_loop.as_ref().and_then(|c| c.gains.as_ref());

    let mut margins_out = Vec::new();
    let mut skipped = Vec::new();
    let input = MarginInput {
        sys,
        pert,
        gains: &gains,
        closed_loop: cl_gains,
    };
    for th in registry.theorems() {
        if opts.theorem.as_deref().is_some_and(|id| id != th.id()) {
            continue;
        }
        let skip = |reason: String| Skipped {
            theorem: th.id().to_string(),
            reason,
        };
        if th.needs_controller() {
            match &closed_loop {
                None => {
                    skipped.push(skip("no controller given".into()));
                    continue;
                }
                Some(c) if c.gains.is_none() => {
                    skipped.push(skip(format!("closed loop is {}", c.certificate.verdict)));
                    continue;
                }
                _ => {}
            }
        } else if !stable && th.id() != "prop43" {
            skipped.push(skip(format!("nominal system is {}", stability.verdict)));
            continue;
        }
        match margins::report(th, &input) {
            Ok(r) => margins_out.push(r),
            Err(e @ (MarginError::NotApplicable { .. } | MarginError::MissingGain { .. })) => {
                if opts.theorem.is_some() {
                    return Err(e.into());
                }
                skipped.push(skip(e.to_string()));
            }
            Err(e) => return Err(e.into()),
        }
    }
    lap("margins", &mut timings);

    let mut falsification = Vec::new();
    if opts.falsify {
        for r in &margins_out {
            let Some(a) = r.admissible_scaling else { continue };
            if !(a.0 > 0.0) {
                continue;
            }
            let th = registry.get(&r.theorem)?;
            let k = if th.needs_controller() { ctrl } else { None };
            match falsify_margin(r, sys, pert, k, &cfg.falsify) {
                Ok(s) => falsification.push(s),
                Err(e) => notes.push(format!("falsification for {} skipped: {e}", r.theorem)),
            }
        }
        lap("falsification", &mut timings);
    }

    Ok(AnalysisReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        system_hash: None,
        validation,
        stability,
        gains,
        gain_candidates,
        closed_loop,
        margins: margins_out,
        skipped,
        falsification,
        notes,
        timings,
    })
}

/// The delayed-feedback example `G_h = 1/(s + e^{−sh})`.
pub mod example {
    use crate::model::{m1, Controller, DelaySystem, PerturbationBounds};

    /// `ẋ(t) = −x(t − h) + u(t)`.
    pub fn delayed_integrator(h: f64) -> DelaySystem {
        DelaySystem::scalar(0.0, 1.0).with_discrete(h, m1(-1.0))
    }

    /// Unit radius on the single delay, varying in `[h, h + α]`.
    pub fn unit_band(sys: &DelaySystem) -> PerturbationBounds {
        let mut p = PerturbationBounds::zero(sys);
        p.mu = vec![1.0; sys.discrete.len()];
        p.one_sided = true;
        p
    }

    /// The open-loop unstable plant at `h = 2` with `u = −x + r`.
    pub fn closed_loop_example() -> (DelaySystem, Controller) {
        (delayed_integrator(2.0), Controller::static_gain(m1(-1.0)))
    }
}

/// One reproduced number next to its reference value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproCell {
    pub table: String,
    pub quantity: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    pub computed: f64,
    pub error: f64,
    pub reference: f64,
    pub deviation: f64,
    /// Absolute, or relative when `relative` is set.
    pub tolerance: f64,
    pub relative: bool,
    /// Upper-bound claims pass when `computed ≤ reference (1 + tolerance)`.
    pub upper_bound: bool,
    pub within: bool,
}

impl ReproCell {
    fn new(table: &str, quantity: &str, h: Option<f64>, computed: f64, error: f64, reference: f64, tolerance: f64) -> Self {
        let deviation = computed - reference;
        Self {
            table: table.into(),
            quantity: quantity.into(),
            h,
            computed,
            error,
            reference,
            deviation,
            tolerance,
            relative: false,
            upper_bound: false,
            within: deviation.abs() <= tolerance,
        }
    }

    fn relative(mut self) -> Self {
        self.relative = true;
        self.deviation = (self.computed - self.reference) / self.reference;
        self.within = self.deviation.abs() <= self.tolerance;
        self
    }

    fn upper_bound(mut self) -> Self {
        self.upper_bound = true;
        self.relative = true;
        self.deviation = (self.computed - self.reference) / self.reference;
        self.within = self.computed <= self.reference * (1.0 + self.tolerance);
        self
    }
}

/// Auxiliary numbers printed next to the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproNote {
    pub table: String,
    pub quantity: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Reproduction {
    pub cells: Vec<ReproCell>,
    pub notes: Vec<ReproNote>,
    pub timings: BTreeMap<String, f64>,
}

impl Reproduction {
    pub fn all_within(&self) -> bool {
        self.cells.iter().all(|c| c.within)
    }

    fn note(&mut self, table: &str, quantity: &str, h: Option<f64>, value: f64) {
        self.notes.push(ReproNote {
            table: table.into(),
            quantity: quantity.into(),
            h,
            value,
        });
    }

    /// Fixed-width text table.
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "{:<12} {:<22} {:>5} {:>12} {:>10} {:>10} {:>10} {:>9}  {}\n",
            "table", "quantity", "h", "computed", "error", "reference", "deviation", "tolerance", "ok"
        ));
        for c in &self.cells {
            let h = c.h.map(|h| format!("{h}")).unwrap_or_else(|| "-".into());
            let tol = if c.upper_bound {
                format!("<=+{:.0}%", c.tolerance * 100.0)
            } else if c.relative {
                format!("{:.0}%", c.tolerance * 100.0)
            } else {
                format!("{}", c.tolerance)
            };
            let dev = if c.relative {
                format!("{:+.2}%", c.deviation * 100.0)
            } else {
                format!("{:+.4}", c.deviation)
            };
            s.push_str(&format!(
                "{:<12} {:<22} {:>5} {:>12.6} {:>10.2e} {:>10} {:>10} {:>9}  {}\n",
                c.table,
                c.quantity,
                h,
                c.computed,
                c.error,
                c.reference,
                dev,
                tol,
                if c.within { "yes" } else { "NO" }
            ));
        }
        if !self.notes.is_empty() {
            s.push_str("\nadditional values\n");
            for n in &self.notes {
                let h = n.h.map(|h| format!(" h={h}")).unwrap_or_default();
                s.push_str(&format!("  {} {}{}: {:.6}\n", n.table, n.quantity, h, n.value));
            }
        }
        s
    }
}

pub const EXAMPLE_DELAYS: [f64; 4] = [0.0, 0.5, 1.0, 1.5];

fn scaling_of(r: &MarginReport) -> f64 {
    r.admissible_scaling.map_or(f64::NAN, |a| a.0)
}

/// H∞ margins `1/M2d` of the delayed integrator.
pub fn reproduce_hinf(cfg: &AnalysisConfig) -> Result<Reproduction, AnalysisError> {
    let reference = [1.0, 0.63, 0.32, 0.03];
    let mut out = Reproduction::default();
    let t0 = Instant::now();
    for (h, refv) in EXAMPLE_DELAYS.iter().zip(reference) {
        let sys = example::delayed_integrator(*h);
        let pert = example::unit_band(&sys);
        let cert = certify_stability_with(&sys, &cfg.contour)?;
        let mut g = GainSet::default();
        g.m2 = Some(freq::hinf_norm_with(&sys, Channel::DisturbanceToState, &cfg.hinf, &cert)?.estimate());
        let m2d = freq::hinf_norm_with(&sys, Channel::DisturbanceToStateRate, &cfg.hinf, &cert)?;
        g.m2d = Some(m2d.estimate());
        let input = MarginInput { sys: &sys, pert: &pert, gains: &g, closed_loop: None };
        let r = Registry::standard().run("thm31_hinf", &input)?;
        let e = m2d.error / (m2d.value * m2d.value);
        out.cells.push(ReproCell::new("hinf", "margin", Some(*h), scaling_of(&r), e, refv, 0.02));
        out.note("hinf", "M2d", Some(*h), m2d.value);
    }
    out.timings.insert("hinf".into(), t0.elapsed().as_secs_f64());
    Ok(out)
}

/// BIBO bounds and margins of the delayed integrator.
pub fn reproduce_bibo(cfg: &AnalysisConfig) -> Result<Reproduction, AnalysisError> {
    let reference_bound = [1.0, 1.01, 2.96, 39.1];
    let reference_margin = [0.5, 0.50, 0.25, 0.025];
    let mut out = Reproduction::default();
    let t0 = Instant::now();
    for (i, h) in EXAMPLE_DELAYS.iter().enumerate() {
        let sys = example::delayed_integrator(*h);
        let pert = example::unit_band(&sys);
        let (_, l1) = bibo::certified_l1(&sys, Channel::InputToState, &cfg.bibo)?;
        if i == 0 {
            out.cells.push(ReproCell::new("bibo", "impulse_l1", Some(*h), l1.value, l1.error, 1.0, 1e-3));
        } else {
            let hl = bibo::hardy_littlewood_with(&sys, Channel::InputToState, &cfg.bibo)?;
            out.cells
                .push(ReproCell::new("bibo", "hardy_littlewood", Some(*h), hl.value, hl.error, reference_bound[i], 0.05).relative());
            out.note("bibo", "impulse_l1", Some(*h), l1.value);
            out.note("bibo", "hardy_littlewood_half", Some(*h), 0.5 * hl.value);
        }
        let lg = bibo::linf_gains(&sys, &cfg.bibo)?;
        let input = MarginInput { sys: &sys, pert: &pert, gains: &lg.gains, closed_loop: None };
        let r = Registry::standard().run("thm31_bibo", &input)?;
        let minfd = lg.gains.minfd.expect("computed");
        let e = minfd.error / (minfd.value * minfd.value);
        out.cells
            .push(ReproCell::new("bibo", "margin", Some(*h), scaling_of(&r), e, reference_margin[i], 0.01));
        out.note("bibo", "Minfd", Some(*h), minfd.value);
    }
    out.timings.insert("bibo".into(), t0.elapsed().as_secs_f64());
    Ok(out)
}

/// The stabilized `h = 2` loop.
pub fn reproduce_closed_loop(cfg: &AnalysisConfig) -> Result<Reproduction, AnalysisError> {
    let mut out = Reproduction::default();
    let t0 = Instant::now();
    let (plant, k) = example::closed_loop_example();
    let pert = example::unit_band(&plant);
    let cl = analyze_closed_loop(&plant, &k, GainSelection::All, &cfg.contour, &cfg.hinf, &cfg.bibo)?;
    if cl.certificate.verdict != Verdict::Stable {
        return Err(FreqError::NotStable(cl.certificate.verdict).into());
    }
    let hinf = cl.control_hinf.expect("computed with all gains");
    let bibo_g = cl
        .control_bibo
        .ok_or_else(|| BiboError::NoCertificate(cl.notes.join("; ")))?;
    out.cells.push(ReproCell::new("closed_loop", "hinf_norm", None, hinf.value, hinf.error, 1.54, 0.02));
    out.cells
        .push(ReproCell::new("closed_loop", "bibo_bound", None, bibo_g.upper(), bibo_g.error, 3.89, 0.05).upper_bound());
    out.cells.push(ReproCell::new(
        "closed_loop",
        "hinf_margin",
        None,
        1.0 / hinf.upper(),
        hinf.error / (hinf.value * hinf.value),
        0.65,
        0.02,
    ));
    out.cells.push(ReproCell::new(
        "closed_loop",
        "bibo_margin",
        None,
        1.0 / bibo_g.upper(),
        bibo_g.error / (bibo_g.value * bibo_g.value),
        0.26,
        0.01,
    ));
    let g = cl.gains.as_ref().expect("stable loop");
    let empty = GainSet::default();
    let input = MarginInput { sys: &plant, pert: &pert, gains: &empty, closed_loop: Some(g) };
    let reg = Registry::standard();
    let th = reg.run("thm41_hinf", &input)?;
    out.note("closed_loop", "thm41_hinf_scaling", None, scaling_of(&th));
    if let (Some(m2), Some(m2d)) = (g.gains.m2_nom, g.gains.m2d) {
        out.note("closed_loop", "M2_cl_r_to_x", None, m2.value);
        out.note("closed_loop", "M2d_cl", None, m2d.value);
        out.note("closed_loop", "statement_scaling_r_to_x", None, 1.0 / m2.upper());
    }
    if let Ok(tb) = reg.run("thm41_bibo", &input) {
        out.note("closed_loop", "thm41_bibo_scaling", None, scaling_of(&tb));
    }
    if let Some(m) = g.gains.minfd {
        out.note("closed_loop", "Minfd_cl", None, m.value);
    }
    out.timings.insert("closed_loop".into(), t0.elapsed().as_secs_f64());
    Ok(out)
}

/// The full table.
pub fn reproduce(cfg: &AnalysisConfig) -> Result<Reproduction, AnalysisError> {
    let mut all = Reproduction::default();
    for part in [reproduce_hinf(cfg)?, reproduce_bibo(cfg)?, reproduce_closed_loop(cfg)?] {
        all.cells.extend(part.cells);
        all.notes.extend(part.notes);
        all.timings.extend(part.timings);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analyze_example() {
        let sys = example::delayed_integrator(1.0);
        let pert = example::unit_band(&sys);
        let r = analyze(&sys, &pert, None, &AnalyzeOptions::default(), &AnalysisConfig::default()).unwrap();
        assert_eq!(r.stability.verdict, Verdict::Stable);
        let h = r.margins.iter().find(|m| m.theorem == "thm31_hinf").unwrap();
        assert!((h.admissible_scaling.unwrap().0 - 0.32).abs() < 0.02);
        assert!(r.skipped.iter().any(|s| s.theorem == "thm41_hinf"));
        assert!(r.skipped.iter().any(|s| s.theorem == "prop43"));
    }

    #[test]
    fn unstable_skips_margins() {
        let sys = example::delayed_integrator(1.6);
        let pert = example::unit_band(&sys);
        let r = analyze(&sys, &pert, None, &AnalyzeOptions::default(), &AnalysisConfig::default()).unwrap();
        assert_eq!(r.stability.verdict, Verdict::Unstable);
        assert!(r.margins.is_empty());
        assert!(r.skipped.iter().any(|s| s.reason.contains("unstable")));
    }

    #[test]
    fn single_theorem_inapplicable_is_error() {
        let sys = DelaySystem::scalar(-1.0, 1.0).with_neutral(1.0, crate::model::m1(0.3));
        let pert = PerturbationBounds::zero(&sys);
        let opts = AnalyzeOptions { theorem: Some("thm31_bibo".into()), ..AnalyzeOptions::default() };
        let e = analyze(&sys, &pert, None, &opts, &AnalysisConfig::default()).unwrap_err();
        assert!(e.is_input());
    }

    #[test]
    fn config_defaults_round_trip() {
        let c: AnalysisConfig = serde_json::from_str(r#"{"hinf": {"density": 2.0}}"#).unwrap();
        assert_eq!(c.hinf.density, 2.0);
        assert_eq!(c.contour, ContourConfig::default());
    }
}
