//! Small-gain robustness conditions and the largest uniform scaling of the
//! delay-variation radii for which each holds.
//!
//! Each condition set is a [`MarginTheorem`] registered by id in a
//! [`Registry`]; callers select one at run time. Every check uses gain upper
//! bounds (value + error). A failed check means "not certified", never
//! "unstable".

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::freq::{chain_location, FreqError};
use crate::model::{DelaySystem, GainEstimate, GainSet, PerturbationBounds};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarginError {
    #[error("unknown theorem '{0}'")]
    Unknown(String),
    #[error("{theorem} does not apply: {reason}")]
    NotApplicable { theorem: String, reason: String },
    #[error("{theorem} needs the gain {gain}")]
    MissingGain { theorem: String, gain: String },
    #[error(transparent)]
    Freq(#[from] FreqError),
}

/// A scaling in `[0, ∞]`; infinity serializes as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Scaling(pub f64);

impl Scaling {
    pub fn is_infinite(&self) -> bool {
        self.0.is_infinite()
    }
}

impl fmt::Display for Scaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{:.6}", self.0)
        }
    }
}

impl Serialize for Scaling {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        extended::serialize(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for Scaling {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        extended::deserialize(d).map(Scaling)
    }
}

/// Numbers that may be non-finite: `"inf"`, `"-inf"` and `"nan"` stand in
/// for the values JSON cannot carry.
pub mod extended {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    struct Ext(f64);

    impl Serialize for Ext {
        fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            serialize(&self.0, s)
        }
    }

    impl<'de> Deserialize<'de> for Ext {
        fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
            deserialize(d).map(Ext)
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            v if v.is_nan() => s.serialize_str("nan"),
            v if v == f64::INFINITY => s.serialize_str("inf"),
            v if v == f64::NEG_INFINITY => s.serialize_str("-inf"),
            v => s.serialize_f64(v),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(serde::de::Error::custom(format!("expected a number, \"inf\", \"-inf\" or \"nan\", got \"{s}\""))),
            },
        }
    }

    pub mod map {
        use super::*;

        pub fn serialize<S: Serializer>(m: &BTreeMap<String, f64>, s: S) -> Result<S::Ok, S::Error> {
            s.collect_map(m.iter().map(|(k, v)| (k, Ext(*v))))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, f64>, D::Error> {
            let raw = BTreeMap::<String, Ext>::deserialize(d)?;
            Ok(raw.into_iter().map(|(k, v)| (k, v.0)).collect())
        }
    }
}

/// Closed-loop data for the stabilization conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopGains {
    /// Gains of the nominal closed loop; `minf_nom`, `m2_nom` are `r→x`.
    pub gains: GainSet,
    /// `M∞ᴷ`, `M₂ᴷ` of the controller.
    pub minf_k: GainEstimate,
    pub m2_k: GainEstimate,
}

/// Everything a condition may read.
#[derive(Debug, Clone, Copy)]
pub struct MarginInput<'a> {
    /// The open-loop plant; its matrices weight the radii.
    pub sys: &'a DelaySystem,
    /// Radii template scaled by `α`.
    pub pert: &'a PerturbationBounds,
    /// Nominal open-loop gains.
    pub gains: &'a GainSet,
    pub closed_loop: Option<&'a ClosedLoopGains>,
}

/// One inequality `value < 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub expression: String,
    #[serde(with = "extended")]
    pub value: f64,
    pub passed: bool,
}

impl Condition {
    fn new(name: &str, expression: &str, value: f64) -> Self {
        Self {
            name: name.into(),
            expression: expression.into(),
            value,
            passed: value < 1.0,
        }
    }
}

/// Result of evaluating a condition set at one scaling.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Evaluation {
    #[serde(with = "extended::map")]
    pub quantities: BTreeMap<String, f64>,
    pub conditions: Vec<Condition>,
    /// Alternative readings of the statement, recorded but not used by the verdict.
    #[serde(with = "extended::map")]
    pub statement_variant: BTreeMap<String, f64>,
    pub gains_used: BTreeMap<String, GainEstimate>,
    pub notes: Vec<String>,
}

impl Evaluation {
    pub fn passed(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    fn q(&mut self, k: &str, v: f64) {
        self.quantities.insert(k.into(), v);
    }
}

/// A sufficient condition for robust stability, parameterized by the radii scaling `α`.
pub trait MarginTheorem: Send + Sync {
    fn id(&self) -> &'static str;
    fn title(&self) -> &'static str;
    fn needs_controller(&self) -> bool {
        false
    }
    /// Whether the condition depends on `α` at all.
    fn scalable(&self) -> bool {
        true
    }
    fn applicable(&self, input: &MarginInput) -> Result<(), MarginError>;
    fn evaluate(&self, input: &MarginInput, alpha: f64) -> Result<Evaluation, MarginError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub theorem: String,
    pub title: String,
    /// `"certified"` or `"not certified"` at scaling 1.
    pub verdict: String,
    pub certified: bool,
    #[serde(with = "extended::map")]
    pub quantities: BTreeMap<String, f64>,
    pub conditions: Vec<Condition>,
    #[serde(with = "extended::map")]
    pub statement_variant: BTreeMap<String, f64>,
    /// Largest `α` for which the conditions hold; absent when not scalable.
    pub admissible_scaling: Option<Scaling>,
    /// Largest `α` keeping every delay band nonnegative.
    pub scaling_cap: Scaling,
    pub gains_used: BTreeMap<String, GainEstimate>,
    pub notes: Vec<String>,
}

impl MarginReport {
    /// Recomputes the verdict from the recorded condition values.
    pub fn recheck(&self) -> bool {
        self.conditions.iter().all(|c| c.value < 1.0)
    }
}

fn verdict_label(ok: bool) -> String {
    if ok { "certified" } else { "not certified" }.to_string()
}

/// Theorems by id.
pub struct Registry {
    map: BTreeMap<&'static str, Box<dyn MarginTheorem>>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::standard()
    }
}

impl Registry {
    pub fn empty() -> Self {
        Self { map: BTreeMap::new() }
    }

    /// All built-in condition sets.
    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Thm31Bibo));
        r.register(Box::new(Thm31Hinf));
        r.register(Box::new(Thm32NeutralBibo));
        r.register(Box::new(Thm41Bibo));
        r.register(Box::new(Thm41Hinf));
        r.register(Box::new(Prop42NeutralStab));
        r.register(Box::new(Prop43Chains));
        r
    }

    pub fn register(&mut self, t: Box<dyn MarginTheorem>) {
        self.map.insert(t.id(), t);
    }

    pub fn get(&self, id: &str) -> Result<&dyn MarginTheorem, MarginError> {
        self.map
            .get(id)
            .map(|b| b.as_ref())
            .ok_or_else(|| MarginError::Unknown(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.map.keys().copied()
    }

    pub fn theorems(&self) -> impl Iterator<Item = &dyn MarginTheorem> {
        self.map.values().map(|b| b.as_ref())
    }

    /// Evaluates `id` at scaling 1 and searches for `α*`.
    pub fn run(&self, id: &str, input: &MarginInput) -> Result<MarginReport, MarginError> {
        report(self.get(id)?, input)
    }
}

pub fn report(th: &dyn MarginTheorem, input: &MarginInput) -> Result<MarginReport, MarginError> {
    th.applicable(input)?;
    let ev = th.evaluate(input, 1.0)?;
    let cap = input.pert.band_scaling_cap(input.sys);
    let alpha = if th.scalable() { Some(max_scaling(th, input)?) } else { None };
    let ok = ev.passed();
    Ok(MarginReport {
        theorem: th.id().into(),
        title: th.title().into(),
        verdict: verdict_label(ok),
        certified: ok,
        quantities: ev.quantities,
        conditions: ev.conditions,
        statement_variant: ev.statement_variant,
        admissible_scaling: alpha,
        scaling_cap: Scaling(cap),
        gains_used: ev.gains_used,
        notes: ev.notes,
    })
}

/// Bisection tolerance on `α`, relative to `max(1, α)`.
pub const SCALING_TOL: f64 = 1e-4;
const SCALING_LIMIT: f64 = 1e6;

/// Largest `α` (to [`SCALING_TOL`], from below) for which the conditions
/// hold with every radius multiplied by `α`.
///
/// 0 when they fail at `α = 0`; the band cap when they still hold there;
/// infinite when they hold beyond 10⁶.
pub fn max_scaling(th: &dyn MarginTheorem, input: &MarginInput) -> Result<Scaling, MarginError> {
    let cap = input.pert.band_scaling_cap(input.sys);
    let holds = |a: f64| th.evaluate(input, a).map(|e| e.passed());
    if !holds(0.0)? {
        return Ok(Scaling(0.0));
    }
    let mut lo = 0.0;
    let mut hi = 1.0f64.min(cap);
    loop {
        if !holds(hi)? {
            break;
        }
        lo = hi;
        if hi >= cap {
            return Ok(Scaling(cap));
        }
        if hi > SCALING_LIMIT {
            return Ok(Scaling(f64::INFINITY));
        }
        hi = (2.0 * hi).min(cap);
    }
    while hi - lo > SCALING_TOL * lo.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if holds(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Scaling(lo))
}

// ---- shared pieces ----

fn need(ev: &mut Evaluation, th: &str, name: &str, g: Option<GainEstimate>) -> Result<f64, MarginError> {
    let g = g.ok_or_else(|| MarginError::MissingGain {
        theorem: th.into(),
        gain: name.into(),
    })?;
    ev.gains_used.insert(name.into(), g);
    Ok(g.upper())
}

/// Scaled radius sums: `Σμ_j‖A_j‖`, `Σν_k‖B_k‖`, `Σ_{ν_k>0}‖B_k‖`, `ε‖h‖∞` on `[0, D+ε]`.
struct Radii {
    s_mu: f64,
    s_nu: f64,
    b_active: f64,
    e: f64,
    eps: f64,
}

fn radii(sys: &DelaySystem, pert: &PerturbationBounds, alpha: f64) -> Radii {
    let p = pert.scaled(alpha);
    let s_mu = sys.discrete_norms().iter().zip(&p.mu).map(|(a, m)| a * m).sum();
    let bn = sys.input_delay_norms();
    let s_nu = bn.iter().zip(&p.nu).map(|(b, v)| b * v).sum();
    let b_active = bn.iter().zip(&p.nu).filter(|(_, v)| **v > 0.0).map(|(b, _)| b).sum();
    let e = match &sys.distributed {
        Some(k) if p.eps > 0.0 => p.eps * k.sup_abs(k.length + p.eps),
        _ => 0.0,
    };
    Radii {
        s_mu,
        s_nu,
        b_active,
        e,
        eps: p.eps,
    }
}

fn after(m: f64, x: f64) -> f64 {
    if m < 1.0 {
        x
    } else {
        f64::INFINITY
    }
}

fn not_applicable(th: &dyn MarginTheorem, reason: &str) -> MarginError {
    MarginError::NotApplicable {
        theorem: th.id().into(),
        reason: reason.into(),
    }
}

fn retarded_only(th: &dyn MarginTheorem, input: &MarginInput) -> Result<(), MarginError> {
    if input.sys.is_neutral() {
        return Err(not_applicable(th, "the system has neutral terms; use thm32_neutral_bibo or prop42_neutral_stab"));
    }
    Ok(())
}

fn needs_cl<'a>(th: &dyn MarginTheorem, input: &MarginInput<'a>) -> Result<&'a ClosedLoopGains, MarginError> {
    input
        .closed_loop
        .ok_or_else(|| not_applicable(th, "a controller and closed-loop gains are required"))
}

fn hypothesis_h(th: &dyn MarginTheorem, sys: &DelaySystem) -> Result<f64, MarginError> {
    let n = sys.neutral_norm_sum();
    if n >= 1.0 {
        return Err(not_applicable(th, &format!("Hypothesis (H) fails: sum of neutral norms {n} >= 1")));
    }
    Ok(n)
}

// ---- the conditions ----

/// BIBO robustness of a retarded system.
pub struct Thm31Bibo;

impl MarginTheorem for Thm31Bibo {
    fn id(&self) -> &'static str {
        "thm31_bibo"
    }
    fn title(&self) -> &'static str {
        "BIBO stability of a retarded system under delay variation"
    }
    fn applicable(&self, input: &MarginInput) -> Result<(), MarginError> {
        retarded_only(self, input)
    }
    fn evaluate(&self, input: &MarginInput, alpha: f64) -> Result<Evaluation, MarginError> {
        let mut ev = Evaluation::default();
        let id = self.id();
        let minf = need(&mut ev, id, "minf", input.gains.minf)?;
        let minfd = need(&mut ev, id, "minfd", input.gains.minfd)?;
        let r = radii(input.sys, input.pert, alpha);
        let m = minfd * r.s_mu;
        let mt = after(m, minf * r.e * (1.0 + r.s_mu * minfd / (1.0 - m)));
        ev.q("alpha", alpha);
        ev.q("sum_mu_a", r.s_mu);
        ev.q("eps_h", r.e);
        ev.q("M", m);
        ev.q("M_tilde", mt);
        ev.conditions.push(Condition::new("M", "Minfd * sum mu_j |A_j|", m));
        ev.conditions.push(Condition::new(
            "M_tilde",
            "Minf * eps |h| * (1 + sum mu_j |A_j| * Minfd / (1 - M))",
            mt,
        ));
        // the displayed statement groups the same factors as sum(Minfd mu_j |A_j|)/(1-M) + 1
        ev.statement_variant
            .insert("M_tilde".into(), after(m, minf * r.e * (r.s_mu * minfd / (1.0 - m) + 1.0)));
        if let (Some(nom), Some(nomd)) = (input.gains.minf_nom, input.gains.minf_nomd) {
            if ev.passed() {
                let (nom, nomd) = (nom.upper(), nomd.upper());
                let b2 = 2.0 * r.b_active;
                let bound = (nom + minf * (r.s_mu / (1.0 - m) * (nomd + minfd * b2) + b2)) / (1.0 - mt);
                ev.q("linf_gain_bound", bound);
            }
        }
        Ok(ev)
    }
}

/// H∞ robustness of a retarded system.
pub struct Thm31Hinf;

impl MarginTheorem for Thm31Hinf {
    fn id(&self) -> &'static str {
        "thm31_hinf"
    }
    fn title(&self) -> &'static str {
        "finite L2 gain of a retarded system under delay variation"
    }
    fn applicable(&self, input: &MarginInput) -> Result<(), MarginError> {
        retarded_only(self, input)
    }
    fn evaluate(&self, input: &MarginInput, alpha: f64) -> Result<Evaluation, MarginError> {
        let mut ev = Evaluation::default();
        let id = self.id();
        let m2 = need(&mut ev, id, "m2", input.gains.m2)?;
        let m2d = need(&mut ev, id, "m2d", input.gains.m2d)?;
        let r = radii(input.sys, input.pert, alpha);
        let mp = m2d * r.s_mu;
        let second = after(mp, m2 * r.e * (1.0 + r.s_mu * m2d / (1.0 - mp)));
        ev.q("alpha", alpha);
        ev.q("sum_mu_a", r.s_mu);
        ev.q("eps_h", r.e);
        ev.q("M_prime", mp);
        ev.q("distributed_condition", second);
        ev.conditions.push(Condition::new("M_prime", "M2d * sum mu_j |A_j|", mp));
        ev.conditions.push(Condition::new(
            "distributed",
            "M2 * eps |h| * (1 + sum mu_j |A_j| * M2d / (1 - M'))",
            second,
        ));
        ev.statement_variant
            .insert("distributed_condition".into(), after(mp, m2 * r.e * (r.s_mu / (1.0 - mp) + 1.0)));
        if r.b_active > 0.0 {
            ev.notes.push("input-delay variation is active: the certified gain is from (u, du/dt) to x".into());
        }
        Ok(ev)
    }
}

/// BIBO robustness of a neutral system.
pub struct Thm32NeutralBibo;

impl MarginTheorem for Thm32NeutralBibo {
    fn id(&self) -> &'static str {
        "thm32_neutral_bibo"
    }
    fn title(&self) -> &'static str {
        "BIBO stability of a neutral system under delay variation"
    }
    fn applicable(&self, input: &MarginInput) -> Result<(), MarginError> {
        hypothesis_h(self, input.sys).map(|_| ())
    }
    fn evaluate(&self, input: &MarginInput, alpha: f64) -> Result<Evaluation, MarginError> {
        let mut ev = Evaluation::default();
        let id = self.id();
        let n = hypothesis_h(self, input.sys)?;
        let minf = need(&mut ev, id, "minf", input.gains.minf)?;
        let minfd = need(&mut ev, id, "minfd", input.gains.minfd)?;
        let r = radii(input.sys, input.pert, alpha);
        let core = r.s_mu + 2.0 * n;
        let mpp = minfd * core;
        ev.q("alpha", alpha);
        ev.q("sum_mu_a", r.s_mu);
        ev.q("sum_neutral", n);
        ev.q("eps_h", r.e);
        ev.q("M_double_prime", mpp);
        ev.conditions.push(Condition::new(
            "M_double_prime",
            "Minfd * (sum mu_j |A_j| + 2 sum |A_-l|)",
            mpp,
        ));
        let extra = after(mpp, minf * r.e * (1.0 + core * minfd / (1.0 - mpp)));
        ev.q("distributed_condition", extra);
        if r.eps > 0.0 {
            ev.conditions.push(Condition::new(
                "distributed",
                "Minf * eps |h| * (1 + (sum mu_j |A_j| + 2 sum |A_-l|) * Minfd / (1 - M''))",
                extra,
            ));
        }
        if !input.sys.is_neutral() {
            ev.notes.push("no neutral terms: the condition reduces to the retarded one".into());
        }
        Ok(ev)
    }
}

/// BIBO stabilization of a retarded plant by a fixed controller.
pub struct Thm41Bibo;

impl MarginTheorem for Thm41Bibo {
    fn id(&self) -> &'static str {
        "thm41_bibo"
    }
    fn title(&self) -> &'static str {
        "robust BIBO stabilization of a retarded system"
    }
    fn needs_controller(&self) -> bool {
        true
    }
    fn applicable(&self, input: &MarginInput) -> Result<(), MarginError> {
        retarded_only(self, input)?;
        needs_cl(self, input).map(|_| ())
    }
    fn evaluate(&self, input: &MarginInput, alpha: f64) -> Result<Evaluation, MarginError> {
        let mut ev = Evaluation::default();
        let cl = needs_cl(self, input)?;
        let id = self.id();
        let mcld = need(&mut ev, id, "minfd_cl", cl.gains.minfd)?;
        let mk = need(&mut ev, id, "minf_k", Some(cl.minf_k))?;
        let r = radii(input.sys, input.pert, alpha);
        let q = r.s_mu + r.s_nu * mk + r.e;
        ev.q("alpha", alpha);
        ev.q("sum_mu_a", r.s_mu);
        ev.q("sum_nu_b", r.s_nu);
        ev.q("eps_h", r.e);
        ev.q("perturbation_weight", q);
        ev.q("condition", mcld * q);
        ev.conditions.push(Condition::new(
            "closed_loop",
            "Minfd_cl * (sum mu_j |A_j| + sum nu_k |B_k| Minf_K + eps |h|)",
            mcld * q,
        ));
        if let Some(g) = cl.gains.minf_nom {
            ev.gains_used.insert("minf_nom_cl".into(), g);
            ev.statement_variant.insert("condition".into(), g.upper() * q);
        }
        Ok(ev)
    }
}

/// H∞ stabilization of a retarded plant by a fixed controller.
pub struct Thm41Hinf;

impl MarginTheorem for Thm41Hinf {
    fn id(&self) -> &'static str {
        "thm41_hinf"
    }
    fn title(&self) -> &'static str {
        "robust L2 stabilization of a retarded system"
    }
    fn needs_controller(&self) -> bool {
        true
    }
    fn applicable(&self, input: &MarginInput) -> Result<(), MarginError> {
        retarded_only(self, input)?;
        needs_cl(self, input).map(|_| ())
    }
    fn evaluate(&self, input: &MarginInput, alpha: f64) -> Result<Evaluation, MarginError> {
        let mut ev = Evaluation::default();
        let cl = needs_cl(self, input)?;
        let id = self.id();
        let m2d = need(&mut ev, id, "m2d_cl", cl.gains.m2d)?;
        let mk = need(&mut ev, id, "m2_k", Some(cl.m2_k))?;
        let r = radii(input.sys, input.pert, alpha);
        let q = r.s_mu + r.s_nu * mk + r.e;
        ev.q("alpha", alpha);
        ev.q("sum_mu_a", r.s_mu);
        ev.q("sum_nu_b", r.s_nu);
        ev.q("eps_h", r.e);
        ev.q("perturbation_weight", q);
        ev.q("condition", m2d * q);
        ev.conditions.push(Condition::new(
            "closed_loop",
            "M2d_cl * (sum mu_j |A_j| + sum nu_k |B_k| M2_K + eps |h|)",
            m2d * q,
        ));
        if let Some(g) = cl.gains.m2_nom {
            ev.gains_used.insert("m2_nom_cl".into(), g);
            ev.statement_variant.insert("condition".into(), g.upper() * (r.s_mu + r.s_nu * mk));
        }
        if r.s_nu > 0.0 {
            ev.notes.push("input-delay variation is active: requires dr/dt in L2".into());
        }
        if r.e > 0.0 {
            ev.notes.push("distributed-delay variation included as eps |h| in the weight".into());
        }
        Ok(ev)
    }
}

/// BIBO stabilization of a neutral plant by a fixed controller.
pub struct Prop42NeutralStab;

impl MarginTheorem for Prop42NeutralStab {
    fn id(&self) -> &'static str {
        "prop42_neutral_stab"
    }
    fn title(&self) -> &'static str {
        "robust BIBO stabilization of a neutral system"
    }
    fn needs_controller(&self) -> bool {
        true
    }
    fn applicable(&self, input: &MarginInput) -> Result<(), MarginError> {
        hypothesis_h(self, input.sys)?;
        needs_cl(self, input).map(|_| ())
    }
    fn evaluate(&self, input: &MarginInput, alpha: f64) -> Result<Evaluation, MarginError> {
        let mut ev = Evaluation::default();
        let cl = needs_cl(self, input)?;
        let n = hypothesis_h(self, input.sys)?;
        let id = self.id();
        let mcld = need(&mut ev, id, "minfd_cl", cl.gains.minfd)?;
        let mk = need(&mut ev, id, "minf_k", Some(cl.minf_k))?;
        let r = radii(input.sys, input.pert, alpha);
        let q = r.s_mu + r.s_nu * mk + 2.0 * n + r.e;
        ev.q("alpha", alpha);
        ev.q("sum_mu_a", r.s_mu);
        ev.q("sum_nu_b", r.s_nu);
        ev.q("sum_neutral", n);
        ev.q("eps_h", r.e);
        ev.q("perturbation_weight", q);
        ev.q("condition", mcld * q);
        ev.conditions.push(Condition::new(
            "closed_loop",
            "Minfd_cl * (sum mu_j |A_j| + sum nu_k |B_k| Minf_K + 2 sum |A_-l| + eps |h|)",
            mcld * q,
        ));
        ev.statement_variant
            .insert("condition_literal".into(), mcld * (r.s_mu + r.s_nu * mk + 2.0 + n));
        Ok(ev)
    }
}

/// Location of the neutral root chains; independent of the radii.
pub struct Prop43Chains;

impl MarginTheorem for Prop43Chains {
    fn id(&self) -> &'static str {
        "prop43"
    }
    fn title(&self) -> &'static str {
        "finitely many poles right of a vertical line left of the axis"
    }
    fn scalable(&self) -> bool {
        false
    }
    fn applicable(&self, input: &MarginInput) -> Result<(), MarginError> {
        if !input.sys.is_neutral() {
            return Err(not_applicable(self, "the system has no neutral terms"));
        }
        match chain_location(input.sys) {
            Err(FreqError::NotCommensurate) => Err(not_applicable(self, "neutral delays are not commensurate")),
            Err(e) => Err(e.into()),
            Ok(_) => Ok(()),
        }
    }
    fn evaluate(&self, input: &MarginInput, _alpha: f64) -> Result<Evaluation, MarginError> {
        let ch = chain_location(input.sys)?;
        let mut ev = Evaluation::default();
        let min = ch.min_modulus();
        ev.q("min_modulus", min);
        ev.q("chain_abscissa", ch.abscissa);
        ev.q("base_delay", ch.base_delay);
        ev.q("sum_neutral", input.sys.neutral_norm_sum());
        ev.conditions.push(Condition::new("chains", "1 / min |z| over roots of det(I + sum A_-l z^m_l)", 1.0 / min));
        Ok(ev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;
    use crate::model::{m1, DistributedKernel};

    fn gh(h: f64) -> DelaySystem {
        DelaySystem::scalar(0.0, 1.0).with_discrete(h, m1(-1.0))
    }

    fn unit_mu(sys: &DelaySystem) -> PerturbationBounds {
        let mut p = PerturbationBounds::zero(sys);
        p.mu = vec![1.0; sys.discrete.len()];
        p.one_sided = true;
        p
    }

    fn gains(m2: f64, m2d: f64, minf: f64, minfd: f64) -> GainSet {
        GainSet {
            m2: Some(GainEstimate::exact(m2)),
            m2d: Some(GainEstimate::exact(m2d)),
            minf: Some(GainEstimate::exact(minf)),
            minfd: Some(GainEstimate::exact(minfd)),
            ..GainSet::default()
        }
    }

    fn run(id: &str, sys: &DelaySystem, pert: &PerturbationBounds, g: &GainSet) -> MarginReport {
        let input = MarginInput { sys, pert, gains: g, closed_loop: None };
        Registry::standard().run(id, &input).unwrap()
    }

    #[test]
    fn hinf_scaling_is_reciprocal_gain() {
        let sys = gh(1.0);
        let r = run("thm31_hinf", &sys, &unit_mu(&sys), &gains(2.3, 3.129, 2.9, 3.9));
        let a = r.admissible_scaling.unwrap().0;
        assert!((a - 1.0 / 3.129).abs() < 2e-4, "{a}");
        assert!(!r.certified);
    }

    #[test]
    fn two_equal_delays() {
        let sys = DelaySystem::scalar(-5.0, 1.0)
            .with_discrete(1.0, m1(1.0))
            .with_discrete(2.0, m1(-1.0));
        let r = run("thm31_hinf", &sys, &unit_mu(&sys), &gains(1.0, 2.0, 1.0, 3.0));
        assert!((r.admissible_scaling.unwrap().0 - 0.25).abs() < 1e-4);
    }

    #[test]
    fn no_state_delays_is_unbounded() {
        let sys = DelaySystem::scalar(-1.0, 1.0);
        let r = run("thm31_hinf", &sys, &PerturbationBounds::zero(&sys), &gains(1.0, 1.0, 1.0, 2.0));
        assert!(r.admissible_scaling.unwrap().is_infinite());
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"admissible_scaling\":\"inf\""));
    }

    #[test]
    fn bibo_distributed_failure() {
        let sys = gh(1.0).with_distributed(DistributedKernel::new(1.0, vec![1.0]));
        let mut p = unit_mu(&sys);
        p.mu = vec![0.0];
        p.eps = 0.5;
        let r = run("thm31_bibo", &sys, &p, &gains(1.0, 1.0, 3.0, 4.0));
        assert!(!r.certified);
        assert!((r.quantities["M_tilde"] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn thm32_arithmetic_and_reduction() {
        let sys = DelaySystem::scalar(-1.0, 1.0).with_neutral(1.0, m1(0.1));
        let r = run("thm32_neutral_bibo", &sys, &PerturbationBounds::zero(&sys), &gains(1.0, 1.0, 1.0, 2.0));
        assert!((r.quantities["M_double_prime"] - 0.4).abs() < 1e-12);
        assert!(r.certified);

        let ret = gh(1.0);
        let p = unit_mu(&ret).scaled(0.2);
        let g = gains(2.3, 3.1, 2.9, 3.9);
        let a = run("thm32_neutral_bibo", &ret, &p, &g);
        let b = run("thm31_bibo", &ret, &p, &g);
        assert_eq!(a.quantities["M_double_prime"], b.quantities["M"]);
    }

    #[test]
    fn neutral_term_is_not_scaled() {
        let sys = DelaySystem::scalar(-1.0, 1.0)
            .with_neutral(1.0, m1(0.3))
            .with_discrete(0.5, m1(0.1));
        let r = run("thm32_neutral_bibo", &sys, &unit_mu(&sys), &gains(1.0, 1.0, 1.0, 2.0));
        assert_eq!(r.admissible_scaling.unwrap().0, 0.0);
    }

    #[test]
    fn inapplicable_theorems() {
        let sys = DelaySystem::scalar(-1.0, 1.0).with_neutral(1.0, m1(0.3));
        let g = gains(1.0, 1.0, 1.0, 2.0);
        let p = PerturbationBounds::zero(&sys);
        let input = MarginInput { sys: &sys, pert: &p, gains: &g, closed_loop: None };
        assert!(matches!(Registry::standard().run("thm31_bibo", &input), Err(MarginError::NotApplicable { .. })));
        assert!(matches!(Registry::standard().run("thm41_hinf", &input), Err(MarginError::NotApplicable { .. })));
        assert!(matches!(Registry::standard().run("nope", &input), Err(MarginError::Unknown(_))));
    }

    #[test]
    fn prop43_examples() {
        let sys = DelaySystem::scalar(-1.0, 1.0).with_neutral(1.0, m1(0.5));
        let r = run("prop43", &sys, &PerturbationBounds::zero(&sys), &GainSet::default());
        assert!(r.certified);
        assert!((r.quantities["chain_abscissa"] + 2f64.ln()).abs() < 1e-12);
        assert!(r.admissible_scaling.is_none());
        let big = DelaySystem::scalar(-1.0, 1.0).with_neutral(1.0, m1(1.2));
        let r = run("prop43", &big, &PerturbationBounds::zero(&big), &GainSet::default());
        assert!(!r.certified);
    }

    #[test]
    fn closed_loop_reduction() {
        let sys = gh(2.0);
        let p = unit_mu(&sys);
        let cl = ClosedLoopGains {
            gains: GainSet {
                minfd: Some(GainEstimate::exact(4.0)),
                m2d: Some(GainEstimate::exact(2.2)),
                m2_nom: Some(GainEstimate::exact(2.0)),
                ..GainSet::default()
            },
            minf_k: GainEstimate::exact(1.0),
            m2_k: GainEstimate::exact(1.0),
        };
        let g = GainSet::default();
        let input = MarginInput { sys: &sys, pert: &p, gains: &g, closed_loop: Some(&cl) };
        let reg = Registry::standard();
        let r = reg.run("thm41_bibo", &input).unwrap();
        assert!((r.admissible_scaling.unwrap().0 - 0.25).abs() < 1e-4);
        let h = reg.run("thm41_hinf", &input).unwrap();
        assert!((h.admissible_scaling.unwrap().0 - 1.0 / 2.2).abs() < 1e-4);
        assert!((h.statement_variant["condition"] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn two_sided_band_caps_scaling() {
        let sys = DelaySystem::new(-Mat::identity(1, 1) * 10.0, m1(1.0)).with_discrete(0.1, m1(0.5));
        let mut p = PerturbationBounds::zero(&sys);
        p.mu = vec![1.0];
        let r = run("thm31_hinf", &sys, &p, &gains(0.2, 1.1, 0.2, 2.0));
        assert!((r.admissible_scaling.unwrap().0 - 0.1).abs() < 1e-12);
    }
}
