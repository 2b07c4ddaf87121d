//! Frequency-domain engine: characteristic matrix, transfer functions and
//! their derivatives, stability certification, H∞ norms and the location of
//! neutral root chains.

pub mod contour;
pub mod kernel;
pub mod poly;
pub mod sweep;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{solve_c, spectral_norm, spectral_norm_c, to_complex, CMat, Mat, C64};
use crate::model::{DelaySystem, GainEstimate, GainMethod};

pub use contour::{certify_stability, certify_stability_with, ContourConfig, StabilityCertificate, Verdict};
pub use kernel::kernel_transform;
pub use sweep::{SweepGrid, SweepResult};

const SINGULAR_RTOL: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FreqError {
    #[error("characteristic matrix is singular at s = {re} + {im}i (characteristic root)")]
    Singular { re: f64, im: f64 },
    #[error("Hypothesis (H) violated: sum of neutral norms {0} >= 1")]
    HypothesisH(f64),
    #[error("neutral delays are not commensurate")]
    NotCommensurate,
    #[error("no neutral terms")]
    NoNeutralTerms,
    #[error("refusing to compute a gain: nominal system is {0}")]
    NotStable(Verdict),
    #[error("csv output failed: {0}")]
    Csv(String),
}

/// Input/output pair of the nominal system.
///
/// `u→v` uses the input matrices `B`, `B_k`; `w→z` injects an unweighted
/// disturbance directly into the state equation. The `dot` variants take the
/// state derivative as output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "u->v")]
    InputToState,
    #[serde(rename = "u->vdot")]
    InputToStateRate,
    #[serde(rename = "w->z")]
    DisturbanceToState,
    #[serde(rename = "w->zdot")]
    DisturbanceToStateRate,
}

impl Channel {
    pub const ALL: [Channel; 4] = [
        Channel::InputToState,
        Channel::InputToStateRate,
        Channel::DisturbanceToState,
        Channel::DisturbanceToStateRate,
    ];

    pub fn is_rate(self) -> bool {
        matches!(self, Channel::InputToStateRate | Channel::DisturbanceToStateRate)
    }

    pub fn uses_input(self) -> bool {
        matches!(self, Channel::InputToState | Channel::InputToStateRate)
    }

    /// Same channel without the derivative output.
    pub fn state(self) -> Channel {
        if self.uses_input() {
            Channel::InputToState
        } else {
            Channel::DisturbanceToState
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::InputToState => "u->v",
            Channel::InputToStateRate => "u->vdot",
            Channel::DisturbanceToState => "w->z",
            Channel::DisturbanceToStateRate => "w->zdot",
        })
    }
}

impl FromStr for Channel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Channel::ALL
            .into_iter()
            .find(|c| c.to_string() == s)
            .ok_or_else(|| format!("unknown channel '{s}' (expected u->v, u->vdot, w->z, w->zdot)"))
    }
}

fn cexp(z: C64) -> C64 {
    z.exp()
}

/// `Δ(s) = sI + Σ A₋ℓ s e^{−H_ℓ s} − A − Σ A_j e^{−h_j s} − (∫₀^D h(θ)e^{−sθ}dθ) I`.
pub fn char_matrix(sys: &DelaySystem, s: C64) -> CMat {
    let n = sys.n;
    let mut d = CMat::identity(n, n) * s - to_complex(&sys.a);
    for t in &sys.neutral {
        d += to_complex(&t.matrix) * (s * cexp(-s * t.delay));
    }
    for t in &sys.discrete {
        d -= to_complex(&t.matrix) * cexp(-s * t.delay);
    }
    if let Some(k) = &sys.distributed {
        let kv = kernel_transform(&k.coeffs, k.length, s);
        for i in 0..n {
            d[(i, i)] -= kv;
        }
    }
    d
}

/// `dΔ/ds = I + Σ A₋ℓ (1 − sH_ℓ) e^{−sH_ℓ} + Σ A_j h_j e^{−h_j s} + (∫₀^D θh(θ)e^{−sθ}dθ) I`.
pub fn char_matrix_derivative(sys: &DelaySystem, s: C64) -> CMat {
    let n = sys.n;
    let mut d = CMat::identity(n, n);
    for t in &sys.neutral {
        d += to_complex(&t.matrix) * ((Complex::new(1.0, 0.0) - s * t.delay) * cexp(-s * t.delay));
    }
    for t in &sys.discrete {
        d += to_complex(&t.matrix) * (cexp(-s * t.delay) * t.delay);
    }
    if let Some(k) = &sys.distributed {
        let kv = kernel::kernel_moment_transform(&k.coeffs, k.length, s);
        for i in 0..n {
            d[(i, i)] += kv;
        }
    }
    d
}

/// Magnitude reference for the entries of `Δ(s)`, used by the singularity test.
fn char_scale(sys: &DelaySystem, s: C64) -> f64 {
    let mut sc = 1.0 + s.norm() + spectral_norm(&sys.a);
    for t in &sys.neutral {
        sc += spectral_norm(&t.matrix) * s.norm() * (-s.re * t.delay).exp();
    }
    for t in &sys.discrete {
        sc += spectral_norm(&t.matrix) * (-s.re * t.delay).exp();
    }
    if let Some(k) = &sys.distributed {
        sc += kernel_transform(&k.coeffs, k.length, s).norm();
    }
    sc
}

/// `B + Σ B_k e^{−T_k s}` for input channels, `I` for disturbance channels.
pub fn input_matrix(sys: &DelaySystem, ch: Channel, s: C64) -> CMat {
    if ch.uses_input() {
        let mut m = to_complex(&sys.b);
        for t in &sys.input_delays {
            m += to_complex(&t.matrix) * cexp(-s * t.delay);
        }
        m
    } else {
        CMat::identity(sys.n, sys.n)
    }
}

fn input_matrix_derivative(sys: &DelaySystem, ch: Channel, s: C64) -> CMat {
    if ch.uses_input() {
        let mut m = CMat::zeros(sys.n, sys.p);
        for t in &sys.input_delays {
            m -= to_complex(&t.matrix) * (cexp(-s * t.delay) * t.delay);
        }
        m
    } else {
        CMat::zeros(sys.n, sys.n)
    }
}

fn singular(s: C64) -> FreqError {
    FreqError::Singular { re: s.re, im: s.im }
}

/// Transfer matrix of `ch` at `s`, solving with `Δ(s)` rather than inverting it.
pub fn transfer_channel(sys: &DelaySystem, ch: Channel, s: C64) -> Result<CMat, FreqError> {
    let delta = char_matrix(sys, s);
    let rhs = input_matrix(sys, ch, s);
    let g = solve_c(&delta, &rhs, SINGULAR_RTOL, char_scale(sys, s)).ok_or_else(|| singular(s))?;
    Ok(if ch.is_rate() { g * s } else { g })
}

/// `G(s) = Δ(s)⁻¹ (B + Σ B_k e^{−T_k s})`.
pub fn transfer(sys: &DelaySystem, s: C64) -> Result<CMat, FreqError> {
    transfer_channel(sys, Channel::InputToState, s)
}

/// Analytic `d/ds` of the channel transfer.
///
/// `G' = −Δ⁻¹ Δ' Δ⁻¹ Bs − Δ⁻¹ Σ B_k T_k e^{−T_k s}`; rate channels use `(sG)' = G + sG'`.
pub fn transfer_derivative_channel(sys: &DelaySystem, ch: Channel, s: C64) -> Result<CMat, FreqError> {
    let delta = char_matrix(sys, s);
    let scale = char_scale(sys, s);
    let bs = input_matrix(sys, ch, s);
    let g = solve_c(&delta, &bs, SINGULAR_RTOL, scale).ok_or_else(|| singular(s))?;
    let dd = char_matrix_derivative(sys, s);
    let mut rhs = -(dd * &g);
    rhs += input_matrix_derivative(sys, ch, s);
    let gp = solve_c(&delta, &rhs, SINGULAR_RTOL, scale).ok_or_else(|| singular(s))?;
    Ok(if ch.is_rate() { g + gp * s } else { gp })
}

pub fn transfer_derivative(sys: &DelaySystem, s: C64) -> Result<CMat, FreqError> {
    transfer_derivative_channel(sys, Channel::InputToState, s)
}

/// Bound `Ω` on `|s|` for every zero of `det Δ` with `Re s ≥ −σ₀`.
///
/// From `s(I + ΣA₋ℓe^{−H_ℓ s})v = (A + ΣA_j e^{−h_j s} + ĥ(s))v` with
/// `|e^{−hs}| ≤ e^{hσ₀}` on that half-plane.
pub fn root_bound(sys: &DelaySystem, sigma0: f64) -> Result<f64, FreqError> {
    let num = spectral_norm(&sys.a)
        + sys
            .discrete
            .iter()
            .map(|t| spectral_norm(&t.matrix) * (t.delay * sigma0).exp())
            .sum::<f64>()
        + sys
            .distributed
            .as_ref()
            .map_or(0.0, |k| k.l1_abs(k.length) * (k.length * sigma0).exp());
    let neutral: f64 = sys
        .neutral
        .iter()
        .map(|t| spectral_norm(&t.matrix) * (t.delay * sigma0).exp())
        .sum();
    if sys.is_neutral() && neutral >= 1.0 {
        return Err(FreqError::HypothesisH(sys.neutral_norm_sum()));
    }
    Ok(num / (1.0 - neutral))
}

/// `Ω` for the closed right half-plane.
pub fn rhp_root_bound(sys: &DelaySystem) -> Result<f64, FreqError> {
    root_bound(sys, 0.0)
}

/// Location of the root chains of a neutral system with commensurate delays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainLocation {
    /// Common base delay `H`; neutral delays are `m_ℓ H`.
    pub base_delay: f64,
    pub multiples: Vec<usize>,
    /// Moduli of the roots of `det(I + Σ A₋ℓ z^{m_ℓ})`, ascending.
    pub moduli: Vec<f64>,
    /// Rightmost chain axis `Re s = −ln(min modulus)/H`.
    pub abscissa: f64,
}

impl ChainLocation {
    pub fn min_modulus(&self) -> f64 {
        self.moduli.first().copied().unwrap_or(f64::INFINITY)
    }

    /// Whether every chain sits strictly inside the left half-plane.
    pub fn chains_in_lhp(&self) -> bool {
        self.min_modulus() > 1.0
    }
}

/// Finds `H` with every neutral delay an integer multiple of it (relative tolerance 1e-9).
pub fn commensurate_base(delays: &[f64]) -> Option<(f64, Vec<usize>)> {
    let hmin = delays.iter().copied().fold(f64::INFINITY, f64::min);
    if !(hmin > 0.0) {
        return None;
    }
    for q in 1..=64usize {
        let base = hmin / q as f64;
        let mults: Vec<f64> = delays.iter().map(|d| d / base).collect();
        if mults.iter().all(|m| (m - m.round()).abs() <= 1e-9 * m.max(1.0)) {
            return Some((base, mults.iter().map(|m| m.round() as usize).collect()));
        }
    }
    None
}

/// Roots of `det(I + Σ A₋ℓ z^{m_ℓ})` via the companion matrix of the scalar determinant.
pub fn chain_location(sys: &DelaySystem) -> Result<ChainLocation, FreqError> {
    if !sys.is_neutral() {
        return Err(FreqError::NoNeutralTerms);
    }
    let delays: Vec<f64> = sys.neutral.iter().map(|t| t.delay).collect();
    let (base, mults) = commensurate_base(&delays).ok_or(FreqError::NotCommensurate)?;
    let top = *mults.iter().max().expect("nonempty");
    let mut mats = vec![Mat::zeros(sys.n, sys.n); top + 1];
    mats[0] = Mat::identity(sys.n, sys.n);
    for (t, m) in sys.neutral.iter().zip(&mults) {
        mats[*m] += &t.matrix;
    }
    let coeffs = poly::det_matrix_poly(&mats);
    let mut moduli: Vec<f64> = poly::roots(&coeffs).iter().map(|z| z.norm()).collect();
    moduli.sort_by(f64::total_cmp);
    let min = moduli.first().copied().unwrap_or(f64::INFINITY);
    Ok(ChainLocation {
        base_delay: base,
        multiples: mults,
        abscissa: -min.ln() / base,
        moduli,
    })
}

/// Tunables for [`hinf_norm_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HinfConfig {
    /// Multiplies sweep point counts.
    pub density: f64,
    /// `ω_max = max(omega_factor·Ω, delay_factor / largest delay, 10)`.
    pub omega_factor: f64,
    pub delay_factor: f64,
}

impl Default for HinfConfig {
    fn default() -> Self {
        Self {
            density: 1.0,
            omega_factor: 10.0,
            delay_factor: 1e3,
        }
    }
}

/// Result of an H∞ norm computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HinfNorm {
    pub channel: Channel,
    pub value: f64,
    pub error: f64,
    pub peak_omega: f64,
    pub omega_max: f64,
    /// `sup_ω` of the high-frequency limit of the channel.
    pub limit_sup: f64,
    pub evaluations: usize,
}

impl HinfNorm {
    pub fn estimate(&self) -> GainEstimate {
        GainEstimate::new(self.value, GainMethod::FrequencySweep, self.error)
    }
}

/// H∞ norm of a channel of a certified-stable system.
pub fn hinf_norm(sys: &DelaySystem, ch: Channel) -> Result<HinfNorm, FreqError> {
    let cert = certify_stability(sys)?;
    if cert.verdict != Verdict::Stable {
        return Err(FreqError::NotStable(cert.verdict));
    }
    hinf_norm_unchecked(sys, ch, &HinfConfig::default())
}

pub fn hinf_norm_with(sys: &DelaySystem, ch: Channel, cfg: &HinfConfig, cert: &StabilityCertificate) -> Result<HinfNorm, FreqError> {
    if cert.verdict != Verdict::Stable {
        return Err(FreqError::NotStable(cert.verdict));
    }
    hinf_norm_unchecked(sys, ch, cfg)
}

/// High-frequency limit of the channel at `iω`: zero for state outputs;
/// `(I + ΣA₋ℓe^{−iωH_ℓ})⁻¹ (B + ΣB_k e^{−iωT_k})` (or `I` on the right for
/// disturbances) for rate outputs.
fn hf_limit(sys: &DelaySystem, ch: Channel, w: f64) -> CMat {
    let s = Complex::new(0.0, w);
    let rhs = input_matrix(sys, ch, s);
    if !ch.is_rate() {
        return CMat::zeros(rhs.nrows(), rhs.ncols());
    }
    if !sys.is_neutral() {
        return rhs;
    }
    let mut lead = CMat::identity(sys.n, sys.n);
    for t in &sys.neutral {
        lead += to_complex(&t.matrix) * cexp(-s * t.delay);
    }
    solve_c(&lead, &rhs, 1e-14, 1.0).expect("invertible under Hypothesis (H)")
}

fn limit_sup(sys: &DelaySystem, ch: Channel) -> f64 {
    if !ch.is_rate() {
        return 0.0;
    }
    let periodic: Vec<f64> = sys
        .neutral
        .iter()
        .map(|t| t.delay)
        .chain(if ch.uses_input() {
            sys.input_delays.iter().map(|t| t.delay).collect::<Vec<_>>()
        } else {
            Vec::new()
        })
        .collect();
    if periodic.is_empty() {
        return spectral_norm_c(&hf_limit(sys, ch, 1.0));
    }
    let dmin = periodic.iter().copied().fold(f64::INFINITY, f64::min);
    let dmax = periodic.iter().copied().fold(0.0, f64::max);
    let window = 2.0 * std::f64::consts::PI * 64.0 / dmin;
    let grid = SweepGrid::new(window, dmax, 1.0);
    sweep::sup_on_axis(|w| spectral_norm_c(&hf_limit(sys, ch, w)), &grid).value
}

const TAIL_REL: f64 = 1e-4;
const TAIL_WIDEN: f64 = 1e3;

/// Sweep without re-certifying stability; the caller vouches for it.
pub fn hinf_norm_unchecked(sys: &DelaySystem, ch: Channel, cfg: &HinfConfig) -> Result<HinfNorm, FreqError> {
    let omega_bound = root_bound(sys, 0.0)?;
    let dmax = sys.max_delay();
    let mut omega_max = (cfg.omega_factor * omega_bound).max(10.0);
    if dmax > 0.0 {
        omega_max = omega_max.max(cfg.delay_factor / dmax);
    }
    let eval = |w: f64| {
        transfer_channel(sys, ch, Complex::new(0.0, w))
            .map(|g| spectral_norm_c(&g))
            .unwrap_or(f64::INFINITY)
    };
    let lim = limit_sup(sys, ch);
    // beyond ω_max the channel approaches its limit like C/ω; C from the last decade
    let tail_const = |omega_max: f64| {
        (0..64)
            .map(|i| omega_max * (0.1f64).powf(i as f64 / 63.0))
            .filter_map(|w| {
                let g = transfer_channel(sys, ch, Complex::new(0.0, w)).ok()?;
                Some(spectral_norm_c(&(g - hf_limit(sys, ch, w))) * w)
            })
            .fold(0.0, f64::max)
    };
    let omega_start = omega_max;
    let mut rounds = 0;
    let (sw, tail_c) = loop {
        let sw = sweep::sup_on_axis(&eval, &SweepGrid::new(omega_max, dmax, cfg.density));
        if !sw.value.is_finite() {
            return Err(singular(Complex::new(0.0, sw.argmax)));
        }
        let tail_c = tail_const(omega_max);
        // widen the sweep while the tail allowance is large against the gain
        let top = sw.value.max(lim);
        let room = top * (1.0 + TAIL_REL) - lim;
        let want = tail_c / room.max(f64::MIN_POSITIVE);
        rounds += 1;
        if want <= omega_max || rounds > 3 || omega_max >= TAIL_WIDEN * omega_start {
            break (sw, tail_c);
        }
        omega_max = want.min(TAIL_WIDEN * omega_start);
    };
    let tail_sup = lim + tail_c / omega_max;

    let (value, peak) = if lim > sw.value { (lim, f64::INFINITY) } else { (sw.value, sw.argmax) };
    let error = (sw.value + sw.error - value).max(tail_sup - value).max(0.0);
    Ok(HinfNorm {
        channel: ch,
        value,
        error,
        peak_omega: peak,
        omega_max,
        limit_sup: lim,
        evaluations: sw.evaluations,
    })
}

/// Sampled frequency response of a channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyResponse {
    pub channel: Channel,
    pub omega: Vec<f64>,
    pub values: Vec<CMat>,
    pub norms: Vec<f64>,
}

impl FrequencyResponse {
    /// Evaluates `ch` on a strictly increasing grid.
    pub fn compute(sys: &DelaySystem, ch: Channel, omega: &[f64]) -> Result<Self, FreqError> {
        debug_assert!(omega.windows(2).all(|w| w[1] > w[0]));
        let values = omega
            .iter()
            .map(|w| transfer_channel(sys, ch, Complex::new(0.0, *w)))
            .collect::<Result<Vec<_>, _>>()?;
        let norms = values.iter().map(spectral_norm_c).collect();
        Ok(Self {
            channel: ch,
            omega: omega.to_vec(),
            values,
            norms,
        })
    }

    /// Log-spaced grid of `count` points on `[lo, hi]`.
    pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
        let (a, b) = (lo.log10(), hi.log10());
        (0..count)
            .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count.max(2) - 1) as f64))
            .collect()
    }

    /// CSV with columns `omega, re_ij, im_ij …, spectral_norm`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), FreqError> {
        let mut w = csv::Writer::from_writer(out);
        let (r, c) = self.values.first().map_or((0, 0), |m| (m.nrows(), m.ncols()));
        let mut header = vec!["omega".to_string()];
        for i in 0..r {
            for j in 0..c {
                header.push(format!("re_{}_{}", i + 1, j + 1));
                header.push(format!("im_{}_{}", i + 1, j + 1));
            }
        }
        header.push("spectral_norm".into());
        let e = |e: csv::Error| FreqError::Csv(e.to_string());
        w.write_record(&header).map_err(e)?;
        for ((om, m), nrm) in self.omega.iter().zip(&self.values).zip(&self.norms) {
            let mut rec = vec![om.to_string()];
            for i in 0..r {
                for j in 0..c {
                    rec.push(m[(i, j)].re.to_string());
                    rec.push(m[(i, j)].im.to_string());
                }
            }
            rec.push(nrm.to_string());
            w.write_record(&rec).map_err(e)?;
        }
        w.flush().map_err(|err| FreqError::Csv(err.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{m1, DistributedKernel};

    fn gh(h: f64) -> DelaySystem {
        DelaySystem::scalar(0.0, 1.0).with_discrete(h, m1(-1.0))
    }

    fn c(re: f64, im: f64) -> C64 {
        Complex::new(re, im)
    }

    #[test]
    fn char_matrix_scalar_delay() {
        let s = c(0.3, 1.7);
        let d = char_matrix(&gh(0.8), s);
        let want = s + (-s * 0.8).exp();
        assert!((d[(0, 0)] - want).norm() < 1e-15);
    }

    #[test]
    fn char_matrix_at_origin_no_delays() {
        let sys = DelaySystem::new(-Mat::identity(3, 3), Mat::identity(3, 1));
        let d = char_matrix(&sys, c(0.0, 0.0));
        assert_eq!(d, CMat::identity(3, 3));
    }

    #[test]
    fn char_matrix_neutral_scalar() {
        let sys = DelaySystem::scalar(-1.0, 1.0).with_neutral(1.0, m1(0.5));
        let d = char_matrix(&sys, c(1.0, 0.0));
        let want = 1.0 + 0.5 * (-1.0f64).exp() + 1.0;
        assert!((d[(0, 0)].re - want).abs() < 1e-15 && d[(0, 0)].im == 0.0);
    }

    #[test]
    fn transfer_at_origin_is_one() {
        for h in [0.0, 0.5, 1.3] {
            let g = transfer(&gh(h), c(0.0, 0.0)).unwrap();
            assert!((g[(0, 0)] - c(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn transfer_singular_at_root() {
        // ẋ = x: root at s = 1
        let sys = DelaySystem::scalar(1.0, 1.0);
        assert!(matches!(transfer(&sys, c(1.0, 0.0)), Err(FreqError::Singular { .. })));
    }

    #[test]
    fn derivative_rational() {
        let sys = DelaySystem::scalar(-1.0, 1.0);
        let d = transfer_derivative(&sys, c(0.0, 0.0)).unwrap();
        assert!((d[(0, 0)] - c(-1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn derivative_gh_closed_form() {
        // G = 1/(s + e^{−s}); G'(1) = −(1 − e^{−1})/(1 + e^{−1})²
        let d = transfer_derivative(&gh(1.0), c(1.0, 0.0)).unwrap();
        let e = (-1.0f64).exp();
        assert!((d[(0, 0)].re + (1.0 - e) / (1.0 + e).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn derivative_matches_finite_difference_with_all_terms() {
        let sys = DelaySystem::scalar(-2.0, 1.0)
            .with_neutral(0.7, m1(0.3))
            .with_discrete(0.4, m1(0.5))
            .with_input_delay(0.9, m1(-0.4))
            .with_distributed(DistributedKernel::new(1.2, vec![0.2, -0.3, 0.1]));
        for ch in Channel::ALL {
            let s = c(0.2, 1.3);
            let hstep = 1e-6;
            let fp = transfer_channel(&sys, ch, s + hstep).unwrap();
            let fm = transfer_channel(&sys, ch, s - hstep).unwrap();
            let fd = (fp - fm)[(0, 0)] / (2.0 * hstep);
            let an = transfer_derivative_channel(&sys, ch, s).unwrap()[(0, 0)];
            assert!((fd - an).norm() < 1e-7 * an.norm().max(1.0), "{ch}: {fd} vs {an}");
        }
    }

    #[test]
    fn root_bounds() {
        assert!((rhp_root_bound(&gh(0.7)).unwrap() - 1.0).abs() < 1e-15);
        let sys = DelaySystem::new(-3.0 * Mat::identity(2, 2), Mat::identity(2, 1));
        assert!((rhp_root_bound(&sys).unwrap() - 3.0).abs() < 1e-14);
        let neu = DelaySystem::scalar(-1.0, 1.0).with_neutral(1.0, m1(0.5));
        assert!((rhp_root_bound(&neu).unwrap() - 2.0).abs() < 1e-15);
        let bad = DelaySystem::scalar(-1.0, 1.0).with_neutral(1.0, m1(1.0));
        assert!(matches!(rhp_root_bound(&bad), Err(FreqError::HypothesisH(_))));
    }

    #[test]
    fn chain_examples() {
        let sys = DelaySystem::scalar(-1.0, 1.0).with_neutral(1.0, m1(0.5));
        let ch = chain_location(&sys).unwrap();
        assert!((ch.moduli[0] - 2.0).abs() < 1e-12);
        assert!((ch.abscissa + 2f64.ln()).abs() < 1e-12);
        let edge = DelaySystem::scalar(-1.0, 1.0).with_neutral(1.0, m1(1.0));
        let ch = chain_location(&edge).unwrap();
        assert!((ch.moduli[0] - 1.0).abs() < 1e-12);
        assert!(!ch.chains_in_lhp());
        let diag = DelaySystem::new(-Mat::identity(2, 2), Mat::identity(2, 1))
            .with_neutral(0.5, Mat::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.6]));
        let ch = chain_location(&diag).unwrap();
        assert!((ch.moduli[0] - 5.0 / 3.0).abs() < 1e-12);
        assert!((ch.moduli[1] - 10.0 / 3.0).abs() < 1e-12);
        let nc = DelaySystem::scalar(-1.0, 1.0)
            .with_neutral(1.0, m1(0.1))
            .with_neutral(std::f64::consts::SQRT_2, m1(0.1));
        assert_eq!(chain_location(&nc).unwrap_err(), FreqError::NotCommensurate);
    }

    #[test]
    fn hinf_first_order() {
        let sys = DelaySystem::scalar(-1.0, 1.0);
        let m2 = hinf_norm(&sys, Channel::DisturbanceToState).unwrap();
        assert!((m2.value - 1.0).abs() < 1e-12);
        assert_eq!(m2.peak_omega, 0.0);
        let m2d = hinf_norm(&sys, Channel::DisturbanceToStateRate).unwrap();
        assert!((m2d.value - 1.0).abs() < 1e-9);
        assert_eq!(m2d.limit_sup, 1.0);
    }

    #[test]
    fn hinf_refuses_unstable() {
        let sys = DelaySystem::scalar(1.0, 1.0);
        assert!(matches!(hinf_norm(&sys, Channel::InputToState), Err(FreqError::NotStable(_))));
    }

    #[test]
    fn hinf_scales_with_b() {
        let sys = gh(0.5);
        let mut big = sys.clone();
        big.b *= 3.0;
        let a = hinf_norm(&sys, Channel::InputToState).unwrap().value;
        let b = hinf_norm(&big, Channel::InputToState).unwrap().value;
        assert!((b - 3.0 * a).abs() < 1e-12 * b);
    }

    #[test]
    fn response_csv_header() {
        let fr = FrequencyResponse::compute(&gh(1.0), Channel::InputToState, &[0.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        fr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("omega,re_1_1,im_1_1,spectral_norm\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
