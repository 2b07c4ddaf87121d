//! BIBO (L∞-to-L∞) gains: impulse responses with certified exponential
//! tails, their 𝒜-norms, and the Hardy–Littlewood frequency-domain bound.

use std::io::Write;

use nalgebra::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::freq::{self, certify_stability, transfer_derivative_channel, Channel, FreqError, Verdict};
use crate::linalg::{spectral_norm, Mat};
use crate::model::{DelayRealization, DelaySystem, GainEstimate, GainMethod, GainSet};
use crate::quad;
use crate::simulate::{integrate, integrate_from, InputSignal, SimError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BiboError {
    #[error(transparent)]
    Freq(#[from] FreqError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("refusing to compute a gain: nominal system is {0}")]
    NotStable(Verdict),
    #[error("impulse response diverged at t = {0}")]
    Diverged(f64),
    #[error("no L1 certificate: {0}")]
    NoCertificate(String),
    #[error("{0}")]
    Unsupported(String),
    #[error("csv output failed: {0}")]
    Csv(String),
}

/// Tunables for impulse responses and the Hardy–Littlewood bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiboConfig {
    /// Integration step; default is the smallest positive delay over 20,
    /// and at most 1e-3 without delays.
    pub dt: Option<f64>,
    /// Initial horizon; default `30 (1 + largest delay)`.
    pub t_end: Option<f64>,
    /// Horizon doublings allowed while the tail fit is rejected.
    pub max_doublings: u32,
    /// Largest accepted RMS residual of the log-linear tail fit.
    pub tail_residual: f64,
    /// Fraction of the horizon used for the tail fit.
    pub tail_window: f64,
    /// Upper quadrature limit of the Hardy–Littlewood integral, as a multiple of `max(1, Ω)`.
    pub hl_omega_max: f64,
    pub hl_tolerance: f64,
}

impl Default for BiboConfig {
    fn default() -> Self {
        Self {
            dt: None,
            t_end: None,
            max_doublings: 3,
            tail_residual: 1e-2,
            tail_window: 0.2,
            hl_omega_max: 1e4,
            hl_tolerance: 1e-10,
        }
    }
}

impl BiboConfig {
    pub fn step_for(&self, sys: &DelaySystem) -> f64 {
        self.dt.unwrap_or_else(|| match sys.min_positive_delay() {
            Some(d) => d / 20.0,
            None => 1e-3,
        })
    }

    pub fn horizon_for(&self, sys: &DelaySystem) -> f64 {
        self.t_end.unwrap_or(30.0 * (1.0 + sys.max_delay()))
    }
}

/// Exponential envelope `amplitude · e^{rate t}` of `‖g(t)‖_F`, fitted on the
/// local maxima of the last part of the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailModel {
    pub rate: f64,
    pub amplitude: f64,
    /// RMS residual of the log-linear fit.
    pub residual: f64,
    pub window_start: f64,
}

impl TailModel {
    /// `∫_T^∞ amplitude e^{rate t} dt`.
    pub fn integral_from(&self, t: f64) -> f64 {
        if self.amplitude == 0.0 {
            0.0
        } else {
            self.amplitude * (self.rate * t).exp() / -self.rate
        }
    }
}

/// Sampled impulse response `g(t) = g_a(t) + Σ D_i δ(t − t_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseResponse {
    pub channel: Channel,
    pub dt: f64,
    pub t_end: f64,
    pub rows: usize,
    pub cols: usize,
    /// Absolutely continuous part, `rows × cols` row-major per time sample.
    pub samples: Vec<f64>,
    /// Delta part as `(time, matrix)` pairs.
    pub deltas: Vec<(f64, Vec<Vec<f64>>)>,
    /// Jumps `g_a(t⁺) − g_a(t⁻)` of the continuous part; samples hold right limits.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub jumps: Vec<(f64, Vec<Vec<f64>>)>,
    pub tail: TailModel,
}

impl ImpulseResponse {
    pub fn len(&self) -> usize {
        self.samples.len() / (self.rows * self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn at(&self, i: usize) -> Mat {
        let w = self.rows * self.cols;
        Mat::from_row_slice(self.rows, self.cols, &self.samples[i * w..(i + 1) * w])
    }

    fn entry(&self, i: usize, r: usize, c: usize) -> f64 {
        self.samples[i * self.rows * self.cols + r * self.cols + c]
    }

    /// CSV with columns `t, g_1_1, g_1_2, ..` (continuous part only).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), BiboError> {
        let e = |e: csv::Error| BiboError::Csv(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                header.push(format!("g_{}_{}", r + 1, c + 1));
            }
        }
        w.write_record(&header).map_err(e)?;
        let width = self.rows * self.cols;
        for i in 0..self.len() {
            let mut rec = vec![(i as f64 * self.dt).to_string()];
            rec.extend(self.samples[i * width..(i + 1) * width].iter().map(f64::to_string));
            w.write_record(&rec).map_err(e)?;
        }
        w.flush().map_err(|err| BiboError::Csv(err.to_string()))
    }
}

/// The `w`-channel system: unit input matrix, no input delays.
fn disturbance_system(sys: &DelaySystem) -> DelaySystem {
    let mut s = sys.clone();
    s.b = Mat::identity(sys.n, sys.n);
    s.p = sys.n;
    s.input_delays.clear();
    s
}

fn unit(p: usize, j: usize) -> Vec<f64> {
    let mut e = vec![0.0; p];
    e[j] = 1.0;
    e
}

fn mat_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// `A` plus the discrete terms at delay zero: the jump of the `ż` response at `0⁺`.
fn w_a(sys: &DelaySystem) -> Mat {
    let mut a = sys.a.clone();
    for t in sys.discrete.iter().filter(|t| t.delay == 0.0) {
        a += &t.matrix;
    }
    a
}

/// Columns of the response, each `len` samples of `rows` values.
type Columns = Vec<Vec<f64>>;

fn assemble(cols: &Columns, rows: usize) -> Vec<f64> {
    let len = cols.iter().map(|c| c.len() / rows).min().unwrap_or(0);
    let ncols = cols.len();
    let mut out = vec![0.0; len * rows * ncols];
    for (c, col) in cols.iter().enumerate() {
        for i in 0..len {
            for r in 0..rows {
                out[i * rows * ncols + r * ncols + c] = col[i * rows + r];
            }
        }
    }
    out
}

/// Column `j` of the response, as stored `(x, ẋ)` of one simulation.
fn simulate_column(
    sys: &DelaySystem,
    ch: Channel,
    j: usize,
    t_end: f64,
    dt: f64,
) -> Result<(Vec<f64>, Vec<f64>), BiboError> {
    let real = DelayRealization::nominal(sys);
    let ts = if ch.uses_input() {
        // derivative of the step response
        let step = InputSignal::step(1.0).with_direction(unit(sys.p, j));
        integrate(sys, &real, &step, t_end, dt)?
    } else if sys.is_neutral() {
        let w = disturbance_system(sys);
        let step = InputSignal::step(1.0).with_direction(unit(sys.n, j));
        integrate(&w, &DelayRealization::nominal(&w), &step, t_end, dt)?
    } else {
        let w = disturbance_system(sys);
        integrate_from(&w, &DelayRealization::nominal(&w), &InputSignal::zero(), &unit(sys.n, j), t_end, dt)?
    };
    if let Some(t) = ts.divergence {
        return Err(BiboError::Diverged(t));
    }
    Ok((ts.x, ts.dx))
}

/// Impulse response of `ch` on `[0, t_end]` with its tail model.
///
/// Retarded `w` channels start from `z(0⁺) = e_i` with zero history, and the
/// `ż` channel takes the derivative samples plus the delta `I`. Neutral `w→z`
/// and the input channels differentiate a step response instead, which keeps
/// the state continuous. Neutral rate channels carry delta chains and are
/// rejected.
pub fn impulse_response(sys: &DelaySystem, ch: Channel, t_end: f64, dt: f64) -> Result<ImpulseResponse, BiboError> {
    impulse_response_with(sys, ch, t_end, dt, &BiboConfig::default())
}

fn impulse_response_with(
    sys: &DelaySystem,
    ch: Channel,
    t_end: f64,
    dt: f64,
    cfg: &BiboConfig,
) -> Result<ImpulseResponse, BiboError> {
    if ch.is_rate() && sys.is_neutral() {
        return Err(BiboError::Unsupported(format!(
            "{ch} impulse response of a neutral system contains a delta chain"
        )));
    }
    let n = sys.n;
    let cols = if ch.uses_input() { sys.p } else { n };
    let base = ch.state();
    let runs: Vec<(Vec<f64>, Vec<f64>)> = (0..cols)
        .into_par_iter()
        .map(|j| simulate_column(sys, base, j, t_end, dt))
        .collect::<Result<_, _>>()?;

    let mut jumps: Vec<(f64, Mat)> = Vec::new();
    let (samples, deltas) = match ch {
        Channel::DisturbanceToState if !sys.is_neutral() => {
            (assemble(&runs.iter().map(|r| r.0.clone()).collect(), n), Vec::new())
        }
        Channel::DisturbanceToState | Channel::InputToState => {
            if ch.uses_input() {
                jumps.extend(sys.input_delays.iter().map(|t| (t.delay, t.matrix.clone())));
            }
            (assemble(&runs.iter().map(|r| r.1.clone()).collect(), n), Vec::new())
        }
        Channel::DisturbanceToStateRate => {
            jumps.extend(sys.discrete.iter().filter(|t| t.delay > 0.0).map(|t| (t.delay, t.matrix.clone())));
            (
                assemble(&runs.iter().map(|r| r.1.clone()).collect(), n),
                vec![(0.0, mat_rows(&Mat::identity(n, n)))],
            )
        }
        Channel::InputToStateRate => {
            // v̇ = ż-response ∗ (B δ + Σ B_k δ(· − T_k))
            let w = impulse_response_with(sys, Channel::DisturbanceToStateRate, t_end, dt, cfg)?;
            let len = w.len();
            let mut out = vec![0.0; len * n * sys.p];
            let mut terms = vec![(0.0, sys.b.clone())];
            terms.extend(sys.input_delays.iter().map(|t| (t.delay, t.matrix.clone())));
            for (shift, bm) in &terms {
                if *shift > 0.0 {
                    jumps.push((*shift, w_a(sys) * bm));
                }
                for (t, j) in &w.jumps {
                    jumps.push((shift + t, Mat::from_fn(n, n, |a, b| j[a][b]) * bm));
                }
            }
            for i in 0..len {
                let t = i as f64 * dt;
                for (shift, bm) in &terms {
                    let r = t - shift;
                    if r < 0.0 {
                        continue;
                    }
                    let pos = r / dt;
                    let k = pos.floor() as usize;
                    let frac = pos - k as f64;
                    let g = if k + 1 < len && frac > 1e-12 {
                        w.at(k) * (1.0 - frac) + w.at(k + 1) * frac
                    } else {
                        w.at(k.min(len - 1))
                    };
                    let prod = g * bm;
                    for rr in 0..n {
                        for c in 0..sys.p {
                            out[i * n * sys.p + rr * sys.p + c] += prod[(rr, c)];
                        }
                    }
                }
            }
            let deltas = terms.iter().map(|(t, m)| (*t, mat_rows(m))).collect();
            (out, deltas)
        }
    };

    let width = n * cols;
    let len = samples.len() / width;
    let frob: Vec<f64> = (0..len)
        .map(|i| samples[i * width..(i + 1) * width].iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let tail = fit_tail(&frob, dt, cfg.tail_window)?;
    Ok(ImpulseResponse {
        channel: ch,
        dt,
        t_end: (len - 1) as f64 * dt,
        rows: n,
        cols,
        samples,
        deltas,
        jumps: jumps.iter().map(|(t, m)| (*t, mat_rows(m))).collect(),
        tail,
    })
}

/// Below this fraction of the peak the samples are integration noise.
const NOISE_FLOOR: f64 = 1e-10;

/// Log-linear least-squares fit of the local maxima of `f` in the final window.
fn fit_tail(f: &[f64], dt: f64, window: f64) -> Result<TailModel, BiboError> {
    let len = f.len();
    let start = ((1.0 - window) * (len - 1) as f64).floor() as usize;
    let global = f.iter().copied().fold(0.0, f64::max);
    let win = &f[start..];
    let wmax = win.iter().copied().fold(0.0, f64::max);
    if wmax == 0.0 || wmax <= NOISE_FLOOR * global {
        // decayed into rounding noise; the remaining mass is negligible
        return Ok(TailModel {
            rate: -1.0,
            amplitude: 0.0,
            residual: 0.0,
            window_start: start as f64 * dt,
        });
    }
    let mut pts: Vec<(f64, f64)> = (1..win.len().saturating_sub(1))
        .filter(|&k| win[k] >= win[k - 1] && win[k] >= win[k + 1] && win[k] > 1e-2 * NOISE_FLOOR * global)
        .map(|k| ((start + k) as f64 * dt, win[k].ln()))
        .collect();
    if pts.len() < 4 {
        pts = win
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 1e-2 * NOISE_FLOOR * global)
            .map(|(k, v)| ((start + k) as f64 * dt, v.ln()))
            .collect();
    }
    if pts.len() < 2 {
        return Err(BiboError::NoCertificate("too few samples in the tail window".into()));
    }
    let m = pts.len() as f64;
    let (st, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t, b + y));
    let (mt, my) = (st / m, sy / m);
    let (mut stt, mut sty) = (0.0, 0.0);
    for (t, y) in &pts {
        stt += (t - mt) * (t - mt);
        sty += (t - mt) * (y - my);
    }
    let rate = sty / stt;
    let icpt = my - rate * mt;
    let mut ss = 0.0;
    let mut worst: f64 = 0.0;
    for (t, y) in &pts {
        let r = y - (icpt + rate * t);
        ss += r * r;
        worst = worst.max(r);
    }
    let residual = (ss / m).sqrt();
    Ok(TailModel {
        rate,
        amplitude: (icpt + worst).exp(),
        residual,
        window_start: start as f64 * dt,
    })
}

fn tail_ok(t: &TailModel, cfg: &BiboConfig) -> bool {
    t.amplitude == 0.0 || (t.rate < 0.0 && t.residual < cfg.tail_residual)
}

/// Composite Simpson (trapezoid on a leftover interval) and the trapezoid rule.
fn simpson_trap(f: &[f64], dt: f64) -> (f64, f64) {
    let n = f.len();
    if n < 2 {
        return (0.0, 0.0);
    }
    let trap = dt * (f.iter().sum::<f64>() - 0.5 * (f[0] + f[n - 1]));
    let intervals = n - 1;
    let even = intervals - intervals % 2;
    let mut s = 0.0;
    for k in (0..even).step_by(2) {
        s += dt / 3.0 * (f[k] + 4.0 * f[k + 1] + f[k + 2]);
    }
    if even < intervals {
        s += 0.5 * dt * (f[n - 2] + f[n - 1]);
    }
    (s, trap)
}

/// Interior jumps that fall on the sample grid, as `(index, jump)`.
fn grid_jumps(ir: &ImpulseResponse) -> Vec<(usize, Mat)> {
    let len = ir.len();
    ir.jumps
        .iter()
        .filter_map(|(t, j)| {
            let pos = t / ir.dt;
            let k = pos.round();
            ((pos - k).abs() < 1e-6 && k >= 1.0 && (k as usize) < len)
                .then(|| (k as usize, Mat::from_fn(ir.rows, ir.cols, |a, b| j[a][b])))
        })
        .collect()
}

fn dedup_indices(b: &[(usize, Mat)]) -> Vec<usize> {
    let mut v: Vec<usize> = b.iter().map(|(k, _)| *k).collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Simpson and trapezoid over pieces split at `left`, whose entries give the
/// left-limit value at each break.
fn piecewise(f: &[f64], left: &[(usize, f64)], dt: f64) -> (f64, f64) {
    let mut start = 0;
    let (mut s, mut t) = (0.0, 0.0);
    let mut seg: Vec<f64> = Vec::new();
    for (k, lv) in left {
        seg.clear();
        seg.extend_from_slice(&f[start..*k]);
        seg.push(*lv);
        let (a, b) = simpson_trap(&seg, dt);
        s += a;
        t += b;
        start = *k;
    }
    let (a, b) = simpson_trap(&f[start..], dt);
    (s + a, t + b)
}

/// 𝒜-norm certificate of an impulse response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Norm {
    /// Certified induced gain, the smaller of `integrated` and `‖M·1‖₂`.
    pub value: f64,
    pub error: f64,
    /// `M_ij = ∫|g_ij| + Σ|D_ij|`, tail included.
    pub entrywise: Vec<Vec<f64>>,
    /// `∫‖g(t)‖₂ dt + Σ‖D_i‖₂`, tail included.
    pub integrated: f64,
    /// `∫₀^T ‖g(t)‖₂ dt + Σ‖D_i‖₂` without the tail.
    pub truncated: f64,
    pub tail: f64,
}

/// Certified 𝒜-norm of a sampled response.
///
/// Entry integrals use composite Simpson; the tail integral of the Frobenius
/// envelope is added to every entry. The error covers the Simpson–trapezoid
/// gap and the relative misfit of the tail envelope.
pub fn l1_norm(ir: &ImpulseResponse) -> L1Norm {
    let len = ir.len();
    let tail = ir.tail.integral_from(ir.t_end);
    let tail_err = tail * (ir.tail.residual.exp() - 1.0).max(0.0);
    let breaks = grid_jumps(ir);
    let left_at = |k: usize| -> Mat {
        let mut m = ir.at(k);
        for (_, j) in breaks.iter().filter(|(i, _)| *i == k) {
            m -= j;
        }
        m
    };
    let lefts: Vec<(usize, Mat)> = dedup_indices(&breaks).into_iter().map(|k| (k, left_at(k))).collect();
    let mut entry = vec![vec![0.0; ir.cols]; ir.rows];
    let mut quad_err = 0.0;
    for r in 0..ir.rows {
        for c in 0..ir.cols {
            let f: Vec<f64> = (0..len).map(|i| ir.entry(i, r, c).abs()).collect();
            let l: Vec<(usize, f64)> = lefts.iter().map(|(k, m)| (*k, m[(r, c)].abs())).collect();
            let (s, t) = piecewise(&f, &l, ir.dt);
            entry[r][c] = s + tail;
            quad_err = f64::max(quad_err, (s - t).abs());
        }
    }
    let norms: Vec<f64> = (0..len).map(|i| spectral_norm(&ir.at(i))).collect();
    let l: Vec<(usize, f64)> = lefts.iter().map(|(k, m)| (*k, spectral_norm(m))).collect();
    let (s, t) = piecewise(&norms, &l, ir.dt);
    let mut delta_sum = 0.0;
    for (_, d) in &ir.deltas {
        let m = Mat::from_fn(ir.rows, ir.cols, |i, j| d[i][j]);
        delta_sum += spectral_norm(&m);
        for r in 0..ir.rows {
            for c in 0..ir.cols {
                entry[r][c] += d[r][c].abs();
            }
        }
    }
    let truncated = s + delta_sum;
    let integrated = truncated + tail;
    let row_sums: f64 = entry.iter().map(|row| row.iter().sum::<f64>().powi(2)).sum::<f64>().sqrt();
    let value = integrated.min(row_sums);
    let scale = (ir.rows * ir.cols) as f64;
    L1Norm {
        value,
        error: quad_err.max((s - t).abs()) * scale.sqrt() + tail_err,
        entrywise: entry,
        integrated,
        truncated,
        tail,
    }
}

/// Impulse response with an automatically extended horizon, and its 𝒜-norm
/// with a Richardson estimate of the integration error (run at `2Δt`, second
/// order assumed since |g| has kinks).
pub fn certified_l1(sys: &DelaySystem, ch: Channel, cfg: &BiboConfig) -> Result<(ImpulseResponse, L1Norm), BiboError> {
    let dt = cfg.step_for(sys);
    let mut t_end = cfg.horizon_for(sys);
    let mut last_err = String::new();
    for attempt in 0..=cfg.max_doublings {
        let ir = impulse_response_with(sys, ch, t_end, dt, cfg)?;
        let ok = tail_ok(&ir.tail, cfg);
        let norm = l1_norm(&ir);
        let heavy = norm.tail > 1e-3 * norm.value;
        if ok && (!heavy || attempt == cfg.max_doublings) {
            let coarse = impulse_response_with(sys, ch, t_end, 2.0 * dt, cfg).map(|c| l1_norm(&c).value);
            let rich = match coarse {
                Ok(v) => (v - norm.value).abs() / 3.0,
                Err(_) => 0.0,
            };
            let mut norm = norm;
            norm.error += rich;
            return Ok((ir, norm));
        }
        last_err = format!(
            "tail fit rate {:.3e}, residual {:.3e} at T = {t_end}",
            ir.tail.rate, ir.tail.residual
        );
        if ok && heavy && attempt == cfg.max_doublings {
            break;
        }
        t_end *= 2.0;
    }
    Err(BiboError::NoCertificate(last_err))
}

/// Frequency-domain BIBO bound `∫₀^∞ |G′(iω)| dω`, entrywise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardyLittlewood {
    /// `‖M·1‖₂` of the entrywise bounds; the scalar bound for 1×1 channels.
    pub value: f64,
    pub error: f64,
    pub entrywise: Vec<Vec<f64>>,
    /// Integration limit; the remainder is the algebraic tail `C/W`.
    pub omega_max: f64,
    pub tail: f64,
}

/// `½ ∫_{−∞}^{∞} |G′(iω)| dω = ∫₀^∞ |G′(iω)| dω` (real coefficients), which
/// bounds `∫₀^∞ |g(t)| dt`.
///
/// Only channels whose `G′` decays like `ω⁻²` qualify: state outputs of
/// retarded systems, and `u→v` only without active input delays.
pub fn hardy_littlewood_bound(sys: &DelaySystem, ch: Channel) -> Result<HardyLittlewood, BiboError> {
    hardy_littlewood_with(sys, ch, &BiboConfig::default())
}

pub fn hardy_littlewood_with(sys: &DelaySystem, ch: Channel, cfg: &BiboConfig) -> Result<HardyLittlewood, BiboError> {
    if ch.is_rate() || sys.is_neutral() {
        return Err(BiboError::Unsupported(format!(
            "Hardy-Littlewood bound needs an integrable derivative; {ch} of a {} system is not",
            if sys.is_neutral() { "neutral" } else { "retarded" }
        )));
    }
    if ch.uses_input() && sys.input_delays.iter().any(|t| t.delay > 0.0 && !crate::linalg::is_zero(&t.matrix)) {
        return Err(BiboError::Unsupported(
            "Hardy-Littlewood bound: input delays make |G'| decay only like 1/omega".into(),
        ));
    }
    let cert = certify_stability(sys)?;
    if cert.verdict != Verdict::Stable {
        return Err(BiboError::NotStable(cert.verdict));
    }
    let omega = freq::rhp_root_bound(sys)?.max(1.0);
    let w_end = cfg.hl_omega_max * omega;
    let hmax = sys.max_delay();
    let width = if hmax > 0.0 { (std::f64::consts::PI / (2.0 * hmax)).min(1.0) } else { 1.0 };
    let w_dense = (50.0 * omega).max(50.0);
    let mut edges = vec![0.0];
    while *edges.last().unwrap() < w_dense {
        let next = (edges.last().unwrap() + width).min(w_dense);
        edges.push(next);
    }
    while *edges.last().unwrap() < w_end {
        let next = (edges.last().unwrap() * 1.25).min(w_end);
        edges.push(next);
    }

    let rows = sys.n;
    let cols = if ch.uses_input() { sys.p } else { sys.n };
    let deriv = |w: f64| transfer_derivative_channel(sys, ch, Complex::new(0.0, w));
    let mut entry = vec![vec![0.0; cols]; rows];
    let mut err = 0.0;
    let mut tail_c: f64 = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let pieces: Vec<quad::Integral> = edges
                .par_windows(2)
                .map(|e| {
                    let f = |w: f64| deriv(w).map(|g| g[(r, c)].norm()).unwrap_or(f64::INFINITY);
                    quad::adaptive(f, e[0], e[1], cfg.hl_tolerance * (e[1] - e[0]) / w_end, cfg.hl_tolerance, 400)
                })
                .collect();
            entry[r][c] = pieces.iter().map(|p| p.value).sum();
            err += pieces.iter().map(|p| p.error).sum::<f64>();
            // C = sup |G′| ω² over the last decade
            let lo = w_end / 10.0;
            for k in 0..=400 {
                let w = lo + (w_end - lo) * k as f64 / 400.0;
                if let Ok(g) = deriv(w) {
                    tail_c = tail_c.max(g[(r, c)].norm() * w * w);
                }
            }
        }
    }
    if entry.iter().flatten().any(|v| !v.is_finite()) {
        return Err(BiboError::Freq(FreqError::Singular { re: 0.0, im: f64::NAN }));
    }
    let tail = tail_c / w_end;
    for row in entry.iter_mut() {
        for v in row.iter_mut() {
            *v += tail;
        }
    }
    let value = if rows * cols == 1 {
        entry[0][0]
    } else {
        entry.iter().map(|row| row.iter().sum::<f64>().powi(2)).sum::<f64>().sqrt()
    };
    Ok(HardyLittlewood {
        value,
        error: err + 0.1 * tail,
        entrywise: entry,
        omega_max: w_end,
        tail,
    })
}

/// Detailed L∞ gains with all candidate bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinfGains {
    pub gains: GainSet,
    pub candidates: Vec<LinfCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinfCandidate {
    pub gain: String,
    pub estimate: Option<GainEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// `‖A‖ + Σ‖A_j‖ + ∫₀^D |h|`.
pub fn state_coupling(sys: &DelaySystem) -> f64 {
    spectral_norm(&sys.a)
        + sys.discrete_norms().iter().sum::<f64>()
        + sys.distributed.as_ref().map_or(0.0, |k| k.l1_abs(k.length))
}

/// `Minf`, `Minfd`, `Minf_nom`, `Minf_nomd`.
///
/// State gains take the smaller of the impulse-L₁ certificate and the
/// Hardy–Littlewood bound. Rate gains also consider the bound obtained from
/// the system equation, `(c·M + b) / (1 − Σ‖A₋ℓ‖)` with `c` from
/// [`state_coupling`] and `b` the input norm (1 for `w`).
pub fn linf_gains(sys: &DelaySystem, cfg: &BiboConfig) -> Result<LinfGains, BiboError> {
    let cert = certify_stability(sys)?;
    if cert.verdict != Verdict::Stable {
        return Err(BiboError::NotStable(cert.verdict));
    }
    let mut candidates = Vec::new();
    let mut state_gain = |ch: Channel, name: &str| -> Result<GainEstimate, BiboError> {
        let l1 = certified_l1(sys, ch, cfg);
        let hl = hardy_littlewood_with(sys, ch, cfg);
        let mut best: Option<GainEstimate> = None;
        match &l1 {
            Ok((_, n)) => {
                let e = GainEstimate::new(n.value, GainMethod::ImpulseL1, n.error);
                candidates.push(LinfCandidate { gain: name.into(), estimate: Some(e), note: None });
                best = Some(e);
            }
            Err(err) => candidates.push(LinfCandidate { gain: name.into(), estimate: None, note: Some(err.to_string()) }),
        }
        match &hl {
            Ok(h) => {
                let e = GainEstimate::new(h.value, GainMethod::HardyLittlewood, h.error);
                candidates.push(LinfCandidate { gain: name.into(), estimate: Some(e), note: None });
                best = Some(best.map_or(e, |b| b.tighter(e)));
            }
            Err(err) => candidates.push(LinfCandidate { gain: name.into(), estimate: None, note: Some(err.to_string()) }),
        }
        match best {
            Some(b) => Ok(b),
            None => Err(l1.err().expect("failed")),
        }
    };
    let minf = state_gain(Channel::DisturbanceToState, "minf")?;
    let minf_nom = state_gain(Channel::InputToState, "minf_nom")?;

    let c = state_coupling(sys);
    let shrink = 1.0 - sys.neutral_norm_sum();
    let b_norm = spectral_norm(&sys.b) + sys.input_delay_norms().iter().sum::<f64>();
    let mut rate_gain = |ch: Channel, name: &str, m: GainEstimate, b: f64| -> GainEstimate {
        let fallback = GainEstimate::new((c * m.upper() + b) / shrink, GainMethod::ClosedForm, 0.0);
        candidates.push(LinfCandidate {
            gain: name.into(),
            estimate: Some(fallback),
            note: Some("bound from the system equation".into()),
        });
        match certified_l1(sys, ch, cfg) {
            Ok((_, n)) => {
                let e = GainEstimate::new(n.value, GainMethod::ImpulseL1, n.error);
                candidates.push(LinfCandidate { gain: name.into(), estimate: Some(e), note: None });
                fallback.tighter(e)
            }
            Err(err) => {
                candidates.push(LinfCandidate { gain: name.into(), estimate: None, note: Some(err.to_string()) });
                fallback
            }
        }
    };
    let minfd = rate_gain(Channel::DisturbanceToStateRate, "minfd", minf, 1.0);
    let minf_nomd = rate_gain(Channel::InputToStateRate, "minf_nomd", minf_nom, b_norm);
    Ok(LinfGains {
        gains: GainSet {
            minf: Some(minf),
            minfd: Some(minfd),
            minf_nom: Some(minf_nom),
            minf_nomd: Some(minf_nomd),
            ..GainSet::default()
        },
        candidates,
    })
}

/// `M2`, `M2d`, `M2_nom`, `M2_nomd` by H∞ sweeps.
pub fn l2_gains(sys: &DelaySystem, cfg: &freq::HinfConfig) -> Result<GainSet, BiboError> {
    let cert = certify_stability(sys)?;
    if cert.verdict != Verdict::Stable {
        return Err(BiboError::NotStable(cert.verdict));
    }
    let g = |ch| freq::hinf_norm_with(sys, ch, cfg, &cert).map(|h| Some(h.estimate()));
    Ok(GainSet {
        m2_nom: g(Channel::InputToState)?,
        m2_nomd: g(Channel::InputToStateRate)?,
        m2: g(Channel::DisturbanceToState)?,
        m2d: g(Channel::DisturbanceToStateRate)?,
        ..GainSet::default()
    })
}

/// Largest spectral norm of an impulse-response sample, for diagnostics.
pub fn peak_norm(ir: &ImpulseResponse) -> f64 {
    (0..ir.len()).map(|i| spectral_norm(&ir.at(i))).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::m1;

    fn gh(h: f64) -> DelaySystem {
        DelaySystem::scalar(0.0, 1.0).with_discrete(h, m1(-1.0))
    }

    #[test]
    fn first_order_impulse() {
        let sys = DelaySystem::scalar(-1.0, 1.0);
        let ir = impulse_response(&sys, Channel::DisturbanceToState, 30.0, 1e-3).unwrap();
        for i in (0..ir.len()).step_by(997) {
            assert!((ir.at(i)[(0, 0)] - (-(i as f64) * 1e-3).exp()).abs() < 1e-12);
        }
        assert!((ir.tail.rate + 1.0).abs() < 1e-6);
        let n = l1_norm(&ir);
        assert!((n.value - 1.0).abs() < 1e-9, "{}", n.value);
    }

    #[test]
    fn first_order_gains() {
        let g = linf_gains(&DelaySystem::scalar(-1.0, 1.0), &BiboConfig::default()).unwrap().gains;
        assert!((g.minf.unwrap().value - 1.0).abs() < 1e-6);
        assert!((g.minf_nom.unwrap().value - 1.0).abs() < 1e-6, "{:?}", g.minf_nom);
        assert!((g.minfd.unwrap().upper() - 2.0).abs() < 1e-6);
        assert!((g.minf_nomd.unwrap().upper() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn hardy_littlewood_first_order() {
        let hl = hardy_littlewood_bound(&DelaySystem::scalar(-1.0, 1.0), Channel::DisturbanceToState).unwrap();
        assert!((hl.value - std::f64::consts::FRAC_PI_2).abs() < 1e-4, "{}", hl.value);
    }

    #[test]
    fn hardy_littlewood_rejects_neutral() {
        let sys = DelaySystem::scalar(-1.0, 1.0).with_neutral(1.0, m1(0.5));
        assert!(matches!(
            hardy_littlewood_bound(&sys, Channel::DisturbanceToState),
            Err(BiboError::Unsupported(_))
        ));
    }

    #[test]
    fn delayed_feedback_l1_dominates_hinf() {
        let sys = gh(1.0);
        let (_, n) = certified_l1(&sys, Channel::DisturbanceToState, &BiboConfig::default()).unwrap();
        let h = freq::hinf_norm(&sys, Channel::DisturbanceToState).unwrap();
        assert!(n.value + n.error >= h.value);
        assert!(n.value <= 2.96 * 1.05);
    }

    #[test]
    fn scaling_b_doubles_nominal_gain() {
        let sys = gh(0.5);
        let mut big = sys.clone();
        big.b *= 2.0;
        let a = linf_gains(&sys, &BiboConfig::default()).unwrap().gains;
        let b = linf_gains(&big, &BiboConfig::default()).unwrap().gains;
        let (x, y) = (a.minf_nom.unwrap().value, b.minf_nom.unwrap().value);
        assert!((y - 2.0 * x).abs() < 1e-9 * y);
        assert_eq!(a.minf.unwrap().value, b.minf.unwrap().value);
    }

    #[test]
    fn neutral_response_first_interval() {
        let sys = DelaySystem::scalar(-1.0, 1.0).with_neutral(1.0, m1(0.5));
        let ir = impulse_response(&sys, Channel::DisturbanceToState, 40.0, 0.01).unwrap();
        for i in 0..99 {
            assert!((ir.at(i)[(0, 0)] - (-(i as f64) * 0.01).exp()).abs() < 1e-8);
        }
    }
}
