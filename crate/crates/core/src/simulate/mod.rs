//! Fixed-step integration of the variable-delay system and empirical gain
//! estimates built on it.
//!
//! The integrator is classical RK4. Past states come from cubic Hermite
//! interpolation on the stored `(x, ẋ)` samples, past derivatives (neutral
//! terms) from linear interpolation on stored `ẋ`. History before `t = 0` is
//! exactly zero; the state at `t = 0` may be nonzero, which is how impulse
//! responses are started.

pub mod falsify;
pub mod input;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Mat;
use crate::model::{DelayRealization, DelaySystem, ModelError, Trajectory};

pub use falsify::{falsify_margin, FalsificationSummary, FalsifyConfig, TrialOutcome};
pub use input::{InputSignal, Waveform};
use input::Sampler;

/// `|x|` beyond this marks a trajectory as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("step {dt} too large: must be below {limit} ({reason})")]
    StepTooLarge { dt: f64, limit: f64, reason: String },
    #[error("invalid input signal: {0}")]
    Input(String),
    #[error("invalid horizon or step: {0}")]
    Horizon(String),
    #[error("Hypothesis (H) violated: sum of neutral norms {0} >= 1")]
    HypothesisH(f64),
    #[error("csv output failed: {0}")]
    Csv(String),
}

/// Uniformly sampled trajectory starting at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub dt: f64,
    pub n: usize,
    pub p: usize,
    /// Row-major samples, `n` (resp. `p`) values per time point.
    pub x: Vec<f64>,
    pub dx: Vec<f64>,
    pub u: Vec<f64>,
    /// First time at which `|x|` exceeded the divergence threshold; the
    /// series stops just before it.
    pub divergence: Option<f64>,
}

fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.x.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn t(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn x_at(&self, i: usize) -> &[f64] {
        &self.x[i * self.n..(i + 1) * self.n]
    }

    pub fn dx_at(&self, i: usize) -> &[f64] {
        &self.dx[i * self.n..(i + 1) * self.n]
    }

    pub fn u_at(&self, i: usize) -> &[f64] {
        &self.u[i * self.p..(i + 1) * self.p]
    }

    /// `max_i ‖x(t_i)‖`; infinite for a divergent run.
    pub fn linf_x(&self) -> f64 {
        if self.divergence.is_some() {
            return f64::INFINITY;
        }
        (0..self.len()).map(|i| euclid(self.x_at(i))).fold(0.0, f64::max)
    }

    pub fn linf_u(&self) -> f64 {
        (0..self.len()).map(|i| euclid(self.u_at(i))).fold(0.0, f64::max)
    }

    /// Discrete `(Σ ‖x(t_i)‖² Δt)^{1/2}`; infinite for a divergent run.
    pub fn l2_x(&self) -> f64 {
        if self.divergence.is_some() {
            return f64::INFINITY;
        }
        (self.x.iter().map(|v| v * v).sum::<f64>() * self.dt).sqrt()
    }

    pub fn l2_u(&self) -> f64 {
        (self.u.iter().map(|v| v * v).sum::<f64>() * self.dt).sqrt()
    }

    /// Exponential growth rate of the `‖ẋ‖` envelope over the second half of
    /// the run: the least-squares slope of `ln max ‖ẋ‖` over eight windows.
    /// Settling and steady oscillation give rates at or below zero; `None`
    /// when the run is too short or `ẋ` vanishes.
    pub fn growth_rate(&self) -> Option<f64> {
        const WINDOWS: usize = 8;
        let len = self.dx.len() / self.n.max(1);
        let start = len / 2;
        let w = (len - start) / WINDOWS;
        if w < 2 {
            return None;
        }
        let mut pts = Vec::with_capacity(WINDOWS);
        for k in 0..WINDOWS {
            let lo = start + k * w;
            let peak = (lo..lo + w)
                .map(|i| euclid(&self.dx[i * self.n..(i + 1) * self.n]))
                .fold(0.0, f64::max);
            if peak > 0.0 {
                pts.push(((lo as f64 + 0.5 * w as f64) * self.dt, peak.ln()));
            }
        }
        if pts.len() < WINDOWS {
            return None;
        }
        let m = pts.len() as f64;
        let (mt, my) = (pts.iter().map(|p| p.0).sum::<f64>() / m, pts.iter().map(|p| p.1).sum::<f64>() / m);
        let (stt, sty) = pts
            .iter()
            .fold((0.0, 0.0), |(a, b), (t, y)| (a + (t - mt) * (t - mt), b + (t - mt) * (y - my)));
        Some(sty / stt)
    }

    /// CSV with columns `t, x_1.., dx_1.., u_1..`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let e = |e: csv::Error| SimError::Csv(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.n).map(|i| format!("x_{i}")));
        header.extend((1..=self.n).map(|i| format!("dx_{i}")));
        header.extend((1..=self.p).map(|i| format!("u_{i}")));
        w.write_record(&header).map_err(e)?;
        for i in 0..self.len() {
            let mut rec = vec![self.t(i).to_string()];
            rec.extend(self.x_at(i).iter().map(f64::to_string));
            rec.extend(self.dx_at(i).iter().map(f64::to_string));
            rec.extend(self.u_at(i).iter().map(f64::to_string));
            w.write_record(&rec).map_err(e)?;
        }
        w.flush().map_err(|err| SimError::Csv(err.to_string()))
    }
}

/// `out += scale · m x`.
fn gemv_acc(m: &Mat, x: &[f64], scale: f64, out: &mut [f64]) {
    for j in 0..m.ncols() {
        let xj = scale * x[j];
        if xj != 0.0 {
            for (i, o) in out.iter_mut().enumerate() {
                *o += m[(i, j)] * xj;
            }
        }
    }
}

struct History {
    n: usize,
    dt: f64,
    xs: Vec<f64>,
    xds: Vec<f64>,
}

impl History {
    /// `x(r)` for `r ≤ t_s`, where `x_i` is the last stored state and `stage`
    /// the RK stage value at `t_s ∈ [t_i, t_i + Δt]`.
    fn state(&self, r: f64, i: usize, stage: &[f64], ts: f64, out: &mut [f64]) {
        if r < 0.0 {
            out.fill(0.0);
            return;
        }
        let n = self.n;
        let ti = i as f64 * self.dt;
        let xi = &self.xs[i * n..(i + 1) * n];
        if r >= ti {
            if ts > ti {
                let w = ((r - ti) / (ts - ti)).min(1.0);
                for k in 0..n {
                    out[k] = xi[k] + w * (stage[k] - xi[k]);
                }
            } else {
                out.copy_from_slice(xi);
            }
            return;
        }
        let k = ((r / self.dt).floor() as usize).min(i - 1);
        let s = (r - k as f64 * self.dt) / self.dt;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = (s3 - 2.0 * s2 + s) * self.dt;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = (s3 - s2) * self.dt;
        let (x0, x1) = (&self.xs[k * n..(k + 1) * n], &self.xs[(k + 1) * n..(k + 2) * n]);
        let d0 = &self.xds[k * n..(k + 1) * n];
        if self.xds.len() < (k + 2) * n {
            // first stage of a step: ẋ at the right end is not stored yet
            for c in 0..n {
                let q = x1[c] - x0[c] - self.dt * d0[c];
                out[c] = x0[c] + s * self.dt * d0[c] + s2 * q;
            }
            return;
        }
        let d1 = &self.xds[(k + 1) * n..(k + 2) * n];
        for c in 0..n {
            out[c] = h00 * x0[c] + h10 * d0[c] + h01 * x1[c] + h11 * d1[c];
        }
    }

    /// `ẋ(r)` for `r` before the last stored derivative sample.
    fn derivative(&self, r: f64, out: &mut [f64]) {
        if r < 0.0 {
            out.fill(0.0);
            return;
        }
        let n = self.n;
        let last = self.xds.len() / n - 1;
        let pos = r / self.dt;
        let k = (pos.floor() as usize).min(last);
        if k == last {
            out.copy_from_slice(&self.xds[k * n..(k + 1) * n]);
            return;
        }
        let w = pos - k as f64;
        let (d0, d1) = (&self.xds[k * n..(k + 1) * n], &self.xds[(k + 1) * n..(k + 2) * n]);
        for c in 0..n {
            out[c] = (1.0 - w) * d0[c] + w * d1[c];
        }
    }
}

struct Rhs<'a> {
    sys: &'a DelaySystem,
    delays: &'a DelayRealization,
    input: Sampler,
    tmp: Vec<f64>,
    tmp2: Vec<f64>,
    ubuf: Vec<f64>,
}

impl Rhs<'_> {
    /// `left` selects the left limit for arguments landing on `t = 0`, where
    /// the zero history jumps to the initial state; the end stage of a step needs it.
    #[allow(clippy::too_many_arguments)]
    fn eval(&mut self, hist: &History, i: usize, ts: f64, x: &[f64], left: bool, out: &mut [f64]) {
        let sys = self.sys;
        let tol = 1e-9 * hist.dt;
        let arg = |r: f64| {
            if r.abs() > tol {
                r
            } else if left {
                -f64::MIN_POSITIVE
            } else {
                0.0
            }
        };
        out.fill(0.0);
        gemv_acc(&sys.a, x, 1.0, out);
        for (term, tr) in sys.discrete.iter().zip(&self.delays.discrete) {
            hist.state(arg(ts - tr.value(ts)), i, x, ts, &mut self.tmp);
            gemv_acc(&term.matrix, &self.tmp, 1.0, out);
        }
        for (term, tr) in sys.neutral.iter().zip(&self.delays.neutral) {
            hist.derivative(arg(ts - tr.value(ts)), &mut self.tmp);
            gemv_acc(&term.matrix, &self.tmp, -1.0, out);
        }
        if let (Some(k), Some(tr)) = (&sys.distributed, &self.delays.distributed) {
            self.distributed(hist, i, ts, x, &k.coeffs, tr.value(ts), out);
        }
        self.input.value_into(ts, &mut self.ubuf);
        gemv_acc(&sys.b, &self.ubuf, 1.0, out);
        for (term, tr) in sys.input_delays.iter().zip(&self.delays.input) {
            self.input.value_into(arg(ts - tr.value(ts)), &mut self.ubuf);
            gemv_acc(&term.matrix, &self.ubuf, 1.0, out);
        }
    }

    /// `out += ∫₀^δ h(θ) x(t_s − θ) dθ`, integrated in `r = t_s − θ`.
    #[allow(clippy::too_many_arguments)]
    fn distributed(&mut self, hist: &History, i: usize, ts: f64, x: &[f64], coeffs: &[f64], delta: f64, out: &mut [f64]) {
        let kern = |theta: f64| coeffs.iter().rev().fold(0.0, |a, c| a * theta + c);
        let dt = hist.dt;
        let ti = i as f64 * dt;
        let lo = (ts - delta).max(0.0);
        if lo >= ts {
            return;
        }
        // Simpson on [a, b] with the state from the history
        let simpson = |a: f64, b: f64, me: &mut Self, out: &mut [f64]| {
            let w = (b - a) / 6.0;
            for (r, c) in [(a, w), (0.5 * (a + b), 4.0 * w), (b, w)] {
                hist.state(r, i, x, ts, &mut me.tmp2);
                let hk = kern(ts - r) * c;
                for (o, v) in out.iter_mut().zip(&me.tmp2) {
                    *o += hk * v;
                }
            }
        };
        let split = lo.max(ti);
        if ts > split {
            simpson(split, ts, self, out);
        }
        if lo < ti {
            let first = (lo / dt).ceil() as usize;
            let first_t = first as f64 * dt;
            if first_t > lo {
                simpson(lo, first_t.min(ti), self, out);
            }
            for k in first..i {
                simpson(k as f64 * dt, (k + 1) as f64 * dt, self, out);
            }
        }
    }
}

struct Stages {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    mid: Vec<f64>,
}

impl Stages {
    fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            mid: vec![0.0; n],
        }
    }

    /// One RK4 step of length `h` from `(t0, x)`; `k1` is reused when given.
    #[allow(clippy::too_many_arguments)]
    fn step(&mut self, rhs: &mut Rhs, hist: &History, i: usize, t0: f64, x: &[f64], h: f64, k1: Option<&Vec<f64>>, out: &mut [f64]) {
        match k1 {
            Some(k) => self.k1.copy_from_slice(k),
            None => rhs.eval(hist, i, t0, x, false, &mut self.k1),
        }
        for (m, (xc, k)) in self.mid.iter_mut().zip(x.iter().zip(&self.k1)) {
            *m = xc + 0.5 * h * k;
        }
        rhs.eval(hist, i, t0 + 0.5 * h, &self.mid, false, &mut self.k2);
        for (m, (xc, k)) in self.mid.iter_mut().zip(x.iter().zip(&self.k2)) {
            *m = xc + 0.5 * h * k;
        }
        rhs.eval(hist, i, t0 + 0.5 * h, &self.mid, false, &mut self.k3);
        for (m, (xc, k)) in self.mid.iter_mut().zip(x.iter().zip(&self.k3)) {
            *m = xc + h * k;
        }
        rhs.eval(hist, i, t0 + h, &self.mid, true, &mut self.k4);
        for c in 0..out.len() {
            out[c] = x[c] + h / 6.0 * (self.k1[c] + 2.0 * self.k2[c] + 2.0 * self.k3[c] + self.k4[c]);
        }
    }
}

/// Off-grid times where the right-hand side jumps: a constant delay `h`
/// reaches the jump of the zero history to `x0` at `t = h`, an input delay
/// reaches the input onset, and neutral delays propagate jumps of `ẋ`.
fn break_times(delays: &DelayRealization, x0: &[f64], t_end: f64, dt: f64) -> Vec<f64> {
    let constant = |tr: &Trajectory| match tr {
        Trajectory::Constant { value } if *value > 0.0 => Some(*value),
        _ => None,
    };
    let mut seeds = vec![0.0];
    if x0.iter().any(|v| *v != 0.0) {
        seeds.extend(delays.discrete.iter().filter_map(constant));
    }
    seeds.extend(delays.input.iter().filter_map(constant));
    let shifts: Vec<f64> = delays.neutral.iter().filter_map(constant).collect();
    let mut all = seeds.clone();
    let mut frontier = seeds;
    while !frontier.is_empty() && all.len() < MAX_BREAKS {
        let mut next = Vec::new();
        for t in &frontier {
            for s in &shifts {
                if t + s < t_end && all.len() + next.len() < MAX_BREAKS {
                    next.push(t + s);
                }
            }
        }
        all.extend(&next);
        frontier = next;
    }
    let tol = 1e-9 * dt;
    let mut out: Vec<f64> = all
        .into_iter()
        .filter(|t| {
            let off = t - (t / dt).round() * dt;
            *t > 0.0 && *t < t_end && off.abs() > tol
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() <= tol);
    out
}

const MAX_BREAKS: usize = 4096;

/// A twentieth of the smallest positive delay value the realization takes
/// (at most 0.05), or 0.01 without delays; neutral delays also cap it at half
/// their smallest value.
pub fn suggested_step(delays: &DelayRealization) -> f64 {
    let lows = delays.all().map(|t| t.range().0).filter(|v| *v > 0.0);
    let mut dt = lows.fold(f64::INFINITY, f64::min);
    dt = if dt.is_finite() { (dt / 20.0).min(0.05) } else { 0.01 };
    for t in &delays.neutral {
        let lo = t.range().0;
        if lo > 0.0 {
            dt = dt.min(0.5 * lo);
        }
    }
    dt
}

/// Integrates from zero state with zero history.
pub fn integrate(
    sys: &DelaySystem,
    delays: &DelayRealization,
    input: &InputSignal,
    t_end: f64,
    dt: f64,
) -> Result<TimeSeries, SimError> {
    integrate_from(sys, delays, input, &vec![0.0; sys.n], t_end, dt)
}

/// Checks the step against the delays; see [`integrate`].
pub fn check_step(delays: &DelayRealization, dt: f64) -> Result<(), SimError> {
    for tr in delays.discrete.iter().chain(&delays.input).chain(delays.distributed.iter()) {
        if let Trajectory::Constant { value } = tr {
            if *value > 0.0 && dt > 0.25 * value * (1.0 + 1e-12) {
                return Err(SimError::StepTooLarge {
                    dt,
                    limit: 0.25 * value,
                    reason: format!("a quarter of the delay {value}"),
                });
            }
        }
    }
    for tr in &delays.neutral {
        let (lo, _) = tr.range();
        if dt >= lo {
            return Err(SimError::StepTooLarge {
                dt,
                limit: lo,
                reason: "smallest neutral delay keeps the derivative recursion explicit".into(),
            });
        }
        if let Trajectory::Constant { value } = tr {
            if dt > 0.25 * value * (1.0 + 1e-12) {
                return Err(SimError::StepTooLarge {
                    dt,
                    limit: 0.25 * value,
                    reason: format!("a quarter of the delay {value}"),
                });
            }
        }
    }
    Ok(())
}

/// Integrates with `x(0) = x0` and zero history on `t < 0`.
pub fn integrate_from(
    sys: &DelaySystem,
    delays: &DelayRealization,
    input: &InputSignal,
    x0: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<TimeSeries, SimError> {
    sys.check_structure()?;
    delays.check(sys, None)?;
    input.check(sys.p)?;
    if !(dt > 0.0) || !dt.is_finite() || !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(SimError::Horizon(format!("t_end = {t_end}, dt = {dt}")));
    }
    if x0.len() != sys.n {
        return Err(SimError::Horizon(format!("initial state has {} entries, expected {}", x0.len(), sys.n)));
    }
    if sys.is_neutral() && sys.neutral_norm_sum() >= 1.0 {
        return Err(SimError::HypothesisH(sys.neutral_norm_sum()));
    }
    check_step(delays, dt)?;

    let (n, p) = (sys.n, sys.p);
    let steps = (t_end / dt).round() as usize;
    let mut rhs = Rhs {
        sys,
        delays,
        input: input.sampler(p, t_end + dt),
        tmp: vec![0.0; n],
        tmp2: vec![0.0; n],
        ubuf: vec![0.0; p],
    };
    let mut hist = History {
        n,
        dt,
        xs: Vec::with_capacity((steps + 1) * n),
        xds: Vec::with_capacity((steps + 1) * n),
    };
    let mut us = Vec::with_capacity((steps + 1) * p);
    hist.xs.extend_from_slice(x0);

    let breaks = break_times(delays, x0, t_end, dt);
    let mut next_break = 0;
    let mut k1 = vec![0.0; n];
    let mut ks = Stages::new(n);
    let mut stage = vec![0.0; n];
    let mut ubuf = vec![0.0; p];
    let mut divergence = None;
    for i in 0..=steps {
        let ti = i as f64 * dt;
        let xi: Vec<f64> = hist.xs[i * n..(i + 1) * n].to_vec();
        rhs.eval(&hist, i, ti, &xi, false, &mut k1);
        hist.xds.extend_from_slice(&k1);
        rhs.input.value_into(ti, &mut ubuf);
        us.extend_from_slice(&ubuf);
        if i == steps {
            break;
        }
        // split the step at discontinuities of the right-hand side
        let (mut t0, mut x) = (ti, xi);
        let mut first = Some(&k1);
        while next_break < breaks.len() && breaks[next_break] < ti + dt {
            let tb = breaks[next_break];
            next_break += 1;
            if tb > t0 {
                ks.step(&mut rhs, &hist, i, t0, &x, tb - t0, first.take(), &mut stage);
                x.copy_from_slice(&stage);
                t0 = tb;
            }
        }
        ks.step(&mut rhs, &hist, i, t0, &x, ti + dt - t0, first, &mut stage);
        if stage.iter().any(|v| !(v.abs() <= DIVERGENCE_THRESHOLD)) {
            divergence = Some(ti + dt);
            break;
        }
        hist.xs.extend_from_slice(&stage);
    }
    Ok(TimeSeries {
        dt,
        n,
        p,
        x: hist.xs,
        dx: hist.xds,
        u: us,
        divergence,
    })
}

/// Lower bound on a gain from a family of simulations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalGain {
    pub value: f64,
    /// Index of the input attaining `value`.
    pub worst_input: Option<usize>,
    pub diverged: bool,
}

/// `max ‖x‖_∞ / ‖u‖_∞` over `inputs`; divergence gives `+∞`.
pub fn empirical_linf_gain(
    sys: &DelaySystem,
    delays: &DelayRealization,
    inputs: &[InputSignal],
    t_end: f64,
    dt: f64,
) -> Result<EmpiricalGain, SimError> {
    ratio_gain(sys, delays, inputs, t_end, dt, |ts| (ts.linf_x(), ts.linf_u()))
}

/// `max ‖x‖₂ / ‖u‖₂` over random switching inputs and, when given, sinusoids
/// at `peak_omega`; divergence gives `+∞`, a zero input gives 0.
pub fn empirical_l2_gain(
    sys: &DelaySystem,
    delays: &DelayRealization,
    t_end: f64,
    dt: f64,
    peak_omega: Option<f64>,
    seed: u64,
) -> Result<EmpiricalGain, SimError> {
    let mut inputs = Vec::new();
    if let Some(w) = peak_omega {
        let mut dirs = vec![None];
        if sys.p > 1 {
            dirs.extend((0..sys.p).map(|k| {
                let mut e = vec![0.0; sys.p];
                e[k] = 1.0;
                Some(e)
            }));
        }
        for d in dirs {
            for phase in [0.0, std::f64::consts::FRAC_PI_2] {
                inputs.push(InputSignal {
                    waveform: Waveform::Sinusoid {
                        amplitude: 1.0,
                        omega: w,
                        phase,
                    },
                    direction: d.clone(),
                });
            }
        }
    }
    for (k, dwell) in [0.25, 1.0, 4.0].into_iter().enumerate() {
        inputs.push(InputSignal::random_switching(1.0, dwell, seed.wrapping_add(k as u64)));
    }
    ratio_gain(sys, delays, &inputs, t_end, dt, |ts| (ts.l2_x(), ts.l2_u()))
}

fn ratio_gain<F: Fn(&TimeSeries) -> (f64, f64)>(
    sys: &DelaySystem,
    delays: &DelayRealization,
    inputs: &[InputSignal],
    t_end: f64,
    dt: f64,
    norms: F,
) -> Result<EmpiricalGain, SimError> {
    let mut best = EmpiricalGain {
        value: 0.0,
        worst_input: None,
        diverged: false,
    };
    for (k, inp) in inputs.iter().enumerate() {
        let ts = integrate(sys, delays, inp, t_end, dt)?;
        let (nx, nu) = norms(&ts);
        let r = if ts.divergence.is_some() {
            best.diverged = true;
            f64::INFINITY
        } else if nu == 0.0 {
            0.0
        } else {
            nx / nu
        };
        if r > best.value || best.worst_input.is_none() {
            best.value = r;
            best.worst_input = Some(k);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{m1, DistributedKernel};

    fn nominal(sys: &DelaySystem) -> DelayRealization {
        DelayRealization::nominal(sys)
    }

    #[test]
    fn first_order_step() {
        let sys = DelaySystem::scalar(-1.0, 1.0);
        let ts = integrate(&sys, &nominal(&sys), &InputSignal::step(1.0), 5.0, 1e-3).unwrap();
        let err = (0..ts.len())
            .map(|i| (ts.x_at(i)[0] - (1.0 - (-ts.t(i)).exp())).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn zero_input_gives_zero_state() {
        let sys = DelaySystem::scalar(-1.0, 1.0)
            .with_discrete(0.5, m1(0.3))
            .with_neutral(0.7, m1(0.2))
            .with_distributed(DistributedKernel::new(0.4, vec![1.0, -1.0]));
        let ts = integrate(&sys, &nominal(&sys), &InputSignal::zero(), 3.0, 0.01).unwrap();
        assert!(ts.x.iter().chain(&ts.dx).all(|v| *v == 0.0));
    }

    #[test]
    fn method_of_steps_first_interval() {
        // ẋ = −x(t−1) + 1: x = t on [0,1], x = t − (t−1)²/2 on [1,2]
        let sys = DelaySystem::scalar(0.0, 1.0).with_discrete(1.0, m1(-1.0));
        let ts = integrate(&sys, &nominal(&sys), &InputSignal::step(1.0), 2.0, 0.01).unwrap();
        for i in 0..ts.len() {
            let t = ts.t(i);
            let want = if t <= 1.0 { t } else { t - 0.5 * (t - 1.0) * (t - 1.0) };
            assert!((ts.x_at(i)[0] - want).abs() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn neutral_inactive_on_first_interval() {
        // impulse-like start, A₋₁ = 0.5, H = 1, A = −1: x = e^{−t} on [0, 1)
        let sys = DelaySystem::scalar(-1.0, 1.0).with_neutral(1.0, m1(0.5));
        let ts = integrate_from(&sys, &nominal(&sys), &InputSignal::zero(), &[1.0], 0.99, 0.01).unwrap();
        for i in 0..ts.len() {
            assert!((ts.x_at(i)[0] - (-ts.t(i)).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn distributed_constant_kernel() {
        // ẋ = −2x + ∫₀^0.5 x(t−θ)dθ + u; compare Simpson against the half-step run
        let sys = DelaySystem::scalar(-2.0, 1.0).with_distributed(DistributedKernel::new(0.5, vec![1.0]));
        let a = integrate(&sys, &nominal(&sys), &InputSignal::step(1.0), 20.0, 0.01).unwrap();
        // steady state: x(−2 + 0.5) + 1 = 0
        let last = a.x_at(a.len() - 1)[0];
        assert!((last - 1.0 / 1.5).abs() < 1e-8, "{last}");
    }

    #[test]
    fn unstable_delay_diverges() {
        let sys = DelaySystem::scalar(0.0, 1.0).with_discrete(1.6, m1(-1.0));
        let pulse = InputSignal::from(Waveform::Pulse { amplitude: 1.0, width: 0.1 });
        let ts = integrate(&sys, &nominal(&sys), &pulse, 6000.0, 0.08).unwrap();
        assert!(ts.divergence.is_some());
        assert_eq!(ts.linf_x(), f64::INFINITY);
    }

    #[test]
    fn step_limits() {
        let sys = DelaySystem::scalar(0.0, 1.0).with_discrete(0.1, m1(-1.0));
        let err = integrate(&sys, &nominal(&sys), &InputSignal::step(1.0), 1.0, 0.03).unwrap_err();
        assert!(matches!(err, SimError::StepTooLarge { .. }));
    }

    #[test]
    fn deterministic_and_linear() {
        let sys = DelaySystem::scalar(-1.0, 1.0).with_discrete(0.3, m1(0.5));
        let mut real = nominal(&sys);
        real.discrete[0] = Trajectory::Sinusoid {
            center: 0.3,
            amplitude: 0.1,
            omega: 7.0,
            phase: 0.2,
        };
        let u = InputSignal::random_switching(1.0, 0.2, 11);
        let a = integrate(&sys, &real, &u, 10.0, 0.01).unwrap();
        let b = integrate(&sys, &real, &u, 10.0, 0.01).unwrap();
        assert_eq!(a, b);
        let u3 = InputSignal::random_switching(3.0, 0.2, 11);
        let c = integrate(&sys, &real, &u3, 10.0, 0.01).unwrap();
        for (x, y) in a.x.iter().zip(&c.x) {
            assert!((3.0 * x - y).abs() <= 1e-10 * 3.0);
        }
    }

    #[test]
    fn empirical_first_order() {
        let sys = DelaySystem::scalar(-1.0, 1.0);
        let g = empirical_linf_gain(&sys, &nominal(&sys), &[InputSignal::step(1.0)], 30.0, 0.01).unwrap();
        assert!((g.value - 1.0).abs() < 1e-6);
        let z = empirical_linf_gain(&sys, &nominal(&sys), &[InputSignal::zero()], 1.0, 0.01).unwrap();
        assert_eq!(z.value, 0.0);
    }

    #[test]
    fn csv_columns() {
        let sys = DelaySystem::scalar(-1.0, 1.0);
        let ts = integrate(&sys, &nominal(&sys), &InputSignal::zero(), 0.02, 0.01).unwrap();
        let mut buf = Vec::new();
        ts.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,x_1,dx_1,u_1");
        assert_eq!(text.lines().count(), 4);
    }
}
