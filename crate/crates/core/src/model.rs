//! Domain types: nominal delay systems, delay-variation bounds, delay
//! realizations, controllers and computed gain sets.
//!
//! The nominal system is
//!
//! ```text
//! v'(t) + Σ A₋ℓ v'(t − H_ℓ) = A v(t) + Σ A_j v(t − h_j) + ∫₀^D h(θ) v(t − θ) dθ
//!                              + B u(t) + Σ B_k u(t − T_k)
//! ```
//!
//! and the perturbed system replaces every delay by a trajectory living in a
//! band around its nominal value.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{is_zero, spectral_norm, Mat};

/// Largest admissible degree of the distributed-delay kernel polynomial.
pub const MAX_KERNEL_DEGREE: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch in {field}: expected {expected}, found {found}")]
    Dimension {
        field: String,
        expected: String,
        found: String,
    },
    #[error("invalid value in {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("duplicate delay {delay} in {field}")]
    DuplicateDelay { field: String, delay: f64 },
}

impl ModelError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ModelError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Row-major nested-array (de)serialization for dense matrices.
pub(crate) mod matrix_rows {
    use super::Mat;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat, String> {
        let nr = rows.len();
        let nc = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != nc) {
            return Err(format!(
                "ragged matrix: row {i} has {} entries, row 0 has {nc}",
                r.len()
            ));
        }
        Ok(Mat::from_fn(nr, nc, |i, j| rows[i][j]))
    }
}

/// A matrix multiplying a delayed signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayTerm {
    pub delay: f64,
    #[serde(with = "matrix_rows")]
    pub matrix: Mat,
}

impl DelayTerm {
    pub fn new(delay: f64, matrix: Mat) -> Self {
        Self { delay, matrix }
    }
}

/// Scalar polynomial kernel `h(θ) = Σ c_k θ^k` acting on `[0, length]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributedKernel {
    #[serde(rename = "D")]
    pub length: f64,
    pub coeffs: Vec<f64>,
}

impl DistributedKernel {
    pub fn new(length: f64, coeffs: Vec<f64>) -> Self {
        Self { length, coeffs }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, theta: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * theta + c)
    }

    /// `max |h(θ)|` over `[0, upper]`, located through the real critical points of `h`.
    pub fn sup_abs(&self, upper: f64) -> f64 {
        let mut best = self.eval(0.0).abs().max(self.eval(upper).abs());
        for r in self.critical_points(upper) {
            best = best.max(self.eval(r).abs());
        }
        best
    }

    /// `∫₀^upper |h(θ)| dθ`, exact up to root-finding accuracy.
    pub fn l1_abs(&self, upper: f64) -> f64 {
        let mut cuts = vec![0.0];
        let mut roots = crate::freq::poly::real_roots_in(&self.coeffs, 0.0, upper);
        roots.sort_by(f64::total_cmp);
        cuts.extend(roots);
        cuts.push(upper);
        let anti = |x: f64| {
            self.coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| c * x.powi(k as i32 + 1) / (k as f64 + 1.0))
                .sum::<f64>()
        };
        cuts.windows(2).map(|w| (anti(w[1]) - anti(w[0])).abs()).sum()
    }

    fn critical_points(&self, upper: f64) -> Vec<f64> {
        let deriv: Vec<f64> = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| k as f64 * c)
            .collect();
        crate::freq::poly::real_roots_in(&deriv, 0.0, upper)
    }
}

/// Nominal fixed-delay neutral or retarded system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySystem {
    pub n: usize,
    pub p: usize,
    #[serde(rename = "A", with = "matrix_rows")]
    pub a: Mat,
    #[serde(default)]
    pub neutral: Vec<DelayTerm>,
    #[serde(default)]
    pub discrete: Vec<DelayTerm>,
    #[serde(default)]
    pub distributed: Option<DistributedKernel>,
    #[serde(rename = "B", with = "matrix_rows")]
    pub b: Mat,
    #[serde(default)]
    pub input_delays: Vec<DelayTerm>,
}

impl DelaySystem {
    /// `v' = A v + B u` with no delays.
    pub fn new(a: Mat, b: Mat) -> Self {
        Self {
            n: a.nrows(),
            p: b.ncols(),
            a,
            neutral: Vec::new(),
            discrete: Vec::new(),
            distributed: None,
            b,
            input_delays: Vec::new(),
        }
    }

    pub fn scalar(a: f64, b: f64) -> Self {
        Self::new(Mat::from_element(1, 1, a), Mat::from_element(1, 1, b))
    }

    pub fn with_discrete(mut self, delay: f64, m: Mat) -> Self {
        self.discrete.push(DelayTerm::new(delay, m));
        self
    }

    pub fn with_neutral(mut self, delay: f64, m: Mat) -> Self {
        self.neutral.push(DelayTerm::new(delay, m));
        self
    }

    pub fn with_input_delay(mut self, delay: f64, m: Mat) -> Self {
        self.input_delays.push(DelayTerm::new(delay, m));
        self
    }

    pub fn with_distributed(mut self, kernel: DistributedKernel) -> Self {
        self.distributed = Some(kernel);
        self
    }

    pub fn is_neutral(&self) -> bool {
        !self.neutral.is_empty()
    }

    /// `Σ ‖A₋ℓ‖` in the spectral norm.
    pub fn neutral_norm_sum(&self) -> f64 {
        self.neutral.iter().map(|t| spectral_norm(&t.matrix)).sum()
    }

    pub fn discrete_norms(&self) -> Vec<f64> {
        self.discrete.iter().map(|t| spectral_norm(&t.matrix)).collect()
    }

    pub fn input_delay_norms(&self) -> Vec<f64> {
        self.input_delays.iter().map(|t| spectral_norm(&t.matrix)).collect()
    }

    pub fn max_delay(&self) -> f64 {
        self.all_delays().fold(0.0, f64::max)
    }

    /// Smallest strictly positive delay, if any.
    pub fn min_positive_delay(&self) -> Option<f64> {
        self.all_delays()
            .filter(|d| *d > 0.0)
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))))
    }

    fn all_delays(&self) -> impl Iterator<Item = f64> + '_ {
        self.neutral
            .iter()
            .chain(&self.discrete)
            .chain(&self.input_delays)
            .map(|t| t.delay)
            .chain(self.distributed.iter().map(|k| k.length))
    }

    /// Structural checks: dimensions, finiteness, distinct delays, kernel degree.
    pub fn check_structure(&self) -> Result<(), ModelError> {
        let (n, p) = (self.n, self.p);
        if n == 0 || p == 0 {
            return Err(ModelError::invalid("n/p", "dimensions must be positive"));
        }
        check_dims("A", &self.a, n, n)?;
        check_dims("B", &self.b, n, p)?;
        for (field, terms, cols) in [
            ("neutral", &self.neutral, n),
            ("discrete", &self.discrete, n),
            ("input_delays", &self.input_delays, p),
        ] {
            let mut seen: Vec<f64> = Vec::new();
            for (i, t) in terms.iter().enumerate() {
                let name = format!("{field}[{i}]");
                check_dims(&format!("{name}.matrix"), &t.matrix, n, cols)?;
                if !t.delay.is_finite() || t.delay < 0.0 {
                    return Err(ModelError::invalid(
                        format!("{name}.delay"),
                        format!("delay must be finite and nonnegative, got {}", t.delay),
                    ));
                }
                if field != "discrete" && t.delay == 0.0 {
                    return Err(ModelError::invalid(
                        format!("{name}.delay"),
                        "delay must be strictly positive",
                    ));
                }
                if seen.contains(&t.delay) {
                    return Err(ModelError::DuplicateDelay {
                        field: field.to_string(),
                        delay: t.delay,
                    });
                }
                seen.push(t.delay);
            }
        }
        if let Some(k) = &self.distributed {
            if !(k.length.is_finite() && k.length > 0.0) {
                return Err(ModelError::invalid("distributed.D", "length must be positive"));
            }
            if k.coeffs.is_empty() {
                return Err(ModelError::invalid("distributed.coeffs", "empty polynomial"));
            }
            if k.degree() > MAX_KERNEL_DEGREE {
                return Err(ModelError::invalid(
                    "distributed.coeffs",
                    format!("degree {} exceeds {MAX_KERNEL_DEGREE}", k.degree()),
                ));
            }
            if k.coeffs.iter().any(|c| !c.is_finite()) {
                return Err(ModelError::invalid("distributed.coeffs", "non-finite coefficient"));
            }
        }
        Ok(())
    }
}

fn check_dims(field: &str, m: &Mat, rows: usize, cols: usize) -> Result<(), ModelError> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(ModelError::Dimension {
            field: field.to_string(),
            expected: format!("{rows}x{cols}"),
            found: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::invalid(field, "non-finite entry"));
    }
    Ok(())
}

/// Radii of the delay bands around the nominal delays.
///
/// With `one_sided = false` each delay lives in `[nominal − r, nominal + r]`;
/// with `one_sided = true` it lives in `[nominal, nominal + r]`. Both shapes
/// give the same bound `|delay − nominal| ≤ r` used by the margin conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PerturbationBounds {
    #[serde(default)]
    pub eta: Vec<f64>,
    #[serde(default)]
    pub mu: Vec<f64>,
    #[serde(default)]
    pub eps: f64,
    #[serde(default)]
    pub nu: Vec<f64>,
    #[serde(default)]
    pub one_sided: bool,
}

impl PerturbationBounds {
    /// All radii zero, sized for `sys`.
    pub fn zero(sys: &DelaySystem) -> Self {
        Self {
            eta: vec![0.0; sys.neutral.len()],
            mu: vec![0.0; sys.discrete.len()],
            eps: 0.0,
            nu: vec![0.0; sys.input_delays.len()],
            one_sided: false,
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let s = |v: &Vec<f64>| v.iter().map(|x| x * alpha).collect();
        Self {
            eta: s(&self.eta),
            mu: s(&self.mu),
            eps: self.eps * alpha,
            nu: s(&self.nu),
            one_sided: self.one_sided,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.eps == 0.0
            && self.eta.iter().chain(&self.mu).chain(&self.nu).all(|r| *r == 0.0)
    }

    /// `(lower, upper)` band for a nominal delay with radius `r`.
    pub fn band(&self, nominal: f64, r: f64) -> (f64, f64) {
        if self.one_sided {
            (nominal, nominal + r)
        } else {
            (nominal - r, nominal + r)
        }
    }

    /// Largest uniform scaling of the radii that keeps every band's lower end nonnegative.
    pub fn band_scaling_cap(&self, sys: &DelaySystem) -> f64 {
        if self.one_sided {
            return f64::INFINITY;
        }
        let mut cap = f64::INFINITY;
        let pairs = sys
            .neutral
            .iter()
            .map(|t| t.delay)
            .zip(self.eta.iter().copied())
            .chain(sys.discrete.iter().map(|t| t.delay).zip(self.mu.iter().copied()))
            .chain(
                sys.input_delays
                    .iter()
                    .map(|t| t.delay)
                    .zip(self.nu.iter().copied()),
            )
            .chain(sys.distributed.iter().map(|k| (k.length, self.eps)));
        for (nominal, r) in pairs {
            if r > 0.0 {
                cap = cap.min(nominal / r);
            }
        }
        cap
    }

    fn check_lengths(&self, sys: &DelaySystem) -> Result<(), ModelError> {
        for (field, v, expected) in [
            ("perturbation.eta", &self.eta, sys.neutral.len()),
            ("perturbation.mu", &self.mu, sys.discrete.len()),
            ("perturbation.nu", &self.nu, sys.input_delays.len()),
        ] {
            if v.len() != expected {
                return Err(ModelError::Dimension {
                    field: field.to_string(),
                    expected: format!("{expected} radii"),
                    found: format!("{} radii", v.len()),
                });
            }
            if let Some(r) = v.iter().find(|r| !r.is_finite() || **r < 0.0) {
                return Err(ModelError::invalid(field, format!("radius {r} must be finite and nonnegative")));
            }
        }
        if !self.eps.is_finite() || self.eps < 0.0 {
            return Err(ModelError::invalid("perturbation.eps", "radius must be finite and nonnegative"));
        }
        if self.eps > 0.0 && sys.distributed.is_none() {
            return Err(ModelError::invalid("perturbation.eps", "no distributed term to perturb"));
        }
        Ok(())
    }
}

/// Time profile of one delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    Constant {
        value: f64,
    },
    Sinusoid {
        center: f64,
        amplitude: f64,
        omega: f64,
        phase: f64,
    },
    PiecewiseLinear {
        times: Vec<f64>,
        values: Vec<f64>,
    },
}

impl Trajectory {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Trajectory::Constant { value } => *value,
            Trajectory::Sinusoid {
                center,
                amplitude,
                omega,
                phase,
            } => center + amplitude * (omega * t + phase).sin(),
            Trajectory::PiecewiseLinear { times, values } => {
                if times.is_empty() {
                    return 0.0;
                }
                if t <= times[0] {
                    return values[0];
                }
                let last = times.len() - 1;
                if t >= times[last] {
                    return values[last];
                }
                let k = times.partition_point(|x| *x <= t) - 1;
                let w = (t - times[k]) / (times[k + 1] - times[k]);
                values[k] + w * (values[k + 1] - values[k])
            }
        }
    }

    /// `(min, max)` of the trajectory over `t ≥ 0`.
    pub fn range(&self) -> (f64, f64) {
        match self {
            Trajectory::Constant { value } => (*value, *value),
            Trajectory::Sinusoid {
                center, amplitude, ..
            } => (center - amplitude.abs(), center + amplitude.abs()),
            Trajectory::PiecewiseLinear { values, .. } => values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v))),
        }
    }

    fn check(&self, field: &str) -> Result<(), ModelError> {
        if let Trajectory::PiecewiseLinear { times, values } = self {
            if times.len() != values.len() || times.is_empty() {
                return Err(ModelError::invalid(field, "times and values must be nonempty and equally long"));
            }
            if times.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(ModelError::invalid(field, "sample times must be strictly increasing"));
            }
        }
        let (lo, hi) = self.range();
        if !lo.is_finite() || !hi.is_finite() {
            return Err(ModelError::invalid(field, "non-finite delay value"));
        }
        Ok(())
    }
}

/// One trajectory per delay of a [`DelaySystem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayRealization {
    pub neutral: Vec<Trajectory>,
    pub discrete: Vec<Trajectory>,
    pub distributed: Option<Trajectory>,
    pub input: Vec<Trajectory>,
}

impl DelayRealization {
    /// Every delay frozen at its nominal value.
    pub fn nominal(sys: &DelaySystem) -> Self {
        let c = |t: &DelayTerm| Trajectory::Constant { value: t.delay };
        Self {
            neutral: sys.neutral.iter().map(c).collect(),
            discrete: sys.discrete.iter().map(c).collect(),
            distributed: sys
                .distributed
                .as_ref()
                .map(|k| Trajectory::Constant { value: k.length }),
            input: sys.input_delays.iter().map(c).collect(),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.all().all(|t| matches!(t, Trajectory::Constant { .. }))
    }

    pub fn all(&self) -> impl Iterator<Item = &Trajectory> {
        self.neutral
            .iter()
            .chain(&self.discrete)
            .chain(self.distributed.iter())
            .chain(&self.input)
    }

    /// Checks shape against `sys` and, when `pert` is given, band membership.
    pub fn check(&self, sys: &DelaySystem, pert: Option<&PerturbationBounds>) -> Result<(), ModelError> {
        let groups: [(&str, &Vec<Trajectory>, Vec<f64>, Option<&Vec<f64>>); 3] = [
            ("neutral", &self.neutral, sys.neutral.iter().map(|t| t.delay).collect(), pert.map(|p| &p.eta)),
            ("discrete", &self.discrete, sys.discrete.iter().map(|t| t.delay).collect(), pert.map(|p| &p.mu)),
            ("input", &self.input, sys.input_delays.iter().map(|t| t.delay).collect(), pert.map(|p| &p.nu)),
        ];
        for (field, trajs, nominal, radii) in groups {
            if trajs.len() != nominal.len() {
                return Err(ModelError::Dimension {
                    field: format!("delays.{field}"),
                    expected: format!("{} trajectories", nominal.len()),
                    found: format!("{}", trajs.len()),
                });
            }
            for (i, (tr, h)) in trajs.iter().zip(&nominal).enumerate() {
                let name = format!("delays.{field}[{i}]");
                tr.check(&name)?;
                check_band(&name, tr, *h, radii.map(|r| r[i]), pert)?;
            }
        }
        match (&self.distributed, &sys.distributed) {
            (Some(tr), Some(k)) => {
                tr.check("delays.distributed")?;
                check_band("delays.distributed", tr, k.length, pert.map(|p| p.eps), pert)?;
            }
            (None, None) => {}
            _ => {
                return Err(ModelError::invalid(
                    "delays.distributed",
                    "trajectory presence must match the distributed term",
                ))
            }
        }
        Ok(())
    }
}

fn check_band(
    name: &str,
    tr: &Trajectory,
    nominal: f64,
    radius: Option<f64>,
    pert: Option<&PerturbationBounds>,
) -> Result<(), ModelError> {
    let (lo, hi) = tr.range();
    if lo < 0.0 {
        return Err(ModelError::invalid(name, format!("delay takes negative value {lo}")));
    }
    if nominal > 0.0 && lo <= 0.0 && pert.is_none_or(|p| !p.one_sided) {
        return Err(ModelError::invalid(name, "delay must stay strictly positive"));
    }
    if let (Some(r), Some(p)) = (radius, pert) {
        let (blo, bhi) = p.band(nominal, r);
        let tol = 1e-12 * (1.0 + nominal.abs());
        if lo < blo - tol || hi > bhi + tol {
            return Err(ModelError::invalid(
                name,
                format!("trajectory range [{lo}, {hi}] leaves band [{blo}, {bhi}]"),
            ));
        }
    }
    Ok(())
}

/// Delta-sum convolution kernel `Σ K_i δ(t − t_i)`; `u = 𝒦 ∗ x + r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Controller {
    pub kernel: Vec<DelayTerm>,
}

impl Controller {
    pub fn static_gain(k: Mat) -> Self {
        Self {
            kernel: vec![DelayTerm::new(0.0, k)],
        }
    }

    pub fn check(&self, sys: &DelaySystem) -> Result<(), ModelError> {
        let mut seen = Vec::new();
        for (i, t) in self.kernel.iter().enumerate() {
            let name = format!("controller.kernel[{i}]");
            check_dims(&format!("{name}.matrix"), &t.matrix, sys.p, sys.n)?;
            if !t.delay.is_finite() || t.delay < 0.0 {
                return Err(ModelError::invalid(format!("{name}.delay"), "delay must be finite and nonnegative"));
            }
            if seen.contains(&t.delay) {
                return Err(ModelError::DuplicateDelay {
                    field: "controller.kernel".into(),
                    delay: t.delay,
                });
            }
            seen.push(t.delay);
        }
        Ok(())
    }
}

/// How a gain value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainMethod {
    FrequencySweep,
    ImpulseL1,
    HardyLittlewood,
    ClosedForm,
}

impl fmt::Display for GainMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GainMethod::FrequencySweep => "frequency-sweep",
            GainMethod::ImpulseL1 => "impulse-L1",
            GainMethod::HardyLittlewood => "hardy-littlewood",
            GainMethod::ClosedForm => "closed-form",
        };
        f.write_str(s)
    }
}

/// A gain value together with its provenance and numerical error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainEstimate {
    pub value: f64,
    pub method: GainMethod,
    pub error: f64,
}

impl GainEstimate {
    pub fn new(value: f64, method: GainMethod, error: f64) -> Self {
        Self { value, method, error }
    }

    pub fn exact(value: f64) -> Self {
        Self::new(value, GainMethod::ClosedForm, 0.0)
    }

    /// `value + error`, the side used by every margin check.
    pub fn upper(&self) -> f64 {
        self.value + self.error
    }

    /// The estimate with the smaller certified upper value.
    pub fn tighter(self, other: GainEstimate) -> GainEstimate {
        if other.upper() < self.upper() {
            other
        } else {
            self
        }
    }
}

/// The eight nominal gains (`u→v`, `u→v'`, `w→z`, `w→z'` in L₂ and L∞).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GainSet {
    pub m2_nom: Option<GainEstimate>,
    pub m2_nomd: Option<GainEstimate>,
    pub minf_nom: Option<GainEstimate>,
    pub minf_nomd: Option<GainEstimate>,
    pub m2: Option<GainEstimate>,
    pub m2d: Option<GainEstimate>,
    pub minf: Option<GainEstimate>,
    pub minfd: Option<GainEstimate>,
}

impl GainSet {
    pub fn merge(mut self, other: GainSet) -> GainSet {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(m2_nom, m2_nomd, minf_nom, minf_nomd, m2, m2d, minf, minfd);
        self
    }
}

/// Outcome of one validation check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub neutral_norm_sum: f64,
    pub hypothesis_h: bool,
    pub checks: Vec<ValidationCheck>,
}

/// Report-style validation of Hypothesis (H) and of every delay band's lower end.
///
/// Structural problems (mismatched dimensions, negative delays, wrong radius
/// counts) are hard errors.
pub fn validate(sys: &DelaySystem, pert: &PerturbationBounds) -> Result<ValidationReport, ModelError> {
    sys.check_structure()?;
    pert.check_lengths(sys)?;
    let sum = sys.neutral_norm_sum();
    let hyp = sum < 1.0;
    let mut checks = Vec::new();
    if sys.is_neutral() {
        checks.push(ValidationCheck {
            name: "hypothesis_h".into(),
            passed: hyp,
            value: sum,
            detail: format!("sum of neutral norms {sum:.6} {} 1", if hyp { "<" } else { ">=" }),
        });
    }
    let mut band = |label: String, nominal: f64, r: f64| {
        let (lo, _) = pert.band(nominal, r);
        checks.push(ValidationCheck {
            passed: lo >= 0.0,
            value: lo,
            detail: format!("nominal {nominal} radius {r} lower bound {lo}"),
            name: label,
        });
    };
    for (i, (t, r)) in sys.neutral.iter().zip(&pert.eta).enumerate() {
        band(format!("band.neutral[{i}]"), t.delay, *r);
    }
    for (i, (t, r)) in sys.discrete.iter().zip(&pert.mu).enumerate() {
        band(format!("band.discrete[{i}]"), t.delay, *r);
    }
    if let Some(k) = &sys.distributed {
        band("band.distributed".into(), k.length, pert.eps);
    }
    for (i, (t, r)) in sys.input_delays.iter().zip(&pert.nu).enumerate() {
        band(format!("band.input[{i}]"), t.delay, *r);
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(ValidationReport {
        passed,
        neutral_norm_sum: sum,
        hypothesis_h: hyp || !sys.is_neutral(),
        checks,
    })
}

/// Rounds to 12 significant digits; used to decide when two delays coincide.
pub fn delay_key(d: f64) -> f64 {
    if d == 0.0 {
        return 0.0;
    }
    format!("{d:.11e}").parse().unwrap_or(d)
}

/// Nominal closed loop under `u = 𝒦 ∗ x + r`.
///
/// `B K_i` lands at delay `t_i` and `B_k K_i` at `T_k + t_i`. Products at delay
/// zero are folded into `A`; others merge into an existing discrete term when
/// the delays agree to 12 significant digits, or are appended. All-zero
/// products are dropped, so a zero controller returns `sys` unchanged.
pub fn close_loop(sys: &DelaySystem, ctrl: &Controller) -> Result<DelaySystem, ModelError> {
    sys.check_structure()?;
    ctrl.check(sys)?;
    let mut cl = sys.clone();
    let mut products: Vec<(f64, Mat)> = Vec::new();
    for k in &ctrl.kernel {
        products.push((k.delay, &sys.b * &k.matrix));
        for bk in &sys.input_delays {
            products.push((bk.delay + k.delay, &bk.matrix * &k.matrix));
        }
    }
    for (delay, m) in products {
        if is_zero(&m) {
            continue;
        }
        if delay_key(delay) == 0.0 {
            cl.a += m;
            continue;
        }
        let key = delay_key(delay);
        match cl.discrete.iter_mut().find(|t| delay_key(t.delay) == key) {
            Some(t) => t.matrix += m,
            None => cl.discrete.push(DelayTerm::new(delay, m)),
        }
    }
    Ok(cl)
}

/// Closed-loop perturbation template: the original radii, with zero radius on
/// discrete terms created by the controller.
pub fn closed_loop_perturbation(sys: &DelaySystem, cl: &DelaySystem, pert: &PerturbationBounds) -> PerturbationBounds {
    let mut p = pert.clone();
    p.mu.resize(cl.discrete.len(), 0.0);
    debug_assert!(sys.discrete.len() <= cl.discrete.len());
    p
}

/// `(M∞ᴷ, M₂ᴷ)` for a delta-sum kernel.
///
/// `M∞ᴷ = Σ ‖K_i‖` exactly; `M₂ᴷ = sup_ω ‖Σ K_i e^{−iωt_i}‖` by a frequency
/// sweep, capped by `M∞ᴷ`.
pub fn controller_gains(ctrl: &Controller) -> (GainEstimate, GainEstimate) {
    if ctrl.kernel.is_empty() {
        return (GainEstimate::exact(0.0), GainEstimate::exact(0.0));
    }
    let minf: f64 = ctrl.kernel.iter().map(|k| spectral_norm(&k.matrix)).sum();
    if ctrl.kernel.len() == 1 {
        let v = spectral_norm(&ctrl.kernel[0].matrix);
        return (GainEstimate::exact(minf), GainEstimate::exact(v));
    }
    let tmax = ctrl.kernel.iter().map(|k| k.delay).fold(0.0, f64::max);
    let tmin_gap = {
        let mut d: Vec<f64> = ctrl.kernel.iter().map(|k| k.delay).collect();
        d.sort_by(f64::total_cmp);
        d.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    };
    let omega_max = 2.0 * std::f64::consts::PI / tmin_gap.max(1e-6) * 4.0 + 10.0 / tmax.max(1e-6);
    let eval = |w: f64| {
        let mut acc = crate::linalg::CMat::zeros(ctrl.kernel[0].matrix.nrows(), ctrl.kernel[0].matrix.ncols());
        for k in &ctrl.kernel {
            let e = nalgebra::Complex::from_polar(1.0, -w * k.delay);
            acc += crate::linalg::to_complex(&k.matrix) * e;
        }
        crate::linalg::spectral_norm_c(&acc)
    };
    let sweep = crate::freq::sweep::sup_on_axis(
        eval,
        &crate::freq::sweep::SweepGrid::new(omega_max, tmax.max(1e-3), 0.0),
    );
    let m2 = sweep.value.min(minf);
    let err = sweep.error.min(minf - m2);
    (GainEstimate::exact(minf), GainEstimate::new(m2, GainMethod::FrequencySweep, err))
}

/// Convenience constructor for a 1×1 matrix.
pub fn m1(v: f64) -> Mat {
    DMatrix::from_element(1, 1, v)
}
