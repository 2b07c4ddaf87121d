//! Test inputs. Every signal is zero for `t < 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;

/// Scalar waveform, multiplied by a unit direction in `ℝᵖ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Waveform {
    Zero,
    Step {
        amplitude: f64,
    },
    Pulse {
        amplitude: f64,
        width: f64,
    },
    Sinusoid {
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Linear chirp from `omega_start` to `omega_end` over `duration`, then constant frequency.
    SineSweep {
        amplitude: f64,
        omega_start: f64,
        omega_end: f64,
        duration: f64,
    },
    /// Piecewise-constant levels redrawn every `dwell` time units.
    RandomSwitching {
        amplitude: f64,
        dwell: f64,
        seed: u64,
    },
    /// Samples on a uniform grid, linearly interpolated, zero past the end.
    Sampled {
        dt: f64,
        values: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSignal {
    #[serde(flatten)]
    pub waveform: Waveform,
    /// Unit direction for scalar waveforms; defaults to `ones/√p`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<f64>>,
}

impl From<Waveform> for InputSignal {
    fn from(waveform: Waveform) -> Self {
        Self {
            waveform,
            direction: None,
        }
    }
}

impl InputSignal {
    pub fn zero() -> Self {
        Waveform::Zero.into()
    }

    pub fn step(amplitude: f64) -> Self {
        Waveform::Step { amplitude }.into()
    }

    pub fn sinusoid(amplitude: f64, omega: f64) -> Self {
        Waveform::Sinusoid {
            amplitude,
            omega,
            phase: 0.0,
        }
        .into()
    }

    pub fn random_switching(amplitude: f64, dwell: f64, seed: u64) -> Self {
        Waveform::RandomSwitching { amplitude, dwell, seed }.into()
    }

    pub fn with_direction(mut self, d: Vec<f64>) -> Self {
        self.direction = Some(d);
        self
    }

    /// Declared `sup_t ‖u(t)‖`, where one exists.
    pub fn amplitude(&self) -> Option<f64> {
        match &self.waveform {
            Waveform::Zero => Some(0.0),
            Waveform::Step { amplitude }
            | Waveform::Pulse { amplitude, .. }
            | Waveform::Sinusoid { amplitude, .. }
            | Waveform::SineSweep { amplitude, .. }
            | Waveform::RandomSwitching { amplitude, .. } => Some(amplitude.abs()),
            Waveform::Sampled { .. } => None,
        }
    }

    pub(crate) fn check(&self, p: usize) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Input(m.to_string()));
        if let Some(d) = &self.direction {
            if d.len() != p {
                return bad(&format!("direction has {} entries, expected {p}", d.len()));
            }
            let nrm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (nrm - 1.0).abs() > 1e-9 {
                return bad("direction must be a unit vector");
            }
        }
        match &self.waveform {
            Waveform::Pulse { width, .. } if !(*width > 0.0) => bad("pulse width must be positive"),
            Waveform::SineSweep { duration, .. } if !(*duration > 0.0) => bad("sweep duration must be positive"),
            Waveform::RandomSwitching { dwell, .. } if !(*dwell > 0.0) => bad("dwell time must be positive"),
            Waveform::Sampled { dt, values } => {
                if !(*dt > 0.0) {
                    return bad("sample step must be positive");
                }
                if values.iter().any(|v| v.len() != p) {
                    return bad(&format!("every sample must have {p} entries"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Precomputes what is needed to evaluate the signal on `[0, t_end]`.
    pub(crate) fn sampler(&self, p: usize, t_end: f64) -> Sampler {
        let direction = self
            .direction
            .clone()
            .unwrap_or_else(|| vec![1.0 / (p as f64).sqrt(); p]);
        let levels = match &self.waveform {
            Waveform::RandomSwitching { dwell, seed, .. } => {
                let count = (t_end / dwell).ceil() as usize + 2;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..count)
                    .map(|_| {
                        if p == 1 || self.direction.is_some() {
                            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                            direction.iter().map(|d| sign * d).collect()
                        } else {
                            random_unit(&mut rng, p)
                        }
                    })
                    .collect()
            }
            _ => Vec::new(),
        };
        Sampler {
            waveform: self.waveform.clone(),
            direction,
            levels,
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 && n <= 1.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub(crate) struct Sampler {
    waveform: Waveform,
    direction: Vec<f64>,
    levels: Vec<Vec<f64>>,
}

impl Sampler {
    pub fn value_into(&self, t: f64, out: &mut [f64]) {
        if t < 0.0 {
            out.fill(0.0);
            return;
        }
        let scalar = match &self.waveform {
            Waveform::Zero => 0.0,
            Waveform::Step { amplitude } => *amplitude,
            Waveform::Pulse { amplitude, width } => {
                if t < *width {
                    *amplitude
                } else {
                    0.0
                }
            }
            Waveform::Sinusoid { amplitude, omega, phase } => amplitude * (omega * t + phase).sin(),
            Waveform::SineSweep {
                amplitude,
                omega_start,
                omega_end,
                duration,
            } => {
                let rate = (omega_end - omega_start) / duration;
                let ph = if t <= *duration {
                    omega_start * t + 0.5 * rate * t * t
                } else {
                    omega_start * duration + 0.5 * rate * duration * duration + omega_end * (t - duration)
                };
                amplitude * ph.sin()
            }
            Waveform::RandomSwitching { amplitude, dwell, .. } => {
                let k = ((t / dwell) as usize).min(self.levels.len() - 1);
                for (o, l) in out.iter_mut().zip(&self.levels[k]) {
                    *o = amplitude * l;
                }
                return;
            }
            Waveform::Sampled { dt, values } => {
                let pos = t / dt;
                let k = pos.floor() as usize;
                if k + 1 >= values.len() {
                    if k + 1 == values.len() && pos == k as f64 {
                        out.copy_from_slice(&values[k]);
                    } else {
                        out.fill(0.0);
                    }
                    return;
                }
                let w = pos - k as f64;
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (1.0 - w) * values[k][i] + w * values[k + 1][i];
                }
                return;
            }
        };
        for (o, d) in out.iter_mut().zip(&self.direction) {
            *o = scalar * d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm_at(s: &Sampler, t: f64, p: usize) -> f64 {
        let mut v = vec![0.0; p];
        s.value_into(t, &mut v);
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn zero_before_origin() {
        let s = InputSignal::step(2.0).sampler(1, 10.0);
        assert_eq!(norm_at(&s, -1e-12, 1), 0.0);
        assert_eq!(norm_at(&s, 0.0, 1), 2.0);
    }

    #[test]
    fn switching_has_declared_amplitude() {
        for p in [1, 3] {
            let sig = InputSignal::random_switching(1.5, 0.3, 7);
            let s = sig.sampler(p, 20.0);
            for i in 0..200 {
                assert!((norm_at(&s, i as f64 * 0.1, p) - 1.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn switching_is_deterministic() {
        let a = InputSignal::random_switching(1.0, 0.5, 3).sampler(2, 10.0);
        let b = InputSignal::random_switching(1.0, 0.5, 3).sampler(2, 10.0);
        let (mut x, mut y) = (vec![0.0; 2], vec![0.0; 2]);
        for i in 0..40 {
            a.value_into(i as f64 * 0.25, &mut x);
            b.value_into(i as f64 * 0.25, &mut y);
            assert_eq!(x, y);
        }
    }

    #[test]
    fn json_tags() {
        let s: InputSignal = serde_json::from_str(r#"{"kind":"sinusoid","amplitude":1,"omega":2}"#).unwrap();
        assert_eq!(s.waveform, Waveform::Sinusoid { amplitude: 1.0, omega: 2.0, phase: 0.0 });
    }
}
