//! Ground-truth transient waveforms.
//!
//! Two independent routes produce the output voltage of a driven RC network:
//! closed-form inverse Laplace transforms of the pole-residue terms
//! ([`analytic_response`], [`term_response`]) and trapezoidal integration of
//! the nodal equations ([`numerical_response`]).

use std::collections::HashMap;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, LU};
use serde::{Deserialize, Serialize};

use crate::circuit::{assemble_full, PoleTerm, TransferFunction};
use crate::error::{Error, Result};
use crate::network::RcNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveKind {
    Input,
    Output,
    Correction,
}

/// Uniformly sampled waveform: sample `k` sits at `k·t_span/(n−1)`.
///
/// JSON: `{"t_span": r, "samples": [r...], "kind": "input"|"output"|"correction"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub t_span: f64,
    pub samples: Vec<f64>,
    pub kind: WaveKind,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, t_span: f64, kind: WaveKind) -> Result<Self> {
        let w = Waveform { t_span, samples, kind };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(Error::InvalidArgument("waveform needs at least two samples".into()));
        }
        if !(self.t_span > 0.0) || !self.t_span.is_finite() {
            return Err(Error::NonPositiveTime(self.t_span));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn times(&self) -> Vec<f64> {
        sample_times(self.t_span, self.samples.len())
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Waveform) -> f64 {
        self.samples
            .iter()
            .zip(&other.samples)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("waveform serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let w: Waveform = serde_json::from_str(text)?;
        w.validate()?;
        Ok(w)
    }

    /// Two-column `t,v` CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,v\n");
        for (t, v) in self.times().iter().zip(&self.samples) {
            out.push_str(&format!("{t:e},{v:e}\n"));
        }
        out
    }
}

pub fn sample_times(t_span: f64, n: usize) -> Vec<f64> {
    let last = (n - 1) as f64;
    (0..n).map(|k| t_span * k as f64 / last).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StimulusKind {
    Step,
    SaturatedRamp,
}

/// Driver voltage: an ideal 0→amplitude step at `t = 0+`, or a linear rise
/// over `rise_time` that then holds at `amplitude`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub kind: StimulusKind,
    pub rise_time: f64,
    pub amplitude: f64,
}

impl Stimulus {
    pub fn step(amplitude: f64) -> Self {
        Stimulus { kind: StimulusKind::Step, rise_time: 0.0, amplitude }
    }

    pub fn ramp(rise_time: f64, amplitude: f64) -> Self {
        Stimulus { kind: StimulusKind::SaturatedRamp, rise_time, amplitude }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0) || !self.amplitude.is_finite() {
            return Err(Error::InvalidArgument(format!("amplitude {} is invalid", self.amplitude)));
        }
        match self.kind {
            StimulusKind::Step if self.rise_time != 0.0 => {
                Err(Error::InvalidArgument("a step has zero rise time".into()))
            }
            StimulusKind::SaturatedRamp if !(self.rise_time > 0.0) || !self.rise_time.is_finite() => {
                Err(Error::InvalidArgument(format!("ramp rise time {} must be positive", self.rise_time)))
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self.kind {
            StimulusKind::Step => self.amplitude,
            StimulusKind::SaturatedRamp => self.amplitude * (t / self.rise_time).min(1.0),
        }
    }

    /// The stimulus itself on the sample grid. A step reads 0 at `t = 0`.
    pub fn sample(&self, t_span: f64, n: usize) -> Result<Waveform> {
        let samples = sample_times(t_span, n).into_iter().map(|t| self.value(t)).collect();
        Waveform::new(samples, t_span, WaveKind::Input)
    }

    /// Times where the input or its slope is discontinuous.
    fn breakpoints(&self) -> Vec<f64> {
        match self.kind {
            StimulusKind::Step => vec![0.0],
            StimulusKind::SaturatedRamp => vec![0.0, self.rise_time],
        }
    }
}

/// Accepts `step` or `ramp:<rise seconds>`.
impl FromStr for Stimulus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let stim = match s.split_once(':') {
            None if s == "step" => Stimulus::step(1.0),
            Some(("ramp", rise)) => {
                let rise: f64 = rise
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad ramp rise time `{rise}`")))?;
                Stimulus::ramp(rise, 1.0)
            }
            _ => return Err(Error::InvalidArgument(format!("unknown stimulus `{s}`"))),
        };
        stim.validate()?;
        Ok(stim)
    }
}

fn check_grid(t_span: f64, n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    if !(t_span > 0.0) || !t_span.is_finite() {
        return Err(Error::NonPositiveTime(t_span));
    }
    Ok(())
}

/// Closed-form response of the full transfer function: the sum of
/// [`term_response`] over the terms, in order.
pub fn analytic_response(tf: &TransferFunction, stim: &Stimulus, t_span: f64, n: usize) -> Result<Waveform> {
    check_grid(t_span, n)?;
    stim.validate()?;
    let mut samples = vec![0.0; n];
    for term in &tf.terms {
        let part = term_samples(term, stim, t_span, n);
        for (acc, v) in samples.iter_mut().zip(part) {
            *acc += v;
        }
    }
    Waveform::new(samples, t_span, WaveKind::Output)
}

/// Closed-form response of a single pole term.
pub fn term_response(term: &PoleTerm, stim: &Stimulus, t_span: f64, n: usize) -> Result<Waveform> {
    check_grid(t_span, n)?;
    stim.validate()?;
    Waveform::new(term_samples(term, stim, t_span, n), t_span, WaveKind::Output)
}

fn term_samples(term: &PoleTerm, stim: &Stimulus, t_span: f64, n: usize) -> Vec<f64> {
    sample_times(t_span, n)
        .into_iter()
        .map(|t| {
            if t <= 0.0 {
                return 0.0;
            }
            term.residues
                .iter()
                .enumerate()
                .map(|(j, &a)| {
                    if a == 0.0 {
                        return 0.0;
                    }
                    let order = j + 1;
                    let unit = match stim.kind {
                        StimulusKind::Step => step_basis(order, term.pole, t),
                        StimulusKind::SaturatedRamp => {
                            let tr = stim.rise_time;
                            (ramp_basis(order, term.pole, t) - ramp_basis(order, term.pole, t - tr)) / tr
                        }
                    };
                    a * stim.amplitude * unit
                })
                .sum()
        })
        .collect()
}

/// Unit-step response of `1/(s−p)^j`: `τ^j P(j, t/τ)` with `τ = −1/p` and
/// `P` the regularized lower incomplete gamma function.
pub fn step_basis(j: usize, pole: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let tau = -1.0 / pole;
    tau.powi(j as i32) * lower_gamma_regularized(j, t / tau)
}

/// Unit-ramp response of `1/(s−p)^j`: `τ^{j+1} ∫₀^{t/τ} P(j, u) du`.
pub fn ramp_basis(j: usize, pole: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let tau = -1.0 / pole;
    tau.powi(j as i32 + 1) * integrated_gamma(j, t / tau)
}

/// `P(j, x) = 1 − e^{−x} Σ_{k<j} x^k/k!` for integer `j ≥ 1`.
fn lower_gamma_regularized(j: usize, x: f64) -> f64 {
    if j == 1 {
        return -(-x).exp_m1();
    }
    if x < j as f64 + 1.0 {
        // e^{−x} Σ_{k≥j} x^k/k!, no cancellation for small x
        let mut term = (1..=j).fold(1.0, |acc, k| acc * x / k as f64);
        let mut sum = 0.0;
        let mut k = j;
        while term > sum * 1e-17 {
            sum += term;
            k += 1;
            term *= x / k as f64;
        }
        (-x).exp() * sum
    } else {
        let mut term = 1.0;
        let mut sum = 0.0;
        for k in 0..j {
            if k > 0 {
                term *= x / k as f64;
            }
            sum += term;
        }
        1.0 - (-x).exp() * sum
    }
}

/// `∫₀^x P(j, u) du = x P(j, x) − j P(j+1, x)`.
fn integrated_gamma(j: usize, x: f64) -> f64 {
    if x < j as f64 + 2.0 {
        // e^{−x} Σ_{k≥j+1} (k−j) x^k/k!
        let mut term = (1..=j + 1).fold(1.0, |acc, k| acc * x / k as f64);
        let mut sum = 0.0;
        let mut k = j + 1;
        loop {
            let add = (k - j) as f64 * term;
            sum += add;
            if add <= sum * 1e-17 {
                break;
            }
            k += 1;
            term *= x / k as f64;
        }
        (-x).exp() * sum
    } else {
        x * lower_gamma_regularized(j, x) - j as f64 * lower_gamma_regularized(j + 1, x)
    }
}

/// Ratio between consecutive step sizes after a breakpoint.
const GRADE: f64 = 1.02;
/// First step after a breakpoint, relative to the fastest time constant.
const FIRST_STEP: f64 = 1e-3;

enum StepRule {
    BackwardEuler,
    Trapezoid,
}

struct StepMatrices {
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    rhs: DMatrix<f64>,
}

/// Trapezoidal integration of `C dv/dt + G v = b u(t)` over all non-driver
/// nodes, with `substeps` uniform steps per output interval.
///
/// After every input breakpoint the step size restarts at a small fraction
/// of the fastest time constant and grows geometrically until it reaches the
/// uniform step; the first step after the step discontinuity at `t = 0` is
/// backward Euler so the trapezoid's undamped stiff modes start from a
/// consistent state.
pub fn numerical_response(
    net: &RcNetwork,
    stim: &Stimulus,
    t_span: f64,
    n: usize,
    substeps: usize,
) -> Result<Waveform> {
    check_grid(t_span, n)?;
    stim.validate()?;
    if substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be at least 1".into()));
    }
    let sys = assemble_full(net)?;
    let m = sys.nodes.len();
    let c_mat = DMatrix::from_diagonal(&sys.c);

    let lambda_max = (0..m)
        .filter(|&i| sys.c[i] > 0.0)
        .map(|i| sys.g.row(i).iter().map(|x| x.abs()).sum::<f64>() / sys.c[i])
        .fold(0.0, f64::max);
    let h_uniform = t_span / ((n - 1) * substeps) as f64;
    let h_first = (FIRST_STEP / lambda_max).min(h_uniform);

    let mut graded = Vec::new();
    for b in stim.breakpoints() {
        if b >= t_span {
            continue;
        }
        if b > 0.0 {
            graded.push(b);
        }
        let mut h = h_first;
        let mut t = b + h;
        while h < h_uniform && t < t_span {
            graded.push(t);
            h *= GRADE;
            t += h;
        }
    }
    graded.sort_by(f64::total_cmp);

    let times = sample_times(t_span, n);
    let mut cache: HashMap<(bool, u64), StepMatrices> = HashMap::new();
    let mut v = DVector::zeros(m);
    let mut out = vec![0.0; n];
    let mut t = 0.0;
    for k in 0..n - 1 {
        let (a, z) = (times[k], times[k + 1]);
        let margin = 1e-9 * h_uniform;
        let mut points: Vec<f64> =
            (1..substeps).map(|i| a + (z - a) * i as f64 / substeps as f64).collect();
        points.extend(graded.iter().copied().filter(|&g| g > a + margin && g < z - margin));
        points.sort_by(f64::total_cmp);
        points.dedup_by(|x, y| (*x - *y).abs() < margin);
        points.push(z);

        for &t_next in &points {
            let h = t_next - t;
            let rule = if t == 0.0 && stim.kind == StimulusKind::Step {
                StepRule::BackwardEuler
            } else {
                StepRule::Trapezoid
            };
            let mats = step_matrices(&mut cache, &c_mat, &sys.g, &rule, h)?;
            let mut rhs = &mats.rhs * &v;
            let drive = match rule {
                StepRule::BackwardEuler => stim.value(t_next),
                StepRule::Trapezoid => 0.5 * (stim.value(t) + stim.value(t_next)),
            };
            rhs.axpy(drive, &sys.b, 1.0);
            v = mats.lu.solve(&rhs).ok_or(Error::SingularStep(h))?;
            t = t_next;
        }
        out[k + 1] = v[sys.out];
    }
    Waveform::new(out, t_span, WaveKind::Output)
}

fn step_matrices<'a>(
    cache: &'a mut HashMap<(bool, u64), StepMatrices>,
    c_mat: &DMatrix<f64>,
    g: &DMatrix<f64>,
    rule: &StepRule,
    h: f64,
) -> Result<&'a StepMatrices> {
    let be = matches!(rule, StepRule::BackwardEuler);
    // steps equal to ~12 significant digits share a factorization
    let key = (be, h.to_bits() >> 12);
    if let std::collections::hash_map::Entry::Vacant(slot) = cache.entry(key) {
        let (lhs, rhs) = if be {
            (c_mat / h + g, c_mat / h)
        } else {
            (c_mat / h + g * 0.5, c_mat / h - g * 0.5)
        };
        let lu = lhs.lu();
        if !lu.is_invertible() {
            return Err(Error::SingularStep(h));
        }
        slot.insert(StepMatrices { lu, rhs });
    }
    Ok(&cache[&key])
}
