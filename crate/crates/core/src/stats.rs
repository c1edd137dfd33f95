//! Output processes and physical statistics estimated from trajectory ensembles.
//!
//! Samples from the linear equations carry the weight `p(T)`; samples from the
//! nonlinear equations carry weight 1. All estimators take the weight into
//! account, so both unravellings go through the same code.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::atom::FeedbackSpec;
use crate::engine::{ChannelModel, Observer, StepEvent, TrajectoryRecord};
use crate::ensemble::{simulate, Finished, RunSpec, Unravelling};
use crate::error::{Error, Result};
use crate::ops::{DensityOperator2, Operator2};

/// A Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    /// `|a - b| / sqrt(se_a^2 + se_b^2)`.
    pub fn z_score(&self, other: &Estimate) -> f64 {
        (self.value - other.value).abs() / (self.stderr.powi(2) + other.stderr.powi(2)).sqrt()
    }
}

fn mean(xs: impl Iterator<Item = f64>, n: usize) -> f64 {
    xs.sum::<f64>() / n as f64
}

/// Sample covariance matrix of the rows of `ys`.
fn covariance<const K: usize>(ys: &[[f64; K]]) -> ([f64; K], [[f64; K]; K]) {
    let n = ys.len();
    let mut m = [0.0; K];
    for y in ys {
        for k in 0..K {
            m[k] += y[k];
        }
    }
    for v in m.iter_mut() {
        *v /= n as f64;
    }
    let mut c = [[0.0; K]; K];
    for y in ys {
        for a in 0..K {
            for b in 0..K {
                c[a][b] += (y[a] - m[a]) * (y[b] - m[b]);
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for row in c.iter_mut() {
        for v in row.iter_mut() {
            *v /= denom;
        }
    }
    (m, c)
}

fn delta_stderr<const K: usize>(grad: [f64; K], cov: &[[f64; K]; K], n: usize) -> f64 {
    let mut v = 0.0;
    for a in 0..K {
        for b in 0..K {
            v += grad[a] * cov[a][b] * grad[b];
        }
    }
    (v.max(0.0) / n as f64).sqrt()
}

/// `E_Q[p(T) X]` with its standard error, from per-trajectory weights and values.
pub fn weighted_expectation(weights: &[f64], values: &[f64]) -> Result<Estimate> {
    if weights.len() != values.len() || weights.len() < 2 {
        return Err(Error::invalid(format!(
            "need matching weights and values with at least 2 samples, got {} and {}",
            weights.len(),
            values.len()
        )));
    }
    let ys: Vec<[f64; 1]> = weights.iter().zip(values).map(|(w, x)| [w * x]).collect();
    let (m, c) = covariance(&ys);
    Ok(Estimate {
        value: m[0],
        stderr: (c[0][0] / ys.len() as f64).sqrt(),
    })
}

/// Accumulates `F(mu) = sum_n e^{i mu t_n} dB_l(t_n)` over one trajectory.
#[derive(Clone, Debug)]
pub struct FourierObserver {
    channel: usize,
    start: usize,
    mus: Vec<f64>,
    pub sums: Vec<Complex64>,
    /// `B_l(T) - B_l(t_start)`, the `mu = 0` transform.
    pub total: f64,
}

impl FourierObserver {
    /// Transforms over `(t_start, T]`, where `t_start` is grid index `start`.
    pub fn new(channel: usize, mus: &[f64], start: usize) -> Self {
        FourierObserver {
            channel,
            start,
            mus: mus.to_vec(),
            sums: vec![Complex64::new(0.0, 0.0); mus.len()],
            total: 0.0,
        }
    }
}

impl Observer for FourierObserver {
    fn on_step(&mut self, ev: &StepEvent<'_>) -> Result<()> {
        if ev.n < self.start {
            return Ok(());
        }
        let db = ev.output[self.channel];
        let t = (ev.n - self.start) as f64 * ev.step;
        for (s, mu) in self.sums.iter_mut().zip(&self.mus) {
            let (sn, cs) = (mu * t).sin_cos();
            *s += Complex64::new(cs * db, sn * db);
        }
        self.total += db;
        Ok(())
    }
}

/// Per-trajectory Fourier data for [`estimate_spectrum`].
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumSample {
    pub transforms: Vec<Complex64>,
    pub total: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    pub mu_grid: Vec<f64>,
    pub s_inel: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Coefficient of `2 pi delta(mu)` ... reported as `2 pi n_inf^2`.
    pub s_el_coefficient: f64,
    pub s_el_stderr: f64,
    pub t_window: f64,
    pub n_traj: usize,
}

/// Inelastic spectrum `(E|F|^2 - |E F|^2) / T` per frequency and the elastic
/// coefficient `2 pi (E B(T) / T)^2`, with delta-method standard errors.
pub fn estimate_spectrum(samples: &[SpectrumSample], mu_grid: &[f64], t_window: f64) -> Result<SpectrumEstimate> {
    if mu_grid.is_empty() {
        return Err(Error::invalid("empty frequency grid"));
    }
    if samples.len() < 2 {
        return Err(Error::invalid("need at least 2 trajectories"));
    }
    if samples.iter().any(|s| s.transforms.len() != mu_grid.len()) {
        return Err(Error::invalid("sample transforms do not match the frequency grid"));
    }
    let n = samples.len();
    let mut s_inel = Vec::with_capacity(mu_grid.len());
    let mut stderr = Vec::with_capacity(mu_grid.len());
    for k in 0..mu_grid.len() {
        let ys: Vec<[f64; 3]> = samples
            .iter()
            .map(|s| {
                let f = s.transforms[k];
                [s.weight * f.norm_sqr(), s.weight * f.re, s.weight * f.im]
            })
            .collect();
        let (m, c) = covariance(&ys);
        // unbiased: |mean wF|^2 overshoots |E wF|^2 by Var(wF)/n
        let var_mean = (c[1][1] + c[2][2]) / n as f64;
        let value = (m[0] - m[1] * m[1] - m[2] * m[2] + var_mean) / t_window;
        let grad = [1.0 / t_window, -2.0 * m[1] / t_window, -2.0 * m[2] / t_window];
        s_inel.push(value);
        stderr.push(delta_stderr(grad, &c, n));
    }
    let totals: Vec<[f64; 1]> = samples.iter().map(|s| [s.weight * s.total]).collect();
    let (m, c) = covariance(&totals);
    let two_pi = 2.0 * std::f64::consts::PI;
    let s_el = two_pi * (m[0] * m[0] - c[0][0] / n as f64) / (t_window * t_window);
    let s_el_stderr = delta_stderr([2.0 * two_pi * m[0] / (t_window * t_window)], &c, n);
    Ok(SpectrumEstimate {
        mu_grid: mu_grid.to_vec(),
        s_inel,
        stderr,
        s_el_coefficient: s_el,
        s_el_stderr,
        t_window,
        n_traj: n,
    })
}

/// Records the cumulative count of one channel at chosen grid indices.
#[derive(Clone, Debug)]
pub struct CountObserver {
    channel: usize,
    marks: Vec<usize>,
    count: u64,
    pub at_marks: Vec<u64>,
}

impl CountObserver {
    /// `marks` are grid indices, in increasing order.
    pub fn new(channel: usize, marks: &[usize]) -> Self {
        let mut obs = CountObserver {
            channel,
            marks: marks.to_vec(),
            count: 0,
            at_marks: Vec::with_capacity(marks.len()),
        };
        while obs.at_marks.len() < obs.marks.len() && obs.marks[obs.at_marks.len()] == 0 {
            obs.at_marks.push(0);
        }
        obs
    }
}

impl Observer for CountObserver {
    fn on_step(&mut self, ev: &StepEvent<'_>) -> Result<()> {
        self.count += ev.jumps[self.channel] as u64;
        while self.at_marks.len() < self.marks.len() && self.marks[self.at_marks.len()] == ev.n + 1 {
            self.at_marks.push(self.count);
        }
        Ok(())
    }
}

/// Counts `N_k(t0 + t_j) - N_k(t0)` of one trajectory, with its weight.
#[derive(Clone, Debug, PartialEq)]
pub struct CountSample {
    pub increments: Vec<f64>,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QEstimate {
    pub t_grid: Vec<f64>,
    pub q_values: Vec<f64>,
    pub stderr: Vec<f64>,
    /// `M_k / t`
    pub m_rate: Vec<f64>,
    pub m_rate_stderr: Vec<f64>,
    pub n_traj: usize,
}

/// Mandel Q from window counts, with delta-method standard errors.
pub fn estimate_mandel_q(samples: &[CountSample], t_grid: &[f64]) -> Result<QEstimate> {
    if samples.len() < 2 {
        return Err(Error::invalid("need at least 2 trajectories"));
    }
    if samples.iter().any(|s| s.increments.len() != t_grid.len()) {
        return Err(Error::invalid("count samples do not match the window grid"));
    }
    let n = samples.len();
    let mut out = QEstimate {
        t_grid: t_grid.to_vec(),
        q_values: vec![],
        stderr: vec![],
        m_rate: vec![],
        m_rate_stderr: vec![],
        n_traj: n,
    };
    for (j, &t) in t_grid.iter().enumerate() {
        let ys: Vec<[f64; 2]> = samples
            .iter()
            .map(|s| {
                let x = s.increments[j];
                [s.weight * x, s.weight * x * x]
            })
            .collect();
        let (m, c) = covariance(&ys);
        let mean_count = m[0];
        if !(mean_count > 0.0) {
            return Err(Error::Undefined(format!(
                "Mandel Q undefined: mean count {mean_count} in window {t}"
            )));
        }
        let var = m[1] - mean_count * mean_count + c[0][0] / n as f64;
        let q = var / mean_count - 1.0;
        let grad = [-m[1] / (mean_count * mean_count) - 1.0, 1.0 / mean_count];
        out.q_values.push(q);
        out.stderr.push(delta_stderr(grad, &c, n));
        out.m_rate.push(mean_count / t);
        out.m_rate_stderr.push((c[0][0] / n as f64).sqrt() / t);
    }
    Ok(out)
}

/// Two-time function `b_l(t, s)` and its centred version `d_l(t, s)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AutocorrEstimate {
    pub b: Estimate,
    pub d: Estimate,
}

struct AutocorrObserver {
    channel: usize,
    ns: usize,
    nt: usize,
    n_inf: f64,
    x: Operator2,
    y: Operator2,
    b: f64,
    d: f64,
}

impl Observer for AutocorrObserver {
    fn on_step(&mut self, ev: &StepEvent<'_>) -> Result<()> {
        let l = ev.coefficients.diffusive[self.channel];
        if ev.n == self.nt {
            let obs = l + l.adjoint();
            self.b = (obs * self.x).trace().re;
            self.d = (obs * self.y).trace().re;
        }
        if ev.n == self.ns {
            self.x = l * *ev.pre + *ev.pre * l.adjoint();
            self.y = self.x - *ev.pre * self.n_inf;
        }
        if ev.n >= self.ns && ev.n < self.nt {
            self.x = ev.propagate(&self.x);
            self.y = ev.propagate(&self.y);
        }
        Ok(())
    }
}

/// Monte Carlo `b_l(t, s) = E_Q[tr{(L + L^*)(t) A(t-, s)[L(s) sigma(s-) + sigma(s-) L(s)^*]}]`
/// and `d_l(t, s)`, which replaces the bracket by its `n_inf`-centred version.
/// Runs the linear equation under the reference law.
pub fn autocorrelation_d<M: ChannelModel>(
    model: &M,
    rho0: &DensityOperator2,
    spec: &RunSpec,
    channel: usize,
    s: f64,
    t: f64,
    n_inf: f64,
) -> Result<AutocorrEstimate> {
    if model.feedback_channels().contains(&channel) {
        return Err(Error::Precondition(format!(
            "channel {} drives the feedback; the two-time formula needs it independent of the coefficients",
            channel + 1
        )));
    }
    if channel >= model.n_diffusive() {
        return Err(Error::invalid(format!("no diffusive channel {}", channel + 1)));
    }
    if !(0.0 < s && s < t && t <= spec.grid.t_end()) {
        return Err(Error::invalid(format!("need 0 < s < t <= T, got s = {s}, t = {t}")));
    }
    let (ns, nt) = (spec.grid.index_of(s), spec.grid.index_of(t));
    let mut spec = spec.clone();
    spec.unravelling = Unravelling::WeightedLinear;
    // one extra step so that coefficients at t are visible
    let horizon = spec.grid.time((nt + 1).min(spec.grid.n_steps()));
    if nt >= spec.grid.n_steps() {
        return Err(Error::invalid("t must leave at least one step before the horizon"));
    }
    spec.grid = crate::noise::GridSpec::new(horizon, spec.grid.step())?;
    let samples = simulate(
        model,
        rho0,
        &spec,
        || AutocorrObserver {
            channel,
            ns,
            nt,
            n_inf,
            x: Operator2::zero(),
            y: Operator2::zero(),
            b: 0.0,
            d: 0.0,
        },
        |f: Finished<AutocorrObserver>| (f.observer.b, f.observer.d),
    )?;
    let ones = vec![1.0; samples.len()];
    let b: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let d: Vec<f64> = samples.iter().map(|s| s.1).collect();
    Ok(AutocorrEstimate {
        b: weighted_expectation(&ones, &b)?,
        d: weighted_expectation(&ones, &d)?,
    })
}

/// Detector response of a diffusive output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Response {
    /// Raw increments `dB`.
    #[default]
    Dirac,
    /// `J(t) = gain int_0^t e^{-bandwidth (t - s) / 2} dB(s)`.
    ExpFilter { gain: f64, bandwidth: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdditiveNoise {
    #[default]
    None,
    /// Independent white noise: adds `amplitude * dV` to each increment.
    White { amplitude: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusiveOutputSpec {
    /// Mixing coefficients `c_lj`; the kernel is `a_lj(t) = c_lj F_l(t)`.
    pub mix: Vec<f64>,
    #[serde(default)]
    pub response: Response,
    #[serde(default)]
    pub noise: AdditiveNoise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountingOutputSpec {
    pub mix: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub diffusive: Vec<DiffusiveOutputSpec>,
    #[serde(default)]
    pub counting: Vec<CountingOutputSpec>,
    /// Seed of the additive detector noise.
    #[serde(default)]
    pub noise_seed: u64,
}

impl OutputSpec {
    /// One unfiltered, noiseless output per channel.
    pub fn identity(d: usize, counting: usize) -> Self {
        let unit = |i: usize, n: usize| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect();
        OutputSpec {
            diffusive: (0..d)
                .map(|i| DiffusiveOutputSpec {
                    mix: unit(i, d),
                    response: Response::Dirac,
                    noise: AdditiveNoise::None,
                })
                .collect(),
            counting: (0..counting).map(|i| CountingOutputSpec { mix: unit(i, counting) }).collect(),
            noise_seed: 0,
        }
    }
}

/// Output processes on the full grid: for [`Response::Dirac`] the output
/// increments on each step, otherwise the filtered current at `t_{n+1}`;
/// counting outputs are cumulative at `t_{n+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputRecord {
    pub diffusive: Vec<Vec<f64>>,
    pub counting: Vec<Vec<f64>>,
}

pub fn build_outputs(record: &TrajectoryRecord, spec: &OutputSpec) -> Result<OutputRecord> {
    let d = record.output_increments.len();
    let kc = record.jump_counts.len();
    let n = record.grid.n_steps();
    let h = record.grid.step();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
    let mut diffusive = Vec::with_capacity(spec.diffusive.len());
    for (l, out) in spec.diffusive.iter().enumerate() {
        if out.mix.len() != d {
            return Err(Error::invalid(format!(
                "diffusive output {l} mixes {} channels, record has {d}",
                out.mix.len()
            )));
        }
        let mut inc: Vec<f64> = (0..n)
            .map(|k| out.mix.iter().zip(&record.output_increments).map(|(c, b)| c * b[k]).sum())
            .collect();
        if let AdditiveNoise::White { amplitude } = out.noise {
            for v in inc.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += amplitude * h.sqrt() * z;
            }
        }
        let series = match out.response {
            Response::Dirac => inc,
            Response::ExpFilter { gain, bandwidth } => {
                let fb = FeedbackSpec {
                    detector_gain: gain,
                    detector_bandwidth: bandwidth,
                    ..FeedbackSpec::default()
                };
                let mut j = 0.0;
                inc.iter()
                    .map(|db| {
                        j = crate::atom::feedback_current_update(j, *db, h, &fb);
                        j
                    })
                    .collect()
            }
        };
        diffusive.push(series);
    }
    let mut counting = Vec::with_capacity(spec.counting.len());
    for (h_idx, out) in spec.counting.iter().enumerate() {
        if out.mix.len() != kc {
            return Err(Error::invalid(format!(
                "counting output {h_idx} mixes {} channels, record has {kc}",
                out.mix.len()
            )));
        }
        let mut acc = 0.0;
        let series = (0..n)
            .map(|k| {
                acc += out
                    .mix
                    .iter()
                    .zip(&record.jump_counts)
                    .map(|(c, j)| c * j[k] as f64)
                    .sum::<f64>();
                acc
            })
            .collect();
        counting.push(series);
    }
    Ok(OutputRecord { diffusive, counting })
}

/// Mean of a slice, for callers reducing per-trajectory values.
pub fn sample_mean(xs: &[f64]) -> f64 {
    mean(xs.iter().copied(), xs.len())
}
