//! Two-level atom driven by a phase-diffusing laser, observed through two
//! diffusive (homodyne/heterodyne) channels and four counting channels, with
//! the laser optionally modulated by the integrated current of detector 1.

use std::collections::VecDeque;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::engine::{ChannelModel, Coefficients};
use crate::error::{Error, Result};
use crate::noise::ChannelLayout;
use crate::ops::{c, DensityOperator2, Operator2, Superoperator2, I};

/// Order of the Wiener drivers of [`AtomModel`] inside a noise path:
/// `B_1, B_2` (observed), `B_0` (laser phase), `B_-1, B_-2` (heterodyne oscillators).
pub const WIENER_LABELS: [i32; 5] = [1, 2, 0, -1, -2];

/// Reduces a phase to `(-pi, pi]`.
pub fn wrap_phase(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

/// Complex channel amplitude. Reads either `[re, im]` or `{ abs2 = .., arg = .. }`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(into = "[f64; 2]")]
pub struct Amplitude(pub Complex64);

impl Amplitude {
    pub fn real(x: f64) -> Self {
        Amplitude(c(x, 0.0))
    }

    pub fn from_abs2(abs2: f64, arg: f64) -> Self {
        Amplitude(Complex64::from_polar(abs2.max(0.0).sqrt(), arg))
    }

    pub fn abs2(&self) -> f64 {
        self.0.norm_sqr()
    }
}

impl From<Amplitude> for [f64; 2] {
    fn from(a: Amplitude) -> Self {
        [a.0.re, a.0.im]
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AmplitudeRepr {
    Cartesian([f64; 2]),
    Polar {
        abs2: f64,
        #[serde(default)]
        arg: f64,
    },
}

impl<'de> Deserialize<'de> for Amplitude {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match AmplitudeRepr::deserialize(d)? {
            AmplitudeRepr::Cartesian([re, im]) => Ok(Amplitude(c(re, im))),
            AmplitudeRepr::Polar { abs2, arg } if abs2 >= 0.0 => Ok(Amplitude::from_abs2(abs2, arg)),
            AmplitudeRepr::Polar { abs2, .. } => Err(serde::de::Error::custom(format!(
                "abs2 must be >= 0, got {abs2}"
            ))),
        }
    }
}

/// Physical parameters of the atom, the laser and the emission channels.
/// Rates and frequencies are in units of `gamma` by convention.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomParams {
    /// Laser carrier frequency `nu > 0`.
    pub nu: f64,
    /// Detuning `nu0 - nu`.
    pub delta_nu: f64,
    pub omega_r: f64,
    /// Initial laser phase.
    #[serde(default)]
    pub theta: f64,
    /// Laser phase-diffusion strength.
    #[serde(default)]
    pub k0: f64,
    pub gamma: f64,
    #[serde(default)]
    pub n_bar: f64,
    pub alpha1: Amplitude,
    pub alpha2: Amplitude,
    pub beta3: Amplitude,
    pub beta4: Amplitude,
}

impl AtomParams {
    /// Atomic resonance frequency.
    pub fn nu0(&self) -> f64 {
        self.delta_nu + self.nu
    }

    /// `|beta_5|^2 = |beta_6|^2 = gamma n_bar`.
    pub fn thermal_rate(&self) -> f64 {
        self.gamma * self.n_bar
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("nu", self.nu),
            ("delta_nu", self.delta_nu),
            ("omega_r", self.omega_r),
            ("theta", self.theta),
            ("k0", self.k0),
            ("gamma", self.gamma),
            ("n_bar", self.n_bar),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::config(format!("model.{name}"), "must be finite"));
            }
        }
        if !(self.nu > 0.0) {
            return Err(Error::config("model.nu", "laser frequency must be > 0"));
        }
        if !(self.nu0() > 0.0) {
            return Err(Error::config("model.delta_nu", "resonance frequency nu + delta_nu must be > 0"));
        }
        if self.omega_r < 0.0 {
            return Err(Error::config("model.omega_r", "Rabi frequency must be >= 0"));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::config("model.gamma", "decay rate must be > 0"));
        }
        if self.n_bar < 0.0 {
            return Err(Error::config("model.n_bar", "thermal occupation must be >= 0"));
        }
        let total = self.alpha1.abs2() + self.alpha2.abs2() + self.beta3.abs2() + self.beta4.abs2();
        if (total - self.gamma).abs() > 1e-10 {
            return Err(Error::config(
                "model.alpha1",
                format!(
                    "channel-rate constraint |alpha1|^2 + |alpha2|^2 + |beta3|^2 + |beta4|^2 = gamma violated: sum = {total}, gamma = {}",
                    self.gamma
                ),
            ));
        }
        Ok(())
    }

    /// `alpha_j` for `j = 1, 2`.
    pub fn alpha(&self, j: usize) -> Complex64 {
        match j {
            1 => self.alpha1.0,
            2 => self.alpha2.0,
            _ => panic!("diffusive channel index {j} out of range"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    #[default]
    None,
    /// Linear amplitude modulation by `c e^{i theta_fb} J_1(t - delay)`.
    Amplitude,
    /// Phase modulation by `k1 J_1(t - delay)`.
    Phase,
    /// Phase modulation by `k1 B_1(t)`: no delay, `detector_gain = 1`, `detector_bandwidth = 0`.
    PhaseSimplified,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeedbackSpec {
    pub mode: FeedbackMode,
    pub k1: f64,
    pub c: f64,
    pub theta_fb: f64,
    pub delay: f64,
    pub detector_gain: f64,
    pub detector_bandwidth: f64,
}

impl Default for FeedbackSpec {
    fn default() -> Self {
        FeedbackSpec {
            mode: FeedbackMode::None,
            k1: 0.0,
            c: 0.0,
            theta_fb: 0.0,
            delay: 0.0,
            detector_gain: 1.0,
            detector_bandwidth: 0.0,
        }
    }
}

impl FeedbackSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn phase_simplified(k1: f64) -> Self {
        FeedbackSpec {
            mode: FeedbackMode::PhaseSimplified,
            k1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k1", self.k1),
            ("c", self.c),
            ("theta_fb", self.theta_fb),
            ("delay", self.delay),
            ("detector_gain", self.detector_gain),
            ("detector_bandwidth", self.detector_bandwidth),
        ] {
            if !v.is_finite() {
                return Err(Error::config(format!("feedback.{name}"), "must be finite"));
            }
        }
        if self.delay < 0.0 {
            return Err(Error::config("feedback.delay", "delay must be >= 0"));
        }
        if self.detector_bandwidth < 0.0 {
            return Err(Error::config("feedback.detector_bandwidth", "bandwidth must be >= 0"));
        }
        if self.mode == FeedbackMode::PhaseSimplified
            && (self.delay != 0.0 || self.detector_bandwidth != 0.0 || self.detector_gain != 1.0)
        {
            return Err(Error::config(
                "feedback.mode",
                "phase_simplified requires delay = 0, detector_bandwidth = 0 and detector_gain = 1",
            ));
        }
        Ok(())
    }

    /// Whether the laser depends on `B_1`.
    pub fn uses_channel1(&self) -> bool {
        match self.mode {
            FeedbackMode::None => false,
            FeedbackMode::Amplitude => self.c != 0.0 && self.detector_gain != 0.0,
            FeedbackMode::Phase | FeedbackMode::PhaseSimplified => {
                self.k1 != 0.0 && self.detector_gain != 0.0
            }
        }
    }

    /// Phase feedback gain multiplying `B_1` when the model is in the
    /// simplified phase-feedback class (or has no feedback at all).
    pub fn simplified_gain(&self) -> Option<f64> {
        match self.mode {
            FeedbackMode::None => Some(0.0),
            FeedbackMode::PhaseSimplified => Some(self.k1),
            FeedbackMode::Phase
                if self.delay == 0.0 && self.detector_bandwidth == 0.0 && self.detector_gain == 1.0 =>
            {
                Some(self.k1)
            }
            FeedbackMode::Amplitude if self.c == 0.0 => Some(0.0),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OscillatorMode {
    #[default]
    Homodyne,
    Heterodyne,
}

/// Local oscillator of one diffusive channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct LocalOscillator {
    pub mode: OscillatorMode,
    pub epsilon: f64,
    /// Heterodyne frequency.
    pub nu: f64,
    /// Heterodyne phase-diffusion strength.
    pub k_neg: f64,
}

impl LocalOscillator {
    pub fn homodyne(epsilon: f64) -> Self {
        LocalOscillator {
            mode: OscillatorMode::Homodyne,
            epsilon,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OscillatorSpec {
    pub lo1: LocalOscillator,
    pub lo2: LocalOscillator,
}

impl OscillatorSpec {
    pub fn homodyne(epsilon1: f64, epsilon2: f64) -> Self {
        OscillatorSpec {
            lo1: LocalOscillator::homodyne(epsilon1),
            lo2: LocalOscillator::homodyne(epsilon2),
        }
    }

    pub fn get(&self, j: usize) -> &LocalOscillator {
        match j {
            1 => &self.lo1,
            2 => &self.lo2,
            _ => panic!("diffusive channel index {j} out of range"),
        }
    }

    pub fn all_homodyne(&self) -> bool {
        self.lo1.mode == OscillatorMode::Homodyne && self.lo2.mode == OscillatorMode::Homodyne
    }

    pub fn validate(&self) -> Result<()> {
        for (name, lo) in [("lo1", &self.lo1), ("lo2", &self.lo2)] {
            if !(lo.epsilon.is_finite() && lo.nu.is_finite() && lo.k_neg.is_finite()) {
                return Err(Error::config(format!("oscillators.{name}"), "must be finite"));
            }
        }
        Ok(())
    }

    /// `h_j(t)`; `laser_phase` is `f(t)/|f(t)|`, needed in homodyne mode.
    pub fn oscillator(&self, j: usize, t: f64, laser_phase: Option<Complex64>, b_neg: f64) -> Option<Complex64> {
        let lo = self.get(j);
        match lo.mode {
            OscillatorMode::Homodyne => laser_phase.map(|p| Complex64::from_polar(1.0, -lo.epsilon) * p),
            OscillatorMode::Heterodyne => Some(Complex64::from_polar(
                1.0,
                -lo.epsilon - lo.nu * t - lo.k_neg * b_neg,
            )),
        }
    }
}

/// Past values of `J_1` on the grid, enough to look back by the delay.
#[derive(Clone, Debug)]
pub struct FeedbackHistory {
    lag: usize,
    samples: VecDeque<f64>,
}

impl FeedbackHistory {
    pub fn new(delay: f64, step: f64) -> Self {
        let lag = (delay / step).round() as usize;
        FeedbackHistory {
            lag,
            samples: VecDeque::with_capacity(lag + 1),
        }
    }

    /// Appends `J_1(t_n)`.
    pub fn push(&mut self, j1: f64) {
        if self.samples.len() == self.lag + 1 {
            self.samples.pop_front();
        }
        self.samples.push_back(j1);
    }

    /// `J_1(t_n - delay)` with `t_n` the time of the last push, or `None`
    /// before the delay has elapsed.
    pub fn delayed(&self) -> Option<f64> {
        if self.samples.len() == self.lag + 1 {
            self.samples.front().copied()
        } else {
            None
        }
    }
}

/// Laser wave `f(t)`. `b0` is `B_0(t)`; `j1_delayed` is `J_1(t - delay)`,
/// `None` before the delay has elapsed, in which case the unmodulated wave is used.
pub fn laser_wave(params: &AtomParams, fb: &FeedbackSpec, t: f64, b0: f64, j1_delayed: Option<f64>) -> Complex64 {
    let phase = params.theta + params.nu * t + params.k0 * b0;
    let j1 = j1_delayed.unwrap_or(0.0);
    match fb.mode {
        FeedbackMode::None => Complex64::from_polar(0.5 * params.omega_r, -phase),
        FeedbackMode::Amplitude => {
            let amp = c(params.omega_r, 0.0) + Complex64::from_polar(fb.c * j1, fb.theta_fb);
            0.5 * Complex64::from_polar(1.0, -phase) * amp
        }
        FeedbackMode::Phase | FeedbackMode::PhaseSimplified => {
            Complex64::from_polar(0.5 * params.omega_r, -(phase + fb.k1 * j1))
        }
    }
}

/// One step of `J_1(t) = k int_0^t exp(-kappa (t - s)/2) dB_1(s)` for a path
/// that is linear inside the step.
pub fn feedback_current_update(prev_j1: f64, db1: f64, step: f64, fb: &FeedbackSpec) -> f64 {
    let x = 0.5 * fb.detector_bandwidth * step;
    if x == 0.0 {
        return prev_j1 + fb.detector_gain * db1;
    }
    let decay = (-x).exp();
    // (1 - e^{-x}) / x
    let gain = -(-x).exp_m1() / x;
    decay * prev_j1 + fb.detector_gain * db1 * gain
}

/// Hamiltonian and channel operators at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    pub hamiltonian: Operator2,
    /// `L_1, L_2`
    pub diffusive: [Operator2; 2],
    /// `L_3, L_4` and, when `n_bar > 0`, `L_5, L_6`.
    pub counting: Vec<Operator2>,
}

/// Builds `H(t)` and `L_1 .. L_6` from the laser value `f = f(t)`.
/// `b_neg` holds `(B_-1(t), B_-2(t))`.
pub fn channel_operators(
    params: &AtomParams,
    osc: &OscillatorSpec,
    t: f64,
    f: Complex64,
    b_neg: [f64; 2],
) -> Result<ChannelSet> {
    let mut co = Coefficients::default();
    fill_coefficients(params, osc, t, f, b_neg, &mut co)?;
    Ok(ChannelSet {
        hamiltonian: co.hamiltonian,
        diffusive: [co.diffusive[0], co.diffusive[1]],
        counting: co.counting,
    })
}

fn fill_coefficients(
    params: &AtomParams,
    osc: &OscillatorSpec,
    t: f64,
    f: Complex64,
    b_neg: [f64; 2],
    out: &mut Coefficients,
) -> Result<()> {
    let sm = Operator2::sigma_minus();
    let sp = Operator2::sigma_plus();
    out.hamiltonian = Operator2::sigma_z() * (0.5 * params.nu0()) + sm * f.conj() + sp * f;
    let laser_phase = if f.norm() > 0.0 { Some(f / f.norm()) } else { None };
    out.diffusive.clear();
    for j in 1..=2 {
        let h = osc
            .oscillator(j, t, laser_phase, b_neg[j - 1])
            .ok_or(Error::SingularPhase { t })?;
        out.diffusive.push(sm * (h.conj() * params.alpha(j)));
    }
    out.counting.clear();
    out.counting.push(sm * params.beta3.0);
    out.counting.push(sm * params.beta4.0);
    let thermal = params.thermal_rate();
    if thermal > 0.0 {
        let b = c(thermal.sqrt(), 0.0);
        out.counting.push(sm * b);
        out.counting.push(sp * b);
    }
    Ok(())
}

/// Generator and diffusion maps of the rotated state
/// `xi(t) = e^{i u(t) sigma_z / 2} sigma(t) e^{-i u(t) sigma_z / 2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameGenerator {
    pub lhat: Superoperator2,
    pub d0: Superoperator2,
    pub d1: Superoperator2,
    pub d2: Superoperator2,
}

/// Parameters that survive the rotation for homodyne detection under
/// simplified phase feedback: `g_j = |alpha_j| e^{-i theta_j}` with
/// `theta_j = epsilon_j + arg alpha_j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameParams {
    pub gamma: f64,
    pub n_bar: f64,
    pub k0: f64,
    pub k1: f64,
    pub delta_nu: f64,
    pub omega_r: f64,
    pub abs_alpha1: f64,
    pub abs_alpha2: f64,
    pub theta1: f64,
    pub theta2: f64,
}

impl FrameParams {
    pub fn from_model(params: &AtomParams, fb: &FeedbackSpec, osc: &OscillatorSpec) -> Result<Self> {
        if !osc.all_homodyne() {
            return Err(Error::Unsupported(
                "the rotated generator is random for heterodyne oscillators".into(),
            ));
        }
        let k1 = fb.simplified_gain().ok_or_else(|| {
            Error::Unsupported(
                "closed-form frame generator needs no feedback or simplified phase feedback".into(),
            )
        })?;
        Ok(FrameParams {
            gamma: params.gamma,
            n_bar: params.n_bar,
            k0: params.k0,
            k1,
            delta_nu: params.delta_nu,
            omega_r: params.omega_r,
            abs_alpha1: params.alpha1.0.norm(),
            abs_alpha2: params.alpha2.0.norm(),
            theta1: wrap_phase(osc.lo1.epsilon + params.alpha1.0.arg()),
            theta2: wrap_phase(osc.lo2.epsilon + params.alpha2.0.arg()),
        })
    }

    pub fn g1(&self) -> Complex64 {
        Complex64::from_polar(self.abs_alpha1, -self.theta1)
    }

    pub fn g2(&self) -> Complex64 {
        Complex64::from_polar(self.abs_alpha2, -self.theta2)
    }
}

fn thermal_part(gamma_nbar: f64, tau: &Operator2) -> Operator2 {
    let sm = Operator2::sigma_minus();
    let sp = Operator2::sigma_plus();
    (sm * *tau * sp + sp * *tau * sm - *tau) * gamma_nbar
}

fn dephasing_part(rate: f64, tau: &Operator2) -> Operator2 {
    let sz = Operator2::sigma_z();
    (sz * *tau * sz - *tau) * rate
}

/// Frame generator in the form obtained directly from the Ito differential of `xi`.
pub fn rotating_frame_generator(fp: &FrameParams) -> FrameGenerator {
    let sm = Operator2::sigma_minus();
    let sp = Operator2::sigma_plus();
    let sz = Operator2::sigma_z();
    let pp = Operator2::projector_excited();
    let h_frame = (sz * fp.delta_nu + Operator2::sigma_x() * fp.omega_r) * 0.5;
    let g1 = fp.g1();
    let g2 = fp.g2();
    let lhat = Superoperator2::from_action(|tau| {
        let mut out = h_frame.commutator(tau) * (-I);
        out += (sm * *tau * sp - pp.anticommutator(tau) * 0.5) * fp.gamma;
        out += dephasing_part(0.25 * (fp.k0 * fp.k0 + fp.k1 * fp.k1), tau);
        out += (pp * *tau * sp * g1 - sm * *tau * pp * g1.conj()) * (I * fp.k1);
        out += thermal_part(fp.gamma * fp.n_bar, tau);
        out
    });
    let d0 = Superoperator2::from_action(|tau| sz.commutator(tau) * (0.5 * fp.k0 * I));
    let d1 = Superoperator2::from_action(|tau| {
        sm * *tau * g1.conj() + *tau * sp * g1 + sz.commutator(tau) * (0.5 * fp.k1 * I)
    });
    let d2 = Superoperator2::from_action(|tau| sm * *tau * g2.conj() + *tau * sp * g2);
    FrameGenerator { lhat, d0, d1, d2 }
}

/// The same generator assembled in Lindblad form from the effective
/// Hamiltonian and the feedback jump operator `K`.
pub fn lindblad_frame_generator(fp: &FrameParams) -> Superoperator2 {
    let sm = Operator2::sigma_minus();
    let sp = Operator2::sigma_plus();
    let sz = Operator2::sigma_z();
    let a1 = fp.abs_alpha1;
    let h_eff = (sz * fp.delta_nu + Operator2::sigma_x() * fp.omega_r) * 0.5
        + (sp * Complex64::from_polar(1.0, -fp.theta1) + sm * Complex64::from_polar(1.0, fp.theta1))
            * (0.25 * fp.k1 * a1);
    let k = sz * (0.5 * fp.k1 * I) + sm * Complex64::from_polar(a1, fp.theta1);
    let residual = (fp.gamma - a1 * a1).max(0.0).sqrt();
    let mut channels = vec![sm * residual, k];
    if fp.k0 != 0.0 {
        channels.push(sz * (0.5 * fp.k0));
    }
    if fp.n_bar > 0.0 {
        let b = (fp.gamma * fp.n_bar).sqrt();
        channels.push(sm * b);
        channels.push(sp * b);
    }
    Superoperator2::from_action(|tau| crate::ops::liouvillian_unchecked(&h_eff, &channels, tau))
}

/// Laboratory-frame state from a rotated one: `sigma = R xi R^*` with `R = e^{-i u sigma_z / 2}`.
pub fn from_rotating_frame(xi: &Operator2, u: f64) -> Operator2 {
    Operator2::z_rotation(u).sandwich(xi)
}

/// Rotated state from a laboratory one.
pub fn to_rotating_frame(sigma: &Operator2, u: f64) -> Operator2 {
    Operator2::z_rotation(-u).sandwich(sigma)
}

/// The atom as a [`ChannelModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct AtomModel {
    pub params: AtomParams,
    pub feedback: FeedbackSpec,
    pub oscillators: OscillatorSpec,
}

/// Trajectory-local stochastic state of the laser and oscillators.
#[derive(Clone, Debug)]
pub struct AtomState {
    /// Cumulative `B` values in [`WIENER_LABELS`] order.
    pub b: [f64; 5],
    pub j1: f64,
    pub history: FeedbackHistory,
}

impl AtomModel {
    pub fn new(params: AtomParams, feedback: FeedbackSpec, oscillators: OscillatorSpec) -> Result<Self> {
        params.validate()?;
        feedback.validate()?;
        oscillators.validate()?;
        Ok(AtomModel {
            params,
            feedback,
            oscillators,
        })
    }

    pub fn frame_params(&self) -> Result<FrameParams> {
        FrameParams::from_model(&self.params, &self.feedback, &self.oscillators)
    }

    /// `u(t) = theta + nu t + k0 B_0(t) + k1 B_1(t)`; only meaningful for the
    /// simplified feedback class.
    pub fn frame_phase(&self, t: f64, b1: f64, b0: f64) -> f64 {
        let k1 = self.feedback.simplified_gain().unwrap_or(0.0);
        self.params.theta + self.params.nu * t + self.params.k0 * b0 + k1 * b1
    }

    pub fn n_counting(&self) -> usize {
        if self.params.thermal_rate() > 0.0 {
            4
        } else {
            2
        }
    }

    /// The stationary state of the rotating-frame generator, carried back to
    /// the laboratory frame at `t = 0`.
    pub fn stationary_initial_state(&self) -> Result<DensityOperator2> {
        let bs = crate::analytic::BlochSystem::from_frame(&self.frame_params()?)?;
        let sigma = from_rotating_frame(&bs.stationary_state(), self.params.theta);
        DensityOperator2::new(sigma.hermitian_part())
    }

    /// Channel label (3..6) of counting index `k`.
    pub fn counting_label(k: usize) -> usize {
        k + 3
    }
}

impl ChannelModel for AtomModel {
    type State = AtomState;

    fn layout(&self) -> ChannelLayout {
        ChannelLayout {
            wiener: WIENER_LABELS.len(),
            counting: self.n_counting(),
        }
    }

    fn n_diffusive(&self) -> usize {
        2
    }

    fn initial_state(&self, step: f64) -> AtomState {
        let mut history = FeedbackHistory::new(self.feedback.delay, step);
        history.push(0.0);
        AtomState {
            b: [0.0; 5],
            j1: 0.0,
            history,
        }
    }

    fn coefficients(&self, state: &AtomState, t: f64, out: &mut Coefficients) -> Result<()> {
        let f = laser_wave(&self.params, &self.feedback, t, state.b[2], state.history.delayed());
        fill_coefficients(&self.params, &self.oscillators, t, f, [state.b[3], state.b[4]], out)
    }

    fn advance(&self, state: &mut AtomState, step: f64, increments: &[f64]) {
        state.j1 = feedback_current_update(state.j1, increments[0], step, &self.feedback);
        state.history.push(state.j1);
        for (b, db) in state.b.iter_mut().zip(increments) {
            *b += db;
        }
    }

    fn counting_sup_norms(&self) -> Vec<f64> {
        let thermal = self.params.thermal_rate();
        let mut v = vec![self.params.beta3.abs2(), self.params.beta4.abs2()];
        if thermal > 0.0 {
            v.extend([thermal, thermal]);
        }
        v
    }

    fn feedback_channels(&self) -> Vec<usize> {
        if self.feedback.uses_channel1() {
            vec![0]
        } else {
            vec![]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{superop_matrix, StateVector2};
    use approx::assert_abs_diff_eq;

    pub(crate) fn squeezing_params() -> (AtomParams, FeedbackSpec, OscillatorSpec) {
        let params = AtomParams {
            nu: 1.0,
            delta_nu: 1.3833,
            omega_r: 1.6150,
            theta: 0.0,
            k0: 0.0,
            gamma: 1.0,
            n_bar: 0.0,
            alpha1: Amplitude::from_abs2(0.45, 0.0),
            alpha2: Amplitude::from_abs2(0.45, 0.0),
            beta3: Amplitude::from_abs2(0.05, 0.0),
            beta4: Amplitude::from_abs2(0.05, 0.0),
        };
        (params, FeedbackSpec::phase_simplified(0.3213), OscillatorSpec::homodyne(-1.9307, -0.1540))
    }

    #[test]
    fn rate_constraint_is_checked() {
        let (mut p, _, _) = squeezing_params();
        assert!(p.validate().is_ok());
        p.beta4 = Amplitude::from_abs2(0.06, 0.0);
        let err = p.validate().unwrap_err();
        assert!(err.to_string().contains("channel-rate constraint"), "{err}");
    }

    #[test]
    fn amplitude_reads_both_forms() {
        #[derive(Deserialize)]
        struct W {
            a: Amplitude,
            b: Amplitude,
        }
        let w: W = serde_json::from_str(r#"{"a": [0.3, -0.4], "b": {"abs2": 0.45, "arg": 0.0}}"#).unwrap();
        assert_eq!(w.a.0, c(0.3, -0.4));
        assert_abs_diff_eq!(w.b.abs2(), 0.45, epsilon = 1e-15);
        assert!(serde_json::from_str::<W>(r#"{"a": [0.3, 0.0], "b": {"abs2": -1.0}}"#).is_err());
    }

    #[test]
    fn simplified_mode_constraints() {
        let mut fb = FeedbackSpec::phase_simplified(0.3);
        assert!(fb.validate().is_ok());
        fb.delay = 0.1;
        assert!(fb.validate().is_err());
        fb.delay = 0.0;
        fb.detector_gain = 2.0;
        assert!(fb.validate().is_err());
    }

    #[test]
    fn noiseless_monochromatic_wave() {
        let (p, _, _) = squeezing_params();
        let f = laser_wave(&p, &FeedbackSpec::none(), 2.5, 0.7, None);
        let expected = Complex64::from_polar(0.5 * p.omega_r, -p.nu * 2.5);
        assert_abs_diff_eq!((f - expected).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn wave_modulus_is_half_rabi() {
        let (mut p, _, _) = squeezing_params();
        p.k0 = 0.7;
        let fb = FeedbackSpec::phase_simplified(1.3);
        for (t, b0, j1) in [(0.0, 0.0, 0.0), (1.0, -2.0, 3.0), (7.5, 0.4, -11.0)] {
            let f = laser_wave(&p, &fb, t, b0, Some(j1));
            assert_abs_diff_eq!(f.norm(), 0.5 * p.omega_r, epsilon = 1e-14);
        }
    }

    #[test]
    fn amplitude_mode_with_zero_gain_is_unmodulated() {
        let (mut p, _, _) = squeezing_params();
        p.k0 = 0.5;
        let fb = FeedbackSpec {
            mode: FeedbackMode::Amplitude,
            c: 0.0,
            theta_fb: 0.4,
            ..FeedbackSpec::default()
        };
        let a = laser_wave(&p, &fb, 3.0, 1.2, Some(5.0));
        let b = laser_wave(&p, &FeedbackSpec::none(), 3.0, 1.2, None);
        assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn feedback_current_limits() {
        let fb = FeedbackSpec::phase_simplified(1.0);
        let incs = [0.1, -0.3, 0.05, 0.2];
        let mut j = 0.0;
        let mut b = 0.0;
        for db in incs {
            j = feedback_current_update(j, db, 0.01, &fb);
            b += db;
            assert_eq!(j, b);
        }
        let zero = FeedbackSpec {
            detector_gain: 0.0,
            detector_bandwidth: 1.0,
            ..FeedbackSpec::default()
        };
        assert_eq!(feedback_current_update(0.0, 0.5, 0.01, &zero), 0.0);
    }

    #[test]
    fn feedback_current_matches_quadrature() {
        // Piecewise-linear B_1 path: J(t) = k int e^{-kappa (t-s)/2} b'(s) ds, with
        // b' constant on each step; fine midpoint quadrature as the oracle.
        let fb = FeedbackSpec {
            mode: FeedbackMode::Phase,
            detector_bandwidth: 2.0,
            detector_gain: 1.0,
            ..FeedbackSpec::default()
        };
        let h = 0.1;
        let incs = [0.3, -0.1, 0.25, 0.0, -0.4, 0.15];
        let mut j = 0.0;
        for db in incs {
            j = feedback_current_update(j, db, h, &fb);
        }
        let t_end = h * incs.len() as f64;
        let sub = 20_000;
        let mut quad = 0.0;
        for (n, db) in incs.iter().enumerate() {
            let rate = db / h;
            for m in 0..sub {
                let s = n as f64 * h + (m as f64 + 0.5) * h / sub as f64;
                quad += (-(t_end - s)).exp() * rate * h / sub as f64;
            }
        }
        assert_abs_diff_eq!(j, quad, epsilon = 1e-10);
    }

    #[test]
    fn delayed_history() {
        let mut h = FeedbackHistory::new(0.3, 0.1);
        h.push(1.0);
        assert_eq!(h.delayed(), None);
        h.push(2.0);
        h.push(3.0);
        assert_eq!(h.delayed(), None);
        h.push(4.0);
        assert_eq!(h.delayed(), Some(1.0));
        h.push(5.0);
        assert_eq!(h.delayed(), Some(2.0));
        let mut h0 = FeedbackHistory::new(0.0, 0.1);
        h0.push(7.0);
        assert_eq!(h0.delayed(), Some(7.0));
    }

    #[test]
    fn heterodyne_without_drive() {
        let (mut p, _, _) = squeezing_params();
        p.omega_r = 0.0;
        let mut osc = OscillatorSpec::homodyne(0.0, 0.0);
        let err = channel_operators(&p, &osc, 0.0, c(0.0, 0.0), [0.0; 2]).unwrap_err();
        assert!(matches!(err, Error::SingularPhase { .. }));
        osc.lo1.mode = OscillatorMode::Heterodyne;
        osc.lo2.mode = OscillatorMode::Heterodyne;
        osc.lo1.nu = 0.3;
        let set = channel_operators(&p, &osc, 1.0, c(0.0, 0.0), [0.2, -0.1]).unwrap();
        let h0 = Operator2::sigma_z() * (0.5 * p.nu0());
        assert_eq!(set.hamiltonian, h0);
        assert!(set.diffusive.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn thermal_channels_dropped_at_zero_temperature() {
        let (mut p, fb, osc) = squeezing_params();
        let f = laser_wave(&p, &fb, 0.0, 0.0, Some(0.0));
        assert_eq!(channel_operators(&p, &osc, 0.0, f, [0.0; 2]).unwrap().counting.len(), 2);
        p.n_bar = 0.2;
        let set = channel_operators(&p, &osc, 0.0, f, [0.0; 2]).unwrap();
        assert_eq!(set.counting.len(), 4);
        assert_abs_diff_eq!(set.counting[3].hilbert_schmidt_sq(), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn total_emission_rate() {
        let (p, fb, mut osc) = squeezing_params();
        osc.lo2.mode = OscillatorMode::Heterodyne;
        osc.lo2.nu = 0.8;
        osc.lo2.k_neg = 0.3;
        let psi = StateVector2::normalized(c(0.6, 0.2), c(-0.3, 0.7)).unwrap();
        let sm_psi = Operator2::sigma_minus().apply(&psi).norm_sqr();
        for t in [0.0, 0.37, 5.0] {
            let f = laser_wave(&p, &fb, t, 0.0, Some(1.7 * t));
            let set = channel_operators(&p, &osc, t, f, [0.1, -0.6]).unwrap();
            let total: f64 = set
                .diffusive
                .iter()
                .chain(set.counting.iter())
                .map(|l| l.apply(&psi).norm_sqr())
                .sum();
            assert_abs_diff_eq!(total, p.gamma * sm_psi, epsilon = 1e-14);
        }
    }

    #[test]
    fn homodyne_frame_coefficients_are_constant() {
        // g_j(t) = conj(alpha_j) e^{i u(t)} h_j(t) must not depend on the path.
        let (mut p, fb, osc) = squeezing_params();
        p.k0 = 0.4;
        p.alpha2 = Amplitude::from_abs2(0.45, 0.3);
        for (t, b0, b1) in [(0.0, 0.0, 0.0), (2.0, 1.1, -0.5), (9.0, -3.0, 2.0)] {
            let f = laser_wave(&p, &fb, t, b0, Some(b1));
            let u = p.theta + p.nu * t + p.k0 * b0 + fb.k1 * b1;
            for j in 1..=2 {
                let h = osc.oscillator(j, t, Some(f / f.norm()), 0.0).unwrap();
                let g = p.alpha(j).conj() * Complex64::from_polar(1.0, u) * h;
                let theta_j = osc.get(j).epsilon + p.alpha(j).arg();
                let expected = Complex64::from_polar(p.alpha(j).norm(), -theta_j);
                assert_abs_diff_eq!((g - expected).norm(), 0.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn frame_generator_forms_agree() {
        let (p, fb, osc) = squeezing_params();
        let fp = FrameParams::from_model(&p, &fb, &osc).unwrap();
        let direct = rotating_frame_generator(&fp).lhat;
        let lindblad = lindblad_frame_generator(&fp);
        assert!(direct.max_abs_diff(&lindblad) < 1e-12);
        let mut hot = fp;
        hot.k0 = 0.6;
        hot.n_bar = 0.3;
        hot.theta1 = 2.2;
        assert!(rotating_frame_generator(&hot).lhat.max_abs_diff(&lindblad_frame_generator(&hot)) < 1e-12);
    }

    #[test]
    fn frame_generator_is_trace_preserving() {
        let (p, fb, osc) = squeezing_params();
        let g = rotating_frame_generator(&FrameParams::from_model(&p, &fb, &osc).unwrap());
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert!(g.lhat.apply(&Operator2::unit(i, j)).trace().norm() < 1e-12);
        }
    }

    #[test]
    fn feedback_off_reduces_to_driven_atom() {
        let (mut p, _, osc) = squeezing_params();
        p.n_bar = 0.25;
        let fp = FrameParams::from_model(&p, &FeedbackSpec::none(), &osc).unwrap();
        let g = rotating_frame_generator(&fp);
        let h = (Operator2::sigma_z() * p.delta_nu + Operator2::sigma_x() * p.omega_r) * 0.5;
        let b = (p.gamma * p.n_bar).sqrt();
        let expected = superop_matrix(
            &h,
            &[
                Operator2::sigma_minus() * p.gamma.sqrt(),
                Operator2::sigma_minus() * b,
                Operator2::sigma_plus() * b,
            ],
        )
        .unwrap();
        assert!(g.lhat.max_abs_diff(&expected) < 1e-12);
        assert!(g.d0.max_abs_diff(&Superoperator2::zero()) < 1e-15);
    }

    #[test]
    fn heterodyne_frame_is_unsupported() {
        let (p, fb, mut osc) = squeezing_params();
        osc.lo1.mode = OscillatorMode::Heterodyne;
        assert!(matches!(FrameParams::from_model(&p, &fb, &osc), Err(Error::Unsupported(_))));
        let amp = FeedbackSpec {
            mode: FeedbackMode::Amplitude,
            c: 0.4,
            ..FeedbackSpec::default()
        };
        assert!(FrameParams::from_model(&p, &amp, &OscillatorSpec::homodyne(0.0, 0.0)).is_err());
    }

    #[test]
    fn phases_wrap_into_half_open_interval() {
        assert_abs_diff_eq!(wrap_phase(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_phase(PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_phase(3.0 * PI + 0.1), -PI + 0.1, epsilon = 1e-14);
    }
}
