//! Euler–Maruyama integration of the linear and nonlinear stochastic
//! Schrödinger and master equations with random coefficients.
//!
//! Every integrator walks the grid once and hands a [`StepEvent`] to an
//! [`Observer`] after each step, so estimators can accumulate what they need
//! without storing whole trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{ChannelLayout, GridSpec, NoisePath};
use crate::ops::{
    hermitian_eigen, hermitian_eigenvalues, DensityOperator2, Operator2, StateVector2, Superoperator2, I,
};

/// Operators at one grid time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Coefficients {
    pub hamiltonian: Operator2,
    pub diffusive: Vec<Operator2>,
    pub counting: Vec<Operator2>,
}

/// A system with `d` diffusive and `d'` counting channels whose coefficients
/// may depend on the driving noises.
///
/// The first `n_diffusive()` Wiener drivers are the observed `B_j`; any further
/// ones are extra noises entering the coefficients.
pub trait ChannelModel: Sync {
    type State: Clone;

    fn layout(&self) -> ChannelLayout;

    fn n_diffusive(&self) -> usize;

    fn initial_state(&self, step: f64) -> Self::State;

    /// Writes `H(t)`, `L_i(t)` into `out`; `state` reflects the noises on `[0, t]`.
    fn coefficients(&self, state: &Self::State, t: f64, out: &mut Coefficients) -> Result<()>;

    /// Moves `state` across one step. `increments[j]` is the observed
    /// `dB_j` for `j < n_diffusive()` and the extra-noise increment otherwise.
    fn advance(&self, state: &mut Self::State, step: f64, increments: &[f64]);

    /// `sup_t ||L_k(t)||^2` per counting channel.
    fn counting_sup_norms(&self) -> Vec<f64>;

    /// Diffusive channels whose output drives the coefficients.
    fn feedback_channels(&self) -> Vec<usize>;

    /// `lambda_k = sup ||L_k||^2`, or 1 for a channel that never fires.
    fn default_intensities(&self) -> Vec<f64> {
        self.counting_sup_norms()
            .into_iter()
            .map(|x| if x > 0.0 { x } else { 1.0 })
            .collect()
    }
}

/// Time-independent coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantModel {
    pub hamiltonian: Operator2,
    pub diffusive: Vec<Operator2>,
    pub counting: Vec<Operator2>,
}

impl ConstantModel {
    pub fn new(hamiltonian: Operator2, diffusive: Vec<Operator2>, counting: Vec<Operator2>) -> Result<Self> {
        crate::ops::check_hamiltonian(&hamiltonian)?;
        Ok(ConstantModel {
            hamiltonian,
            diffusive,
            counting,
        })
    }

    pub fn generator(&self) -> Superoperator2 {
        let all: Vec<Operator2> = self.diffusive.iter().chain(&self.counting).copied().collect();
        Superoperator2::from_action(|tau| crate::ops::liouvillian_unchecked(&self.hamiltonian, &all, tau))
    }
}

impl ChannelModel for ConstantModel {
    type State = ();

    fn layout(&self) -> ChannelLayout {
        ChannelLayout {
            wiener: self.diffusive.len(),
            counting: self.counting.len(),
        }
    }

    fn n_diffusive(&self) -> usize {
        self.diffusive.len()
    }

    fn initial_state(&self, _step: f64) {}

    fn coefficients(&self, _state: &(), _t: f64, out: &mut Coefficients) -> Result<()> {
        out.hamiltonian = self.hamiltonian;
        out.diffusive.clone_from(&self.diffusive);
        out.counting.clone_from(&self.counting);
        Ok(())
    }

    fn advance(&self, _state: &mut (), _step: f64, _increments: &[f64]) {}

    fn counting_sup_norms(&self) -> Vec<f64> {
        self.counting.iter().map(|l| l.operator_norm().powi(2)).collect()
    }

    fn feedback_channels(&self) -> Vec<usize> {
        vec![]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Euler–Maruyama on the state matrix.
    #[default]
    EulerMaruyama,
    /// Euler–Maruyama on the vector equation for each eigenvector of the
    /// initial state, with `sigma = sum_i p_i phi_i phi_i^*`. Positive by
    /// construction, which the matrix scheme is not near pure states. The
    /// continuous part of each step is rescaled so that the mean weight
    /// follows the exact drift.
    Factorized,
}

/// State used as `rho` when the weight vanishes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    #[default]
    MaximallyMixed,
    Ground,
    Excited,
}

impl Fallback {
    pub fn state(&self) -> DensityOperator2 {
        match self {
            Fallback::MaximallyMixed => DensityOperator2::maximally_mixed(),
            Fallback::Ground => DensityOperator2::ground(),
            Fallback::Excited => DensityOperator2::excited(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub scheme: Scheme,
    /// `rho = sigma / p` is replaced by the fallback state when `p <= norm_floor`.
    pub norm_floor: f64,
    /// Store every n-th grid point in a [`TrajectoryRecord`].
    pub store_every: usize,
    /// Integration stops when the smallest eigenvalue of the state drops below
    /// `-divergence_tol * trace`.
    pub divergence_tol: f64,
    pub fallback: Fallback,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            scheme: Scheme::EulerMaruyama,
            norm_floor: 1e-12,
            store_every: 1,
            divergence_tol: 0.25,
            fallback: Fallback::MaximallyMixed,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.store_every == 0 {
            return Err(Error::config("engine.store_every", "must be >= 1"));
        }
        if !(self.norm_floor >= 0.0 && self.norm_floor.is_finite()) {
            return Err(Error::config("engine.norm_floor", "must be finite and >= 0"));
        }
        if !(self.divergence_tol > 0.0) {
            return Err(Error::config("engine.divergence_tol", "must be > 0"));
        }
        Ok(())
    }
}

/// What an observer sees after step `n`, i.e. across `(t_n, t_{n+1}]`.
pub struct StepEvent<'a> {
    pub n: usize,
    pub t: f64,
    pub step: f64,
    /// Coefficients at `t_n`.
    pub coefficients: &'a Coefficients,
    /// State at `t_n` (unnormalized for the linear equations).
    pub pre: &'a Operator2,
    /// State at `t_{n+1}`.
    pub post: &'a Operator2,
    /// `p(t_{n+1})`; identically 1 for the nonlinear equations.
    pub weight: f64,
    /// `m_i` and `i_k` at `t_n` from the normalized pre-step state.
    pub m: &'a [f64],
    pub intensity: &'a [f64],
    /// Observed increments `dB_j` on the step.
    pub output: &'a [f64],
    /// Number of jumps of each counting channel in the step.
    pub jumps: &'a [u32],
    /// Reference intensities of the linear equations.
    pub lambdas: &'a [f64],
}

impl StepEvent<'_> {
    /// Applies this step's linear propagator to `x`, for propagating extra
    /// operators alongside a linear run.
    pub fn propagate(&self, x: &Operator2) -> Operator2 {
        linear_map_step(self.coefficients, x, self.step, self.output, self.jumps, self.lambdas)
    }
}

pub trait Observer {
    fn on_start(&mut self, _state: &Operator2) {}
    fn on_step(&mut self, event: &StepEvent<'_>) -> Result<()>;
}

impl Observer for () {
    fn on_step(&mut self, _event: &StepEvent<'_>) -> Result<()> {
        Ok(())
    }
}

impl<A: Observer, B: Observer> Observer for (A, B) {
    fn on_start(&mut self, state: &Operator2) {
        self.0.on_start(state);
        self.1.on_start(state);
    }

    fn on_step(&mut self, event: &StepEvent<'_>) -> Result<()> {
        self.0.on_step(event)?;
        self.1.on_step(event)
    }
}

/// `m_i = 2 Re tr(L_i rho)`.
#[inline]
pub fn m_value(l: &Operator2, rho: &Operator2) -> f64 {
    2.0 * (*l * *rho).trace().re
}

/// `i_k = tr(L_k^* L_k rho)`.
#[inline]
pub fn intensity_value(l: &Operator2, rho: &Operator2) -> f64 {
    (l.adjoint() * *l * *rho).trace().re
}

#[inline]
fn jump_map(l: &Operator2, x: &Operator2) -> Operator2 {
    *l * *x * l.adjoint()
}

#[inline]
fn hamiltonian_and_decay(co: &Coefficients, x: &Operator2) -> Operator2 {
    let mut k = co.hamiltonian * (-I);
    for l in co.diffusive.iter().chain(&co.counting) {
        k -= l.adjoint() * *l * 0.5;
    }
    k * *x + *x * k.adjoint()
}

/// One step of the linear master equation: drift and diffusion from the
/// pre-step state, then each jump in the step applied as `x -> L x L^* / lambda`.
pub fn linear_sme_step(
    co: &Coefficients,
    sigma: &Operator2,
    h: f64,
    db: &[f64],
    jumps: &[u32],
    lambdas: &[f64],
) -> Operator2 {
    linear_map_step(co, sigma, h, db, jumps, lambdas).hermitian_part()
}

/// The same step as a linear map on arbitrary operators, without symmetrization.
fn linear_map_step(
    co: &Coefficients,
    sigma: &Operator2,
    h: f64,
    db: &[f64],
    jumps: &[u32],
    lambdas: &[f64],
) -> Operator2 {
    let mut drift = hamiltonian_and_decay(co, sigma);
    for l in &co.diffusive {
        drift += jump_map(l, sigma);
    }
    let lam_total: f64 = lambdas.iter().sum();
    drift += *sigma * lam_total;
    let mut next = *sigma + drift * h;
    for (l, db) in co.diffusive.iter().zip(db) {
        next += (*l * *sigma + *sigma * l.adjoint()) * *db;
    }
    for ((l, &count), &lam) in co.counting.iter().zip(jumps).zip(lambdas) {
        for _ in 0..count {
            next = jump_map(l, &next) * (1.0 / lam);
        }
    }
    next
}

/// One step of the linear Schrödinger equation.
pub fn linear_sse_step(
    co: &Coefficients,
    phi: &StateVector2,
    h: f64,
    db: &[f64],
    jumps: &[u32],
    lambdas: &[f64],
) -> StateVector2 {
    let (next, _) = sse_continuous_part(co, phi, h, db, lambdas);
    sse_jumps(co, next, jumps, lambdas)
}

/// Linear Schrödinger step whose continuous part is rescaled so that the
/// conditional mean of `||phi||^2` follows the exact drift, which plain
/// Euler–Maruyama overshoots by `h^2 ||K phi||^2`.
fn linear_sse_step_mean_exact(
    co: &Coefficients,
    phi: &StateVector2,
    h: f64,
    db: &[f64],
    jumps: &[u32],
    lambdas: &[f64],
) -> StateVector2 {
    let (next, kphi) = sse_continuous_part(co, phi, h, db, lambdas);
    let norm = phi.norm_sqr();
    let mut drift = 2.0 * phi.inner(&kphi).re;
    for l in &co.diffusive {
        drift += l.apply(phi).norm_sqr();
    }
    let target = norm + h * drift;
    let overshoot = h * h * kphi.norm_sqr();
    let next = if target > 0.0 {
        StateVector2(next.0 * crate::ops::c((target / (target + overshoot)).sqrt(), 0.0))
    } else {
        next
    };
    sse_jumps(co, next, jumps, lambdas)
}

/// Drift and diffusion of the linear Schrödinger equation; also returns `K phi`.
fn sse_continuous_part(
    co: &Coefficients,
    phi: &StateVector2,
    h: f64,
    db: &[f64],
    lambdas: &[f64],
) -> (StateVector2, StateVector2) {
    let mut k = co.hamiltonian * (-I);
    for l in co.diffusive.iter().chain(&co.counting) {
        k -= l.adjoint() * *l * 0.5;
    }
    let lam_total: f64 = lambdas.iter().sum();
    k += Operator2::identity() * (0.5 * lam_total);
    let kphi = k.apply(phi);
    let mut next = phi.0 + kphi.0 * crate::ops::c(h, 0.0);
    for (l, db) in co.diffusive.iter().zip(db) {
        next += l.apply(phi).0 * crate::ops::c(*db, 0.0);
    }
    (StateVector2(next), kphi)
}

fn sse_jumps(co: &Coefficients, mut v: StateVector2, jumps: &[u32], lambdas: &[f64]) -> StateVector2 {
    for ((l, &count), &lam) in co.counting.iter().zip(jumps).zip(lambdas) {
        for _ in 0..count {
            v = StateVector2(l.apply(&v).0 / crate::ops::c(lam.sqrt(), 0.0));
        }
    }
    v
}

/// The unnormalized state as the integrators carry it.
#[derive(Clone, Copy, Debug)]
enum Carrier {
    Matrix(Operator2),
    Factors {
        vecs: [StateVector2; 2],
        probs: [f64; 2],
        len: usize,
    },
}

impl Carrier {
    fn new(rho0: &Operator2, scheme: Scheme) -> Self {
        match scheme {
            Scheme::EulerMaruyama => Carrier::Matrix(*rho0),
            Scheme::Factorized => {
                let mut vecs = [StateVector2::ground(); 2];
                let mut probs = [0.0; 2];
                let mut len = 0;
                for (p, v) in hermitian_eigen(rho0).into_iter().rev() {
                    if p > 0.0 {
                        vecs[len] = v;
                        probs[len] = p;
                        len += 1;
                    }
                }
                Carrier::Factors { vecs, probs, len }
            }
        }
    }

    fn operator(&self) -> Operator2 {
        match self {
            Carrier::Matrix(x) => *x,
            Carrier::Factors { vecs, probs, len } => {
                let mut x = Operator2::zero();
                for i in 0..*len {
                    x += vecs[i].projector() * probs[i];
                }
                x
            }
        }
    }

    fn linear_step(&self, co: &Coefficients, h: f64, db: &[f64], jumps: &[u32], lambdas: &[f64]) -> Self {
        match self {
            Carrier::Matrix(x) => Carrier::Matrix(linear_sme_step(co, x, h, db, jumps, lambdas)),
            Carrier::Factors { vecs, probs, len } => {
                let mut out = [StateVector2::ground(); 2];
                for i in 0..*len {
                    out[i] = linear_sse_step_mean_exact(co, &vecs[i], h, db, jumps, lambdas);
                }
                Carrier::Factors {
                    vecs: out,
                    probs: *probs,
                    len: *len,
                }
            }
        }
    }

    fn scaled(&self, s: f64) -> Self {
        match self {
            Carrier::Matrix(x) => Carrier::Matrix(*x * s),
            Carrier::Factors { vecs, probs, len } => Carrier::Factors {
                vecs: *vecs,
                probs: [probs[0] * s, probs[1] * s],
                len: *len,
            },
        }
    }
}

fn check_positivity(x: &Operator2, scale: f64, tol: f64, t: f64) -> Result<()> {
    let (lo, _) = hermitian_eigenvalues(x);
    if !x.is_finite() || !lo.is_finite() || lo < -tol * scale.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::Diverged {
            t,
            min_eigenvalue: lo,
            trace: scale,
        });
    }
    Ok(())
}

/// Walks the jump lists of a path step by step.
struct JumpCursor {
    next: Vec<usize>,
    counts: Vec<u32>,
}

impl JumpCursor {
    fn new(n: usize) -> Self {
        JumpCursor {
            next: vec![0; n],
            counts: vec![0; n],
        }
    }

    /// Jumps of step `n`; `accept` sees `(channel, uniform mark)` of each candidate.
    fn advance(&mut self, path: &NoisePath, n: usize, mut accept: impl FnMut(usize, f64) -> bool) -> &[u32] {
        for (k, times) in path.jump_times.iter().enumerate() {
            self.counts[k] = 0;
            while self.next[k] < times.len() && path.grid.step_containing(times[self.next[k]]) == n {
                if accept(k, path.jump_marks[k][self.next[k]]) {
                    self.counts[k] += 1;
                }
                self.next[k] += 1;
            }
        }
        &self.counts
    }
}

fn check_path<M: ChannelModel>(model: &M, path: &NoisePath) -> Result<()> {
    let want = model.layout();
    let got = path.layout();
    if want != got {
        return Err(Error::invalid(format!(
            "noise path has {} Wiener / {} counting channels, model needs {} / {}",
            got.wiener, got.counting, want.wiener, want.counting
        )));
    }
    Ok(())
}

fn check_coefficients(co: &Coefficients, layout: ChannelLayout, n_diffusive: usize) -> Result<()> {
    if co.diffusive.len() != n_diffusive || co.counting.len() != layout.counting {
        return Err(Error::invalid(format!(
            "model produced {} diffusive / {} counting operators, layout says {} / {}",
            co.diffusive.len(),
            co.counting.len(),
            n_diffusive,
            layout.counting
        )));
    }
    Ok(())
}

/// Final values of a linear run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearOutcome {
    pub sigma: Operator2,
    pub weight: f64,
}

/// Integrates the linear master equation over the whole grid of `path`.
pub fn run_linear_sme<M: ChannelModel, O: Observer>(
    model: &M,
    path: &NoisePath,
    rho0: &DensityOperator2,
    cfg: &EngineConfig,
    observer: &mut O,
) -> Result<LinearOutcome> {
    check_path(model, path)?;
    let layout = model.layout();
    let d = model.n_diffusive();
    let grid = path.grid;
    let h = grid.step();
    let fallback = cfg.fallback.state().into_operator();
    let mut state = model.initial_state(h);
    let mut co = Coefficients::default();
    let mut cursor = JumpCursor::new(layout.counting);
    let mut incs = vec![0.0; layout.wiener];
    let mut m = vec![0.0; d];
    let mut intensity = vec![0.0; layout.counting];
    let mut carrier = Carrier::new(rho0.as_operator(), cfg.scheme);
    let mut sigma = carrier.operator();
    observer.on_start(&sigma);
    for n in 0..grid.n_steps() {
        let t = grid.time(n);
        model.coefficients(&state, t, &mut co)?;
        if n == 0 {
            check_coefficients(&co, layout, d)?;
        }
        let p = sigma.trace().re;
        let rho = if p > cfg.norm_floor { sigma * (1.0 / p) } else { fallback };
        for (mi, l) in m.iter_mut().zip(&co.diffusive) {
            *mi = m_value(l, &rho);
        }
        for (ik, l) in intensity.iter_mut().zip(&co.counting) {
            *ik = intensity_value(l, &rho);
        }
        for (c, inc) in incs.iter_mut().enumerate() {
            *inc = path.wiener_increments[c][n];
        }
        let jumps = cursor.advance(path, n, |_, _| true);
        carrier = carrier.linear_step(&co, h, &incs[..d], jumps, &path.intensities);
        let next = carrier.operator();
        let t_next = grid.time(n + 1);
        let weight = next.trace().re;
        check_positivity(&next, weight, cfg.divergence_tol, t_next)?;
        observer.on_step(&StepEvent {
            n,
            t: t_next,
            step: h,
            coefficients: &co,
            pre: &sigma,
            post: &next,
            weight,
            m: &m,
            intensity: &intensity,
            output: &incs[..d],
            jumps,
            lambdas: &path.intensities,
        })?;
        model.advance(&mut state, h, &incs);
        sigma = next;
    }
    Ok(LinearOutcome {
        sigma,
        weight: sigma.trace().re,
    })
}

/// Stored samples of one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub grid: GridSpec,
    pub store_every: usize,
    /// Stored times `t_0, t_s, t_2s, ...`.
    pub times: Vec<f64>,
    /// Unnormalized state (equal to `rho` for the nonlinear equations).
    pub sigma: Vec<Operator2>,
    pub weight: Vec<f64>,
    pub rho: Vec<Operator2>,
    /// `m_i(t)` and `i_k(t)` at the stored times, from the state at that time.
    pub m: Vec<Vec<f64>>,
    pub intensity: Vec<Vec<f64>>,
    /// Observed `dB_j` per step, at full resolution.
    pub output_increments: Vec<Vec<f64>>,
    /// Accepted jumps per step and counting channel, at full resolution.
    pub jump_counts: Vec<Vec<u32>>,
    pub fallback: DensityOperator2,
    pub seed: u64,
}

impl TrajectoryRecord {
    /// Cumulative output `B_j(t_n)`.
    pub fn output_value(&self, j: usize, n: usize) -> f64 {
        self.output_increments[j][..n].iter().sum()
    }

    /// Number of accepted jumps of channel `k` on `(0, t_n]`.
    pub fn count_value(&self, k: usize, n: usize) -> u64 {
        self.jump_counts[k][..n].iter().map(|&c| c as u64).sum()
    }
}

struct Recorder {
    store_every: usize,
    norm_floor: f64,
    fallback: Operator2,
    rec: TrajectoryRecord,
}

impl Recorder {
    fn new(grid: GridSpec, cfg: &EngineConfig, d: usize, counting: usize, seed: u64) -> Self {
        Recorder {
            store_every: cfg.store_every,
            norm_floor: cfg.norm_floor,
            fallback: cfg.fallback.state().into_operator(),
            rec: TrajectoryRecord {
                grid,
                store_every: cfg.store_every,
                times: vec![],
                sigma: vec![],
                weight: vec![],
                rho: vec![],
                m: vec![vec![]; d],
                intensity: vec![vec![]; counting],
                output_increments: vec![Vec::with_capacity(grid.n_steps()); d],
                jump_counts: vec![Vec::with_capacity(grid.n_steps()); counting],
                fallback: cfg.fallback.state(),
                seed,
            },
        }
    }

    fn store(&mut self, t: f64, sigma: &Operator2, weight: f64) {
        self.rec.times.push(t);
        self.rec.sigma.push(*sigma);
        self.rec.weight.push(weight);
        let rho = if weight > self.norm_floor { *sigma * (1.0 / weight) } else { self.fallback };
        self.rec.rho.push(rho);
    }

    /// `m`, `i` at a stored time come from the coefficients of the following
    /// step; the final time uses the last available coefficients.
    fn store_rates(&mut self, co: &Coefficients, rho: &Operator2) {
        for (v, l) in self.rec.m.iter_mut().zip(&co.diffusive) {
            v.push(m_value(l, rho));
        }
        for (v, l) in self.rec.intensity.iter_mut().zip(&co.counting) {
            v.push(intensity_value(l, rho));
        }
    }

    fn finish(mut self, last: Option<Coefficients>) -> TrajectoryRecord {
        if let (Some(co), Some(rho)) = (last, self.rec.rho.last().copied()) {
            if self.rec.m.first().map_or(0, |v| v.len()) < self.rec.times.len()
                || self.rec.intensity.first().map_or(0, |v| v.len()) < self.rec.times.len()
            {
                self.store_rates(&co, &rho);
            }
        }
        self.rec
    }
}

struct RecordingObserver {
    inner: Recorder,
    last: Option<Coefficients>,
}

impl Observer for RecordingObserver {
    fn on_start(&mut self, state: &Operator2) {
        self.inner.store(0.0, state, state.trace().re);
    }

    fn on_step(&mut self, ev: &StepEvent<'_>) -> Result<()> {
        let r = &mut self.inner;
        if ev.n.is_multiple_of(r.store_every) {
            let rho = *r.rec.rho.last().expect("initial state stored");
            r.store_rates(ev.coefficients, &rho);
        }
        for (v, db) in r.rec.output_increments.iter_mut().zip(ev.output) {
            v.push(*db);
        }
        for (v, c) in r.rec.jump_counts.iter_mut().zip(ev.jumps) {
            v.push(*c);
        }
        if (ev.n + 1).is_multiple_of(r.store_every) {
            r.store(ev.t, ev.post, ev.weight);
        }
        if ev.n + 1 == r.rec.grid.n_steps() {
            self.last = Some(ev.coefficients.clone());
        }
        Ok(())
    }
}

/// Linear master equation with stored samples.
pub fn integrate_linear_sme<M: ChannelModel>(
    model: &M,
    path: &NoisePath,
    rho0: &DensityOperator2,
    cfg: &EngineConfig,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let layout = model.layout();
    let mut obs = RecordingObserver {
        inner: Recorder::new(path.grid, cfg, model.n_diffusive(), layout.counting, path.seed),
        last: None,
    };
    run_linear_sme(model, path, rho0, cfg, &mut obs)?;
    Ok(obs.inner.finish(obs.last))
}

/// Stored samples of a linear Schrödinger trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct SseRecord {
    pub times: Vec<f64>,
    pub phi: Vec<StateVector2>,
    /// `||phi(t)||^2`
    pub weight: Vec<f64>,
}

/// Linear Schrödinger equation on the whole grid of `path`.
pub fn integrate_linear_sse<M: ChannelModel>(
    model: &M,
    path: &NoisePath,
    phi0: &StateVector2,
    cfg: &EngineConfig,
) -> Result<SseRecord> {
    cfg.validate()?;
    check_path(model, path)?;
    if (phi0.norm() - 1.0).abs() > crate::ops::CONSTRUCTION_TOL {
        return Err(Error::invalid(format!("initial vector must have unit norm, got {}", phi0.norm())));
    }
    let layout = model.layout();
    let d = model.n_diffusive();
    let grid = path.grid;
    let h = grid.step();
    let mut state = model.initial_state(h);
    let mut co = Coefficients::default();
    let mut cursor = JumpCursor::new(layout.counting);
    let mut incs = vec![0.0; layout.wiener];
    let mut phi = *phi0;
    let mut rec = SseRecord {
        times: vec![0.0],
        phi: vec![phi],
        weight: vec![phi.norm_sqr()],
    };
    for n in 0..grid.n_steps() {
        model.coefficients(&state, grid.time(n), &mut co)?;
        if n == 0 {
            check_coefficients(&co, layout, d)?;
        }
        for (c, inc) in incs.iter_mut().enumerate() {
            *inc = path.wiener_increments[c][n];
        }
        let jumps = cursor.advance(path, n, |_, _| true);
        phi = linear_sse_step(&co, &phi, h, &incs[..d], jumps, &path.intensities);
        if !(phi.norm_sqr().is_finite()) {
            return Err(Error::Diverged {
                t: grid.time(n + 1),
                min_eigenvalue: f64::NAN,
                trace: phi.norm_sqr(),
            });
        }
        model.advance(&mut state, h, &incs);
        if (n + 1) % cfg.store_every == 0 {
            rec.times.push(grid.time(n + 1));
            rec.phi.push(phi);
            rec.weight.push(phi.norm_sqr());
        }
    }
    Ok(rec)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearVariant {
    Sse,
    #[default]
    Sme,
}

/// Envelope rates for thinning under the physical law:
/// `max(lambda_k, 2 sup ||L_k||^2)`, so every intensity stays below half the envelope.
pub fn thinning_envelope<M: ChannelModel>(model: &M, lambdas: &[f64]) -> Vec<f64> {
    model
        .counting_sup_norms()
        .iter()
        .zip(lambdas)
        .map(|(s, l)| l.max(2.0 * s))
        .collect()
}

fn pure_vector(rho: &DensityOperator2) -> Result<StateVector2> {
    let r = rho.as_operator();
    let j = if r.get(0, 0).re >= r.get(1, 1).re { 0 } else { 1 };
    let pivot = r.get(j, j).re;
    let v = StateVector2::new(r.get(0, j) / pivot.sqrt(), r.get(1, j) / pivot.sqrt());
    let back = v.projector();
    if (back - *r).max_abs() > 1e-8 {
        return Err(Error::invalid("the nonlinear Schrödinger equation needs a pure initial state"));
    }
    Ok(v)
}

/// One step under the physical law. `dw` are the innovations, `accept`
/// reports whether each candidate jump of each channel is kept.
#[allow(clippy::too_many_arguments)]
fn nonlinear_step(
    variant: NonlinearVariant,
    co: &Coefficients,
    rho: &Operator2,
    psi: &mut StateVector2,
    h: f64,
    dw: &[f64],
    m: &[f64],
    intensity: &[f64],
    jumps: &[u32],
) -> Operator2 {
    match variant {
        NonlinearVariant::Sme => {
            let mut drift = hamiltonian_and_decay(co, rho);
            for l in &co.diffusive {
                drift += jump_map(l, rho);
            }
            // compensator: counting dissipators minus (L rho L^* - i rho)
            let i_total: f64 = intensity.iter().sum();
            drift += *rho * i_total;
            let mut next = *rho + drift * h;
            for ((l, w), mi) in co.diffusive.iter().zip(dw).zip(m) {
                next += (*l * *rho + *rho * l.adjoint() - *rho * *mi) * *w;
            }
            let mut next = next.hermitian_part();
            next = next * (1.0 / next.trace().re);
            for (l, &count) in co.counting.iter().zip(jumps) {
                for _ in 0..count {
                    let j = jump_map(l, &next);
                    next = j * (1.0 / j.trace().re);
                }
            }
            next
        }
        NonlinearVariant::Sse => {
            let mut k = co.hamiltonian * (-I);
            for l in co.diffusive.iter().chain(&co.counting) {
                k -= l.adjoint() * *l * 0.5;
            }
            let m2: f64 = m.iter().map(|x| x * x).sum();
            let i_total: f64 = intensity.iter().sum();
            k += Operator2::identity() * (0.5 * i_total - 0.125 * m2);
            for (l, mi) in co.diffusive.iter().zip(m) {
                k += *l * (0.5 * mi);
            }
            let mut next = psi.0 + k.apply(psi).0 * crate::ops::c(h, 0.0);
            for ((l, w), mi) in co.diffusive.iter().zip(dw).zip(m) {
                next += (l.apply(psi).0 - psi.0 * crate::ops::c(0.5 * mi, 0.0)) * crate::ops::c(*w, 0.0);
            }
            let mut v = StateVector2(next);
            v = StateVector2(v.0 / crate::ops::c(v.norm(), 0.0));
            for (l, &count) in co.counting.iter().zip(jumps) {
                for _ in 0..count {
                    let j = l.apply(&v);
                    v = StateVector2(j.0 / crate::ops::c(j.norm(), 0.0));
                }
            }
            *psi = v;
            v.projector()
        }
    }
}

/// Integrates a nonlinear equation under the physical law. The first
/// `n_diffusive` Wiener channels of `path` are the innovations `W_j`; its
/// counting channels are candidate jumps at the envelope rates
/// `path.intensities`, each kept with probability `i_k / envelope_k`.
/// Observers see `dB_j = dW_j + m_j dt` as output.
pub fn run_nonlinear<M: ChannelModel, O: Observer>(
    model: &M,
    path: &NoisePath,
    rho0: &DensityOperator2,
    cfg: &EngineConfig,
    variant: NonlinearVariant,
    observer: &mut O,
) -> Result<Operator2> {
    check_path(model, path)?;
    let layout = model.layout();
    let d = model.n_diffusive();
    let grid = path.grid;
    let h = grid.step();
    let mut state = model.initial_state(h);
    let mut co = Coefficients::default();
    let mut cursor = JumpCursor::new(layout.counting);
    let mut incs = vec![0.0; layout.wiener];
    let mut dw = vec![0.0; d];
    let mut m = vec![0.0; d];
    let mut intensity = vec![0.0; layout.counting];
    let ones = vec![1.0; layout.counting];
    let mut psi = match variant {
        NonlinearVariant::Sse => pure_vector(rho0)?,
        NonlinearVariant::Sme => StateVector2::ground(),
    };
    let mut carrier = Carrier::new(rho0.as_operator(), cfg.scheme);
    let mut rho = *rho0.as_operator();
    observer.on_start(&rho);
    for n in 0..grid.n_steps() {
        let t = grid.time(n);
        model.coefficients(&state, t, &mut co)?;
        if n == 0 {
            check_coefficients(&co, layout, d)?;
        }
        for (mi, l) in m.iter_mut().zip(&co.diffusive) {
            *mi = m_value(l, &rho);
        }
        for (k, (ik, l)) in intensity.iter_mut().zip(&co.counting).enumerate() {
            let v = intensity_value(l, &rho);
            // the scheme is not positivity preserving; accept the same relative slack as for the state
            if v < -cfg.divergence_tol * l.operator_norm().powi(2) - 1e-12 {
                return Err(Error::NegativeIntensity { t, channel: k, value: v });
            }
            if v > path.intensities[k] {
                return Err(Error::Precondition(format!(
                    "intensity {v} of counting channel {k} exceeds the thinning envelope {}",
                    path.intensities[k]
                )));
            }
            *ik = v.max(0.0);
        }
        for (inc, w) in incs.iter_mut().zip(&path.wiener_increments) {
            *inc = w[n];
        }
        dw[..d].copy_from_slice(&incs[..d]);
        for (inc, mj) in incs[..d].iter_mut().zip(&m) {
            *inc += mj * h;
        }
        // later candidates in the same step see the state after the jumps already kept
        let mut current = rho;
        let counting = &co.counting;
        let jumps = cursor.advance(path, n, |k, mark| {
            let keep = mark * path.intensities[k] < intensity_value(&counting[k], &current).max(0.0);
            if keep {
                let j = jump_map(&counting[k], &current);
                current = j * (1.0 / j.trace().re);
            }
            keep
        });
        let next = match (variant, carrier) {
            (NonlinearVariant::Sme, Carrier::Factors { .. }) => {
                // the normalized linear equation driven by the observed output
                let stepped = carrier.linear_step(&co, h, &incs[..d], jumps, &ones);
                carrier = stepped.scaled(1.0 / stepped.operator().trace().re);
                carrier.operator()
            }
            _ => nonlinear_step(variant, &co, &rho, &mut psi, h, &dw, &m, &intensity, jumps),
        };
        let t_next = grid.time(n + 1);
        check_positivity(&next, 1.0, cfg.divergence_tol, t_next)?;
        observer.on_step(&StepEvent {
            n,
            t: t_next,
            step: h,
            coefficients: &co,
            pre: &rho,
            post: &next,
            weight: 1.0,
            m: &m,
            intensity: &intensity,
            output: &incs[..d],
            jumps,
            lambdas: &ones,
        })?;
        model.advance(&mut state, h, &incs);
        rho = next;
    }
    Ok(rho)
}

/// Nonlinear equation with stored samples; `sigma` and `rho` coincide and the weight is 1.
pub fn integrate_nonlinear<M: ChannelModel>(
    model: &M,
    path: &NoisePath,
    rho0: &DensityOperator2,
    cfg: &EngineConfig,
    variant: NonlinearVariant,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let layout = model.layout();
    let mut obs = RecordingObserver {
        inner: Recorder::new(path.grid, cfg, model.n_diffusive(), layout.counting, path.seed),
        last: None,
    };
    run_nonlinear(model, path, rho0, cfg, variant, &mut obs)?;
    Ok(obs.inner.finish(obs.last))
}

/// Innovation-related processes of a stored trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct GirsanovQuantities {
    /// `m_i(t_n)` for every step.
    pub m: Vec<Vec<f64>>,
    /// `i_k(t_n)` for every step.
    pub intensity: Vec<Vec<f64>>,
    /// `dW_j = dB_j - m_j dt` for every step.
    pub innovations: Vec<Vec<f64>>,
}

/// `m_i`, `i_k` and `dW_j` along a record stored at every grid point.
pub fn girsanov_quantities(record: &TrajectoryRecord) -> Result<GirsanovQuantities> {
    if record.store_every != 1 {
        return Err(Error::Precondition(
            "Girsanov quantities need a record stored at every grid point".into(),
        ));
    }
    let n = record.grid.n_steps();
    let h = record.grid.step();
    let m: Vec<Vec<f64>> = record.m.iter().map(|v| v[..n].to_vec()).collect();
    let intensity = record.intensity.iter().map(|v| v[..n].to_vec()).collect();
    let innovations = record
        .output_increments
        .iter()
        .zip(&m)
        .map(|(db, mv)| db.iter().zip(mv).map(|(b, mi)| b - mi * h).collect())
        .collect();
    Ok(GirsanovQuantities {
        m,
        intensity,
        innovations,
    })
}

struct PropagatorObserver {
    start: usize,
    end: usize,
    columns: [Operator2; 4],
}

impl Observer for PropagatorObserver {
    fn on_step(&mut self, ev: &StepEvent<'_>) -> Result<()> {
        if ev.n >= self.start && ev.n < self.end {
            for c in self.columns.iter_mut() {
                *c = ev.propagate(c);
            }
        }
        Ok(())
    }
}

/// Random propagator `A(t, s)` of the linear master equation along `path`.
pub fn propagator<M: ChannelModel>(model: &M, path: &NoisePath, s: f64, t: f64) -> Result<Superoperator2> {
    if s > t {
        return Err(Error::invalid(format!("propagator needs s <= t, got s = {s}, t = {t}")));
    }
    let grid = path.grid;
    let (ns, nt) = (grid.index_of(s), grid.index_of(t));
    let tol = 1e-9 * grid.step();
    if (grid.time(ns) - s).abs() > tol || (grid.time(nt) - t).abs() > tol {
        return Err(Error::invalid(format!("s = {s} and t = {t} must lie on the grid")));
    }
    let mut obs = PropagatorObserver {
        start: ns,
        end: nt,
        columns: [
            Operator2::unit(0, 0),
            Operator2::unit(1, 0),
            Operator2::unit(0, 1),
            Operator2::unit(1, 1),
        ],
    };
    // Coefficients under the reference law do not depend on the state, so
    // the main run only carries the model forward.
    let cfg = EngineConfig {
        divergence_tol: f64::INFINITY,
        ..EngineConfig::default()
    };
    let truncated = NoisePath {
        grid: GridSpec::new(grid.time(nt), grid.step())?,
        wiener_increments: path.wiener_increments.iter().map(|w| w[..nt].to_vec()).collect(),
        jump_times: path
            .jump_times
            .iter()
            .map(|v| v.iter().copied().filter(|&x| x <= grid.time(nt)).collect())
            .collect(),
        ..path.clone()
    };
    run_linear_sme(model, &truncated, &DensityOperator2::maximally_mixed(), &cfg, &mut obs)?;
    let mut out = Superoperator2::zero();
    for (col, x) in obs.columns.iter().enumerate() {
        out.0.set_column(col, &x.vectorize());
    }
    Ok(out)
}
