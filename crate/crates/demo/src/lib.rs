//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every entry point takes the frame parameters of a fed-back atom with
//! `|alpha1|^2 = 0.45` on the first homodyne channel and returns a flat
//! `Float64Array`. Invalid parameters produce an empty array.

use wasm_bindgen::prelude::*;

use qtraj::analytic::{mandel_q3, spectrum_elastic_weight, spectrum_inelastic, BlochSystem, Horizon};
use qtraj::atom::{Amplitude, AtomModel, AtomParams, FeedbackSpec, FrameParams, OscillatorSpec};
use qtraj::engine::{integrate_nonlinear, ChannelModel, EngineConfig, NonlinearVariant, Scheme};
use qtraj::noise::{sample_path, split_seed, GridSpec};
use qtraj::ops::bloch_vector;

const ALPHA1_SQ: f64 = 0.45;

fn frame(omega_r: f64, delta_nu: f64, k1: f64, theta1: f64, theta2: f64, alpha2_sq: f64) -> FrameParams {
    FrameParams {
        gamma: 1.0,
        n_bar: 0.0,
        k0: 0.0,
        k1,
        delta_nu,
        omega_r,
        abs_alpha1: ALPHA1_SQ.sqrt(),
        abs_alpha2: alpha2_sq.sqrt(),
        theta1,
        theta2,
    }
}

/// `[s_el, S_inel(mu_0), ..., S_inel(mu_{n-1})]` on `n` points of `[0, mu_max]`
/// for the second homodyne channel (`|alpha2|^2 = 0.45`).
#[wasm_bindgen]
pub fn spectrum_curve(omega_r: f64, delta_nu: f64, k1: f64, theta1: f64, theta2: f64, mu_max: f64, n: usize) -> Vec<f64> {
    let Ok(bs) = BlochSystem::from_frame(&frame(omega_r, delta_nu, k1, theta1, theta2, ALPHA1_SQ)) else {
        return Vec::new();
    };
    let mut out = vec![spectrum_elastic_weight(&bs)];
    for i in 0..n {
        let mu = if n > 1 { mu_max * i as f64 / (n - 1) as f64 } else { 0.0 };
        match spectrum_inelastic(&bs, mu) {
            Ok(s) => out.push(s),
            Err(_) => return Vec::new(),
        }
    }
    out
}

/// `[Q(infinity), Q(t_1), ..., Q(t_n)]` of the photon counter with
/// `|beta3|^2 = 0.45` over windows `t_i = i * t_max / n`.
#[wasm_bindgen]
pub fn q3_curve(omega_r: f64, delta_nu: f64, k1: f64, theta1: f64, t_max: f64, n: usize) -> Vec<f64> {
    let Ok(bs) = BlochSystem::from_frame(&frame(omega_r, delta_nu, k1, theta1, 0.0, 0.05)) else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let horizon = if i == 0 { Horizon::Infinite } else { Horizon::Finite(t_max * i as f64 / n as f64) };
        match mandel_q3(&bs, 0.45, horizon) {
            Ok(q) => out.push(q.q),
            Err(_) => return Vec::new(),
        }
    }
    out
}

/// One normalized trajectory of the counting configuration, stored every
/// 20 steps of `0.005`: rows of `[t, x, y, z, N3]` flattened.
#[wasm_bindgen]
pub fn trajectory(omega_r: f64, delta_nu: f64, k1: f64, theta1: f64, t_end: f64, seed: u32) -> Vec<f64> {
    run_trajectory(omega_r, delta_nu, k1, theta1, t_end, seed as u64).unwrap_or_default()
}

fn run_trajectory(omega_r: f64, delta_nu: f64, k1: f64, theta1: f64, t_end: f64, seed: u64) -> Option<Vec<f64>> {
    let params = AtomParams {
        nu: 0.2,
        delta_nu,
        omega_r,
        theta: 0.0,
        k0: 0.0,
        gamma: 1.0,
        n_bar: 0.0,
        alpha1: Amplitude::from_abs2(ALPHA1_SQ, 0.0),
        alpha2: Amplitude::from_abs2(0.05, 0.0),
        beta3: Amplitude::from_abs2(0.45, 0.0),
        beta4: Amplitude::from_abs2(0.05, 0.0),
    };
    let model = AtomModel::new(params, FeedbackSpec::phase_simplified(k1), OscillatorSpec::homodyne(theta1, 0.0)).ok()?;
    let rho0 = model.stationary_initial_state().ok()?;
    let grid = GridSpec::new(t_end, 0.005).ok()?;
    let lambdas: Vec<f64> = model.counting_sup_norms().iter().map(|s| 2.0 * s).collect();
    let path = sample_path(grid, model.layout(), &lambdas, split_seed(seed, 0)).ok()?;
    let cfg = EngineConfig {
        scheme: Scheme::Factorized,
        store_every: 20,
        ..EngineConfig::default()
    };
    let rec = integrate_nonlinear(&model, &path, &rho0, &cfg, NonlinearVariant::Sme).ok()?;
    let mut out = Vec::with_capacity(rec.times.len() * 5);
    for (s, &t) in rec.times.iter().enumerate() {
        let r = bloch_vector(&rec.rho[s]);
        let n3: u32 = rec.jump_counts[0][..s * rec.store_every].iter().sum();
        out.extend([t, r[0], r[1], r[2], n3 as f64]);
    }
    Some(out)
}
