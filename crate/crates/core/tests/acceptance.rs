//! End-to-end acceptance run: every criterion prints one PASS/FAIL line and
//! the process fails if any criterion fails.

#![allow(clippy::approx_constant)]

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qtraj::analytic::{
    heisenberg_product, mandel_q3, spectrum_elastic_weight, spectrum_inelastic, BlochSystem, Horizon,
};
use qtraj::atom::{rotating_frame_generator, Amplitude, AtomModel, AtomParams, FeedbackSpec, FrameParams, OscillatorSpec};
use qtraj::engine::{ChannelModel, ConstantModel, EngineConfig, Observer, Scheme, StepEvent};
use qtraj::ensemble::{simulate, EnsembleSpec, RunSpec, Unravelling};
use qtraj::error::Result;
use qtraj::noise::GridSpec;
use qtraj::ops::{c, choi_positivity, superop_exp, superop_matrix, DensityOperator2, Operator2};
use qtraj::search::{minimize, minimize_with_restarts, FreeParam, Objective, Param, SearchProblem};
use qtraj::stats::{
    estimate_mandel_q, estimate_spectrum, weighted_expectation, CountObserver, CountSample, Estimate, FourierObserver,
    SpectrumSample,
};

struct Report {
    failures: Vec<String>,
}

impl Report {
    fn record(&mut self, label: &str, pass: bool, elapsed: Duration, detail: String) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("criterion {label:<4} {verdict}  [{:.1} s]  {detail}", elapsed.as_secs_f64());
        if !pass {
            self.failures.push(label.to_string());
        }
    }
}

fn spectrum_frame(omega_r: f64, delta_nu: f64, k1: f64, theta1: f64, theta2: f64) -> FrameParams {
    FrameParams {
        gamma: 1.0,
        n_bar: 0.0,
        k0: 0.0,
        k1,
        delta_nu,
        omega_r,
        abs_alpha1: 0.45f64.sqrt(),
        abs_alpha2: 0.45f64.sqrt(),
        theta1,
        theta2,
    }
}

fn counting_frame(omega_r: f64, delta_nu: f64, k1: f64, theta1: f64) -> FrameParams {
    FrameParams {
        abs_alpha2: 0.05f64.sqrt(),
        ..spectrum_frame(omega_r, delta_nu, k1, theta1, 0.0)
    }
}

fn theta2_for_no_feedback() -> f64 {
    let problem = SearchProblem {
        objective: Objective::SInelAt { mu: 4.0 },
        free: vec![FreeParam {
            param: Param::Theta2,
            lo: -PI,
            hi: PI,
        }],
        fixed: spectrum_frame(2.9001, 2.8077, 0.0, 0.0, 0.0),
        beta3_sq: 0.0,
    };
    let starts: Vec<Vec<f64>> = (0..8).map(|i| vec![-PI + (i as f64 + 0.5) * PI / 4.0]).collect();
    minimize(&problem, &starts, 400).unwrap().best_params[0]
}

/// Parameter sets of criterion 1 with their reference values `(S_inel, mu, s_el)`.
fn spectrum_cases() -> Vec<(&'static str, FrameParams, f64, f64, Option<f64>)> {
    vec![
        ("1a", spectrum_frame(0.366, 0.0, 0.3371, -PI, -1.5708), 0.0, 0.8172, Some(1.0245)),
        ("1b", spectrum_frame(1.6150, 1.3833, 0.3213, -1.9307, -0.1540), 2.0, 0.8621, Some(1.4214)),
        ("1c", spectrum_frame(3.1708, 2.5576, 0.3249, -1.7863, -0.0760), 4.0, 0.8572, Some(1.5356)),
        ("1d", spectrum_frame(2.9001, 2.8077, 0.0, 0.0, theta2_for_no_feedback()), 4.0, 0.8830, None),
    ]
}

fn criterion_1(r: &mut Report) {
    for (label, fp, mu, s_ref, el_ref) in spectrum_cases() {
        let t = Instant::now();
        let bs = BlochSystem::from_frame(&fp).unwrap();
        let s = spectrum_inelastic(&bs, mu).unwrap();
        let el = spectrum_elastic_weight(&bs);
        let elapsed = t.elapsed();
        let mut pass = (s - s_ref).abs() <= 2e-3 && elapsed < Duration::from_secs(1);
        let mut detail = format!("S_inel({mu}) = {s:.5} (reference {s_ref})");
        if let Some(e) = el_ref {
            pass &= (el - e).abs() <= 2e-3;
            detail += &format!(", s_el = {el:.5} (reference {e})");
        } else {
            detail += &format!(", theta2 = {:.4} by minimization", fp.theta2);
        }
        r.record(label, pass, elapsed, detail);
    }
}

fn criterion_2(r: &mut Report) {
    let cases = [
        (counting_frame(1.0063, 0.0, 1.0126, PI), -0.5094),
        (counting_frame(0.7071, 0.0, 0.0, 0.0), -0.3375),
        (counting_frame(2.3516, 2.0, 2.8515, 2.6914), -0.4356),
        (counting_frame(2.9155, 2.0, 0.0, 0.0), 0.0860),
        (counting_frame(1.6150, 1.3833, 0.3213, -1.9307), 0.0602),
        (counting_frame(3.1708, 2.5576, 0.3249, -1.7863), 0.09508),
    ];
    for (i, (fp, reference)) in cases.iter().enumerate() {
        let t = Instant::now();
        let q = mandel_q3(&BlochSystem::from_frame(fp).unwrap(), 0.45, Horizon::Infinite).unwrap().q;
        let elapsed = t.elapsed();
        let label = format!("2.{}", i + 1);
        let pass = (q - reference).abs() <= 2e-3 && elapsed < Duration::from_secs(1);
        r.record(&label, pass, elapsed, format!("Q3 = {q:.5} (reference {reference})"));
    }
}

fn criterion_3(r: &mut Report) {
    let t = Instant::now();
    let mut worst = f64::INFINITY;
    for i in 1..=200 {
        let omega = 10.0 * i as f64 / 200.0;
        let bs = BlochSystem::from_frame(&counting_frame(omega, 2.0, 0.0, 0.0)).unwrap();
        worst = worst.min(mandel_q3(&bs, 0.45, Horizon::Infinite).unwrap().q);
    }
    let elapsed = t.elapsed();
    let pass = worst > 0.0 && elapsed < Duration::from_secs(5);
    r.record("3", pass, elapsed, format!("min Q3 over 200 Rabi frequencies = {worst:.3e}"));
}

fn criterion_4(r: &mut Report) {
    let t = Instant::now();
    let fig3 = BlochSystem::from_frame(&spectrum_frame(1.6150, 1.3833, 0.3213, -1.9307, -0.1540)).unwrap();
    let mut worst = f64::INFINITY;
    for i in 0..121 {
        worst = worst.min(heisenberg_product(&fig3, 6.0 * i as f64 / 120.0).unwrap());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut fuzz_worst = f64::INFINITY;
    let mut draws = 0;
    while draws < 1000 {
        let a1: f64 = rng.random_range(0.0..1.0);
        let a2: f64 = rng.random_range(0.0..(1.0 - a1));
        let n_bar: f64 = rng.random_range(0.0..1.0);
        let fp = FrameParams {
            gamma: 1.0,
            n_bar,
            k0: rng.random_range(0.0..2.0),
            k1: rng.random_range(0.0..4.0),
            delta_nu: rng.random_range(-8.0..8.0),
            omega_r: rng.random_range(0.0..8.0),
            abs_alpha1: a1.sqrt(),
            abs_alpha2: a2.sqrt(),
            theta1: rng.random_range(-PI..PI),
            theta2: rng.random_range(-PI..PI),
        };
        let mu = rng.random_range(0.0..10.0);
        let Ok(bs) = BlochSystem::from_frame(&fp) else { continue };
        if let Ok(p) = heisenberg_product(&bs, mu) {
            fuzz_worst = fuzz_worst.min(p);
            draws += 1;
        }
    }
    let elapsed = t.elapsed();
    let pass = worst >= 1.0 - 1e-9 && fuzz_worst >= 1.0 - 1e-9 && elapsed < Duration::from_secs(30);
    r.record(
        "4",
        pass,
        elapsed,
        format!("min product: squeezing grid {worst:.6}, 1000 random draws {fuzz_worst:.6}"),
    );
}

fn squeezing_model() -> AtomModel {
    let params = AtomParams {
        nu: 0.2,
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
    AtomModel::new(params, FeedbackSpec::phase_simplified(0.3213), OscillatorSpec::homodyne(-1.9307, -0.1540)).unwrap()
}

fn antibunching_model() -> AtomModel {
    let params = AtomParams {
        nu: 0.2,
        delta_nu: 0.0,
        omega_r: 1.0063,
        theta: 0.0,
        k0: 0.0,
        gamma: 1.0,
        n_bar: 0.0,
        alpha1: Amplitude::from_abs2(0.45, 0.0),
        alpha2: Amplitude::from_abs2(0.05, 0.0),
        beta3: Amplitude::from_abs2(0.45, 0.0),
        beta4: Amplitude::from_abs2(0.05, 0.0),
    };
    AtomModel::new(params, FeedbackSpec::phase_simplified(1.0126), OscillatorSpec::homodyne(PI, 0.0)).unwrap()
}

fn run_spec(t_end: f64, n_traj: usize, unravelling: Unravelling, seed: u64) -> RunSpec {
    RunSpec {
        grid: GridSpec::new(t_end, 0.005).unwrap(),
        engine: EngineConfig {
            scheme: Scheme::Factorized,
            ..EngineConfig::default()
        },
        ensemble: EnsembleSpec {
            n_traj,
            master_seed: seed,
        },
        unravelling,
        intensities: None,
    }
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn criterion_5(r: &mut Report) {
    let t = Instant::now();
    let model = squeezing_model();
    let rho0 = model.stationary_initial_state().unwrap();
    let spec = run_spec(20.0, 5000, Unravelling::WeightedLinear, 5);
    let w = simulate(&model, &rho0, &spec, || (), |f| f.weight).unwrap();
    let (mean, se) = mean_and_stderr(&w);
    let pass = (mean - 1.0).abs() <= 3.0 * se;
    r.record("5", pass, t.elapsed(), format!("mean p(20) = {mean:.4} +- {se:.4} (5000 trajectories)"));
}

#[derive(Default)]
struct Last(Operator2);

impl Observer for Last {
    fn on_step(&mut self, ev: &StepEvent<'_>) -> Result<()> {
        self.0 = *ev.post;
        Ok(())
    }
}

fn criterion_6(r: &mut Report) {
    let t = Instant::now();
    // the atom in the frame of the laser without feedback: constant coefficients
    let sm = Operator2::sigma_minus();
    let h = Operator2::sigma_z() * (1.3833 / 2.0) + Operator2::sigma_x() * (1.6150 / 2.0);
    let diffusive = vec![sm * 0.45f64.sqrt(), sm.scale(c(0.0, 0.45f64.sqrt()))];
    let counting = vec![sm * 0.05f64.sqrt(), sm * 0.05f64.sqrt()];
    let all: Vec<Operator2> = diffusive.iter().chain(&counting).copied().collect();
    let model = ConstantModel::new(h, diffusive, counting).unwrap();
    let rho0 = DensityOperator2::ground();
    let exact = superop_exp(&superop_matrix(&h, &all).unwrap(), 10.0).unwrap().apply(rho0.as_operator());
    let spec = run_spec(10.0, 5000, Unravelling::WeightedLinear, 6);
    let finals = simulate(&model, &rho0, &spec, Last::default, |f| f.observer.0).unwrap();
    let mut worst: f64 = 0.0;
    for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        for part in [0, 1] {
            let xs: Vec<f64> = finals
                .iter()
                .map(|s| if part == 0 { s.get(i, j).re } else { s.get(i, j).im })
                .collect();
            let (mean, se) = mean_and_stderr(&xs);
            let e = if part == 0 { exact.get(i, j).re } else { exact.get(i, j).im };
            if se > 0.0 {
                worst = worst.max((mean - e).abs() / se);
            } else {
                worst = worst.max(if (mean - e).abs() < 1e-12 { 0.0 } else { f64::INFINITY });
            }
        }
    }
    r.record(
        "6",
        worst <= 3.0,
        t.elapsed(),
        format!("largest entrywise deviation {worst:.2} stderr (5000 trajectories, T = 10)"),
    );
}

fn criterion_7(r: &mut Report) {
    let t = Instant::now();
    let model = squeezing_model();
    let bs = BlochSystem::from_frame(&model.frame_params().unwrap()).unwrap();
    let rho0 = model.stationary_initial_state().unwrap();
    let mus = [0.0, 1.0, 2.0, 3.0, 4.0];
    let spec = run_spec(40.0, 10_000, Unravelling::NonlinearSme, 7);
    let samples = simulate(
        &model,
        &rho0,
        &spec,
        || FourierObserver::new(1, &mus, 0),
        |f| SpectrumSample {
            transforms: f.observer.sums,
            total: f.observer.total,
            weight: f.weight,
        },
    )
    .unwrap();
    let est = estimate_spectrum(&samples, &mus, 40.0).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, mu) in mus.iter().enumerate() {
        let exact = spectrum_inelastic(&bs, *mu).unwrap();
        let tol = (3.0 * est.stderr[k]).max(0.02);
        pass &= (est.s_inel[k] - exact).abs() <= tol;
        parts.push(format!("{mu}: {:.4}+-{:.4} vs {exact:.4}", est.s_inel[k], est.stderr[k]));
    }
    parts.push(format!(
        "s_el {:.3}+-{:.3} vs {:.3}",
        est.s_el_coefficient,
        est.s_el_stderr,
        spectrum_elastic_weight(&bs)
    ));
    r.record("7", pass, t.elapsed(), parts.join("; "));
}

/// Long-window Q3 of the antibunching configuration with reference
/// intensities `scale * sup ||L_k||^2`.
fn q3_monte_carlo(scale: f64) -> qtraj::stats::QEstimate {
    let model = antibunching_model();
    let rho0 = model.stationary_initial_state().unwrap();
    let mut spec = run_spec(50.0, 10_000, Unravelling::NonlinearSme, 8);
    spec.intensities = Some(model.counting_sup_norms().iter().map(|s| s * scale).collect());
    let marks = [spec.grid.index_of(20.0), spec.grid.index_of(50.0)];
    let samples = simulate(
        &model,
        &rho0,
        &spec,
        || CountObserver::new(0, &marks),
        |f| CountSample {
            increments: vec![(f.observer.at_marks[1] - f.observer.at_marks[0]) as f64],
            weight: f.weight,
        },
    )
    .unwrap();
    estimate_mandel_q(&samples, &[30.0]).unwrap()
}

fn criteria_8_and_10(r: &mut Report) {
    let t = Instant::now();
    let base = q3_monte_carlo(2.0);
    let (q, se) = (base.q_values[0], base.stderr[0]);
    r.record(
        "8",
        (q + 0.5094).abs() <= 3.0 * se,
        t.elapsed(),
        format!("Q3(t0 = 20, t = 30) = {q:.4} +- {se:.4} vs -0.5094 (10^4 trajectories)"),
    );
    let t = Instant::now();
    let doubled = q3_monte_carlo(4.0);
    let a = Estimate { value: q, stderr: se };
    let b = Estimate {
        value: doubled.q_values[0],
        stderr: doubled.stderr[0],
    };
    let z = a.z_score(&b);
    r.record(
        "10",
        z < 3.0,
        t.elapsed(),
        format!("lambda = 2 sup: {q:.4} +- {se:.4}; lambda = 4 sup: {:.4} +- {:.4}; z = {z:.2}", b.value, b.stderr),
    );
}

#[derive(Default)]
struct Totals {
    b1: f64,
    n3: f64,
}

impl Observer for Totals {
    fn on_step(&mut self, ev: &StepEvent<'_>) -> Result<()> {
        self.b1 += ev.output[0];
        self.n3 += ev.jumps[0] as f64;
        Ok(())
    }
}

fn criterion_9(r: &mut Report) {
    let t = Instant::now();
    let model = squeezing_model();
    let rho0 = model.stationary_initial_state().unwrap();
    let t_end = 5.0;
    let mut results = Vec::new();
    for (i, unravelling) in [Unravelling::WeightedLinear, Unravelling::NonlinearSme].into_iter().enumerate() {
        let spec = run_spec(t_end, 2000, unravelling, 90 + i as u64);
        let samples = simulate(
            &model,
            &rho0,
            &spec,
            || (FourierObserver::new(1, &[2.0], 0), Totals::default()),
            |f| (f.weight, f.observer.0.sums, f.observer.0.total, f.observer.1.b1, f.observer.1.n3),
        )
        .unwrap();
        let w: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let b1: Vec<f64> = samples.iter().map(|s| s.3).collect();
        let n3: Vec<f64> = samples.iter().map(|s| s.4).collect();
        let spectral: Vec<SpectrumSample> = samples
            .iter()
            .map(|s| SpectrumSample {
                transforms: s.1.clone(),
                total: s.2,
                weight: s.0,
            })
            .collect();
        let s = estimate_spectrum(&spectral, &[2.0], t_end).unwrap();
        results.push([
            weighted_expectation(&w, &b1).unwrap(),
            weighted_expectation(&w, &n3).unwrap(),
            Estimate {
                value: s.s_inel[0],
                stderr: s.stderr[0],
            },
        ]);
    }
    let names = ["E[B1(5)]", "E[N3(5)]", "S_inel(2)"];
    let mut pass = true;
    let mut parts = Vec::new();
    for k in 0..3 {
        let (a, b) = (results[0][k], results[1][k]);
        let z = a.z_score(&b);
        pass &= z < 3.0;
        parts.push(format!(
            "{}: {:.4}+-{:.4} vs {:.4}+-{:.4} (z {z:.2})",
            names[k], a.value, a.stderr, b.value, b.stderr
        ));
    }
    r.record("9", pass, t.elapsed(), parts.join("; "));
}

fn criterion_11(r: &mut Report) {
    let t = Instant::now();
    let free = |with_k1: bool| {
        let mut f = vec![
            FreeParam {
                param: Param::OmegaR,
                lo: 0.0,
                hi: 8.0,
            },
            FreeParam {
                param: Param::DeltaNu,
                lo: -8.0,
                hi: 8.0,
            },
            FreeParam {
                param: Param::Theta1,
                lo: -PI,
                hi: PI,
            },
            FreeParam {
                param: Param::Theta2,
                lo: -PI,
                hi: PI,
            },
        ];
        if with_k1 {
            f.push(FreeParam {
                param: Param::K1,
                lo: 0.0,
                hi: 4.0,
            });
        }
        f
    };
    let problem = |with_k1: bool| SearchProblem {
        objective: Objective::SInelAt { mu: 4.0 },
        free: free(with_k1),
        fixed: spectrum_frame(1.0, 0.0, 0.0, 0.0, 0.0),
        beta3_sq: 0.0,
    };
    let with = minimize_with_restarts(&problem(true), 11, 3000).unwrap();
    let without = minimize_with_restarts(&problem(false), 11, 3000).unwrap();
    let elapsed = t.elapsed();
    let pass = with.best_value <= 0.8572 + 5e-3
        && (without.best_value - 0.8830).abs() <= 5e-3
        && elapsed < Duration::from_secs(120);
    r.record(
        "11",
        pass,
        elapsed,
        format!(
            "S_inel(4): all five free {:.5}, k1 = 0 {:.5} (16 restarts each)",
            with.best_value, without.best_value
        ),
    );
}

fn criterion_12(r: &mut Report) {
    let t = Instant::now();
    let mut worst = f64::INFINITY;
    for (_, fp, ..) in spectrum_cases() {
        let g = rotating_frame_generator(&fp).lhat;
        for time in [0.1, 1.0, 10.0] {
            worst = worst.min(choi_positivity(&superop_exp(&g, time).unwrap()));
        }
    }
    r.record("12", worst >= -1e-9, t.elapsed(), format!("smallest Choi eigenvalue {worst:.3e}"));
}

fn main() {
    // `cargo test -- --list` and filters: this target takes no arguments
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut r = Report { failures: vec![] };
    criterion_1(&mut r);
    criterion_2(&mut r);
    criterion_3(&mut r);
    criterion_4(&mut r);
    criterion_5(&mut r);
    criterion_6(&mut r);
    criterion_7(&mut r);
    criteria_8_and_10(&mut r);
    criterion_9(&mut r);
    criterion_11(&mut r);
    criterion_12(&mut r);
    if r.failures.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {}", r.failures.join(", "));
        std::process::exit(1);
    }
}
