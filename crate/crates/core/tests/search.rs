use std::f64::consts::PI;

use qtraj::atom::FrameParams;
use qtraj::search::{minimize, minimize_with_restarts, FreeParam, Objective, Param, SearchProblem};

fn base(k1: f64, beta_split: bool) -> FrameParams {
    FrameParams {
        gamma: 1.0,
        n_bar: 0.0,
        k0: 0.0,
        k1,
        delta_nu: 0.0,
        omega_r: 1.0,
        abs_alpha1: 0.45f64.sqrt(),
        abs_alpha2: if beta_split { 0.05f64.sqrt() } else { 0.45f64.sqrt() },
        theta1: 0.0,
        theta2: 0.0,
    }
}

fn free(params: &[Param]) -> Vec<FreeParam> {
    params
        .iter()
        .map(|&param| {
            let (lo, hi) = match param {
                Param::OmegaR => (0.0, 8.0),
                Param::DeltaNu => (-8.0, 8.0),
                Param::K1 => (0.0, 4.0),
                Param::Theta1 | Param::Theta2 => (-PI, PI),
            };
            FreeParam { param, lo, hi }
        })
        .collect()
}

fn spectrum_problem(mu: f64, with_k1: bool) -> SearchProblem {
    let mut p = vec![Param::OmegaR, Param::DeltaNu, Param::Theta1, Param::Theta2];
    if with_k1 {
        p.push(Param::K1);
    }
    SearchProblem {
        objective: Objective::SInelAt { mu },
        free: free(&p),
        fixed: base(0.0, false),
        beta3_sq: 0.0,
    }
}

#[test]
fn incumbent_trace_is_monotone_and_results_in_bounds() {
    let problem = spectrum_problem(2.0, true);
    let res = minimize_with_restarts(&problem, 3, 400).unwrap();
    assert!(res.trace.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(*res.trace.last().unwrap(), res.best_value);
    for r in &res.restarts {
        assert!(r.evaluations <= 400);
        for (f, v) in problem.free.iter().zip(&r.best_params) {
            assert!(*v >= f.lo && *v <= f.hi, "{:?} = {v}", f.param);
        }
    }
    assert_eq!(problem.evaluate(&res.best_params), res.best_value);
}

#[test]
fn search_is_deterministic_in_its_starts() {
    let problem = spectrum_problem(4.0, true);
    let starts = problem.latin_hypercube(4, 11);
    let a = minimize(&problem, &starts, 300).unwrap();
    let b = minimize(&problem, &starts, 300).unwrap();
    assert_eq!(a, b);
}

#[test]
fn recovers_the_zero_frequency_optimum() {
    let problem = SearchProblem {
        objective: Objective::SInelAt { mu: 0.0 },
        free: free(&[Param::OmegaR, Param::K1, Param::Theta1, Param::Theta2]),
        fixed: base(0.0, false),
        beta3_sq: 0.0,
    };
    let res = minimize(&problem, &[vec![0.366, 0.3371, -PI, -1.5708]], 2000).unwrap();
    assert!(res.best_value <= 0.8172 + 5e-3, "{}", res.best_value);
}

#[test]
fn feedback_never_hurts() {
    for mu in [0.0, 2.0, 4.0] {
        let with = minimize_with_restarts(&spectrum_problem(mu, true), 1, 3000).unwrap();
        let without = minimize_with_restarts(&spectrum_problem(mu, false), 1, 3000).unwrap();
        assert!(
            with.best_value <= without.best_value + 1e-9,
            "mu {mu}: {} with feedback, {} without",
            with.best_value,
            without.best_value
        );
    }
}

#[test]
fn antibunching_search_reaches_the_reference_q() {
    let problem = SearchProblem {
        objective: Objective::Q3Longtime,
        free: free(&[Param::OmegaR, Param::K1, Param::Theta1]),
        fixed: base(0.0, true),
        beta3_sq: 0.45,
    };
    let res = minimize_with_restarts(&problem, 5, 3000).unwrap();
    assert!(res.best_value <= -0.5094 + 5e-3, "{}", res.best_value);
}
