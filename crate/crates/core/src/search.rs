//! Bounded Nelder–Mead search with restarts over drive and feedback parameters,
//! against the closed-form spectrum and Mandel Q.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::{mandel_q3, spectrum_inelastic, BlochSystem, Horizon};
use crate::atom::{wrap_phase, FrameParams};
use crate::ensemble::map_trajectories;
use crate::error::{Error, Result};

/// Default number of Latin-hypercube starts.
pub const DEFAULT_RESTARTS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Objective {
    /// `S_inel(mu)`.
    SInelAt { mu: f64 },
    /// Long-time `Q_3`.
    Q3Longtime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    OmegaR,
    DeltaNu,
    K1,
    Theta1,
    Theta2,
}

impl Param {
    pub fn is_angle(self) -> bool {
        matches!(self, Param::Theta1 | Param::Theta2)
    }

    pub fn name(self) -> &'static str {
        match self {
            Param::OmegaR => "omega_r",
            Param::DeltaNu => "delta_nu",
            Param::K1 => "k1",
            Param::Theta1 => "theta1",
            Param::Theta2 => "theta2",
        }
    }

    fn set(self, fp: &mut FrameParams, x: f64) {
        match self {
            Param::OmegaR => fp.omega_r = x,
            Param::DeltaNu => fp.delta_nu = x,
            Param::K1 => fp.k1 = x,
            Param::Theta1 => fp.theta1 = wrap_phase(x),
            Param::Theta2 => fp.theta2 = wrap_phase(x),
        }
    }

    pub fn get(self, fp: &FrameParams) -> f64 {
        match self {
            Param::OmegaR => fp.omega_r,
            Param::DeltaNu => fp.delta_nu,
            Param::K1 => fp.k1,
            Param::Theta1 => fp.theta1,
            Param::Theta2 => fp.theta2,
        }
    }
}

/// A free parameter and its box. Angles are searched on the circle and their
/// bounds only set the range of the initial starts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeParam {
    pub param: Param,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchProblem {
    pub objective: Objective,
    pub free: Vec<FreeParam>,
    /// Values of the parameters that are not free.
    pub fixed: FrameParams,
    /// `|beta_3|^2`, used by [`Objective::Q3Longtime`].
    pub beta3_sq: f64,
}

impl SearchProblem {
    pub fn validate(&self) -> Result<()> {
        if self.free.is_empty() {
            return Err(Error::invalid("no free parameters"));
        }
        for (i, f) in self.free.iter().enumerate() {
            if !(f.lo.is_finite() && f.hi.is_finite() && f.lo <= f.hi) {
                return Err(Error::config(
                    format!("search.free[{i}]"),
                    format!("empty box [{}, {}] for {}", f.lo, f.hi, f.param.name()),
                ));
            }
            if self.free[..i].iter().any(|g| g.param == f.param) {
                return Err(Error::config(
                    format!("search.free[{i}]"),
                    format!("{} listed twice", f.param.name()),
                ));
            }
        }
        Ok(())
    }

    /// Frame parameters at a point of the search space (angles wrapped,
    /// other coordinates clamped into their box).
    pub fn frame_at(&self, x: &[f64]) -> FrameParams {
        let mut fp = self.fixed;
        for (f, &v) in self.free.iter().zip(x) {
            f.param.set(&mut fp, if f.param.is_angle() { v } else { v.clamp(f.lo, f.hi) });
        }
        fp
    }

    /// Objective value; singular or undefined configurations evaluate to `+inf`.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let fp = self.frame_at(x);
        let value = BlochSystem::from_frame(&fp).and_then(|bs| match self.objective {
            Objective::SInelAt { mu } => spectrum_inelastic(&bs, mu),
            Objective::Q3Longtime => mandel_q3(&bs, self.beta3_sq, Horizon::Infinite).map(|q| q.q),
        });
        match value {
            Ok(v) if v.is_finite() => v,
            _ => f64::INFINITY,
        }
    }

    /// Maps a point to its canonical representative: angles in `(-pi, pi]`,
    /// other coordinates in their box.
    pub fn canonical(&self, x: &[f64]) -> Vec<f64> {
        self.free
            .iter()
            .zip(x)
            .map(|(f, &v)| if f.param.is_angle() { wrap_phase(v) } else { v.clamp(f.lo, f.hi) })
            .collect()
    }

    /// `n` Latin-hypercube points in the box.
    pub fn latin_hypercube(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = vec![vec![0.0; self.free.len()]; n];
        for (j, f) in self.free.iter().enumerate() {
            let mut strata: Vec<usize> = (0..n).collect();
            strata.shuffle(&mut rng);
            for (p, s) in points.iter_mut().zip(strata) {
                let u = (s as f64 + rng.random::<f64>()) / n as f64;
                p[j] = f.lo + u * (f.hi - f.lo);
            }
        }
        points
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartResult {
    pub start: Vec<f64>,
    pub best_params: Vec<f64>,
    pub best_value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_params: Vec<f64>,
    pub best_value: f64,
    /// Incumbent value after every evaluation, restarts concatenated in order.
    pub trace: Vec<f64>,
    pub restarts: Vec<RestartResult>,
}

/// Simplex diameter below which a restart stops.
pub const SIMPLEX_TOL: f64 = 1e-6;

fn nelder_mead(problem: &SearchProblem, start: &[f64], budget: usize) -> (RestartResult, Vec<f64>) {
    let dim = start.len();
    let mut values = Vec::with_capacity(budget);
    let eval = |x: &[f64], values: &mut Vec<f64>| {
        let v = problem.evaluate(x);
        values.push(v);
        v
    };
    let project = |x: Vec<f64>| -> Vec<f64> {
        problem
            .free
            .iter()
            .zip(x)
            .map(|(f, v)| if f.param.is_angle() { v } else { v.clamp(f.lo, f.hi) })
            .collect()
    };
    let x0 = project(start.to_vec());
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let f0 = eval(&x0, &mut values);
    simplex.push((x0.clone(), f0));
    for (j, f) in problem.free.iter().enumerate() {
        let width = if f.param.is_angle() { 0.5 } else { 0.1 * (f.hi - f.lo) };
        let mut x = x0.clone();
        // step inward so that a vertex on the boundary still moves
        x[j] += if f.param.is_angle() || x[j] + width <= f.hi { width } else { -width };
        let x = project(x);
        let v = eval(&x, &mut values);
        simplex.push((x, v));
    }
    let mut converged = false;
    let by_value = |a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)| a.1.total_cmp(&b.1);
    while values.len() < budget {
        simplex.sort_by(by_value);
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diameter < SIMPLEX_TOL {
            converged = true;
            break;
        }
        let worst = simplex[dim].clone();
        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|(x, _)| x[j]).sum::<f64>() / dim as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            project(centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect())
        };
        let xr = along(1.0);
        let fr = eval(&xr, &mut values);
        if fr < simplex[0].1 {
            if values.len() >= budget {
                simplex[dim] = (xr, fr);
                break;
            }
            let xe = along(2.0);
            let fe = eval(&xe, &mut values);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            if values.len() >= budget {
                break;
            }
            let (xc, fc) = if fr < worst.1 {
                let x = along(0.5);
                let v = eval(&x, &mut values);
                (x, v)
            } else {
                let x = along(-0.5);
                let v = eval(&x, &mut values);
                (x, v)
            };
            if fc < worst.1.min(fr) {
                simplex[dim] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex[1..].iter_mut() {
                    if values.len() >= budget {
                        break;
                    }
                    let x = project(best.iter().zip(&vertex.0).map(|(b, v)| b + 0.5 * (v - b)).collect());
                    let v = eval(&x, &mut values);
                    *vertex = (x, v);
                }
            }
        }
    }
    simplex.sort_by(by_value);
    let (best, best_value) = simplex.swap_remove(0);
    (
        RestartResult {
            start: start.to_vec(),
            best_params: problem.canonical(&best),
            best_value,
            evaluations: values.len(),
            converged,
        },
        values,
    )
}

/// Nelder–Mead from each start, `budget` evaluations per start. Restarts run
/// in parallel; the result does not depend on the thread count.
pub fn minimize(problem: &SearchProblem, starts: &[Vec<f64>], budget: usize) -> Result<SearchResult> {
    problem.validate()?;
    let dim = problem.free.len();
    if budget < dim + 1 {
        return Err(Error::invalid(format!(
            "budget {budget} is below the {} evaluations of the initial simplex",
            dim + 1
        )));
    }
    if starts.is_empty() {
        return Err(Error::invalid("no starting points"));
    }
    if let Some(bad) = starts.iter().position(|s| s.len() != dim) {
        return Err(Error::invalid(format!("start {bad} has the wrong dimension")));
    }
    let runs = map_trajectories(starts.len(), 0, |i, _| Ok(nelder_mead(problem, &starts[i], budget)))?;
    let mut trace = Vec::new();
    let mut incumbent = f64::INFINITY;
    let mut best: Option<&RestartResult> = None;
    for (r, values) in &runs {
        for v in values {
            incumbent = incumbent.min(*v);
            trace.push(incumbent);
        }
        if best.is_none_or(|b| r.best_value < b.best_value) {
            best = Some(r);
        }
    }
    let best = best.expect("at least one start");
    Ok(SearchResult {
        best_params: best.best_params.clone(),
        best_value: best.best_value,
        trace,
        restarts: runs.iter().map(|(r, _)| r.clone()).collect(),
    })
}

/// [`minimize`] from [`DEFAULT_RESTARTS`] Latin-hypercube starts.
pub fn minimize_with_restarts(problem: &SearchProblem, seed: u64, budget: usize) -> Result<SearchResult> {
    problem.validate()?;
    minimize(problem, &problem.latin_hypercube(DEFAULT_RESTARTS, seed), budget)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn squeezing_frame() -> FrameParams {
        FrameParams {
            gamma: 1.0,
            n_bar: 0.0,
            k0: 0.0,
            k1: 0.3213,
            delta_nu: 1.3833,
            omega_r: 1.6150,
            abs_alpha1: 0.45f64.sqrt(),
            abs_alpha2: 0.45f64.sqrt(),
            theta1: -1.9307,
            theta2: -0.1540,
        }
    }

    fn problem(free: Vec<FreeParam>) -> SearchProblem {
        SearchProblem {
            objective: Objective::SInelAt { mu: 2.0 },
            free,
            fixed: squeezing_frame(),
            beta3_sq: 0.05,
        }
    }

    #[test]
    fn small_budget_rejected() {
        let p = problem(vec![
            FreeParam { param: Param::OmegaR, lo: 0.0, hi: 3.0 },
            FreeParam { param: Param::K1, lo: 0.0, hi: 1.0 },
        ]);
        assert!(matches!(minimize(&p, &[vec![1.0, 0.5]], 2), Err(Error::InvalidArgument(_))));
        assert!(minimize(&p, &[vec![1.0, 0.5]], 3).is_ok());
    }

    #[test]
    fn degenerate_box_returns_the_point() {
        let p = problem(vec![FreeParam { param: Param::OmegaR, lo: 1.615, hi: 1.615 }]);
        let r = minimize(&p, &[vec![1.615]], 50).unwrap();
        assert_eq!(r.best_params, vec![1.615]);
        assert!((r.best_value - p.evaluate(&[1.615])).abs() < 1e-15);
    }

    #[test]
    fn latin_hypercube_strata() {
        let p = problem(vec![
            FreeParam { param: Param::OmegaR, lo: 0.0, hi: 4.0 },
            FreeParam { param: Param::Theta1, lo: -3.0, hi: 3.0 },
        ]);
        let pts = p.latin_hypercube(16, 3);
        for (j, f) in p.free.iter().enumerate() {
            let mut seen = [false; 16];
            for x in &pts {
                let s = ((x[j] - f.lo) / (f.hi - f.lo) * 16.0).floor() as usize;
                assert!(!seen[s]);
                seen[s] = true;
            }
        }
        assert_eq!(pts, p.latin_hypercube(16, 3));
    }

    #[test]
    fn singular_points_are_infinite() {
        let mut p = problem(vec![FreeParam { param: Param::OmegaR, lo: 0.0, hi: 1.0 }]);
        p.fixed.gamma = 0.0;
        p.fixed.k1 = 0.0;
        p.fixed.delta_nu = 0.0;
        assert_eq!(p.evaluate(&[0.0]), f64::INFINITY);
    }
}
