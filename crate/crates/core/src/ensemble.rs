//! Ordered parallel execution of independent trajectories.
//!
//! Trajectory `i` always receives `split_seed(master_seed, i)` and results are
//! returned in index order, so reductions over them are reproducible
//! regardless of the number of threads.

use serde::{Deserialize, Serialize};

use crate::engine::{
    run_linear_sme, run_nonlinear, thinning_envelope, ChannelModel, EngineConfig, NonlinearVariant, Observer,
};
use crate::error::{Error, Result};
use crate::noise::{sample_path, split_seed, GridSpec};
use crate::ops::DensityOperator2;

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "QTRAJ_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub n_traj: usize,
    pub master_seed: u64,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_traj < 2 {
            return Err(Error::config("ensemble.n_traj", "need at least 2 trajectories for error bars"));
        }
        Ok(())
    }
}

/// Worker count: `QTRAJ_THREADS` if set to a positive integer, else the number of CPUs.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f(index, seed)` for every trajectory and returns the results in
/// index order. The first failing index determines the error.
pub fn map_trajectories<T, F>(n_traj: usize, master_seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync + Send,
{
    let task = |i: usize| f(i, split_seed(master_seed, i as u64));
    #[cfg(feature = "parallel")]
    let results: Vec<Result<T>> = {
        use rayon::prelude::*;
        let threads = thread_count();
        if threads <= 1 {
            (0..n_traj).map(task).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            pool.install(|| (0..n_traj).into_par_iter().map(task).collect())
        }
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<T>> = (0..n_traj).map(task).collect();
    results.into_iter().collect()
}

/// Which law the trajectories are drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Unravelling {
    /// Linear equation under the reference law; estimates are weighted by `p(T)`.
    WeightedLinear,
    /// Normalized equation under the physical law; all weights are 1.
    #[default]
    NonlinearSme,
    NonlinearSse,
}

/// Everything needed to run an ensemble of a given model.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub grid: GridSpec,
    pub engine: EngineConfig,
    pub ensemble: EnsembleSpec,
    pub unravelling: Unravelling,
    /// Reference intensities `lambda_k`; the model defaults when `None`.
    pub intensities: Option<Vec<f64>>,
}

impl RunSpec {
    pub fn lambdas<M: ChannelModel>(&self, model: &M) -> Vec<f64> {
        self.intensities.clone().unwrap_or_else(|| model.default_intensities())
    }

    /// Rates at which the noise paths are sampled.
    pub fn path_intensities<M: ChannelModel>(&self, model: &M) -> Vec<f64> {
        let lambdas = self.lambdas(model);
        match self.unravelling {
            Unravelling::WeightedLinear => lambdas,
            _ => thinning_envelope(model, &lambdas),
        }
    }
}

/// One trajectory's observer after the run, with its weight `p(T)`.
pub struct Finished<O> {
    pub observer: O,
    pub weight: f64,
    pub index: usize,
    pub seed: u64,
}

/// Runs the ensemble and maps every finished observer through `finish`.
pub fn simulate<M, O, T, Make, Fin>(
    model: &M,
    rho0: &DensityOperator2,
    spec: &RunSpec,
    make: Make,
    finish: Fin,
) -> Result<Vec<T>>
where
    M: ChannelModel,
    O: Observer,
    T: Send,
    Make: Fn() -> O + Sync + Send,
    Fin: Fn(Finished<O>) -> T + Sync + Send,
{
    spec.engine.validate()?;
    let layout = model.layout();
    let intensities = spec.path_intensities(model);
    if let Some(l) = &spec.intensities {
        if l.len() != layout.counting {
            return Err(Error::invalid(format!(
                "{} reference intensities for {} counting channels",
                l.len(),
                layout.counting
            )));
        }
    }
    map_trajectories(spec.ensemble.n_traj, spec.ensemble.master_seed, |index, seed| {
        let path = sample_path(spec.grid, layout, &intensities, seed)?;
        let mut observer = make();
        let weight = match spec.unravelling {
            Unravelling::WeightedLinear => run_linear_sme(model, &path, rho0, &spec.engine, &mut observer)?.weight,
            Unravelling::NonlinearSme => {
                run_nonlinear(model, &path, rho0, &spec.engine, NonlinearVariant::Sme, &mut observer)?;
                1.0
            }
            Unravelling::NonlinearSse => {
                run_nonlinear(model, &path, rho0, &spec.engine, NonlinearVariant::Sse, &mut observer)?;
                1.0
            }
        };
        Ok(finish(Finished {
            observer,
            weight,
            index,
            seed,
        }))
    })
}
