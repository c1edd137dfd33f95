//! Run configuration shared by the command-line tool and the browser demo.

use serde::{Deserialize, Serialize};

use crate::atom::{AtomModel, AtomParams, FeedbackSpec, OscillatorSpec};
use crate::engine::EngineConfig;
use crate::ensemble::{EnsembleSpec, RunSpec, Unravelling};
use crate::error::{Error, Result};
use crate::noise::GridSpec;
use crate::ops::DensityOperator2;
use crate::search::{FreeParam, Objective, SearchProblem, DEFAULT_RESTARTS};
use crate::stats::OutputSpec;

/// Note written into every artifact header.
pub const UNITS_NOTE: &str = "units: frequencies, rates and times in units of gamma (gamma = 1 convention)";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Stationary state of the mean dynamics (homodyne, simplified feedback only).
    #[default]
    Stationary,
    Ground,
    Excited,
    MaximallyMixed,
    /// Bloch vector `(x, y, z)` with `rho_eg = (x - i y) / 2`.
    Bloch([f64; 3]),
}

impl InitialState {
    pub fn state(&self, model: &AtomModel) -> Result<DensityOperator2> {
        match self {
            InitialState::Stationary => model.stationary_initial_state(),
            InitialState::Ground => Ok(DensityOperator2::ground()),
            InitialState::Excited => Ok(DensityOperator2::excited()),
            InitialState::MaximallyMixed => Ok(DensityOperator2::maximally_mixed()),
            InitialState::Bloch(r) => DensityOperator2::from_bloch(*r)
                .map_err(|e| Error::config("run.initial_state", e.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunBlock {
    pub unravelling: Unravelling,
    /// Reference intensities `lambda_k`, one per counting channel.
    pub intensities: Option<Vec<f64>>,
    pub initial_state: InitialState,
}

/// Frequencies as an explicit list or as `points` equally spaced values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MuGrid {
    List(Vec<f64>),
    Range { start: f64, stop: f64, points: usize },
}

impl MuGrid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            MuGrid::List(v) => v.clone(),
            MuGrid::Range { start, stop, points } => match points {
                0 => vec![],
                1 => vec![*start],
                n => (0..*n)
                    .map(|i| start + (stop - start) * i as f64 / (*n - 1) as f64)
                    .collect(),
            },
        }
    }
}

fn default_spectrum_channel() -> usize {
    2
}

fn default_q_channel() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumBlock {
    pub mu_grid: MuGrid,
    /// Diffusive channel label (1 or 2).
    #[serde(default = "default_spectrum_channel")]
    pub channel: usize,
    /// Start of the Fourier window; the window is `(t_start, grid.t_end]`.
    #[serde(default)]
    pub t_start: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QBlock {
    /// Counting channel label (3..6).
    #[serde(default = "default_q_channel")]
    pub channel: usize,
    /// Burn-in time `t0`.
    #[serde(default)]
    pub t0: f64,
    /// Window lengths `t`; counts are taken over `(t0, t0 + t]`.
    pub t_grid: Vec<f64>,
}

fn default_budget() -> usize {
    3000
}

fn default_restarts() -> usize {
    DEFAULT_RESTARTS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchBlock {
    pub objective: Objective,
    pub free: Vec<FreeParam>,
    /// Evaluations per restart.
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: AtomParams,
    #[serde(default)]
    pub feedback: FeedbackSpec,
    #[serde(default)]
    pub oscillators: OscillatorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleSpec>,
    #[serde(default)]
    pub run: RunBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<OutputSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qparam: Option<QBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchBlock>,
}

fn require<'a, T>(block: &'a Option<T>, name: &str) -> Result<&'a T> {
    block
        .as_ref()
        .ok_or_else(|| Error::config(name, format!("missing [{name}] section")))
}

impl RunConfig {
    /// Checks every block that is present.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.feedback.validate()?;
        self.oscillators.validate()?;
        self.engine.validate()?;
        if let Some(e) = &self.ensemble {
            e.validate()?;
        }
        if let Some(l) = &self.run.intensities {
            let want = self.atom()?.n_counting();
            if l.len() != want {
                return Err(Error::config(
                    "run.intensities",
                    format!("expected {want} values (one per counting channel), got {}", l.len()),
                ));
            }
            if let Some(i) = l.iter().position(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(Error::config(format!("run.intensities[{i}]"), "must be finite and > 0"));
            }
        }
        if let Some(s) = &self.spectrum {
            let mus = s.mu_grid.values();
            if mus.is_empty() {
                return Err(Error::config("spectrum.mu_grid", "empty frequency grid"));
            }
            if mus.iter().any(|m| !m.is_finite()) {
                return Err(Error::config("spectrum.mu_grid", "frequencies must be finite"));
            }
            if !(s.channel == 1 || s.channel == 2) {
                return Err(Error::config("spectrum.channel", "diffusive channel must be 1 or 2"));
            }
            if let Some(g) = &self.grid {
                if !(s.t_start >= 0.0 && s.t_start < g.t_end()) {
                    return Err(Error::config("spectrum.t_start", "must lie in [0, grid.t_end)"));
                }
            }
        }
        if let Some(q) = &self.qparam {
            let n = self.atom()?.n_counting();
            if !(3..3 + n).contains(&q.channel) {
                return Err(Error::config(
                    "qparam.channel",
                    format!("counting channel must be in 3..={}", 2 + n),
                ));
            }
            if q.t_grid.is_empty() || q.t_grid.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                return Err(Error::config("qparam.t_grid", "need positive, finite window lengths"));
            }
            if !(q.t0 >= 0.0) {
                return Err(Error::config("qparam.t0", "must be >= 0"));
            }
            if let Some(g) = &self.grid {
                let last = q.t_grid.iter().cloned().fold(0.0, f64::max);
                if q.t0 + last > g.t_end() + 1e-9 {
                    return Err(Error::config("qparam.t_grid", "t0 + t exceeds grid.t_end"));
                }
            }
        }
        if let Some(s) = &self.search {
            if s.restarts == 0 {
                return Err(Error::config("search.restarts", "must be >= 1"));
            }
            self.search_problem()?.validate()?;
        }
        Ok(())
    }

    pub fn atom(&self) -> Result<AtomModel> {
        AtomModel::new(self.model, self.feedback, self.oscillators)
    }

    pub fn grid(&self) -> Result<GridSpec> {
        require(&self.grid, "grid").copied()
    }

    pub fn run_spec(&self) -> Result<RunSpec> {
        Ok(RunSpec {
            grid: self.grid()?,
            engine: self.engine,
            ensemble: *require(&self.ensemble, "ensemble")?,
            unravelling: self.run.unravelling,
            intensities: self.run.intensities.clone(),
        })
    }

    pub fn search_problem(&self) -> Result<SearchProblem> {
        let s = require(&self.search, "search")?;
        Ok(SearchProblem {
            objective: s.objective,
            free: s.free.clone(),
            fixed: self.atom()?.frame_params()?,
            beta3_sq: self.model.beta3.abs2(),
        })
    }

    /// Overrides the ensemble and search seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        if let Some(e) = self.ensemble.as_mut() {
            e.master_seed = seed;
        }
        if let Some(s) = self.search.as_mut() {
            s.seed = seed;
        }
        self
    }
}
