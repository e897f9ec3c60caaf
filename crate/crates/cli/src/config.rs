//! Pipeline configuration: one JSON file with `simulate`, `tabulate` and
//! `fit` sections. Unknown keys are rejected.

use std::path::Path;

use eprb_core::counts::ModelId;
use eprb_core::fit::{Completion, Method, OptimizerConfig};
use eprb_core::scanblue::DEFAULT_WINDOW_NS;
use eprb_core::sim::SimConfig;
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed; every random stream is split from it.
    pub seed: u64,
    pub simulate: SimulateSection,
    pub tabulate: TabulateSection,
    pub fit: FitSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// How many of the scan series experiments to run, in table order.
    pub experiments: usize,
    /// Settings shared by every experiment. `theta` and `seed` are
    /// replaced per experiment.
    pub experiment: SimConfig,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { experiments: eprb_core::scanblue::scan_series().len(), experiment: SimConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TabulateSection {
    pub window_ns: f64,
    /// Offset `t_b − t_a` of true pairs, ns.
    pub delta_ns: f64,
}

impl Default for TabulateSection {
    fn default() -> Self {
        Self { window_ns: DEFAULT_WINDOW_NS, delta_ns: 15.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub model: u8,
    pub method: Method,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub completion: Completion,
    /// Model #4: minimize Xrev rather than reuse the Model #3 optimum.
    pub reoptimize_cv: bool,
}

impl Default for FitSection {
    fn default() -> Self {
        let o = OptimizerConfig::default();
        Self {
            model: 2,
            method: o.method,
            restarts: o.restarts,
            max_iter: o.max_iter,
            tol: o.tol,
            completion: Completion::default(),
            reoptimize_cv: false,
        }
    }
}

impl FitSection {
    pub fn model_id(&self) -> Result<ModelId> {
        ModelId::try_from(self.model).map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn optimizer(&self, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            method: self.method,
            restarts: self.restarts,
            max_iter: self.max_iter,
            tol: self.tol,
            seed,
            ..OptimizerConfig::default()
        }
    }
}

impl PipelineConfig {
    /// Defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.simulate.experiment.validate()?;
        let n = eprb_core::scanblue::scan_series().len();
        if self.simulate.experiments == 0 || self.simulate.experiments > n {
            return Err(CliError::Config(format!("experiments must be in 1..={n}, got {}", self.simulate.experiments)));
        }
        let t = &self.tabulate;
        if !(t.window_ns >= 0.0 && t.window_ns.is_finite()) || !t.delta_ns.is_finite() {
            return Err(CliError::Config(format!("invalid window {} or offset {}", t.window_ns, t.delta_ns)));
        }
        self.fit.model_id().map_err(|e| CliError::Config(e.to_string()))?;
        self.fit.optimizer(0).validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        crate::files::sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}
