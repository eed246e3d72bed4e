use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use loggap::bounds::BoundParams;
use loggap::measure::MeasureSpec;
use loggap::mixtures::MixtureDensity;
use loggap::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Spectrum,
    Interlace,
    Eigenspace,
    AlphaProfile,
    CovarianceDominance,
    Section,
    BoundsReport,
    Sweep,
}

impl Task {
    pub fn stochastic(self, cfg: &ExperimentConfig) -> bool {
        match self {
            Task::Section => true,
            Task::CovarianceDominance => cfg.method == CovMethod::Sampling,
            _ => false,
        }
    }

    /// Relative tolerance used for this task's assertions when none is given.
    pub fn default_tolerance(self) -> f64 {
        match self {
            Task::Spectrum | Task::Sweep | Task::Interlace => 1e-2,
            Task::Eigenspace => 1e-3,
            Task::AlphaProfile => 1e-9,
            Task::CovarianceDominance => 1e-8,
            Task::Section | Task::BoundsReport => 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovMethod {
    #[default]
    Quadrature,
    Sampling,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionConfig {
    pub n: usize,
    pub d: usize,
    pub p: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    /// Formula ids to evaluate; all of them when empty.
    #[serde(default)]
    pub formulas: Vec<String>,
    #[serde(default)]
    pub params: BoundParams,
    #[serde(default)]
    pub constants: BTreeMap<String, f64>,
}

/// Everything one experiment needs. Optional fields fall back to task defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Option<Task>,
    #[serde(default)]
    pub measure: Option<MeasureSpec>,
    /// Base measure for covariance domination; the unperturbed measure by default.
    #[serde(default)]
    pub reference: Option<MeasureSpec>,
    #[serde(default)]
    pub mixture: Option<MixtureDensity>,
    #[serde(default)]
    pub section: Option<SectionConfig>,
    #[serde(default)]
    pub bounds: Option<BoundsConfig>,
    #[serde(default)]
    pub resolution: Option<usize>,
    /// Eigenpairs, sweep instances or alpha-profile points, depending on the task.
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub factor: Option<f64>,
    #[serde(default)]
    pub t_max: Option<f64>,
    #[serde(default)]
    pub method: CovMethod,
}

impl ExperimentConfig {
    pub fn empty() -> Self {
        serde_json::from_str("{\"task\": null}").expect("empty config")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid { path: path.display().to_string(), message: e.to_string() })?;
        serde_json::from_str(&text).map_err(|e| Error::ConfigInvalid {
            path: format!("{}:{}:{}", path.display(), e.line(), e.column()),
            message: e.to_string(),
        })
    }

    /// Checks that the task's required parameters are present.
    pub fn validate(&self) -> Result<Task> {
        let bad = |path: &str, message: &str| Error::ConfigInvalid { path: path.into(), message: message.into() };
        let task = self.task.ok_or_else(|| bad("task", "missing"))?;
        let needs_measure =
            matches!(task, Task::Spectrum | Task::Interlace | Task::Eigenspace | Task::CovarianceDominance);
        if needs_measure && self.measure.is_none() {
            return Err(bad("measure", "required for this task"));
        }
        if task == Task::AlphaProfile && self.mixture.is_none() && self.measure.is_none() {
            return Err(bad("mixture", "alpha_profile needs a mixture or a measure with mixture components"));
        }
        if task == Task::Section && self.section.is_none() {
            return Err(bad("section", "required for this task"));
        }
        if task.stochastic(self) && self.seed.is_none() {
            return Err(bad("seed", "mandatory for stochastic tasks"));
        }
        if let Some(r) = self.resolution {
            if r < 8 {
                return Err(bad("resolution", "must be at least 8"));
            }
        }
        if let Some(t) = self.tolerance {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(bad("tolerance", "must be a finite non-negative number"));
            }
        }
        if self.threads == Some(0) {
            return Err(bad("threads", "must be positive"));
        }
        if let Some(f) = self.factor {
            if !(f > 0.0) {
                return Err(bad("factor", "must be positive"));
            }
        }
        Ok(task)
    }

    pub fn tolerance_or_default(&self, task: Task) -> f64 {
        self.tolerance.unwrap_or_else(|| task.default_tolerance())
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub task: Option<Task>,
    pub measure: Option<MeasureSpec>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub tolerance: Option<f64>,
    pub out: Option<PathBuf>,
    pub resolution: Option<usize>,
    pub steps: Option<usize>,
    pub count: Option<usize>,
}

fn merge<T: PartialEq + std::fmt::Debug>(name: &str, cfg: &mut Option<T>, flag: Option<T>, warnings: &mut Vec<String>) {
    match (cfg.as_ref(), flag) {
        (Some(c), Some(f)) if *c != f => {
            warnings.push(format!("{name}: config value {c:?} overrides command-line value {f:?}"));
        }
        (None, Some(f)) => *cfg = Some(f),
        _ => {}
    }
}

/// Fills unset config fields from flags. Config values win; conflicts produce warnings.
pub fn resolve(mut cfg: ExperimentConfig, o: Overrides) -> (ExperimentConfig, Vec<String>) {
    let mut w = Vec::new();
    merge("task", &mut cfg.task, o.task, &mut w);
    merge("measure", &mut cfg.measure, o.measure, &mut w);
    merge("seed", &mut cfg.seed, o.seed, &mut w);
    merge("threads", &mut cfg.threads, o.threads, &mut w);
    merge("tolerance", &mut cfg.tolerance, o.tolerance, &mut w);
    merge("out", &mut cfg.out, o.out, &mut w);
    merge("resolution", &mut cfg.resolution, o.resolution, &mut w);
    merge("steps", &mut cfg.steps, o.steps, &mut w);
    merge("count", &mut cfg.count, o.count, &mut w);
    (cfg, w)
}
