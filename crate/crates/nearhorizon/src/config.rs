//! Run configuration: a TOML tree describing the market, the utility, and
//! one experiment.
//!
//! ```toml
//! [model]
//! n = 2
//! rate = 0.0
//! omega = [0.0, 0.0]
//! rho = [1.0, 0.5241, 0.5241, 1.0]        # row-major, n^2 entries
//! sigma = [{ kind = "constant", value = 0.2 }, { kind = "constant", value = 0.2 }]
//! lambda = [{ kind = "constant", value = 0.0153 }, { kind = "constant", value = 0.0153 }]
//! a = { kind = "constant", value = 1.0 }
//! b = { kind = "constant", value = 0.0 }
//!
//! [utility]
//! kind = "power"       # or "log"
//! c1 = 1.0
//! alpha = 3.0
//!
//! [run]
//! experiment = "table23"
//! t = 1.5
//! T = 2.0
//! output_path = "out/table23"
//! ```

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::market::MarketModel;
use crate::mc::SimConfig;
use crate::utility::UtilityFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Table1,
    Table23,
    ErrorScaling,
    Scheme,
    PolicyEval,
}

/// Market section of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n: usize,
    pub sigma: Vec<ScalarField>,
    pub lambda: Vec<ScalarField>,
    pub a: ScalarField,
    pub b: ScalarField,
    pub omega: Vec<f64>,
    /// Row-major, n² entries.
    pub rho: Vec<f64>,
    #[serde(default)]
    pub rate: f64,
}

impl ModelSpec {
    /// Shapes the spec into a model. Dimension mismatches are config errors;
    /// assumption-level problems (asymmetric or non-PSD rho, negative
    /// fields, ...) are left for validation so they are reported together.
    pub fn build(&self) -> Result<MarketModel> {
        if self.rho.len() != self.n * self.n {
            return Err(Error::Config(format!(
                "rho must carry n^2 = {} entries, got {}",
                self.n * self.n,
                self.rho.len()
            )));
        }
        if self.sigma.len() != self.n || self.lambda.len() != self.n || self.omega.len() != self.n
        {
            return Err(Error::Config(format!(
                "expected {} sigma/lambda/omega entries, got {}/{}/{}",
                self.n,
                self.sigma.len(),
                self.lambda.len(),
                self.omega.len()
            )));
        }
        MarketModel::new(
            self.sigma.clone(),
            self.lambda.clone(),
            self.a,
            self.b,
            self.omega.clone(),
            DMatrix::from_row_slice(self.n, self.n, &self.rho),
            self.rate,
        )
    }
}

/// Utility section of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilitySpec {
    Log,
    Power {
        c1: f64,
        alpha: f64,
        #[serde(default)]
        c2: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta: Option<f64>,
    },
}

impl UtilitySpec {
    pub fn build(&self) -> Result<UtilityFamily> {
        match *self {
            UtilitySpec::Log => Ok(UtilityFamily::log()),
            UtilitySpec::Power { c1, alpha, c2, beta } => {
                UtilityFamily::power_mixture(c1, alpha, c2, beta.unwrap_or(alpha))
            }
        }
    }
}

/// Experiment section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub experiment: Experiment,
    pub t: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Evaluation wealth grid; defaults to 0.4, 0.5, …, 1.6.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wealth_grid: Option<Vec<f64>>,
    /// Prefix for the emitted artifacts: `<output_path>.csv` and
    /// `<output_path>.json`.
    pub output_path: String,
    /// Initial wealth split; defaults to total wealth 1 split evenly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Initial factor value; defaults to 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<f64>,
    /// Horizon offsets for the error-scaling study, sorted descending;
    /// defaults to 0.4, 0.2, 0.1, 0.05.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
}

/// Grid parameters for the scheme experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub s_min: f64,
    pub s_max: f64,
    pub s_points: usize,
    pub y_min: f64,
    pub y_max: f64,
    pub y_points: usize,
    pub time_steps: usize,
}

impl Default for SchemeSpec {
    fn default() -> Self {
        SchemeSpec {
            s_min: 0.4,
            s_max: 1.6,
            s_points: 201,
            y_min: -2.0,
            y_max: 2.0,
            y_points: 21,
            time_steps: 10,
        }
    }
}

/// Whole configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub utility: UtilitySpec,
    pub run: RunSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SchemeSpec>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Structural checks that do not need the model built.
    fn check(&self) -> Result<()> {
        if !self.run.t.is_finite() || !self.run.horizon.is_finite() || self.run.t >= self.run.horizon
        {
            return Err(Error::Config(format!(
                "run needs t < T, got t = {}, T = {}",
                self.run.t, self.run.horizon
            )));
        }
        if let Some(grid) = &self.run.wealth_grid {
            if grid.is_empty() || grid[0] <= 0.0 {
                return Err(Error::Config(
                    "wealth_grid must be non-empty and strictly positive".into(),
                ));
            }
            for w in grid.windows(2) {
                if w[1] <= w[0] {
                    return Err(Error::Config("wealth_grid must be ascending".into()));
                }
            }
        }
        if let Some(x0) = &self.run.x0 {
            if x0.len() != self.model.n {
                return Err(Error::Config(format!(
                    "x0 must carry n = {} entries, got {}",
                    self.model.n,
                    x0.len()
                )));
            }
        }
        Ok(())
    }

    pub fn wealth_grid(&self) -> Vec<f64> {
        self.run
            .wealth_grid
            .clone()
            .unwrap_or_else(crate::bench::default_wealth_grid)
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.run
            .deltas
            .clone()
            .unwrap_or_else(|| vec![0.4, 0.2, 0.1, 0.05])
    }

    pub fn sim(&self) -> SimConfig {
        self.sim.unwrap_or_default()
    }

    pub fn y0(&self) -> f64 {
        self.run.y0.unwrap_or(0.0)
    }
}
