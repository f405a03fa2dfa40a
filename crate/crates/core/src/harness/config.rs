//! Experiment configuration file (TOML). Every field has a default, so an
//! empty file is a valid desk-scale setup.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cran::{CranConfig, GsbfConfig};
use crate::error::{Error, Result};
use crate::imitation::DaggerConfig;
use crate::lorm::LormConfig;
use crate::self_imitation::SiConfig;

pub const DEFAULT_SEED: u64 = 2024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    /// Certified optimum from branch-and-bound.
    Exact,
    /// The group-sparse heuristic's solution.
    Gsbf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: usize,
    pub test: usize,
    /// Reject instances that are infeasible with every RRH on.
    pub feasible_only: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 50,
            test: 50,
            feasible_only: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub target: CranConfig,
    pub unlabeled: usize,
    pub test: usize,
    /// Labeled target instances for the from-scratch reference; 0 skips it.
    pub scratch_train: usize,
    pub si: SiConfig,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            target: CranConfig::new(6, 8),
            unlabeled: 10,
            test: 50,
            scratch_train: 50,
            si: SiConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub eps1: Vec<f64>,
    pub eps2: Vec<f64>,
    pub layers: usize,
    pub trials: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            eps1: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            eps2: vec![0.0, 0.25, 0.5, 1.0],
            layers: 12,
            trials: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub instances: CranConfig,
    pub split: SplitConfig,
    pub label_source: LabelSource,
    /// Shared by training, deployment and transfer.
    pub lorm: LormConfig,
    pub dagger: DaggerConfig,
    pub gsbf: GsbfConfig,
    pub transfer: TransferConfig,
    pub theory: TheoryConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: None,
            instances: CranConfig::default(),
            split: SplitConfig::default(),
            label_source: LabelSource::Exact,
            lorm: LormConfig::default(),
            dagger: DaggerConfig::default(),
            gsbf: GsbfConfig::default(),
            transfer: TransferConfig::default(),
            theory: TheoryConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.sync();
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Copy the shared search settings into the nested configs.
    pub fn sync(&mut self) {
        self.dagger.lorm = self.lorm;
        self.transfer.si.lorm = self.lorm;
        let si = SiConfig::default();
        if self.transfer.si.train == si.train {
            self.transfer.si.train = self.dagger.train;
        }
        if self.transfer.si.o2 == si.o2 {
            self.transfer.si.o2 = self.dagger.o2;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.instances.validate()?;
        self.transfer.target.validate()?;
        self.lorm.schedule.validate()?;
        self.transfer.si.validate()?;
        if self.dagger.rounds == 0 {
            return Err(Error::Config("dagger.rounds must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dagger.validation_fraction) {
            return Err(Error::Config("dagger.validation_fraction must lie in [0, 1)".into()));
        }
        if self.dagger.relaxation_budget.is_some_and(|b| !(b > 0.0)) {
            return Err(Error::Config("dagger.relaxation_budget must be positive".into()));
        }
        if self.dagger.o2.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("dagger.o2 entries must be positive".into()));
        }
        if self.split.train + self.split.test == 0 {
            return Err(Error::Config("split produces no instances".into()));
        }
        if self.theory.layers == 0 || self.theory.trials == 0 {
            return Err(Error::Config("theory needs layers and trials".into()));
        }
        if self.theory.eps1.iter().chain(&self.theory.eps2).any(|e| !(0.0..=1.0).contains(e)) {
            return Err(Error::Config("theory probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}
