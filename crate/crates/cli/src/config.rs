// SPDX-License-Identifier: Apache-2.0

//! The run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use recunlearn::{ModelKind, SolverConfig, SyntheticConfig, TrainConfig, UnlearnOptions};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub attack: AttackConfig,
    pub solver: SolverConfig,
    pub unlearn: UnlearnFlags,
    pub bench: BenchConfig,
    /// Artifact directory.
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            attack: AttackConfig::default(),
            solver: SolverConfig::default(),
            unlearn: UnlearnFlags::default(),
            bench: BenchConfig::default(),
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// `user,item,rating` CSV read by `prepare`.
    pub input: Option<PathBuf>,
    pub delimiter: char,
    pub header: HeaderSetting,
    /// Ratings strictly above this are positive.
    pub binarize_threshold: f64,
    /// Minimum positive degree kept by the k-core filter; 0 disables it.
    pub k_core: usize,
    pub split: [f64; 3],
    pub split_seed: u64,
    /// Parameters for `synth`.
    pub synthetic: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            input: None,
            delimiter: ',',
            header: HeaderSetting::Auto,
            binarize_threshold: 4.0,
            k_core: 5,
            split: [0.6, 0.2, 0.2],
            split_seed: 0,
            synthetic: SyntheticConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HeaderSetting {
    #[default]
    Auto,
    Present,
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelName {
    #[default]
    Mf,
    Lightgcn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelName,
    /// Propagation layers for LightGCN.
    pub layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelName::Mf,
            layers: 1,
        }
    }
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self.kind {
            ModelName::Mf => ModelKind::Mf,
            ModelName::Lightgcn => ModelKind::LightGcn { layers: self.layers },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// Share of training records whose label is flipped; 0 means no attack.
    pub ratio: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig { ratio: 0.02, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnlearnFlags {
    pub spillover: bool,
    pub use_hvp: bool,
    /// Largest parameter count allowed on the dense-matrix path.
    pub dense_cap: usize,
    /// Per-order ratios `a_0..a_K`; absent means no pruning.
    pub pruning: Option<Vec<f64>>,
}

impl Default for UnlearnFlags {
    fn default() -> Self {
        let d = UnlearnOptions::default();
        UnlearnFlags {
            spillover: d.spillover,
            use_hvp: d.use_hvp,
            dense_cap: d.dense_cap,
            pruning: d.pruning,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub ratios: Vec<f64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            ratios: vec![0.01, 0.02, 0.04, 0.08],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Applies command-line overrides: `seed` replaces every seed.
    pub fn override_with(&mut self, seed: Option<u64>, out: Option<PathBuf>) {
        if let Some(s) = seed {
            self.data.split_seed = s;
            self.data.synthetic.seed = s;
            self.train.seed = s;
            self.attack.seed = s;
        }
        if let Some(o) = out {
            self.out = o;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Usage(m));
        if !self.data.delimiter.is_ascii() {
            return bad(format!(
                "delimiter {:?} must be a single ASCII character",
                self.data.delimiter
            ));
        }
        if !(0.0..=1.0).contains(&self.attack.ratio) {
            return bad(format!("attack ratio {} outside [0, 1]", self.attack.ratio));
        }
        if let Some(r) = self.bench.ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return bad(format!("bench ratio {r} outside [0, 1]"));
        }
        if let Some(ratios) = &self.unlearn.pruning {
            let layers = match self.model.kind() {
                ModelKind::Mf => 0,
                ModelKind::LightGcn { layers } => layers,
            };
            if ratios.len() != layers + 1 {
                return bad(format!(
                    "{} pruning ratios given, the model needs {}",
                    ratios.len(),
                    layers + 1
                ));
            }
        }
        self.model.kind().validate()?;
        self.train.validate()?;
        self.solver.validate()?;
        Ok(())
    }

    pub fn unlearn_options(&self) -> UnlearnOptions {
        UnlearnOptions {
            solver: self.solver.clone(),
            spillover: self.unlearn.spillover,
            use_hvp: self.unlearn.use_hvp,
            dense_cap: self.unlearn.dense_cap,
            pruning: self.unlearn.pruning.clone(),
        }
    }
}
