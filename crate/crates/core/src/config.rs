//! TOML configuration shared by every subcommand. Unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{
    EvalMode, ExperimentPlan, Family, FamilySpec, LearnedModels, MetricName, ModelName,
    NonstationarySpec,
};
use crate::kriging::KrigingOptions;
use crate::metrics::{Contiguity, SpatialWeights, WeightNormalization};
use crate::model::{Downsampling, TrainConfig, UNetConfig};
use crate::simulate::CompositeMode;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub grid: GridSection,
    pub cov: CovSection,
    pub train: TrainConfig,
    pub model: ModelSection,
    pub metrics: MetricsSection,
    pub plan: PlanSection,
    pub krige: KrigingOptions,
    pub sim: SimSection,
    pub ingest: IngestSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub h: usize,
    pub w: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { h: 32, w: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovSection {
    pub family: Family,
    pub sigma2: f64,
    /// Range as a fraction of the longer grid side.
    pub phi_fraction: f64,
    pub tau2: Option<f64>,
    pub nu: f64,
    pub wave_sigma2: f64,
    pub wave_phi_fraction: Option<f64>,
    pub composite: CompositeMode,
    pub nonstationary: NonstationarySpec,
}

impl Default for CovSection {
    fn default() -> Self {
        let f = FamilySpec::default();
        CovSection {
            family: f.family,
            sigma2: f.sigma2,
            phi_fraction: 0.1,
            tau2: f.tau2,
            nu: f.nu,
            wave_sigma2: f.wave_sigma2,
            wave_phi_fraction: f.wave_phi_fraction,
            composite: f.composite,
            nonstationary: f.nonstationary,
        }
    }
}

impl CovSection {
    pub fn family_spec(&self) -> FamilySpec {
        FamilySpec {
            family: self.family,
            sigma2: self.sigma2,
            tau2: self.tau2,
            nu: self.nu,
            wave_sigma2: self.wave_sigma2,
            wave_phi_fraction: self.wave_phi_fraction,
            composite: self.composite,
            nonstationary: self.nonstationary,
        }
    }
}

/// Architecture shared by both learned models; the model kind fixes the
/// convolution type and input channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// `ml_vsl` or `ml_base`; used by the `train` subcommand.
    pub kind: ModelName,
    pub depth: usize,
    pub base_channels: usize,
    pub kernel_size: usize,
    pub downsampling: Downsampling,
    pub pad: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let u = UNetConfig::ml_vsl();
        ModelSection {
            kind: ModelName::MlVsl,
            depth: u.depth,
            base_channels: u.base_channels,
            kernel_size: u.kernel_size,
            downsampling: u.downsampling,
            pad: u.pad,
        }
    }
}

impl ModelSection {
    pub fn unet(&self, kind: ModelName) -> Result<UNetConfig> {
        let preset = match kind {
            ModelName::MlVsl => UNetConfig::ml_vsl(),
            ModelName::MlBase => UNetConfig::ml_base(),
            other => {
                return Err(Error::Config(format!(
                    "{} is not a learned model",
                    other.name()
                )))
            }
        };
        let cfg = UNetConfig {
            depth: self.depth,
            base_channels: self.base_channels,
            kernel_size: self.kernel_size,
            downsampling: self.downsampling,
            pad: self.pad,
            ..preset
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Training settings for `kind`: ML Base always trains on the masked
    /// loss alone.
    pub fn train(&self, kind: ModelName, train: &TrainConfig) -> TrainConfig {
        match kind {
            ModelName::MlBase => TrainConfig {
                omega0: 0.0,
                ..*train
            },
            _ => *train,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub weights: Contiguity,
    pub normalization: WeightNormalization,
}

impl MetricsSection {
    pub fn weights(&self) -> SpatialWeights {
        SpatialWeights {
            scheme: self.weights,
            normalization: self.normalization,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalKind {
    #[default]
    Unobserved,
    Holdout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanSection {
    pub phi_fractions: Vec<f64>,
    pub observed_fractions: Vec<f64>,
    pub models: Vec<ModelName>,
    pub metrics: Vec<MetricName>,
    pub runs: usize,
    pub eval: EvalKind,
    /// Share of the sampled cells used for fitting in holdout mode.
    pub holdout_train_fraction: f64,
}

impl Default for PlanSection {
    fn default() -> Self {
        PlanSection {
            phi_fractions: vec![0.1],
            observed_fractions: vec![0.2, 0.5, 0.8],
            models: vec![ModelName::Kriging],
            metrics: vec![MetricName::Rmse, MetricName::MiRmse],
            runs: 100,
            eval: EvalKind::Unobserved,
            holdout_train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    /// Share of cells in the mask written next to a simulated field.
    pub observed_fraction: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            observed_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSection {
    pub train_fraction: f64,
    /// `[xmin, ymin, xmax, ymax]`; the points' bounding box when unset.
    pub bbox: Option<[f64; 4]>,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection {
            train_fraction: 0.8,
            bbox: None,
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn plan(&self, base_seed: u64) -> Result<ExperimentPlan> {
        let p = &self.plan;
        let learned = LearnedModels {
            vsl: self.model.unet(ModelName::MlVsl)?,
            base: self.model.unet(ModelName::MlBase)?,
            vsl_train: self.model.train(ModelName::MlVsl, &self.train),
            base_train: self.model.train(ModelName::MlBase, &self.train),
        };
        let plan = ExperimentPlan {
            family: self.cov.family_spec(),
            phi_fractions: p.phi_fractions.clone(),
            observed_fractions: p.observed_fractions.clone(),
            models: p.models.clone(),
            metrics: p.metrics.clone(),
            runs: p.runs,
            height: self.grid.h,
            width: self.grid.w,
            base_seed,
            eval: match p.eval {
                EvalKind::Unobserved => EvalMode::Unobserved,
                EvalKind::Holdout => EvalMode::Holdout {
                    train_fraction: p.holdout_train_fraction,
                },
            },
            weights: self.metrics.weights(),
            krige: self.krige,
            learned,
        };
        plan.validate()?;
        Ok(plan)
    }
}

/// Every documented key with its default, for `--help`.
pub fn documented_keys() -> String {
    let mut s = String::new();
    let mut walk = |prefix: &str, v: &toml::Value| {
        fn rec(out: &mut String, prefix: &str, v: &toml::Value) {
            match v {
                toml::Value::Table(t) => {
                    for (k, v) in t {
                        let key = if prefix.is_empty() {
                            k.clone()
                        } else {
                            format!("{prefix}.{k}")
                        };
                        rec(out, &key, v);
                    }
                }
                other => out.push_str(&format!("  {prefix} = {other}\n")),
            }
        }
        rec(&mut s, prefix, v);
    };
    let v: toml::Value =
        toml::from_str(&Config::default().to_toml()).expect("default config round-trips");
    walk("", &v);
    s.push_str("  cov.tau2, cov.wave_phi_fraction, ingest.bbox = unset by default\n");
    s
}
