//! Presets, run configuration, training loops and compilation into a model
//! container.

mod compile;
mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use compile::{compile_container, reference_accuracy, rounding_accuracies, simulate_accuracy, CompileConfig};
pub use train::{
    model_accuracy, quantize_model, train_full_precision, train_pipeline, train_ste, write_training_log, EpochRecord,
    TrainConfig,
    TrainOutcome,
};

use crate::codec::{CodecError, ContainerError};
use crate::cost::{CostCoefficients, CostError};
use crate::datapath::DatapathError;
use crate::nn::{load_idx_dataset, Dataset, DatasetError};
use crate::nn::NnError;
use crate::quant::QuantError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Dataset(#[from] DatasetError),
    #[error("i/o on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Datapath(#[from] DatapathError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Named architectures. Dimensions list hidden and output widths; the input
/// width comes from the data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[default]
    #[serde(rename = "lenet-300-100")]
    Lenet300100,
    #[serde(rename = "mlp-hr")]
    MlpHr,
    #[serde(rename = "mlp-gsc")]
    MlpGsc,
    #[serde(rename = "custom")]
    Custom,
}

impl std::str::FromStr for Preset {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lenet-300-100" => Ok(Preset::Lenet300100),
            "mlp-hr" => Ok(Preset::MlpHr),
            "mlp-gsc" => Ok(Preset::MlpGsc),
            "custom" => Ok(Preset::Custom),
            other => Err(PipelineError::Config(format!(
                "unknown preset {other:?} (expected lenet-300-100, mlp-hr, mlp-gsc or custom)"
            ))),
        }
    }
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Lenet300100 => "lenet-300-100",
            Preset::MlpHr => "mlp-hr",
            Preset::MlpGsc => "mlp-gsc",
            Preset::Custom => "custom",
        }
    }

    /// Hidden and output widths, or `None` for [`Preset::Custom`].
    pub fn layer_widths(self) -> Option<&'static [usize]> {
        match self {
            Preset::Lenet300100 => Some(&[300, 100, 10]),
            Preset::MlpHr => Some(&[512, 256, 128, 12]),
            Preset::MlpGsc => Some(&[512, 512, 256, 256, 128, 128, 12]),
            Preset::Custom => None,
        }
    }

    pub fn default_batchnorm(self) -> bool {
        matches!(self, Preset::MlpHr | Preset::MlpGsc)
    }
}

/// Where the data lives and how it is shaped.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding the four MNIST IDX files; `F4_DATA_DIR` when unset.
    pub dir: Option<PathBuf>,
    /// Keep only the central `crop × crop` pixels.
    pub crop: Option<usize>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

pub const DATA_DIR_ENV: &str = "F4_DATA_DIR";

impl DataConfig {
    pub fn resolve_dir(&self) -> Result<PathBuf, PipelineError> {
        if let Some(d) = &self.dir {
            return Ok(d.clone());
        }
        std::env::var_os(DATA_DIR_ENV)
            .map(|d| PathBuf::from(d).join("mnist"))
            .ok_or_else(|| PipelineError::Config(format!("no data directory: set data.dir or {DATA_DIR_ENV}")))
    }

    /// Loads (train, test) with the configured crop and limits applied.
    pub fn load(&self) -> Result<(Dataset, Dataset), PipelineError> {
        let dir = self.resolve_dir()?;
        let mut train = load_idx_dataset(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?;
        let mut test = load_idx_dataset(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))?;
        if let Some(side) = self.crop {
            train = train.center_crop(side)?;
            test = test.center_crop(side)?;
        }
        if let Some(n) = self.train_limit {
            train = train.take(n);
        }
        if let Some(n) = self.test_limit {
            test = test.take(n);
        }
        Ok((train, test))
    }
}

/// Everything a run needs; read from TOML, overridable from the command line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    /// Hidden and output widths for the custom preset.
    pub dims: Option<Vec<usize>>,
    /// Overrides the preset's batchnorm default.
    pub batchnorm: Option<bool>,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub compile: CompileConfig,
    pub cost: CostCoefficients,
    /// Parent directory of the timestamped run directories.
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: Preset::default(),
            dims: None,
            batchnorm: None,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            compile: CompileConfig::default(),
            cost: CostCoefficients::default(),
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        match (self.preset, &self.dims) {
            (Preset::Custom, None) => return bad("custom preset needs dims".into()),
            (Preset::Custom, Some(d)) if d.is_empty() || d.contains(&0) => {
                return bad(format!("dims must be non-empty and positive, got {d:?}"))
            }
            (p, Some(_)) if p != Preset::Custom => return bad(format!("dims is only valid with the custom preset, not {}", p.name())),
            _ => {}
        }
        if !(self.train.lambda >= 0.0) || !self.train.lambda.is_finite() {
            return bad(format!("lambda must be a finite non-negative number, got {}", self.train.lambda));
        }
        if self.train.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        for (name, v) in [
            ("lr", self.train.lr),
            ("ste_lr", self.train.ste_lr),
            ("lr_decay", self.train.lr_decay),
            ("ste_lr_decay", self.train.ste_lr_decay),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.train.omega_lr >= 0.0) || !self.train.omega_lr.is_finite() {
            return bad(format!("omega_lr must be non-negative, got {}", self.train.omega_lr));
        }
        if !(0.0 < self.compile.percentile && self.compile.percentile <= 100.0) {
            return bad(format!("percentile must be in (0, 100], got {}", self.compile.percentile));
        }
        self.cost.validate()?;
        Ok(())
    }

    /// Full feature sizes `[input, hidden..., output]` for `input_dim` inputs.
    pub fn dims_for(&self, input_dim: usize) -> Vec<usize> {
        let widths: &[usize] = match self.preset.layer_widths() {
            Some(w) => w,
            None => self.dims.as_deref().unwrap_or(&[]),
        };
        std::iter::once(input_dim).chain(widths.iter().copied()).collect()
    }

    pub fn batchnorm(&self) -> bool {
        self.batchnorm.unwrap_or(self.preset.default_batchnorm())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_dims() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.dims_for(784), vec![784, 300, 100, 10]);
        let gsc = RunConfig {
            preset: Preset::MlpGsc,
            ..RunConfig::default()
        };
        assert_eq!(gsc.dims_for(390), vec![390, 512, 512, 256, 256, 128, 128, 12]);
        assert!(gsc.batchnorm());
        assert!(!cfg.batchnorm());
    }

    #[test]
    fn toml_roundtrip_and_overrides() {
        let text = r#"
            preset = "mlp-hr"
            out_dir = "/tmp/x"
            [train]
            lambda = 0.002
            seed = 9
            [cost]
            c_offchip = 50.0
        "#;
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.preset, Preset::MlpHr);
        assert_eq!(cfg.train.lambda, 0.002);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.cost.c_offchip, 50.0);
        assert_eq!(cfg.cost.c_add, 1.0);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn invalid_configs() {
        assert!(matches!(RunConfig::from_toml("preset = \"resnet\""), Err(PipelineError::Config(_))));
        assert!(matches!(RunConfig::from_toml("preset = \"custom\""), Err(PipelineError::Config(_))));
        assert!(matches!(RunConfig::from_toml("[train]\nlambda = -1.0"), Err(PipelineError::Config(_))));
        assert!(matches!(RunConfig::from_toml("[cost]\nc_add = -1.0"), Err(PipelineError::Cost(_))));
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(PipelineError::Config(_))));
        assert!("lenet".parse::<Preset>().is_err());
        assert_eq!("mlp-gsc".parse::<Preset>().unwrap(), Preset::MlpGsc);
    }

    #[test]
    fn custom_dims() {
        let cfg = RunConfig::from_toml("preset = \"custom\"\ndims = [64, 10]").unwrap();
        assert_eq!(cfg.dims_for(100), vec![100, 64, 10]);
    }
}
