use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::network::SIZE_MULTIPLE;
use crate::keyframe_store::{Policy, DEFAULT_MAX_CARDINALITY};
use crate::losses::LossWeights;

/// Where the feature extractor's weights come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorChoice {
    /// Seeded test extractor (`extractor_seed`).
    #[default]
    Test,
    /// `extractor.stage*` tensors from the weight file.
    File,
}

impl std::str::FromStr for ExtractorChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test" => Ok(Self::Test),
            "file" => Ok(Self::File),
            other => Err(Error::InvalidConfig(format!("unknown extractor `{other}` (expected test or file)"))),
        }
    }
}

/// Runtime configuration, read from TOML. Every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub max_cardinality: usize,
    pub policy: Policy,
    /// Side of the aligned face crop; a multiple of 16.
    pub crop_size: usize,
    /// Weight file. When absent, seeded weights (`weights_seed`) are used.
    pub weights: Option<PathBuf>,
    pub weights_seed: u64,
    pub extractor: ExtractorChoice,
    pub extractor_seed: u64,
    /// Node spacing of the deformation grid; 1 evaluates every pixel.
    pub grid_step: usize,
    pub landmark_radius: f64,
    /// Frame offset between reference and degraded streams when pairing.
    pub reference_offset: usize,
    pub stride: usize,
    /// Width in crop pixels of the blend ramp when pasting back.
    pub feather: f64,
    /// Landmark template in the 512 frame; the bundled one when absent.
    pub template: Option<PathBuf>,
    pub paste_back: bool,
    /// Adds the loss breakdown against ground truth to each record.
    pub report_losses: bool,
    pub loss_weights: LossWeights,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_cardinality: DEFAULT_MAX_CARDINALITY,
            policy: Policy::LfuDecay,
            crop_size: 512,
            weights: None,
            weights_seed: 0,
            extractor: ExtractorChoice::Test,
            extractor_seed: 0,
            grid_step: 4,
            landmark_radius: 1.0,
            reference_offset: 5,
            stride: 5,
            feather: 16.0,
            template: None,
            paste_back: true,
            report_losses: false,
            loss_weights: LossWeights::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.weights, &mut cfg.template].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.max_cardinality == 0 {
            return fail("max_cardinality must be positive".into());
        }
        if self.crop_size == 0 || !self.crop_size.is_multiple_of(SIZE_MULTIPLE) {
            return fail(format!("crop_size {} must be a positive multiple of {SIZE_MULTIPLE}", self.crop_size));
        }
        if self.grid_step == 0 {
            return fail("grid_step must be positive".into());
        }
        if self.stride == 0 {
            return fail("stride must be positive".into());
        }
        if !self.landmark_radius.is_finite() || self.landmark_radius < 0.0 {
            return fail(format!("landmark_radius {} must be finite and non-negative", self.landmark_radius));
        }
        if !self.feather.is_finite() || self.feather < 0.0 {
            return fail(format!("feather {} must be finite and non-negative", self.feather));
        }
        self.loss_weights.validate()
    }
}
