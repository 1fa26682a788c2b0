//! Experiment manifest: a JSON file whose fields command-line flags
//! override.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use pagelens::eval::SyntheticSpec;
use pagelens::pooling::PoolingOptions;
use pagelens::preprocess::CropConfig;
use pagelens::{ModelProfile, SearchConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub profile: String,
    /// Overrides the profile's embedding dim.
    pub dim: Option<usize>,
    pub prefix_nonvisual: Option<usize>,
    pub suffix_nonvisual: Option<usize>,
    pub pooling: PoolingOptions,
    pub search: SearchConfig,
    pub crop: CropConfig,
    pub synthetic: SyntheticSpec,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            profile: "colpali".into(),
            dim: None,
            prefix_nonvisual: None,
            suffix_nonvisual: None,
            pooling: PoolingOptions::default(),
            search: SearchConfig::default(),
            crop: CropConfig::default(),
            synthetic: SyntheticSpec::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn model_profile(&self) -> Result<ModelProfile> {
        let mut p = ModelProfile::builtin(&self.profile)?;
        if let Some(d) = self.dim {
            p.d = d;
        }
        if let Some(n) = self.prefix_nonvisual {
            p.prefix_nonvisual = n;
        }
        if let Some(n) = self.suffix_nonvisual {
            p.suffix_nonvisual = n;
        }
        Ok(p)
    }

    /// Cross-field checks, run after flags are applied.
    pub fn validate(&self) -> Result<()> {
        self.search.validate()?;
        self.crop.validate()?;
        if let Some(s) = self.pooling.smoothing {
            pagelens::pooling::SmoothingKernel::new(
                pagelens::pooling::KernelKind::Gaussian,
                self.pooling.window,
                self.pooling.sigma,
            )
            .with_context(|| format!("smoothing `{s}`"))?;
        }
        Ok(())
    }
}
