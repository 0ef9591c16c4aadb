//! JSON persistence for [`InternalDistribution`].
//!
//! Floats are written with shortest round-trip formatting, so a reloaded
//! mixture reproduces the saved parameters exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::InternalDistribution;
use crate::error::{Result, SfsError};

pub const GMM_FORMAT: &str = "sfs-gmm";
pub const GMM_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmComponent {
    pub class: usize,
    /// Weight within the component's class.
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major `F x F`.
    pub covariance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmFile {
    pub format: String,
    pub version: u32,
    #[serde(rename = "K")]
    pub num_classes: usize,
    #[serde(rename = "omega")]
    pub components_per_class: usize,
    #[serde(rename = "F")]
    pub latent_dim: usize,
    pub rho: f64,
    pub reg: f64,
    pub class_priors: Vec<f64>,
    pub components: Vec<GmmComponent>,
    pub config_hash: String,
    pub seeds: Vec<u64>,
}

impl GmmFile {
    pub fn from_distribution(dist: &InternalDistribution, config_hash: &str, seeds: &[u64]) -> Self {
        Self {
            format: GMM_FORMAT.into(),
            version: GMM_VERSION,
            num_classes: dist.num_classes,
            components_per_class: dist.components_per_class,
            latent_dim: dist.dim,
            rho: dist.rho,
            reg: dist.reg,
            class_priors: dist.class_priors.clone(),
            components: (0..dist.num_components())
                .map(|c| GmmComponent {
                    class: dist.class_of(c),
                    weight: dist.weights[c],
                    mean: dist.mean(c).to_vec(),
                    covariance: dist.covariance(c),
                })
                .collect(),
            config_hash: config_hash.into(),
            seeds: seeds.to_vec(),
        }
    }

    pub fn into_distribution(self) -> Result<InternalDistribution> {
        if self.format != GMM_FORMAT || self.version != GMM_VERSION {
            return Err(SfsError::InvalidInput(format!(
                "unsupported mixture file {} v{}",
                self.format, self.version
            )));
        }
        let omega = self.components_per_class.max(1);
        if self
            .components
            .iter()
            .enumerate()
            .any(|(c, comp)| comp.class != c / omega)
        {
            return Err(SfsError::InvalidInput(
                "components must be listed class by class".into(),
            ));
        }
        let means: Vec<Vec<f64>> = self.components.iter().map(|c| c.mean.clone()).collect();
        let covs: Vec<Vec<f64>> = self
            .components
            .iter()
            .map(|c| c.covariance.clone())
            .collect();
        InternalDistribution::new(
            self.num_classes,
            self.components_per_class,
            self.latent_dim,
            self.rho,
            self.reg,
            self.components.iter().map(|c| c.weight).collect(),
            self.class_priors,
            &means,
            &covs,
        )
    }
}

pub fn save_gmm(
    path: &Path,
    dist: &InternalDistribution,
    config_hash: &str,
    seeds: &[u64],
) -> Result<()> {
    let file = GmmFile::from_distribution(dist, config_hash, seeds);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| SfsError::io(dir, e))?;
    }
    fs::write(path, serde_json::to_string_pretty(&file)?).map_err(|e| SfsError::io(path, e))
}

pub fn load_gmm(path: &Path) -> Result<InternalDistribution> {
    let text = fs::read_to_string(path).map_err(|e| SfsError::io(path, e))?;
    let file: GmmFile = serde_json::from_str(&text)?;
    file.into_distribution().map_err(|e| SfsError::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}
