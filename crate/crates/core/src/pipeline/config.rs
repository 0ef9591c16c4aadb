use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{AugmentConfig, IntensityMap, ModalitySpec, SceneSpec};
use crate::error::{Result, SfsError};
use crate::network::{AdamConfig, NetShape};

/// Scenes, modalities and split sizes of the synthetic benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// `rng_seed` is ignored; split seeds derive from [`SfsConfig::seed`].
    pub scene: SceneSpec,
    pub source: ModalitySpec,
    pub target: ModalitySpec,
    pub source_train: usize,
    pub source_val: usize,
    pub target_train: usize,
    pub target_test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            source: ModalitySpec {
                intensity_map: IntensityMap::identity(),
                noise_std: 0.05,
                blur_radius: 0,
                bias_field_amplitude: 0.0,
            },
            target: default_target_modality(),
            source_train: 48,
            source_val: 16,
            target_train: 48,
            target_test: 24,
        }
    }
}

/// Target appearance of the default task: a monotone contrast change that
/// squeezes the upper classes together, with the same noise as the source.
pub fn default_target_modality() -> ModalitySpec {
    ModalitySpec {
        intensity_map: IntensityMap {
            knots: vec![(0.0, 0.0), (1.0 / 3.0, 0.6), (2.0 / 3.0, 0.8), (1.0, 1.0)],
        },
        noise_std: 0.05,
        blur_radius: 0,
        bias_field_amplitude: 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub enc_channels: usize,
    pub latent_dim: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            enc_channels: 8,
            latent_dim: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmConfig {
    pub reg: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Cap on fitted pixels per class; larger classes are subsampled.
    pub max_samples_per_class: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            reg: 1e-4,
            max_iters: 200,
            tol: 1e-6,
            max_samples_per_class: 6000,
        }
    }
}

/// Where the class composition of each pseudo-dataset batch comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassProportions {
    /// Current predictions at the picked target pixels.
    PseudoLabels,
    /// The mixture's class priors (source label frequencies).
    SourcePriors,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationKind {
    Omega,
    Rho,
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub kind: AblationKind,
    /// Grid values; for `finetune`, nonzero means on.
    pub grid: Vec<f64>,
}

/// Every knob of a run. Loaded from a single JSON document; unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SfsConfig {
    pub data: DataConfig,
    pub network: NetworkConfig,
    /// Weight of the alignment term.
    pub lambda: f64,
    /// Confidence threshold for pixels used to fit the mixture.
    pub rho: f64,
    /// Mixture components per class.
    pub omega: usize,
    pub source_iters: usize,
    pub adapt_iters: usize,
    pub batch_size: usize,
    pub adapt_batch_size: usize,
    /// Target pixels (and pseudo samples) per adaptation step.
    pub pixels_per_batch: usize,
    /// Projections per sliced Wasserstein estimate.
    pub projections: usize,
    pub source_optimizer: AdamConfig,
    pub adapt_optimizer: AdamConfig,
    pub finetune_classifier: bool,
    pub class_proportions: ClassProportions,
    pub class_weighted_ce: bool,
    /// Validation interval during source training, in steps.
    pub eval_every: usize,
    /// Random augmentation of source batches; off when absent.
    pub augment: Option<AugmentConfig>,
    pub em: EmConfig,
    /// Embedding rows dumped per evaluation image.
    pub embedding_pixels_per_image: usize,
    pub ablation: Option<AblationConfig>,
    pub seed: u64,
}

impl Default for SfsConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            network: NetworkConfig::default(),
            lambda: 0.5,
            rho: 0.97,
            omega: 3,
            source_iters: 3000,
            adapt_iters: 1000,
            batch_size: 4,
            adapt_batch_size: 4,
            pixels_per_batch: 1024,
            projections: 64,
            source_optimizer: AdamConfig {
                lr: 1e-3,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-6,
                decay: 1e-6,
            },
            adapt_optimizer: AdamConfig {
                lr: 5e-5,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-1,
                decay: 1e-6,
            },
            finetune_classifier: true,
            class_proportions: ClassProportions::SourcePriors,
            class_weighted_ce: false,
            eval_every: 500,
            augment: None,
            em: EmConfig::default(),
            embedding_pixels_per_image: 64,
            ablation: None,
            seed: 0,
        }
    }
}

/// Independent seed streams derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub source_train_data: u64,
    pub source_val_data: u64,
    pub target_train_data: u64,
    pub target_test_data: u64,
    pub init: u64,
    pub source_batches: u64,
    pub em: u64,
    pub adapt: u64,
    pub eval: u64,
}

impl Seeds {
    pub fn from_master(master: u64) -> Self {
        // splitmix64 so nearby masters give unrelated streams
        let mix = |k: u64| {
            let mut z = master
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(k.wrapping_mul(0xBF58_476D_1CE4_E5B9));
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        };
        Self {
            master,
            source_train_data: mix(1),
            source_val_data: mix(2),
            target_train_data: mix(3),
            target_test_data: mix(4),
            init: mix(5),
            source_batches: mix(6),
            em: mix(7),
            adapt: mix(8),
            eval: mix(9),
        }
    }

    pub fn as_vec(&self) -> Vec<u64> {
        vec![
            self.master,
            self.source_train_data,
            self.source_val_data,
            self.target_train_data,
            self.target_test_data,
            self.init,
            self.source_batches,
            self.em,
            self.adapt,
            self.eval,
        ]
    }
}

impl SfsConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SfsConfig =
            serde_json::from_str(text).map_err(|e| SfsError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| SfsError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::from_master(self.seed)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn net_shape(&self) -> NetShape {
        NetShape {
            width: self.data.scene.image_width,
            height: self.data.scene.image_height,
            enc_channels: self.network.enc_channels,
            latent_dim: self.network.latent_dim,
            num_classes: self.data.scene.num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SfsError::Config(m));
        self.data.scene.validate()?;
        self.data.source.validate()?;
        self.data.target.validate()?;
        self.net_shape().validate()?;
        self.source_optimizer.validate()?;
        self.adapt_optimizer.validate()?;
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho {} outside [0, 1)", self.rho));
        }
        if self.omega == 0 {
            return bad("omega must be >= 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be finite and >= 0", self.lambda));
        }
        let d = &self.data;
        if d.source_train == 0 || d.source_val == 0 || d.target_train == 0 || d.target_test == 0 {
            return bad("every data split needs at least one image".into());
        }
        if self.source_iters == 0 || self.adapt_iters == 0 {
            return bad("iteration counts must be positive".into());
        }
        if self.batch_size == 0 || self.adapt_batch_size == 0 || self.eval_every == 0 {
            return bad("batch sizes and eval interval must be positive".into());
        }
        if self.projections == 0 || self.pixels_per_batch == 0 {
            return bad("projections and pixels_per_batch must be positive".into());
        }
        let batch_pixels = self.adapt_batch_size * d.scene.pixel_count();
        if self.pixels_per_batch > batch_pixels {
            return bad(format!(
                "pixels_per_batch {} exceeds the {batch_pixels} pixels of an adaptation batch",
                self.pixels_per_batch
            ));
        }
        if self.em.max_iters == 0 || !(self.em.reg > 0.0) {
            return bad("EM needs max_iters >= 1 and reg > 0".into());
        }
        if let Some(a) = &self.ablation {
            if a.grid.is_empty() {
                return bad("ablation grid is empty".into());
            }
            match a.kind {
                AblationKind::Omega if a.grid.iter().any(|v| *v < 1.0 || v.fract() != 0.0) => {
                    return bad("omega grid values must be positive integers".into());
                }
                AblationKind::Rho if a.grid.iter().any(|v| !(0.0..1.0).contains(v)) => {
                    return bad("rho grid values must lie in [0, 1)".into());
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = SfsConfig::default();
        cfg.validate().unwrap();
        let back = SfsConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = SfsConfig::from_json(r#"{"lambda": 1.0, "lamda": 2.0}"#).unwrap_err();
        assert!(matches!(err, SfsError::Config(_)));
        let err = SfsConfig::from_json(r#"{"data": {"scene": {"colour": 1}}}"#).unwrap_err();
        assert!(matches!(err, SfsError::Config(_)));
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = SfsConfig::from_json(r#"{"rho": 0.8, "seed": 5}"#).unwrap();
        assert_eq!(cfg.rho, 0.8);
        assert_eq!(cfg.omega, 3);
        assert_ne!(cfg.hash(), SfsConfig::default().hash());
    }

    #[test]
    fn invalid_values_rejected() {
        for doc in [
            r#"{"rho": 1.0}"#,
            r#"{"omega": 0}"#,
            r#"{"lambda": -1}"#,
            r#"{"pixels_per_batch": 100000}"#,
            r#"{"ablation": {"kind": "omega", "grid": [1.5]}}"#,
        ] {
            assert!(SfsConfig::from_json(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn seeds_are_distinct() {
        let s = Seeds::from_master(0).as_vec();
        let mut d = s[1..].to_vec();
        d.sort();
        d.dedup();
        assert_eq!(d.len(), s.len() - 1);
    }
}
