use std::path::{Path, PathBuf};

use super::config::SfsConfig;
use crate::datagen::{generate_dataset, preprocess, read_dataset, write_dataset, LabeledImage, ModalitySpec};
use crate::error::Result;

/// The four splits of a run, as rendered (not yet preprocessed) and rounded
/// to the 32-bit precision of the dataset files.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub source_train: Vec<LabeledImage>,
    pub source_val: Vec<LabeledImage>,
    pub target_train: Vec<LabeledImage>,
    pub target_test: Vec<LabeledImage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    SourceTrain,
    SourceVal,
    TargetTrain,
    TargetTest,
}

impl Split {
    pub const ALL: [Split; 4] = [
        Split::SourceTrain,
        Split::SourceVal,
        Split::TargetTrain,
        Split::TargetTest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Split::SourceTrain => "source_train",
            Split::SourceVal => "source_val",
            Split::TargetTrain => "target_train",
            Split::TargetTest => "target_test",
        }
    }

    /// `<out>/data/<name>.sfsd`
    pub fn path(self, out: &Path) -> PathBuf {
        out.join("data").join(format!("{}.sfsd", self.name()))
    }
}

impl Splits {
    pub fn get(&self, split: Split) -> &[LabeledImage] {
        match split {
            Split::SourceTrain => &self.source_train,
            Split::SourceVal => &self.source_val,
            Split::TargetTrain => &self.target_train,
            Split::TargetTest => &self.target_test,
        }
    }
}

/// Render every split. Each split gets its own scene seed, so source and
/// target never share layouts.
pub fn generate_splits(cfg: &SfsConfig) -> Result<Splits> {
    let seeds = cfg.seeds();
    let d = &cfg.data;
    let make = |seed: u64, modality: &ModalitySpec, count: usize| {
        let mut scene = d.scene.clone();
        scene.rng_seed = seed;
        let mut images = generate_dataset(&scene, modality, count)?;
        // match the on-disk precision so in-memory and reloaded runs agree
        for img in &mut images {
            img.pixels.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        Ok::<_, crate::error::SfsError>(images)
    };
    Ok(Splits {
        source_train: make(seeds.source_train_data, &d.source, d.source_train)?,
        source_val: make(seeds.source_val_data, &d.source, d.source_val)?,
        target_train: make(seeds.target_train_data, &d.target, d.target_train)?,
        target_test: make(seeds.target_test_data, &d.target, d.target_test)?,
    })
}

impl Splits {
    /// Preprocess every split.
    pub fn preprocessed(&self) -> Result<Splits> {
        Ok(Splits {
            source_train: preprocess(&self.source_train)?,
            source_val: preprocess(&self.source_val)?,
            target_train: preprocess(&self.target_train)?,
            target_test: preprocess(&self.target_test)?,
        })
    }
}

pub fn save_splits(out: &Path, splits: &Splits) -> Result<()> {
    for split in Split::ALL {
        write_dataset(&split.path(out), splits.get(split))?;
    }
    Ok(())
}

/// Read one split from disk and preprocess it.
pub fn load_split(out: &Path, split: Split) -> Result<Vec<LabeledImage>> {
    preprocess(&read_dataset(&split.path(out))?)
}
