use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::LabeledImage;
use crate::error::{Result, SfsError};
use crate::metrics::{score_image, ClassScores, MigrationCounts, MigrationTable};
use crate::network::{forward, SegNetwork};
use crate::rng;

/// One dumped pixel embedding with its predicted and true label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub image_id: usize,
    pub latent: Vec<f64>,
    pub pred: u8,
    pub truth: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_image: Vec<ClassScores>,
    pub summary: ClassScores,
    #[serde(skip)]
    pub predictions: Vec<Vec<u8>>,
    /// Pre→post label migration, when baseline predictions were given.
    pub migration: Option<MigrationTable>,
    #[serde(skip)]
    pub embeddings: Vec<EmbeddingRow>,
}

/// Score `net` on labeled images. `baseline` holds earlier predictions
/// for the same images (e.g. before adaptation) and enables the migration
/// table. `embed_pixels` pixels per image are dumped, chosen with `seed`;
/// the same seed picks the same pixels for any network.
pub fn evaluate(
    net: &SegNetwork,
    images: &[LabeledImage],
    baseline: Option<&[Vec<u8>]>,
    embed_pixels: usize,
    seed: u64,
) -> Result<EvalReport> {
    let s = net.shape();
    if let Some(b) = baseline {
        if b.len() != images.len() {
            return Err(SfsError::Dimension(format!(
                "{} baseline predictions for {} images",
                b.len(),
                images.len()
            )));
        }
    }
    let embed_pixels = embed_pixels.min(s.pixels());
    let per_image: Vec<(ClassScores, Vec<u8>, Vec<EmbeddingRow>)> = images
        .par_iter()
        .enumerate()
        .map(|(id, img)| {
            let pass = forward(net, img)?;
            let pred = pass.predictions();
            let scores = score_image(&pred, &img.mask, s.width, s.height, s.num_classes, 1)?;
            let latent = pass.latent();
            let mut r = rng::derived(seed, id as u64);
            let mut chosen = index::sample(&mut r, s.pixels(), embed_pixels).into_vec();
            chosen.sort_unstable();
            let rows = chosen
                .into_iter()
                .map(|p| EmbeddingRow {
                    image_id: id,
                    latent: latent.pixel(p).to_vec(),
                    pred: pred[p],
                    truth: img.mask[p],
                })
                .collect();
            Ok((scores, pred, rows))
        })
        .collect::<Result<_>>()?;

    let mut scores = Vec::with_capacity(images.len());
    let mut predictions = Vec::with_capacity(images.len());
    let mut embeddings = Vec::new();
    for (sc, pred, rows) in per_image {
        scores.push(sc);
        predictions.push(pred);
        embeddings.extend(rows);
    }
    let migration = match baseline {
        Some(pre) => {
            let mut counts = MigrationCounts::new(s.num_classes);
            for ((p, post), img) in pre.iter().zip(&predictions).zip(images) {
                counts.add(p, post, &img.mask)?;
            }
            Some(counts.table())
        }
        None => None,
    };
    Ok(EvalReport {
        summary: ClassScores::aggregate(&scores, 1),
        per_image: scores,
        predictions,
        migration,
        embeddings,
    })
}
