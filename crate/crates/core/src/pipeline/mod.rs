//! End-to-end orchestration: source training, internal-distribution
//! estimation, source-free adaptation, evaluation and ablations, plus the
//! on-disk phases behind the `sfs` command line.
//!
//! Each `run_*` phase reads its inputs from and writes its artifacts to one
//! output directory:
//!
//! | phase | reads | writes |
//! |---|---|---|
//! | generate | — | `data/*.sfsd` |
//! | train-source | source splits | `source_model.{json,bin}`, `source_loss.csv` |
//! | estimate-gmm | source model, `source_train` | `gmm.json` |
//! | adapt | source model, `gmm.json`, `target_train` | `adapted_model.{json,bin}`, `loss.csv` |
//! | evaluate | both models, `target_test` | `metrics.csv`, `report.json`, `migration_<i>.csv`, `embeddings_{pre,post}.csv` |
//! | ablate | source model, `source_train`, target splits | `ablation_<kind>.csv` |
//!
//! Every phase also refreshes `run.json` with the config, its hash and
//! seeds; checkpoints and the mixture file embed the hash and seeds too.

mod ablate;
mod adapt;
mod artifacts;
mod config;
mod data;
mod estimate;
mod evaluate;
mod train;

use std::path::Path;

pub use ablate::{ablate, ablation_csv, apply_grid_value, AblationRow};
pub use adapt::{adapt, pseudo_label_counts, AdaptLogRow, AdaptOutcome};
pub use artifacts::{
    embeddings_csv, loss_csv, metrics_csv, migration_csv, source_loss_csv, write_evaluation,
    write_run_record, ADAPTED_MODEL, GMM_FILE, LOSS_CSV, METRICS_CSV, REPORT_JSON, RUN_FILE,
    SOURCE_LOSS_CSV, SOURCE_MODEL,
};
pub use config::{
    default_target_modality, AblationConfig, AblationKind, ClassProportions, DataConfig, EmConfig, NetworkConfig,
    Seeds, SfsConfig,
};
pub use data::{generate_splits, load_split, save_splits, Split, Splits};
pub use estimate::{estimate_internal, subsample_selection};
pub use evaluate::{evaluate, EmbeddingRow, EvalReport};
pub use train::{
    batch_gradient, inverse_frequency_weights, macro_dice, score_set, train_source, SourceLogRow,
    TrainOutcome,
};

use crate::error::{Result, SfsError};
use crate::gmm::{load_gmm, save_gmm, InternalDistribution};
use crate::network::{load_checkpoint, save_checkpoint, SegNetwork};
use artifacts::write_text;

fn load_model(out: &Path, name: &str) -> Result<SegNetwork> {
    Ok(load_checkpoint(&out.join(name))?.net)
}

/// Render all splits into `<out>/data/`.
pub fn run_generate(cfg: &SfsConfig, out: &Path) -> Result<Splits> {
    let splits = generate_splits(cfg)?;
    save_splits(out, &splits)?;
    write_run_record(out, cfg)?;
    Ok(splits)
}

/// Train on the stored source splits and save the best checkpoint.
pub fn run_train_source(cfg: &SfsConfig, out: &Path) -> Result<TrainOutcome> {
    let train = load_split(out, Split::SourceTrain)?;
    let val = load_split(out, Split::SourceVal)?;
    let outcome = train_source(cfg, &train, &val)?;
    save_checkpoint(
        &out.join(SOURCE_MODEL),
        &outcome.net,
        &cfg.source_optimizer,
        outcome.best_step as u64,
        &cfg.hash(),
        &cfg.seeds().as_vec(),
    )?;
    write_text(&out.join(SOURCE_LOSS_CSV), &source_loss_csv(&outcome.log))?;
    write_run_record(out, cfg)?;
    Ok(outcome)
}

/// Fit the internal distribution from the saved source model and the
/// stored source training split. Returns the fit and the selected-pixel
/// counts per class.
pub fn run_estimate(cfg: &SfsConfig, out: &Path) -> Result<(InternalDistribution, Vec<usize>)> {
    let net = load_model(out, SOURCE_MODEL)?;
    let train = load_split(out, Split::SourceTrain)?;
    let (dist, counts) = estimate_internal(&net, &train, cfg)?;
    save_gmm(&out.join(GMM_FILE), &dist, &cfg.hash(), &cfg.seeds().as_vec())?;
    write_run_record(out, cfg)?;
    Ok((dist, counts))
}

/// Source-free adaptation. Reads only the source checkpoint, `gmm.json` and
/// the target training split; no source data path is touched.
pub fn run_adapt(cfg: &SfsConfig, out: &Path) -> Result<AdaptOutcome> {
    let net = load_model(out, SOURCE_MODEL)?;
    let dist = load_gmm(&out.join(GMM_FILE))?;
    let mut target = load_split(out, Split::TargetTrain)?;
    // adaptation is unsupervised: drop the target labels before use
    for img in &mut target {
        img.mask.iter_mut().for_each(|l| *l = 0);
    }
    let outcome = adapt(&net, &dist, &target, cfg)?;
    save_checkpoint(
        &out.join(ADAPTED_MODEL),
        &outcome.net,
        &cfg.adapt_optimizer,
        cfg.adapt_iters as u64,
        &cfg.hash(),
        &cfg.seeds().as_vec(),
    )?;
    write_text(&out.join(LOSS_CSV), &loss_csv(&outcome.log))?;
    write_run_record(out, cfg)?;
    Ok(outcome)
}

/// Score the source-only and adapted models on the target test split.
/// Returns `(source_only, adapted)`.
pub fn run_evaluate(cfg: &SfsConfig, out: &Path) -> Result<(EvalReport, EvalReport)> {
    let pre_net = load_model(out, SOURCE_MODEL)?;
    let post_net = load_model(out, ADAPTED_MODEL)?;
    let test = load_split(out, Split::TargetTest)?;
    let seed = cfg.seeds().eval;
    let k = cfg.embedding_pixels_per_image;
    let pre = evaluate(&pre_net, &test, None, k, seed)?;
    let post = evaluate(&post_net, &test, Some(&pre.predictions), k, seed)?;
    write_evaluation(out, cfg, &pre, &post)?;
    write_run_record(out, cfg)?;
    Ok((pre, post))
}

/// Run the configured ablation grid against the saved source model and
/// write `ablation_<kind>.csv`.
pub fn run_ablate(cfg: &SfsConfig, out: &Path) -> Result<Vec<AblationRow>> {
    let spec = cfg
        .ablation
        .as_ref()
        .ok_or_else(|| SfsError::Config("config has no `ablation` section".into()))?;
    let net = load_model(out, SOURCE_MODEL)?;
    let source_train = load_split(out, Split::SourceTrain)?;
    let target_train = load_split(out, Split::TargetTrain)?;
    let target_test = load_split(out, Split::TargetTest)?;
    let rows = ablate(cfg, spec.kind, &spec.grid, &net, &source_train, &target_train, &target_test);
    let name = match spec.kind {
        AblationKind::Omega => "omega",
        AblationKind::Rho => "rho",
        AblationKind::Finetune => "finetune",
    };
    write_text(
        &out.join(format!("ablation_{name}.csv")),
        &ablation_csv(&rows, cfg.data.scene.num_classes),
    )?;
    write_run_record(out, cfg)?;
    Ok(rows)
}

/// All phases in order. Returns `(source_only, adapted)` reports.
pub fn run_all(cfg: &SfsConfig, out: &Path) -> Result<(EvalReport, EvalReport)> {
    cfg.validate()?;
    run_generate(cfg, out)?;
    run_train_source(cfg, out)?;
    run_estimate(cfg, out)?;
    run_adapt(cfg, out)?;
    run_evaluate(cfg, out)
}
