//! CSV and JSON files written by a run. Floats use Rust's shortest
//! round-trip formatting, so identical runs give byte-identical files;
//! absent values are empty fields.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::adapt::AdaptLogRow;
use super::config::{SfsConfig, Seeds};
use super::evaluate::{EmbeddingRow, EvalReport};
use super::train::SourceLogRow;
use crate::error::{Result, SfsError};
use crate::metrics::MigrationTable;

pub const RUN_FILE: &str = "run.json";
pub const SOURCE_MODEL: &str = "source_model.json";
pub const ADAPTED_MODEL: &str = "adapted_model.json";
pub const GMM_FILE: &str = "gmm.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const REPORT_JSON: &str = "report.json";
pub const LOSS_CSV: &str = "loss.csv";
pub const SOURCE_LOSS_CSV: &str = "source_loss.csv";

/// How ASSD surfaces are extracted, recorded in `report.json`.
pub const SURFACE_CONVENTION: &str =
    "4-connectivity, unit pixel spacing; a class pixel is on the surface when a 4-neighbour differs or it touches the image border";

pub(crate) fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| SfsError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| SfsError::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

/// Provenance shared by every artifact of an output directory: the config,
/// its hash and the derived seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord<'a> {
    pub config_hash: String,
    pub seeds: Seeds,
    pub config: &'a SfsConfig,
}

pub fn write_run_record(out: &Path, cfg: &SfsConfig) -> Result<()> {
    write_json(
        &out.join(RUN_FILE),
        &RunRecord {
            config_hash: cfg.hash(),
            seeds: cfg.seeds(),
            config: cfg,
        },
    )
}

pub fn source_loss_csv(log: &[SourceLogRow]) -> String {
    let mut s = String::from("step,ce,val_dice\n");
    for r in log {
        let _ = writeln!(s, "{},{},{}", r.step, r.ce, opt(r.val_dice));
    }
    s
}

pub fn loss_csv(log: &[AdaptLogRow]) -> String {
    let mut s = String::from("step,ce,swd,total\n");
    for r in log {
        let _ = writeln!(s, "{},{},{},{}", r.step, r.ce, r.swd, r.total);
    }
    s
}

/// Per-image, per-class rows for each phase, then `mean` rows per class and
/// a `macro` row over the foreground classes.
pub fn metrics_csv(phases: &[(&str, &EvalReport)]) -> String {
    let mut s = String::from("phase,image_id,class,dice,assd\n");
    for (phase, report) in phases {
        for (id, sc) in report.per_image.iter().enumerate() {
            for (k, (d, a)) in sc.dice.iter().zip(&sc.assd).enumerate() {
                let _ = writeln!(s, "{phase},{id},{k},{},{}", opt(*d), opt(*a));
            }
        }
        let sm = &report.summary;
        for (k, (d, a)) in sm.dice.iter().zip(&sm.assd).enumerate() {
            let _ = writeln!(s, "{phase},mean,{k},{},{}", opt(*d), opt(*a));
        }
        let _ = writeln!(
            s,
            "{phase},mean,macro,{},{}",
            opt(sm.macro_dice),
            opt(sm.macro_assd)
        );
    }
    s
}

/// Row `i` of the table: where pixels predicted `i` before adaptation went.
/// `None` when no pixel was predicted `i`.
pub fn migration_csv(table: &MigrationTable, i: usize) -> Option<String> {
    let row = table.rows[i].as_ref()?;
    let mut s = String::from("to_class,pct_moved,pct_true_source,pct_true_dest\n");
    for (j, c) in row.iter().enumerate() {
        let _ = writeln!(
            s,
            "{j},{},{},{}",
            c.pct_moved, c.pct_true_source, c.pct_true_dest
        );
    }
    Some(s)
}

pub fn embeddings_csv(rows: &[EmbeddingRow], dim: usize) -> String {
    let mut s = String::new();
    for j in 0..dim {
        let _ = write!(s, "x{j},");
    }
    s.push_str("pred,true\n");
    for r in rows {
        for v in &r.latent {
            let _ = write!(s, "{v},");
        }
        let _ = writeln!(s, "{},{}", r.pred, r.truth);
    }
    s
}

/// Write metrics, report, migration tables and embedding dumps for a
/// source-only vs adapted comparison.
pub fn write_evaluation(
    out: &Path,
    cfg: &SfsConfig,
    pre: &EvalReport,
    post: &EvalReport,
) -> Result<()> {
    write_text(
        &out.join(METRICS_CSV),
        &metrics_csv(&[("source_only", pre), ("adapted", post)]),
    )?;
    #[derive(Serialize)]
    struct Report<'a> {
        config_hash: String,
        seeds: Seeds,
        surface: &'static str,
        macro_classes: String,
        source_only: &'a EvalReport,
        adapted: &'a EvalReport,
    }
    write_json(
        &out.join(REPORT_JSON),
        &Report {
            config_hash: cfg.hash(),
            seeds: cfg.seeds(),
            surface: SURFACE_CONVENTION,
            macro_classes: format!("1..{} (background excluded)", cfg.data.scene.num_classes - 1),
            source_only: pre,
            adapted: post,
        },
    )?;
    if let Some(table) = &post.migration {
        for i in 0..table.num_classes {
            if let Some(text) = migration_csv(table, i) {
                write_text(&out.join(format!("migration_{i}.csv")), &text)?;
            }
        }
    }
    let dim = cfg.network.latent_dim;
    write_text(&out.join("embeddings_pre.csv"), &embeddings_csv(&pre.embeddings, dim))?;
    write_text(&out.join("embeddings_post.csv"), &embeddings_csv(&post.embeddings, dim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::migration_table;

    #[test]
    fn loss_csv_format() {
        let text = loss_csv(&[AdaptLogRow {
            step: 1,
            ce: 0.5,
            swd: 0.25,
            total: 0.625,
        }]);
        assert_eq!(text, "step,ce,swd,total\n1,0.5,0.25,0.625\n");
    }

    #[test]
    fn migration_rows_written_for_present_classes() {
        let t = migration_table(&[0, 0, 2], &[0, 2, 2], &[0, 2, 2], 3).unwrap();
        let row0 = migration_csv(&t, 0).unwrap();
        assert_eq!(row0.lines().count(), 4);
        assert!(row0.contains("\n2,50,0,100\n"));
        assert!(migration_csv(&t, 1).is_none());
    }

    #[test]
    fn embeddings_header() {
        let rows = [EmbeddingRow {
            image_id: 0,
            latent: vec![1.0, 2.5],
            pred: 1,
            truth: 0,
        }];
        assert_eq!(embeddings_csv(&rows, 2), "x0,x1,pred,true\n1,2.5,1,0\n");
    }
}
