use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::adapt::adapt;
use super::artifacts::opt;
use super::config::{AblationKind, SfsConfig};
use super::estimate::estimate_internal;
use super::evaluate::evaluate;
use crate::datagen::LabeledImage;
use crate::error::Result;
use crate::metrics::ClassScores;
use crate::network::SegNetwork;

/// Result of one grid point; `scores` is `None` and `error` set when the
/// run failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub kind: AblationKind,
    pub value: f64,
    /// Per-class selected source pixels at this point's `rho`.
    pub selected: Option<Vec<usize>>,
    pub scores: Option<ClassScores>,
    pub error: Option<String>,
}

impl AblationRow {
    pub fn macro_dice(&self) -> Option<f64> {
        self.scores.as_ref().and_then(|s| s.macro_dice)
    }
}

/// The config for one grid point.
pub fn apply_grid_value(base: &SfsConfig, kind: AblationKind, value: f64) -> SfsConfig {
    let mut cfg = base.clone();
    match kind {
        AblationKind::Omega => cfg.omega = value as usize,
        AblationKind::Rho => cfg.rho = value,
        AblationKind::Finetune => cfg.finetune_classifier = value != 0.0,
    }
    cfg
}

/// Estimate, adapt and evaluate once per grid value, all from the same
/// source-trained network and seeds (the varied knobs do not affect source
/// training). Failures become rows with an error message.
pub fn ablate(
    base: &SfsConfig,
    kind: AblationKind,
    grid: &[f64],
    source_net: &SegNetwork,
    source_train: &[LabeledImage],
    target_train: &[LabeledImage],
    target_test: &[LabeledImage],
) -> Vec<AblationRow> {
    grid.iter()
        .map(|&value| {
            let cfg = apply_grid_value(base, kind, value);
            let mut selected = None;
            let mut run = || -> Result<ClassScores> {
                cfg.validate()?;
                let (dist, counts) = estimate_internal(source_net, source_train, &cfg)?;
                selected = Some(counts);
                let adapted = adapt(source_net, &dist, target_train, &cfg)?;
                let seed = cfg.seeds().eval;
                Ok(evaluate(&adapted.net, target_test, None, 0, seed)?.summary)
            };
            let (scores, error) = match run() {
                Ok(s) => (Some(s), None),
                Err(e) => (None, Some(e.to_string())),
            };
            AblationRow {
                kind,
                value,
                selected,
                scores,
                error,
            }
        })
        .collect()
}

/// One line per grid point. `delta_dice` is the macro Dice difference to
/// the first successful row.
pub fn ablation_csv(rows: &[AblationRow], num_classes: usize) -> String {
    let mut s = String::from("kind,value,status,macro_dice,macro_assd,delta_dice,selected_pixels");
    for k in 0..num_classes {
        let _ = write!(s, ",dice_{k}");
    }
    for k in 0..num_classes {
        let _ = write!(s, ",assd_{k}");
    }
    s.push_str(",error\n");
    let reference = rows.iter().find_map(|r| r.macro_dice());
    for r in rows {
        let kind = match r.kind {
            AblationKind::Omega => "omega",
            AblationKind::Rho => "rho",
            AblationKind::Finetune => "finetune",
        };
        let status = if r.error.is_some() { "failed" } else { "ok" };
        let selected = r
            .selected
            .as_ref()
            .map(|c| c.iter().sum::<usize>().to_string())
            .unwrap_or_default();
        let delta = r.macro_dice().zip(reference).map(|(d, r)| d - r);
        let _ = write!(s, "{kind},{},{status}", r.value);
        match &r.scores {
            Some(sc) => {
                let _ = write!(
                    s,
                    ",{},{},{},{selected}",
                    opt(sc.macro_dice),
                    opt(sc.macro_assd),
                    opt(delta)
                );
                for d in &sc.dice {
                    let _ = write!(s, ",{}", opt(*d));
                }
                for a in &sc.assd {
                    let _ = write!(s, ",{}", opt(*a));
                }
            }
            None => {
                let _ = write!(s, ",,,,{selected}");
                s.push_str(&",".repeat(2 * num_classes));
            }
        }
        // keep the message on one CSV field
        let msg = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        let _ = writeln!(s, ",{msg}");
    }
    s
}
