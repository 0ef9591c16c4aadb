//! The full workflow on disk: train on the source modality, summarize it as
//! a mixture, delete the source data, adapt to the target modality and
//! compare target scores before and after.
//!
//! ```bash
//! cargo run --example source_free_adaptation -- [out_dir]
//! ```
//!
//! Artifacts (checkpoints, `gmm.json`, loss curves, `metrics.csv`,
//! migration tables, embeddings) stay in `out_dir` when one is given.

use std::fs;

use sfs::pipeline::{self, SfsConfig, Split};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let temp = tempfile::tempdir()?;
    let keep = std::env::args().nth(1);
    let out = keep.clone().map_or(temp.path().to_path_buf(), Into::into);
    let cfg = SfsConfig::default();
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.json"), cfg.to_json())?;

    pipeline::run_generate(&cfg, &out)?;
    let trained = pipeline::run_train_source(&cfg, &out)?;
    println!(
        "source model: validation Dice {:.3} at step {}",
        trained.best_val_dice, trained.best_step
    );
    let (dist, counts) = pipeline::run_estimate(&cfg, &out)?;
    println!(
        "mixture: {} components from {counts:?} confident source pixels",
        dist.num_components()
    );

    // from here on only the model, the mixture and target images exist
    for split in [Split::SourceTrain, Split::SourceVal] {
        fs::remove_file(split.path(&out))?;
    }
    let adapted = pipeline::run_adapt(&cfg, &out)?;
    let (first, last) = (&adapted.log[0], adapted.log.last().unwrap());
    println!(
        "adaptation: swd {:.4} -> {:.4}, classifier ce {:.4} -> {:.4}",
        first.swd, last.swd, first.ce, last.ce
    );

    let (pre, post) = pipeline::run_evaluate(&cfg, &out)?;
    println!("\nclass  dice before  dice after");
    for k in 0..cfg.data.scene.num_classes {
        let fmt = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.3}"));
        println!("{k:>5} {:>12} {:>11}", fmt(pre.summary.dice[k]), fmt(post.summary.dice[k]));
    }
    println!(
        "macro (foreground) {:>5.3} {:>11.3}",
        pre.summary.macro_dice.unwrap_or(f64::NAN),
        post.summary.macro_dice.unwrap_or(f64::NAN)
    );
    match keep {
        Some(_) => println!("\nartifacts in {}", out.display()),
        None => println!("\npass an output directory to keep the artifacts"),
    }
    Ok(())
}
