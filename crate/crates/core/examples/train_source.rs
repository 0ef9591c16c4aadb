//! Train the segmentation network on the labeled source modality and
//! checkpoint it.
//!
//! ```bash
//! cargo run --example train_source -- [steps]
//! ```

use sfs::network::{load_checkpoint, save_checkpoint};
use sfs::pipeline::{generate_splits, macro_dice, train_source, SfsConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = std::env::args().nth(1).map_or(Ok(1500), |s| s.parse())?;
    let cfg = SfsConfig {
        source_iters: steps,
        eval_every: (steps / 6).max(1),
        ..SfsConfig::default()
    };
    let splits = generate_splits(&cfg)?.preprocessed()?;
    let shape = cfg.net_shape();
    println!(
        "{}x{} images, {} classes; {} training / {} validation images; {steps} steps",
        shape.width,
        shape.height,
        shape.num_classes,
        splits.source_train.len(),
        splits.source_val.len()
    );

    let outcome = train_source(&cfg, &splits.source_train, &splits.source_val)?;
    println!("\n step       ce  val dice");
    for row in outcome.log.iter().filter(|r| r.val_dice.is_some()) {
        println!("{:>5} {:>8.4} {:>9.4}", row.step, row.ce, row.val_dice.unwrap());
    }
    println!("best validation Dice {:.4} at step {}", outcome.best_val_dice, outcome.best_step);

    // the domain gap: the same network on the unseen target modality
    println!(
        "macro Dice on target test images (never trained on): {:.4}",
        macro_dice(&outcome.net, &splits.target_test)?
    );

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("source_model.json");
    save_checkpoint(&path, &outcome.net, &cfg.source_optimizer, outcome.best_step as u64, &cfg.hash(), &cfg.seeds().as_vec())?;
    let restored = load_checkpoint(&path)?;
    println!(
        "checkpoint: {} parameters, step {}, validation Dice after reload {:.4}",
        restored.net.parameter_count(),
        restored.manifest.step,
        macro_dice(&restored.net, &splits.source_val)?
    );
    Ok(())
}
