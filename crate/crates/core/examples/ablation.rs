//! Vary one knob of the adaptation at a time, reusing a single source model:
//! the number of mixture components per class and the confidence threshold.
//!
//! ```bash
//! cargo run --example ablation
//! ```

use sfs::pipeline::{ablate, ablation_csv, generate_splits, train_source, AblationKind, SfsConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SfsConfig {
        adapt_iters: 500,
        ..SfsConfig::default()
    };
    let splits = generate_splits(&cfg)?.preprocessed()?;
    let net = train_source(&cfg, &splits.source_train, &splits.source_val)?.net;
    let (target_train, target_test) = (&splits.target_train, &splits.target_test);

    for (kind, grid) in [
        (AblationKind::Omega, vec![1.0, 2.0, 3.0, 5.0]),
        (AblationKind::Rho, vec![0.0, 0.8, 0.97, 0.99]),
    ] {
        let rows = ablate(&cfg, kind, &grid, &net, &splits.source_train, target_train, target_test);
        println!("{kind:?}");
        for row in &rows {
            match (&row.error, row.macro_dice()) {
                (Some(e), _) => println!("  {:>5}: failed: {e}", row.value),
                (None, d) => println!(
                    "  {:>5}: macro Dice {:.4}, selected {:?}",
                    row.value,
                    d.unwrap_or(f64::NAN),
                    row.selected.as_deref().unwrap_or_default()
                ),
            }
        }
        println!("\n{}", ablation_csv(&rows, cfg.data.scene.num_classes));
    }
    Ok(())
}
