//! Score a prediction against ground truth with Dice and ASSD, and trace how
//! labels moved between two predictions with a migration table.
//!
//! ```bash
//! cargo run --example segmentation_metrics
//! ```

use sfs::metrics::{assd, dice, migration_table, score_image};

const W: usize = 12;
const H: usize = 8;

fn paint(rects: &[(u8, usize, usize, usize, usize)]) -> Vec<u8> {
    let mut m = vec![0u8; W * H];
    for &(label, x0, y0, w, h) in rects {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                m[y * W + x] = label;
            }
        }
    }
    m
}

fn show(name: &str, m: &[u8]) {
    println!("{name}:");
    for row in m.chunks(W) {
        println!("  {}", row.iter().map(|&l| ['.', 'a', 'b'][l as usize]).collect::<String>());
    }
}

fn main() -> sfs::Result<()> {
    let truth = paint(&[(1, 1, 1, 4, 4), (2, 6, 2, 5, 5)]);
    // "before": class a shifted right, class b partly missed
    let before = paint(&[(1, 2, 1, 4, 4), (2, 7, 3, 3, 3)]);
    // "after": closer on both classes
    let after = paint(&[(1, 1, 1, 4, 4), (2, 6, 2, 5, 4)]);
    show("truth", &truth);
    show("before", &before);
    show("after", &after);

    println!("\nclass   dice before  dice after  assd before  assd after");
    for k in 1..3u8 {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!(
            "{k:>5} {:>12} {:>11} {:>12} {:>11}",
            fmt(dice(&before, &truth, k)?),
            fmt(dice(&after, &truth, k)?),
            fmt(assd(&before, &truth, W, H, k)?),
            fmt(assd(&after, &truth, W, H, k)?),
        );
    }
    let scores = score_image(&after, &truth, W, H, 3, 1)?;
    println!(
        "macro over foreground classes after: Dice {:.3}, ASSD {:.3}",
        scores.macro_dice.unwrap(),
        scores.macro_assd.unwrap()
    );

    // row i: where the pixels predicted as class i before went, and how
    // many of the moved pixels truly belonged to the old or new class
    let table = migration_table(&before, &after, &truth, 3)?;
    println!("\nfrom -> to   moved%  truly-from%  truly-to%");
    for i in 0..3 {
        for j in 0..3 {
            if let Some(c) = table.cell(i, j) {
                if i != j && c.pct_moved > 0.0 {
                    println!(
                        "{i:>4} -> {j}  {:>7.1} {:>12.1} {:>10.1}",
                        c.pct_moved, c.pct_true_source, c.pct_true_dest
                    );
                }
            }
        }
    }
    Ok(())
}
