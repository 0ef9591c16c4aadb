//! Render the same scenes in two modalities and compare class intensities.
//!
//! ```bash
//! cargo run --example synthetic_data
//! ```

use sfs::datagen::{generate_dataset, preprocess, read_dataset, write_dataset, ModalitySpec, SceneSpec};
use sfs::pipeline::default_target_modality;

fn class_means(images: &[sfs::datagen::LabeledImage], k: usize) -> Vec<f64> {
    let mut sum = vec![0.0; k];
    let mut n = vec![0usize; k];
    for img in images {
        for (&p, &l) in img.pixels.iter().zip(&img.mask) {
            sum[l as usize] += p;
            n[l as usize] += 1;
        }
    }
    sum.iter().zip(&n).map(|(s, &c)| s / c.max(1) as f64).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = SceneSpec {
        rng_seed: 7,
        ..SceneSpec::default()
    };
    let source = ModalitySpec {
        noise_std: 0.05,
        ..ModalitySpec::identity()
    };
    let target = default_target_modality();

    // same seed, same masks: only the appearance differs
    let a = generate_dataset(&scene, &source, 8)?;
    let b = generate_dataset(&scene, &target, 8)?;
    assert!(a.iter().zip(&b).all(|(x, y)| x.mask == y.mask));

    let k = scene.num_classes;
    println!("class   source  target");
    for (c, (s, t)) in class_means(&a, k).iter().zip(class_means(&b, k)).enumerate() {
        println!("{c:>5} {s:>8.3} {t:>7.3}");
    }

    let first = &b[0];
    println!("\nfirst target mask ({}x{}, every other row):", first.width, first.height);
    for row in first.mask.chunks(first.width).step_by(2) {
        let line: String = row.iter().map(|&l| ['.', '-', '+', '#'][l as usize % 4]).collect();
        println!("  {line}");
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("target.sfsd");
    write_dataset(&path, &b)?;
    let back = read_dataset(&path)?;
    println!("\nround trip through {}: {} images", path.display(), back.len());

    let normalized = preprocess(&back)?;
    let px = &normalized[0].pixels;
    let mean = px.iter().sum::<f64>() / px.len() as f64;
    let (lo, hi) = px.iter().fold((f64::MAX, f64::MIN), |(l, h), &p| (l.min(p), h.max(p)));
    // clipping at three standard deviations nudges the mean off zero
    println!("after per-image standardization: mean {mean:.1e}, range [{lo:.2}, {hi:.2}]");
    Ok(())
}

