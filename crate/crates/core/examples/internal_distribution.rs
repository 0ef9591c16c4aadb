//! Summarize a trained source model as a class-conditional Gaussian mixture
//! in its embedding space, then draw a labeled pseudo-dataset from it.
//!
//! ```bash
//! cargo run --example internal_distribution
//! ```

use sfs::gmm::{collect_confident, load_gmm, sample, save_gmm};
use sfs::pipeline::{estimate_internal, generate_splits, train_source, SfsConfig};
use sfs::rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SfsConfig {
        source_iters: 1500,
        ..SfsConfig::default()
    };
    let splits = generate_splits(&cfg)?.preprocessed()?;
    let net = train_source(&cfg, &splits.source_train, &splits.source_val)?.net;

    // raising the confidence threshold keeps fewer, cleaner pixels
    println!("  rho  selected pixels per class");
    for rho in [0.0, 0.5, 0.8, 0.9, 0.97, 0.99] {
        let counts = collect_confident(&net, &splits.source_train, rho)?.counts();
        println!("{rho:>5}  {counts:?}");
    }

    let (dist, counts) = estimate_internal(&net, &splits.source_train, &cfg)?;
    println!(
        "\nfitted {} components ({} per class) in {} dimensions from {counts:?} pixels",
        dist.num_components(),
        dist.components_per_class,
        dist.dim
    );
    for (k, trace) in dist.fit_traces.iter().enumerate() {
        println!(
            "class {k}: prior {:.3}, EM {} iterations, log-likelihood {:.3} -> {:.3}",
            dist.class_priors[k],
            trace.len(),
            trace.first().unwrap_or(&f64::NAN),
            trace.last().unwrap_or(&f64::NAN)
        );
    }
    println!("mean distance between class means: {:.3}", dist.mean_class_separation());

    // the source classifier should label mixture samples by their class
    let pseudo = sample(&dist, &dist.class_priors, 5000, &mut rng::seeded(1))?;
    let probs = net.classify(&pseudo.points);
    let k = dist.num_classes;
    let agree = probs
        .chunks_exact(k)
        .zip(&pseudo.labels)
        .filter(|(p, &l)| p.iter().enumerate().all(|(j, v)| *v <= p[l as usize] || j == l as usize))
        .count();
    println!(
        "source classifier agrees with {:.1}% of {} pseudo labels",
        100.0 * agree as f64 / pseudo.len() as f64,
        pseudo.len()
    );

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("gmm.json");
    save_gmm(&path, &dist, &cfg.hash(), &cfg.seeds().as_vec())?;
    let back = load_gmm(&path)?;
    let z = &pseudo.points[..dist.dim];
    println!(
        "log density of the first sample: {:.4} (reloaded: {:.4})",
        dist.log_density(z),
        back.log_density(z)
    );
    Ok(())
}
