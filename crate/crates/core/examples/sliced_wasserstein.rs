//! Measure the sliced Wasserstein distance between two point clouds and
//! follow its gradient until they match.
//!
//! ```bash
//! cargo run --example sliced_wasserstein
//! ```

use rand_distr::{Distribution, Normal};
use sfs::rng;
use sfs::swd::{sample_projections, swd, ProjectionBank};

fn main() -> sfs::Result<()> {
    let mut r = rng::seeded(3);
    let (m, dim) = (200, 2);
    let noise = Normal::new(0.0, 1.0).unwrap();
    // a round cloud at the origin and a stretched one off to the side
    let mut a: Vec<f64> = (0..m * dim).map(|_| noise.sample(&mut r)).collect();
    let b: Vec<f64> = (0..m)
        .flat_map(|_| [4.0 + 2.0 * noise.sample(&mut r), 1.0 + 0.3 * noise.sample(&mut r)])
        .collect();

    // in one dimension the distance is exact: a shift by c costs c^2
    let line = ProjectionBank::from_directions(1, vec![1.0])?;
    let xs = [0.0, 1.0, 5.0];
    let shifted: Vec<f64> = xs.iter().map(|x| x + 2.5).collect();
    println!("1-D shift by 2.5: {}", swd(&xs, &shifted, &line)?.distance);

    let bank = sample_projections(dim, 50, &mut r)?;
    println!("\nstep  distance  centroid");
    let step = 0.5 * m as f64;
    for it in 0..=60 {
        let res = swd(&a, &b, &bank)?;
        if it % 10 == 0 {
            let cx = a.chunks_exact(dim).map(|p| p[0]).sum::<f64>() / m as f64;
            let cy = a.chunks_exact(dim).map(|p| p[1]).sum::<f64>() / m as f64;
            println!("{it:>4} {:>9.4}  ({cx:.2}, {cy:.2})", res.distance);
        }
        // plain gradient descent on the point coordinates
        a.iter_mut().zip(&res.grad_a).for_each(|(x, g)| *x -= step * g);
    }

    // a fresh bank gives a different but similar estimate
    let other = sample_projections(dim, 50, &mut r)?;
    println!("\nunder a fresh projection bank: {:.4}", swd(&a, &b, &other)?.distance);
    Ok(())
}
