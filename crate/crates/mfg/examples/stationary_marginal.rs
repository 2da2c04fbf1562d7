//! Shows the regenerative property of the particle system: under any
//! fixed control, repeatedly advancing random mini-batches through the
//! one-step mapping (interior Euler-Maruyama move, terminal reset to a
//! fresh initial draw) keeps the time marginal uniform over the grid.

use mfg::measure::init_ensemble;
use mfg::net::ControlNet;
use mfg::problem::{make_problem, Variant};

fn main() -> mfg::Result<()> {
    let problem = make_problem::<f32>(Variant::Lq1, 1)?;
    let particles = 50_000;
    let batch = 2_500;
    let mut ensemble = init_ensemble(&problem, particles, 5)?;
    let control = ControlNet::for_problem(&problem, 16, 2, 5)?;

    let buckets = problem.n_steps() + 1;
    let expected = particles as f64 / buckets as f64;
    let band = 5.0 * (particles as f64 / buckets as f64).sqrt();
    println!("target occupancy {expected:.1} per bucket, tolerance {band:.1}");

    let sweeps = 50 * (particles / batch) as u64;
    for _ in 0..sweeps {
        let (a1, a2) = ensemble.select_minibatches(batch)?;
        let union: Vec<u32> = a1.into_iter().chain(a2).collect();
        let stats = ensemble.bucket_stats(&problem)?;
        let draws = ensemble.draw_transitions(&problem, &union, 0)?;
        let u = control.forward(draws.source_inputs(&problem).view())?;
        let (dest_time, dest_z) = draws.destinations(&problem, &stats, u.view())?;
        ensemble.apply_transitions(&draws, &dest_time, dest_z.view())?;
    }

    let stats = ensemble.bucket_stats(&problem)?;
    let mut worst = 0.0f64;
    for n in 0..buckets {
        worst = worst.max((stats.count(n) as f64 - expected).abs());
    }
    println!("after {sweeps} sweeps the largest deviation is {worst:.1}");
    assert!(worst <= band, "time marginal drifted from uniform");
    println!("the time marginal is uniform within the Monte Carlo band");
    Ok(())
}
