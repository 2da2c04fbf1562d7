//! Trains the planar target-tracking problem, whose running cost mixes a
//! moving target with pairwise repulsion from the population. No closed
//! form exists here, so progress is measured by the empirical path cost
//! under the learned control falling below its starting point.

use mfg::metrics::simulate_cost;
use mfg::problem::{make_problem, Variant};
use mfg::trainer::{run_policy_iteration, TrainerConfig, TrainingSession};

fn main() -> mfg::Result<()> {
    let problem = make_problem::<f32>(Variant::TargetTracking, 2)?;
    let config = TrainerConfig {
        outer_iterations: 300,
        particles: 6_000,
        batch_size: 600,
        lr_base: Some(0.3),
        test_features: 240,
        width: 48,
        depth: 4,
        seed: 3,
        ..TrainerConfig::default()
    };
    let mut session = TrainingSession::new(problem, config)?;

    let cost_of = |s: &TrainingSession<f32>| -> mfg::Result<f64> {
        let stats = s.ensemble().bucket_stats(s.problem())?;
        simulate_cost(s.problem(), s.control(), &stats, 128, 11)
    };

    let start = cost_of(&session)?;
    println!("empirical cost before training: {start:.4}");
    run_policy_iteration(&mut session, |s, _| {
        if s.iteration() % 80 == 0 {
            println!("iteration {:>4}: J_hat = {:.4}", s.iteration(), cost_of(s)?);
        }
        Ok(())
    })?;
    let end = cost_of(&session)?;
    println!("empirical cost after training:  {end:.4}");
    println!("improvement: {:.4}", start - end);

    Ok(())
}
