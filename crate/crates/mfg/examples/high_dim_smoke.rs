//! Runs a short training session on the quadratic-cost variant in fifty
//! state dimensions. Nothing here targets accuracy; the point is that
//! batch assembly, both network passes, and the measure updates stay
//! finite and fast when the state is wide.

use mfg::problem::{make_problem, Variant};
use mfg::trainer::{run_policy_iteration, TrainerConfig, TrainingSession};
use std::time::Instant;

fn main() -> mfg::Result<()> {
    let dim = 50;
    let problem = make_problem::<f32>(Variant::Lq1, dim)?;
    let config = TrainerConfig {
        outer_iterations: 30,
        particles: 4000,
        batch_size: 200,
        test_features: 300,
        width: 64,
        depth: 4,
        seed: 6,
        ..TrainerConfig::default()
    };
    let mut session = TrainingSession::new(problem, config)?;

    println!("quadratic-cost variant in d = {dim}, 30 outer iterations");
    let started = Instant::now();
    run_policy_iteration(&mut session, |s, losses| {
        assert!(losses.pe_loss.is_finite() && losses.pi_objective.is_finite());
        if s.iteration() % 10 == 0 {
            println!(
                "iteration {:>3}  evaluation loss {:>12.6}  improvement objective {:>12.6}",
                s.iteration(),
                losses.pe_loss,
                losses.pi_objective
            );
        }
        Ok(())
    })?;
    println!(
        "finished in {:.1} s with every reported loss finite",
        started.elapsed().as_secs_f64()
    );
    Ok(())
}
