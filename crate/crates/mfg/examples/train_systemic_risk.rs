//! Trains the interbank lending benchmark, where each agent steers its
//! log-monetary reserves toward the population average, and reports the
//! relative error of the learned value function against the Riccati
//! reference.

use mfg::metrics::MetricsEvaluator;
use mfg::problem::{make_problem, Variant};
use mfg::reference::ReferenceEvaluator;
use mfg::trainer::{run_policy_iteration, TrainerConfig, TrainingSession};

fn main() -> mfg::Result<()> {
    let problem = make_problem::<f32>(Variant::SystemicRisk, 1)?;
    let config = TrainerConfig {
        outer_iterations: 600,
        particles: 8_000,
        batch_size: 800,
        lr_base: Some(0.35),
        test_features: 240,
        width: 48,
        depth: 4,
        seed: 2,
        ..TrainerConfig::default()
    };

    let reference =
        ReferenceEvaluator::for_problem(&make_problem::<f64>(Variant::SystemicRisk, 1)?)?;
    let evaluator = MetricsEvaluator::new(problem.clone(), Some(reference), config.seed, 128)?;
    let mut session = TrainingSession::new(problem, config)?;

    println!("{:>9} {:>12} {:>10} {:>10}", "iteration", "pe_loss", "RE1", "REinf");
    run_policy_iteration(&mut session, |s, losses| {
        if s.iteration() % 100 == 0 {
            let stats = s.ensemble().bucket_stats(s.problem())?;
            let record = evaluator.evaluate(
                s.control(),
                s.value(),
                &stats,
                s.iteration(),
                losses.pe_loss,
                losses.pi_objective,
                0.0,
            )?;
            println!(
                "{:>9} {:>12.3e} {:>10.4} {:>10.4}",
                record.iteration, record.pe_loss, record.re1, record.re_inf
            );
        }
        Ok(())
    })?;

    Ok(())
}
