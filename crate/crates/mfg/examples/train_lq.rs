//! Trains the linear-quadratic benchmark at reduced scale and scores the
//! learned value and control against the closed-form reference.
//!
//! The run is sized for a coffee break rather than a paper table. The
//! particle measure starts deliberately far from the equilibrium, and a
//! full flush of that bias through the terminal resets takes about
//! `steps * particles / (2 * batch_size)` iterations, so the iteration
//! count buys three flushes plus refinement.

use mfg::metrics::MetricsEvaluator;
use mfg::problem::{make_problem, Variant};
use mfg::reference::ReferenceEvaluator;
use mfg::trainer::{run_policy_iteration, TrainerConfig, TrainingSession};

fn main() -> mfg::Result<()> {
    let problem = make_problem::<f32>(Variant::Lq1, 1)?;
    let config = TrainerConfig {
        outer_iterations: 1_500,
        particles: 8_000,
        batch_size: 800,
        lr_base: Some(0.35),
        test_features: 240,
        width: 48,
        depth: 4,
        seed: 1,
        ..TrainerConfig::default()
    };

    let reference = ReferenceEvaluator::for_problem(&make_problem::<f64>(Variant::Lq1, 1)?)?;
    let evaluator = MetricsEvaluator::new(problem.clone(), Some(reference), config.seed, 128)?;
    let mut session = TrainingSession::new(problem, config)?;

    println!("reference optimum J* = {:.6}", evaluator.j_star());
    println!("{:>9} {:>12} {:>10} {:>10} {:>10}", "iteration", "pe_loss", "RE1", "REinf", "RC");

    let report = |session: &TrainingSession<f32>, pe_loss: f64, pi: f64| -> mfg::Result<()> {
        let stats = session.ensemble().bucket_stats(session.problem())?;
        let record = evaluator.evaluate(
            session.control(),
            session.value(),
            &stats,
            session.iteration(),
            pe_loss,
            pi,
            0.0,
        )?;
        println!(
            "{:>9} {:>12.3e} {:>10.4} {:>10.4} {:>10.4}",
            record.iteration, record.pe_loss, record.re1, record.re_inf, record.rc
        );
        Ok(())
    };

    let first = session.current_losses()?;
    report(&session, first.pe_loss, first.pi_objective)?;
    run_policy_iteration(&mut session, |s, losses| {
        if s.iteration() % 150 == 0 {
            report(s, losses.pe_loss, losses.pi_objective)?;
        }
        Ok(())
    })?;

    Ok(())
}
