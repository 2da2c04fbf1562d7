//! Trains the obstacle-avoidance problem and writes particle snapshots.
//!
//! The barrier variant has state-dependent noise and a repulsion kernel,
//! so the interesting output is not a scalar error but the shape of the
//! particle cloud steering around the obstacle. Each snapshot is a CSV
//! table of (iteration, time index, position) rows, ready for any plotting
//! tool.

use std::fs::File;
use std::io::BufWriter;

use mfg::problem::{make_problem, Variant};
use mfg::trainer::{run_policy_iteration, TrainerConfig, TrainingSession};

fn main() -> mfg::Result<()> {
    let problem = make_problem::<f32>(Variant::Barrier, 2)?;
    let config = TrainerConfig {
        outer_iterations: 120,
        particles: 6_000,
        batch_size: 600,
        lr_base: Some(0.3),
        test_features: 240,
        width: 48,
        depth: 4,
        seed: 4,
        ..TrainerConfig::default()
    };
    let mut session = TrainingSession::new(problem, config)?;

    let dir = std::env::temp_dir().join("mfg_barrier_snapshots");
    std::fs::create_dir_all(&dir)?;

    let save = |s: &TrainingSession<f32>| -> mfg::Result<()> {
        let path = dir.join(format!("snapshot_{:04}.csv", s.iteration()));
        let mut out = BufWriter::new(File::create(&path)?);
        s.ensemble().write_snapshot(&mut out)?;
        println!("wrote {}", path.display());
        Ok(())
    };

    save(&session)?;
    run_policy_iteration(&mut session, |s, losses| {
        if s.iteration() % 40 == 0 {
            println!(
                "iteration {:>4}: pe_loss = {:.3e}, pi_objective = {:.3e}",
                s.iteration(),
                losses.pe_loss,
                losses.pi_objective
            );
            save(s)?;
        }
        Ok(())
    })?;

    Ok(())
}
