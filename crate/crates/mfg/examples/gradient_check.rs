//! Cross-checks every reverse-mode gradient in the trainer against
//! central finite differences in 64-bit arithmetic: the value-network
//! gradient of the two-batch evaluation objective, the control-network
//! gradient of the improvement objective, and the test-network gradient
//! of the adversarial objective.

use mfg::measure::ParticleEnsemble;
use mfg::net::{ControlNet, TestNet, ValueNet};
use mfg::problem::{make_problem, Variant};
use mfg::rng::{CounterRng, StreamId};
use mfg::trainer::{TrainerConfig, TrainingSession};
use ndarray::Array2;

fn main() -> mfg::Result<()> {
    let problem = make_problem::<f64>(Variant::Lq1, 1)?;
    let config = TrainerConfig {
        outer_iterations: 1,
        particles: 64,
        batch_size: 16,
        test_features: 40,
        width: 12,
        depth: 3,
        seed: 11,
        ..TrainerConfig::default()
    };

    let mut rng = CounterRng::new(11, StreamId::TestPoints, 0, 0);
    let z = Array2::from_shape_fn((64, 1), |_| rng.uniform_in(-1.0, 1.0));
    let mut times = vec![0u32; 64];
    for (m, slot) in times.iter_mut().enumerate() {
        *slot = if m % 8 == 7 { 100 } else { (m as u32 * 13) % 99 };
    }
    let ensemble = ParticleEnsemble::from_parts(problem.n_steps(), 11, 0, times, z)?;
    let control = ControlNet::for_problem(&problem, config.width, config.depth, config.seed)?;
    let value = ValueNet::for_problem(&problem, config.width, config.depth, config.seed)?;
    let test = TestNet::for_problem(&problem, config.test_features, 10.0, config.seed)?;
    let mut session = TrainingSession::from_parts(problem, config, control, value, test, ensemble)?;

    let a1: Vec<u32> = (0..16).collect();
    let a2: Vec<u32> = (16..32).collect();
    let fb = session.freeze_batch(&a1, &a2, 0)?;
    let eps = 1e-6;

    let value_grads = session.pe_gradient(&fb)?;
    let mut worst = 0.0f64;
    for k in (0..session.value().param_count()).step_by(7) {
        let base = session.value().inner().flat_get(k);
        session.value_mut().inner_mut().flat_set(k, base + eps);
        let up = session.pe_objective(&fb)?;
        session.value_mut().inner_mut().flat_set(k, base - eps);
        let down = session.pe_objective(&fb)?;
        session.value_mut().inner_mut().flat_set(k, base);
        let fd = (up - down) / (2.0 * eps);
        worst = worst.max(relative_gap(value_grads.flat_get(k), fd));
    }
    println!("evaluation objective, value parameters:    max gap {worst:.2e}");
    assert!(worst <= 1e-3);

    let control_grads = session.pi_gradient(&fb)?;
    let mut worst = 0.0f64;
    for k in (0..session.control().param_count()).step_by(5) {
        let base = session.control().inner().flat_get(k);
        session.control_mut().inner_mut().flat_set(k, base + eps);
        let up = session.pi_objective(&fb)?;
        session.control_mut().inner_mut().flat_set(k, base - eps);
        let down = session.pi_objective(&fb)?;
        session.control_mut().inner_mut().flat_set(k, base);
        let fd = (up - down) / (2.0 * eps);
        worst = worst.max(relative_gap(control_grads.flat_get(k), fd));
    }
    println!("improvement objective, control parameters: max gap {worst:.2e}");
    assert!(worst <= 1e-3);

    let test_grads = session.adversarial_gradient(&fb)?;
    let mut worst = 0.0f64;
    for k in (0..session.test_net().param_count()).step_by(3) {
        let base = session.test_net().flat_get(k);
        session.test_net_mut().flat_set(k, base + eps);
        let up = session.pe_objective(&fb)?;
        session.test_net_mut().flat_set(k, base - eps);
        let down = session.pe_objective(&fb)?;
        session.test_net_mut().flat_set(k, base);
        let fd = (up - down) / (2.0 * eps);
        worst = worst.max(relative_gap(test_grads.flat_get(k), fd));
    }
    println!("adversarial objective, test parameters:    max gap {worst:.2e}");
    assert!(worst <= 1e-3);

    println!("all reverse-mode gradients agree with finite differences");
    Ok(())
}

fn relative_gap(analytic: f64, fd: f64) -> f64 {
    let scale = analytic.abs().max(fd.abs()).max(1e-10);
    (analytic - fd).abs() / scale
}
