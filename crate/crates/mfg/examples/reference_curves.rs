//! Prints the closed-form reference solutions: the Riccati coefficient
//! curves for each solvable variant and the residual of the reference
//! value function in the dynamic-programming equation it must satisfy.

use mfg::problem::{make_problem, Variant};
use mfg::reference::{hjb_residual_check, ReferenceEvaluator};
use mfg::rng::{CounterRng, StreamId};

fn main() -> mfg::Result<()> {
    for variant in [Variant::Lq1, Variant::Lq2, Variant::Lq3, Variant::SystemicRisk] {
        let problem = make_problem::<f64>(variant, 1)?;
        let reference = ReferenceEvaluator::for_problem(&problem)?;
        println!("== {variant} ==");
        let mut table = Vec::new();
        reference.write_table(5, &mut table)?;
        print!("{}", String::from_utf8_lossy(&table));

        if variant != Variant::SystemicRisk {
            let mut rng = CounterRng::new(9, StreamId::TestPoints, 0, 0);
            let samples: Vec<(f64, Vec<f64>)> = (0..100)
                .map(|_| (rng.uniform_in(0.0, 1.0), vec![rng.uniform_in(-1.0, 1.0)]))
                .collect();
            let residual = hjb_residual_check(&reference, &samples)?;
            println!("max dynamic-programming residual over 100 points: {residual:.3e}");
        }
        println!();
    }
    Ok(())
}
