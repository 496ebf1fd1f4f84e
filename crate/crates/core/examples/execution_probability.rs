//! Probability that a one-unit buy at the back of the best bid fills before the best ask
//! depletes, under the concave fixture and under a linear-cancellation Poisson fit.
//!
//! Usage: `cargo run --release --example execution_probability`

use lobqr::analytics::execution_probability;
use lobqr::estimate::{estimate_poisson_baseline, EstimateConfig};
use lobqr::ingest::Scope;
use lobqr::rng::stream_rng;
use lobqr::simulate::simulate_period;
use lobqr::synthetic::{self, flat_state};

fn main() -> lobqr::Result<()> {
    let fixture = synthetic::model_i();
    let path = simulate_period(&flat_state(3, 5), &fixture, 50_000.0, &mut stream_rng(5, 0))?;
    let cfg = EstimateConfig::new(3, synthetic::TICK, synthetic::AES.to_vec());
    let (poisson, _) = estimate_poisson_baseline(&path.event_records(Scope::Queue), &cfg)?;
    println!("{:>4} {:>16} {:>16}", "size", "fixture", "poisson");
    for s in 1..=10 {
        // both queues hold `s` units; one bid unit is the agent's
        let state = flat_state(3, s);
        let a = execution_probability(&fixture, &state, 1, 5_000, 11)?;
        let b = execution_probability(&poisson, &state, 1, 5_000, 11)?;
        println!(
            "{s:>4} {:>9.3} ± {:.3} {:>9.3} ± {:.3}",
            a.probability, a.stderr, b.probability, b.stderr
        );
    }
    Ok(())
}
