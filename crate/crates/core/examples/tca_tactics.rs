//! Compares the fire-and-forget and pegging tactics on a scheduled parent order.
//!
//! Usage: `cargo run --release --example tca_tactics`

use lobqr::analytics::{mean_stderr, run_tactic, Benchmark, Schedule, Tactic, TcaConfig};
use lobqr::simulate::InitialBook;
use lobqr::synthetic;

fn main() -> lobqr::Result<()> {
    let model = synthetic::model_i();
    let rules = synthetic::queue_reactive(0.7, 0.85);
    let initial = InitialBook::Invariant {
        p_ref: synthetic::P_REF,
    };
    for schedule in [Schedule::S1, Schedule::S2] {
        for tactic in [Tactic::T1, Tactic::T2] {
            let cfg = TcaConfig {
                schedule,
                tactic,
                benchmark: Benchmark::Arrival,
                n_total: 60,
                m: 20,
                slice_duration: 30.0,
            };
            let reports = run_tactic(&model, Some(&rules), &initial, &cfg, 500, 17)?;
            let (slip, slip_se) =
                mean_stderr(&reports.iter().map(|r| r.slippage * 1e4).collect::<Vec<_>>());
            let (passive, passive_se) =
                mean_stderr(&reports.iter().map(|r| r.passive_rate).collect::<Vec<_>>());
            println!("{schedule:?}/{tactic:?}: slippage {slip:.2} ± {slip_se:.2} bps, passive share {passive:.3} ± {passive_se:.3}");
        }
    }
    Ok(())
}
