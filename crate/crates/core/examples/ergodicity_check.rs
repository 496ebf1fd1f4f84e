//! Checks the drift and bounded-inflow conditions on the synthetic fixtures and on a
//! model whose insertions outrun departures.
//!
//! Usage: `cargo run --example ergodicity_check`

use lobqr::book::{check_ergodicity_assumptions, minimal_c_bound, DEFAULT_CAP};
use lobqr::synthetic;
use lobqr::{IntensityModel, ModelKind, RateTable};

fn main() -> lobqr::Result<()> {
    let explosive = IntensityModel::independent(
        ModelKind::ModelI,
        0.01,
        vec![100.0],
        vec![RateTable::constant(DEFAULT_CAP, 2.0, 1.0, 0.5)],
    )?;
    for (name, model) in [
        ("model I", synthetic::model_i()),
        ("model II^a", synthetic::model_iia()),
        ("model II^b", synthetic::model_iib()),
        ("explosive", explosive),
    ] {
        match minimal_c_bound(&model) {
            Some(c) => {
                let r = check_ergodicity_assumptions(&model, c);
                println!(
                    "{name:>11}: ergodic, C = {c}, drift margin {:.3}, inflow bound {:.3}",
                    r.delta, r.h
                );
            }
            None => {
                let r = check_ergodicity_assumptions(&model, model.cap());
                println!(
                    "{name:>11}: drift condition fails, margin {:.3} at the cap",
                    r.delta
                );
            }
        }
    }
    Ok(())
}
