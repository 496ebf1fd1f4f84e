//! Market impact of a single slice as a function of its size and of the elapsed time.
//!
//! Usage: `cargo run --release --example market_impact`

use lobqr::analytics::{market_impact, Tactic};
use lobqr::simulate::InitialBook;
use lobqr::synthetic;

fn main() -> lobqr::Result<()> {
    let model = synthetic::model_i();
    let rules = synthetic::queue_reactive(0.7, 0.85);
    let ns = [0, 1, 5, 10, 20, 40, 60];
    let times = [60.0, 300.0, 600.0];
    let points = market_impact(
        &model,
        Some(&rules),
        &InitialBook::Invariant {
            p_ref: synthetic::P_REF,
        },
        Tactic::T1,
        &ns,
        &times,
        300,
        23,
    )?;
    print!("{:>6}", "n\\t");
    for t in times {
        print!("{t:>16}");
    }
    println!();
    for (i, n) in ns.iter().enumerate() {
        print!("{n:>6}");
        for j in 0..times.len() {
            let p = points[j * ns.len() + i];
            print!("{:>9.2} ± {:.2}", p.mi * 1e4, p.mi_se * 1e4);
        }
        println!();
    }
    println!("impact in bps of the opening midprice");
    Ok(())
}
