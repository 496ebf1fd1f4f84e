//! Builds a coarse `(θ, θ_reinit)` surface of volatility and mean reversion, then inverts
//! it for target values.
//!
//! Usage: `cargo run --release --example calibrate_surface -- [TARGET_VOL] [TARGET_ETA]`

use lobqr::calibrate::{build_surface, invert, GridSpec, SurfaceConfig};
use lobqr::synthetic;

fn main() -> lobqr::Result<()> {
    let mut args = std::env::args()
        .skip(1)
        .map(|a| a.parse::<f64>().expect("number"));
    let model = synthetic::model_i();
    let rules = synthetic::queue_reactive(0.7, 0.85);
    let grid = GridSpec::uniform(5, 5)?;
    let cfg = SurfaceConfig {
        horizon: 6.5 * 3600.0,
        n_paths: 20,
        bin: 600.0,
        seed: 3,
        p_ref: synthetic::P_REF,
    };
    let surface = build_surface(&model, &rules, &grid, &cfg)?;
    println!(
        "{:>6} {:>6} {:>10} {:>7} {:>8}",
        "theta", "reinit", "vol", "eta", "moves"
    );
    for n in &surface.nodes {
        let eta = n.eta.map_or("n/a".to_string(), |e| format!("{e:.3}"));
        println!(
            "{:>6.2} {:>6.2} {:>10.3e} {:>7} {:>8.1}",
            n.theta, n.theta_reinit, n.vol, eta, n.mean_moves
        );
    }
    let mid = surface.node(2, 2);
    let target_vol = args.next().unwrap_or(mid.vol);
    let target_eta = args.next().unwrap_or(mid.eta.unwrap_or(0.3));
    let inv = invert(&surface, target_vol, target_eta)?;
    println!("targets ({target_vol:.3e}, {target_eta:.3}) -> theta {:.3}, theta_reinit {:.3}, residual {:.1e}", inv.theta, inv.theta_reinit, inv.residual);
    if let Some(w) = inv.warning {
        println!("warning: {w}");
    }
    Ok(())
}
