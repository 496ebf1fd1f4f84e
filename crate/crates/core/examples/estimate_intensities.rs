//! Fits Model I and Model II^a to events reconstructed from the bundled L2 stream.
//!
//! Usage: `cargo run --example estimate_intensities`

use std::fs::File;
use std::path::PathBuf;

use lobqr::estimate::{estimate_model_i, estimate_model_iia, EstimateConfig};
use lobqr::ingest::{compute_aes, read_l2_csv, reconstruct_events, Scope};
use lobqr::{EventType, Regime};

fn main() -> lobqr::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/l2_synthetic.csv");
    let (k, tick) = (3, 0.005);
    let snapshots = read_l2_csv(File::open(path)?, k, tick)?;
    let aes = compute_aes(&snapshots, k)?;
    let (queue, _, _) = reconstruct_events(&snapshots, &aes, k, Scope::Queue)?;
    let (pair, _, _) = reconstruct_events(&snapshots, &aes, k, Scope::FirstTwo)?;
    let cfg = EstimateConfig::new(k, tick, aes);

    let fit = estimate_model_i(&queue, &cfg)?;
    println!("Model I, first limit (size: limit / cancel / market, 95% CI on cancel)");
    for n in 0..=10u32 {
        let cell = |e: EventType| {
            fit.cells
                .iter()
                .find(|c| c.distance == 1 && c.size == n as usize && c.etype == e)
                .map(|c| c.estimate)
        };
        let t = fit.model.table(1, Regime::All)?;
        let ci = cell(EventType::Cancel).map_or(String::new(), |e| {
            format!("[{:.3}, {:.3}] n={}", e.ci_low, e.ci_high, e.n_obs)
        });
        println!(
            "  {n:>2}: {:.3} / {:.3} / {:.3}  {ci}",
            t.limit_at(n),
            t.cancel_at(n),
            t.market_at(n)
        );
    }
    println!(
        "filled cells {}, rejected events {}",
        fit.report.filled_cells, fit.report.rejected_events
    );

    let fit = estimate_model_iia(&queue, &pair, &cfg)?;
    for regime in [Regime::FirstEmpty, Regime::FirstPositive] {
        let t = fit.model.table(2, regime)?;
        println!(
            "Model II^a second limit, {}: limit at 0..5 {:.3?}",
            regime.key(),
            &t.limit[..6]
        );
    }
    Ok(())
}
