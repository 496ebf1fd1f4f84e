//! Simulates queue-reactive paths and reports per-path order counts, volatility and
//! the mean reversion ratio; the first path's log goes to `path.csv` if a directory is given.
//!
//! Usage: `cargo run --release --example simulate_paths -- [OUT_DIR]`

use std::fs::File;
use std::path::PathBuf;

use lobqr::rng::stream_rng;
use lobqr::simulate::{path_stats, simulate_queue_reactive};
use lobqr::synthetic;

fn main() -> lobqr::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from);
    let model = synthetic::model_i();
    let rules = synthetic::queue_reactive(0.7, 0.85);
    for i in 0..5 {
        let mut rng = stream_rng(42, i);
        let initial = rules.draw_state(model.k(), synthetic::P_REF, &mut rng);
        let path = simulate_queue_reactive(&initial, &model, &rules, 6.5 * 3600.0, &mut rng)?;
        let stats = path_stats(&path, 600.0);
        let eta = stats.eta().map_or("n/a".to_string(), |e| format!("{e:.3}"));
        println!(
            "path {i}: {} orders, {} price moves, 10-min vol {:.2e}, eta {eta}, final p_ref {}",
            path.n_orders(),
            stats.n_moves,
            stats.volatility(),
            path.terminal.p_ref
        );
        if let (0, Some(dir)) = (i, &out) {
            std::fs::create_dir_all(dir)?;
            path.write_csv(File::create(dir.join("path.csv"))?)?;
        }
    }
    Ok(())
}
