//! Writes the bundled synthetic fixtures: model JSONs and an L2 snapshot stream.
//!
//! Usage: `cargo run --example synthetic_data -- [DIR] [MINUTES]`

use std::fs;
use std::path::PathBuf;

use lobqr::ingest::write_l2_csv;
use lobqr::rng::stream_rng;
use lobqr::synthetic;

/// 2024-01-02T10:00:00Z.
const SESSION_OPEN_NS: i64 = 1_704_189_600_000_000_000;

fn main() -> lobqr::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "crates/core/fixtures".into()));
    let minutes: f64 = args.next().map_or(15.0, |m| m.parse().expect("minutes"));
    fs::create_dir_all(&dir)?;

    for (name, model) in [
        ("model_i", synthetic::model_i()),
        ("model_iia", synthetic::model_iia()),
        ("model_iib", synthetic::model_iib()),
    ] {
        fs::write(dir.join(format!("{name}.json")), model.to_json()? + "\n")?;
    }

    let model = synthetic::model_i();
    let rules = synthetic::queue_reactive(0.7, 0.85);
    let snaps = synthetic::l2_stream(
        &model,
        &rules,
        minutes * 60.0,
        SESSION_OPEN_NS,
        &mut stream_rng(2024, 0),
    );
    let mut buf = Vec::new();
    write_l2_csv(&mut buf, &snaps, model.k(), model.tick_value(), true)?;
    fs::write(dir.join("l2_synthetic.csv"), buf)?;
    println!(
        "{} snapshots over {minutes} min written to {}",
        snaps.len(),
        dir.display()
    );
    Ok(())
}
