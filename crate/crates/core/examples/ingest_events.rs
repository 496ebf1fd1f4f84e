//! Reconstructs order-book events from the bundled L2 stream and prints QC counts.
//!
//! Usage: `cargo run --example ingest_events -- [L2_CSV]`

use std::fs::File;
use std::path::PathBuf;

use lobqr::ingest::{compute_aes, read_l2_csv, reconstruct_events, Scope};

fn main() -> lobqr::Result<()> {
    let path = std::env::args().nth(1).map_or_else(
        || PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/l2_synthetic.csv"),
        PathBuf::from,
    );
    let k = 3;
    let snapshots = read_l2_csv(File::open(&path)?, k, 0.005)?;
    let aes = compute_aes(&snapshots, k)?;
    println!("{} snapshots, AES by distance {:?}", snapshots.len(), aes);
    for scope in [Scope::Queue, Scope::FirstTwo, Scope::FirstOpposite] {
        let (records, qc, pref) = reconstruct_events(&snapshots, &aes, k, scope)?;
        println!(
            "{:>9}: {} events over {} epochs, {} reference-price moves",
            scope.key(),
            records.len(),
            qc.epochs,
            pref.len().saturating_sub(1)
        );
        if scope == Scope::Queue {
            println!(
                "           skipped snapshots {}, multi-queue diffs {}, unknown levels {}",
                qc.crossed_or_one_sided, qc.multi_queue_diffs, qc.unknown_level_changes
            );
            for r in records.iter().take(5) {
                println!(
                    "           t={:.6} dt={:.6} {} {} q_before={}",
                    r.ts,
                    r.dt,
                    r.queue,
                    r.etype.code(),
                    r.q_before
                );
            }
        }
    }
    Ok(())
}
