//! Drives the command-line pipeline in-process: ingest, estimate, simulate, then a replay
//! from the recorded manifest whose outputs must match byte for byte.
//!
//! Usage: `cargo run --release --example run_manifest -- [WORK_DIR]`

use std::fs;
use std::path::PathBuf;

use lobqr::pipeline::{main_with_args, RunManifest};

fn run(args: &[&str]) {
    let code = main_with_args(std::iter::once("lobqr").chain(args.iter().copied()));
    assert_eq!(code, 0, "lobqr {} exited with {code}", args.join(" "));
}

fn main() -> lobqr::Result<()> {
    let work = std::env::args().nth(1).map_or_else(
        || std::env::temp_dir().join("lobqr_run_manifest"),
        PathBuf::from,
    );
    let p = |name: &str| work.join(name).to_string_lossy().into_owned();
    let l2 = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/l2_synthetic.csv");

    run(&[
        "ingest",
        "--in",
        l2.to_str().unwrap(),
        "--k",
        "3",
        "--tick",
        "0.005",
        "--out",
        &p("events"),
    ]);
    run(&[
        "estimate",
        "--events",
        &p("events"),
        "--model",
        "i",
        "--out",
        &p("model"),
    ]);
    let model = format!("{}/model.json", p("model"));
    run(&[
        "simulate",
        "--model",
        &model,
        "--n-paths",
        "8",
        "--horizon-s",
        "3600",
        "--out",
        &p("sim"),
    ]);

    let manifest = format!("{}/manifest.json", p("sim"));
    let m = RunManifest::read(manifest.as_ref())?;
    println!(
        "simulate ran with seed {} ({}) on {} threads",
        m.seed, m.seed_source, m.threads
    );
    run(&["--config", &manifest, "simulate", "--out", &p("sim_replay")]);
    let a = fs::read(work.join("sim/stats.csv"))?;
    let b = fs::read(work.join("sim_replay/stats.csv"))?;
    println!("replay identical: {}", a == b);
    print!("{}", String::from_utf8_lossy(&a));
    Ok(())
}
