//! Invariant laws three ways: product form for Model I, matrix-geometric for Model II^a,
//! and Monte Carlo occupation as a cross-check.
//!
//! Usage: `cargo run --release --example invariant_laws`

use lobqr::stationary::{
    build_qbd_blocks, invariant_model_i, invariant_monte_carlo, solve_qbd, Averaging, McConfig,
    QbdOptions,
};
use lobqr::synthetic;
use lobqr::{LobState, QueueIndex};

fn main() -> lobqr::Result<()> {
    let model = synthetic::model_i();
    for d in 1..=3 {
        let law = invariant_model_i(&model, QueueIndex::new(d, 3)?, synthetic::LAW_TRUNCATION)?;
        let head: Vec<String> = law
            .probs
            .iter()
            .take(8)
            .map(|p| format!("{p:.3}"))
            .collect();
        println!(
            "Q_{d}: mean {:.2}, P(0..8) = {}",
            law.mean(0),
            head.join(" ")
        );
    }

    let iia = synthetic::model_iia();
    let blocks = build_qbd_blocks(&iia, iia.cap() + 1, &Averaging::Unweighted)?;
    let (qbd, diag) = solve_qbd(&blocks, &QbdOptions::default())?;
    println!(
        "II^a QBD: rho(R) = {:.4}, {} levels, residual {:.1e}, E[q_1] = {:.3}, E[q_2] = {:.3}",
        diag.spectral_radius,
        diag.levels,
        diag.residual,
        qbd.mean(0),
        qbd.mean(1)
    );

    let cfg = McConfig {
        dims: vec![QueueIndex::new(1, 3)?, QueueIndex::new(2, 3)?],
        max_size: 4 * iia.cap(),
        n_segments: 4,
        events_per_segment: 500_000,
        burn_in_events: 10_000,
        seed: 1,
        initial: LobState {
            q: vec![1; 6],
            p_ref: 1,
        },
    };
    let (mc, report) = invariant_monte_carlo(&iia, &cfg)?;
    println!(
        "Monte Carlo: {} events, ESS {:.0}, TV to QBD {:.4}",
        report.events,
        report.effective_sample_size,
        qbd.total_variation(&mc)
    );
    Ok(())
}
