//! Acceptance suite: one PASS/FAIL line per criterion; exits non-zero if any fails.
//!
//! Every criterion runs on a fixed seed equal to its number, so results are reproducible.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use lobqr::analytics::{
    execution_probability, market_impact, mean_stderr, run_tactic, Benchmark, Schedule, Tactic,
    TcaConfig,
};
use lobqr::book::{RegimeThresholds, DEFAULT_CAP};
use lobqr::calibrate::{build_surface, GridSpec, SurfaceConfig};
use lobqr::estimate::{
    estimate_model_i, estimate_model_iia, estimate_model_iib, estimate_poisson_baseline,
    EstimateConfig, Estimation,
};
use lobqr::ingest::Scope;
use lobqr::pipeline::{main_with_args, RunManifest};
use lobqr::rng::stream_rng;
use lobqr::simulate::{simulate_period, InitialBook, Shift, StatsCollector};
use lobqr::stationary::{
    build_qbd_blocks, invariant_model_i, invariant_monte_carlo, solve_qbd, Averaging, McConfig,
    QbdOptions,
};
use lobqr::synthetic::{self, flat_state, P_REF, TICK};
use lobqr::{EventType, IntensityModel, LobState, ModelKind, QueueIndex, RateTable, Regime};

struct Verdict {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Verdict);

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn qi(v: i32, k: usize) -> QueueIndex {
    QueueIndex::new(v, k).unwrap()
}

/// Single-distance Model I with the same constant table on both sides.
fn constant_k1(limit: f64, cancel: f64, market: f64) -> IntensityModel {
    let t = RateTable::constant(DEFAULT_CAP, limit, cancel, market);
    IntensityModel::independent(ModelKind::ModelI, 0.01, vec![1.0], vec![t]).unwrap()
}

fn c1_birth_death() -> Verdict {
    let model = constant_k1(1.0, 1.0, 1.0);
    let law = invariant_model_i(&model, qi(1, 1), 200).unwrap();
    let exact_err = law
        .probs
        .iter()
        .enumerate()
        .map(|(n, p)| (p - 0.5f64.powi(n as i32 + 1)).abs())
        .fold(0.0, f64::max);

    let initial = LobState::new(vec![1, 1], 1).unwrap();
    let path = simulate_period(&initial, &model, 260_000.0, &mut stream_rng(1, 0)).unwrap();
    let mut occ: BTreeMap<u32, f64> = BTreeMap::new();
    let mut total = 0.0;
    path.for_each_stretch(|t0, t1, s| {
        for q in [qi(-1, 1), qi(1, 1)] {
            *occ.entry(s.get(q)).or_default() += t1 - t0;
            total += t1 - t0;
        }
    });
    let top = occ.keys().copied().max().unwrap_or(0);
    let mut tv = 0.0;
    for n in 0..=top {
        tv += (occ.get(&n).copied().unwrap_or(0.0) / total - 0.5f64.powi(n as i32 + 1)).abs();
    }
    tv += 0.5f64.powi(top as i32 + 1);
    tv *= 0.5;
    let events = path.n_orders();
    verdict(
        exact_err <= 1e-12 && tv <= 0.01 && events >= 1_000_000,
        format!("closed-form sup error {exact_err:.2e}; {events} events, occupation TV {tv:.4}"),
    )
}

/// Model II^a with `K = 2` and a light first queue.
fn small_iia() -> IntensityModel {
    let cap = DEFAULT_CAP;
    let first = RateTable::constant(cap, 0.5, 2.0, 1.0);
    let empty = RateTable::from_fn(cap, |n| (0.9, 0.8 * (1.0 - (-(n as f64) / 3.0).exp()), 0.3));
    let positive = RateTable::from_fn(cap, |n| {
        (
            0.3 + 0.6 * (-(n as f64) / 6.0).exp(),
            0.6 * (1.0 - (-(n as f64) / 4.0).exp()),
            0.0,
        )
    });
    let tables = vec![
        BTreeMap::from([(Regime::All, first)]),
        BTreeMap::from([
            (Regime::FirstEmpty, empty),
            (Regime::FirstPositive, positive),
        ]),
    ];
    IntensityModel::new(ModelKind::ModelIIa, 0.01, vec![1.0, 1.0], cap, None, tables).unwrap()
}

fn c2_qbd_dense() -> Verdict {
    const LEVELS: usize = 16;
    const PHASES: usize = 10;
    let model = small_iia();
    let tol = 1e-12;
    let blocks = build_qbd_blocks(&model, PHASES, &Averaging::Unweighted).unwrap();
    let opts = QbdOptions {
        tol,
        ..QbdOptions::default()
    };
    let (law, diag) = solve_qbd(&blocks, &opts).unwrap();

    // generator assembled state by state from the model's rate lookup
    let idx = |l: usize, j: usize| l * PHASES + j;
    let n = LEVELS * PHASES;
    let mut q = DMatrix::<f64>::zeros(n, n);
    let (q1, q2) = (qi(1, 2), qi(2, 2));
    for l in 0..LEVELS {
        for j in 0..PHASES {
            let mut s = LobState::empty(2, 1);
            s.set(q1, l as u32);
            s.set(q2, j as u32);
            let from = idx(l, j);
            let (l1, c1, m1) = model.queue_rates(&s, q1);
            let (l2, c2, m2) = model.queue_rates(&s, q2);
            let mut add = |to: usize, rate: f64| {
                q[(from, to)] += rate;
                q[(from, from)] -= rate;
            };
            if l + 1 < LEVELS {
                add(idx(l + 1, j), l1);
            }
            if l > 0 {
                add(idx(l - 1, j), c1 + m1);
            }
            add(idx(l, if j + 1 < PHASES { j + 1 } else { 0 }), l2);
            if j > 0 {
                add(idx(l, j - 1), c2 + m2);
            }
        }
    }
    let mut a = q.transpose();
    for c in 0..n {
        a[(n - 1, c)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[n - 1] = 1.0;
    let pi = a.lu().solve(&rhs).unwrap();
    let mut sup = 0.0f64;
    for l in 0..LEVELS {
        for j in 0..PHASES {
            sup = sup.max((pi[idx(l, j)] - law.prob(&[l, j])).abs());
        }
    }
    let beyond: f64 = law
        .iter()
        .filter(|(i, _)| i[0] >= LEVELS)
        .map(|(_, p)| p)
        .sum::<f64>()
        + 0.0;
    let ok = sup <= 1e-8 && beyond <= 1e-8 && diag.residual <= 10.0 * tol;
    verdict(
        ok,
        format!(
            "sup-norm {sup:.2e}, mass beyond level 15 {beyond:.1e}, residual {:.1e}",
            diag.residual
        ),
    )
}

fn c3_qbd_mc() -> Verdict {
    let model = synthetic::model_iia();
    let blocks = build_qbd_blocks(&model, model.cap() + 1, &Averaging::Unweighted).unwrap();
    let (qbd, _) = solve_qbd(&blocks, &QbdOptions::default()).unwrap();
    let n_segments = 8;
    let cfg = McConfig {
        dims: vec![qi(1, 3), qi(2, 3)],
        max_size: 4 * model.cap(),
        n_segments,
        events_per_segment: 10_000_000 / n_segments,
        burn_in_events: 10_000,
        seed: 3,
        initial: LobState {
            q: vec![1; 6],
            p_ref: 1,
        },
    };
    let (mc, report) = invariant_monte_carlo(&model, &cfg).unwrap();
    let tv = qbd.total_variation(&mc);
    verdict(tv <= 0.02, format!("{} events, TV {tv:.4}", report.events))
}

fn true_rate(
    model: &IntensityModel,
    distance: usize,
    regime: Regime,
    etype: EventType,
    size: usize,
) -> f64 {
    // departures from an empty queue and unrouted market orders never fire
    if (size == 0 && etype != EventType::LimitInsert)
        || (etype == EventType::MarketOrder && !model.market_applies(distance, regime))
    {
        return 0.0;
    }
    model
        .table(distance, regime)
        .unwrap()
        .rate(etype, size as u32)
}

fn coverage(truth: &IntensityModel, est: &Estimation) -> (usize, usize) {
    let mut n = 0;
    let mut hit = 0;
    // populated: at least one event of the cell's own type
    for c in est
        .cells
        .iter()
        .filter(|c| c.estimate.rate > 0.0 && !c.filled)
    {
        let r = true_rate(truth, c.distance, c.regime, c.etype, c.size);
        n += 1;
        let slack = 1e-12 * r.max(1.0);
        if c.estimate.ci_low - slack <= r && r <= c.estimate.ci_high + slack {
            hit += 1;
        } else if std::env::var_os("ACC_DEBUG").is_some() {
            eprintln!(
                "miss d{} {:?} n{} {:?} true {r:.4} est {:.4} [{:.4},{:.4}] obs {}",
                c.distance,
                c.regime,
                c.size,
                c.etype,
                c.estimate.rate,
                c.estimate.ci_low,
                c.estimate.ci_high,
                c.estimate.n_obs
            );
        }
    }
    (hit, n)
}

fn c4_round_trip() -> Verdict {
    let cfg = EstimateConfig::new(3, TICK, synthetic::AES.to_vec());
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, truth) in [
        synthetic::model_i(),
        synthetic::model_iia(),
        synthetic::model_iib(),
    ]
    .into_iter()
    .enumerate()
    {
        let mut rng = stream_rng(4, i as u64);
        let path = simulate_period(&flat_state(3, 5), &truth, 80_000.0, &mut rng).unwrap();
        let events = path.n_orders();
        let queue = path.event_records(Scope::Queue);
        let est = match truth.kind() {
            ModelKind::ModelI => estimate_model_i(&queue, &cfg),
            ModelKind::ModelIIa => {
                estimate_model_iia(&queue, &path.event_records(Scope::FirstTwo), &cfg)
            }
            _ => {
                let (m, l) = synthetic::IIB_THRESHOLDS;
                let th = RegimeThresholds::new(m, l).unwrap();
                estimate_model_iib(
                    &queue,
                    &path.event_records(Scope::FirstTwo),
                    &path.event_records(Scope::FirstOpposite),
                    th,
                    &cfg,
                )
            }
        }
        .unwrap();
        let (hit, n) = coverage(&truth, &est);
        let share = hit as f64 / n.max(1) as f64;
        ok &= events >= 500_000 && n > 0 && share >= 0.9;
        parts.push(format!(
            "{:?} {events} events {hit}/{n} = {:.3}",
            truth.kind(),
            share
        ));
    }
    verdict(ok, parts.join("; "))
}

fn separation(a: f64, sa: f64, b: f64, sb: f64) -> f64 {
    (b - a) / (sa * sa + sb * sb).sqrt()
}

fn c5_mechanical_volatility() -> Verdict {
    let model = synthetic::model_i();
    let rules = synthetic::queue_reactive(1.0, 0.0);
    let grid = GridSpec {
        thetas: vec![1.0],
        theta_reinits: vec![0.0, 1.0],
    };
    let cfg = SurfaceConfig {
        horizon: 3600.0,
        n_paths: 500,
        bin: 600.0,
        seed: 5,
        p_ref: P_REF,
    };
    let s = build_surface(&model, &rules, &grid, &cfg).unwrap();
    let (a, b) = (s.node(0, 0), s.node(0, 1));
    let sv = separation(a.vol, a.vol_se, b.vol, b.vol_se);
    let (ea, eb) = (a.eta.unwrap_or(f64::NAN), b.eta.unwrap_or(f64::NAN));
    let se = separation(
        ea,
        a.eta_se.unwrap_or(f64::NAN),
        eb,
        b.eta_se.unwrap_or(f64::NAN),
    );
    verdict(
        sv >= 3.0 && se >= 3.0,
        format!(
            "vol {:.3e} vs {:.3e} ({sv:.1} se), eta {ea:.3} vs {eb:.3} ({se:.1} se)",
            a.vol, b.vol
        ),
    )
}

fn c6_eta() -> Verdict {
    use rand::Rng;
    let mut rng = stream_rng(6, 0);
    let mut c = StatsCollector::new(TICK, 600.0, P_REF);
    for i in 0..100_000 {
        let direction = if rng.random::<bool>() { 1 } else { -1 };
        c.observe(
            i as f64,
            P_REF,
            Some(Shift {
                direction,
                reinit: false,
            }),
        );
    }
    let eta = c.finish(100_000.0).eta().unwrap();
    let mut h = StatsCollector::new(TICK, 600.0, P_REF);
    for (t, d) in [(1.0, 1), (2.0, 1), (3.0, -1)] {
        h.observe(
            t,
            P_REF,
            Some(Shift {
                direction: d,
                reinit: false,
            }),
        );
    }
    let hand = h.finish(4.0).eta().unwrap();
    verdict(
        (eta - 0.5).abs() <= 0.02 && hand == 0.5,
        format!("iid eta {eta:.4}, (+,+,-) eta {hand}"),
    )
}

/// Probability that a lone unit at the back of `Q_{-1}` (one unit ahead) executes before `Q_1` depletes,
/// by Gauss-Seidel first-step analysis over (ahead, behind, q_1) with `behind, q_1 ≤ 40`.
fn toy_first_step(l: f64, c: f64, m: f64) -> f64 {
    const MAX: usize = 40;
    // p[a][b][q]: a ahead, b behind, q units at Q_1; q = 0 is a loss
    let mut p = vec![vec![vec![0.0f64; MAX + 1]; MAX + 1]; 2];
    for _ in 0..100_000 {
        let mut change = 0.0f64;
        for a in 0..2 {
            for b in 0..=MAX {
                for q in 1..=MAX {
                    let n = (a + 1 + b) as f64;
                    let mut out = Vec::with_capacity(6);
                    if b < MAX {
                        out.push((l, p[a][b + 1][q]));
                    }
                    if a > 0 {
                        out.push((c * a as f64 / n, p[a - 1][b][q]));
                        out.push((m, p[a - 1][b][q]));
                    } else {
                        out.push((m, 1.0));
                    }
                    if b > 0 {
                        out.push((c * b as f64 / n, p[a][b - 1][q]));
                    }
                    if q < MAX {
                        out.push((l, p[a][b][q + 1]));
                    }
                    out.push((c + m, p[a][b][q - 1]));
                    let total: f64 = out.iter().map(|x| x.0).sum();
                    let v = out.iter().map(|x| x.0 * x.1).sum::<f64>() / total;
                    change = change.max((v - p[a][b][q]).abs());
                    p[a][b][q] = v;
                }
            }
        }
        if change < 1e-14 {
            break;
        }
    }
    p[1][0][1]
}

fn c7_execution_probability() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;

    let (mu, c) = (1.0, 0.5);
    let model = constant_k1(0.0, c, mu);
    let nu = c + mu;
    let e = execution_probability(
        &model,
        &LobState::new(vec![1, 1], 1).unwrap(),
        1,
        100_000,
        7,
    )
    .unwrap();
    let want = mu / (mu + nu);
    let z = (e.probability - want).abs() / e.stderr;
    ok &= z <= 3.0;
    parts.push(format!(
        "competing {:.4} vs {want:.4} ({z:.1} se)",
        e.probability
    ));

    let (l, c, m) = (0.3, 0.4, 0.5);
    let oracle = toy_first_step(l, c, m);
    let model = constant_k1(l, c, m);
    let e = execution_probability(
        &model,
        &LobState::new(vec![2, 1], 1).unwrap(),
        1,
        10_000_000,
        7,
    )
    .unwrap();
    let diff = (e.probability - oracle).abs();
    ok &= diff < 5e-4;
    parts.push(format!("toy {:.4} vs {oracle:.4}", e.probability));

    let fixture = synthetic::model_i();
    let cfg = EstimateConfig::new(3, TICK, synthetic::AES.to_vec());
    let path = simulate_period(
        &flat_state(3, 5),
        &fixture,
        200_000.0,
        &mut stream_rng(7, 1),
    )
    .unwrap();
    let (poisson, _) = estimate_poisson_baseline(&path.event_records(Scope::Queue), &cfg).unwrap();
    let mut higher = 0;
    for s in 1..=10u32 {
        let state = flat_state(3, s);
        let pf = execution_probability(&fixture, &state, 1, 20_000, 70 + s as u64)
            .unwrap()
            .probability;
        let pp = execution_probability(&poisson, &state, 1, 20_000, 70 + s as u64)
            .unwrap()
            .probability;
        if pp > pf {
            higher += 1;
        }
    }
    ok &= higher == 10;
    parts.push(format!("poisson above fixture at {higher}/10 sizes"));
    verdict(ok, parts.join("; "))
}

fn c8_tca() -> Verdict {
    let model = synthetic::model_i();
    let rules = synthetic::queue_reactive(0.7, 0.85);
    let initial = InitialBook::Invariant { p_ref: P_REF };
    let mut exact = true;
    let mut runs = 0;
    for schedule in [Schedule::S1, Schedule::S2] {
        for tactic in [Tactic::T1, Tactic::T2] {
            for benchmark in [Benchmark::Arrival, Benchmark::Vwap] {
                let cfg = TcaConfig {
                    schedule,
                    tactic,
                    benchmark,
                    n_total: 37,
                    m: 5,
                    slice_duration: 60.0,
                };
                for r in run_tactic(&model, Some(&rules), &initial, &cfg, 100, 8).unwrap() {
                    exact &= r.executed_shares() == r.total_shares;
                    runs += 1;
                }
            }
        }
    }

    let frozen = IntensityModel::independent(
        ModelKind::ModelI,
        TICK,
        synthetic::AES.to_vec(),
        vec![RateTable::zeros(DEFAULT_CAP); 3],
    )
    .unwrap();
    let book = InitialBook::Fixed(flat_state(3, 50));
    let cfg = TcaConfig {
        schedule: Schedule::S1,
        tactic: Tactic::T1,
        benchmark: Benchmark::Arrival,
        n_total: 10,
        m: 1,
        slice_duration: 60.0,
    };
    let r = &run_tactic(&frozen, None, &book, &cfg, 1, 8).unwrap()[0];
    let arrival = P_REF as f64 * TICK / 2.0;
    let frozen_err = (r.slippage - (-(TICK / 2.0) / arrival)).abs();

    let cfg = |tactic| TcaConfig {
        schedule: Schedule::S1,
        tactic,
        benchmark: Benchmark::Arrival,
        n_total: 60,
        m: 20,
        slice_duration: 30.0,
    };
    let rate = |tactic| {
        let reports = run_tactic(&model, Some(&rules), &initial, &cfg(tactic), 2000, 8).unwrap();
        mean_stderr(&reports.iter().map(|r| r.passive_rate).collect::<Vec<_>>())
    };
    let ((p1, s1), (p2, s2)) = (rate(Tactic::T1), rate(Tactic::T2));
    let sep = separation(p1, s1, p2, s2);
    verdict(
        exact && frozen_err <= 1e-12 && sep >= 3.0,
        format!("{runs} runs filled exactly: {exact}; frozen-book error {frozen_err:.1e}; passive T1 {p1:.3} vs T2 {p2:.3} ({sep:.1} se)"),
    )
}

fn c9_impact() -> Verdict {
    let model = synthetic::model_i();
    let rules = synthetic::queue_reactive(0.7, 0.85);
    let ns = [0u64, 1, 5, 10, 20, 40, 60];
    let times = [60.0, 300.0, 600.0];
    let pts = market_impact(
        &model,
        Some(&rules),
        &InitialBook::Invariant { p_ref: P_REF },
        Tactic::T1,
        &ns,
        &times,
        500,
        9,
    )
    .unwrap();
    let at = |t: usize, n: usize| pts[t * ns.len() + n];
    let mut zero = true;
    let (mut mono, mut concave) = (0, 0);
    let (mut mono_n, mut concave_n) = (0, 0);
    for t in 0..times.len() {
        zero &= at(t, 0).mi == 0.0;
        for i in 0..ns.len() - 1 {
            let (a, b) = (at(t, i), at(t, i + 1));
            mono_n += 1;
            if b.mi >= a.mi - 2.0 * (a.mi_se.powi(2) + b.mi_se.powi(2)).sqrt() {
                mono += 1;
            }
        }
        for i in 1..ns.len() - 2 {
            let (a, b, c) = (at(t, i), at(t, i + 1), at(t, i + 2));
            let (h1, h2) = ((ns[i + 1] - ns[i]) as f64, (ns[i + 2] - ns[i + 1]) as f64);
            let d2 = (c.mi - b.mi) / h2 - (b.mi - a.mi) / h1;
            let se = ((a.mi_se / h1).powi(2)
                + (b.mi_se * (1.0 / h1 + 1.0 / h2)).powi(2)
                + (c.mi_se / h2).powi(2))
            .sqrt();
            concave_n += 1;
            if d2 <= 2.0 * se {
                concave += 1;
            }
        }
    }
    verdict(
        zero && mono == mono_n && concave == concave_n,
        format!(
            "MI(t,0) = 0: {zero}; nondecreasing {mono}/{mono_n}; concave {concave}/{concave_n}"
        ),
    )
}

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("lobqr").chain(args.iter().copied()))
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

fn c10_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    let l2 = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join("l2_synthetic.csv");
    let events = p("events");
    let model = format!("{}/model.json", p("model"));
    let steps: Vec<Vec<String>> = vec![
        vec![
            "ingest".into(),
            "--in".into(),
            l2.to_string_lossy().into_owned(),
            "--k".into(),
            "3".into(),
            "--tick".into(),
            "0.005".into(),
        ],
        vec![
            "estimate".into(),
            "--events".into(),
            events.clone(),
            "--model".into(),
            "i".into(),
        ],
        vec![
            "invariant".into(),
            "--model".into(),
            model.clone(),
            "--method".into(),
            "closed".into(),
        ],
        vec![
            "simulate".into(),
            "--model".into(),
            model.clone(),
            "--n-paths".into(),
            "4".into(),
            "--horizon-s".into(),
            "1200".into(),
            "--write-paths".into(),
        ],
        vec![
            "calibrate".into(),
            "--model".into(),
            model.clone(),
            "--grid".into(),
            "3x3".into(),
            "--horizon-s".into(),
            "1200".into(),
            "--n-paths".into(),
            "4".into(),
        ],
        vec![
            "execprob".into(),
            "--model".into(),
            model.clone(),
            "--sizes".into(),
            "1,3,6".into(),
            "--n-paths".into(),
            "2000".into(),
        ],
        vec![
            "tca".into(),
            "--model".into(),
            model.clone(),
            "--n-total".into(),
            "20".into(),
            "--slices".into(),
            "4".into(),
            "--slice-s".into(),
            "60".into(),
            "--n-paths".into(),
            "50".into(),
        ],
        vec![
            "impact".into(),
            "--model".into(),
            model.clone(),
            "--n".into(),
            "0,5".into(),
            "--t".into(),
            "60,300".into(),
            "--n-paths".into(),
            "50".into(),
        ],
    ];
    let outs = [
        "events", "model", "inv", "sim", "cal", "exec", "tca", "impact",
    ];
    let mut same = 0;
    let mut failures = Vec::new();
    for (step, out) in steps.iter().zip(outs) {
        let first = p(out);
        let mut args: Vec<&str> = step.iter().map(String::as_str).collect();
        args.extend(["--out", &first]);
        if run(&args) != 0 {
            failures.push(format!("{} failed", step[0]));
            continue;
        }
        let manifest = format!("{first}/manifest.json");
        let again = p(&format!("{out}_again"));
        let code = run(&["--config", &manifest, &step[0], "--out", &again]);
        let (m1, m2) = (
            RunManifest::read(Path::new(&manifest)).unwrap(),
            RunManifest::read(&Path::new(&again).join("manifest.json")),
        );
        let seeds = m2.is_ok_and(|m| m.seed == m1.seed);
        if code == 0 && seeds && csvs(Path::new(&first)) == csvs(Path::new(&again)) {
            same += 1;
        } else {
            failures.push(format!("{} rerun differs", step[0]));
        }
    }
    verdict(
        failures.is_empty(),
        format!(
            "{same}/{} subcommands byte-identical{}",
            steps.len(),
            if failures.is_empty() {
                String::new()
            } else {
                format!(" ({})", failures.join(", "))
            }
        ),
    )
}

fn main() {
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria: [Criterion; 10] = [
        ("1 birth-death closed form vs simulation", c1_birth_death),
        ("2 QBD vs dense solve", c2_qbd_dense),
        ("3 QBD vs Monte Carlo", c3_qbd_mc),
        ("4 estimator round trip", c4_round_trip),
        (
            "5 mechanical volatility direction",
            c5_mechanical_volatility,
        ),
        ("6 mean reversion ratio", c6_eta),
        ("7 execution probability oracles", c7_execution_probability),
        ("8 TCA engine", c8_tca),
        ("9 market impact shape", c9_impact),
        ("10 manifest reruns", c10_determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        let start = Instant::now();
        let v = f();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {name}: {status} [{:.1}s] {}",
            start.elapsed().as_secs_f64(),
            v.detail
        );
        failed += usize::from(!v.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
