//! Synthetic intensity fixtures and L2 streams generated from them.
//!
//! The shapes mimic a large-tick stock: insertion rates that fall with queue
//! size, cancellation rates that rise and saturate (concave), market orders
//! concentrated on small first queues.

use std::collections::BTreeMap;

use rand::Rng;

use crate::book::{
    EventType, IntensityModel, LobState, ModelKind, QueueIndex, RateTable, Regime,
    RegimeThresholds, SizeClass, DEFAULT_CAP,
};
use crate::error::Result;
use crate::ingest::{L2Snapshot, Level};
use crate::simulate::{unit_shares, Market, QueueReactive};
use crate::stationary::{product_form_laws, StationaryLaw};

pub const TICK: f64 = 0.005;
/// 15.0025 in half-ticks of 0.005.
pub const P_REF: i64 = 6001;
pub const AES: [f64; 3] = [836.0, 1068.0, 1069.0];
/// Truncation used for fixture invariant laws.
pub const LAW_TRUNCATION: usize = 2000;

fn e(x: f64) -> f64 {
    (-x).exp()
}

pub fn first_limit_table() -> RateTable {
    RateTable::from_fn(DEFAULT_CAP, |n| {
        let x = n as f64;
        let l = if n == 0 { 0.4 } else { 0.8 };
        (l, 1.2 * (1.0 - e(x / 5.0)), 0.5 * e(x / 4.0) + 0.05)
    })
}

pub fn second_limit_table() -> RateTable {
    RateTable::from_fn(DEFAULT_CAP, |n| {
        let x = n as f64;
        (
            0.5 + 0.4 * e(x / 3.0),
            0.7 * (1.0 - e(x / 3.0)),
            0.05 * e(x / 4.0),
        )
    })
}

pub fn third_limit_table() -> RateTable {
    RateTable::from_fn(DEFAULT_CAP, |n| {
        let x = n as f64;
        (
            0.5 + 0.4 * e(x / 3.0),
            0.7 * (1.0 - e(x / 3.0)),
            0.01 * e(x / 4.0),
        )
    })
}

/// Independent queues, `K = 3`.
pub fn model_i() -> IntensityModel {
    IntensityModel::independent(
        ModelKind::ModelI,
        TICK,
        AES.to_vec(),
        vec![
            first_limit_table(),
            second_limit_table(),
            third_limit_table(),
        ],
    )
    .expect("fixture is valid")
}

/// Second limits switch regime with the first limit; first limits have constant rates
/// `λ_1 = 1`, `μ_1 = 2.5` so that averaged and actual first-limit flows coincide.
pub fn model_iia() -> IntensityModel {
    let cap = DEFAULT_CAP;
    let first = RateTable::from_fn(cap, |_| (1.0, 1.5, 1.0));
    let empty = RateTable::from_fn(cap, |n| {
        let x = n as f64;
        (0.9, 0.8 * (1.0 - e(x / 3.0)), 0.3)
    });
    let positive = RateTable::from_fn(cap, |n| {
        let x = n as f64;
        (0.3 + 0.6 * e(x / 6.0), 0.6 * (1.0 - e(x / 4.0)), 0.0)
    });
    let third = RateTable::from_fn(cap, |n| {
        let x = n as f64;
        (0.5 + 0.4 * e(x / 3.0), 0.7 * (1.0 - e(x / 3.0)), 0.0)
    });
    let tables = vec![
        BTreeMap::from([(Regime::All, first)]),
        BTreeMap::from([
            (Regime::FirstEmpty, empty),
            (Regime::FirstPositive, positive),
        ]),
        BTreeMap::from([(Regime::All, third)]),
    ];
    IntensityModel::new(ModelKind::ModelIIa, TICK, AES.to_vec(), cap, None, tables)
        .expect("fixture is valid")
}

pub const IIB_THRESHOLDS: (u32, u32) = (3, 7);

/// First limits react to the opposite first limit; second limits as in [`model_iia`].
pub fn model_iib() -> IntensityModel {
    let cap = DEFAULT_CAP;
    let base = first_limit_table();
    // opposite empty: refill own side faster; opposite large: thin own side
    let scale = |c: SizeClass| match c {
        SizeClass::Empty => (1.3, 1.2, 0.6),
        SizeClass::Small => (1.1, 1.1, 0.8),
        SizeClass::Usual => (1.0, 1.0, 1.0),
        SizeClass::Large => (0.8, 1.2, 1.3),
    };
    let mut tables = vec![BTreeMap::new(), BTreeMap::new(), BTreeMap::new()];
    for c in SizeClass::ALL {
        let (sl, sc, sm) = scale(c);
        let t = RateTable::from_fn(cap, |n| {
            (sl * base.limit[n], sc * base.cancel[n], sm * base.market[n])
        });
        tables[0].insert(Regime::Opposite(c), t);
    }
    let iia = model_iia();
    for r in [Regime::FirstEmpty, Regime::FirstPositive] {
        tables[1].insert(r, iia.table(2, r).expect("fixture").clone());
    }
    tables[2].insert(
        Regime::All,
        iia.table(3, Regime::All).expect("fixture").clone(),
    );
    let th = RegimeThresholds::new(IIB_THRESHOLDS.0, IIB_THRESHOLDS.1).expect("fixture");
    IntensityModel::new(
        ModelKind::ModelIIb,
        TICK,
        AES.to_vec(),
        cap,
        Some(th),
        tables,
    )
    .expect("fixture is valid")
}

/// Product-form invariant laws of a Model I, one per distance.
pub fn invariant_laws(model: &IntensityModel) -> Result<Vec<StationaryLaw>> {
    product_form_laws(model, LAW_TRUNCATION)
}

/// Queue-reactive rules on top of [`model_i`] with its own invariant laws.
pub fn queue_reactive(theta: f64, theta_reinit: f64) -> QueueReactive {
    QueueReactive::new(
        theta,
        theta_reinit,
        invariant_laws(&model_i()).expect("fixture is ergodic"),
    )
    .expect("valid probabilities")
}

/// Book with every queue at `n`.
pub fn flat_state(k: usize, n: u32) -> LobState {
    LobState {
        q: vec![n; 2 * k],
        p_ref: P_REF,
    }
}

/// L2 view of a book: non-empty levels from the best outward, volumes `q · AES`.
pub fn to_snapshot(
    state: &LobState,
    model: &IntensityModel,
    ts_ns: i64,
    trade: Option<(i64, u64)>,
) -> L2Snapshot {
    let k = state.k();
    let level = |qi: QueueIndex| {
        let n = state.get(qi);
        (n > 0).then(|| Level {
            price_ticks: state.price_half_ticks(qi) / 2,
            volume: n as u64 * model.aes_at(qi.distance()).round() as u64,
            orders: None,
        })
    };
    let side = |sign: i32| -> Vec<Option<Level>> {
        let mut v: Vec<Option<Level>> = (1..=k as i32)
            .filter_map(|d| level(QueueIndex::raw((sign * d) as i8)))
            .map(Some)
            .collect();
        v.resize(k, None);
        v
    };
    L2Snapshot {
        ts_ns,
        bids: side(-1),
        asks: side(1),
        trade,
    }
}

/// Snapshot stream of a queue-reactive path: one snapshot per event, starting at `start_ns`.
///
/// Market orders print a trade of one AES at the hit price.
pub fn l2_stream<R: Rng + ?Sized>(
    model: &IntensityModel,
    rules: &QueueReactive,
    horizon: f64,
    start_ns: i64,
    rng: &mut R,
) -> Vec<L2Snapshot> {
    let initial = rules.draw_state(model.k(), P_REF, rng);
    let mut market = Market::new(model, Some(rules), initial);
    let mut out = vec![to_snapshot(&market.state, model, start_ns, None)];
    let mut last_ns = start_ns;
    while let Some(o) = market.advance(horizon, rng) {
        let ts = (start_ns + (o.time * 1e9).round() as i64).max(last_ns + 1);
        last_ns = ts;
        let trade = (o.event.etype == EventType::MarketOrder).then(|| {
            (
                o.price_half_ticks / 2,
                unit_shares(model, o.event.queue.distance()),
            )
        });
        out.push(to_snapshot(&market.state, model, ts, trade));
    }
    out
}
