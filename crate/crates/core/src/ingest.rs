//! L2 snapshot streams: reference price, average event sizes and event records.
//!
//! Prices are handled as integer ticks; the reference price as odd half-ticks.
//! Snapshot diffs are turned into unit events in `p_ref`-relative coordinates.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::book::{EventType, LobState, QueueIndex};
use crate::error::{Error, Result};
use crate::stationary::{LawMethod, StationaryLaw};

/// Spacing given to events that share a timestamp within one exposure scope.
pub const SIMULTANEOUS_DT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Level {
    pub price_ticks: i64,
    pub volume: u64,
    pub orders: Option<u32>,
}

/// One book snapshot. Levels are ordered from the best quote outward; missing levels are `None`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct L2Snapshot {
    pub ts_ns: i64,
    pub bids: Vec<Option<Level>>,
    pub asks: Vec<Option<Level>>,
    /// Trade price (ticks) and volume printed since the previous snapshot.
    pub trade: Option<(i64, u64)>,
}

impl L2Snapshot {
    pub fn best_bid(&self) -> Option<i64> {
        self.bids.iter().flatten().next().map(|l| l.price_ticks)
    }

    pub fn best_ask(&self) -> Option<i64> {
        self.asks.iter().flatten().next().map(|l| l.price_ticks)
    }

    /// Bid/ask mirror image about price zero.
    pub fn mirrored(&self) -> Self {
        let flip = |side: &Vec<Option<Level>>| {
            side.iter()
                .map(|l| {
                    l.map(|l| Level {
                        price_ticks: -l.price_ticks,
                        ..l
                    })
                })
                .collect()
        };
        L2Snapshot {
            ts_ns: self.ts_ns,
            bids: flip(&self.asks),
            asks: flip(&self.bids),
            trade: self.trade.map(|(p, v)| (-p, v)),
        }
    }
}

/// Reference price in half-ticks from the best quotes in ticks.
///
/// Odd spreads give the midprice; even spreads give the midprice shifted by half
/// a tick towards `previous`, or downwards when there is no previous value.
pub fn pref_half_ticks(best_bid: i64, best_ask: i64, previous: Option<i64>) -> Result<i64> {
    if best_bid >= best_ask {
        return Err(Error::CrossedBook {
            bid: best_bid,
            ask: best_ask,
        });
    }
    let mid = best_bid + best_ask;
    if (best_ask - best_bid) % 2 == 1 {
        return Ok(mid);
    }
    Ok(match previous {
        Some(p) if (mid + 1 - p).abs() < (mid - 1 - p).abs() => mid + 1,
        _ => mid - 1,
    })
}

pub fn estimate_pref(snapshot: &L2Snapshot, previous: Option<i64>) -> Result<i64> {
    match (snapshot.best_bid(), snapshot.best_ask()) {
        (Some(b), Some(a)) => pref_half_ticks(b, a, previous),
        _ => Err(Error::InsufficientData(
            "one side of the book is empty".into(),
        )),
    }
}

/// Currency form of [`pref_half_ticks`].
pub fn estimate_pref_price(
    best_bid: f64,
    best_ask: f64,
    tick: f64,
    previous: Option<f64>,
) -> Result<f64> {
    let ticks = |p: f64| (p / tick).round() as i64;
    let prev = previous.map(|p| (2.0 * p / tick).round() as i64);
    Ok(pref_half_ticks(ticks(best_bid), ticks(best_ask), prev)? as f64 * tick / 2.0)
}

/// Volumes aligned on `Q_{-K} .. Q_K` around `p_ref`; `None` where the snapshot says nothing.
pub fn align(snapshot: &L2Snapshot, p_ref: i64, k: usize) -> Vec<Option<u64>> {
    let mut out = vec![None; 2 * k];
    let deepest_bid = snapshot.bids.iter().flatten().last().map(|l| l.price_ticks);
    let deepest_ask = snapshot.asks.iter().flatten().last().map(|l| l.price_ticks);
    for qi in QueueIndex::all(k) {
        let v = qi.value() as i64;
        let px2 = if v > 0 {
            p_ref + 2 * v - 1
        } else {
            p_ref + 2 * v + 1
        };
        let px = px2.div_euclid(2);
        let (side, known) = if v > 0 {
            (&snapshot.asks, deepest_ask.is_some_and(|d| px <= d))
        } else {
            (&snapshot.bids, deepest_bid.is_some_and(|d| px >= d))
        };
        if known {
            let vol = side
                .iter()
                .flatten()
                .find(|l| l.price_ticks == px)
                .map_or(0, |l| l.volume);
            out[qi.slot(k)] = Some(vol);
        }
    }
    out
}

/// AES-unit size: smallest integer not below `volume / aes`.
pub fn to_units(volume: u64, aes: f64) -> u32 {
    (volume as f64 / aes).ceil() as u32
}

/// A queue-level change found in a snapshot diff, in share units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawEvent {
    pub queue: QueueIndex,
    pub etype: EventType,
    pub volume_before: u64,
    pub volume_after: u64,
}

/// Classifies every changed queue between two aligned books.
///
/// Reductions at the best quote, and at queues that became best because every
/// better one on that side was emptied in the same diff, are market orders when
/// no trade column is present or a trade was printed; other reductions are cancels.
fn classify(
    before: &[Option<u64>],
    after: &[Option<u64>],
    k: usize,
    trade_info: Option<bool>,
) -> (Vec<RawEvent>, usize) {
    let mut events = Vec::new();
    let mut unknown = 0;
    let traded = trade_info.unwrap_or(true);
    for qi in QueueIndex::all(k) {
        let s = qi.slot(k);
        let (b, a) = match (before[s], after[s]) {
            (Some(b), Some(a)) => (b, a),
            (None, None) => continue,
            (x, y) => {
                if x.unwrap_or(0) != y.unwrap_or(0) {
                    unknown += 1;
                }
                continue;
            }
        };
        if a == b {
            continue;
        }
        let etype = if a > b {
            EventType::LimitInsert
        } else {
            // best before the diff, or every better queue was swept empty within it
            let best_after_sweep = (1..qi.distance()).all(|d| {
                let j = QueueIndex::raw(if qi.is_ask() { d as i8 } else { -(d as i8) });
                after[j.slot(k)].unwrap_or(0) == 0
            });
            if best_after_sweep && traded {
                EventType::MarketOrder
            } else {
                EventType::Cancel
            }
        };
        events.push(RawEvent {
            queue: qi,
            etype,
            volume_before: b,
            volume_after: a,
        });
    }
    // sweeps run from the best quote outward on each side
    events.sort_by_key(|e| match e.etype {
        EventType::MarketOrder => (0, e.queue.distance() as i32, e.queue.value()),
        _ => (1, 0, e.queue.value()),
    });
    (events, unknown)
}

/// Exposure scope of an event record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Clock per queue.
    Queue,
    /// Clock per side over `{Q_{±1}, Q_{±2}}`.
    FirstTwo,
    /// One clock over `{Q_{-1}, Q_1}`.
    FirstOpposite,
}

impl Scope {
    pub fn key(self) -> &'static str {
        match self {
            Scope::Queue => "queue",
            Scope::FirstTwo => "pair_1_2",
            Scope::FirstOpposite => "pair_m1_1",
        }
    }

    pub fn from_key(s: &str) -> Option<Self> {
        [Scope::Queue, Scope::FirstTwo, Scope::FirstOpposite]
            .into_iter()
            .find(|x| x.key() == s)
    }

    /// The other member of `queue`'s pair, if `queue` belongs to this scope's pairs.
    pub fn partner(self, queue: QueueIndex) -> Option<QueueIndex> {
        let v = queue.value();
        match self {
            Scope::Queue => None,
            Scope::FirstTwo if v.abs() <= 2 => {
                Some(QueueIndex::raw((v.signum() * (3 - v.abs())) as i8))
            }
            Scope::FirstOpposite if v.abs() == 1 => Some(queue.mirrored()),
            _ => None,
        }
    }
}

/// One observed event with its exposure time and conditioning sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub pref_epoch: u64,
    /// Seconds since the start of the stream.
    pub ts: f64,
    /// Seconds since the previous event in the same scope and epoch.
    pub dt: f64,
    pub queue: QueueIndex,
    pub etype: EventType,
    /// Size of `queue` before the event, in AES units.
    pub q_before: u32,
    /// Size of the pair partner before the event (pair scopes only).
    pub partner: Option<u32>,
}

/// Assigns exposure times to a stream of unit events.
#[derive(Debug, Clone)]
pub struct RecordBuilder {
    scope: Scope,
    k: usize,
    last: Vec<f64>,
    epoch: u64,
}

impl RecordBuilder {
    pub fn new(scope: Scope, k: usize, t0: f64) -> Self {
        let groups = match scope {
            Scope::Queue => 2 * k,
            Scope::FirstTwo => 2,
            Scope::FirstOpposite => 1,
        };
        RecordBuilder {
            scope,
            k,
            last: vec![t0; groups],
            epoch: 0,
        }
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Starts a new constant-`p_ref` epoch at time `t`.
    pub fn reset(&mut self, t: f64) {
        self.last.iter_mut().for_each(|x| *x = t);
        self.epoch += 1;
    }

    fn group(&self, queue: QueueIndex) -> Option<usize> {
        match self.scope {
            Scope::Queue => Some(queue.slot(self.k)),
            Scope::FirstTwo if queue.distance() <= 2 => Some(queue.is_ask() as usize),
            Scope::FirstOpposite if queue.distance() == 1 => Some(0),
            _ => None,
        }
    }

    /// Record for an event at time `t` acting on `before`; `None` when outside the scope.
    pub fn push(
        &mut self,
        t: f64,
        before: &LobState,
        queue: QueueIndex,
        etype: EventType,
    ) -> Option<EventRecord> {
        let g = self.group(queue)?;
        let mut dt = t - self.last[g];
        if dt <= 0.0 {
            dt = SIMULTANEOUS_DT;
        }
        self.last[g] += dt;
        Some(EventRecord {
            pref_epoch: self.epoch,
            ts: t,
            dt,
            queue,
            etype,
            q_before: before.get(queue),
            partner: self.scope.partner(queue).map(|p| before.get(p)),
        })
    }
}

/// Counts collected while reconstructing events.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QcReport {
    pub snapshots: u64,
    pub crossed_or_one_sided: u64,
    pub diffs: u64,
    pub epochs: u64,
    /// Reference-price changes larger than one tick.
    pub multi_tick_moves: u64,
    /// Diffs touching several queues outside a best-quote sweep.
    pub multi_queue_diffs: u64,
    /// Changes at window positions the snapshot does not cover.
    pub unknown_level_changes: u64,
    pub events: u64,
    pub aes: Vec<f64>,
}

/// `(ts, p_ref)` in seconds and half-ticks; consecutive entries differ by exactly one tick.
pub type PrefPath = Vec<(f64, i64)>;

struct Walker {
    k: usize,
    p_ref: Option<i64>,
    prev: Option<(f64, Vec<Option<u64>>)>,
    t0: Option<i64>,
}

enum Step {
    Skip,
    NewEpoch(f64, Vec<Option<u64>>),
    Diff {
        t: f64,
        before: Vec<Option<u64>>,
        after: Vec<Option<u64>>,
        traded: Option<bool>,
    },
}

impl Walker {
    fn new(k: usize) -> Self {
        Walker {
            k,
            p_ref: None,
            prev: None,
            t0: None,
        }
    }

    fn step(&mut self, snap: &L2Snapshot, has_trade_column: bool, qc: &mut QcReport) -> Step {
        qc.snapshots += 1;
        let t0 = *self.t0.get_or_insert(snap.ts_ns);
        let t = (snap.ts_ns - t0) as f64 / 1e9;
        let Ok(p) = estimate_pref(snap, self.p_ref) else {
            qc.crossed_or_one_sided += 1;
            return Step::Skip;
        };
        let aligned = align(snap, p, self.k);
        let changed = self.p_ref != Some(p);
        if let (true, Some(old)) = (changed, self.p_ref) {
            if (p - old).abs() != 2 {
                qc.multi_tick_moves += 1;
            }
        }
        self.p_ref = Some(p);
        if changed {
            qc.epochs += 1;
            self.prev = Some((t, aligned.clone()));
            return Step::NewEpoch(t, aligned);
        }
        let (_, before) = self
            .prev
            .replace((t, aligned.clone()))
            .expect("epoch started");
        qc.diffs += 1;
        let traded = has_trade_column.then(|| snap.trade.is_some_and(|(_, v)| v > 0));
        Step::Diff {
            t,
            before,
            after: aligned,
            traded,
        }
    }
}

fn has_trades(snaps: &[L2Snapshot]) -> bool {
    snaps.iter().any(|s| s.trade.is_some())
}

/// Average absolute volume change per event at each distance `1..=k`.
pub fn compute_aes(snapshots: &[L2Snapshot], k: usize) -> Result<Vec<f64>> {
    let mut qc = QcReport::default();
    let mut walker = Walker::new(k);
    let trades = has_trades(snapshots);
    let (mut sum, mut n) = (vec![0.0; k], vec![0u64; k]);
    for s in snapshots {
        if let Step::Diff {
            before,
            after,
            traded,
            ..
        } = walker.step(s, trades, &mut qc)
        {
            for e in classify(&before, &after, k, traded).0 {
                let d = e.queue.distance() - 1;
                sum[d] += e.volume_before.abs_diff(e.volume_after) as f64;
                n[d] += 1;
            }
        }
    }
    (0..k)
        .map(|d| {
            if n[d] == 0 {
                Err(Error::InsufficientData(format!(
                    "no events observed at distance {}",
                    d + 1
                )))
            } else {
                Ok(sum[d] / n[d] as f64)
            }
        })
        .collect()
}

fn units_state(aligned: &[Option<u64>], aes: &[f64], k: usize, p_ref: i64) -> LobState {
    let q = QueueIndex::all(k)
        .map(|qi| to_units(aligned[qi.slot(k)].unwrap_or(0), aes[qi.distance() - 1]))
        .collect();
    LobState { q, p_ref }
}

/// Event records of one scope, together with the QC counts and the reference-price path.
pub fn reconstruct_events(
    snapshots: &[L2Snapshot],
    aes: &[f64],
    k: usize,
    scope: Scope,
) -> Result<(Vec<EventRecord>, QcReport, PrefPath)> {
    if aes.len() != k || aes.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::Config(format!("need {k} positive AES values")));
    }
    let mut qc = QcReport {
        aes: aes.to_vec(),
        ..QcReport::default()
    };
    let mut walker = Walker::new(k);
    let trades = has_trades(snapshots);
    let mut builder: Option<RecordBuilder> = None;
    let mut out = Vec::new();
    let mut path = PrefPath::new();
    for s in snapshots {
        match walker.step(s, trades, &mut qc) {
            Step::Skip => {}
            Step::NewEpoch(t, _) => {
                let p = walker.p_ref.expect("set on new epoch");
                // multi-tick jumps are split into one-tick steps at the same time
                if let Some(&(_, mut last)) = path.last() {
                    while (p - last).abs() > 2 {
                        last += 2 * (p - last).signum();
                        path.push((t, last));
                    }
                }
                path.push((t, p));
                match builder.as_mut() {
                    Some(b) => b.reset(t),
                    None => builder = Some(RecordBuilder::new(scope, k, t)),
                }
            }
            Step::Diff {
                t,
                before,
                after,
                traded,
            } => {
                let (events, unknown) = classify(&before, &after, k, traded);
                qc.unknown_level_changes += unknown as u64;
                let sweep = events.iter().all(|e| e.etype == EventType::MarketOrder);
                if events.len() > 1 && !sweep {
                    qc.multi_queue_diffs += 1;
                }
                let b = builder.as_mut().expect("epoch started");
                let p_ref = walker.p_ref.expect("set");
                let mut current = before.clone();
                for e in events {
                    let state = units_state(&current, aes, k, p_ref);
                    if let Some(r) = b.push(t, &state, e.queue, e.etype) {
                        out.push(r);
                    }
                    qc.events += 1;
                    current[e.queue.slot(k)] = Some(e.volume_after);
                }
            }
        }
    }
    if qc.snapshots == 0 {
        return Err(Error::NoData("no snapshots".into()));
    }
    Ok((out, qc, path))
}

/// Histogram of AES-unit queue sizes sampled every `period` seconds.
///
/// With `mirror` set, each sample also contributes its bid/ask mirror image.
/// Sizes above `max_size` count towards the tail mass.
pub fn sample_empirical_law(
    snapshots: &[L2Snapshot],
    aes: &[f64],
    k: usize,
    period: f64,
    dims: &[QueueIndex],
    max_size: usize,
    mirror: bool,
) -> Result<StationaryLaw> {
    if !(period > 0.0) {
        return Err(Error::Config("sampling period must be positive".into()));
    }
    let side = max_size + 1;
    let mut weights = vec![0.0; side.pow(dims.len() as u32)];
    let mut tail = 0.0;
    let mut qc = QcReport::default();
    let mut walker = Walker::new(k);
    let mut current: Option<LobState> = None;
    let mut next = 0.0;
    let record = |state: &LobState, weights: &mut Vec<f64>, tail: &mut f64| {
        let views = if mirror {
            vec![state.clone(), state.mirrored()]
        } else {
            vec![state.clone()]
        };
        for s in views {
            let mut off = 0;
            let mut inside = true;
            for d in dims {
                let v = s.get(*d) as usize;
                inside &= v <= max_size;
                off = off * side + v.min(max_size);
            }
            if inside {
                weights[off] += 1.0;
            } else {
                *tail += 1.0;
            }
        }
    };
    let mut last_t = 0.0;
    for s in snapshots {
        let step = walker.step(s, false, &mut qc);
        let aligned = match step {
            Step::Skip => continue,
            Step::NewEpoch(t, a) => {
                last_t = t;
                a
            }
            Step::Diff { t, after, .. } => {
                last_t = t;
                after
            }
        };
        while let Some(st) = current.as_ref().filter(|_| next < last_t) {
            record(st, &mut weights, &mut tail);
            next += period;
        }
        current = Some(units_state(&aligned, aes, k, walker.p_ref.expect("set")));
        if qc.snapshots == 1 {
            next = last_t;
        }
    }
    if let Some(st) = &current {
        while next <= last_t {
            record(st, &mut weights, &mut tail);
            next += period;
        }
    }
    if weights.iter().sum::<f64>() + tail == 0.0 {
        return Err(Error::NoData("no samples".into()));
    }
    Ok(StationaryLaw::from_weights(
        dims.to_vec(),
        vec![side; dims.len()],
        weights,
        LawMethod::Empirical,
        tail,
    ))
}

/// Trading-hours filter on the time of day of `ts_ns`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub start_s: u32,
    pub end_s: u32,
}

impl Session {
    /// Parses `HH:MM-HH:MM`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("session must look like 10:00-16:30, got `{s}`"));
        let hm = |x: &str| -> Result<u32> {
            let (h, m) = x.trim().split_once(':').ok_or_else(bad)?;
            let (h, m): (u32, u32) = (h.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?);
            if h > 24 || m > 59 {
                return Err(bad());
            }
            Ok(h * 3600 + m * 60)
        };
        let (a, b) = s.split_once('-').ok_or_else(bad)?;
        let (start_s, end_s) = (hm(a)?, hm(b)?);
        if start_s >= end_s {
            return Err(bad());
        }
        Ok(Session { start_s, end_s })
    }

    pub fn contains(&self, ts_ns: i64) -> bool {
        let tod = ts_ns.rem_euclid(86_400_000_000_000) / 1_000_000_000;
        (self.start_s as i64..self.end_s as i64).contains(&tod)
    }
}

/// Reads the L2 CSV format `ts_ns, bp1..bpK, bv1..bvK, ap1..apK, av1..avK[, trade_px, trade_vol]`.
///
/// Empty price fields mark missing levels. Prices are rounded to the tick grid.
pub fn read_l2_csv<R: Read>(reader: R, k: usize, tick: f64) -> Result<Vec<L2Snapshot>> {
    let mut rd = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rd.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: String| {
        col(&name).ok_or(Error::Input {
            line: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let ts = need("ts_ns".into())?;
    let mut idx = Vec::with_capacity(4 * k);
    for prefix in ["bp", "bv", "ap", "av"] {
        for j in 1..=k {
            idx.push(need(format!("{prefix}{j}"))?);
        }
    }
    let trade = col("trade_px").zip(col("trade_vol"));
    let mut out = Vec::new();
    for (n, rec) in rd.records().enumerate() {
        let line = n + 2;
        let rec = rec?;
        let err = |message: String| Error::Input { line, message };
        let field = |i: usize| rec.get(i).unwrap_or("");
        let ts_ns: i64 = field(ts)
            .parse()
            .map_err(|_| err(format!("bad timestamp `{}`", field(ts))))?;
        let price = |s: &str| -> Result<Option<i64>> {
            if s.is_empty() {
                return Ok(None);
            }
            let p: f64 = s.parse().map_err(|_| err(format!("bad price `{s}`")))?;
            Ok(Some((p / tick).round() as i64))
        };
        let volume = |s: &str| -> Result<u64> {
            if s.is_empty() {
                return Ok(0);
            }
            s.parse().map_err(|_| err(format!("bad volume `{s}`")))
        };
        let side = |pi: usize, vi: usize| -> Result<Vec<Option<Level>>> {
            (0..k)
                .map(|j| {
                    let p = price(field(idx[pi * k + j]))?;
                    let v = volume(field(idx[vi * k + j]))?;
                    Ok(p.filter(|_| v > 0).map(|price_ticks| Level {
                        price_ticks,
                        volume: v,
                        orders: None,
                    }))
                })
                .collect()
        };
        let bids = side(0, 1)?;
        let asks = side(2, 3)?;
        let trade = match trade {
            Some((pi, vi)) => match (price(field(pi))?, volume(field(vi))?) {
                (Some(p), v) if v > 0 => Some((p, v)),
                _ => None,
            },
            None => None,
        };
        let snap = L2Snapshot {
            ts_ns,
            bids,
            asks,
            trade,
        };
        if out.last().is_some_and(|p: &L2Snapshot| p.ts_ns > ts_ns) {
            return Err(err("timestamps go backwards".into()));
        }
        out.push(snap);
    }
    Ok(out)
}

/// Writes the L2 CSV format read by [`read_l2_csv`].
pub fn write_l2_csv<W: Write>(
    w: W,
    snapshots: &[L2Snapshot],
    k: usize,
    tick: f64,
    with_trades: bool,
) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["ts_ns".to_string()];
    for prefix in ["bp", "bv", "ap", "av"] {
        header.extend((1..=k).map(|j| format!("{prefix}{j}")));
    }
    if with_trades {
        header.extend(["trade_px".into(), "trade_vol".into()]);
    }
    wr.write_record(&header)?;
    let decimals = (-tick.log10()).ceil().max(0.0) as usize;
    let px = |t: i64| format!("{:.*}", decimals, t as f64 * tick);
    for s in snapshots {
        let mut row = vec![s.ts_ns.to_string()];
        for side in [&s.bids, &s.asks] {
            let lv = |j: usize| side.get(j).copied().flatten();
            row.extend((0..k).map(|j| lv(j).map_or(String::new(), |l| px(l.price_ticks))));
            row.extend((0..k).map(|j| lv(j).map_or("0".into(), |l| l.volume.to_string())));
        }
        if with_trades {
            match s.trade {
                Some((p, v)) => row.extend([px(p), v.to_string()]),
                None => row.extend([String::new(), "0".into()]),
            }
        }
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_records_csv<W: Write>(w: W, records: &[EventRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "pref_epoch",
        "ts_s",
        "dt_s",
        "queue",
        "etype",
        "q_before",
        "partner",
    ])?;
    for r in records {
        wr.write_record([
            r.pref_epoch.to_string(),
            format!("{:.9}", r.ts),
            format!("{:.9}", r.dt),
            r.queue.value().to_string(),
            r.etype.code().to_string(),
            r.q_before.to_string(),
            r.partner.map_or(String::new(), |p| p.to_string()),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(r: R, k: usize) -> Result<Vec<EventRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (n, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let err = |m: &str| Error::Input {
            line,
            message: m.to_string(),
        };
        let f = |i: usize| rec.get(i).ok_or_else(|| err("short row"));
        let queue = QueueIndex::new(f(3)?.parse().map_err(|_| err("bad queue"))?, k)
            .map_err(|_| err("queue outside K"))?;
        let etype = EventType::from_code(f(4)?).ok_or_else(|| err("bad event type"))?;
        let partner = match f(6)? {
            "" => None,
            s => Some(s.parse().map_err(|_| err("bad partner size"))?),
        };
        let r = EventRecord {
            pref_epoch: f(0)?.parse().map_err(|_| err("bad epoch"))?,
            ts: f(1)?.parse().map_err(|_| err("bad timestamp"))?,
            dt: f(2)?.parse().map_err(|_| err("bad dt"))?,
            queue,
            etype,
            q_before: f(5)?.parse().map_err(|_| err("bad size"))?,
            partner,
        };
        if !(r.dt > 0.0) {
            return Err(err("dt must be positive"));
        }
        if r.etype != EventType::LimitInsert && r.q_before == 0 {
            return Err(err("departure from an empty queue"));
        }
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(p: i64, v: u64) -> Option<Level> {
        Some(Level {
            price_ticks: p,
            volume: v,
            orders: None,
        })
    }

    fn snap(ts: i64, bids: &[(i64, u64)], asks: &[(i64, u64)]) -> L2Snapshot {
        L2Snapshot {
            ts_ns: ts,
            bids: bids.iter().map(|&(p, v)| lv(p, v)).collect(),
            asks: asks.iter().map(|&(p, v)| lv(p, v)).collect(),
            trade: None,
        }
    }

    #[test]
    fn pref_rules() {
        let tick = 0.01;
        assert!((estimate_pref_price(10.00, 10.01, tick, None).unwrap() - 10.005).abs() < 1e-12);
        assert!(
            (estimate_pref_price(10.00, 10.02, tick, Some(10.005)).unwrap() - 10.005).abs() < 1e-12
        );
        assert!(
            (estimate_pref_price(10.00, 10.02, tick, Some(10.025)).unwrap() - 10.015).abs() < 1e-12
        );
        assert!((estimate_pref_price(10.00, 10.02, tick, None).unwrap() - 10.005).abs() < 1e-12);
        assert!(matches!(
            pref_half_ticks(5, 5, None),
            Err(Error::CrossedBook { .. })
        ));
    }

    #[test]
    fn alignment_is_pref_relative() {
        // bid 1000, ask 1002: even spread, bootstrap p_ref = 2001 half-ticks
        let s = snap(0, &[(1000, 5), (999, 6)], &[(1002, 7), (1003, 8)]);
        let p = estimate_pref(&s, None).unwrap();
        assert_eq!(p, 2001);
        // Q_-1 at 1000, Q_-2 at 999, Q_1 at 1001 (empty), Q_2 at 1002
        assert_eq!(align(&s, p, 2), vec![Some(6), Some(5), Some(0), Some(7)]);
        assert_eq!(align(&s, p, 3)[5], Some(8));
        assert_eq!(align(&s, p, 3)[0], None);
    }

    #[test]
    fn aes_means() {
        let s = vec![
            snap(0, &[(100, 1000)], &[(101, 1000)]),
            snap(1, &[(100, 1000)], &[(101, 1500)]),
        ];
        assert_eq!(compute_aes(&s, 1).unwrap(), vec![500.0]);
        let two = vec![
            snap(0, &[(100, 100), (99, 1000)], &[(101, 100), (102, 1000)]),
            snap(1, &[(100, 300), (99, 1000)], &[(101, 100), (102, 1000)]),
            snap(1, &[(100, 100), (99, 600)], &[(101, 100), (102, 1000)]),
            snap(2, &[(100, 100), (99, 600)], &[(101, 100), (102, 1800)]),
        ];
        assert_eq!(compute_aes(&two, 2).unwrap()[1], 600.0);
        assert!(matches!(
            compute_aes(&two, 3),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn insert_and_trade_records() {
        let s = vec![
            snap(0, &[(100, 500)], &[(101, 1000)]),
            snap(1_000_000_000, &[(100, 500)], &[(101, 1500)]),
        ];
        let (r, _, _) = reconstruct_events(&s, &[500.0], 1, Scope::Queue).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(
            (r[0].etype, r[0].queue.value(), r[0].q_before),
            (EventType::LimitInsert, 1, 2)
        );
        assert_eq!(r[0].dt, 1.0);
    }

    #[test]
    fn depleted_best_ask_with_print() {
        let mut s = vec![
            snap(0, &[(100, 500)], &[(101, 500), (102, 100)]),
            snap(1, &[(100, 500)], &[(102, 100)]),
        ];
        s[1].trade = Some((101, 500));
        let (r, qc, _) = reconstruct_events(&s, &[500.0, 500.0], 2, Scope::Queue).unwrap();
        assert_eq!(qc.epochs, 1);
        assert_eq!(
            (r[0].etype, r[0].queue.value(), r[0].q_before),
            (EventType::MarketOrder, 1, 1)
        );
    }

    #[test]
    fn pref_change_restarts_the_clock() {
        let sec = 1_000_000_000;
        let s = vec![
            snap(0, &[(100, 500)], &[(101, 500)]),
            snap(sec, &[(101, 500)], &[(102, 500)]),
            snap(sec + sec / 2, &[(101, 500)], &[(102, 900)]),
        ];
        let (r, qc, path) = reconstruct_events(&s, &[500.0], 1, Scope::Queue).unwrap();
        assert_eq!(qc.epochs, 2);
        assert_eq!(path, vec![(0.0, 201), (1.0, 203)]);
        assert_eq!((r[0].pref_epoch, r[0].dt), (1, 0.5));
    }

    #[test]
    fn flagged_reduction_at_best_is_a_market_order() {
        let mut s = vec![
            snap(0, &[(100, 500), (99, 300)], &[(101, 1000), (102, 100)]),
            snap(1, &[(100, 200), (99, 300)], &[(101, 1000), (102, 100)]),
        ];
        s[1].trade = Some((100, 300));
        let (r, _, _) = reconstruct_events(&s, &[300.0, 300.0], 2, Scope::Queue).unwrap();
        assert_eq!((r[0].etype, r[0].q_before), (EventType::MarketOrder, 2));
        // without a print the same reduction is a cancel
        s[1].trade = None;
        s[0].trade = Some((0, 0));
        let (r, _, _) = reconstruct_events(&s, &[300.0, 300.0], 2, Scope::Queue).unwrap();
        assert_eq!(r[0].etype, EventType::Cancel);
    }

    #[test]
    fn pair_scope_shares_a_clock() {
        let s = vec![
            snap(0, &[(100, 100), (99, 100)], &[(101, 100), (102, 100)]),
            snap(
                2_000_000_000,
                &[(100, 100), (99, 100)],
                &[(101, 200), (102, 100)],
            ),
            snap(
                3_000_000_000,
                &[(100, 100), (99, 100)],
                &[(101, 200), (102, 300)],
            ),
        ];
        let (r, _, _) = reconstruct_events(&s, &[100.0, 100.0], 2, Scope::FirstTwo).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!((r[1].dt, r[1].q_before, r[1].partner), (1.0, 1, Some(2)));
        let (r, _, _) = reconstruct_events(&s, &[100.0, 100.0], 2, Scope::Queue).unwrap();
        assert_eq!(r[1].dt, 3.0);
    }

    #[test]
    fn empirical_law_point_mass_and_alternation() {
        let period = 30.0;
        let sec = 1_000_000_000i64;
        let constant: Vec<_> = (0..=10)
            .map(|j| snap(j * 30 * sec, &[(100, 300)], &[(101, 300)]))
            .collect();
        let law = sample_empirical_law(
            &constant,
            &[100.0],
            1,
            period,
            &[QueueIndex::raw(1)],
            10,
            false,
        )
        .unwrap();
        assert_eq!(law.prob(&[3]), 1.0);
        let alt: Vec<_> = (0..10)
            .map(|j| {
                snap(
                    j * 30 * sec,
                    &[(100, 300)],
                    &[(101, if j % 2 == 0 { 200 } else { 400 })],
                )
            })
            .collect();
        let law = sample_empirical_law(&alt, &[100.0], 1, period, &[QueueIndex::raw(1)], 10, false)
            .unwrap();
        assert_eq!(law.prob(&[2]), 0.5);
        assert_eq!(law.prob(&[4]), 0.5);
    }

    #[test]
    fn session_filter() {
        let s = Session::parse("10:00-16:30").unwrap();
        let day = 86_400_000_000_000i64;
        assert!(s.contains(3 * day + 10 * 3_600_000_000_000));
        assert!(!s.contains(3 * day + 9 * 3_600_000_000_000));
        assert!(!s.contains(16 * 3_600_000_000_000 + 30 * 60_000_000_000));
        assert!(Session::parse("16:30-10:00").is_err());
    }

    #[test]
    fn csv_round_trip_preserves_snapshots() {
        let mut s = vec![snap(5, &[(1000, 5), (999, 6)], &[(1002, 7), (1003, 8)])];
        s[0].trade = Some((1000, 3));
        let mut buf = Vec::new();
        write_l2_csv(&mut buf, &s, 2, 0.005, true).unwrap();
        let back = read_l2_csv(&buf[..], 2, 0.005).unwrap();
        assert_eq!(back, s);
        assert!(read_l2_csv("ts_ns,bp1\n".as_bytes(), 1, 0.01).is_err());
    }
}
