//! Maximum-likelihood estimation of the intensity tables.
//!
//! Each cell (queue distance, regime, size) collects the exposure time spent in
//! that state and the events it ended with. For a cell with `n` own events over
//! total exposure `T`, `Λ̂ = n / T` and `λ̂_type = #type / T`, so the per-type
//! rates always add up to `Λ̂`. Bid and ask observations are pooled.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::book::{
    EventType, IntensityModel, ModelKind, QueueIndex, RateTable, Regime, RegimeThresholds,
};
use crate::error::{Error, Result};
use crate::ingest::EventRecord;
use crate::stationary::StationaryLaw;

/// Normal quantile used by every interval.
pub const Z95: f64 = 1.96;

/// Cells with fewer own events inherit their neighbour's rates.
pub const DEFAULT_MIN_OBS: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityEstimate {
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_obs: u64,
}

/// Interval for `λ = Λ p` as the product of the endpoint pairs of the
/// intervals for `Λ` and `p`; endpoints are clamped to `[0, ∞)` and `[0, 1]`.
pub fn confidence_interval(total_rate: f64, p_hat: f64, n_obs: u64) -> (f64, f64) {
    if n_obs == 0 {
        let r = total_rate * p_hat;
        return (r, r);
    }
    let n = n_obs as f64;
    let hw_total = Z95 * total_rate / n.sqrt();
    let hw_p = Z95 * (p_hat * (1.0 - p_hat) / n).max(0.0).sqrt();
    let lo = (total_rate - hw_total).max(0.0) * (p_hat - hw_p).max(0.0);
    let hi = (total_rate + hw_total) * (p_hat + hw_p).min(1.0);
    (lo, hi)
}

/// Settings shared by all estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateConfig {
    pub k: usize,
    pub cap: usize,
    pub tick_value: f64,
    pub aes: Vec<f64>,
    pub min_obs: u64,
}

impl EstimateConfig {
    pub fn new(k: usize, tick_value: f64, aes: Vec<f64>) -> Self {
        EstimateConfig {
            k,
            cap: crate::book::DEFAULT_CAP,
            tick_value,
            aes,
            min_obs: DEFAULT_MIN_OBS,
        }
    }
}

/// One row of the side table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellEstimate {
    pub distance: usize,
    pub regime: Regime,
    pub size: usize,
    pub etype: EventType,
    pub estimate: IntensityEstimate,
    /// Rates copied from the nearest populated size.
    pub filled: bool,
}

/// Counts gathered while estimating.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EstimateReport {
    /// Market orders at `Q_{±2}` while `Q_{±1}` was non-empty.
    pub rejected_events: u64,
    /// `(distance, regime)` pairs without a single populated cell; zero-filled.
    pub empty_regimes: Vec<(usize, Regime)>,
    pub filled_cells: u64,
}

/// Estimated model with its per-cell intervals.
#[derive(Debug, Clone)]
pub struct Estimation {
    pub model: IntensityModel,
    pub cells: Vec<CellEstimate>,
    pub report: EstimateReport,
}

impl Estimation {
    /// Writes `queue,regime,size,etype,rate,ci_low,ci_high,n_obs,filled`.
    pub fn write_ci_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "queue", "regime", "size", "etype", "rate", "ci_low", "ci_high", "n_obs", "filled",
        ])?;
        for c in &self.cells {
            let e = c.estimate;
            wr.write_record([
                c.distance.to_string(),
                c.regime.key().to_string(),
                c.size.to_string(),
                c.etype.code().to_string(),
                format!("{:e}", e.rate),
                format!("{:e}", e.ci_low),
                format!("{:e}", e.ci_high),
                e.n_obs.to_string(),
                c.filled.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Cell {
    exposure: f64,
    counts: [u64; 3],
}

impl Cell {
    fn n_own(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn type_index(e: EventType) -> usize {
    match e {
        EventType::LimitInsert => 0,
        EventType::Cancel => 1,
        EventType::MarketOrder => 2,
    }
}

/// Cells of one `(distance, regime)` table, sizes `0..=cap` (larger sizes pooled at `cap`).
struct Grid {
    cells: Vec<Cell>,
}

impl Grid {
    fn new(cap: usize) -> Self {
        Grid {
            cells: vec![Cell::default(); cap + 1],
        }
    }

    fn expose(&mut self, size: u32, dt: f64) {
        let i = (size as usize).min(self.cells.len() - 1);
        self.cells[i].exposure += dt;
    }

    fn count(&mut self, size: u32, etype: EventType) {
        let i = (size as usize).min(self.cells.len() - 1);
        self.cells[i].counts[type_index(etype)] += 1;
    }

    /// Rates, intervals and fill flags. `None` when no cell is populated.
    fn finish(
        &self,
        distance: usize,
        regime: Regime,
        min_obs: u64,
        with_market: bool,
    ) -> Option<(RateTable, Vec<CellEstimate>)> {
        let cap = self.cells.len() - 1;
        let populated: Vec<usize> = (0..=cap)
            .filter(|&n| self.cells[n].n_own() >= min_obs && self.cells[n].exposure > 0.0)
            .collect();
        if populated.is_empty() {
            return None;
        }
        let mut table = RateTable::zeros(cap);
        let mut rows = Vec::with_capacity(3 * (cap + 1));
        for n in 0..=cap {
            let own = self.cells[n];
            // nearest populated size, ties towards the smaller size
            let src = *populated
                .iter()
                .min_by_key(|&&p| (p.abs_diff(n), p))
                .expect("non-empty");
            let filled = src != n;
            let c = self.cells[src];
            let total = c.n_own() as f64 / c.exposure;
            for etype in EventType::ALL {
                let cnt = c.counts[type_index(etype)];
                let p_hat = cnt as f64 / c.n_own() as f64;
                let mut rate = cnt as f64 / c.exposure;
                let (mut lo, mut hi) = confidence_interval(total, p_hat, c.n_own());
                let structurally_zero = n == 0 && etype != EventType::LimitInsert
                    || etype == EventType::MarketOrder && !with_market;
                if structurally_zero {
                    (rate, lo, hi) = (0.0, 0.0, 0.0);
                }
                table.rate_mut(etype)[n] = rate;
                let n_obs = if filled { own.n_own() } else { c.n_own() };
                rows.push(CellEstimate {
                    distance,
                    regime,
                    size: n,
                    etype,
                    estimate: IntensityEstimate {
                        rate,
                        ci_low: lo,
                        ci_high: hi,
                        n_obs,
                    },
                    filled,
                });
            }
        }
        Some((table, rows))
    }
}

struct Builder {
    cfg: EstimateConfig,
    kind: ModelKind,
    thresholds: Option<RegimeThresholds>,
    grids: BTreeMap<(usize, Regime), Grid>,
    report: EstimateReport,
}

impl Builder {
    fn new(
        cfg: &EstimateConfig,
        kind: ModelKind,
        thresholds: Option<RegimeThresholds>,
    ) -> Result<Self> {
        if cfg.aes.len() != cfg.k {
            return Err(Error::Config(format!(
                "need {} AES values, got {}",
                cfg.k,
                cfg.aes.len()
            )));
        }
        let mut grids = BTreeMap::new();
        for d in 1..=cfg.k {
            for r in Regime::required(kind, d) {
                grids.insert((d, r), Grid::new(cfg.cap));
            }
        }
        Ok(Builder {
            cfg: cfg.clone(),
            kind,
            thresholds,
            grids,
            report: EstimateReport::default(),
        })
    }

    fn grid(&mut self, d: usize, r: Regime) -> &mut Grid {
        self.grids
            .get_mut(&(d, r))
            .expect("grid layout follows the model kind")
    }

    /// Per-queue records for every distance in `distances`.
    fn queue_scope(&mut self, events: &[EventRecord], distances: impl Fn(usize) -> bool) {
        for e in events {
            let d = e.queue.distance();
            if d > self.cfg.k || !distances(d) {
                continue;
            }
            let g = self.grid(d, Regime::All);
            g.expose(e.q_before, e.dt);
            g.count(e.q_before, e.etype);
        }
    }

    /// Pair `(Q_{±1}, Q_{±2})` records: exposure of the second limit keyed by `1{q_{±1} > 0}`.
    fn first_two_scope(&mut self, events: &[EventRecord]) -> Result<()> {
        for e in events {
            let d = e.queue.distance();
            let partner = e
                .partner
                .ok_or_else(|| Error::Config("pair records need the partner size".into()))?;
            if d > 2 {
                continue;
            }
            let (q1, q2) = if d == 1 {
                (e.q_before, partner)
            } else {
                (partner, e.q_before)
            };
            let regime = if q1 > 0 {
                Regime::FirstPositive
            } else {
                Regime::FirstEmpty
            };
            self.grid(2, regime).expose(q2, e.dt);
            if d == 2 {
                if e.etype == EventType::MarketOrder && q1 > 0 {
                    self.report.rejected_events += 1;
                    continue;
                }
                self.grid(2, regime).count(q2, e.etype);
            }
        }
        Ok(())
    }

    /// Pair `(Q_{-1}, Q_1)` records: both viewpoints, keyed by the opposite size class.
    fn first_opposite_scope(&mut self, events: &[EventRecord]) -> Result<()> {
        let th = self
            .thresholds
            .ok_or_else(|| Error::Config("size classes need thresholds".into()))?;
        for e in events {
            if e.queue.distance() != 1 {
                continue;
            }
            let partner = e
                .partner
                .ok_or_else(|| Error::Config("pair records need the partner size".into()))?;
            for (own, opposite, is_event_queue) in
                [(e.q_before, partner, true), (partner, e.q_before, false)]
            {
                let r = Regime::Opposite(th.classify(opposite));
                let g = self.grid(1, r);
                g.expose(own, e.dt);
                if is_event_queue {
                    g.count(own, e.etype);
                }
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<Estimation> {
        let mut tables: Vec<BTreeMap<Regime, RateTable>> = vec![BTreeMap::new(); self.cfg.k];
        let mut cells = Vec::new();
        for d in 1..=self.cfg.k {
            let mut any = false;
            for r in Regime::required(self.kind, d) {
                let with_market = match self.kind {
                    ModelKind::ModelIIa | ModelKind::ModelIIb => {
                        d == 1 || r == Regime::FirstEmpty || matches!(r, Regime::Opposite(_))
                    }
                    _ => true,
                };
                let grid = &self.grids[&(d, r)];
                match grid.finish(d, r, self.cfg.min_obs, with_market) {
                    Some((t, rows)) => {
                        any = true;
                        self.report.filled_cells += rows
                            .iter()
                            .filter(|c| c.filled && c.etype == EventType::LimitInsert)
                            .count() as u64;
                        cells.extend(rows);
                        tables[d - 1].insert(r, t);
                    }
                    None => {
                        self.report.empty_regimes.push((d, r));
                        tables[d - 1].insert(r, RateTable::zeros(self.cfg.cap));
                    }
                }
            }
            if !any {
                return Err(Error::NoData(format!("no populated cell at distance {d}")));
            }
        }
        let model = IntensityModel::new(
            self.kind,
            self.cfg.tick_value,
            self.cfg.aes.clone(),
            self.cfg.cap,
            self.thresholds,
            tables,
        )?;
        Ok(Estimation {
            model,
            cells,
            report: self.report,
        })
    }
}

/// Model I: per-queue records, `Q_i` and `Q_{-i}` pooled.
pub fn estimate_model_i(events: &[EventRecord], cfg: &EstimateConfig) -> Result<Estimation> {
    let mut b = Builder::new(cfg, ModelKind::ModelI, None)?;
    b.queue_scope(events, |_| true);
    b.finish()
}

/// Model II^a: first limits and `|i| ≥ 3` from per-queue records, second limits from pair records.
pub fn estimate_model_iia(
    queue_events: &[EventRecord],
    pair_events: &[EventRecord],
    cfg: &EstimateConfig,
) -> Result<Estimation> {
    let mut b = Builder::new(cfg, ModelKind::ModelIIa, None)?;
    b.queue_scope(queue_events, |d| d != 2);
    b.first_two_scope(pair_events)?;
    b.finish()
}

/// Model II^b: first limits by opposite size class, second limits as in II^a.
pub fn estimate_model_iib(
    queue_events: &[EventRecord],
    first_two: &[EventRecord],
    first_opposite: &[EventRecord],
    thresholds: RegimeThresholds,
    cfg: &EstimateConfig,
) -> Result<Estimation> {
    let mut b = Builder::new(cfg, ModelKind::ModelIIb, Some(thresholds))?;
    b.queue_scope(queue_events, |d| d > 2);
    b.first_two_scope(first_two)?;
    b.first_opposite_scope(first_opposite)?;
    b.finish()
}

/// Constant insertion and market rates with linear cancellation `c n`, per distance.
pub fn estimate_poisson_baseline(
    events: &[EventRecord],
    cfg: &EstimateConfig,
) -> Result<(IntensityModel, Vec<[IntensityEstimate; 3]>)> {
    if cfg.aes.len() != cfg.k {
        return Err(Error::Config(format!(
            "need {} AES values, got {}",
            cfg.k,
            cfg.aes.len()
        )));
    }
    let mut exposure = vec![0.0; cfg.k];
    let mut exposure_busy = vec![0.0; cfg.k];
    let mut size_exposure = vec![0.0; cfg.k];
    let mut counts = vec![[0u64; 3]; cfg.k];
    for e in events {
        let d = e.queue.distance();
        if d > cfg.k {
            continue;
        }
        exposure[d - 1] += e.dt;
        if e.q_before > 0 {
            exposure_busy[d - 1] += e.dt;
        }
        size_exposure[d - 1] += e.dt * e.q_before as f64;
        counts[d - 1][type_index(e.etype)] += 1;
    }
    let mut tables = Vec::with_capacity(cfg.k);
    let mut estimates = Vec::with_capacity(cfg.k);
    for d in 0..cfg.k {
        if counts[d].iter().sum::<u64>() == 0 {
            return Err(Error::NoData(format!("no events at distance {}", d + 1)));
        }
        let ratio = |n: u64, t: f64| if t > 0.0 { n as f64 / t } else { 0.0 };
        let [nl, nc, nm] = counts[d];
        let (l, c, m) = (
            ratio(nl, exposure[d]),
            ratio(nc, size_exposure[d]),
            ratio(nm, exposure_busy[d]),
        );
        let est = |rate: f64, n: u64| {
            let (lo, hi) = confidence_interval(rate, 1.0, n);
            IntensityEstimate {
                rate,
                ci_low: lo,
                ci_high: hi,
                n_obs: n,
            }
        };
        estimates.push([est(l, nl), est(c, nc), est(m, nm)]);
        tables.push(RateTable::from_fn(cfg.cap, |n| (l, c * n as f64, m)));
    }
    let model = IntensityModel::independent(
        ModelKind::PoissonBaseline,
        cfg.tick_value,
        cfg.aes.clone(),
        tables,
    )?;
    Ok((model, estimates))
}

const QUANTILE_SLACK: f64 = 1e-12;

/// Lower and upper tercile of a queue-size law conditional on positive sizes.
pub fn compute_thresholds(law: &StationaryLaw) -> Result<RegimeThresholds> {
    let probs = &law.marginal(0).probs;
    let positive: f64 = probs.iter().skip(1).sum();
    if !(positive > 0.0) {
        return Err(Error::InsufficientData(
            "law has no mass on positive sizes".into(),
        ));
    }
    let quantile = |level: f64| -> u32 {
        let mut acc = 0.0;
        for (n, p) in probs.iter().enumerate().skip(1) {
            acc += p / positive;
            if acc >= level - QUANTILE_SLACK {
                return n as u32;
            }
        }
        (probs.len() - 1) as u32
    };
    let (m, l) = (quantile(1.0 / 3.0), quantile(2.0 / 3.0));
    if m >= l {
        return Err(Error::DegenerateLaw(m));
    }
    RegimeThresholds::new(m, l)
}

/// Pooled size law of the first limits from per-queue or pair records, weighted by exposure.
pub fn first_limit_law(events: &[EventRecord], cap: usize) -> StationaryLaw {
    let mut w = vec![0.0; cap + 1];
    for e in events.iter().filter(|e| e.queue.distance() == 1) {
        w[(e.q_before as usize).min(cap)] += e.dt;
    }
    StationaryLaw::from_weights(
        vec![QueueIndex::raw(1)],
        vec![cap + 1],
        w,
        crate::stationary::LawMethod::Empirical,
        0.0,
    )
}
