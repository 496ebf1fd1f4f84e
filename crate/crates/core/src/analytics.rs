//! Execution probabilities, order placement tactics, slippage and market impact.
//!
//! All agent orders are buys. Paths are keyed by `(seed, path index)`; tactic and
//! impact comparisons reuse the same key so that variants see matched randomness.

use std::io::Write;

use clap::ValueEnum;
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::book::{best_bid, EventType, IntensityModel, LobState, QueueIndex};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, SimRng};
use crate::simulate::{unit_shares, Fill, InitialBook, Market, QueueReactive};

/// Event budget per execution-probability path; exhausted paths count as not executed.
pub const MAX_EVENTS_PER_PATH: u64 = 10_000_000;

/// Sample mean and its standard error (`ddof = 1`).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecProbability {
    pub probability: f64,
    pub stderr: f64,
    pub n_paths: usize,
    /// Paths that hit an absorbing state or the event budget before either outcome.
    pub unresolved: usize,
}

/// Probability that a buy of `n0` units at the back of `Q_{-1}` fills completely before `Q_1` depletes.
///
/// `initial` counts the agent's units in `q_{-1}`, so `q_{-1} - n0` units are ahead of it.
/// The reference price is held fixed. Cancellations at `Q_{-1}` are thinned by the
/// agent's share of the queue and hit the other units uniformly.
pub fn execution_probability(
    model: &IntensityModel,
    initial: &LobState,
    n0: u32,
    n_paths: usize,
    seed: u64,
) -> Result<ExecProbability> {
    let (bid, ask) = (QueueIndex::raw(-1), QueueIndex::raw(1));
    if initial.k() != model.k() {
        return Err(Error::BadInitial(format!(
            "state has K = {}, model has K = {}",
            initial.k(),
            model.k()
        )));
    }
    if initial.get(bid) == 0 || initial.get(ask) == 0 {
        return Err(Error::BadInitial(
            "both first queues must be non-empty".into(),
        ));
    }
    if n0 == 0 || n_paths == 0 {
        return Err(Error::Config("n_0 and n_paths must be positive".into()));
    }
    if n0 > initial.get(bid) {
        return Err(Error::BadInitial(format!(
            "q_-1 = {} cannot hold the agent's {n0} units",
            initial.get(bid)
        )));
    }
    let mut ahead = initial.clone();
    ahead.set(bid, initial.get(bid) - n0);
    let shares = n0 as u64 * unit_shares(model, 1);
    let (hits, unresolved) = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let mut m = Market::new(model, None, ahead.clone());
            m.post(bid, shares, &mut rng);
            for _ in 0..MAX_EVENTS_PER_PATH {
                if m.advance(f64::INFINITY, &mut rng).is_none() {
                    break;
                }
                if m.agent().is_none() {
                    return (1usize, 0usize);
                }
                if m.state.get(ask) == 0 {
                    return (0, 0);
                }
            }
            (0, 1)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let p = hits as f64 / n_paths as f64;
    Ok(ExecProbability {
        probability: p,
        stderr: (p * (1.0 - p) / n_paths as f64).sqrt(),
        n_paths,
        unresolved,
    })
}

/// Split of the parent order across slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Equal slices.
    S1,
    /// Weights `e^{-(i-1)/4} - e^{-i/4}`, renormalized to sum to one.
    S2,
}

impl Schedule {
    fn weights(self, m: usize) -> Vec<f64> {
        match self {
            Schedule::S1 => vec![1.0; m],
            Schedule::S2 => (1..=m)
                .map(|i| (-(i as f64 - 1.0) / 4.0).exp() - (-(i as f64) / 4.0).exp())
                .collect(),
        }
    }

    /// Integer slice sizes summing to `n_total` (largest-remainder rounding, ties to earlier slices).
    pub fn slices(self, n_total: u64, m: usize) -> Vec<u64> {
        let w = self.weights(m);
        let sum: f64 = w.iter().sum();
        let ideal: Vec<f64> = w.iter().map(|x| n_total as f64 * x / sum).collect();
        let mut out: Vec<u64> = ideal.iter().map(|x| x.floor() as u64).collect();
        let short = n_total - out.iter().sum::<u64>();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            (ideal[b] - ideal[b].floor())
                .total_cmp(&(ideal[a] - ideal[a].floor()))
                .then(a.cmp(&b))
        });
        for &i in order.iter().take(short as usize) {
            out[i] += 1;
        }
        out
    }
}

/// Order placement tactic inside a slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Tactic {
    /// Fire and forget: on a midprice change, cancel and buy the remainder at market.
    T1,
    /// Pegging: follow the best bid; step back when left alone at the best.
    T2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    /// Volume-weighted average trade price over the whole run.
    Vwap,
    /// Midprice at the start of the run.
    Arrival,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TcaConfig {
    pub schedule: Schedule,
    pub tactic: Tactic,
    pub benchmark: Benchmark,
    /// Parent order size in units of the first-limit AES.
    pub n_total: u64,
    /// Number of slices.
    pub m: usize,
    /// Slice duration in seconds.
    pub slice_duration: f64,
}

impl TcaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("schedule needs at least one slice".into()));
        }
        if !(self.slice_duration > 0.0 && self.slice_duration.is_finite()) {
            return Err(Error::Config(format!(
                "slice duration must be positive, got {}",
                self.slice_duration
            )));
        }
        Ok(())
    }
}

/// Execution of agent shares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub time: f64,
    pub price_ticks: i64,
    pub shares: u64,
    pub passive: bool,
}

/// Ambient market-order print.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub time: f64,
    pub price: f64,
    pub volume: u64,
}

/// Volume-weighted average price of `trades`.
pub fn vwap(trades: &[Trade]) -> Result<f64> {
    let v: u64 = trades.iter().map(|t| t.volume).sum();
    if v == 0 {
        return Err(Error::NoTrades);
    }
    Ok(trades
        .iter()
        .map(|t| t.price * t.volume as f64)
        .sum::<f64>()
        / v as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub fills: Vec<Execution>,
    pub total_shares: u64,
    pub arrival_price: f64,
    pub benchmark_price: f64,
    pub p_exec: f64,
    pub p_exec_theo: f64,
    pub slippage: f64,
    pub slippage_theo: f64,
    pub passive_rate: f64,
}

impl ExecutionReport {
    pub fn executed_shares(&self) -> u64 {
        self.fills.iter().map(|f| f.shares).sum()
    }
}

/// Agent-side state machine of one run.
struct Agent<'a, 'm> {
    market: Market<'m>,
    rng: &'a mut SimRng,
    fills: Vec<Execution>,
}

impl<'a, 'm> Agent<'a, 'm> {
    fn half_ticks_to_ticks(h: i64) -> i64 {
        h.div_euclid(2)
    }

    fn record(&mut self, fills: Vec<Fill>) {
        for f in fills {
            self.fills.push(Execution {
                time: f.time,
                price_ticks: Self::half_ticks_to_ticks(f.price_half_ticks),
                shares: f.shares,
                passive: !f.aggressive,
            });
        }
    }

    fn post_best(&mut self, shares: u64) {
        let q = best_bid(&self.market.state).unwrap_or(QueueIndex::raw(-1));
        self.market.post(q, shares, self.rng);
    }

    fn buy_now(&mut self, shares: u64) {
        let (fills, _) = self.market.market_buy(shares, self.rng);
        self.record(fills);
    }

    /// Whether a pegging order should leave its queue.
    fn peg_moved(&self) -> bool {
        let Some(a) = self.market.agent() else {
            return true;
        };
        let s = &self.market.state;
        let Some(best) = best_bid(s) else {
            return false;
        };
        if best != a.queue {
            return true;
        }
        // alone at the best: step back only when another bid exists behind
        s.get(a.queue) == a.units
            && QueueIndex::all(s.k()).any(|q| !q.is_ask() && q != a.queue && s.get(q) > 0)
    }

    /// Runs one slice of `shares` until `end`, sampling the midprice at `observe` times
    /// (strictly before agent actions scheduled at the same instant).
    fn run_slice(
        &mut self,
        tactic: Tactic,
        shares: u64,
        end: f64,
        trades: &mut Vec<Trade>,
        observe: &[f64],
        mids: &mut Vec<i64>,
    ) {
        let model = self.market.model();
        let tick = model.tick_value();
        let mut remaining = shares;
        if remaining > 0 {
            self.post_best(remaining);
        }
        let mut obs = observe.iter().copied().filter(|&t| t <= end).peekable();
        while let Some(o) = self.market.advance(end, self.rng) {
            while obs.next_if(|&t| t < o.time).is_some() {
                mids.push(o.mid_before);
            }
            if o.event.etype == EventType::MarketOrder {
                let volume = unit_shares(model, o.event.queue.distance());
                trades.push(Trade {
                    time: o.time,
                    price: o.price_half_ticks as f64 * tick / 2.0,
                    volume,
                });
            }
            if o.agent_fill > 0 {
                remaining -= o.agent_fill;
                self.fills.push(Execution {
                    time: o.time,
                    price_ticks: Self::half_ticks_to_ticks(o.price_half_ticks),
                    shares: o.agent_fill,
                    passive: true,
                });
            }
            if remaining == 0 {
                continue;
            }
            match tactic {
                Tactic::T1 => {
                    if o.mid_after != o.mid_before || o.agent_dropped {
                        self.market.cancel_agent(self.rng);
                        self.buy_now(remaining);
                        remaining = 0;
                    }
                }
                Tactic::T2 => {
                    if o.agent_dropped || self.peg_moved() {
                        self.market.cancel_agent(self.rng);
                        self.post_best(remaining);
                    }
                }
            }
        }
        for _ in obs {
            mids.push(self.market.mid());
        }
        if remaining > 0 {
            self.market.cancel_agent(self.rng);
            self.buy_now(remaining);
        }
    }
}

/// One run of a scheduled parent order on a fresh path.
pub fn run_tactic_path(
    model: &IntensityModel,
    rules: Option<&QueueReactive>,
    initial: &InitialBook,
    cfg: &TcaConfig,
    rng: &mut SimRng,
) -> Result<ExecutionReport> {
    cfg.validate()?;
    let state = initial.draw(model, rules, rng)?;
    let tick = model.tick_value();
    let px = |half: i64| half as f64 * tick / 2.0;
    let arrival = px(state.mid_half_ticks());
    let us = unit_shares(model, 1);
    let slices = cfg.schedule.slices(cfg.n_total, cfg.m);
    let mut agent = Agent {
        market: Market::new(model, rules, state),
        rng,
        fills: Vec::new(),
    };
    let mut all_trades = Vec::new();
    let mut theo = 0.0;
    for (i, &n_i) in slices.iter().enumerate() {
        let start_mid = px(agent.market.mid());
        let mut trades = Vec::new();
        agent.run_slice(
            cfg.tactic,
            n_i * us,
            (i + 1) as f64 * cfg.slice_duration,
            &mut trades,
            &[],
            &mut Vec::new(),
        );
        // a slice without prints is valued at its opening midprice
        let slice_vwap = vwap(&trades).unwrap_or(start_mid);
        if cfg.n_total > 0 {
            theo += n_i as f64 / cfg.n_total as f64 * slice_vwap;
        }
        all_trades.extend(trades);
    }
    let fills = agent.fills;
    let total_shares = cfg.n_total * us;
    let benchmark_price = match cfg.benchmark {
        Benchmark::Arrival => arrival,
        Benchmark::Vwap => vwap(&all_trades)?,
    };
    let executed: u64 = fills.iter().map(|f| f.shares).sum();
    let passive: u64 = fills.iter().filter(|f| f.passive).map(|f| f.shares).sum();
    let (p_exec, p_exec_theo, passive_rate) = if executed == 0 {
        (benchmark_price, benchmark_price, 0.0)
    } else {
        let notional: f64 = fills
            .iter()
            .map(|f| f.price_ticks as f64 * tick * f.shares as f64)
            .sum();
        (
            notional / executed as f64,
            theo,
            passive as f64 / executed as f64,
        )
    };
    Ok(ExecutionReport {
        fills,
        total_shares,
        arrival_price: arrival,
        benchmark_price,
        p_exec,
        p_exec_theo,
        slippage: (benchmark_price - p_exec) / benchmark_price,
        slippage_theo: (benchmark_price - p_exec_theo) / benchmark_price,
        passive_rate,
    })
}

/// Ensemble of [`run_tactic_path`] over paths `0..n_paths`.
pub fn run_tactic(
    model: &IntensityModel,
    rules: Option<&QueueReactive>,
    initial: &InitialBook,
    cfg: &TcaConfig,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<ExecutionReport>> {
    cfg.validate()?;
    (0..n_paths)
        .into_par_iter()
        .map(|i| run_tactic_path(model, rules, initial, cfg, &mut stream_rng(seed, i as u64)))
        .collect()
}

/// Midprices (half-ticks) at `times` along one slice of `n` first-limit units, plus the opening mid.
fn impact_path(
    model: &IntensityModel,
    rules: Option<&QueueReactive>,
    state: &LobState,
    tactic: Tactic,
    n: u64,
    times: &[f64],
    rng: &mut SimRng,
) -> Vec<i64> {
    let end = times.iter().copied().fold(0.0, f64::max);
    let mut agent = Agent {
        market: Market::new(model, rules, state.clone()),
        rng,
        fills: Vec::new(),
    };
    let mut mids = Vec::with_capacity(times.len());
    agent.run_slice(
        tactic,
        n * unit_shares(model, 1),
        end,
        &mut Vec::new(),
        times,
        &mut mids,
    );
    mids
}

/// Paired impact samples `(S_t^n - S_t^0) / S_0`, indexed `[path][n][t]`.
///
/// The `n = 0` reference path shares the initial book and random stream with every `n`,
/// so `n = 0` yields exactly zero.
#[allow(clippy::too_many_arguments)]
pub fn impact_samples(
    model: &IntensityModel,
    rules: Option<&QueueReactive>,
    initial: &InitialBook,
    tactic: Tactic,
    ns: &[u64],
    times: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) || times.windows(2).any(|w| w[0] > w[1])
    {
        return Err(Error::Config(
            "impact times must be finite, non-negative and sorted".into(),
        ));
    }
    (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = stream_rng(seed, p as u64);
            let state = initial.draw(model, rules, &mut rng)?;
            let s0 = state.mid_half_ticks() as f64;
            let base = impact_path(model, rules, &state, tactic, 0, times, &mut rng.clone());
            Ok(ns
                .iter()
                .map(|&n| {
                    let mids =
                        impact_path(model, rules, &state, tactic, n, times, &mut rng.clone());
                    mids.iter()
                        .zip(&base)
                        .map(|(&a, &b)| (a - b) as f64 / s0)
                        .collect()
                })
                .collect())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactPoint {
    pub t: f64,
    pub n: u64,
    pub mi: f64,
    pub mi_se: f64,
}

/// Market impact table over `ns × times`.
#[allow(clippy::too_many_arguments)]
pub fn market_impact(
    model: &IntensityModel,
    rules: Option<&QueueReactive>,
    initial: &InitialBook,
    tactic: Tactic,
    ns: &[u64],
    times: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<ImpactPoint>> {
    let samples = impact_samples(model, rules, initial, tactic, ns, times, n_paths, seed)?;
    let mut out = Vec::with_capacity(ns.len() * times.len());
    for (j, &t) in times.iter().enumerate() {
        for (i, &n) in ns.iter().enumerate() {
            let xs: Vec<f64> = samples.iter().map(|s| s[i][j]).collect();
            let (mi, mi_se) = mean_stderr(&xs);
            out.push(ImpactPoint { t, n, mi, mi_se });
        }
    }
    Ok(out)
}

pub fn write_impact_csv<W: Write>(w: W, points: &[ImpactPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t_s", "n_aes", "mi", "mi_se"])?;
    for p in points {
        out.write_record([
            p.t.to_string(),
            p.n.to_string(),
            format!("{:.12e}", p.mi),
            format!("{:.12e}", p.mi_se),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// One row per path: prices, slippages, passive rate and fill count.
pub fn write_reports_csv<W: Write>(w: W, reports: &[ExecutionReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "path",
        "arrival_price",
        "benchmark_price",
        "p_exec",
        "p_exec_theo",
        "slippage",
        "slippage_theo",
        "passive_rate",
        "executed_shares",
        "n_fills",
    ])?;
    for (i, r) in reports.iter().enumerate() {
        out.write_record([
            i.to_string(),
            format!("{:.10}", r.arrival_price),
            format!("{:.10}", r.benchmark_price),
            format!("{:.10}", r.p_exec),
            format!("{:.10}", r.p_exec_theo),
            format!("{:.12e}", r.slippage),
            format!("{:.12e}", r.slippage_theo),
            format!("{:.10}", r.passive_rate),
            r.executed_shares().to_string(),
            r.fills.len().to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Slippage samples for density estimation.
pub fn write_slippage_csv<W: Write>(w: W, reports: &[ExecutionReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["path", "slippage", "slippage_theo"])?;
    for (i, r) in reports.iter().enumerate() {
        out.write_record([
            i.to_string(),
            format!("{:.12e}", r.slippage),
            format!("{:.12e}", r.slippage_theo),
        ])?;
    }
    out.flush()?;
    Ok(())
}
