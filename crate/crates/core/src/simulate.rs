//! Event-driven simulation of the queue models.
//!
//! [`Market`] is the single engine: a continuous-time Markov chain over
//! [`LobState`], optionally with the queue-reactive reference-price dynamics
//! and optionally carrying one resting buy order of an external agent.

use std::io::Write;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::book::{
    best_ask, best_bid, event_rates_into, EventRate, EventType, IntensityModel, LobState,
    QueueIndex,
};
use crate::error::{Error, Result};
use crate::ingest::{EventRecord, RecordBuilder, Scope};
use crate::stationary::{LawSampler, StationaryLaw};

/// One order-flow event on one queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub queue: QueueIndex,
    pub etype: EventType,
}

impl Event {
    /// Applies the `±1` size change.
    #[inline]
    pub fn apply(&self, state: &mut LobState) {
        let slot = self.queue.slot(state.k());
        match self.etype {
            EventType::LimitInsert => state.q[slot] += 1,
            _ => {
                debug_assert!(
                    state.q[slot] > 0,
                    "departure from empty queue {}",
                    self.queue
                );
                state.q[slot] -= 1;
            }
        }
    }
}

/// Draws holding times and next events from the model, reusing one rate buffer.
pub struct Stepper<'m> {
    model: &'m IntensityModel,
    buf: Vec<EventRate>,
}

impl<'m> Stepper<'m> {
    pub fn new(model: &'m IntensityModel) -> Self {
        Stepper {
            model,
            buf: Vec::with_capacity(6 * model.k()),
        }
    }

    pub fn model(&self) -> &'m IntensityModel {
        self.model
    }

    /// Holding time and next event, or `None` when every rate is zero.
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&mut self, state: &LobState, rng: &mut R) -> Option<(f64, Event)> {
        event_rates_into(state, self.model, &mut self.buf);
        pick(&self.buf, rng)
    }
}

#[inline]
fn pick<R: Rng + ?Sized>(rates: &[EventRate], rng: &mut R) -> Option<(f64, Event)> {
    let total: f64 = rates.iter().map(|r| r.rate).sum();
    if !(total > 0.0) {
        return None;
    }
    let dwell = rng.sample::<f64, _>(Exp1) / total;
    let mut u = rng.random::<f64>() * total;
    let mut chosen = rates[rates.len() - 1];
    for r in rates {
        if u < r.rate {
            chosen = *r;
            break;
        }
        u -= r.rate;
    }
    Some((
        dwell,
        Event {
            queue: chosen.queue,
            etype: chosen.etype,
        },
    ))
}

/// One transition of the chain: returns the holding time and the applied event.
pub fn step<R: Rng + ?Sized>(
    state: &mut LobState,
    model: &IntensityModel,
    rng: &mut R,
) -> Result<(f64, Event)> {
    let (dt, ev) = Stepper::new(model)
        .draw(state, rng)
        .ok_or(Error::Absorbing)?;
    ev.apply(state);
    Ok((dt, ev))
}

/// Reference-price dynamics between periods.
#[derive(Debug, Clone)]
pub struct QueueReactive {
    pub theta: f64,
    pub theta_reinit: f64,
    laws: Vec<StationaryLaw>,
    samplers: Vec<LawSampler>,
}

impl QueueReactive {
    /// `laws[d - 1]` is the invariant law used to redraw queues at distance `d`.
    pub fn new(theta: f64, theta_reinit: f64, laws: Vec<StationaryLaw>) -> Result<Self> {
        for (name, p) in [("theta", theta), ("theta_reinit", theta_reinit)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if laws.is_empty()
            || laws
                .iter()
                .any(|l| l.ndim() != 1 || l.probs.iter().sum::<f64>() <= 0.0)
        {
            return Err(Error::Config(
                "need one univariate invariant law per distance".into(),
            ));
        }
        let samplers = laws.iter().map(LawSampler::new).collect();
        Ok(QueueReactive {
            theta,
            theta_reinit,
            laws,
            samplers,
        })
    }

    pub fn laws(&self) -> &[StationaryLaw] {
        &self.laws
    }

    pub fn with_thetas(&self, theta: f64, theta_reinit: f64) -> Result<Self> {
        QueueReactive::new(theta, theta_reinit, self.laws.clone())
    }

    fn redraw<R: Rng + ?Sized>(&self, distance: usize, rng: &mut R) -> u32 {
        self.samplers[(distance - 1).min(self.samplers.len() - 1)].sample(rng)
    }

    /// Book with `2k` queues drawn independently from the per-distance laws.
    pub fn draw_state<R: Rng + ?Sized>(&self, k: usize, p_ref: i64, rng: &mut R) -> LobState {
        let mut s = LobState::empty(k, p_ref);
        for q in QueueIndex::all(k) {
            s.set(q, self.redraw(q.distance(), rng));
        }
        s
    }
}

/// Starting book of a simulated path.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialBook {
    /// Drawn from the redraw laws of the queue-reactive rules, first thing on the path's stream.
    Invariant {
        p_ref: i64,
    },
    Fixed(LobState),
}

impl InitialBook {
    pub fn draw<R: Rng + ?Sized>(
        &self,
        model: &IntensityModel,
        rules: Option<&QueueReactive>,
        rng: &mut R,
    ) -> Result<LobState> {
        let state = match (self, rules) {
            (InitialBook::Fixed(s), _) => s.clone(),
            (InitialBook::Invariant { p_ref }, Some(r)) => r.draw_state(model.k(), *p_ref, rng),
            (InitialBook::Invariant { .. }, None) => {
                return Err(Error::Config(
                    "an invariant initial book needs queue-reactive laws".into(),
                ))
            }
        };
        check_initial(&state, model)?;
        Ok(state)
    }
}

/// Reference-price move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shift {
    /// `+1` for an up-move of one tick, `-1` for a down-move.
    pub direction: i8,
    pub reinit: bool,
}

/// The agent's resting buy order. Quantities are whole shares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestingOrder {
    pub queue: QueueIndex,
    /// Queue units ahead in time priority.
    pub ahead: u32,
    /// Footprint in queue units: `ceil(shares / unit_shares)`.
    pub units: u32,
    pub shares: u64,
    /// Shares per queue unit at this limit.
    pub unit_shares: u64,
}

/// Execution received by the agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fill {
    pub time: f64,
    pub price_half_ticks: i64,
    pub shares: u64,
    pub aggressive: bool,
}

/// Result of one market event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub time: f64,
    pub event: Event,
    pub mid_before: i64,
    pub mid_after: i64,
    /// Price of the event's queue before any reference-price shift.
    pub price_half_ticks: i64,
    pub shift: Option<Shift>,
    /// Shares of the agent's order executed by this event.
    pub agent_fill: u64,
    /// The agent's order was pushed out of the tracked window by a shift.
    pub agent_dropped: bool,
}

/// Single-agent market simulator.
pub struct Market<'a> {
    stepper: Stepper<'a>,
    reactive: Option<&'a QueueReactive>,
    pub state: LobState,
    pub time: f64,
    agent: Option<RestingOrder>,
}

fn round_half_up(x: f64) -> u32 {
    (x + 0.5).floor().max(0.0) as u32
}

/// Shares per queue unit at `distance`, at least one.
pub fn unit_shares(model: &IntensityModel, distance: usize) -> u64 {
    (model.aes_at(distance).round() as u64).max(1)
}

impl<'a> Market<'a> {
    pub fn new(
        model: &'a IntensityModel,
        reactive: Option<&'a QueueReactive>,
        state: LobState,
    ) -> Self {
        Market {
            stepper: Stepper::new(model),
            reactive,
            state,
            time: 0.0,
            agent: None,
        }
    }

    pub fn model(&self) -> &'a IntensityModel {
        self.stepper.model
    }

    pub fn agent(&self) -> Option<&RestingOrder> {
        self.agent.as_ref()
    }

    pub fn mid(&self) -> i64 {
        self.state.mid_half_ticks()
    }

    /// Advances to the next event if it occurs no later than `until`;
    /// otherwise moves the clock to `until` and returns `None`.
    pub fn advance<R: Rng + ?Sized>(&mut self, until: f64, rng: &mut R) -> Option<Outcome> {
        let buf = &mut self.stepper.buf;
        event_rates_into(&self.state, self.stepper.model, buf);
        if let Some(a) = &self.agent {
            let q = self.state.get(a.queue);
            if let Some(r) = buf
                .iter_mut()
                .find(|r| r.queue == a.queue && r.etype == EventType::Cancel)
            {
                r.rate *= (q - a.units) as f64 / q as f64;
            }
        }
        let drawn = pick(buf, rng);
        let Some((dt, event)) = drawn.filter(|(dt, _)| self.time + dt <= until) else {
            self.time = self.time.max(until);
            return None;
        };
        self.time += dt;
        let mid_before = self.mid();
        let before = self.state.clone();
        let mut agent_fill = 0;
        match (&mut self.agent, event.etype) {
            (Some(a), EventType::Cancel) if a.queue == event.queue => {
                let others = self.state.get(a.queue) - a.units;
                if a.ahead > 0 && rng.random_range(0..others) < a.ahead {
                    a.ahead -= 1;
                }
            }
            (Some(a), EventType::MarketOrder) if a.queue == event.queue => {
                if a.ahead > 0 {
                    a.ahead -= 1;
                } else {
                    agent_fill = a.unit_shares.min(a.shares);
                    a.shares -= agent_fill;
                    a.units -= 1;
                }
            }
            _ => {}
        }
        event.apply(&mut self.state);
        if self.agent.is_some_and(|a| a.units == 0) {
            self.agent = None;
        }
        let (shift, agent_dropped) = self.react(&before, event, rng);
        let price_half_ticks = before.price_half_ticks(event.queue);
        Some(Outcome {
            time: self.time,
            event,
            mid_before,
            mid_after: self.mid(),
            price_half_ticks,
            shift,
            agent_fill,
            agent_dropped,
        })
    }

    /// Applies the reference-price rule after `event` turned `before` into the current state.
    fn react<R: Rng + ?Sized>(
        &mut self,
        before: &LobState,
        event: Event,
        rng: &mut R,
    ) -> (Option<Shift>, bool) {
        let Some(rules) = self.reactive else {
            return (None, false);
        };
        let Some(direction) = trigger(before, &self.state, event) else {
            return (None, false);
        };
        if rng.random::<f64>() >= rules.theta {
            return (None, false);
        }
        self.shift(direction, rng)
    }

    /// Moves `p_ref` by one tick in `direction`, renormalizing queues and redrawing as required.
    fn shift<R: Rng + ?Sized>(&mut self, direction: i8, rng: &mut R) -> (Option<Shift>, bool) {
        let rules = self.reactive.expect("shift needs reactive rules");
        let model = self.stepper.model;
        let k = self.state.k();
        let old = self.state.clone();
        let src = |new: QueueIndex| -> Option<QueueIndex> {
            let v = new.value() + direction as i32;
            let v = if v == 0 { direction as i32 } else { v };
            QueueIndex::new(v, k).ok()
        };
        let ratio = |from: QueueIndex, to: QueueIndex| {
            model.aes_at(from.distance()) / model.aes_at(to.distance())
        };
        let mut dropped = false;
        let mut new_agent = None;
        if let Some(a) = self.agent {
            let v = a.queue.value() - direction as i32;
            let v = if v == 0 { -(direction as i32) } else { v };
            match QueueIndex::new(v, k) {
                Ok(dest) => {
                    let r = ratio(a.queue, dest);
                    let ambient = round_half_up((old.get(a.queue) - a.units) as f64 * r);
                    let us = unit_shares(model, dest.distance());
                    new_agent = Some(RestingOrder {
                        queue: dest,
                        ahead: round_half_up(a.ahead as f64 * r).min(ambient),
                        units: a.shares.div_ceil(us) as u32,
                        shares: a.shares,
                        unit_shares: us,
                    });
                }
                Err(_) => dropped = true,
            }
        }
        for dest in QueueIndex::all(k) {
            let v = match src(dest) {
                Some(from) => {
                    let held = new_agent
                        .filter(|a| a.queue == dest)
                        .map_or(0, |_| self.agent.unwrap().units);
                    round_half_up((old.get(from) - held) as f64 * ratio(from, dest))
                }
                None => rules.redraw(dest.distance(), rng),
            };
            self.state.set(dest, v);
        }
        // the first queue on the side the price moved away from starts empty
        self.state.set(QueueIndex::raw(-direction), 0);
        self.state.p_ref += 2 * direction as i64;
        let reinit = rng.random::<f64>() < rules.theta_reinit;
        if reinit {
            for dest in QueueIndex::all(k) {
                let v = rules.redraw(dest.distance(), rng);
                self.state.set(dest, v);
            }
        }
        if let Some(mut a) = new_agent {
            let ambient = self.state.get(a.queue);
            a.ahead = a.ahead.min(ambient);
            self.state.set(a.queue, ambient + a.units);
            new_agent = Some(a);
        }
        self.agent = new_agent;
        (Some(Shift { direction, reinit }), dropped)
    }

    /// Posts a buy order of `shares` at the back of `queue` (a bid queue).
    pub fn post(&mut self, queue: QueueIndex, shares: u64, rng: &mut impl Rng) -> Option<Shift> {
        assert!(!queue.is_ask(), "the agent only rests buy orders");
        assert!(
            self.agent.is_none(),
            "the agent already has a resting order"
        );
        if shares == 0 {
            return None;
        }
        let us = unit_shares(self.stepper.model, queue.distance());
        let units = shares.div_ceil(us) as u32;
        let before = self.state.clone();
        let ahead = self.state.get(queue);
        self.state.set(queue, ahead + units);
        self.agent = Some(RestingOrder {
            queue,
            ahead,
            units,
            shares,
            unit_shares: us,
        });
        let ev = Event {
            queue,
            etype: EventType::LimitInsert,
        };
        self.react(&before, ev, rng).0
    }

    /// Cancels the resting order; returns its unfilled shares.
    pub fn cancel_agent(&mut self, rng: &mut impl Rng) -> (u64, Option<Shift>) {
        let Some(a) = self.agent.take() else {
            return (0, None);
        };
        let before = self.state.clone();
        let q = self.state.get(a.queue);
        self.state.set(a.queue, q - a.units);
        let ev = Event {
            queue: a.queue,
            etype: EventType::Cancel,
        };
        let shift = if self.state.get(a.queue) == 0 {
            self.react(&before, ev, rng).0
        } else {
            None
        };
        (a.shares, shift)
    }

    /// Buys `shares` by walking the ask side one queue unit at a time.
    ///
    /// When no ask remains inside the window the reference price is forced up one tick.
    pub fn market_buy(&mut self, shares: u64, rng: &mut impl Rng) -> (Vec<Fill>, Vec<Shift>) {
        let mut left = shares;
        let mut fills: Vec<Fill> = Vec::new();
        let mut shifts = Vec::new();
        let mut forced = 0;
        while left > 0 {
            let Some(ask) = best_ask(&self.state) else {
                if self.reactive.is_some() && forced < 64 {
                    forced += 1;
                    shifts.extend(self.shift(1, rng).0);
                    continue;
                }
                // nothing to lift anywhere: execute beyond the window
                let price = self.state.p_ref + 2 * self.state.k() as i64 + 1;
                fills.push(Fill {
                    time: self.time,
                    price_half_ticks: price,
                    shares: left,
                    aggressive: true,
                });
                break;
            };
            let price = self.state.price_half_ticks(ask);
            let take = unit_shares(self.stepper.model, ask.distance()).min(left);
            left -= take;
            match fills.last_mut() {
                Some(f) if f.price_half_ticks == price => f.shares += take,
                _ => fills.push(Fill {
                    time: self.time,
                    price_half_ticks: price,
                    shares: take,
                    aggressive: true,
                }),
            }
            let before = self.state.clone();
            let ev = Event {
                queue: ask,
                etype: EventType::MarketOrder,
            };
            ev.apply(&mut self.state);
            if let (Some(s), _) = self.react(&before, ev, rng) {
                shifts.push(s);
            }
        }
        (fills, shifts)
    }
}

/// Direction of a candidate reference-price move caused by `event`, before the `θ` draw.
///
/// Candidates: depletion of the best quote on either side, or an insertion into an
/// empty first queue while the opposite first queue is also empty.
pub fn trigger(before: &LobState, after: &LobState, event: Event) -> Option<i8> {
    let q1 = QueueIndex::raw(1);
    let qm1 = QueueIndex::raw(-1);
    match event.etype {
        EventType::LimitInsert => {
            if event.queue == qm1 && before.get(qm1) == 0 && before.get(q1) == 0 {
                Some(1)
            } else if event.queue == q1 && before.get(q1) == 0 && before.get(qm1) == 0 {
                Some(-1)
            } else {
                None
            }
        }
        EventType::Cancel | EventType::MarketOrder => {
            if after.get(event.queue) != 0 {
                return None;
            }
            if event.queue.is_ask() && best_ask(before) == Some(event.queue) {
                Some(1)
            } else if !event.queue.is_ask() && best_bid(before) == Some(event.queue) {
                Some(-1)
            } else {
                None
            }
        }
    }
}

/// Entry of a simulated event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathEvent {
    Order {
        time: f64,
        queue: QueueIndex,
        etype: EventType,
    },
    Shift {
        time: f64,
        direction: i8,
        reinit: bool,
        state: LobState,
    },
}

impl PathEvent {
    pub fn time(&self) -> f64 {
        match self {
            PathEvent::Order { time, .. } | PathEvent::Shift { time, .. } => *time,
        }
    }
}

/// A simulated trajectory; states are recovered by replaying `events` from `initial`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPath {
    pub seed: Option<u64>,
    pub tick_value: f64,
    pub horizon: f64,
    pub initial: LobState,
    pub events: Vec<PathEvent>,
    pub terminal: LobState,
}

impl SimPath {
    /// Calls `f(t0, t1, state)` for every constant stretch `[t0, t1)` of the path.
    pub fn for_each_stretch(&self, mut f: impl FnMut(f64, f64, &LobState)) {
        let mut state = self.initial.clone();
        let mut t = 0.0;
        for e in &self.events {
            f(t, e.time(), &state);
            t = e.time();
            match e {
                PathEvent::Order { queue, etype, .. } => Event {
                    queue: *queue,
                    etype: *etype,
                }
                .apply(&mut state),
                PathEvent::Shift { state: s, .. } => state.clone_from(s),
            }
        }
        f(t, self.horizon, &state);
    }

    /// `(time, mid)` at the start and at every midprice change, in half-ticks.
    pub fn mid_path(&self) -> Vec<(f64, i64)> {
        let mut out: Vec<(f64, i64)> = Vec::new();
        self.for_each_stretch(|t0, _, s| {
            let m = s.mid_half_ticks();
            if out.last().is_none_or(|l| l.1 != m) {
                out.push((t0, m));
            }
        });
        out
    }

    /// `(time, p_ref)` at the start and at every reference-price move, in half-ticks.
    pub fn pref_path(&self) -> Vec<(f64, i64)> {
        let mut out = vec![(0.0, self.initial.p_ref)];
        for e in &self.events {
            if let PathEvent::Shift { time, state, .. } = e {
                out.push((*time, state.p_ref));
            }
        }
        out
    }

    pub fn n_orders(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, PathEvent::Order { .. }))
            .count()
    }

    /// Event records as the estimators expect them, with exposure clocks restarted at shifts.
    pub fn event_records(&self, scope: Scope) -> Vec<EventRecord> {
        let mut state = self.initial.clone();
        let mut builder = RecordBuilder::new(scope, self.initial.k(), 0.0);
        let mut out = Vec::new();
        for e in &self.events {
            match e {
                PathEvent::Order { time, queue, etype } => {
                    if let Some(r) = builder.push(*time, &state, *queue, *etype) {
                        out.push(r);
                    }
                    Event {
                        queue: *queue,
                        etype: *etype,
                    }
                    .apply(&mut state);
                }
                PathEvent::Shift { time, state: s, .. } => {
                    state.clone_from(s);
                    builder.reset(*time);
                }
            }
        }
        out
    }

    /// Writes `time,kind,queue,etype,p_ref,mid,q` rows; `q` is the `;`-joined state after the event.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["time", "kind", "queue", "etype", "p_ref", "mid", "q"])?;
        let join = |s: &LobState| {
            s.q.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(";")
        };
        let mut state = self.initial.clone();
        wr.write_record([
            "0",
            "initial",
            "",
            "",
            &state.p_ref.to_string(),
            &state.mid_half_ticks().to_string(),
            &join(&state),
        ])?;
        for e in &self.events {
            let (kind, queue, etype) = match e {
                PathEvent::Order { queue, etype, .. } => {
                    Event {
                        queue: *queue,
                        etype: *etype,
                    }
                    .apply(&mut state);
                    ("order", queue.value().to_string(), etype.code().to_string())
                }
                PathEvent::Shift {
                    direction,
                    reinit,
                    state: s,
                    ..
                } => {
                    state.clone_from(s);
                    let kind = if *reinit { "shift_reinit" } else { "shift" };
                    (kind, String::new(), format!("{direction:+}"))
                }
            };
            wr.write_record([
                &format!("{:.9}", e.time()),
                kind,
                &queue,
                &etype,
                &state.p_ref.to_string(),
                &state.mid_half_ticks().to_string(),
                &join(&state),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn run_logged<R: Rng + ?Sized>(mut market: Market<'_>, horizon: f64, rng: &mut R) -> SimPath {
    let initial = market.state.clone();
    let mut events = Vec::new();
    while let Some(o) = market.advance(horizon, rng) {
        events.push(PathEvent::Order {
            time: o.time,
            queue: o.event.queue,
            etype: o.event.etype,
        });
        if let Some(s) = o.shift {
            events.push(PathEvent::Shift {
                time: o.time,
                direction: s.direction,
                reinit: s.reinit,
                state: market.state.clone(),
            });
        }
    }
    SimPath {
        seed: None,
        tick_value: market.model().tick_value(),
        horizon,
        initial,
        events,
        terminal: market.state,
    }
}

/// Intra-period path with the reference price held fixed.
pub fn simulate_period<R: Rng + ?Sized>(
    initial: &LobState,
    model: &IntensityModel,
    horizon: f64,
    rng: &mut R,
) -> Result<SimPath> {
    check_initial(initial, model)?;
    Ok(run_logged(
        Market::new(model, None, initial.clone()),
        horizon,
        rng,
    ))
}

/// Path of the queue-reactive model: intra-period dynamics plus reference-price moves.
pub fn simulate_queue_reactive<R: Rng + ?Sized>(
    initial: &LobState,
    model: &IntensityModel,
    rules: &QueueReactive,
    horizon: f64,
    rng: &mut R,
) -> Result<SimPath> {
    check_initial(initial, model)?;
    Ok(run_logged(
        Market::new(model, Some(rules), initial.clone()),
        horizon,
        rng,
    ))
}

fn check_initial(initial: &LobState, model: &IntensityModel) -> Result<()> {
    if initial.k() != model.k() {
        return Err(Error::BadInitial(format!(
            "state has K = {}, model has K = {}",
            initial.k(),
            model.k()
        )));
    }
    if initial.p_ref.rem_euclid(2) != 1 {
        return Err(Error::BadInitial(format!(
            "p_ref must be odd in half-ticks, got {}",
            initial.p_ref
        )));
    }
    Ok(())
}

/// Summary statistics of one path.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PathStats {
    pub n_returns: u64,
    pub sum_r: f64,
    pub sum_r2: f64,
    pub n_moves: u64,
    pub n_continuations: u64,
    pub n_alternations: u64,
}

impl PathStats {
    /// Standard deviation of the binned log-returns of the midprice.
    pub fn volatility(&self) -> f64 {
        if self.n_returns < 2 {
            return 0.0;
        }
        let n = self.n_returns as f64;
        let mean = self.sum_r / n;
        ((self.sum_r2 - n * mean * mean).max(0.0) / (n - 1.0)).sqrt()
    }

    /// Mean reversion ratio `N_c / (2 N_a)`; infinite without alternations.
    pub fn eta(&self) -> Result<f64> {
        if self.n_moves < 2 {
            return Err(Error::NoMoves);
        }
        if self.n_alternations == 0 {
            return Ok(f64::INFINITY);
        }
        Ok(self.n_continuations as f64 / (2.0 * self.n_alternations as f64))
    }

    pub fn merge(&mut self, other: &PathStats) {
        self.n_returns += other.n_returns;
        self.sum_r += other.sum_r;
        self.sum_r2 += other.sum_r2;
        self.n_moves += other.n_moves;
        self.n_continuations += other.n_continuations;
        self.n_alternations += other.n_alternations;
    }
}

/// Streaming accumulator of [`PathStats`] over fixed return bins.
#[derive(Debug, Clone)]
pub struct StatsCollector {
    tick_value: f64,
    bin: f64,
    next_edge: f64,
    bin_open_mid: i64,
    mid: i64,
    last_direction: Option<i8>,
    stats: PathStats,
}

impl StatsCollector {
    pub fn new(tick_value: f64, bin: f64, start_mid: i64) -> Self {
        StatsCollector {
            tick_value,
            bin,
            next_edge: bin,
            bin_open_mid: start_mid,
            mid: start_mid,
            last_direction: None,
            stats: PathStats::default(),
        }
    }

    fn close_bins(&mut self, t: f64) {
        while self.next_edge <= t {
            let p0 = self.bin_open_mid as f64 * self.tick_value / 2.0;
            let p1 = self.mid as f64 * self.tick_value / 2.0;
            let r = (p1 / p0).ln();
            self.stats.n_returns += 1;
            self.stats.sum_r += r;
            self.stats.sum_r2 += r * r;
            self.bin_open_mid = self.mid;
            self.next_edge += self.bin;
        }
    }

    /// Records a midprice set at time `t`, and a reference-price move if any.
    pub fn observe(&mut self, t: f64, mid_after: i64, shift: Option<Shift>) {
        self.close_bins(t);
        self.mid = mid_after;
        if let Some(s) = shift {
            self.stats.n_moves += 1;
            match self.last_direction {
                Some(d) if d == s.direction => self.stats.n_continuations += 1,
                Some(_) => self.stats.n_alternations += 1,
                None => {}
            }
            self.last_direction = Some(s.direction);
        }
    }

    pub fn finish(mut self, horizon: f64) -> PathStats {
        self.close_bins(horizon);
        self.stats
    }
}

/// Statistics of a logged path with returns over `bin` seconds.
pub fn path_stats(path: &SimPath, bin: f64) -> PathStats {
    let mut c = StatsCollector::new(path.tick_value, bin, path.initial.mid_half_ticks());
    let mut state = path.initial.clone();
    for e in &path.events {
        match e {
            PathEvent::Order { time, queue, etype } => {
                Event {
                    queue: *queue,
                    etype: *etype,
                }
                .apply(&mut state);
                c.observe(*time, state.mid_half_ticks(), None);
            }
            PathEvent::Shift {
                time,
                direction,
                reinit,
                state: s,
            } => {
                state.clone_from(s);
                c.observe(
                    *time,
                    state.mid_half_ticks(),
                    Some(Shift {
                        direction: *direction,
                        reinit: *reinit,
                    }),
                );
            }
        }
    }
    c.finish(path.horizon)
}

/// Statistics of a fresh queue-reactive path without storing its log.
pub fn queue_reactive_stats<R: Rng + ?Sized>(
    initial: &LobState,
    model: &IntensityModel,
    rules: &QueueReactive,
    horizon: f64,
    bin: f64,
    rng: &mut R,
) -> PathStats {
    let mut market = Market::new(model, Some(rules), initial.clone());
    let mut c = StatsCollector::new(model.tick_value(), bin, market.mid());
    while let Some(o) = market.advance(horizon, rng) {
        c.observe(o.time, o.mid_after, o.shift);
    }
    c.finish(horizon)
}
