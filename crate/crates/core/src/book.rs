//! State space, event algebra and generator of the intra-period queue models.
//!
//! The book is a vector of `2K` queue sizes `q_{-K}, ..., q_{-1}, q_1, ..., q_K`
//! in average-event-size (AES) units, centred on a reference price `p_ref`.
//! Queue `Q_i` sits `i - 0.5` ticks away from `p_ref`: asks for `i > 0`,
//! bids for `i < 0`. Prices are kept in integer half-ticks so that `p_ref`
//! (which always falls between two ticks) is exact.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported number of limits per side.
pub const MAX_K: usize = 16;

/// Default maximal tabulated queue size, in AES units.
pub const DEFAULT_CAP: usize = 30;

/// Signed queue index in `{-K, ..., -1, 1, ..., K}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i32", into = "i32")]
pub struct QueueIndex(i8);

impl QueueIndex {
    pub fn new(value: i32, k: usize) -> Result<Self> {
        if value == 0 || value.unsigned_abs() as usize > k || k > MAX_K {
            return Err(Error::BadQueueIndex { value, k });
        }
        Ok(QueueIndex(value as i8))
    }

    pub(crate) const fn raw(value: i8) -> Self {
        QueueIndex(value)
    }

    pub fn value(self) -> i32 {
        self.0 as i32
    }

    /// Distance class `|i|`, i.e. the limit number on its side.
    pub fn distance(self) -> usize {
        self.0.unsigned_abs() as usize
    }

    pub fn is_ask(self) -> bool {
        self.0 > 0
    }

    pub fn mirrored(self) -> Self {
        QueueIndex(-self.0)
    }

    /// Position in the flat `q` vector for a book with `k` limits per side.
    pub fn slot(self, k: usize) -> usize {
        if self.0 < 0 {
            (k as i32 + self.0 as i32) as usize
        } else {
            k + self.0 as usize - 1
        }
    }

    pub fn from_slot(slot: usize, k: usize) -> Self {
        if slot < k {
            QueueIndex(slot as i8 - k as i8)
        } else {
            QueueIndex((slot - k + 1) as i8)
        }
    }

    /// Iterates `-K..=-1, 1..=K`.
    pub fn all(k: usize) -> impl Iterator<Item = QueueIndex> {
        (0..2 * k).map(move |s| QueueIndex::from_slot(s, k))
    }
}

impl TryFrom<i32> for QueueIndex {
    type Error = String;

    fn try_from(value: i32) -> std::result::Result<Self, Self::Error> {
        if value == 0 || value.unsigned_abs() as usize > MAX_K {
            Err(format!("invalid queue index {value}"))
        } else {
            Ok(QueueIndex(value as i8))
        }
    }
}

impl From<QueueIndex> for i32 {
    fn from(q: QueueIndex) -> i32 {
        q.value()
    }
}

impl fmt::Display for QueueIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventType {
    LimitInsert,
    Cancel,
    MarketOrder,
}

impl EventType {
    pub const ALL: [EventType; 3] = [
        EventType::LimitInsert,
        EventType::Cancel,
        EventType::MarketOrder,
    ];

    pub fn direction(self) -> i8 {
        match self {
            EventType::LimitInsert => 1,
            EventType::Cancel | EventType::MarketOrder => -1,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            EventType::LimitInsert => "L",
            EventType::Cancel => "C",
            EventType::MarketOrder => "M",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "L" => Some(EventType::LimitInsert),
            "C" => Some(EventType::Cancel),
            "M" => Some(EventType::MarketOrder),
            _ => None,
        }
    }
}

/// Queue sizes plus reference price.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LobState {
    /// Sizes of `Q_{-K}, ..., Q_{-1}, Q_1, ..., Q_K` in AES units.
    pub q: Vec<u32>,
    /// Reference price in half-ticks. Always odd: `p_ref` lies midway between two ticks.
    pub p_ref: i64,
}

impl LobState {
    pub fn new(q: Vec<u32>, p_ref: i64) -> Result<Self> {
        if q.is_empty() || !q.len().is_multiple_of(2) || q.len() / 2 > MAX_K {
            return Err(Error::InvalidModel(format!(
                "state must hold 2K queues, got {}",
                q.len()
            )));
        }
        if p_ref.rem_euclid(2) != 1 {
            return Err(Error::InvalidModel(format!(
                "p_ref must be an odd number of half-ticks, got {p_ref}"
            )));
        }
        Ok(LobState { q, p_ref })
    }

    /// Empty book of `k` limits per side.
    pub fn empty(k: usize, p_ref: i64) -> Self {
        LobState {
            q: vec![0; 2 * k],
            p_ref,
        }
    }

    pub fn k(&self) -> usize {
        self.q.len() / 2
    }

    pub fn get(&self, i: QueueIndex) -> u32 {
        self.q[i.slot(self.k())]
    }

    pub fn set(&mut self, i: QueueIndex, value: u32) {
        let k = self.k();
        self.q[i.slot(k)] = value;
    }

    /// Queue at signed index `i`, without range checks beyond slicing.
    pub(crate) fn at(&self, i: i32) -> u32 {
        self.get(QueueIndex(i as i8))
    }

    /// Price of queue `i` in half-ticks.
    pub fn price_half_ticks(&self, i: QueueIndex) -> i64 {
        let v = i.value() as i64;
        if v > 0 {
            self.p_ref + 2 * v - 1
        } else {
            self.p_ref + 2 * v + 1
        }
    }

    /// Midprice in half-ticks. An empty side is priced one limit beyond `Q_{±K}`.
    pub fn mid_half_ticks(&self) -> i64 {
        let k = self.k() as i64;
        let ia = best_ask(self).map_or(k + 1, |i| i.value() as i64);
        let ib = best_bid(self).map_or(k + 1, |i| i.distance() as i64);
        self.p_ref + ia - ib
    }

    /// Bid/ask mirror image: `q'_i = q_{-i}`, `p_ref' = -p_ref`.
    pub fn mirrored(&self) -> Self {
        let mut q = self.q.clone();
        q.reverse();
        LobState {
            q,
            p_ref: -self.p_ref,
        }
    }
}

/// First non-empty ask queue.
pub fn best_ask(state: &LobState) -> Option<QueueIndex> {
    (1..=state.k() as i32)
        .find(|&i| state.at(i) > 0)
        .map(|i| QueueIndex(i as i8))
}

/// First non-empty bid queue.
pub fn best_bid(state: &LobState) -> Option<QueueIndex> {
    (1..=state.k() as i32)
        .find(|&i| state.at(-i) > 0)
        .map(|i| QueueIndex(-(i as i8)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "model_i")]
    ModelI,
    #[serde(rename = "model_iia")]
    ModelIIa,
    #[serde(rename = "model_iib")]
    ModelIIb,
    #[serde(rename = "poisson")]
    PoissonBaseline,
}

impl ModelKind {
    /// Models where market orders hit the best quote among `Q_{±1}`, `Q_{±2}`.
    pub fn routes_market_orders(self) -> bool {
        matches!(self, ModelKind::ModelIIa | ModelKind::ModelIIb)
    }
}

/// Regime thresholds `m < l` used by `S_{m,l}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeThresholds {
    pub m: u32,
    pub l: u32,
}

impl RegimeThresholds {
    pub fn new(m: u32, l: u32) -> Result<Self> {
        if m == 0 || m >= l {
            return Err(Error::InvalidModel(format!(
                "regime thresholds need 0 < m < l, got m={m}, l={l}"
            )));
        }
        Ok(RegimeThresholds { m, l })
    }

    pub fn classify(&self, x: u32) -> SizeClass {
        if x == 0 {
            SizeClass::Empty
        } else if x <= self.m {
            SizeClass::Small
        } else if x <= self.l {
            SizeClass::Usual
        } else {
            SizeClass::Large
        }
    }
}

/// Range of the opposite first queue: empty, small `(0, m]`, usual `(m, l]`, large `(l, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SizeClass {
    Empty,
    Small,
    Usual,
    Large,
}

impl SizeClass {
    pub const ALL: [SizeClass; 4] = [
        SizeClass::Empty,
        SizeClass::Small,
        SizeClass::Usual,
        SizeClass::Large,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }
}

/// Conditioning key of an intensity table. Serialized as its key string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Regime {
    All,
    FirstEmpty,
    FirstPositive,
    Opposite(SizeClass),
}

impl Regime {
    pub fn key(self) -> &'static str {
        match self {
            Regime::All => "all",
            Regime::FirstEmpty => "q1_empty",
            Regime::FirstPositive => "q1_positive",
            Regime::Opposite(SizeClass::Empty) => "opp_empty",
            Regime::Opposite(SizeClass::Small) => "opp_small",
            Regime::Opposite(SizeClass::Usual) => "opp_usual",
            Regime::Opposite(SizeClass::Large) => "opp_large",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Some(match key {
            "all" => Regime::All,
            "q1_empty" => Regime::FirstEmpty,
            "q1_positive" => Regime::FirstPositive,
            "opp_empty" => Regime::Opposite(SizeClass::Empty),
            "opp_small" => Regime::Opposite(SizeClass::Small),
            "opp_usual" => Regime::Opposite(SizeClass::Usual),
            "opp_large" => Regime::Opposite(SizeClass::Large),
            _ => return None,
        })
    }

    /// Regimes a table at `distance` must provide for a model of `kind`.
    pub fn required(kind: ModelKind, distance: usize) -> Vec<Regime> {
        match (kind, distance) {
            (ModelKind::ModelIIa | ModelKind::ModelIIb, 2) => {
                vec![Regime::FirstEmpty, Regime::FirstPositive]
            }
            (ModelKind::ModelIIb, 1) => SizeClass::ALL
                .iter()
                .map(|&c| Regime::Opposite(c))
                .collect(),
            _ => vec![Regime::All],
        }
    }
}

impl TryFrom<String> for Regime {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        Regime::from_key(&s).ok_or_else(|| format!("unknown regime `{s}`"))
    }
}

impl From<Regime> for String {
    fn from(r: Regime) -> String {
        r.key().to_string()
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Rates by queue size `0..=cap` for the three flows. Lookups beyond `cap` clamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub limit: Vec<f64>,
    pub cancel: Vec<f64>,
    pub market: Vec<f64>,
}

impl RateTable {
    pub fn zeros(cap: usize) -> Self {
        RateTable {
            limit: vec![0.0; cap + 1],
            cancel: vec![0.0; cap + 1],
            market: vec![0.0; cap + 1],
        }
    }

    pub fn constant(cap: usize, limit: f64, cancel: f64, market: f64) -> Self {
        RateTable {
            limit: vec![limit; cap + 1],
            cancel: vec![cancel; cap + 1],
            market: vec![market; cap + 1],
        }
    }

    pub fn from_fn(cap: usize, mut f: impl FnMut(usize) -> (f64, f64, f64)) -> Self {
        let mut t = RateTable::zeros(cap);
        for n in 0..=cap {
            let (l, c, m) = f(n);
            t.limit[n] = l;
            t.cancel[n] = c;
            t.market[n] = m;
        }
        t
    }

    pub fn cap(&self) -> usize {
        self.limit.len() - 1
    }

    #[inline]
    fn idx(&self, n: u32) -> usize {
        (n as usize).min(self.limit.len() - 1)
    }

    #[inline]
    pub fn limit_at(&self, n: u32) -> f64 {
        self.limit[self.idx(n)]
    }

    #[inline]
    pub fn cancel_at(&self, n: u32) -> f64 {
        self.cancel[self.idx(n)]
    }

    #[inline]
    pub fn market_at(&self, n: u32) -> f64 {
        self.market[self.idx(n)]
    }

    pub fn rate(&self, etype: EventType, n: u32) -> f64 {
        match etype {
            EventType::LimitInsert => self.limit_at(n),
            EventType::Cancel => self.cancel_at(n),
            EventType::MarketOrder => self.market_at(n),
        }
    }

    pub fn rate_mut(&mut self, etype: EventType) -> &mut Vec<f64> {
        match etype {
            EventType::LimitInsert => &mut self.limit,
            EventType::Cancel => &mut self.cancel,
            EventType::MarketOrder => &mut self.market,
        }
    }

    fn check(&self, cap: usize, what: &str) -> Result<()> {
        for (name, v) in [
            ("limit", &self.limit),
            ("cancel", &self.cancel),
            ("market", &self.market),
        ] {
            if v.len() != cap + 1 {
                return Err(Error::InvalidModel(format!(
                    "{what}: {name} table has {} entries, expected {}",
                    v.len(),
                    cap + 1
                )));
            }
            if let Some(bad) = v.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
                return Err(Error::InvalidModel(format!(
                    "{what}: {name} rate {bad} is not a finite nonnegative number"
                )));
            }
        }
        Ok(())
    }
}

/// Tabulated intensities of one distance class, shared by `Q_i` and `Q_{-i}`.
#[derive(Debug, Clone, PartialEq)]
pub enum QueueTables {
    Single(RateTable),
    /// Split on `1_{q_{±1} > 0}`; used at the second limit of Models II.
    FirstQueue {
        empty: RateTable,
        positive: RateTable,
    },
    /// Split on `S_{m,l}(q_{∓1})`; used at the first limit of Model II^b.
    Opposite([RateTable; 4]),
}

impl QueueTables {
    pub fn get(&self, regime: Regime) -> Option<&RateTable> {
        match (self, regime) {
            (QueueTables::Single(t), Regime::All) => Some(t),
            (QueueTables::FirstQueue { empty, .. }, Regime::FirstEmpty) => Some(empty),
            (QueueTables::FirstQueue { positive, .. }, Regime::FirstPositive) => Some(positive),
            (QueueTables::Opposite(ts), Regime::Opposite(c)) => Some(&ts[c.ordinal()]),
            _ => None,
        }
    }

    pub fn iter(&self) -> Vec<(Regime, &RateTable)> {
        match self {
            QueueTables::Single(t) => vec![(Regime::All, t)],
            QueueTables::FirstQueue { empty, positive } => {
                vec![
                    (Regime::FirstEmpty, empty),
                    (Regime::FirstPositive, positive),
                ]
            }
            QueueTables::Opposite(ts) => SizeClass::ALL
                .iter()
                .map(|&c| (Regime::Opposite(c), &ts[c.ordinal()]))
                .collect(),
        }
    }

    fn from_map(
        kind: ModelKind,
        distance: usize,
        mut map: BTreeMap<Regime, RateTable>,
    ) -> Result<Self> {
        let required = Regime::required(kind, distance);
        for r in &required {
            if !map.contains_key(r) {
                return Err(Error::UnknownRegime {
                    distance,
                    regime: r.key().to_string(),
                });
            }
        }
        if let Some(extra) = map.keys().find(|r| !required.contains(r)) {
            return Err(Error::InvalidModel(format!(
                "queue {distance}: unexpected regime `{extra}` for {kind:?}"
            )));
        }
        let mut take = |r: Regime| map.remove(&r).expect("checked above");
        Ok(match required.as_slice() {
            [Regime::All] => QueueTables::Single(take(Regime::All)),
            [Regime::FirstEmpty, Regime::FirstPositive] => QueueTables::FirstQueue {
                empty: take(Regime::FirstEmpty),
                positive: take(Regime::FirstPositive),
            },
            _ => QueueTables::Opposite(SizeClass::ALL.map(|c| take(Regime::Opposite(c)))),
        })
    }
}

/// Tabulated state-dependent intensities for one of the intra-period models.
///
/// Tables are stored per distance class `|i|` and apply to both sides, so
/// bid-ask symmetry holds by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityModel {
    kind: ModelKind,
    k: usize,
    tick_value: f64,
    aes: Vec<f64>,
    cap: usize,
    thresholds: Option<RegimeThresholds>,
    tables: Vec<QueueTables>,
}

impl IntensityModel {
    /// Builds and validates a model. `tables[d - 1]` maps each regime of distance `d` to its rates.
    pub fn new(
        kind: ModelKind,
        tick_value: f64,
        aes: Vec<f64>,
        cap: usize,
        thresholds: Option<RegimeThresholds>,
        tables: Vec<BTreeMap<Regime, RateTable>>,
    ) -> Result<Self> {
        let k = tables.len();
        if k == 0 || k > MAX_K {
            return Err(Error::InvalidModel(format!(
                "K must be in 1..={MAX_K}, got {k}"
            )));
        }
        if kind.routes_market_orders() && k < 2 {
            return Err(Error::InvalidModel(
                "Models II need at least two limits per side".into(),
            ));
        }
        if aes.len() != k || aes.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::InvalidModel(format!(
                "aes must hold {k} positive sizes"
            )));
        }
        if !(tick_value.is_finite() && tick_value > 0.0) {
            return Err(Error::InvalidModel(format!(
                "tick value must be positive, got {tick_value}"
            )));
        }
        if kind == ModelKind::ModelIIb && thresholds.is_none() {
            return Err(Error::InvalidModel(
                "Model II^b requires regime thresholds m, l".into(),
            ));
        }
        let tables = tables
            .into_iter()
            .enumerate()
            .map(|(i, map)| QueueTables::from_map(kind, i + 1, map))
            .collect::<Result<Vec<_>>>()?;
        for (i, qt) in tables.iter().enumerate() {
            for (r, t) in qt.iter() {
                t.check(cap, &format!("queue {} regime {}", i + 1, r))?;
            }
        }
        Ok(IntensityModel {
            kind,
            k,
            tick_value,
            aes,
            cap,
            thresholds,
            tables,
        })
    }

    /// Model I / Poisson constructor from one table per distance.
    pub fn independent(
        kind: ModelKind,
        tick_value: f64,
        aes: Vec<f64>,
        tables: Vec<RateTable>,
    ) -> Result<Self> {
        let cap = tables.first().map_or(0, |t| t.cap());
        let maps = tables
            .into_iter()
            .map(|t| BTreeMap::from([(Regime::All, t)]))
            .collect();
        IntensityModel::new(kind, tick_value, aes, cap, None, maps)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn tick_value(&self) -> f64 {
        self.tick_value
    }

    pub fn aes(&self) -> &[f64] {
        &self.aes
    }

    /// AES of the queue at `distance` (1-based).
    pub fn aes_at(&self, distance: usize) -> f64 {
        self.aes[distance - 1]
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn thresholds(&self) -> Option<RegimeThresholds> {
        self.thresholds
    }

    pub fn queue_tables(&self, distance: usize) -> &QueueTables {
        &self.tables[distance - 1]
    }

    pub fn table(&self, distance: usize, regime: Regime) -> Result<&RateTable> {
        self.tables
            .get(distance.wrapping_sub(1))
            .and_then(|qt| qt.get(regime))
            .ok_or_else(|| Error::UnknownRegime {
                distance,
                regime: regime.key().to_string(),
            })
    }

    /// Replaces the tables of one distance class, keeping its regime layout.
    pub fn with_tables(&self, distance: usize, tables: QueueTables) -> Result<Self> {
        let mut m = self.clone();
        let old = std::mem::replace(&mut m.tables[distance - 1], tables);
        if std::mem::discriminant(&old) != std::mem::discriminant(&m.tables[distance - 1]) {
            return Err(Error::InvalidModel(
                "replacement table has a different regime layout".into(),
            ));
        }
        Ok(m)
    }

    /// Whether market orders at `distance` contribute to departures in the given regime.
    pub fn market_applies(&self, distance: usize, regime: Regime) -> bool {
        match self.kind {
            ModelKind::ModelI | ModelKind::PoissonBaseline => true,
            _ => distance == 1 || (distance == 2 && regime == Regime::FirstEmpty),
        }
    }

    /// Limit, cancel and market rates acting on queue `i` in `state`.
    #[inline]
    pub fn queue_rates(&self, state: &LobState, i: QueueIndex) -> (f64, f64, f64) {
        let d = i.distance();
        let n = state.get(i);
        let (table, market) = match (&self.tables[d - 1], self.kind) {
            (QueueTables::Single(t), ModelKind::ModelI | ModelKind::PoissonBaseline) => (t, true),
            (QueueTables::Single(t), _) => (t, d == 1),
            (QueueTables::FirstQueue { empty, positive }, _) => {
                let first = state.at(if i.is_ask() { 1 } else { -1 });
                if first > 0 {
                    (positive, false)
                } else {
                    (empty, true)
                }
            }
            (QueueTables::Opposite(ts), _) => {
                let opposite = state.at(if i.is_ask() { -1 } else { 1 });
                let class = self
                    .thresholds
                    .expect("validated at construction")
                    .classify(opposite);
                (&ts[class.ordinal()], true)
            }
        };
        let l = table.limit_at(n);
        if n == 0 {
            return (l, 0.0, 0.0);
        }
        let m = if market { table.market_at(n) } else { 0.0 };
        (l, table.cancel_at(n), m)
    }

    /// Serializes to the JSON interchange document.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(s)?;
        doc.try_into()
    }
}

/// JSON interchange form of [`IntensityModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub kind: ModelKind,
    #[serde(rename = "K")]
    pub k: usize,
    pub tick_value: f64,
    pub aes: Vec<f64>,
    pub cap: usize,
    pub m: Option<u32>,
    pub l: Option<u32>,
    pub tables: BTreeMap<String, BTreeMap<String, RateTable>>,
}

impl From<&IntensityModel> for ModelDoc {
    fn from(m: &IntensityModel) -> Self {
        let tables = m
            .tables
            .iter()
            .enumerate()
            .map(|(i, qt)| {
                let regimes = qt
                    .iter()
                    .into_iter()
                    .map(|(r, t)| (r.key().to_string(), t.clone()))
                    .collect();
                ((i + 1).to_string(), regimes)
            })
            .collect();
        ModelDoc {
            kind: m.kind,
            k: m.k,
            tick_value: m.tick_value,
            aes: m.aes.clone(),
            cap: m.cap,
            m: m.thresholds.map(|t| t.m),
            l: m.thresholds.map(|t| t.l),
            tables,
        }
    }
}

impl TryFrom<ModelDoc> for IntensityModel {
    type Error = Error;

    fn try_from(doc: ModelDoc) -> Result<Self> {
        let thresholds = match (doc.m, doc.l) {
            (Some(m), Some(l)) => Some(RegimeThresholds::new(m, l)?),
            (None, None) => None,
            _ => return Err(Error::InvalidModel("m and l must be given together".into())),
        };
        let mut tables = Vec::with_capacity(doc.k);
        let mut raw = doc.tables;
        for d in 1..=doc.k {
            let regimes = raw
                .remove(&d.to_string())
                .ok_or_else(|| Error::InvalidModel(format!("missing tables for queue {d}")))?;
            let mut map = BTreeMap::new();
            for (key, t) in regimes {
                let r = Regime::from_key(&key).ok_or_else(|| Error::UnknownRegime {
                    distance: d,
                    regime: key.clone(),
                })?;
                map.insert(r, t);
            }
            tables.push(map);
        }
        if let Some(extra) = raw.keys().next() {
            return Err(Error::InvalidModel(format!(
                "tables for queue `{extra}` exceed K = {}",
                doc.k
            )));
        }
        IntensityModel::new(
            doc.kind,
            doc.tick_value,
            doc.aes,
            doc.cap,
            thresholds,
            tables,
        )
    }
}

/// One admissible transition `q -> q ± e_i` of the generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub queue: QueueIndex,
    pub direction: i8,
    pub rate: f64,
}

/// Rate of one order flow acting on one queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRate {
    pub queue: QueueIndex,
    pub etype: EventType,
    pub rate: f64,
}

/// Writes every positive-rate flow of `state` into `out` (cleared first), in queue order `-K..K`.
pub fn event_rates_into(state: &LobState, model: &IntensityModel, out: &mut Vec<EventRate>) {
    out.clear();
    for queue in QueueIndex::all(model.k()) {
        let (l, c, m) = model.queue_rates(state, queue);
        for (etype, rate) in [
            (EventType::LimitInsert, l),
            (EventType::Cancel, c),
            (EventType::MarketOrder, m),
        ] {
            if rate > 0.0 {
                out.push(EventRate { queue, etype, rate });
            }
        }
    }
}

pub fn event_rates(state: &LobState, model: &IntensityModel) -> Vec<EventRate> {
    let mut out = Vec::with_capacity(6 * model.k());
    event_rates_into(state, model, &mut out);
    out
}

/// Off-diagonal entries of the generator row at `state`: `f_i` for `+e_i`, `g_i` for `-e_i`.
pub fn generator_row(state: &LobState, model: &IntensityModel) -> Vec<Transition> {
    let mut row = Vec::with_capacity(2 * model.k() * 2);
    for queue in QueueIndex::all(model.k()) {
        let (l, c, m) = model.queue_rates(state, queue);
        if l > 0.0 {
            row.push(Transition {
                queue,
                direction: 1,
                rate: l,
            });
        }
        if c + m > 0.0 {
            row.push(Transition {
                queue,
                direction: -1,
                rate: c + m,
            });
        }
    }
    row
}

/// Outcome of checking negative individual drift and bounded inflow on the finite tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErgodicityReport {
    pub c_bound: usize,
    /// `min (g - f)` over all tabulated regimes and sizes above `c_bound`.
    pub delta: f64,
    /// Bound on the summed insertion rates over all `2K` queues.
    pub h: f64,
    pub ok: bool,
}

fn departure(
    model: &IntensityModel,
    distance: usize,
    regime: Regime,
    t: &RateTable,
    n: u32,
) -> f64 {
    let m = if model.market_applies(distance, regime) {
        t.market_at(n)
    } else {
        0.0
    };
    t.cancel_at(n) + m
}

/// Checks `f - g < 0` above `c_bound` and bounded total inflow.
///
/// Sizes above `cap` reuse the `cap` entry, so scanning `c_bound + 1 ..= cap`
/// (or just `cap` when `c_bound >= cap`) covers every state.
pub fn check_ergodicity_assumptions(model: &IntensityModel, c_bound: usize) -> ErgodicityReport {
    let cap = model.cap();
    let lo = (c_bound + 1).min(cap);
    let mut delta = f64::INFINITY;
    let mut h = 0.0;
    for d in 1..=model.k() {
        let mut max_l = 0.0f64;
        for (regime, t) in model.queue_tables(d).iter() {
            max_l = t.limit.iter().fold(max_l, |a, &b| a.max(b));
            for n in lo..=cap {
                let margin = departure(model, d, regime, t, n as u32) - t.limit_at(n as u32);
                delta = delta.min(margin);
            }
        }
        h += 2.0 * max_l;
    }
    ErgodicityReport {
        c_bound,
        delta,
        h,
        ok: delta > 0.0 && h.is_finite(),
    }
}

/// Smallest `c_bound` for which the drift condition holds, if any.
pub fn minimal_c_bound(model: &IntensityModel) -> Option<usize> {
    (0..=model.cap()).find(|&c| check_ergodicity_assumptions(model, c).ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qi(v: i32) -> QueueIndex {
        QueueIndex::new(v, 3).unwrap()
    }

    fn state(q: [u32; 6]) -> LobState {
        LobState::new(q.to_vec(), 1).unwrap()
    }

    fn constant_model(l: f64, c: f64, m: f64) -> IntensityModel {
        let t = RateTable::constant(DEFAULT_CAP, l, c, m);
        IntensityModel::independent(
            ModelKind::ModelI,
            0.01,
            vec![100.0; 3],
            vec![t.clone(), t.clone(), t],
        )
        .unwrap()
    }

    fn iia_model() -> IntensityModel {
        let cap = 10;
        let q1 = RateTable::constant(cap, 1.0, 0.5, 0.7);
        let empty = RateTable::from_fn(cap, |n| (2.0, 0.3, 0.1 * n as f64));
        let positive = RateTable::constant(cap, 1.0, 0.2, 0.0);
        let q3 = RateTable::constant(cap, 0.5, 0.6, 0.0);
        let tables = vec![
            BTreeMap::from([(Regime::All, q1)]),
            BTreeMap::from([
                (Regime::FirstEmpty, empty),
                (Regime::FirstPositive, positive),
            ]),
            BTreeMap::from([(Regime::All, q3)]),
        ];
        IntensityModel::new(ModelKind::ModelIIa, 0.01, vec![100.0; 3], cap, None, tables).unwrap()
    }

    #[test]
    fn queue_index_slots_round_trip() {
        for k in 1..=4 {
            for (s, q) in QueueIndex::all(k).enumerate() {
                assert_eq!(q.slot(k), s);
                assert_eq!(QueueIndex::from_slot(s, k), q);
            }
        }
        assert!(QueueIndex::new(0, 3).is_err());
        assert!(QueueIndex::new(4, 3).is_err());
        assert!(QueueIndex::new(-3, 3).is_ok());
    }

    #[test]
    fn best_quotes() {
        assert_eq!(best_ask(&state([0, 0, 0, 0, 3, 1])), Some(qi(2)));
        assert_eq!(best_ask(&state([0; 6])), None);
        assert_eq!(best_ask(&state([0, 0, 0, 5, 0, 0])), Some(qi(1)));
        assert_eq!(best_bid(&state([4, 2, 0, 1, 0, 0])), Some(qi(-2)));
    }

    #[test]
    fn midprice_in_half_ticks() {
        // p_ref = 1 half-tick; Q_1 at 2, Q_{-1} at 0.
        assert_eq!(state([1, 1, 1, 1, 1, 1]).mid_half_ticks(), 1);
        assert_eq!(state([1, 1, 1, 0, 1, 1]).mid_half_ticks(), 2);
        assert_eq!(state([1, 1, 0, 0, 1, 1]).mid_half_ticks(), 1);
    }

    #[test]
    fn model_i_row_reads_tables() {
        let mut t = RateTable::constant(DEFAULT_CAP, 0.0, 0.0, 0.0);
        t.limit[2] = 1.5;
        t.cancel[2] = 0.8;
        t.market[2] = 0.3;
        let model = IntensityModel::independent(
            ModelKind::ModelI,
            0.01,
            vec![1.0; 3],
            vec![t.clone(), t.clone(), t],
        )
        .unwrap();
        let row = generator_row(&state([0, 0, 0, 2, 0, 0]), &model);
        assert_eq!(row.len(), 2);
        assert_eq!(
            row[0],
            Transition {
                queue: qi(1),
                direction: 1,
                rate: 1.5
            }
        );
        assert_eq!(row[1].queue, qi(1));
        assert_eq!(row[1].direction, -1);
        assert!((row[1].rate - 1.1).abs() < 1e-15);
    }

    #[test]
    fn iia_routes_market_orders_to_second_limit() {
        let model = iia_model();
        let rates = event_rates(&state([0, 0, 0, 0, 4, 0]), &model);
        let markets: Vec<_> = rates
            .iter()
            .filter(|e| e.etype == EventType::MarketOrder)
            .collect();
        assert_eq!(markets.len(), 1);
        assert_eq!(markets[0].queue, qi(2));
        assert!((markets[0].rate - 0.4).abs() < 1e-12);

        let rates = event_rates(&state([0, 0, 0, 2, 4, 0]), &model);
        let markets: Vec<_> = rates
            .iter()
            .filter(|e| e.etype == EventType::MarketOrder)
            .map(|e| e.queue)
            .collect();
        assert_eq!(markets, vec![qi(1)]);
    }

    #[test]
    fn empty_book_only_inserts() {
        for model in [constant_model(1.0, 1.0, 1.0), iia_model()] {
            let row = generator_row(&state([0; 6]), &model);
            assert!(!row.is_empty());
            assert!(row.iter().all(|t| t.direction == 1));
        }
    }

    #[test]
    fn ergodicity_constants() {
        let r = check_ergodicity_assumptions(&constant_model(1.0, 1.5, 0.5), 0);
        assert!(r.ok);
        assert!((r.delta - 1.0).abs() < 1e-12);
        assert!((r.h - 6.0).abs() < 1e-12);

        let mut t = RateTable::constant(DEFAULT_CAP, 1.0, 1.5, 0.5);
        t.limit[DEFAULT_CAP] = 2.0;
        t.cancel[DEFAULT_CAP] = 0.5;
        t.market[DEFAULT_CAP] = 0.5;
        let m = IntensityModel::independent(
            ModelKind::ModelI,
            0.01,
            vec![1.0; 3],
            vec![t.clone(), t.clone(), t],
        )
        .unwrap();
        assert!(!check_ergodicity_assumptions(&m, 0).ok);
        assert_eq!(minimal_c_bound(&m), None);
    }

    #[test]
    fn missing_regime_is_rejected() {
        let cap = 5;
        let tables = vec![
            BTreeMap::from([(Regime::All, RateTable::zeros(cap))]),
            BTreeMap::from([(Regime::FirstPositive, RateTable::zeros(cap))]),
        ];
        let err = IntensityModel::new(ModelKind::ModelIIa, 0.01, vec![1.0; 2], cap, None, tables)
            .unwrap_err();
        assert!(matches!(err, Error::UnknownRegime { distance: 2, .. }));
    }

    #[test]
    fn json_round_trip() {
        let model = iia_model();
        let back = IntensityModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(model, back);
        let bad = model.to_json().unwrap().replace("q1_empty", "q1_nothing");
        assert!(matches!(
            IntensityModel::from_json(&bad),
            Err(Error::UnknownRegime { .. })
        ));
    }
}
