//! Invariant distributions.
//!
//! * Model I: product-form birth-death law per queue.
//! * Model II^a: level-independent QBD (level `q_1`, phase `q_2`) solved
//!   matrix-geometrically, `π_n = π_1 R^{n-1}`.
//! * Anything else: time-averaged occupation of long simulated paths.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::book::{IntensityModel, LobState, ModelKind, QueueIndex, QueueTables, Regime};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::simulate::Stepper;

/// Probability mass below which the product-form tail is dropped.
pub const TAIL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawMethod {
    ClosedForm,
    Qbd,
    MonteCarlo,
    Empirical,
}

/// Probability table over queue sizes `0..shape[d]` for each dimension, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryLaw {
    pub dims: Vec<QueueIndex>,
    pub shape: Vec<usize>,
    pub probs: Vec<f64>,
    pub method: LawMethod,
    /// Largest retained size per dimension.
    pub truncation: usize,
    /// Mass that fell outside the retained support before renormalization.
    pub tail_mass: f64,
}

impl StationaryLaw {
    /// Normalizes nonnegative weights into a law.
    pub fn from_weights(
        dims: Vec<QueueIndex>,
        shape: Vec<usize>,
        weights: Vec<f64>,
        method: LawMethod,
        tail_weight: f64,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), weights.len());
        let inside: f64 = weights.iter().sum();
        let total = inside + tail_weight;
        let probs = if inside > 0.0 {
            weights.iter().map(|w| w / inside).collect()
        } else {
            weights
        };
        let truncation = shape.iter().copied().max().unwrap_or(1).saturating_sub(1);
        let tail_mass = if total > 0.0 {
            tail_weight / total
        } else {
            0.0
        };
        StationaryLaw {
            dims,
            shape,
            probs,
            method,
            truncation,
            tail_mass,
        }
    }

    /// One-dimensional law from probabilities by size.
    pub fn univariate(dim: QueueIndex, probs: Vec<f64>, method: LawMethod) -> Self {
        let n = probs.len();
        StationaryLaw::from_weights(vec![dim], vec![n], probs, method, 0.0)
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    fn offset(&self, sizes: &[usize]) -> Option<usize> {
        let mut off = 0;
        for (s, &n) in sizes.iter().zip(&self.shape) {
            if *s >= n {
                return None;
            }
            off = off * n + s;
        }
        Some(off)
    }

    /// Probability of a size tuple; zero outside the support.
    pub fn prob(&self, sizes: &[usize]) -> f64 {
        self.offset(sizes).map_or(0.0, |o| self.probs[o])
    }

    fn unravel(&self, mut off: usize) -> Vec<usize> {
        let mut idx = vec![0; self.shape.len()];
        for d in (0..self.shape.len()).rev() {
            idx[d] = off % self.shape[d];
            off /= self.shape[d];
        }
        idx
    }

    pub fn iter(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .map(|(o, &p)| (self.unravel(o), p))
    }

    pub fn marginal(&self, dim: usize) -> StationaryLaw {
        let mut probs = vec![0.0; self.shape[dim]];
        for (idx, p) in self.iter() {
            probs[idx[dim]] += p;
        }
        StationaryLaw {
            dims: vec![self.dims[dim]],
            shape: vec![self.shape[dim]],
            probs,
            method: self.method,
            truncation: self.shape[dim] - 1,
            tail_mass: self.tail_mass,
        }
    }

    pub fn mean(&self, dim: usize) -> f64 {
        self.marginal(dim)
            .probs
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }

    /// Total variation distance, computed over the union of both supports.
    pub fn total_variation(&self, other: &StationaryLaw) -> f64 {
        assert_eq!(self.ndim(), other.ndim(), "laws of different dimension");
        let shape: Vec<usize> = self
            .shape
            .iter()
            .zip(&other.shape)
            .map(|(a, b)| *a.max(b))
            .collect();
        let total: usize = shape.iter().product();
        let mut sum = 0.0;
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..total {
            sum += (self.prob(&idx) - other.prob(&idx)).abs();
            for d in (0..shape.len()).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        0.5 * sum
    }

    /// Writes `dims,size,prob` rows; tuple members are `;`-separated.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["dims", "size", "prob"])?;
        let dims = self
            .dims
            .iter()
            .map(|d| d.value().to_string())
            .collect::<Vec<_>>()
            .join(";");
        for (idx, p) in self.iter() {
            let size = idx
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(";");
            wr.write_record([dims.as_str(), size.as_str(), &format!("{p:e}")])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Inverse-CDF sampler over a univariate law.
#[derive(Debug, Clone)]
pub struct LawSampler {
    cdf: Vec<f64>,
}

impl LawSampler {
    pub fn new(law: &StationaryLaw) -> Self {
        let total: f64 = law.probs.iter().sum();
        let mut acc = 0.0;
        let cdf = law
            .probs
            .iter()
            .map(|p| {
                acc += p / total;
                acc
            })
            .collect();
        LawSampler { cdf }
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        self.cdf
            .partition_point(|&c| c <= u)
            .min(self.cdf.len() - 1) as u32
    }
}

fn independent_table(model: &IntensityModel, distance: usize) -> Result<&crate::book::RateTable> {
    if !matches!(model.kind(), ModelKind::ModelI | ModelKind::PoissonBaseline) {
        return Err(Error::InvalidModel(format!(
            "closed-form invariant law needs independent queues, got {:?}",
            model.kind()
        )));
    }
    model.table(distance, Regime::All)
}

/// Product-form invariant law of queue `queue` under Model I:
/// `π(n) ∝ Π_{j<n} λ^L(j) / (λ^C(j+1) + λ^M(j+1))`.
pub fn invariant_model_i(
    model: &IntensityModel,
    queue: QueueIndex,
    n_trunc: usize,
) -> Result<StationaryLaw> {
    let t = independent_table(model, queue.distance())?;
    let cap = model.cap() as u32;
    let g = |n: u32| t.cancel_at(n) + t.market_at(n);
    let rho = |n: u32| -> Result<f64> {
        let (f, gn) = (t.limit_at(n), g(n + 1));
        if f == 0.0 {
            Ok(0.0)
        } else if gn == 0.0 {
            Err(Error::NonErgodic(format!(
                "queue {queue}: insertions at size {n} but no departures at size {}",
                n + 1
            )))
        } else {
            Ok(f / gn)
        }
    };
    let rho_tail = rho(cap)?;
    if rho_tail >= 1.0 {
        return Err(Error::NonErgodic(format!(
            "queue {queue}: arrival/departure ratio {rho_tail} >= 1 beyond the tabulated range"
        )));
    }
    let mut w = vec![1.0];
    let mut sum = 1.0;
    let mut tail = 0.0;
    for n in 0..n_trunc as u32 {
        let r = rho(n)?;
        if r == 0.0 {
            break;
        }
        let next = w[n as usize] * r;
        w.push(next);
        sum += next;
        if n + 1 >= cap {
            // ratios are constant from here on: geometric remainder
            tail = next * rho_tail / (1.0 - rho_tail);
            if tail < TAIL_TOLERANCE * sum {
                break;
            }
        } else {
            tail = 0.0;
        }
    }
    let total = sum + tail;
    let tail_mass = tail / total;
    let probs: Vec<f64> = if tail_mass < TAIL_TOLERANCE {
        w.iter().map(|x| x / total).collect()
    } else {
        w.iter().map(|x| x / sum).collect()
    };
    let n = probs.len();
    Ok(StationaryLaw {
        dims: vec![queue],
        shape: vec![n],
        probs,
        method: LawMethod::ClosedForm,
        truncation: n - 1,
        tail_mass,
    })
}

/// Closed-form law of `Q_d` for every distance `d = 1..=K` of an independent-queue model.
pub fn product_form_laws(model: &IntensityModel, n_trunc: usize) -> Result<Vec<StationaryLaw>> {
    (1..=model.k())
        .map(|d| invariant_model_i(model, QueueIndex::raw(d as i8), n_trunc))
        .collect()
}

/// Per-distance laws used to redraw queues after reference-price moves.
///
/// Independent-queue models use the closed form; otherwise each law is the Monte Carlo
/// occupation marginal of the ask-side queue at that distance.
pub fn redraw_laws(model: &IntensityModel, seed: u64) -> Result<Vec<StationaryLaw>> {
    if matches!(model.kind(), ModelKind::ModelI | ModelKind::PoissonBaseline) {
        return product_form_laws(model, 2000);
    }
    (1..=model.k())
        .map(|d| {
            let cfg = McConfig {
                dims: vec![QueueIndex::raw(d as i8)],
                max_size: 4 * model.cap(),
                n_segments: 4,
                events_per_segment: 250_000,
                burn_in_events: 10_000,
                seed: crate::rng::derive_seed(seed, d as u64),
                initial: LobState {
                    q: vec![1; 2 * model.k()],
                    p_ref: 1,
                },
            };
            invariant_monte_carlo(model, &cfg).map(|(law, _)| law)
        })
        .collect()
}

/// How `λ_1` and `μ_1` are obtained from the first-limit tables.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Averaging {
    /// Plain mean of `λ^L_1(k)`, `k = 0..=cap`, and of `λ^C_1 + λ^M_1` over `k = 1..=cap`.
    #[default]
    Unweighted,
    /// Weighted by an occupation law of `q_1` (indexed by size; clamped at `cap`).
    Occupation(Vec<f64>),
}

/// Level-independent QBD blocks for `(q_1, q_2)` under constant first-limit flows.
#[derive(Debug, Clone, PartialEq)]
pub struct QbdBlocks {
    /// Level up: `λ_1 I`.
    pub a0: DMatrix<f64>,
    /// Within level 0 (`q_1 = 0` regime at `Q_2`).
    pub a1_0: DMatrix<f64>,
    /// Within levels `≥ 1`.
    pub a1: DMatrix<f64>,
    /// Level down: `μ_1 I`.
    pub a2: DMatrix<f64>,
    pub lambda1: f64,
    pub mu1: f64,
    pub n_phase: usize,
}

fn weighted_mean(values: impl Iterator<Item = (usize, f64)>, weights: Option<&[f64]>) -> f64 {
    let (mut s, mut ws) = (0.0, 0.0);
    for (n, v) in values {
        let w = weights.map_or(1.0, |w| w.get(n).copied().unwrap_or(0.0));
        s += w * v;
        ws += w;
    }
    if ws > 0.0 {
        s / ws
    } else {
        0.0
    }
}

fn phase_block(
    n_phase: usize,
    level_rate: f64,
    up: impl Fn(usize) -> f64,
    down: impl Fn(usize) -> f64,
) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n_phase, n_phase);
    for j in 0..n_phase {
        let (u, d) = (up(j), if j > 0 { down(j) } else { 0.0 });
        if j + 1 < n_phase {
            a[(j, j + 1)] = u;
        } else {
            // first-column augmentation: mass leaving the truncated phase range re-enters at phase 0
            a[(j, 0)] += u;
        }
        if j > 0 {
            a[(j, j - 1)] += d;
        }
        a[(j, j)] -= level_rate + u + d;
    }
    a
}

/// Assembles the QBD blocks of a Model II^a instance with phases `0..n_phase`.
pub fn build_qbd_blocks(
    model: &IntensityModel,
    n_phase: usize,
    averaging: &Averaging,
) -> Result<QbdBlocks> {
    if model.kind() != ModelKind::ModelIIa {
        return Err(Error::InvalidModel(format!(
            "QBD blocks need a Model II^a, got {:?}",
            model.kind()
        )));
    }
    if n_phase < 2 {
        return Err(Error::InvalidModel("need at least two phases".into()));
    }
    let t1 = model.table(1, Regime::All)?;
    let (empty, positive) = match model.queue_tables(2) {
        QueueTables::FirstQueue { empty, positive } => (empty, positive),
        _ => {
            return Err(Error::UnknownRegime {
                distance: 2,
                regime: Regime::FirstEmpty.key().into(),
            })
        }
    };
    let cap = model.cap();
    let weights = match averaging {
        Averaging::Unweighted => None,
        Averaging::Occupation(w) => {
            let mut folded = vec![0.0; cap + 1];
            for (n, x) in w.iter().enumerate() {
                folded[n.min(cap)] += x;
            }
            Some(folded)
        }
    };
    let lambda1 = weighted_mean(t1.limit.iter().copied().enumerate(), weights.as_deref());
    let mu1 = weighted_mean(
        (1..=cap).map(|k| (k, t1.cancel[k] + t1.market[k])),
        weights.as_deref(),
    );
    if !(lambda1 < mu1) {
        return Err(Error::AssumptionViolated(format!(
            "averaged first-limit rates need λ_1 < μ_1, got λ_1 = {lambda1}, μ_1 = {mu1}"
        )));
    }
    let eye = DMatrix::<f64>::identity(n_phase, n_phase);
    let a1_0 = phase_block(
        n_phase,
        lambda1,
        |j| empty.limit_at(j as u32),
        |j| empty.cancel_at(j as u32) + empty.market_at(j as u32),
    );
    let a1 = phase_block(
        n_phase,
        lambda1 + mu1,
        |j| positive.limit_at(j as u32),
        |j| positive.cancel_at(j as u32),
    );
    Ok(QbdBlocks {
        a0: &eye * lambda1,
        a1_0,
        a1,
        a2: &eye * mu1,
        lambda1,
        mu1,
        n_phase,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QbdDiagnostics {
    pub iterations: usize,
    pub residual: f64,
    pub spectral_radius: f64,
    pub tail_mass: f64,
    pub levels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QbdOptions {
    pub tol: f64,
    pub max_iterations: usize,
    pub max_levels: usize,
}

impl Default for QbdOptions {
    fn default() -> Self {
        QbdOptions {
            tol: 1e-12,
            max_iterations: 100_000,
            max_levels: 10_000,
        }
    }
}

/// Minimal nonnegative solution of `A0 + R A1 + R² A2 = 0` by the natural fixed point
/// `R ← -(A0 + R² A2) A1^{-1}` started from zero.
pub fn solve_r(
    blocks: &QbdBlocks,
    tol: f64,
    max_iterations: usize,
) -> Result<(DMatrix<f64>, usize)> {
    let n = blocks.n_phase;
    let a1_inv = blocks
        .a1
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NonErgodic("A1 is singular".into()))?;
    let neg_a0_inv = -(&blocks.a0 * &a1_inv);
    let a2_inv = &blocks.a2 * &a1_inv;
    let mut r = DMatrix::<f64>::zeros(n, n);
    for it in 1..=max_iterations {
        let next = &neg_a0_inv - (&r * &r) * &a2_inv;
        let change = (&next - &r).amax();
        r = next;
        if change < tol {
            return Ok((r, it));
        }
        if it == max_iterations {
            return Err(Error::NoConvergence {
                iterations: it,
                change,
            });
        }
    }
    unreachable!()
}

fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Matrix-geometric stationary law of the QBD: joint law over `(q_1, q_2)`.
pub fn solve_qbd(blocks: &QbdBlocks, opts: &QbdOptions) -> Result<(StationaryLaw, QbdDiagnostics)> {
    if !(blocks.lambda1 < blocks.mu1) {
        return Err(Error::Unstable(blocks.lambda1 / blocks.mu1));
    }
    let n = blocks.n_phase;
    let (r, iterations) = solve_r(blocks, opts.tol, opts.max_iterations)?;
    let sp = spectral_radius(&r);
    if sp >= 1.0 {
        return Err(Error::Unstable(sp));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let i_minus_r_inv = (&eye - &r).try_inverse().ok_or(Error::Unstable(sp))?;

    // Boundary equations: [π0 π1] [[A1^(0), A0], [A2, A1 + R A2]] = 0, with one column
    // replaced by the normalization π0 1 + π1 (I - R)^{-1} 1 = 1.
    let mut m = DMatrix::<f64>::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&blocks.a1_0);
    m.view_mut((0, n), (n, n)).copy_from(&blocks.a0);
    m.view_mut((n, 0), (n, n)).copy_from(&blocks.a2);
    m.view_mut((n, n), (n, n))
        .copy_from(&(&blocks.a1 + &r * &blocks.a2));
    let ones = DVector::<f64>::from_element(n, 1.0);
    let norm_tail = &i_minus_r_inv * &ones;
    for i in 0..n {
        m[(i, 0)] = 1.0;
        m[(n + i, 0)] = norm_tail[i];
    }
    let mut rhs = DVector::<f64>::zeros(2 * n);
    rhs[0] = 1.0;
    // x^T M = e_0^T  <=>  M^T x = e_0
    let x = m
        .transpose()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NonErgodic("singular boundary system".into()))?;
    let pi0 = x.rows(0, n).transpose();
    let pi1 = x.rows(n, n).transpose();

    let mut levels = vec![pi0.clone(), pi1.clone()];
    let mut current = pi1.clone();
    let mut tail = (&current * &r * &i_minus_r_inv * &ones)[0];
    while tail > TAIL_TOLERANCE && levels.len() < opts.max_levels {
        current = &current * &r;
        levels.push(current.clone());
        tail = (&current * &r * &i_minus_r_inv * &ones)[0];
    }
    let n_levels = levels.len();

    let mut residual = 0.0f64;
    for l in 0..n_levels - 1 {
        let row = if l == 0 {
            &levels[0] * &blocks.a1_0 + &levels[1] * &blocks.a2
        } else {
            &levels[l - 1] * &blocks.a0 + &levels[l] * &blocks.a1 + &levels[l + 1] * &blocks.a2
        };
        residual = residual.max(row.amax());
    }

    let mut weights = Vec::with_capacity(n_levels * n);
    for lv in &levels {
        weights.extend(lv.iter().map(|p| p.max(0.0)));
    }
    let law = StationaryLaw::from_weights(
        vec![QueueIndex::raw(1), QueueIndex::raw(2)],
        vec![n_levels, n],
        weights,
        LawMethod::Qbd,
        tail.max(0.0),
    );
    let diag = QbdDiagnostics {
        iterations,
        residual,
        spectral_radius: sp,
        tail_mass: law.tail_mass,
        levels: n_levels,
    };
    Ok((law, diag))
}

/// Sampler settings for the Monte Carlo invariant law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub dims: Vec<QueueIndex>,
    /// Sizes `0..=max_size` are tabulated per dimension; larger ones count as tail.
    pub max_size: usize,
    pub n_segments: usize,
    pub events_per_segment: usize,
    pub burn_in_events: usize,
    pub seed: u64,
    pub initial: LobState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub events: u64,
    pub simulated_time: f64,
    /// Batch-means effective sample size of the first tabulated dimension.
    pub effective_sample_size: f64,
}

const BATCHES_PER_SEGMENT: usize = 20;

struct SegmentResult {
    weights: Vec<f64>,
    tail: f64,
    events: u64,
    time: f64,
    batch_means: Vec<f64>,
    sum_x: f64,
    sum_x2: f64,
}

fn run_segment(model: &IntensityModel, cfg: &McConfig, segment: usize) -> SegmentResult {
    let side = cfg.max_size + 1;
    let dims = cfg.dims.len();
    let mut weights = vec![0.0; side.pow(dims as u32)];
    let mut rng = stream_rng(cfg.seed, segment as u64);
    let mut state = cfg.initial.clone();
    let mut stepper = Stepper::new(model);
    let mut res = SegmentResult {
        weights: Vec::new(),
        tail: 0.0,
        events: 0,
        time: 0.0,
        batch_means: Vec::new(),
        sum_x: 0.0,
        sum_x2: 0.0,
    };
    for _ in 0..cfg.burn_in_events {
        match stepper.draw(&state, &mut rng) {
            Some((_, ev)) => ev.apply(&mut state),
            None => break,
        }
    }
    let batch_len = (cfg.events_per_segment / BATCHES_PER_SEGMENT).max(1);
    let (mut bx, mut bt) = (0.0, 0.0);
    let mut record = |state: &LobState, dt: f64, res: &mut SegmentResult| {
        let mut off = 0;
        let mut inside = true;
        for d in &cfg.dims {
            let v = state.get(*d) as usize;
            if v > cfg.max_size {
                inside = false;
            }
            off = off * side + v.min(cfg.max_size);
        }
        if inside {
            weights[off] += dt;
        } else {
            res.tail += dt;
        }
        let x = state.get(cfg.dims[0]) as f64;
        res.sum_x += x * dt;
        res.sum_x2 += x * x * dt;
        res.time += dt;
    };
    for e in 0..cfg.events_per_segment {
        match stepper.draw(&state, &mut rng) {
            Some((dt, ev)) => {
                record(&state, dt, &mut res);
                bx += state.get(cfg.dims[0]) as f64 * dt;
                bt += dt;
                ev.apply(&mut state);
                res.events += 1;
            }
            None => {
                // absorbing: the chain stays put forever
                record(&state, 1.0, &mut res);
                res.batch_means.push(state.get(cfg.dims[0]) as f64);
                break;
            }
        }
        if (e + 1) % batch_len == 0 && bt > 0.0 {
            res.batch_means.push(bx / bt);
            bx = 0.0;
            bt = 0.0;
        }
    }
    res.weights = weights;
    res
}

/// Occupation law of the chain, averaged over independent segments.
pub fn invariant_monte_carlo(
    model: &IntensityModel,
    cfg: &McConfig,
) -> Result<(StationaryLaw, McReport)> {
    if cfg.dims.is_empty() || cfg.n_segments == 0 {
        return Err(Error::Config(
            "Monte Carlo needs at least one dimension and one segment".into(),
        ));
    }
    if cfg.initial.k() != model.k() {
        return Err(Error::Config(
            "initial state does not match the model's K".into(),
        ));
    }
    let parts: Vec<SegmentResult> = (0..cfg.n_segments)
        .into_par_iter()
        .map(|s| run_segment(model, cfg, s))
        .collect();
    let side = cfg.max_size + 1;
    let mut weights = vec![0.0; side.pow(cfg.dims.len() as u32)];
    let (mut tail, mut events, mut time, mut sx, mut sx2) = (0.0, 0, 0.0, 0.0, 0.0);
    let mut batch_means = Vec::new();
    for p in parts {
        for (w, x) in weights.iter_mut().zip(&p.weights) {
            *w += x;
        }
        tail += p.tail;
        events += p.events;
        time += p.time;
        sx += p.sum_x;
        sx2 += p.sum_x2;
        batch_means.extend(p.batch_means);
    }
    let law = StationaryLaw::from_weights(
        cfg.dims.clone(),
        vec![side; cfg.dims.len()],
        weights,
        LawMethod::MonteCarlo,
        tail,
    );
    let ess = if time > 0.0 && batch_means.len() > 1 {
        let mean = sx / time;
        let var = (sx2 / time - mean * mean).max(0.0);
        let bm = batch_means.iter().sum::<f64>() / batch_means.len() as f64;
        let bvar = batch_means.iter().map(|b| (b - bm).powi(2)).sum::<f64>()
            / (batch_means.len() - 1) as f64;
        if bvar > 0.0 {
            batch_means.len() as f64 * var / bvar
        } else {
            f64::INFINITY
        }
    } else {
        0.0
    };
    Ok((
        law,
        McReport {
            events,
            simulated_time: time,
            effective_sample_size: ess,
        },
    ))
}
