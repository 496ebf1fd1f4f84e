//! Volatility and mean-reversion surfaces over `(θ, θ_reinit)` and their inversion.
//!
//! Path `p` uses the same random stream at every grid node, so differences between
//! nodes are driven by the parameters rather than by sampling noise.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::mean_stderr;
use crate::book::IntensityModel;
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::simulate::{queue_reactive_stats, PathStats, QueueReactive};

/// Return bin of the volatility estimate, in seconds.
pub const DEFAULT_BIN: f64 = 600.0;
/// Default grid resolution per axis.
pub const DEFAULT_GRID: usize = 11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub thetas: Vec<f64>,
    pub theta_reinits: Vec<f64>,
}

impl GridSpec {
    /// `n_theta × n_reinit` evenly spaced nodes over `[0, 1]²`.
    pub fn uniform(n_theta: usize, n_reinit: usize) -> Result<Self> {
        let axis = |n: usize| -> Result<Vec<f64>> {
            match n {
                0 => Err(Error::Config("grid axes need at least one node".into())),
                1 => Ok(vec![1.0]),
                _ => Ok((0..n).map(|i| i as f64 / (n - 1) as f64).collect()),
            }
        };
        GridSpec {
            thetas: axis(n_theta)?,
            theta_reinits: axis(n_reinit)?,
        }
        .validated()
    }

    /// Parses `"11x11"`.
    pub fn parse(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Config(format!("grid `{s}` is not of the form NxM")))?;
        let n = |x: &str| {
            x.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("grid `{s}` is not of the form NxM")))
        };
        GridSpec::uniform(n(a)?, n(b)?)
    }

    pub fn validated(self) -> Result<Self> {
        for axis in [&self.thetas, &self.theta_reinits] {
            if axis.is_empty()
                || axis.iter().any(|x| !(0.0..=1.0).contains(x))
                || axis.windows(2).any(|w| w[0] >= w[1])
            {
                return Err(Error::Config(
                    "grid values must be increasing and lie in [0, 1]".into(),
                ));
            }
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceConfig {
    pub horizon: f64,
    pub n_paths: usize,
    pub bin: f64,
    pub seed: u64,
    pub p_ref: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceNode {
    pub theta: f64,
    pub theta_reinit: f64,
    pub vol: f64,
    pub vol_se: f64,
    /// Missing when no path has two reference-price moves.
    pub eta: Option<f64>,
    pub eta_se: Option<f64>,
    pub n_paths: usize,
    /// Mean number of reference-price moves per path.
    pub mean_moves: f64,
}

/// Nodes in row-major order: `theta` outer, `theta_reinit` inner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSurface {
    pub grid: GridSpec,
    pub nodes: Vec<SurfaceNode>,
}

impl CalibrationSurface {
    pub fn node(&self, i_theta: usize, i_reinit: usize) -> &SurfaceNode {
        &self.nodes[i_theta * self.grid.theta_reinits.len() + i_reinit]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "theta",
            "theta_reinit",
            "vol",
            "vol_se",
            "eta",
            "eta_se",
            "n_paths",
        ])?;
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
        for n in &self.nodes {
            out.write_record([
                format!("{}", n.theta),
                format!("{}", n.theta_reinit),
                n.vol.to_string(),
                n.vol_se.to_string(),
                opt(n.eta),
                opt(n.eta_se),
                n.n_paths.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a surface written by [`CalibrationSurface::write_csv`].
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut nodes = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let bad = |m: &str| Error::Input {
                line,
                message: m.to_string(),
            };
            if rec.len() != 7 {
                return Err(bad("expected 7 columns"));
            }
            let f = |j: usize| {
                rec[j]
                    .parse::<f64>()
                    .map_err(|_| bad(&format!("column {} is not a number", j + 1)))
            };
            let opt = |j: usize| {
                if rec[j].is_empty() {
                    Ok(None)
                } else {
                    f(j).map(Some)
                }
            };
            nodes.push(SurfaceNode {
                theta: f(0)?,
                theta_reinit: f(1)?,
                vol: f(2)?,
                vol_se: f(3)?,
                eta: opt(4)?,
                eta_se: opt(5)?,
                n_paths: rec[6]
                    .parse()
                    .map_err(|_| bad("n_paths is not an integer"))?,
                mean_moves: f64::NAN,
            });
        }
        let mut thetas: Vec<f64> = nodes.iter().map(|n| n.theta).collect();
        let mut reinits: Vec<f64> = nodes.iter().map(|n| n.theta_reinit).collect();
        for v in [&mut thetas, &mut reinits] {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        if thetas.len() * reinits.len() != nodes.len() {
            return Err(Error::Input {
                line: 0,
                message: "surface grid is not rectangular".into(),
            });
        }
        nodes.sort_by(|a, b| {
            a.theta
                .total_cmp(&b.theta)
                .then(a.theta_reinit.total_cmp(&b.theta_reinit))
        });
        Ok(CalibrationSurface {
            grid: GridSpec {
                thetas,
                theta_reinits: reinits,
            }
            .validated()?,
            nodes,
        })
    }
}

fn summarize(theta: f64, theta_reinit: f64, stats: &[PathStats]) -> SurfaceNode {
    let vols: Vec<f64> = stats.iter().map(PathStats::volatility).collect();
    let etas: Vec<f64> = stats
        .iter()
        .filter_map(|s| s.eta().ok())
        .filter(|e| e.is_finite())
        .collect();
    let (vol, vol_se) = mean_stderr(&vols);
    let (eta, eta_se) = if etas.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_stderr(&etas);
        (Some(m), Some(s))
    };
    let mean_moves =
        stats.iter().map(|s| s.n_moves as f64).sum::<f64>() / stats.len().max(1) as f64;
    SurfaceNode {
        theta,
        theta_reinit,
        vol,
        vol_se,
        eta,
        eta_se,
        n_paths: stats.len(),
        mean_moves,
    }
}

/// Ensemble of queue-reactive paths at every grid node.
///
/// `rules` supplies the redraw laws; its `θ` values are replaced node by node.
/// Each path starts from a book drawn from the same laws.
pub fn build_surface(
    model: &IntensityModel,
    rules: &QueueReactive,
    grid: &GridSpec,
    cfg: &SurfaceConfig,
) -> Result<CalibrationSurface> {
    if cfg.n_paths == 0 || !(cfg.horizon > 0.0) || !(cfg.bin > 0.0) {
        return Err(Error::Config(
            "surface needs positive n_paths, horizon and bin".into(),
        ));
    }
    let mut node_rules = Vec::new();
    for &t in &grid.thetas {
        for &r in &grid.theta_reinits {
            node_rules.push(rules.with_thetas(t, r)?);
        }
    }
    let jobs: Vec<(usize, usize)> = (0..node_rules.len())
        .flat_map(|n| (0..cfg.n_paths).map(move |p| (n, p)))
        .collect();
    let stats: Vec<PathStats> = jobs
        .par_iter()
        .map(|&(n, p)| {
            let mut rng = stream_rng(cfg.seed, p as u64);
            let r = &node_rules[n];
            let initial = r.draw_state(model.k(), cfg.p_ref, &mut rng);
            queue_reactive_stats(&initial, model, r, cfg.horizon, cfg.bin, &mut rng)
        })
        .collect();
    let nodes = stats
        .chunks(cfg.n_paths)
        .zip(&node_rules)
        .map(|(s, r)| summarize(r.theta, r.theta_reinit, s))
        .collect();
    Ok(CalibrationSurface {
        grid: grid.clone(),
        nodes,
    })
}

/// Volatility at `θ = 1, θ_reinit = 0`, where price moves are driven by queue depletions alone.
pub fn mechanical_volatility(
    model: &IntensityModel,
    rules: &QueueReactive,
    cfg: &SurfaceConfig,
) -> Result<SurfaceNode> {
    let grid = GridSpec {
        thetas: vec![1.0],
        theta_reinits: vec![0.0],
    };
    Ok(build_surface(model, rules, &grid, cfg)?.nodes[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inversion {
    pub theta: f64,
    pub theta_reinit: f64,
    pub vol: f64,
    pub eta: f64,
    /// Sum of squared relative errors at the optimum.
    pub residual: f64,
    pub warning: Option<String>,
}

/// Bilinear interpolation of `(vol, η)` at a point inside cell `(i, j)`; `None` if a corner lacks `η`.
fn interpolate(s: &CalibrationSurface, i: usize, j: usize, u: f64, v: f64) -> Option<(f64, f64)> {
    let ni = (i + 1).min(s.grid.thetas.len() - 1);
    let nj = (j + 1).min(s.grid.theta_reinits.len() - 1);
    let c = [s.node(i, j), s.node(i, nj), s.node(ni, j), s.node(ni, nj)];
    let w = [(1.0 - u) * (1.0 - v), (1.0 - u) * v, u * (1.0 - v), u * v];
    let mut vol = 0.0;
    let mut eta = 0.0;
    for (n, w) in c.iter().zip(w) {
        vol += w * n.vol;
        eta += w * n.eta?;
    }
    Some((vol, eta))
}

/// `(θ, θ_reinit)` whose interpolated `(vol, η)` best matches the targets in relative squared error.
///
/// A target equal to a node's values returns that node. Targets outside the surface's
/// range yield the closest point with a warning.
pub fn invert(surface: &CalibrationSurface, target_vol: f64, target_eta: f64) -> Result<Inversion> {
    if !(target_vol > 0.0 && target_eta > 0.0) {
        return Err(Error::Config("inversion targets must be positive".into()));
    }
    let objective = |vol: f64, eta: f64| {
        ((vol - target_vol) / target_vol).powi(2) + ((eta - target_eta) / target_eta).powi(2)
    };
    let g = &surface.grid;
    let (nt, nr) = (g.thetas.len(), g.theta_reinits.len());
    let axis = |xs: &[f64], i: usize, u: f64| {
        if i + 1 < xs.len() {
            xs[i] + u * (xs[i + 1] - xs[i])
        } else {
            xs[i]
        }
    };
    let mut best: Option<(f64, f64, f64, f64, f64)> = None;
    for n in &surface.nodes {
        if let Some(eta) = n.eta {
            if n.vol == target_vol && eta == target_eta {
                return Ok(Inversion {
                    theta: n.theta,
                    theta_reinit: n.theta_reinit,
                    vol: n.vol,
                    eta,
                    residual: 0.0,
                    warning: None,
                });
            }
        }
    }
    const STEPS: usize = 40;
    for i in 0..nt.saturating_sub(1).max(1) {
        for j in 0..nr.saturating_sub(1).max(1) {
            for a in 0..=STEPS {
                for b in 0..=STEPS {
                    let (u, v) = (a as f64 / STEPS as f64, b as f64 / STEPS as f64);
                    let Some((vol, eta)) = interpolate(surface, i, j, u, v) else {
                        continue;
                    };
                    let f = objective(vol, eta);
                    if best.is_none_or(|bst| f < bst.0) {
                        best = Some((
                            f,
                            axis(&g.thetas, i, u),
                            axis(&g.theta_reinits, j, v),
                            vol,
                            eta,
                        ));
                    }
                }
            }
        }
    }
    let (residual, theta, theta_reinit, vol, eta) = best
        .ok_or_else(|| Error::InsufficientData("no grid cell has η at all four corners".into()))?;
    let with_eta: Vec<&SurfaceNode> = surface.nodes.iter().filter(|n| n.eta.is_some()).collect();
    let max_vol = with_eta
        .iter()
        .map(|n| n.vol)
        .fold(f64::NEG_INFINITY, f64::max);
    let min_vol = with_eta.iter().map(|n| n.vol).fold(f64::INFINITY, f64::min);
    let max_eta = with_eta
        .iter()
        .filter_map(|n| n.eta)
        .fold(f64::NEG_INFINITY, f64::max);
    let min_eta = with_eta
        .iter()
        .filter_map(|n| n.eta)
        .fold(f64::INFINITY, f64::min);
    let mut notes = Vec::new();
    if target_vol > max_vol {
        notes.push(format!(
            "target volatility {target_vol:.3e} exceeds the largest attainable {max_vol:.3e}"
        ));
    } else if target_vol < min_vol {
        notes.push(format!(
            "target volatility {target_vol:.3e} is below the smallest attainable {min_vol:.3e}"
        ));
    }
    if target_eta > max_eta || target_eta < min_eta {
        notes.push(format!(
            "target eta {target_eta:.3} lies outside [{min_eta:.3}, {max_eta:.3}]"
        ));
    }
    let warning = (!notes.is_empty()).then(|| {
        format!(
            "out of range: {}; returning the nearest boundary point",
            notes.join("; ")
        )
    });
    Ok(Inversion {
        theta,
        theta_reinit,
        vol,
        eta,
        residual,
        warning,
    })
}

pub fn write_inversion_json<W: Write>(w: W, inv: &Inversion) -> Result<()> {
    serde_json::to_writer_pretty(w, inv)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::book::{ModelKind, QueueIndex, RateTable, DEFAULT_CAP};
    use crate::stationary::{LawMethod, StationaryLaw};
    use crate::synthetic;

    fn node(theta: f64, theta_reinit: f64, vol: f64, eta: f64) -> SurfaceNode {
        SurfaceNode {
            theta,
            theta_reinit,
            vol,
            vol_se: 0.0,
            eta: Some(eta),
            eta_se: Some(0.0),
            n_paths: 1,
            mean_moves: 0.0,
        }
    }

    /// vol = 1 + θ, η = 0.1 + 0.4 θ_reinit on a 3×3 grid.
    fn linear_surface() -> CalibrationSurface {
        let grid = GridSpec::uniform(3, 3).unwrap();
        let mut nodes = Vec::new();
        for &t in &grid.thetas {
            for &r in &grid.theta_reinits {
                nodes.push(node(t, r, 1.0 + t, 0.1 + 0.4 * r));
            }
        }
        CalibrationSurface { grid, nodes }
    }

    #[test]
    fn grid_parsing() {
        let g = GridSpec::parse("11x11").unwrap();
        assert_eq!((g.thetas.len(), g.theta_reinits.len()), (11, 11));
        assert_eq!(g.thetas[10], 1.0);
        assert!(GridSpec::parse("11by11").is_err());
        assert!(GridSpec::parse("0x3").is_err());
    }

    #[test]
    fn node_targets_return_the_node() {
        let s = linear_surface();
        let inv = invert(&s, 1.5, 0.5).unwrap();
        assert_eq!((inv.theta, inv.theta_reinit, inv.residual), (0.5, 1.0, 0.0));
        assert!(inv.warning.is_none());
    }

    #[test]
    fn interior_targets_interpolate() {
        let inv = invert(&linear_surface(), 1.25, 0.2).unwrap();
        assert!(
            (inv.theta - 0.25).abs() < 1e-9 && (inv.theta_reinit - 0.25).abs() < 1e-9,
            "{inv:?}"
        );
    }

    #[test]
    fn unreachable_volatility_warns() {
        let inv = invert(&linear_surface(), 3.0, 0.3).unwrap();
        assert_eq!(inv.theta, 1.0);
        assert!(inv.warning.unwrap().contains("exceeds"));
    }

    #[test]
    fn frozen_first_queues_give_zero_mechanical_volatility() {
        let t = RateTable::constant(DEFAULT_CAP, 1.0, 0.0, 0.0);
        let m = IntensityModel::independent(
            ModelKind::ModelI,
            0.01,
            vec![100.0; 3],
            vec![t.clone(), t.clone(), t],
        )
        .unwrap();
        let laws = (1..=3)
            .map(|d| {
                StationaryLaw::univariate(
                    QueueIndex::raw(d),
                    vec![0.0, 0.0, 1.0],
                    LawMethod::ClosedForm,
                )
            })
            .collect();
        let rules = QueueReactive::new(1.0, 0.0, laws).unwrap();
        let cfg = SurfaceConfig {
            horizon: 600.0,
            n_paths: 4,
            bin: 60.0,
            seed: 1,
            p_ref: synthetic::P_REF,
        };
        let n = mechanical_volatility(&m, &rules, &cfg).unwrap();
        assert_eq!((n.vol, n.eta, n.mean_moves), (0.0, None, 0.0));
    }

    #[test]
    fn zero_theta_row_has_no_moves() {
        let m = synthetic::model_i();
        let rules = synthetic::queue_reactive(0.7, 0.85);
        let grid = GridSpec {
            thetas: vec![0.0, 1.0],
            theta_reinits: vec![0.0, 1.0],
        };
        let cfg = SurfaceConfig {
            horizon: 1200.0,
            n_paths: 8,
            bin: 600.0,
            seed: 2,
            p_ref: synthetic::P_REF,
        };
        let s = build_surface(&m, &rules, &grid, &cfg).unwrap();
        for j in 0..2 {
            // without reference moves the midprice only wiggles inside the spread
            assert_eq!((s.node(0, j).eta, s.node(0, j).mean_moves), (None, 0.0));
            assert!(s.node(0, j).vol < s.node(1, j).vol);
        }
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = CalibrationSurface::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.grid, s.grid);
        assert_eq!(
            back.nodes.iter().map(|n| n.eta).collect::<Vec<_>>(),
            s.nodes.iter().map(|n| n.eta).collect::<Vec<_>>()
        );
    }
}
