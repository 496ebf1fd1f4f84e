//! Command-line pipelines with run manifests.
//!
//! Every subcommand reads a JSON config (optional), overlays command-line flags,
//! validates the merged document against its schema, then writes its outputs
//! atomically into `--out` together with `manifest.json`. Passing a manifest as
//! `--config` replays the recorded run.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analytics::{self, Benchmark, ExecutionReport, Schedule, Tactic, TcaConfig};
use crate::book::{
    check_ergodicity_assumptions, minimal_c_bound, ErgodicityReport, IntensityModel, LobState,
    QueueIndex,
};
use crate::calibrate::{self, CalibrationSurface, GridSpec, SurfaceConfig};
use crate::error::{Error, Result};
use crate::estimate::{self, EstimateConfig};
use crate::ingest::{self, EventRecord, Scope, Session};
use crate::rng::{derive_seed, stream_rng};
use crate::simulate::{self, InitialBook, QueueReactive};
use crate::stationary::{self, Averaging, McConfig, QbdOptions};
use crate::synthetic;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Prefix selecting a bundled synthetic model instead of a model file.
pub const FIXTURE_PREFIX: &str = "fixture:";
pub const DEFAULT_SESSION: &str = "10:00-16:30";
/// Default price level when a run starts from a synthetic book.
pub const DEFAULT_PRICE: f64 = 10.0;

#[derive(Debug, Parser)]
#[command(
    name = "lobqr",
    version,
    about = "Queue-reactive limit order book toolkit"
)]
pub struct Cli {
    /// Seed for every random stream of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for path and grid parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// JSON config or a manifest of a previous run; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reconstruct order-flow events from an L2 snapshot CSV.
    Ingest(IngestArgs),
    /// Fit an intensity model to reconstructed events.
    Estimate(EstimateArgs),
    /// Invariant law of a model (closed form, QBD or Monte Carlo).
    Invariant(InvariantArgs),
    /// Simulate queue-reactive paths.
    Simulate(SimulateArgs),
    /// Volatility and mean-reversion surface over (theta, theta_reinit), with inversion.
    Calibrate(CalibrateArgs),
    /// Execution probability of a passive buy at the best bid.
    Execprob(ExecprobArgs),
    /// Slippage of a sliced parent order.
    Tca(TcaArgs),
    /// Market impact surface over order size and time.
    Impact(ImpactArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    I,
    Iia,
    Iib,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum LawMethodChoice {
    Closed,
    Qbd,
    Mc,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct IngestArgs {
    /// L2 snapshot CSV.
    #[arg(long = "in", alias = "input")]
    pub input: Option<PathBuf>,
    /// Levels per side.
    #[arg(long)]
    pub k: Option<usize>,
    /// Tick size in currency.
    #[arg(long)]
    pub tick: Option<f64>,
    /// Time-of-day window `HH:MM-HH:MM`, or `all`.
    #[arg(long)]
    pub session: Option<String>,
    #[arg(skip)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateArgs {
    /// Directory written by `ingest`.
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<ModelChoice>,
    /// Write the model even if the ergodicity check fails.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub min_obs: Option<u64>,
    /// Largest tabulated queue size.
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(skip)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct InvariantArgs {
    /// Model JSON, or `fixture:i|iia|iib`.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub method: Option<LawMethodChoice>,
    /// Distance of the queue for the closed form.
    #[arg(long)]
    pub queue: Option<usize>,
    /// Truncation of the closed form.
    #[arg(long)]
    pub n_trunc: Option<usize>,
    /// QBD phases (sizes of the second queue).
    #[arg(long)]
    pub phases: Option<usize>,
    /// Monte Carlo events after burn-in.
    #[arg(long)]
    pub events: Option<u64>,
    /// Monte Carlo tabulated sizes per dimension.
    #[arg(long)]
    pub max_size: Option<usize>,
    #[arg(skip)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub theta_reinit: Option<f64>,
    #[arg(long)]
    pub horizon_s: Option<f64>,
    #[arg(long)]
    pub n_paths: Option<usize>,
    /// `invariant`, or `;`-separated queue sizes from `Q_{-K}` to `Q_K`.
    #[arg(long)]
    pub initial: Option<String>,
    /// Reference price in currency.
    #[arg(long)]
    pub price: Option<f64>,
    /// Return bin for volatility, seconds.
    #[arg(long)]
    pub bin_s: Option<f64>,
    /// Also write every event of every path.
    #[arg(long)]
    pub write_paths: bool,
    #[arg(skip)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: Option<String>,
    /// Grid resolution `NxM` over (theta, theta_reinit).
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub horizon_s: Option<f64>,
    #[arg(long)]
    pub n_paths: Option<usize>,
    #[arg(long)]
    pub bin_s: Option<f64>,
    #[arg(long)]
    pub price: Option<f64>,
    /// Target volatility for the inversion.
    #[arg(long)]
    pub target_vol: Option<f64>,
    /// Target mean-reversion ratio for the inversion.
    #[arg(long)]
    pub target_eta: Option<f64>,
    /// Surface CSV from a previous run; skips the simulation.
    #[arg(long)]
    pub surface: Option<PathBuf>,
    /// Also report the volatility at theta = 1, theta_reinit = 0.
    #[arg(long)]
    pub mechanical: bool,
    #[arg(skip)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ExecprobArgs {
    #[arg(long)]
    pub model: Option<String>,
    /// Initial sizes of `Q_{-1}` including the agent's units, one row each.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<u32>>,
    /// Size of `Q_1`; defaults to the `Q_{-1}` size.
    #[arg(long)]
    pub ask_size: Option<u32>,
    /// Size of the deeper queues; defaults to the `Q_{-1}` size.
    #[arg(long)]
    pub depth: Option<u32>,
    /// Agent order in first-limit units.
    #[arg(long)]
    pub n0: Option<u32>,
    #[arg(long)]
    pub n_paths: Option<usize>,
    #[arg(long)]
    pub price: Option<f64>,
    #[arg(skip)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct TcaArgs {
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub theta_reinit: Option<f64>,
    #[arg(long)]
    pub schedule: Option<Schedule>,
    #[arg(long)]
    pub tactic: Option<Tactic>,
    #[arg(long)]
    pub benchmark: Option<Benchmark>,
    /// Parent order in first-limit units.
    #[arg(long)]
    pub n_total: Option<u64>,
    #[arg(long)]
    pub slices: Option<usize>,
    #[arg(long)]
    pub slice_s: Option<f64>,
    #[arg(long)]
    pub n_paths: Option<usize>,
    #[arg(long)]
    pub price: Option<f64>,
    #[arg(skip)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ImpactArgs {
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub theta_reinit: Option<f64>,
    #[arg(long)]
    pub tactic: Option<Tactic>,
    /// Order sizes in first-limit units.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<u64>>,
    /// Observation times in seconds.
    #[arg(long, value_delimiter = ',')]
    pub t: Option<Vec<f64>>,
    #[arg(long)]
    pub n_paths: Option<usize>,
    #[arg(long)]
    pub price: Option<f64>,
    #[arg(skip)]
    pub seed: Option<u64>,
}

/// Provenance record written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub toolkit_version: String,
    pub seed: u64,
    /// `flag`, `config`, `manifest` or `generated`.
    pub seed_source: String,
    pub config_sha256: String,
    /// Fully resolved config; input paths are absolute.
    pub config: Value,
    /// Input file to SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub threads: usize,
    pub started_at: String,
    pub finished_at: String,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn now_rfc3339() -> String {
    time::OffsetDateTime::now_utc()
        .format(&time::format_description::well_known::Rfc3339)
        .unwrap_or_default()
}

/// Output sink of one run: atomic writes, hashes for the manifest.
pub struct Run {
    out: PathBuf,
    seed: u64,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Run {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        self.inputs
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    /// Writes `name` via a temporary file and rename.
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let tmp = self.out.join(format!(".{name}.tmp"));
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, self.out.join(name))?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut buf = serde_json::to_vec_pretty(value)?;
        buf.push(b'\n');
        self.write(name, &buf)
    }
}

/// Subcommand contract shared by the config machinery.
trait Step: Serialize + DeserializeOwned + Default + Clone + Send + Sync + JsonSchema {
    const NAME: &'static str;
    /// Keys holding filesystem paths; relative values resolve against the config file.
    const PATH_KEYS: &'static [&'static str];
    fn set_seed(&mut self, seed: Option<u64>);
    fn seed(&self) -> Option<u64>;
    fn run(&self, run: &mut Run) -> Result<()>;
}

macro_rules! step {
    ($t:ty, $name:literal, [$($k:literal),*]) => {
        impl Step for $t {
            const NAME: &'static str = $name;
            const PATH_KEYS: &'static [&'static str] = &[$($k),*];
            fn set_seed(&mut self, seed: Option<u64>) {
                self.seed = seed;
            }
            fn seed(&self) -> Option<u64> {
                self.seed
            }
            fn run(&self, run: &mut Run) -> Result<()> {
                <$t>::execute(self, run)
            }
        }
    };
}

step!(IngestArgs, "ingest", ["input"]);
step!(EstimateArgs, "estimate", ["events"]);
step!(InvariantArgs, "invariant", ["model"]);
step!(SimulateArgs, "simulate", ["model"]);
step!(CalibrateArgs, "calibrate", ["model", "surface"]);
step!(ExecprobArgs, "execprob", ["model"]);
step!(TcaArgs, "tca", ["model"]);
step!(ImpactArgs, "impact", ["model"]);

pub const SUBCOMMANDS: [&str; 8] = [
    "ingest",
    "estimate",
    "invariant",
    "simulate",
    "calibrate",
    "execprob",
    "tca",
    "impact",
];

/// JSON Schema of the config accepted by `subcommand`.
pub fn config_schema(subcommand: &str) -> Option<Value> {
    fn of<T: Step>() -> Value {
        serde_json::to_value(schemars::schema_for!(T)).expect("schema serializes")
    }
    Some(match subcommand {
        "ingest" => of::<IngestArgs>(),
        "estimate" => of::<EstimateArgs>(),
        "invariant" => of::<InvariantArgs>(),
        "simulate" => of::<SimulateArgs>(),
        "calibrate" => of::<CalibrateArgs>(),
        "execprob" => of::<ExecprobArgs>(),
        "tca" => of::<TcaArgs>(),
        "impact" => of::<ImpactArgs>(),
        _ => return None,
    })
}

fn resolve_path(value: &mut Value, base: &Path) {
    if let Value::String(s) = value {
        if s.starts_with(FIXTURE_PREFIX) {
            return;
        }
        let p = base.join(&*s);
        *s = std::path::absolute(&p).unwrap_or(p).display().to_string();
    }
}

/// Overlays non-default flag values onto the config document.
fn overlay(base: &mut Value, flags: Value) {
    let (Value::Object(b), Value::Object(f)) = (base, flags) else {
        return;
    };
    for (k, v) in f {
        if !(v.is_null() || v == Value::Bool(false)) {
            b.insert(k, v);
        }
    }
}

struct Resolved<T> {
    args: T,
    seed: u64,
    seed_source: &'static str,
    config: Value,
}

fn resolve<T: Step>(flags: &T, cli: &Cli) -> Result<Resolved<T>> {
    let mut doc = Value::Object(Default::default());
    let mut manifest_seed = None;
    let mut replay = false;
    if let Some(path) = &cli.config {
        let text = fs::read(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut v: Value = serde_json::from_slice(&text)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        if v.get("toolkit_version").is_some() && v.get("subcommand").is_some() {
            let m: RunManifest = serde_json::from_value(v)
                .map_err(|e| Error::Config(format!("manifest {}: {e}", path.display())))?;
            if m.subcommand != T::NAME {
                return Err(Error::Config(format!(
                    "manifest is for `{}`, not `{}`",
                    m.subcommand,
                    T::NAME
                )));
            }
            manifest_seed = Some(m.seed);
            replay = true;
            v = m.config;
        } else {
            let base = path.parent().unwrap_or(Path::new("."));
            for key in T::PATH_KEYS {
                if let Some(x) = v.get_mut(*key) {
                    resolve_path(x, base);
                }
            }
        }
        if !v.is_object() {
            return Err(Error::Config("config must be a JSON object".into()));
        }
        doc = v;
    }
    let mut flag_doc = serde_json::to_value(flags)?;
    for key in T::PATH_KEYS {
        if let Some(x) = flag_doc.get_mut(*key) {
            resolve_path(x, Path::new(""));
        }
    }
    overlay(&mut doc, flag_doc);
    let mut args: T = serde_json::from_value(doc)
        .map_err(|e| Error::Config(format!("{} config: {e}", T::NAME)))?;
    let (seed, seed_source) = match (cli.seed, args.seed(), manifest_seed) {
        (Some(s), _, _) => (s, "flag"),
        (None, Some(s), _) => (s, if replay { "manifest" } else { "config" }),
        (None, None, Some(s)) => (s, "manifest"),
        (None, None, None) => {
            let nanos = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_nanos() as u64)
                .unwrap_or(0);
            (derive_seed(nanos, std::process::id() as u64), "generated")
        }
    };
    args.set_seed(Some(seed));
    let config = serde_json::to_value(&args)?;
    Ok(Resolved {
        args,
        seed,
        seed_source,
        config,
    })
}

fn execute<T: Step>(flags: &T, cli: &Cli) -> Result<()> {
    let started_at = now_rfc3339();
    let Resolved {
        args,
        seed,
        seed_source,
        config,
    } = resolve(flags, cli)?;
    let threads = cli.jobs.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} workers: {e}")))?;
    fs::create_dir_all(&cli.out)?;
    let mut run = Run {
        out: cli.out.clone(),
        seed,
        inputs: BTreeMap::new(),
        outputs: BTreeMap::new(),
    };
    let threads = pool.current_num_threads();
    pool.install(|| args.run(&mut run))?;
    let manifest = RunManifest {
        subcommand: T::NAME.to_string(),
        toolkit_version: TOOLKIT_VERSION.to_string(),
        seed,
        seed_source: seed_source.to_string(),
        config_sha256: sha256_hex(&serde_json::to_vec(&config)?),
        config,
        inputs: run.inputs.clone(),
        outputs: run.outputs.clone(),
        threads,
        started_at,
        finished_at: now_rfc3339(),
    };
    let mut buf = serde_json::to_vec_pretty(&manifest)?;
    buf.push(b'\n');
    let tmp = cli.out.join(".manifest.json.tmp");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, cli.out.join("manifest.json"))?;
    Ok(())
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
///
/// Errors are reported on stderr as `{"error", "message", "exit_code"}`.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            eprintln!(
                "{}",
                json!({ "error": e.kind(), "message": e.to_string(), "exit_code": code })
            );
            code
        }
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => execute(a, cli),
        Command::Estimate(a) => execute(a, cli),
        Command::Invariant(a) => execute(a, cli),
        Command::Simulate(a) => execute(a, cli),
        Command::Calibrate(a) => execute(a, cli),
        Command::Execprob(a) => execute(a, cli),
        Command::Tca(a) => execute(a, cli),
        Command::Impact(a) => execute(a, cli),
    }
}

fn required<'a, T>(x: &'a Option<T>, key: &str) -> Result<&'a T> {
    x.as_ref()
        .ok_or_else(|| Error::Config(format!("missing required option `{key}`")))
}

fn probability(x: Option<f64>, default: f64, key: &str) -> Result<f64> {
    let v = x.unwrap_or(default);
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Config(format!(
            "`{key}` must lie in [0, 1], got {v}"
        )));
    }
    Ok(v)
}

fn positive(x: f64, key: &str) -> Result<f64> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::Config(format!("`{key}` must be positive, got {x}")));
    }
    Ok(x)
}

fn nonzero(x: usize, key: &str) -> Result<usize> {
    if x == 0 {
        return Err(Error::Config(format!("`{key}` must be positive")));
    }
    Ok(x)
}

/// Loads a model file or a bundled fixture.
pub fn load_model(spec: &str, run: Option<&mut Run>) -> Result<IntensityModel> {
    if let Some(name) = spec.strip_prefix(FIXTURE_PREFIX) {
        return match name {
            "i" => Ok(synthetic::model_i()),
            "iia" => Ok(synthetic::model_iia()),
            "iib" => Ok(synthetic::model_iib()),
            _ => Err(Error::Config(format!(
                "unknown fixture `{name}`; expected i, iia or iib"
            ))),
        };
    }
    let bytes = match run {
        Some(r) => r.read_input(Path::new(spec))?,
        None => fs::read(spec)?,
    };
    IntensityModel::from_json(
        std::str::from_utf8(&bytes).map_err(|_| Error::Config(format!("{spec} is not UTF-8")))?,
    )
}

/// Reference price in odd half-ticks closest to `price`.
pub fn p_ref_for_price(price: f64, tick: f64) -> Result<i64> {
    positive(price, "price")?;
    Ok(2 * (price / tick).floor() as i64 + 1)
}

fn rules_for(
    model: &IntensityModel,
    theta: f64,
    theta_reinit: f64,
    seed: u64,
) -> Result<QueueReactive> {
    QueueReactive::new(theta, theta_reinit, stationary::redraw_laws(model, seed)?)
}

fn parse_initial(s: &str, model: &IntensityModel, p_ref: i64) -> Result<InitialBook> {
    if s == "invariant" {
        return Ok(InitialBook::Invariant { p_ref });
    }
    let q = s
        .split([';', ','])
        .map(|x| {
            x.trim().parse::<u32>().map_err(|_| {
                Error::Config(format!(
                    "initial book `{s}` is not `invariant` or a list of sizes"
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if q.len() != 2 * model.k() {
        return Err(Error::Config(format!(
            "initial book needs {} sizes, got {}",
            2 * model.k(),
            q.len()
        )));
    }
    Ok(InitialBook::Fixed(LobState::new(q, p_ref)?))
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn fmt(x: f64) -> String {
    format!("{x:.12e}")
}

/// Metadata passed from `ingest` to `estimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventsMeta {
    pub k: usize,
    pub tick_value: f64,
    pub aes: Vec<f64>,
}

pub fn events_file(scope: Scope) -> String {
    format!("events_{}.csv", scope.key())
}

impl IngestArgs {
    fn execute(&self, run: &mut Run) -> Result<()> {
        let input = required(&self.input, "in")?;
        let k = self.k.unwrap_or(3);
        if k == 0 || k > crate::book::MAX_K {
            return Err(Error::Config(format!(
                "k must be in 1..={}, got {k}",
                crate::book::MAX_K
            )));
        }
        let tick = positive(*required(&self.tick, "tick")?, "tick")?;
        let bytes = run.read_input(input)?;
        if bytes.iter().all(u8::is_ascii_whitespace) {
            return Err(Error::NoData("no snapshots".into()));
        }
        let mut snaps = ingest::read_l2_csv(bytes.as_slice(), k, tick)?;
        match self.session.as_deref().unwrap_or(DEFAULT_SESSION) {
            "all" => {}
            s => {
                let session = Session::parse(s)?;
                snaps.retain(|x| session.contains(x.ts_ns));
            }
        }
        if snaps.is_empty() {
            return Err(Error::NoData("no snapshots".into()));
        }
        let aes = ingest::compute_aes(&snaps, k)?;
        let mut qc = None;
        for scope in [Scope::Queue, Scope::FirstTwo, Scope::FirstOpposite] {
            let (records, report, pref) = ingest::reconstruct_events(&snaps, &aes, k, scope)?;
            run.write_with(&events_file(scope), |b| {
                ingest::write_records_csv(b, &records)
            })?;
            if scope == Scope::Queue {
                let rows = pref.iter().map(|(t, p)| {
                    vec![
                        format!("{t:.9}"),
                        p.to_string(),
                        (*p as f64 * tick / 2.0).to_string(),
                    ]
                });
                let bytes = csv_bytes(&["t", "p_ref_half_ticks", "p_ref"], rows)?;
                run.write("pref.csv", &bytes)?;
                qc = Some(report);
            }
        }
        run.write_json("qc.json", &qc)?;
        run.write_json(
            "meta.json",
            &EventsMeta {
                k,
                tick_value: tick,
                aes,
            },
        )
    }
}

#[derive(Debug, Clone, Serialize)]
struct EstimateSummary<'a> {
    model: ModelChoice,
    n_events: usize,
    thresholds: Option<crate::book::RegimeThresholds>,
    report: Option<&'a estimate::EstimateReport>,
    ergodicity: Option<ErgodicityReport>,
    ergodic: bool,
}

fn ergodicity(model: &IntensityModel) -> (Option<ErgodicityReport>, bool) {
    match minimal_c_bound(model) {
        Some(c) => {
            let r = check_ergodicity_assumptions(model, c);
            (Some(r), r.ok)
        }
        None => (
            Some(check_ergodicity_assumptions(model, model.cap())),
            false,
        ),
    }
}

impl EstimateArgs {
    fn read_events(run: &mut Run, dir: &Path, scope: Scope, k: usize) -> Result<Vec<EventRecord>> {
        let bytes = run.read_input(&dir.join(events_file(scope)))?;
        ingest::read_records_csv(bytes.as_slice(), k)
    }

    fn execute(&self, run: &mut Run) -> Result<()> {
        let dir = required(&self.events, "events")?;
        let choice = self.model.unwrap_or(ModelChoice::I);
        let meta: EventsMeta = serde_json::from_slice(&run.read_input(&dir.join("meta.json"))?)?;
        let mut cfg = EstimateConfig::new(meta.k, meta.tick_value, meta.aes.clone());
        if let Some(c) = self.cap {
            cfg.cap = nonzero(c, "cap")?;
        }
        if let Some(m) = self.min_obs {
            cfg.min_obs = m;
        }
        let queue = Self::read_events(run, dir, Scope::Queue, meta.k)?;
        if queue.is_empty() {
            return Err(Error::NoData("no events".into()));
        }
        let (model, estimation, thresholds) = match choice {
            ModelChoice::Poisson => (
                estimate::estimate_poisson_baseline(&queue, &cfg)?.0,
                None,
                None,
            ),
            ModelChoice::I => {
                let e = estimate::estimate_model_i(&queue, &cfg)?;
                (e.model.clone(), Some(e), None)
            }
            ModelChoice::Iia => {
                let pair = Self::read_events(run, dir, Scope::FirstTwo, meta.k)?;
                let e = estimate::estimate_model_iia(&queue, &pair, &cfg)?;
                (e.model.clone(), Some(e), None)
            }
            ModelChoice::Iib => {
                let pair = Self::read_events(run, dir, Scope::FirstTwo, meta.k)?;
                let opp = Self::read_events(run, dir, Scope::FirstOpposite, meta.k)?;
                let th = estimate::compute_thresholds(&estimate::first_limit_law(&queue, cfg.cap))?;
                let e = estimate::estimate_model_iib(&queue, &pair, &opp, th, &cfg)?;
                (e.model.clone(), Some(e), Some(th))
            }
        };
        let (report, ergodic) = ergodicity(&model);
        let summary = EstimateSummary {
            model: choice,
            n_events: queue.len(),
            thresholds,
            report: estimation.as_ref().map(|e| &e.report),
            ergodicity: report,
            ergodic,
        };
        println!("{}", serde_json::to_string_pretty(&summary)?);
        if !ergodic && !self.force {
            return Err(Error::NonErgodic(format!(
                "estimated model fails the drift check (delta = {}); rerun with --force to keep it",
                report.map_or(f64::NAN, |r| r.delta)
            )));
        }
        let mut json = model.to_json()?.into_bytes();
        json.push(b'\n');
        run.write("model.json", &json)?;
        if let Some(e) = &estimation {
            run.write_with("ci.csv", |b| e.write_ci_csv(b))?;
        }
        run.write_json("estimate_report.json", &summary)?;
        run.write_json(
            "ergodicity.json",
            &json!({ "report": report, "ergodic": ergodic }),
        )
    }
}

impl InvariantArgs {
    fn execute(&self, run: &mut Run) -> Result<()> {
        let model = load_model(required(&self.model, "model")?, Some(run))?;
        let method = self.method.unwrap_or(LawMethodChoice::Closed);
        let (law, diagnostics) = match method {
            LawMethodChoice::Closed => {
                let d = self.queue.unwrap_or(1);
                let q = QueueIndex::new(d as i32, model.k())?;
                let law = stationary::invariant_model_i(
                    &model,
                    q,
                    self.n_trunc.unwrap_or(synthetic::LAW_TRUNCATION),
                )?;
                let diag = json!({ "method": "closed", "queue": d, "tail_mass": law.tail_mass });
                (law, diag)
            }
            LawMethodChoice::Qbd => {
                let blocks = stationary::build_qbd_blocks(
                    &model,
                    self.phases.unwrap_or(model.cap() + 1),
                    &Averaging::Unweighted,
                )?;
                let (law, diag) = stationary::solve_qbd(&blocks, &QbdOptions::default())?;
                (
                    law,
                    json!({ "method": "qbd", "lambda1": blocks.lambda1, "mu1": blocks.mu1, "qbd": diag }),
                )
            }
            LawMethodChoice::Mc => {
                let dims = match model.kind() {
                    crate::book::ModelKind::ModelIIa => {
                        vec![QueueIndex::raw(1), QueueIndex::raw(2)]
                    }
                    crate::book::ModelKind::ModelIIb => {
                        vec![QueueIndex::raw(-1), QueueIndex::raw(1)]
                    }
                    _ => vec![QueueIndex::new(self.queue.unwrap_or(1) as i32, model.k())?],
                };
                let n_segments = 8;
                let events = self.events.unwrap_or(8_000_000);
                let cfg = McConfig {
                    dims,
                    max_size: self.max_size.unwrap_or(4 * model.cap()),
                    n_segments,
                    events_per_segment: (events as usize).div_ceil(n_segments),
                    burn_in_events: 10_000,
                    seed: run.seed(),
                    initial: LobState {
                        q: vec![1; 2 * model.k()],
                        p_ref: 1,
                    },
                };
                let (law, report) = stationary::invariant_monte_carlo(&model, &cfg)?;
                let diag = json!({ "method": "mc", "tail_mass": law.tail_mass, "mc": report });
                (law, diag)
            }
        };
        run.write_with("law.csv", |b| law.write_csv(b))?;
        run.write_json("diagnostics.json", &diagnostics)
    }
}

impl SimulateArgs {
    fn execute(&self, run: &mut Run) -> Result<()> {
        let model = load_model(required(&self.model, "model")?, Some(run))?;
        let theta = probability(self.theta, 0.7, "theta")?;
        let theta_reinit = probability(self.theta_reinit, 0.85, "theta_reinit")?;
        let horizon = positive(self.horizon_s.unwrap_or(3600.0), "horizon_s")?;
        let bin = positive(self.bin_s.unwrap_or(calibrate::DEFAULT_BIN), "bin_s")?;
        let n_paths = nonzero(self.n_paths.unwrap_or(1), "n_paths")?;
        let p_ref = p_ref_for_price(self.price.unwrap_or(DEFAULT_PRICE), model.tick_value())?;
        let initial = parse_initial(
            self.initial.as_deref().unwrap_or("invariant"),
            &model,
            p_ref,
        )?;
        let seed = run.seed();
        let rules = rules_for(&model, theta, theta_reinit, seed)?;
        let paths = (0..n_paths)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(seed, i as u64);
                let state = initial.draw(&model, Some(&rules), &mut rng)?;
                simulate::simulate_queue_reactive(&state, &model, &rules, horizon, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::with_capacity(n_paths);
        for (i, path) in paths.iter().enumerate() {
            let s = simulate::path_stats(path, bin);
            let eta = s.eta().map_or(String::new(), |x| x.to_string());
            rows.push(vec![
                i.to_string(),
                path.n_orders().to_string(),
                s.n_moves.to_string(),
                fmt(s.volatility()),
                eta,
            ]);
            if self.write_paths {
                run.write_with(&format!("path_{i:04}.csv"), |b| path.write_csv(b))?;
            }
        }
        let bytes = csv_bytes(&["path", "n_orders", "n_moves", "vol", "eta"], rows)?;
        run.write("stats.csv", &bytes)
    }
}

impl CalibrateArgs {
    fn execute(&self, run: &mut Run) -> Result<()> {
        let surface = if let Some(path) = &self.surface {
            CalibrationSurface::read_csv(run.read_input(path)?.as_slice())?
        } else {
            let model = load_model(required(&self.model, "model")?, Some(run))?;
            let grid = match &self.grid {
                Some(g) => GridSpec::parse(g)?,
                None => GridSpec::uniform(calibrate::DEFAULT_GRID, calibrate::DEFAULT_GRID)?,
            };
            let cfg = SurfaceConfig {
                horizon: positive(self.horizon_s.unwrap_or(23_400.0), "horizon_s")?,
                n_paths: nonzero(self.n_paths.unwrap_or(200), "n_paths")?,
                bin: positive(self.bin_s.unwrap_or(calibrate::DEFAULT_BIN), "bin_s")?,
                seed: run.seed(),
                p_ref: p_ref_for_price(self.price.unwrap_or(DEFAULT_PRICE), model.tick_value())?,
            };
            let rules = rules_for(&model, 1.0, 0.0, run.seed())?;
            let surface = calibrate::build_surface(&model, &rules, &grid, &cfg)?;
            if self.mechanical {
                let node = calibrate::mechanical_volatility(&model, &rules, &cfg)?;
                run.write_json("mechanical.json", &node)?;
            }
            surface
        };
        run.write_with("surface.csv", |b| surface.write_csv(b))?;
        if let (Some(v), Some(e)) = (self.target_vol, self.target_eta) {
            let inv = calibrate::invert(&surface, v, e)?;
            run.write_with("inversion.json", |b| {
                calibrate::write_inversion_json(b, &inv)
            })?;
        } else if self.target_vol.is_some() != self.target_eta.is_some() {
            return Err(Error::Config(
                "inversion needs both target_vol and target_eta".into(),
            ));
        }
        Ok(())
    }
}

impl ExecprobArgs {
    fn execute(&self, run: &mut Run) -> Result<()> {
        let model = load_model(required(&self.model, "model")?, Some(run))?;
        let sizes = self.sizes.clone().unwrap_or_else(|| (1..=10).collect());
        let n0 = self.n0.unwrap_or(1);
        let n_paths = nonzero(self.n_paths.unwrap_or(10_000), "n_paths")?;
        let p_ref = p_ref_for_price(self.price.unwrap_or(DEFAULT_PRICE), model.tick_value())?;
        let k = model.k();
        let mut rows = Vec::with_capacity(sizes.len());
        for (row, &s) in sizes.iter().enumerate() {
            let ask = self.ask_size.unwrap_or(s);
            let mut state = LobState {
                q: vec![self.depth.unwrap_or(s); 2 * k],
                p_ref,
            };
            state.set(QueueIndex::raw(-1), s);
            state.set(QueueIndex::raw(1), ask);
            let r = analytics::execution_probability(
                &model,
                &state,
                n0,
                n_paths,
                derive_seed(run.seed(), row as u64),
            )?;
            rows.push(vec![
                s.to_string(),
                ask.to_string(),
                n0.to_string(),
                fmt(r.probability),
                fmt(r.stderr),
                r.n_paths.to_string(),
                r.unresolved.to_string(),
            ]);
        }
        let bytes = csv_bytes(
            &[
                "q_bid",
                "q_ask",
                "n0",
                "probability",
                "stderr",
                "n_paths",
                "unresolved",
            ],
            rows,
        )?;
        run.write("execprob.csv", &bytes)
    }
}

/// Distribution summary of the slippages of a TCA run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcaSummary {
    pub n_paths: usize,
    pub n_total_shares: u64,
    pub all_filled: bool,
    pub slippage_mean: f64,
    pub slippage_stderr: f64,
    pub slippage_quantiles: BTreeMap<String, f64>,
    pub slippage_theo_mean: f64,
    pub passive_rate_mean: f64,
    pub passive_rate_stderr: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn tca_summary(reports: &[ExecutionReport]) -> TcaSummary {
    let slip: Vec<f64> = reports.iter().map(|r| r.slippage).collect();
    let theo: Vec<f64> = reports.iter().map(|r| r.slippage_theo).collect();
    let passive: Vec<f64> = reports.iter().map(|r| r.passive_rate).collect();
    let (slippage_mean, slippage_stderr) = analytics::mean_stderr(&slip);
    let (passive_rate_mean, passive_rate_stderr) = analytics::mean_stderr(&passive);
    let mut sorted = slip.clone();
    sorted.sort_by(f64::total_cmp);
    let slippage_quantiles = if sorted.is_empty() {
        BTreeMap::new()
    } else {
        [0.05, 0.25, 0.5, 0.75, 0.95]
            .iter()
            .map(|&q| (format!("q{:02}", (q * 100.0) as u32), quantile(&sorted, q)))
            .collect()
    };
    TcaSummary {
        n_paths: reports.len(),
        n_total_shares: reports.first().map_or(0, |r| r.total_shares),
        all_filled: reports
            .iter()
            .all(|r| r.executed_shares() == r.total_shares),
        slippage_mean,
        slippage_stderr,
        slippage_quantiles,
        slippage_theo_mean: analytics::mean_stderr(&theo).0,
        passive_rate_mean,
        passive_rate_stderr,
    }
}

impl TcaArgs {
    fn execute(&self, run: &mut Run) -> Result<()> {
        let model = load_model(required(&self.model, "model")?, Some(run))?;
        let rules = rules_for(
            &model,
            probability(self.theta, 0.7, "theta")?,
            probability(self.theta_reinit, 0.85, "theta_reinit")?,
            run.seed(),
        )?;
        let cfg = TcaConfig {
            schedule: self.schedule.unwrap_or(Schedule::S1),
            tactic: self.tactic.unwrap_or(Tactic::T1),
            benchmark: self.benchmark.unwrap_or(Benchmark::Arrival),
            n_total: self.n_total.unwrap_or(60),
            m: self.slices.unwrap_or(20),
            slice_duration: self.slice_s.unwrap_or(600.0),
        };
        let p_ref = p_ref_for_price(self.price.unwrap_or(DEFAULT_PRICE), model.tick_value())?;
        let n_paths = nonzero(self.n_paths.unwrap_or(1000), "n_paths")?;
        let reports = analytics::run_tactic(
            &model,
            Some(&rules),
            &InitialBook::Invariant { p_ref },
            &cfg,
            n_paths,
            run.seed(),
        )?;
        run.write_with("reports.csv", |b| analytics::write_reports_csv(b, &reports))?;
        run.write_with("slippage.csv", |b| {
            analytics::write_slippage_csv(b, &reports)
        })?;
        run.write_json("summary.json", &tca_summary(&reports))
    }
}

impl ImpactArgs {
    fn execute(&self, run: &mut Run) -> Result<()> {
        let model = load_model(required(&self.model, "model")?, Some(run))?;
        let rules = rules_for(
            &model,
            probability(self.theta, 0.7, "theta")?,
            probability(self.theta_reinit, 0.85, "theta_reinit")?,
            run.seed(),
        )?;
        let ns = self
            .n
            .clone()
            .unwrap_or_else(|| vec![0, 1, 5, 10, 20, 40, 60]);
        let times = self.t.clone().unwrap_or_else(|| vec![60.0, 300.0, 600.0]);
        let p_ref = p_ref_for_price(self.price.unwrap_or(DEFAULT_PRICE), model.tick_value())?;
        let n_paths = nonzero(self.n_paths.unwrap_or(500), "n_paths")?;
        let points = analytics::market_impact(
            &model,
            Some(&rules),
            &InitialBook::Invariant { p_ref },
            self.tactic.unwrap_or(Tactic::T1),
            &ns,
            &times,
            n_paths,
            run.seed(),
        )?;
        run.write_with("impact.csv", |b| analytics::write_impact_csv(b, &points))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("lobqr").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_config_and_paths_resolve_against_it() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(
            &cfg,
            r#"{"model": "m.json", "theta": 0.5, "n_paths": 3, "seed": 9}"#,
        )
        .unwrap();
        let c = cli(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--theta",
            "0.25",
        ]);
        let Command::Simulate(a) = &c.command else {
            unreachable!()
        };
        let r = resolve(a, &c).unwrap();
        assert_eq!(r.args.theta, Some(0.25));
        assert_eq!(r.args.n_paths, Some(3));
        assert_eq!((r.seed, r.seed_source), (9, "config"));
        assert_eq!(
            PathBuf::from(r.args.model.unwrap()),
            std::path::absolute(dir.path().join("m.json")).unwrap()
        );
    }

    #[test]
    fn unknown_config_key_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"model": "fixture:i", "thetta": 0.5}"#).unwrap();
        let c = cli(&["simulate", "--config", cfg.to_str().unwrap()]);
        let Command::Simulate(a) = &c.command else {
            unreachable!()
        };
        let e = resolve(a, &c).err().unwrap();
        assert!(matches!(e, Error::Config(_)));
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn seed_flag_wins_and_missing_seed_is_generated() {
        let c = cli(&["--seed", "4", "invariant", "--model", "fixture:i"]);
        let Command::Invariant(a) = &c.command else {
            unreachable!()
        };
        assert_eq!(resolve(a, &c).unwrap().seed_source, "flag");
        let c = cli(&["invariant", "--model", "fixture:i"]);
        let Command::Invariant(a) = &c.command else {
            unreachable!()
        };
        let r = resolve(a, &c).unwrap();
        assert_eq!(r.seed_source, "generated");
        assert_eq!(r.config["seed"], json!(r.seed));
    }

    #[test]
    fn published_schemas_are_current() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas");
        for name in SUBCOMMANDS {
            let path = dir.join(format!("{name}.schema.json"));
            let want = serde_json::to_string_pretty(&config_schema(name).unwrap()).unwrap() + "\n";
            if std::env::var_os("LOBQR_BLESS").is_some() {
                fs::create_dir_all(&dir).unwrap();
                fs::write(&path, &want).unwrap();
            }
            assert_eq!(
                fs::read_to_string(&path).unwrap(),
                want,
                "{} is stale; rerun with LOBQR_BLESS=1",
                path.display()
            );
        }
    }

    #[test]
    fn p_ref_is_odd_and_near_price() {
        let p = p_ref_for_price(15.0, 0.005).unwrap();
        assert_eq!(p % 2, 1);
        assert!((p as f64 * 0.005 / 2.0 - 15.0).abs() <= 0.005);
    }

    #[test]
    fn quantiles_interpolate() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&xs, 0.5), 2.0);
        assert_eq!(quantile(&xs, 0.05), 0.2);
    }
}
