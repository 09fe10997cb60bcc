//! Experiment configuration and the drivers behind the `abram` binary.
//!
//! Every command reads an [`ExperimentConfig`] (flat `key = value` pairs),
//! rejects keys it does not know, writes its CSV outputs and returns a
//! one-line summary. Values resolve in the order command-line flag, then
//! config file, then built-in default. For `attack` and `eval` the keys
//! listed in [`INHERITED_FROM_CHECKPOINT`] fall back to the configuration
//! stored in the checkpoint before the built-in default.
//!
//! Keys shared by all commands: `seed` (default 0), `out` (output path) and
//! `svg` (`true` to also write a line plot next to the main CSV).
//!
//! | command    | main output                               | companion output            |
//! |------------|-------------------------------------------|-----------------------------|
//! | `density`  | `gamma,eps,xi,density`                    |                             |
//! | `paths`    | `step,theta,particle_1..particle_N`       | `<stem>_density.csv`        |
//! | `chaos`    | `n,theta_gap_sq,w2_sq,total`              |                             |
//! | `longtime` | `step,time,sq_error`                      |                             |
//! | `train`    | binary checkpoint                         | `<stem>_epochs.csv`         |
//! | `attack`   | `attack,accuracy,n,seed`                  |                             |
//! | `eval`     | `attack,accuracy,n,seed`                  |                             |

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use crate::attacks::{evaluate, AttackConfig, AttackKind};
use crate::dynamics::{chaos_experiment, longtime_experiment, run_abram, AbramConfig, ChaosConfig, LongtimeConfig, SingleDatum};
use crate::error::{Error, Result};
use crate::geometry::{Ball, NormKind};
use crate::models::{load_checkpoint, load_csv, load_idx, make_blobs, mlp, save_checkpoint, Architecture, Checkpoint, Classifier, Dataset, ModelParams};
use crate::oracle::{AdversarialDensity, DEFAULT_NODES};
use crate::plot::{LinePlot, Series};
use crate::potentials::{coupled_quadratic_1d, linear_quadratic, shifted_quadratic_1d, Potential, ZeroPotential};
use crate::sampler::NoiseMode;
use crate::stats;
use crate::training::{train, TrainAlgorithm, TrainConfig};

/// Grid spacing of `density` output in units of the boundary-layer width
/// `1/(γ·max|∂ξΦ|)`. The trapezoid rule on an exponential layer has
/// relative error about `(spacing/width)²/12`, here below `10⁻⁶`.
const DENSITY_LAYER_RESOLUTION: f64 = 0.002;

/// Keys that `attack` and `eval` read from the checkpoint's stored
/// configuration when neither the command line nor the config file sets
/// them.
pub const INHERITED_FROM_CHECKPOINT: &[&str] = &["eps", "norm", "classes", "blobs_dim", "blobs_spread"];

const COMMON_KEYS: &[&str] = &["seed", "out", "svg"];
const DATA_KEYS: &[&str] = &[
    "data",
    "label_column",
    "classes",
    "max_samples",
    "blobs_per_class",
    "blobs_dim",
    "blobs_spread",
    "data_seed",
];

/// The subcommands of the binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Density,
    Paths,
    Chaos,
    Longtime,
    Train,
    Attack,
    Eval,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Density,
        Command::Paths,
        Command::Chaos,
        Command::Longtime,
        Command::Train,
        Command::Attack,
        Command::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Density => "density",
            Command::Paths => "paths",
            Command::Chaos => "chaos",
            Command::Longtime => "longtime",
            Command::Train => "train",
            Command::Attack => "attack",
            Command::Eval => "eval",
        }
    }

    /// Keys accepted besides the common ones.
    pub fn keys(self) -> Vec<&'static str> {
        let own: &[&str] = match self {
            Command::Density => &["potential", "c", "theta", "gammas", "eps", "grid"],
            Command::Paths => &[
                "potential", "c", "gamma", "particles", "eps", "theta0", "mode", "step", "inner", "outer", "snapshots", "bins",
            ],
            Command::Chaos => &[
                "potential", "c", "gamma", "eps", "theta0", "mode", "step", "inner", "outer", "n_list", "n_ref", "repeats",
            ],
            Command::Longtime => &[
                "potential", "c", "gamma", "eps", "theta0", "mode", "step", "inner", "outer", "particles", "repeats", "every",
                "theta_lo", "theta_hi",
            ],
            Command::Train => &[
                "algorithm", "hidden", "epochs", "batch", "lr", "gamma", "eps", "norm", "xi_step", "inner", "mode",
            ],
            Command::Attack | Command::Eval => &[
                "checkpoint", "attack", "attacks", "eps", "norm", "gamma", "step", "steps", "mode", "pgd_steps", "pgd_step_size",
            ],
        };
        let mut keys: Vec<&'static str> = COMMON_KEYS.iter().chain(own).copied().collect();
        if matches!(self, Command::Train | Command::Attack | Command::Eval) {
            keys.extend(DATA_KEYS);
        }
        keys
    }

    /// Runs the command and returns its summary line.
    pub fn run(self, cfg: &ExperimentConfig) -> Result<String> {
        match self {
            Command::Density => cmd_density(cfg),
            Command::Paths => cmd_paths(cfg),
            Command::Chaos => cmd_chaos(cfg),
            Command::Longtime => cmd_longtime(cfg),
            Command::Train => cmd_train(cfg),
            Command::Attack => cmd_attack(cfg),
            Command::Eval => cmd_eval(cfg),
        }
    }
}

/// Flat `key = value` settings of one command invocation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExperimentConfig {
    entries: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses either a JSON object or `key = value` lines (`#` starts a
    /// comment). JSON arrays become comma-separated lists.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = ExperimentConfig::new();
        if text.trim_start().starts_with('{') {
            let value: serde_json::Value =
                serde_json::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", origin.display())))?;
            let obj = value
                .as_object()
                .ok_or_else(|| Error::Config(format!("{}: expected a JSON object", origin.display())))?;
            for (k, v) in obj {
                let s = json_scalar(v).or_else(|| {
                    v.as_array()
                        .and_then(|items| items.iter().map(json_scalar).collect::<Option<Vec<_>>>())
                        .map(|items| items.join(","))
                });
                let s = s.ok_or_else(|| Error::Config(format!("{}: value of '{k}' must be a scalar or a list of scalars", origin.display())))?;
                cfg.set(k, s);
            }
            return Ok(cfg);
        }
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{}:{}: expected key = value, got '{line}'", origin.display(), lineno + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("{}:{}: empty key", origin.display(), lineno + 1)));
            }
            cfg.set(k, v.trim());
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    /// Applies a `key=value` override from the command line.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{assignment}' is not of the form key=value")))?;
        if k.trim().is_empty() {
            return Err(Error::Config(format!("override '{assignment}' has an empty key")));
        }
        self.set(k.trim(), v.trim());
        Ok(())
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Later entries win.
    pub fn merge(&mut self, other: &ExperimentConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    /// `key = value` lines in key order; parses back to the same config.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Rejects keys `command` does not use.
    pub fn check_keys(&self, command: Command) -> Result<()> {
        let allowed = command.keys();
        let unknown: Vec<&str> = self.entries.keys().map(String::as_str).filter(|k| !allowed.contains(k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "unknown key(s) for '{}': {}; accepted: {}",
                command.name(),
                unknown.join(", "),
                allowed.join(", ")
            )))
        }
    }

    fn reader(&self) -> Reader<'_> {
        Reader {
            cfg: self,
            fallback: None,
        }
    }
}

fn json_scalar(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Typed access with defaults and validation.
struct Reader<'a> {
    cfg: &'a ExperimentConfig,
    /// Consulted for [`INHERITED_FROM_CHECKPOINT`] keys only.
    fallback: Option<&'a ExperimentConfig>,
}

impl Reader<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.cfg.get(key).or_else(|| {
            self.fallback
                .filter(|_| INHERITED_FROM_CHECKPOINT.contains(&key))
                .and_then(|f| f.get(key))
        })
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse '{s}' for key '{key}'"))),
        }
    }

    fn f64(&self, key: &str, default: f64) -> Result<f64> {
        let v: f64 = self.parsed(key, default)?;
        if !v.is_finite() {
            return Err(Error::Config(format!("{key} must be finite, got {v}")));
        }
        Ok(v)
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.f64(key, default)?;
        if v <= 0.0 {
            return Err(Error::Config(format!("{key} must be positive, got {v}")));
        }
        Ok(v)
    }

    fn non_negative(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.f64(key, default)?;
        if v < 0.0 {
            return Err(Error::Config(format!("{key} must be non-negative, got {v}")));
        }
        Ok(v)
    }

    fn count(&self, key: &str, default: usize) -> Result<usize> {
        let v: usize = self.parsed(key, default)?;
        if v == 0 {
            return Err(Error::Config(format!("{key} must be at least 1")));
        }
        Ok(v)
    }

    fn u64(&self, key: &str, default: u64) -> Result<u64> {
        self.parsed(key, default)
    }

    fn bool(&self, key: &str) -> Result<bool> {
        self.parsed(key, false)
    }

    fn string(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    fn list<T: std::str::FromStr + Clone>(&self, key: &str, default: &[T]) -> Result<Vec<T>> {
        let Some(s) = self.raw(key) else {
            return Ok(default.to_vec());
        };
        let items = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| t.parse().map_err(|_| Error::Config(format!("cannot parse '{t}' in list '{key}'"))))
            .collect::<Result<Vec<T>>>()?;
        if items.is_empty() {
            return Err(Error::Config(format!("list '{key}' is empty")));
        }
        Ok(items)
    }

    fn out(&self, default: &str) -> PathBuf {
        PathBuf::from(self.string("out", default))
    }

    fn mode(&self, default: NoiseMode) -> Result<NoiseMode> {
        self.raw("mode").map_or(Ok(default), NoiseMode::parse)
    }

    fn ball(&self, default_eps: f64, dim: usize) -> Result<Ball> {
        let eps = self.positive("eps", default_eps)?;
        let norm = self.raw("norm").map_or(Ok(NormKind::LInf), NormKind::parse)?;
        Ball::new(eps, norm, dim)
    }
}

/// Path next to `out` with `suffix` appended to the file stem.
pub fn companion_path(out: &Path, suffix: &str, extension: &str) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "out".to_string(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}{suffix}.{extension}"))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_row<S: AsRef<[u8]>>(w: &mut csv::Writer<File>, path: &Path, row: impl IntoIterator<Item = S>) -> Result<()> {
    w.write_record(row).map_err(|e| Error::io(path, std::io::Error::other(e)))
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Shortest round-trip decimal form, independent of locale.
fn num(v: f64) -> String {
    format!("{v:?}")
}

/// One-dimensional potentials selectable by name: `shifted-quadratic`
/// (centre `c`), `coupled-quadratic`, `linear-quadratic` and `zero`.
pub fn potential_1d(name: &str, c: f64) -> Result<Box<dyn Potential>> {
    Ok(match name {
        "shifted-quadratic" => Box::new(shifted_quadratic_1d(c)),
        "coupled-quadratic" => Box::new(coupled_quadratic_1d()),
        "linear-quadratic" => Box::new(linear_quadratic(1)),
        "zero" => Box::new(ZeroPotential { xi_dim: 1, theta_dim: 1 }),
        other => {
            return Err(Error::Config(format!(
                "unknown potential '{other}' (expected shifted-quadratic, coupled-quadratic, linear-quadratic or zero)"
            )))
        }
    })
}

/// Oracle density profiles `π^{γ,ε}(ξ|θ)` for every `(γ, ε)` pair.
///
/// Keys: `potential` (shifted-quadratic), `c` (0.1), `theta` (0), `gammas`
/// (0.1,10,1000), `eps` (0.025,0.1,0.4), `grid` (1001, the minimum nodes per
/// pair; sharp profiles get more so the boundary layer is resolved),
/// `out` (density.csv).
pub fn cmd_density(cfg: &ExperimentConfig) -> Result<String> {
    cfg.check_keys(Command::Density)?;
    let r = cfg.reader();
    let p = potential_1d(&r.string("potential", "shifted-quadratic"), r.f64("c", 0.1)?)?;
    let theta = [r.f64("theta", 0.0)?];
    let gammas: Vec<f64> = r.list("gammas", &[0.1, 10.0, 1000.0])?;
    let epss: Vec<f64> = r.list("eps", &[0.025, 0.1, 0.4])?;
    if let Some(g) = gammas.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
        return Err(Error::Config(format!("gammas must be finite and non-negative, got {g}")));
    }
    if let Some(e) = epss.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
        return Err(Error::Config(format!("eps values must be positive, got {e}")));
    }
    let grid = r.count("grid", 1001)?.max(3);
    let out = r.out("density.csv");

    let mut w = csv_writer(&out)?;
    write_row(&mut w, &out, ["gamma", "eps", "xi", "density"])?;
    let mut plot = LinePlot::new("adversarial density", "xi / eps", "density x 2 eps").log_y();
    let mut rows = 0;
    for &gamma in &gammas {
        for &eps in &epss {
            let ball = Ball::l2(eps, 1)?;
            let oracle = AdversarialDensity::new(&p, gamma, &ball, &theta, DEFAULT_NODES)
                .map_err(|e| Error::InvalidInput(format!("oracle failed at gamma={gamma}, eps={eps}: {e}")))?;
            let n = density_nodes(&p, gamma, eps, &theta, grid);
            let mut series = Vec::with_capacity(n);
            for i in 0..n {
                let xi = if i == n - 1 { eps } else { -eps + 2.0 * eps * i as f64 / (n - 1) as f64 };
                let d = oracle.density(&p, xi);
                write_row(&mut w, &out, [num(gamma), num(eps), num(xi), num(d)])?;
                series.push((xi / eps, d * 2.0 * eps));
            }
            rows += n;
            plot = plot.with(Series::new(format!("gamma={gamma}, eps={eps}"), series));
        }
    }
    finish(w, &out)?;
    if r.bool("svg")? {
        plot.save(out.with_extension("svg"))?;
    }
    Ok(format!(
        "density: {rows} rows for {} (gamma, eps) pairs written to {}",
        gammas.len() * epss.len(),
        out.display()
    ))
}

fn density_nodes(p: &dyn Potential, gamma: f64, eps: f64, theta: &[f64], grid: usize) -> usize {
    let probe = DEFAULT_NODES;
    let max_slope = (0..probe)
        .map(|i| p.grad_xi(&[-eps + 2.0 * eps * i as f64 / (probe - 1) as f64], theta)[0].abs())
        .fold(0.0, f64::max);
    let needed = (2.0 * eps * gamma * max_slope / DENSITY_LAYER_RESOLUTION).ceil() as usize + 1;
    grid.max(needed)
}

fn abram_base(r: &Reader<'_>, p: &dyn Potential, defaults: (f64, f64, NoiseMode, f64, usize, usize, usize)) -> Result<AbramConfig> {
    let (gamma, eps, mode, theta0, particles, inner, outer) = defaults;
    let ball = Ball::l2(r.positive("eps", eps)?, p.xi_dim())?;
    AbramConfig::new(
        r.non_negative("gamma", gamma)?,
        ball,
        r.positive("step", 0.01)?,
        r.count("particles", particles)?,
        r.count("inner", inner)?,
        r.count("outer", outer)?,
        r.mode(mode)?,
        r.u64("seed", 0)?,
        vec![r.f64("theta0", theta0)?],
    )
    .map_err(|e| match e {
        Error::InvalidInput(m) | Error::Precondition(m) => Error::Config(m),
        other => other,
    })
}

/// Parameter and particle paths of one run of the dynamics.
///
/// Keys: `potential` (coupled-quadratic), `gamma` (10), `particles` (50),
/// `eps` (1), `theta0` (0), `mode` (algorithm-one), `step` (0.01), `inner`
/// (10), `outer` (1000), `snapshots` (10), `bins` (40), `out` (paths.csv).
/// The companion `<stem>_density.csv` holds `step,xi,particle_density,
/// target_density` at `snapshots` evenly spaced steps, comparing the
/// particle histogram with the oracle density at the current parameter.
pub fn cmd_paths(cfg: &ExperimentConfig) -> Result<String> {
    cfg.check_keys(Command::Paths)?;
    let r = cfg.reader();
    let p = potential_1d(&r.string("potential", "coupled-quadratic"), r.f64("c", 0.1)?)?;
    let mut acfg = abram_base(&r, &p, (10.0, 1.0, NoiseMode::AlgorithmOne, 0.0, 50, 10, 1000))?;
    acfg.record_particles = true;
    let snapshots = r.count("snapshots", 10)?.max(2);
    let bins = r.count("bins", 40)?;
    let out = r.out("paths.csv");

    let run = run_abram(&acfg, &SingleDatum(&p))?;
    let j_max = acfg.outer_steps;
    let mut w = csv_writer(&out)?;
    let mut header = vec!["step".to_string(), "theta".to_string()];
    header.extend((1..=acfg.particles).map(|i| format!("particle_{i}")));
    write_row(&mut w, &out, &header)?;
    for (j, (theta, particles)) in run.theta_path.iter().zip(&run.particle_paths).enumerate() {
        let mut row = vec![j.to_string(), num(theta[0])];
        row.extend(particles.iter().map(|x| num(x[0])));
        write_row(&mut w, &out, &row)?;
    }
    finish(w, &out)?;

    let dens_path = companion_path(&out, "_density", "csv");
    let mut w = csv_writer(&dens_path)?;
    write_row(&mut w, &dens_path, ["step", "xi", "particle_density", "target_density"])?;
    let eps = acfg.ball.radius();
    let width = 2.0 * eps / bins as f64;
    let target_gamma = acfg.noise_mode.target_gamma(acfg.gamma);
    for k in 0..snapshots {
        let j = (k * j_max + (snapshots - 1) / 2) / (snapshots - 1);
        let oracle = AdversarialDensity::new(&p, target_gamma, &acfg.ball, &run.theta_path[j], DEFAULT_NODES)?;
        let mut counts = vec![0usize; bins];
        for x in &run.particle_paths[j] {
            let b = (((x[0] + eps) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[b] += 1;
        }
        for (b, count) in counts.iter().enumerate() {
            let lo = -eps + b as f64 * width;
            let centre = lo + width / 2.0;
            let particle = *count as f64 / (acfg.particles as f64 * width);
            let target = oracle.mass_between(lo, lo + width) / width;
            write_row(&mut w, &dens_path, [j.to_string(), num(centre), num(particle), num(target)])?;
        }
    }
    finish(w, &dens_path)?;

    let thetas: Vec<f64> = run.theta_path.iter().map(|t| t[0]).collect();
    let tail_var = stats::variance(&thetas[3 * j_max / 4..]);
    if r.bool("svg")? {
        let means: Vec<(f64, f64)> = run.particle_stats.iter().enumerate().map(|(j, s)| (j as f64, s.0)).collect();
        LinePlot::new("parameter and particle-mean paths", "outer step", "value")
            .with(Series::new("theta", thetas.iter().enumerate().map(|(j, t)| (j as f64, *t)).collect()))
            .with(Series::new("particle mean", means))
            .save(out.with_extension("svg"))?;
    }
    Ok(format!(
        "paths: final theta {:.6}, last-quarter theta variance {tail_var:.4e}; wrote {} and {}",
        run.theta[0],
        out.display(),
        dens_path.display()
    ))
}

/// Propagation-of-chaos rate: `E|θ^N − θ^ref|² + E W₂²` against `N`.
///
/// Keys: `potential` (coupled-quadratic), `gamma` (10), `eps` (1), `theta0`
/// (0), `mode` (algorithm-one), `step` (0.01), `inner` (10), `outer` (100),
/// `n_list` (4,8,16,32,64,128,256), `n_ref` (4096), `repeats` (200), `out`
/// (chaos.csv).
pub fn cmd_chaos(cfg: &ExperimentConfig) -> Result<String> {
    cfg.check_keys(Command::Chaos)?;
    let r = cfg.reader();
    let p = potential_1d(&r.string("potential", "coupled-quadratic"), r.f64("c", 0.1)?)?;
    let base = abram_base(&r, &p, (10.0, 1.0, NoiseMode::AlgorithmOne, 0.0, 1, 10, 100))?;
    let n_list: Vec<usize> = r.list("n_list", &[4, 8, 16, 32, 64, 128, 256])?;
    if n_list.contains(&0) {
        return Err(Error::Config("n_list entries must be at least 1".into()));
    }
    let ccfg = ChaosConfig {
        base,
        n_list,
        n_ref: r.count("n_ref", 4096)?,
        repeats: r.count("repeats", 200)?,
    };
    let out = r.out("chaos.csv");
    let report = chaos_experiment(&ccfg, &SingleDatum(&p))?;
    let mut w = csv_writer(&out)?;
    write_row(&mut w, &out, ["n", "theta_gap_sq", "w2_sq", "total"])?;
    for row in &report.rows {
        write_row(
            &mut w,
            &out,
            [row.n.to_string(), num(row.mean_theta_gap_sq), num(row.mean_w2_sq), num(row.mean_total)],
        )?;
    }
    finish(w, &out)?;
    if r.bool("svg")? {
        LinePlot::new("propagation of chaos", "N", "mean squared error")
            .log_x()
            .log_y()
            .with(Series::new("total", report.rows.iter().map(|row| (row.n as f64, row.mean_total)).collect()))
            .save(out.with_extension("svg"))?;
    }
    Ok(format!(
        "chaos: slope {:.4} 95% CI [{:.4}, {:.4}] r2 {:.4} over {} repeats; wrote {}",
        report.slope,
        report.slope_ci.0,
        report.slope_ci.1,
        report.r_squared,
        ccfg.repeats,
        out.display()
    ))
}

/// Long-time decay of `|θ_t − θ*|²`.
///
/// Keys: `potential` (coupled-quadratic), `gamma` (1), `eps` (1), `theta0`
/// (1), `mode` (continuous-consistent), `step` (0.01), `inner` (10), `outer`
/// (1000), `particles` (2000), `repeats` (4), `every` (10, checkpoint
/// spacing in outer steps), `theta_lo`/`theta_hi` (−1/1, minimiser search
/// interval), `out` (longtime.csv).
pub fn cmd_longtime(cfg: &ExperimentConfig) -> Result<String> {
    cfg.check_keys(Command::Longtime)?;
    let r = cfg.reader();
    let p = potential_1d(&r.string("potential", "coupled-quadratic"), r.f64("c", 0.1)?)?;
    let base = abram_base(&r, &p, (1.0, 1.0, NoiseMode::ContinuousConsistent, 1.0, 2000, 10, 1000))?;
    let every = r.count("every", 10)?;
    let theta_range = (r.f64("theta_lo", -1.0)?, r.f64("theta_hi", 1.0)?);
    if theta_range.0 >= theta_range.1 {
        return Err(Error::Config("theta_lo must be below theta_hi".into()));
    }
    let step = base.step;
    let lcfg = LongtimeConfig {
        checkpoints: (0..=base.outer_steps).step_by(every).collect(),
        base,
        repeats: r.count("repeats", 4)?,
        theta_range,
    };
    let out = r.out("longtime.csv");
    let report = longtime_experiment(&lcfg, &p, None)?;
    let mut w = csv_writer(&out)?;
    write_row(&mut w, &out, ["step", "time", "sq_error"])?;
    for (j, c) in report.checkpoints.iter().zip(&report.curve) {
        write_row(&mut w, &out, [j.to_string(), num(*j as f64 * step), num(*c)])?;
    }
    finish(w, &out)?;
    if r.bool("svg")? {
        LinePlot::new("long-time decay", "time", "squared error")
            .log_y()
            .with(Series::new(
                "|theta - theta*|^2",
                report.checkpoints.iter().zip(&report.curve).map(|(j, c)| (*j as f64 * step, *c)).collect(),
            ))
            .save(out.with_extension("svg"))?;
    }
    let fitted_to = report.checkpoints.get(report.segment.1.saturating_sub(1)).copied().unwrap_or(0);
    Ok(format!(
        "longtime: eta {:.4} 95% CI [{:.4}, {:.4}] r2 {:.4} on steps 0..={fitted_to}; theta* {:.3e}, plateau {:.3e}; wrote {}",
        report.eta_hat,
        report.eta_ci.0,
        report.eta_ci.1,
        report.r_squared,
        report.theta_star,
        report.plateau,
        out.display()
    ))
}

/// Default data selection of a command.
struct DataDefaults {
    blobs_per_class: usize,
    data_seed: u64,
    max_samples: usize,
}

/// Loads `data`: `blobs` (synthetic Gaussian blobs), `idx:<images>,<labels>`
/// or a CSV path. Rows whose label is at least `classes` are dropped and at
/// most `max_samples` rows are kept.
fn load_data(r: &Reader<'_>, d: &DataDefaults) -> Result<Dataset> {
    let spec = r.string("data", "blobs");
    let data = if spec == "blobs" {
        make_blobs(
            r.count("blobs_per_class", d.blobs_per_class)?,
            r.count("classes", 3)?,
            r.count("blobs_dim", 784)?,
            r.positive("blobs_spread", 0.1)?,
            r.u64("data_seed", d.data_seed)?,
        )?
    } else if let Some(paths) = spec.strip_prefix("idx:") {
        let (images, labels) = paths
            .split_once(',')
            .ok_or_else(|| Error::Config(format!("idx data must be 'idx:<images>,<labels>', got '{spec}'")))?;
        load_idx(images.trim(), labels.trim())?
    } else {
        load_csv(&spec, r.parsed("label_column", 0usize)?)?
    };
    let classes = r.count("classes", data.num_classes)?;
    let max = r.count("max_samples", d.max_samples)?;
    let data = data.restrict(classes, max)?;
    if data.is_empty() {
        return Err(Error::InvalidInput(format!("no rows of '{spec}' have a label below {classes}")));
    }
    Ok(data)
}

/// Trains an MLP classifier and saves a checkpoint.
///
/// Keys: `algorithm` (minibatch; also abram, fgsm-baseline, sgd), `hidden`
/// (64, comma-separated hidden widths, empty for a linear model), `epochs`
/// (10), `batch` (128), `lr` (0.1), `gamma` (1), `eps` (0.05), `norm`
/// (linf), `xi_step` (10·eps), `inner` (10), `mode` (algorithm-one), data
/// keys with defaults `data` (blobs), `classes` (3), `max_samples` (2000),
/// `blobs_per_class` (700), `blobs_dim` (784), `blobs_spread` (0.1),
/// `data_seed` (100), `label_column` (0), and `out` (model.ckpt). Benign
/// training accuracy per epoch goes to `<stem>_epochs.csv`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<String> {
    cfg.check_keys(Command::Train)?;
    let r = cfg.reader();
    let data = load_data(
        &r,
        &DataDefaults {
            blobs_per_class: 700,
            data_seed: 100,
            max_samples: 2000,
        },
    )?;
    let mut sizes = vec![data.dim()];
    sizes.extend(r.list::<usize>("hidden", &[64]).or_else(|e| match r.raw("hidden") {
        Some(s) if s.trim().is_empty() => Ok(vec![]),
        _ => Err(e),
    })?);
    sizes.push(data.num_classes.max(2));
    let arch = Architecture::new(sizes).map_err(|e| Error::Config(e.to_string()))?;
    let model = mlp(arch.clone());
    let ball = r.ball(0.05, data.dim())?;
    let tcfg = TrainConfig {
        algorithm: TrainAlgorithm::parse(&r.string("algorithm", "minibatch"))?,
        epochs: r.count("epochs", 10)?,
        batch: r.count("batch", 128)?,
        lr: r.positive("lr", 0.1)?,
        gamma: r.positive("gamma", 1.0)?,
        ball,
        xi_step: r.positive("xi_step", 10.0 * ball.radius())?,
        inner_steps: r.count("inner", 10)?,
        noise_mode: r.mode(NoiseMode::AlgorithmOne)?,
        seed: r.u64("seed", 0)?,
    };
    let out = r.out("model.ckpt");
    let report = train(&model, &data, &tcfg)?;

    let mut stored = cfg.clone();
    stored.remove("out");
    stored.remove("svg");
    stored.set("eps", num(ball.radius()));
    stored.set("norm", ball.norm_kind().name());
    stored.set("classes", data.num_classes.to_string());
    if r.string("data", "blobs") == "blobs" {
        stored.set("blobs_dim", data.dim().to_string());
        stored.set("blobs_spread", num(r.positive("blobs_spread", 0.1)?));
    }
    let ckpt = Checkpoint {
        params: ModelParams::new(arch, report.theta)?,
        config: stored.to_text(),
        seed: tcfg.seed,
    };
    save_checkpoint(&ckpt, &out)?;

    let log = companion_path(&out, "_epochs", "csv");
    let mut w = csv_writer(&log)?;
    write_row(&mut w, &log, ["epoch", "accuracy"])?;
    for (e, a) in report.epoch_accuracy.iter().enumerate() {
        write_row(&mut w, &log, [(e + 1).to_string(), num(*a)])?;
    }
    finish(w, &log)?;
    if r.bool("svg")? {
        LinePlot::new("training accuracy", "epoch", "accuracy")
            .with(Series::new(
                tcfg.algorithm.name(),
                report.epoch_accuracy.iter().enumerate().map(|(e, a)| ((e + 1) as f64, *a)).collect(),
            ))
            .save(log.with_extension("svg"))?;
    }
    Ok(format!(
        "train: {} on {} rows, final training accuracy {:.4} after {} epochs; wrote {} and {}",
        tcfg.algorithm.name(),
        data.len(),
        report.epoch_accuracy.last().copied().unwrap_or(f64::NAN),
        tcfg.epochs,
        out.display(),
        log.display()
    ))
}

/// A single attack against a checkpoint. Same keys as [`cmd_eval`] with
/// `attack` (pgd) naming one attack.
pub fn cmd_attack(cfg: &ExperimentConfig) -> Result<String> {
    cfg.check_keys(Command::Attack)?;
    if cfg.get("attacks").is_some() {
        return Err(Error::Config("'attack' takes a single 'attack' key; use 'eval' for a list".into()));
    }
    run_attacks(cfg, &[cfg.get("attack").unwrap_or("pgd").to_string()], "attack.csv")
}

/// Accuracy table of a checkpoint under several attacks.
///
/// Keys: `checkpoint` (required), `attacks` (none,fgsm,pgd,bayes-sample,
/// bayes-mean), `eps` and `norm` (from the checkpoint, else 0.05 and linf),
/// `gamma` (1000), `step` (eps), `steps` (10), `mode` (algorithm-one),
/// `pgd_steps` (10), `pgd_step_size` (2.5·eps/pgd_steps), data keys with
/// defaults `data` (blobs), `blobs_per_class` (200), `data_seed` (200), no
/// row limit, and blob shape from the checkpoint, and `out` (eval.csv).
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<String> {
    cfg.check_keys(Command::Eval)?;
    let list = match (cfg.get("attacks"), cfg.get("attack")) {
        (Some(_), Some(_)) => return Err(Error::Config("set either 'attacks' or 'attack', not both".into())),
        (Some(l), None) | (None, Some(l)) => l.to_string(),
        (None, None) => "none,fgsm,pgd,bayes-sample,bayes-mean".to_string(),
    };
    let names: Vec<String> = list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if names.is_empty() {
        return Err(Error::Config("no attacks listed".into()));
    }
    run_attacks(cfg, &names, "eval.csv")
}

fn run_attacks(cfg: &ExperimentConfig, names: &[String], default_out: &str) -> Result<String> {
    let ckpt_path = cfg
        .get("checkpoint")
        .ok_or_else(|| Error::Config("'checkpoint' is required".into()))?;
    let ckpt = load_checkpoint(ckpt_path)?;
    let stored = ExperimentConfig::parse(&ckpt.config, Path::new(ckpt_path))?;
    let r = Reader {
        cfg,
        fallback: Some(&stored),
    };
    let model = mlp(ckpt.params.arch.clone());
    let mut data_cfg = cfg.clone();
    if data_cfg.get("blobs_dim").is_none() && stored.get("blobs_dim").is_none() {
        data_cfg.set("blobs_dim", model.input_dim().to_string());
    }
    let data_reader = Reader {
        cfg: &data_cfg,
        fallback: Some(&stored),
    };
    let data = load_data(
        &data_reader,
        &DataDefaults {
            blobs_per_class: 200,
            data_seed: 200,
            max_samples: usize::MAX,
        },
    )?;
    let ball = r.ball(0.05, data.dim())?;
    let seed = r.u64("seed", 0)?;
    let kinds = names
        .iter()
        .map(|n| if n == "none" { Ok(None) } else { AttackKind::parse(n).map(Some) })
        .collect::<Result<Vec<_>>>()?;
    let mut template = AttackConfig::new(AttackKind::Pgd, ball, seed);
    template.gamma = r.non_negative("gamma", 1000.0)?;
    template.step = r.positive("step", ball.radius())?;
    template.steps = r.count("steps", 10)?;
    template.noise_mode = r.mode(NoiseMode::AlgorithmOne)?;
    template.pgd_steps = r.count("pgd_steps", 10)?;
    template.pgd_step_size = r.raw("pgd_step_size").map(|_| r.positive("pgd_step_size", 1.0)).transpose()?;
    template.validate()?;

    let out = r.out(default_out);
    let mut w = csv_writer(&out)?;
    write_row(&mut w, &out, ["attack", "accuracy", "n", "seed"])?;
    let mut summary = Vec::new();
    for kind in kinds {
        let acc = match kind {
            None => evaluate(&model, &ckpt.params.theta, &data, None)?,
            Some(k) => {
                let a = AttackConfig { kind: k, ..template.clone() };
                evaluate(&model, &ckpt.params.theta, &data, Some(&a))?
            }
        };
        let name = kind.map_or("none", AttackKind::name);
        write_row(&mut w, &out, [name.to_string(), num(acc), data.len().to_string(), seed.to_string()])?;
        summary.push(format!("{name} {acc:.4}"));
    }
    finish(w, &out)?;
    Ok(format!("accuracy on {} rows: {}; wrote {}", data.len(), summary.join(", "), out.display()))
}
