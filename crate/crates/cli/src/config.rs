//! Flat dotted-key run configuration.
//!
//! The file is TOML restricted to scalar and array values addressed by dotted
//! keys (`acc.kappa = 5`, or `kappa = 5` under an `[acc]` header). Every key
//! is optional; unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;
use toml::Value;
use zcbf::acc::{AccParams, AccState, BarrierOrientation, LeadProfile};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown key `{key}`{}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    UnknownKey { key: String, line: Option<usize> },
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

impl ConfigError {
    fn invalid(key: &str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            reason: reason.into(),
        }
    }

    /// The offending key for constraint violations.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey { key, .. } | ConfigError::Invalid { key, .. } => Some(key),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    AccNominal,
    AccPerturbed,
    AccSweep,
    /// Parameters as given; the grade disturbance is applied whenever
    /// `acc.theta_amp` is positive.
    Custom,
}

impl Scenario {
    pub fn perturbed(self, params: &AccParams) -> bool {
        match self {
            Scenario::AccNominal => false,
            Scenario::AccPerturbed | Scenario::AccSweep => true,
            Scenario::Custom => params.theta_amp > 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    None,
    /// Replaces `ω(r) = min(r, 0)` with its negation inside the P2 closed form.
    FlipOmega,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Integrator {
    pub dt: f64,
    pub t_final: f64,
    /// Slack allowed below `−γ_max` before a run counts as unsafe.
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub kappa: Vec<f64>,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub plot_script: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifySpec {
    pub corpus_size: usize,
    pub lipschitz_pairs: usize,
    pub vc_samples: usize,
    pub mutation: Mutation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub acc: AccParams,
    pub integrator: Integrator,
    pub sweep: SweepGrid,
    pub output: OutputSpec,
    pub verify: VerifySpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::AccNominal,
            seed: 0,
            acc: AccParams::default(),
            integrator: Integrator {
                dt: 1e-3,
                t_final: 60.0,
                tol: 1e-6,
            },
            sweep: SweepGrid {
                kappa: (1..=10).map(f64::from).collect(),
                theta: vec![0.1, 0.2, 0.3, 0.4],
            },
            output: OutputSpec {
                dir: PathBuf::from("out"),
                plot_script: false,
            },
            verify: VerifySpec {
                corpus_size: 1000,
                lipschitz_pairs: 2000,
                vc_samples: 1000,
                mutation: Mutation::None,
            },
        }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    let mut flat = BTreeMap::new();
    flatten("", &table, &mut flat);

    let mut cfg = RunConfig::default();
    for (key, value) in &flat {
        apply(&mut cfg, key, value).map_err(|e| match e {
            ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey {
                line: find_key_line(text, &key),
                key,
            },
            other => other,
        })?;
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Best-effort line of a dotted key, either written in full or as its last
/// segment below the matching `[section]` header.
fn find_key_line(text: &str, key: &str) -> Option<usize> {
    let (section, leaf) = key.rsplit_once('.').unwrap_or(("", key));
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = header.trim().to_string();
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else { continue };
        let lhs = lhs.trim().replace(' ', "");
        let full = if current.is_empty() {
            lhs.clone()
        } else {
            format!("{current}.{lhs}")
        };
        if full == key || (current == section && lhs == leaf) {
            return Some(i + 1);
        }
    }
    None
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn number(key: &str, v: &Value) -> Result<f64, ConfigError> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(ConfigError::invalid(key, format!("expected a number, got {}", v.type_str()))),
    }
}

fn count(key: &str, v: &Value) -> Result<usize, ConfigError> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(ConfigError::invalid(key, "expected a nonnegative integer")),
    }
}

fn numbers(key: &str, v: &Value) -> Result<Vec<f64>, ConfigError> {
    match v {
        Value::Array(items) => items.iter().map(|x| number(key, x)).collect(),
        _ => Err(ConfigError::invalid(key, "expected an array of numbers")),
    }
}

fn string<'a>(key: &str, v: &'a Value) -> Result<&'a str, ConfigError> {
    v.as_str()
        .ok_or_else(|| ConfigError::invalid(key, format!("expected a string, got {}", v.type_str())))
}

fn apply(cfg: &mut RunConfig, key: &str, v: &Value) -> Result<(), ConfigError> {
    let acc = &mut cfg.acc;
    match key {
        "scenario" => {
            cfg.scenario = match string(key, v)? {
                "acc_nominal" => Scenario::AccNominal,
                "acc_perturbed" => Scenario::AccPerturbed,
                "acc_sweep" => Scenario::AccSweep,
                "custom" => Scenario::Custom,
                other => {
                    return Err(ConfigError::invalid(
                        key,
                        format!("`{other}` is not one of acc_nominal, acc_perturbed, acc_sweep, custom"),
                    ))
                }
            }
        }
        "seed" => match v {
            Value::Integer(i) if *i >= 0 => cfg.seed = *i as u64,
            _ => return Err(ConfigError::invalid(key, "expected a nonnegative integer")),
        },
        "acc.m" => acc.mass = number(key, v)?,
        "acc.f0" => acc.f0 = number(key, v)?,
        "acc.f1" => acc.f1 = number(key, v)?,
        "acc.f2" => acc.f2 = number(key, v)?,
        "acc.grav" => acc.grav = number(key, v)?,
        "acc.v_d" => acc.v_d = number(key, v)?,
        "acc.tau_des" => acc.tau_des = number(key, v)?,
        "acc.kappa" => acc.kappa = number(key, v)?,
        "acc.c" => acc.clf_rate = number(key, v)?,
        "acc.p_sc" => acc.p_sc = number(key, v)?,
        "acc.theta_amp" => acc.theta_amp = number(key, v)?,
        "acc.theta_period" => acc.theta_period = number(key, v)?,
        "acc.x0" => match numbers(key, v)?.as_slice() {
            &[v_l, v_f, d] => acc.initial = AccState::new(v_l, v_f, d),
            other => return Err(ConfigError::invalid(key, format!("expected [v_l, v_f, D], got {} values", other.len()))),
        },
        "acc.lead_profile" => {
            let Value::Array(rows) = v else {
                return Err(ConfigError::invalid(key, "expected an array of [start, accel] pairs"));
            };
            let mut segments = Vec::with_capacity(rows.len());
            for row in rows {
                match numbers(key, row)?.as_slice() {
                    &[t, a] => segments.push((t, a)),
                    _ => return Err(ConfigError::invalid(key, "each segment must be [start, accel]")),
                }
            }
            acc.lead_profile = LeadProfile::new(segments).map_err(|e| ConfigError::invalid(key, e.to_string()))?;
        }
        "acc.barrier_sign" => {
            acc.orientation = match number(key, v)? {
                s if s == 1.0 => BarrierOrientation::Standard,
                s if s == -1.0 => BarrierOrientation::Inverted,
                s => return Err(ConfigError::invalid(key, format!("must be 1 or -1, got {s}"))),
            }
        }
        "sim.dt" => cfg.integrator.dt = number(key, v)?,
        "sim.t_final" => cfg.integrator.t_final = number(key, v)?,
        "sim.tol" => cfg.integrator.tol = number(key, v)?,
        "sweep.kappa" => cfg.sweep.kappa = numbers(key, v)?,
        "sweep.theta" => cfg.sweep.theta = numbers(key, v)?,
        "output.dir" => cfg.output.dir = PathBuf::from(string(key, v)?),
        "output.plot_script" => {
            cfg.output.plot_script = v
                .as_bool()
                .ok_or_else(|| ConfigError::invalid(key, "expected true or false"))?
        }
        "verify.corpus_size" => cfg.verify.corpus_size = count(key, v)?,
        "verify.lipschitz_pairs" => cfg.verify.lipschitz_pairs = count(key, v)?,
        "verify.vc_samples" => cfg.verify.vc_samples = count(key, v)?,
        "verify.mutation" => {
            cfg.verify.mutation = match string(key, v)? {
                "none" => Mutation::None,
                "flip_omega" => Mutation::FlipOmega,
                other => return Err(ConfigError::invalid(key, format!("`{other}` is not one of none, flip_omega"))),
            }
        }
        _ => {
            return Err(ConfigError::UnknownKey {
                key: key.to_string(),
                line: None,
            })
        }
    }
    Ok(())
}

fn validate(cfg: &RunConfig) -> Result<(), ConfigError> {
    let int = &cfg.integrator;
    if !(int.dt > 0.0 && int.dt <= 0.1) {
        return Err(ConfigError::invalid("sim.dt", format!("must lie in (0, 0.1], got {}", int.dt)));
    }
    if !(int.t_final > 0.0 && int.t_final <= 3600.0) {
        return Err(ConfigError::invalid("sim.t_final", format!("must lie in (0, 3600], got {}", int.t_final)));
    }
    if !(int.tol >= 0.0 && int.tol.is_finite()) {
        return Err(ConfigError::invalid("sim.tol", "must be finite and nonnegative"));
    }
    if cfg.scenario == Scenario::AccSweep {
        if cfg.sweep.kappa.is_empty() {
            return Err(ConfigError::invalid("sweep.kappa", "grid must be nonempty"));
        }
        if cfg.sweep.theta.is_empty() {
            return Err(ConfigError::invalid("sweep.theta", "grid must be nonempty"));
        }
    }
    if let Some(k) = cfg.sweep.kappa.iter().find(|k| !(**k > 0.0 && k.is_finite())) {
        return Err(ConfigError::invalid("sweep.kappa", format!("gains must be positive, got {k}")));
    }
    if let Some(b) = cfg.sweep.theta.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
        return Err(ConfigError::invalid("sweep.theta", format!("bounds must be nonnegative, got {b}")));
    }
    if cfg.verify.corpus_size < 100 {
        return Err(ConfigError::invalid(
            "verify.corpus_size",
            format!("must be at least 100, got {}", cfg.verify.corpus_size),
        ));
    }
    if cfg.verify.lipschitz_pairs < 10 {
        return Err(ConfigError::invalid("verify.lipschitz_pairs", "must be at least 10"));
    }
    if cfg.verify.vc_samples == 0 {
        return Err(ConfigError::invalid("verify.vc_samples", "must be positive"));
    }
    cfg.acc.validate().map_err(|e| match e {
        zcbf::Error::InvalidParameter { name, reason } => ConfigError::invalid(&acc_key(name), reason),
        other => ConfigError::invalid("acc", other.to_string()),
    })
}

/// Config key for an [`AccParams`] field name.
fn acc_key(field: &str) -> String {
    let key = match field {
        "mass" => "m",
        "clf_rate" => "c",
        "initial" => "x0",
        "orientation" => "barrier_sign",
        other => other,
    };
    format!("acc.{key}")
}
