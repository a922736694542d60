//! Run configuration files, named presets, `k=v` overrides and the flat
//! metadata document written next to every run.

use std::path::Path;

use serde::Serialize;
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::experiments::{AuditConfig, RlsRateConfig};
use crate::graph::{consensus_spectral_radius, Topology};
use crate::scenario::{BenchmarkParams, EngineeringCost, ScenarioSpec};
use crate::sim::{Engine, RunSummary, SimConfig, Simulation};

pub const PRESET_NAMES: [&str; 5] = [
    "section5",
    "section5-desk",
    "static-sanity",
    "rls-rate",
    "conservation-audit",
];

/// What a preset runs.
#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    Run(SimConfig),
    RlsRate(RlsRateConfig),
    ConservationAudit(AuditConfig),
}

/// Sinusoidal-target benchmark at full scale: 30 agents, 10⁶ rounds.
pub fn benchmark_full() -> SimConfig {
    SimConfig {
        agents: 30,
        dim: 3,
        iterations: 1_000_000,
        alpha: 0.01,
        eta: 1e4,
        mu: 1.5,
        seed: 1,
        log_interval: None,
        learning: true,
        oracle_estimates: false,
        static_time: false,
        engine: Engine::MessagePassing,
        checkpoint_interval: None,
        topology: Topology::ErdosRenyi { p: 0.2, seed: None },
        scenario: ScenarioSpec::Benchmark {
            params: BenchmarkParams::default(),
        },
    }
}

/// The benchmark at desk scale: 10 agents, 10⁵ rounds.
pub fn benchmark_desk() -> SimConfig {
    SimConfig {
        agents: 10,
        iterations: 100_000,
        ..benchmark_full()
    }
}

/// Static costs, true user model, no learning: plain gradient tracking on a
/// fixed strongly convex quadratic with `α = α_max / 4`.
pub fn static_sanity() -> SimConfig {
    SimConfig {
        agents: 5,
        dim: 2,
        iterations: 5000,
        alpha: 0.05,
        log_interval: Some(1),
        learning: false,
        oracle_estimates: true,
        static_time: true,
        topology: Topology::Ring,
        ..benchmark_full()
    }
}

pub fn preset(name: &str) -> Result<Preset> {
    match name {
        "section5" => Ok(Preset::Run(benchmark_full())),
        "section5-desk" => Ok(Preset::Run(benchmark_desk())),
        "static-sanity" => Ok(Preset::Run(static_sanity())),
        "rls-rate" => Ok(Preset::RlsRate(RlsRateConfig::default())),
        "conservation-audit" => Ok(Preset::ConservationAudit(AuditConfig::default())),
        other => Err(Error::Config(format!(
            "unknown preset `{other}`; available: {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

pub fn parse_config(text: &str) -> Result<SimConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn to_toml(config: &SimConfig) -> String {
    toml::to_string(config).expect("config serializes to TOML")
}

/// Parses `k=v[,k=v]` into pairs.
pub fn parse_overrides(text: &str) -> Result<Vec<(String, String)>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|kv| {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                Error::Config(format!("override `{kv}` is not of the form key=value"))
            })?;
            Ok((k.trim().to_owned(), v.trim().to_owned()))
        })
        .collect()
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    // Accept `1e5` for integer keys as well.
    value
        .parse::<T>()
        .ok()
        .or_else(|| {
            value
                .parse::<f64>()
                .ok()
                .filter(|f| f.fract() == 0.0 && *f >= 0.0)
                .and_then(|f| format!("{f:.0}").parse().ok())
        })
        .ok_or_else(|| Error::Config(format!("override `{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    value.parse().map_err(|_| {
        Error::Config(format!(
            "override `{key}`: expected true or false, got `{value}`"
        ))
    })
}

pub fn apply_overrides(config: &mut SimConfig, overrides: &[(String, String)]) -> Result<()> {
    for (k, v) in overrides {
        match k.as_str() {
            "N" | "agents" => config.agents = parse_num(k, v)?,
            "n" | "dim" => config.dim = parse_num(k, v)?,
            "T" | "iterations" => config.iterations = parse_num(k, v)?,
            "alpha" => config.alpha = parse_num(k, v)?,
            "eta" => config.eta = parse_num(k, v)?,
            "mu" => config.mu = parse_num(k, v)?,
            "seed" => config.seed = parse_num(k, v)?,
            "log_interval" => config.log_interval = Some(parse_num(k, v)?),
            "checkpoint_interval" => config.checkpoint_interval = Some(parse_num(k, v)?),
            "learning" => config.learning = parse_bool(k, v)?,
            "oracle_estimates" => config.oracle_estimates = parse_bool(k, v)?,
            "static_time" => config.static_time = parse_bool(k, v)?,
            "engine" => {
                config.engine = match v.as_str() {
                    "message-passing" => Engine::MessagePassing,
                    "matrix" => Engine::Matrix,
                    _ => {
                        return Err(Error::Config(format!(
                            "override `engine`: unknown engine `{v}`"
                        )))
                    }
                }
            }
            "p" => match &mut config.topology {
                Topology::ErdosRenyi { p, .. } => *p = parse_num(k, v)?,
                _ => {
                    return Err(Error::Config(
                        "override `p` needs an erdos-renyi topology".into(),
                    ))
                }
            },
            _ => return Err(Error::Config(format!("unknown override key `{k}`"))),
        }
    }
    Ok(())
}

impl Preset {
    pub fn apply_overrides(&mut self, overrides: &[(String, String)]) -> Result<()> {
        match self {
            Preset::Run(c) => apply_overrides(c, overrides),
            Preset::RlsRate(c) => {
                for (k, v) in overrides {
                    match k.as_str() {
                        "n" | "dim" => c.dim = parse_num(k, v)?,
                        "seeds" => c.seeds = parse_num(k, v)?,
                        "T0" | "t0" => c.t0 = parse_num(k, v)?,
                        "eta" => c.eta = parse_num(k, v)?,
                        "seed" => c.base_seed = parse_num(k, v)?,
                        "noise_std" => c.noise_std = parse_num(k, v)?,
                        _ => {
                            return Err(Error::Config(format!(
                                "unknown override key `{k}` for rls-rate"
                            )))
                        }
                    }
                }
                Ok(())
            }
            Preset::ConservationAudit(c) => {
                for (k, v) in overrides {
                    match k.as_str() {
                        "instances" => c.instances = parse_num(k, v)?,
                        "rounds" | "T" => c.rounds = parse_num(k, v)?,
                        "seed" => c.base_seed = parse_num(k, v)?,
                        "learning" => c.learning = parse_bool(k, v)?,
                        _ => {
                            return Err(Error::Config(format!(
                                "unknown override key `{k}` for conservation-audit"
                            )))
                        }
                    }
                }
                Ok(())
            }
        }
    }
}

/// Ordered `key = value` lines, every value a TOML literal.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata {
    entries: Vec<(String, Value)>,
}

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl Into<Value>) {
        self.entries.push((key.into(), value.into()));
    }

    pub fn insert_serialized<T: Serialize>(&mut self, prefix: &str, value: &T) -> Result<()> {
        let v = Value::try_from(value).map_err(|e| Error::Config(e.to_string()))?;
        flatten_into(prefix, &v, &mut self.entries);
        Ok(())
    }

    pub fn entries(&self) -> &[(String, Value)] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Table> {
        toml::from_str(text).map_err(|e| Error::Config(format!("metadata: {e}")))
    }

    /// Recovers the run configuration from a rendered metadata document.
    pub fn config_from(text: &str) -> Result<SimConfig> {
        let mut table = Self::parse(text)?;
        let config = table
            .remove("config")
            .ok_or_else(|| Error::Config("metadata has no config entries".into()))?;
        rebuild_arrays(config)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("metadata config: {e}")))
    }
}

fn flatten_into(prefix: &str, value: &Value, out: &mut Vec<(String, Value)>) {
    match value {
        Value::Table(t) => {
            for (k, v) in t {
                flatten_into(&format!("{prefix}.{}", key_segment(k)), v, out);
            }
        }
        Value::Array(items) if items.iter().any(|v| v.is_table()) => {
            for (i, v) in items.iter().enumerate() {
                flatten_into(&format!("{prefix}.{i}"), v, out);
            }
            // Arrays of tables flatten to numbered keys; record the length so
            // the reader can rebuild the array.
            out.push((format!("{prefix}.len"), Value::Integer(items.len() as i64)));
        }
        other => out.push((prefix.to_owned(), other.clone())),
    }
}

fn key_segment(k: &str) -> String {
    if !k.is_empty()
        && k.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
    {
        k.to_owned()
    } else {
        format!("{k:?}")
    }
}

/// Full metadata for a run: resolved config, derived constants, topology and
/// every drawn scenario value.
pub fn run_metadata(sim: &Simulation, summary: Option<&RunSummary>) -> Result<Metadata> {
    let config = sim.config();
    let mut md = Metadata::new();
    md.insert("config_hash", config.hash());
    md.insert_serialized("config", config)?;

    let advice = sim.advice();
    md.insert("resolved.smoothness", advice.smoothness);
    md.insert("resolved.alpha_max", advice.alpha_max);
    md.insert(
        "resolved.alpha_within_advice",
        config.alpha <= advice.alpha_max,
    );

    let w = sim.mixing();
    md.insert("topology.spectral_radius", consensus_spectral_radius(w));
    md.insert("topology.directed_edges", w.directed_edge_count() as i64);
    let edges: Vec<Value> = w
        .directed_edges()
        .into_iter()
        .map(|(a, b)| Value::Array(vec![Value::Integer(a as i64), Value::Integer(b as i64)]))
        .collect();
    md.insert("topology.edge_list", Value::Array(edges));
    if let Topology::ErdosRenyi { seed, .. } = &config.topology {
        md.insert("topology.seed_used", seed.unwrap_or(config.seed) as i64);
    }

    let scenario = sim.scenario();
    let noise = scenario.noise();
    md.insert("scenario.noise_variance", noise.variance);
    md.insert("scenario.noise_std", noise.std_dev());
    for (i, agent) in scenario.agents().iter().enumerate() {
        let key = |field: &str| format!("scenario.agent.{i}.{field}");
        if let EngineeringCost::TrackingQuadratic { z, psi, m } = &agent.engineering {
            md.insert(key("z"), vec_value(z.as_slice()));
            md.insert(key("psi"), vec_value(psi.as_slice()));
            md.insert(key("m"), *m as i64);
        }
        let user = agent.user.truth();
        let p: Vec<Value> = user
            .p()
            .row_iter()
            .map(|r| vec_value(&r.iter().copied().collect::<Vec<_>>()))
            .collect();
        md.insert(key("user_p"), Value::Array(p));
        md.insert(key("user_q"), vec_value(user.q().as_slice()));
        md.insert(key("user_r"), user.r());
        md.insert(key("x0"), vec_value(agent.x0.as_slice()));
    }

    if let Some(s) = summary {
        md.insert_serialized("summary", s)?;
    }
    Ok(md)
}

fn vec_value(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| Value::Float(x)).collect())
}

/// Inverse of the numbered-key flattening: tables carrying `len` and keys
/// `0..len` become arrays again.
fn rebuild_arrays(value: Value) -> Value {
    match value {
        Value::Table(mut t) => {
            let len = match t.get("len") {
                Some(Value::Integer(n)) if *n >= 0 => Some(*n as usize),
                _ => None,
            };
            if let Some(len) =
                len.filter(|&n| t.len() == n + 1 && (0..n).all(|i| t.contains_key(&i.to_string())))
            {
                Value::Array(
                    (0..len)
                        .map(|i| rebuild_arrays(t.remove(&i.to_string()).expect("checked above")))
                        .collect(),
                )
            } else {
                Value::Table(t.into_iter().map(|(k, v)| (k, rebuild_arrays(v))).collect())
            }
        }
        other => other,
    }
}

/// One line of a validation report. Advisory checks never fail the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub advisory: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed || c.advisory)
    }
}

/// Every structural check a run would perform, without simulating.
pub fn validate_config(config: &SimConfig) -> ValidationReport {
    let mut checks = Vec::new();
    let mut push = |name, passed, advisory, detail: String| {
        checks.push(Check {
            name,
            passed,
            advisory,
            detail,
        })
    };
    match config.check() {
        Ok(()) => push(
            "parameters",
            true,
            false,
            "scalar parameters in range".into(),
        ),
        Err(e) => push("parameters", false, false, e.to_string()),
    }
    match config.topology.build(config.agents, config.seed) {
        Ok(w) => push(
            "graph",
            true,
            false,
            format!(
                "{} and {} hold; consensus spectral radius {:.6}",
                crate::graph::DOUBLY_STOCHASTIC,
                crate::graph::STRONG_CONNECTIVITY,
                consensus_spectral_radius(&w)
            ),
        ),
        Err(e) => push("graph", false, false, e.to_string()),
    }
    match config
        .scenario
        .build(config.agents, config.dim, config.seed)
    {
        Ok(scenario) => {
            push(
                "user costs",
                true,
                false,
                format!(
                    "{} hold for all {} agents",
                    crate::scenario::USER_COST_BOUNDS,
                    scenario.len()
                ),
            );
            match crate::tracking::advise_for(&scenario, config.mu) {
                Ok(a) => {
                    let within = config.alpha <= a.alpha_max;
                    push(
                        "step size",
                        within,
                        true,
                        format!(
                            "alpha = {} {} the advisory ceiling N/L = {:.6} (L = {:.6}, mu = {})",
                            config.alpha,
                            if within { "is within" } else { "exceeds" },
                            a.alpha_max,
                            a.smoothness,
                            config.mu
                        ),
                    )
                }
                Err(e) => push("step size", false, true, e.to_string()),
            }
        }
        Err(e) => push("user costs", false, false, e.to_string()),
    }
    ValidationReport { checks }
}
