//! Experiment configuration: JSON ingestion and cross-validation.
//!
//! ```json
//! {
//!   "seed": 7,
//!   "market": { "N": 2, "c0": 1.0 },
//!   "supply": { "kind": "finite-scenario",
//!               "params": { "scenarios": [ { "path": [0, 0], "prob": 0.5 },
//!                                          { "path": [4, 2], "prob": 0.5 } ] } },
//!   "types": [ { "deadline": 1, "R": 2.0, "q": 4.0, "mass": 0.5 },
//!              { "deadline": 2, "R": 2.0, "q": 2.0, "mass": 0.5 } ]
//! }
//! ```
//!
//! Every violation found is reported, not just the first.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result, Violation};
use crate::population::{
    aggregate_truthful, truthful_action, validate_type, Action, AggregateBundle, ConsumerType,
    Entry, Population, Probe, UtilitySpec,
};
use crate::supply::{validate_model, MarketConfig, SupplyModel, SupplyPath};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    seed: u64,
    market: RawMarket,
    supply: RawSupply,
    #[serde(default)]
    types: Vec<RawType>,
    #[serde(default)]
    probes: Vec<RawType>,
    #[serde(default)]
    x: Option<Vec<f64>>,
    #[serde(default)]
    audit: AuditSettings,
    #[serde(default)]
    oracle: OracleSettings,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMarket {
    #[serde(rename = "N")]
    n: usize,
    c0: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSupply {
    kind: String,
    #[serde(default)]
    params: Value,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawType {
    deadline: usize,
    #[serde(rename = "R")]
    r: f64,
    q: f64,
    #[serde(default)]
    mass: Option<f64>,
    #[serde(default)]
    utility: Option<RawUtility>,
    /// Probes only; defaults to the truthful action.
    #[serde(default)]
    action: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUtility {
    family: String,
    #[serde(default)]
    params: Value,
}

/// Knobs for `audit-ic` and `equilibrium`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditSettings {
    pub random_bundles: usize,
    pub adversarial_bundles: bool,
    /// Standard-error ceiling above which a Monte Carlo deviation estimate
    /// is flagged inconclusive.
    pub max_stderr: Option<f64>,
    /// Trials for the low-value violation search; zero skips it.
    pub search_trials: usize,
    pub foc_directions: usize,
}

impl Default for AuditSettings {
    fn default() -> Self {
        AuditSettings {
            random_bundles: 5,
            adversarial_bundles: true,
            max_stderr: None,
            search_trials: 0,
            foc_directions: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSettings {
    /// Grid size onto which demand and supply must fall.
    pub unit: f64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings { unit: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub market: MarketConfig,
    pub supply: SupplyModel,
    pub population: Population,
    /// Explicit bundle; when absent the truthful aggregate is used.
    pub x: Option<AggregateBundle>,
    pub audit: AuditSettings,
    pub oracle: OracleSettings,
}

impl ExperimentConfig {
    pub fn bundle(&self) -> AggregateBundle {
        self.x
            .clone()
            .unwrap_or_else(|| aggregate_truthful(&self.population))
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base)
}

/// Parses and validates a config. Relative trace-file paths resolve
/// against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut v = Vec::new();

    let market = match MarketConfig::new(raw.market.n, raw.market.c0) {
        Ok(m) => Some(m),
        Err(e) => {
            v.push(Violation::new("market", e.to_string()));
            None
        }
    };
    let n = raw.market.n;

    let supply = parse_supply(&raw.supply, base, n, &mut v);
    if let (Some(model), Some(market)) = (&supply, &market) {
        for msg in validate_model(model, market).violations {
            v.push(Violation::new("supply.params", msg));
        }
    }

    let mut entries = Vec::new();
    for (i, t) in raw.types.iter().enumerate() {
        let key = format!("types[{i}]");
        if t.action.is_some() {
            v.push(Violation::new(format!("{key}.action"), "only probes carry an action"));
        }
        let Some(consumer) = parse_type(t, n, &key, &mut v) else {
            continue;
        };
        match t.mass {
            Some(m) if m >= 0.0 && m.is_finite() => entries.push(Entry { consumer, mass: m }),
            Some(m) => v.push(Violation::new(
                format!("{key}.mass"),
                format!("mass {m} must be finite and nonnegative"),
            )),
            None => v.push(Violation::new(format!("{key}.mass"), "missing mass")),
        }
    }
    if !raw.types.is_empty() {
        let total: f64 = raw.types.iter().filter_map(|t| t.mass).sum();
        if (total - 1.0).abs() > 1e-12 {
            v.push(Violation::new(
                "types[]",
                format!("masses sum to {total}, expected 1"),
            ));
        }
    }

    let mut probes = Vec::new();
    for (i, t) in raw.probes.iter().enumerate() {
        let key = format!("probes[{i}]");
        if t.mass.is_some_and(|m| m != 0.0) {
            v.push(Violation::new(format!("{key}.mass"), "probes have zero mass"));
        }
        let Some(consumer) = parse_type(t, n, &key, &mut v) else {
            continue;
        };
        let action = match &t.action {
            None => truthful_action(&consumer, n),
            Some(a) if a.len() != n => {
                v.push(Violation::new(
                    format!("{key}.action"),
                    format!("length {} differs from N = {n}", a.len()),
                ));
                continue;
            }
            Some(a) => match Action::new(a.clone()) {
                Ok(a) => a,
                Err(e) => {
                    v.push(Violation::new(format!("{key}.action"), e.to_string()));
                    continue;
                }
            },
        };
        probes.push(Probe { consumer, action });
    }

    let x = match raw.x {
        None => None,
        Some(x) if x.len() != n => {
            v.push(Violation::new(
                "x",
                format!("length {} differs from N = {n}", x.len()),
            ));
            None
        }
        Some(x) => match AggregateBundle::new(x) {
            Ok(b) => Some(b),
            Err(e) => {
                v.push(Violation::new("x", e.to_string()));
                None
            }
        },
    };

    if !(raw.oracle.unit > 0.0 && raw.oracle.unit.is_finite()) {
        v.push(Violation::new(
            "oracle.unit",
            format!("{} must be positive", raw.oracle.unit),
        ));
    }
    if let Some(m) = raw.audit.max_stderr {
        if m.is_nan() || m <= 0.0 {
            v.push(Violation::new("audit.max_stderr", format!("{m} must be positive")));
        }
    }

    if !v.is_empty() {
        return Err(Error::Validation(v));
    }
    let (Some(market), Some(supply)) = (market, supply) else {
        unreachable!("missing market or supply always records a violation")
    };
    let population = Population::new(n, entries, probes)?;
    Ok(ExperimentConfig {
        seed: raw.seed,
        market,
        supply,
        population,
        x,
        audit: raw.audit,
        oracle: raw.oracle,
    })
}

fn parse_type(t: &RawType, n: usize, key: &str, v: &mut Vec<Violation>) -> Option<ConsumerType> {
    let utility = match &t.utility {
        None => UtilitySpec::CappedLinear,
        Some(u) => match parse_utility(u) {
            Ok(u) => u,
            Err(msg) => {
                v.push(Violation::new(format!("{key}.utility"), msg));
                return None;
            }
        },
    };
    let consumer = ConsumerType::new(t.deadline, t.r, t.q, utility);
    let problems = validate_type(&consumer, n);
    if problems.is_empty() {
        Some(consumer)
    } else {
        v.extend(
            problems
                .into_iter()
                .map(|p| Violation::new(key.to_string(), p.to_string())),
        );
        None
    }
}

fn parse_utility(u: &RawUtility) -> std::result::Result<UtilitySpec, String> {
    let pairs = |field: &str| -> std::result::Result<Vec<(f64, f64)>, String> {
        let value = u
            .params
            .get(field)
            .ok_or_else(|| format!("params.{field} is required for {}", u.family))?;
        serde_json::from_value(value.clone())
            .map_err(|e| format!("params.{field}: expected [[y, value], ...]: {e}"))
    };
    match u.family.as_str() {
        "capped-linear" => Ok(UtilitySpec::CappedLinear),
        "step" => Ok(UtilitySpec::Step),
        "staircase" => Ok(UtilitySpec::Staircase {
            steps: pairs("steps")?,
        }),
        "tabulated" | "tabulated-piecewise-linear" => Ok(UtilitySpec::Tabulated {
            points: pairs("points")?,
        }),
        other => Err(format!(
            "unknown family `{other}`; expected capped-linear, step, staircase or tabulated"
        )),
    }
}

fn parse_supply(
    raw: &RawSupply,
    base: &Path,
    n: usize,
    v: &mut Vec<Violation>,
) -> Option<SupplyModel> {
    let params = &raw.params;
    let mut bad = |key: &str, msg: String| {
        v.push(Violation::new(format!("supply.params.{key}"), msg));
        None
    };
    match raw.kind.as_str() {
        "deterministic" => match path_at(params.get("path")) {
            Ok(path) => Some(SupplyModel::Deterministic { path }),
            Err(msg) => bad("path", msg),
        },
        "finite-scenario" => {
            let Some(list) = params.get("scenarios").and_then(Value::as_array) else {
                return bad("scenarios", "expected an array of {path, prob}".into());
            };
            let mut scenarios = Vec::new();
            let mut ok = true;
            for (i, s) in list.iter().enumerate() {
                let path = path_at(s.get("path"));
                let prob = s.get("prob").and_then(Value::as_f64);
                match (path, prob) {
                    (Ok(p), Some(w)) => scenarios.push((p, w)),
                    (Err(msg), _) => {
                        ok = false;
                        v.push(Violation::new(format!("supply.params.scenarios[{i}].path"), msg));
                    }
                    (_, None) => {
                        ok = false;
                        v.push(Violation::new(
                            format!("supply.params.scenarios[{i}].prob"),
                            "expected a number",
                        ));
                    }
                }
            }
            ok.then_some(SupplyModel::FiniteScenario { scenarios })
        }
        "iid-uniform" => {
            let lower = bounds(params.get("lower"), n);
            let upper = bounds(params.get("upper"), n);
            match (lower, upper) {
                (Ok(lower), Ok(upper)) => Some(SupplyModel::IidUniform { lower, upper }),
                (Err(msg), _) => bad("lower", msg),
                (_, Err(msg)) => bad("upper", msg),
            }
        }
        "trace-file" => {
            let Some(p) = params.get("path").and_then(Value::as_str) else {
                return bad("path", "expected a file path".into());
            };
            let full: PathBuf = base.join(p);
            match SupplyModel::from_trace_file(&full) {
                Ok(m) => Some(m),
                Err(e) => bad("path", e.to_string()),
            }
        }
        other => {
            v.push(Violation::new(
                "supply.kind",
                format!(
                    "unknown kind `{other}`; expected deterministic, finite-scenario, \
                     iid-uniform or trace-file"
                ),
            ));
            None
        }
    }
}

fn path_at(value: Option<&Value>) -> std::result::Result<SupplyPath, String> {
    let raw: Vec<f64> = value
        .cloned()
        .ok_or_else(|| "missing".to_string())
        .and_then(|v| serde_json::from_value(v).map_err(|e| format!("expected numbers: {e}")))?;
    SupplyPath::new(raw).map_err(|e| e.to_string())
}

/// A scalar bound is broadcast to all `n` periods.
fn bounds(value: Option<&Value>, n: usize) -> std::result::Result<Vec<f64>, String> {
    match value {
        Some(Value::Number(x)) => {
            let x = x.as_f64().ok_or("not a finite number")?;
            Ok(vec![x; n])
        }
        Some(v @ Value::Array(_)) => {
            serde_json::from_value(v.clone()).map_err(|e| format!("expected numbers: {e}"))
        }
        _ => Err("expected a number or an array of numbers".into()),
    }
}
