//! Intermittent supply models and the scenario sets used to take
//! expectations over them.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Horizon and firm-supply price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarketConfig {
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(rename = "c0")]
    pub firm_price: f64,
}

impl MarketConfig {
    pub fn new(horizon: usize, firm_price: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon N must be at least 1".into()));
        }
        if !(firm_price > 0.0 && firm_price.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "firm price c0 = {firm_price} must be positive"
            )));
        }
        Ok(MarketConfig {
            horizon,
            firm_price,
        })
    }
}

/// Intermittent supply per period, kWh. Index `k` is period `k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SupplyPath(Vec<f64>);

impl SupplyPath {
    pub fn new(s: Vec<f64>) -> Result<Self> {
        if let Some((k, &v)) = s
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0 && v.is_finite()))
        {
            return Err(Error::Domain(format!(
                "supply at period {k} is {v}, must be finite and nonnegative"
            )));
        }
        Ok(SupplyPath(s))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SupplyModel {
    Deterministic {
        path: SupplyPath,
    },
    FiniteScenario {
        scenarios: Vec<(SupplyPath, f64)>,
    },
    /// Independent uniform supply per period on `[lower[k], upper[k]]`.
    IidUniform {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// Measured traces, one equiprobable scenario per row.
    TraceFile {
        source: PathBuf,
        rows: Vec<SupplyPath>,
    },
}

impl SupplyModel {
    pub fn kind(&self) -> &'static str {
        match self {
            SupplyModel::Deterministic { .. } => "deterministic",
            SupplyModel::FiniteScenario { .. } => "finite-scenario",
            SupplyModel::IidUniform { .. } => "iid-uniform",
            SupplyModel::TraceFile { .. } => "trace-file",
        }
    }

    pub fn iid_uniform(horizon: usize, lower: f64, upper: f64) -> Self {
        SupplyModel::IidUniform {
            lower: vec![lower; horizon],
            upper: vec![upper; horizon],
        }
    }

    /// Whether the model can be enumerated exactly.
    pub fn is_discrete(&self) -> bool {
        !matches!(self, SupplyModel::IidUniform { .. })
    }

    /// Absolutely continuous with compact support. Only the uniform kind with
    /// nondegenerate bounds qualifies.
    pub fn satisfies_assumption2(&self) -> bool {
        match self {
            SupplyModel::IidUniform { lower, upper } => lower
                .iter()
                .zip(upper)
                .all(|(l, u)| l.is_finite() && u.is_finite() && l < u),
            _ => false,
        }
    }

    /// Reads a trace CSV: one scenario per row, numeric columns, optional
    /// header.
    pub fn from_trace_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rows = parse_trace(path, &text)?;
        Ok(SupplyModel::TraceFile {
            source: path.to_path_buf(),
            rows,
        })
    }
}

fn parse_trace(path: &Path, text: &str) -> Result<Vec<SupplyPath>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Ingest {
            path: path.to_path_buf(),
            row,
            column: 0,
            message: e.to_string(),
        })?;
        let parsed: Vec<std::result::Result<f64, _>> =
            record.iter().map(str::parse::<f64>).collect();
        // A first row with no numeric cell is a header.
        if row == 1 && parsed.iter().all(|v| v.is_err()) {
            width = Some(record.len());
            continue;
        }
        let mut values = Vec::with_capacity(parsed.len());
        for (c, v) in parsed.into_iter().enumerate() {
            let v = v.map_err(|_| Error::Ingest {
                path: path.to_path_buf(),
                row,
                column: c + 1,
                message: format!("`{}` is not a number", &record[c]),
            })?;
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Ingest {
                    path: path.to_path_buf(),
                    row,
                    column: c + 1,
                    message: format!("supply {v} must be finite and nonnegative"),
                });
            }
            values.push(v);
        }
        match width {
            Some(w) if w != values.len() => {
                return Err(Error::Ingest {
                    path: path.to_path_buf(),
                    row,
                    column: values.len().min(w) + 1,
                    message: format!("expected {w} columns, found {}", values.len()),
                })
            }
            _ => width = Some(values.len()),
        }
        rows.push(SupplyPath(values));
    }
    if rows.is_empty() {
        return Err(Error::Ingest {
            path: path.to_path_buf(),
            row: 0,
            column: 0,
            message: "trace file holds no scenarios".into(),
        });
    }
    Ok(rows)
}

/// Derives the seed of item `index` in a batch from the batch root.
///
/// Counter based: the result depends only on `(root, index)`, so the order in
/// which workers process items cannot change any sample.
pub fn child_seed(root: u64, index: u64) -> u64 {
    splitmix64(root ^ splitmix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws one supply path. Deterministic in `(model, seed)`.
pub fn sample_path(model: &SupplyModel, seed: u64) -> SupplyPath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match model {
        SupplyModel::Deterministic { path } => path.clone(),
        SupplyModel::FiniteScenario { scenarios } => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (path, prob) in scenarios {
                acc += prob;
                if u < acc {
                    return path.clone();
                }
            }
            // Round-off left the cumulative sum just below one.
            scenarios
                .iter()
                .rev()
                .find(|(_, p)| *p > 0.0)
                .map(|(path, _)| path.clone())
                .unwrap_or_else(|| scenarios[scenarios.len() - 1].0.clone())
        }
        SupplyModel::IidUniform { lower, upper } => SupplyPath(
            lower
                .iter()
                .zip(upper)
                .map(|(&l, &u)| l + (u - l) * rng.random::<f64>())
                .collect(),
        ),
        SupplyModel::TraceFile { rows, .. } => rows[rng.random_range(0..rows.len())].clone(),
    }
}

/// Every scenario with its probability.
pub fn enumerate_scenarios(model: &SupplyModel) -> Result<Vec<(SupplyPath, f64)>> {
    match model {
        SupplyModel::Deterministic { path } => Ok(vec![(path.clone(), 1.0)]),
        SupplyModel::FiniteScenario { scenarios } => Ok(scenarios.clone()),
        SupplyModel::TraceFile { rows, .. } => {
            let p = 1.0 / rows.len() as f64;
            Ok(rows.iter().map(|r| (r.clone(), p)).collect())
        }
        SupplyModel::IidUniform { .. } => Err(Error::Unsupported(
            "iid-uniform supply has a continuous distribution and cannot be enumerated; \
             use a Monte Carlo budget"
                .into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelValidation {
    pub violations: Vec<String>,
    pub assumption2: bool,
}

impl ModelValidation {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Shape and support checks, plus the continuity/compact-support flag.
pub fn validate_model(model: &SupplyModel, cfg: &MarketConfig) -> ModelValidation {
    let n = cfg.horizon;
    let mut violations = Vec::new();
    let check_path = |violations: &mut Vec<String>, label: String, path: &SupplyPath| {
        if path.len() != n {
            violations.push(format!(
                "{label}: length {} differs from N = {n}",
                path.len()
            ));
        }
    };
    match model {
        SupplyModel::Deterministic { path } => check_path(&mut violations, "path".into(), path),
        SupplyModel::FiniteScenario { scenarios } => {
            if scenarios.is_empty() {
                violations.push("scenarios: at least one scenario is required".into());
            }
            for (i, (path, p)) in scenarios.iter().enumerate() {
                check_path(&mut violations, format!("scenarios[{i}].path"), path);
                if !(*p >= 0.0 && p.is_finite()) {
                    violations.push(format!("scenarios[{i}].prob: {p} is not a probability"));
                }
            }
            let total: f64 = scenarios.iter().map(|(_, p)| p).sum();
            if !scenarios.is_empty() && (total - 1.0).abs() > 1e-12 {
                violations.push(format!("scenarios: probabilities sum to {total}, expected 1"));
            }
        }
        SupplyModel::IidUniform { lower, upper } => {
            if lower.len() != n || upper.len() != n {
                violations.push(format!(
                    "bounds: lengths {} and {} differ from N = {n}",
                    lower.len(),
                    upper.len()
                ));
            }
            for (k, (l, u)) in lower.iter().zip(upper).enumerate() {
                if !(l.is_finite() && u.is_finite() && *l >= 0.0 && l <= u) {
                    violations.push(format!(
                        "bounds[{k}]: [{l}, {u}] is not a nonnegative bounded interval"
                    ));
                }
            }
        }
        SupplyModel::TraceFile { rows, .. } => {
            for (i, row) in rows.iter().enumerate() {
                check_path(&mut violations, format!("row {}", i + 1), row);
            }
        }
    }
    ModelValidation {
        assumption2: violations.is_empty() && model.satisfies_assumption2(),
        violations,
    }
}

/// How expectations are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

impl Budget {
    /// Default sample count for Monte Carlo estimates.
    pub const DEFAULT_SAMPLES: usize = 100_000;

    /// Exact when the model allows it, otherwise Monte Carlo.
    pub fn auto(model: &SupplyModel, samples: Option<usize>, seed: u64) -> Self {
        match samples {
            Some(samples) => Budget::MonteCarlo { samples, seed },
            None if model.is_discrete() => Budget::Exact,
            None => Budget::MonteCarlo {
                samples: Self::DEFAULT_SAMPLES,
                seed,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ExactEnumeration,
    MonteCarlo,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::ExactEnumeration => "exact-enumeration",
            Method::MonteCarlo => "monte-carlo",
        }
    }
}

/// A weighted set of supply paths standing in for the supply distribution.
///
/// Exact sets carry the scenario probabilities; Monte Carlo sets carry equal
/// weights. Every estimator evaluated on the same set uses common random
/// numbers.
#[derive(Debug, Clone)]
pub struct ScenarioSet {
    paths: Vec<SupplyPath>,
    weights: Vec<f64>,
    method: Method,
    assumption2: bool,
}

impl ScenarioSet {
    pub fn build(model: &SupplyModel, budget: Budget) -> Result<Self> {
        let assumption2 = model.satisfies_assumption2();
        match budget {
            Budget::Exact => {
                let (paths, weights) = enumerate_scenarios(model)?.into_iter().unzip();
                Ok(ScenarioSet {
                    paths,
                    weights,
                    method: Method::ExactEnumeration,
                    assumption2,
                })
            }
            Budget::MonteCarlo { samples, seed } => {
                if samples == 0 {
                    return Err(Error::InvalidParameter(
                        "Monte Carlo budget needs at least one sample".into(),
                    ));
                }
                let paths: Vec<SupplyPath> = (0..samples as u64)
                    .into_par_iter()
                    .map(|i| sample_path(model, child_seed(seed, i)))
                    .collect();
                let w = 1.0 / samples as f64;
                Ok(ScenarioSet {
                    paths,
                    weights: vec![w; samples],
                    method: Method::MonteCarlo,
                    assumption2,
                })
            }
        }
    }

    /// An explicit weighted set, treated as exact.
    pub fn from_weighted(scenarios: Vec<(SupplyPath, f64)>) -> Self {
        let (paths, weights) = scenarios.into_iter().unzip();
        ScenarioSet {
            paths,
            weights,
            method: Method::ExactEnumeration,
            assumption2: false,
        }
    }

    pub fn paths(&self) -> &[SupplyPath] {
        &self.paths
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SupplyPath, f64)> {
        self.paths.iter().zip(self.weights.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn assumption2(&self) -> bool {
        self.assumption2
    }

    pub fn is_exact(&self) -> bool {
        self.method == Method::ExactEnumeration
    }
}

/// Weighted mean of per-scenario values with its standard error.
///
/// Exact sets report zero error; Monte Carlo sets use the sample variance.
pub(crate) fn weighted_mean(set: &ScenarioSet, values: &[f64]) -> (f64, f64) {
    let mean: f64 = set
        .weights
        .iter()
        .zip(values)
        .map(|(w, v)| w * v)
        .sum();
    let stderr = match set.method {
        Method::ExactEnumeration => 0.0,
        Method::MonteCarlo => {
            let n = values.len();
            if n < 2 {
                0.0
            } else {
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                    / (n - 1) as f64;
                (var / n as f64).sqrt()
            }
        }
    };
    (mean, stderr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(v: &[f64]) -> SupplyPath {
        SupplyPath::new(v.to_vec()).unwrap()
    }

    fn four_scenarios() -> SupplyModel {
        SupplyModel::FiniteScenario {
            scenarios: vec![
                (path(&[0.0, 0.0]), 0.25),
                (path(&[0.0, 2.0]), 0.25),
                (path(&[4.0, 0.0]), 0.25),
                (path(&[4.0, 2.0]), 0.25),
            ],
        }
    }

    #[test]
    fn deterministic_ignores_seed() {
        let m = SupplyModel::Deterministic {
            path: path(&[1.5, 0.0]),
        };
        assert_eq!(sample_path(&m, 1), path(&[1.5, 0.0]));
        assert_eq!(sample_path(&m, 99), path(&[1.5, 0.0]));
    }

    #[test]
    fn finite_scenario_samples_stay_in_support() {
        let m = four_scenarios();
        let support = enumerate_scenarios(&m).unwrap();
        for seed in 0..200 {
            let s = sample_path(&m, seed);
            assert!(support.iter().any(|(p, _)| *p == s));
        }
    }

    #[test]
    fn uniform_samples_stay_in_bounds_and_differ() {
        let m = SupplyModel::iid_uniform(2, 0.0, 2.0);
        let a = sample_path(&m, 1);
        let b = sample_path(&m, 2);
        assert_ne!(a, b);
        for v in a.as_slice().iter().chain(b.as_slice()) {
            assert!((0.0..=2.0).contains(v));
        }
        assert_eq!(sample_path(&m, 7), sample_path(&m, 7));
    }

    #[test]
    fn enumeration() {
        let m = SupplyModel::Deterministic {
            path: path(&[1.0, 1.0]),
        };
        assert_eq!(enumerate_scenarios(&m).unwrap(), vec![(path(&[1.0, 1.0]), 1.0)]);
        let all = enumerate_scenarios(&four_scenarios()).unwrap();
        assert_eq!(all.len(), 4);
        assert!(all.iter().all(|(_, p)| *p == 0.25));
        assert!(matches!(
            enumerate_scenarios(&SupplyModel::iid_uniform(2, 0.0, 2.0)),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn model_validation() {
        let cfg = MarketConfig::new(2, 1.0).unwrap();
        let v = validate_model(&SupplyModel::iid_uniform(2, 0.0, 2.0), &cfg);
        assert!(v.passed() && v.assumption2);
        let v = validate_model(&four_scenarios(), &cfg);
        assert!(v.passed() && !v.assumption2);
        let v = validate_model(
            &SupplyModel::Deterministic {
                path: path(&[1.0, 1.0, 1.0]),
            },
            &cfg,
        );
        assert!(!v.passed());
        assert!(v.violations[0].contains("length 3"));
    }

    #[test]
    fn uniform_mean_within_three_standard_errors() {
        let m = SupplyModel::iid_uniform(1, 0.0, 2.0);
        let set = ScenarioSet::build(
            &m,
            Budget::MonteCarlo {
                samples: 100_000,
                seed: 11,
            },
        )
        .unwrap();
        let values: Vec<f64> = set.paths().iter().map(|p| p.as_slice()[0]).collect();
        let (mean, stderr) = weighted_mean(&set, &values);
        assert!((mean - 1.0).abs() <= 3.0 * stderr, "mean {mean} stderr {stderr}");
    }

    #[test]
    fn scenario_sets_do_not_depend_on_thread_count() {
        let m = SupplyModel::iid_uniform(3, 0.0, 2.0);
        let budget = Budget::MonteCarlo {
            samples: 5_000,
            seed: 3,
        };
        let build = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| ScenarioSet::build(&m, budget).unwrap())
        };
        assert_eq!(build(1).paths(), build(4).paths());
    }

    #[test]
    fn trace_rows_with_header_and_errors() {
        let p = Path::new("trace.csv");
        let rows = parse_trace(p, "s0,s1\n1.0,2.0\n0.5,0\n").unwrap();
        assert_eq!(rows, vec![path(&[1.0, 2.0]), path(&[0.5, 0.0])]);
        let rows = parse_trace(p, "1.0,2.0\n").unwrap();
        assert_eq!(rows.len(), 1);
        match parse_trace(p, "1.0,2.0\n0.5,abc\n") {
            Err(Error::Ingest { row, column, .. }) => assert_eq!((row, column), (2, 2)),
            other => panic!("unexpected {other:?}"),
        }
        match parse_trace(p, "1.0,2.0\n0.5\n") {
            Err(Error::Ingest { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
