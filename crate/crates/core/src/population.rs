//! Consumer types, utilities, actions and the aggregate demand bundle.
//!
//! The nonatomic consumer continuum is represented by finitely many
//! `(type, mass)` atoms. Zero-mass probes ride along for incentive audits;
//! they are evaluated against the bundle but never contribute to it.

use serde::Serialize;

use crate::error::{Error, Result};

/// Number of uniformly spaced points on `[0, q]` used by [`validate_type`],
/// in addition to every breakpoint of the utility.
pub const CAP_CHECK_POINTS: usize = 1001;

/// Shape of a consumer's utility as a function of energy delivered by her
/// deadline. Every family is flat beyond the maximum demand `q`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", content = "params", rename_all = "kebab-case")]
pub enum UtilitySpec {
    /// `R * min(y, q)`.
    CappedLinear,
    /// All-or-nothing: `0` below `q`, `R * q` from `q` on.
    Step,
    /// Multiple all-or-nothing jobs. Each `(threshold, value)` pair sets the
    /// utility to `value` once `y >= threshold`; below the first threshold the
    /// utility is zero.
    Staircase { steps: Vec<(f64, f64)> },
    /// Linear interpolation through `(y, U(y))` points; constant outside the
    /// tabulated range.
    Tabulated { points: Vec<(f64, f64)> },
}

impl UtilitySpec {
    fn breakpoints(&self) -> &[(f64, f64)] {
        match self {
            UtilitySpec::Staircase { steps } => steps,
            UtilitySpec::Tabulated { points } => points,
            _ => &[],
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            UtilitySpec::CappedLinear => "capped-linear",
            UtilitySpec::Step => "step",
            UtilitySpec::Staircase { .. } => "staircase",
            UtilitySpec::Tabulated { .. } => "tabulated-piecewise-linear",
        }
    }
}

/// Deadline, marginal utility and maximum demand, with the utility attached.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsumerType {
    /// Period index in `1..=N`; delivery must complete by the end of period
    /// `deadline - 1`.
    pub deadline: usize,
    /// Marginal utility in currency per kWh, `U(q) / q`.
    #[serde(rename = "R")]
    pub marginal_utility: f64,
    /// Maximum demand in kWh.
    pub q: f64,
    pub utility: UtilitySpec,
}

impl ConsumerType {
    pub fn new(deadline: usize, marginal_utility: f64, q: f64, utility: UtilitySpec) -> Self {
        ConsumerType {
            deadline,
            marginal_utility,
            q,
            utility,
        }
    }

    pub fn capped_linear(deadline: usize, marginal_utility: f64, q: f64) -> Self {
        Self::new(deadline, marginal_utility, q, UtilitySpec::CappedLinear)
    }

    /// Utility of the energy `y` delivered by the deadline, without the
    /// domain check of [`utility_value`]. Negative inputs evaluate at zero.
    pub fn utility_at(&self, y: f64) -> f64 {
        let r = self.marginal_utility;
        let q = self.q;
        let y = y.max(0.0).min(q);
        match &self.utility {
            UtilitySpec::CappedLinear => r * y,
            UtilitySpec::Step => {
                if y >= q {
                    r * q
                } else {
                    0.0
                }
            }
            UtilitySpec::Staircase { steps } => steps
                .iter()
                .filter(|(threshold, _)| *threshold <= y)
                .map(|&(_, value)| value)
                .next_back()
                .unwrap_or(0.0),
            UtilitySpec::Tabulated { points } => interpolate(points, y),
        }
    }

    /// `U(q)`, the most this consumer can get out of any delivery.
    pub fn max_utility(&self) -> f64 {
        self.utility_at(self.q)
    }
}

fn interpolate(points: &[(f64, f64)], y: f64) -> f64 {
    let Some(&(x0, v0)) = points.first() else {
        return 0.0;
    };
    if y <= x0 {
        return v0;
    }
    for pair in points.windows(2) {
        let (xa, va) = pair[0];
        let (xb, vb) = pair[1];
        if y <= xb {
            if xb <= xa {
                return vb;
            }
            return va + (vb - va) * (y - xa) / (xb - xa);
        }
    }
    points[points.len() - 1].1
}

/// One violated clause of the utility assumptions or of the type's own
/// invariants.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "clause", rename_all = "kebab-case")]
pub enum TypeViolation {
    DeadlineOutOfRange { deadline: usize, horizon: usize },
    NonPositiveDemand { q: f64 },
    NonPositiveMarginalUtility { r: f64 },
    MalformedBreakpoints { detail: String },
    Negative { at: f64, value: f64 },
    Decreasing { at: f64, value: f64, previous: f64 },
    CapExceeded { at: f64, value: f64, cap: f64 },
    RatioMismatch { utility_at_q: f64, expected: f64 },
}

impl std::fmt::Display for TypeViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TypeViolation::DeadlineOutOfRange { deadline, horizon } => {
                write!(f, "deadline {deadline} outside 1..={horizon}")
            }
            TypeViolation::NonPositiveDemand { q } => write!(f, "q = {q} must be positive"),
            TypeViolation::NonPositiveMarginalUtility { r } => {
                write!(f, "R = {r} must be positive")
            }
            TypeViolation::MalformedBreakpoints { detail } => {
                write!(f, "malformed breakpoints: {detail}")
            }
            TypeViolation::Negative { at, value } => write!(f, "U({at}) = {value} is negative"),
            TypeViolation::Decreasing {
                at,
                value,
                previous,
            } => write!(f, "U decreases to {value} at y = {at} (was {previous})"),
            TypeViolation::CapExceeded { at, value, cap } => {
                write!(f, "U({at}) = {value} exceeds the cap y*R = {cap}")
            }
            TypeViolation::RatioMismatch {
                utility_at_q,
                expected,
            } => write!(f, "U(q) = {utility_at_q} but R*q = {expected}"),
        }
    }
}

/// Checks the type against the utility assumptions. An empty vector is a
/// pass.
///
/// Monotonicity and the cap `U(y) <= y R` are tested on
/// [`CAP_CHECK_POINTS`] uniform points of `[0, q]` plus every breakpoint.
/// Malformed breakpoint tables are reported, never panicked on.
pub fn validate_type(t: &ConsumerType, horizon: usize) -> Vec<TypeViolation> {
    let mut out = Vec::new();
    if t.deadline < 1 || t.deadline > horizon {
        out.push(TypeViolation::DeadlineOutOfRange {
            deadline: t.deadline,
            horizon,
        });
    }
    if !(t.q > 0.0 && t.q.is_finite()) {
        out.push(TypeViolation::NonPositiveDemand { q: t.q });
    }
    if !(t.marginal_utility > 0.0 && t.marginal_utility.is_finite()) {
        out.push(TypeViolation::NonPositiveMarginalUtility {
            r: t.marginal_utility,
        });
    }

    let breakpoints = t.utility.breakpoints();
    let mut malformed = false;
    for (i, &(y, v)) in breakpoints.iter().enumerate() {
        if !y.is_finite() || !v.is_finite() || y < 0.0 {
            out.push(TypeViolation::MalformedBreakpoints {
                detail: format!("entry {i} = ({y}, {v}) is not a finite nonnegative abscissa"),
            });
            malformed = true;
        }
    }
    for (i, pair) in breakpoints.windows(2).enumerate() {
        if pair[1].0 <= pair[0].0 {
            out.push(TypeViolation::MalformedBreakpoints {
                detail: format!(
                    "abscissae must be strictly increasing, entry {} ({}) follows {}",
                    i + 1,
                    pair[1].0,
                    pair[0].0
                ),
            });
            malformed = true;
        }
    }
    if malformed || !(t.q > 0.0 && t.q.is_finite()) {
        return out;
    }

    let q = t.q;
    let r = t.marginal_utility;
    let scale = (r * q).abs().max(1.0);
    let tol = 1e-12 * scale;

    let mut grid: Vec<f64> = (0..CAP_CHECK_POINTS)
        .map(|i| q * i as f64 / (CAP_CHECK_POINTS - 1) as f64)
        .collect();
    grid.extend(
        breakpoints
            .iter()
            .map(|&(y, _)| y)
            .filter(|&y| y <= q),
    );
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut previous: Option<f64> = None;
    for &y in &grid {
        let value = t.utility_at(y);
        if value < -tol {
            out.push(TypeViolation::Negative { at: y, value });
        }
        if let Some(prev) = previous {
            if value < prev - tol {
                out.push(TypeViolation::Decreasing {
                    at: y,
                    value,
                    previous: prev,
                });
            }
        }
        let cap = y * r;
        if value > cap + tol {
            out.push(TypeViolation::CapExceeded { at: y, value, cap });
        }
        previous = Some(value);
    }

    let at_q = t.max_utility();
    if (at_q - r * q).abs() > 1e-9 * scale {
        out.push(TypeViolation::RatioMismatch {
            utility_at_q: at_q,
            expected: r * q,
        });
    }
    out
}

/// `U(y)` with the domain check: `y` must be nonnegative.
pub fn utility_value(t: &ConsumerType, y: f64) -> Result<f64> {
    if y < 0.0 || y.is_nan() {
        return Err(Error::Domain(format!(
            "utility evaluated at negative energy {y}"
        )));
    }
    Ok(t.utility_at(y))
}

/// Requested quantity per deadline class, in kWh. Index `j - 1` holds
/// deadline `j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Action(Vec<f64>);

impl Action {
    pub fn new(quantities: Vec<f64>) -> Result<Self> {
        if let Some((i, &a)) = quantities
            .iter()
            .enumerate()
            .find(|(_, a)| !(**a >= 0.0 && a.is_finite()))
        {
            return Err(Error::Domain(format!(
                "action entry for deadline {} is {a}, must be a finite nonnegative quantity",
                i + 1
            )));
        }
        Ok(Action(quantities))
    }

    pub fn zeros(horizon: usize) -> Self {
        Action(vec![0.0; horizon])
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

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// `a_k = q` at the true deadline, zero elsewhere.
pub fn truthful_action(t: &ConsumerType, horizon: usize) -> Action {
    let mut a = vec![0.0; horizon];
    a[t.deadline - 1] = t.q;
    Action(a)
}

/// A positive-mass atom of the consumer distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Entry {
    pub consumer: ConsumerType,
    pub mass: f64,
}

/// A zero-mass consumer with a fixed action, used to evaluate deviations
/// without moving the bundle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Probe {
    pub consumer: ConsumerType,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Population {
    horizon: usize,
    entries: Vec<Entry>,
    probes: Vec<Probe>,
}

impl Population {
    /// Builds a population over `horizon` periods. Masses must be
    /// nonnegative and sum to one within `1e-12`; an empty entry list is
    /// allowed and stands for "no demand".
    pub fn new(horizon: usize, entries: Vec<Entry>, probes: Vec<Probe>) -> Result<Self> {
        let mut violations = Vec::new();
        for (i, e) in entries.iter().enumerate() {
            if !(e.mass >= 0.0 && e.mass.is_finite()) {
                violations.push(crate::error::Violation::new(
                    format!("types[{i}].mass"),
                    format!("mass {} must be finite and nonnegative", e.mass),
                ));
            }
            if e.consumer.deadline < 1 || e.consumer.deadline > horizon {
                violations.push(crate::error::Violation::new(
                    format!("types[{i}].deadline"),
                    format!("deadline {} outside 1..={horizon}", e.consumer.deadline),
                ));
            }
        }
        if !entries.is_empty() {
            let total: f64 = entries.iter().map(|e| e.mass).sum();
            if (total - 1.0).abs() > 1e-12 {
                violations.push(crate::error::Violation::new(
                    "types[]",
                    format!("masses sum to {total}, expected 1"),
                ));
            }
        }
        for (i, p) in probes.iter().enumerate() {
            if p.action.len() != horizon {
                violations.push(crate::error::Violation::new(
                    format!("probes[{i}].action"),
                    format!("length {} differs from N = {horizon}", p.action.len()),
                ));
            }
            if p.consumer.deadline < 1 || p.consumer.deadline > horizon {
                violations.push(crate::error::Violation::new(
                    format!("probes[{i}].deadline"),
                    format!("deadline {} outside 1..={horizon}", p.consumer.deadline),
                ));
            }
        }
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        Ok(Population {
            horizon,
            entries,
            probes,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn probes(&self) -> &[Probe] {
        &self.probes
    }

    /// Adds a truth-telling probe of the given type.
    pub fn with_truthful_probe(mut self, consumer: ConsumerType) -> Self {
        let action = truthful_action(&consumer, self.horizon);
        self.probes.push(Probe { consumer, action });
        self
    }

    pub fn with_probe(mut self, consumer: ConsumerType, action: Action) -> Result<Self> {
        if action.len() != self.horizon {
            return Err(Error::Shape {
                what: "probe action".into(),
                expected: self.horizon,
                found: action.len(),
            });
        }
        self.probes.push(Probe { consumer, action });
        Ok(self)
    }

    /// Largest admissible action total: the maximum `q` over entries and
    /// probes.
    pub fn max_demand(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.consumer.q)
            .chain(self.probes.iter().map(|p| p.consumer.q))
            .fold(0.0, f64::max)
    }

    pub fn truthful_actions(&self) -> Vec<Action> {
        self.entries
            .iter()
            .map(|e| truthful_action(&e.consumer, self.horizon))
            .collect()
    }
}

/// Aggregate demand per deadline class, kWh.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct AggregateBundle(Vec<f64>);

impl AggregateBundle {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if let Some((i, &v)) = x
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0 && v.is_finite()))
        {
            return Err(Error::Domain(format!(
                "bundle entry for class {} is {v}, must be finite and nonnegative",
                i + 1
            )));
        }
        Ok(AggregateBundle(x))
    }

    pub fn zeros(horizon: usize) -> Self {
        AggregateBundle(vec![0.0; horizon])
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

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// `x_j = sum of q * mass over entries whose deadline is j`.
pub fn aggregate_truthful(pop: &Population) -> AggregateBundle {
    let mut x = vec![0.0; pop.horizon];
    for e in &pop.entries {
        x[e.consumer.deadline - 1] += e.consumer.q * e.mass;
    }
    AggregateBundle(x)
}

/// Mass-weighted sum of one action per entry. Probes are ignored.
pub fn aggregate_actions(pop: &Population, actions: &[Action]) -> Result<AggregateBundle> {
    if actions.len() != pop.entries.len() {
        return Err(Error::Shape {
            what: "actions (one per entry)".into(),
            expected: pop.entries.len(),
            found: actions.len(),
        });
    }
    let mut x = vec![0.0; pop.horizon];
    for (e, a) in pop.entries.iter().zip(actions) {
        if a.len() != pop.horizon {
            return Err(Error::Shape {
                what: "action".into(),
                expected: pop.horizon,
                found: a.len(),
            });
        }
        for (xj, aj) in x.iter_mut().zip(a.as_slice()) {
            if *aj != 0.0 {
                *xj += aj * e.mass;
            }
        }
    }
    Ok(AggregateBundle(x))
}
