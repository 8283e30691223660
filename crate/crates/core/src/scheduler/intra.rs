//! Intra-class allocation: splitting each class's supply among the
//! consumers who requested energy in that class.
//!
//! The shipped policy is proportional to the request: in every period each
//! member of class `j` receives the same fraction of its class-`j` request.
//! That fraction is a property of the class alone, so a zero-mass probe
//! receives exactly what any positive-mass member with the same request
//! would.

use serde::Serialize;

use super::{simulate, ScheduleTrace, SLACK};
use crate::error::{Error, Result};
use crate::population::{aggregate_actions, Action, AggregateBundle, Population};

/// Cumulative served fraction per class: `fraction(j, t)` is the share of a
/// class-`j` request (0-based `j`) delivered by the end of period `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassFractions {
    by_class: Vec<Vec<f64>>,
}

impl ClassFractions {
    pub fn fraction(&self, class: usize, period: usize) -> f64 {
        self.by_class[class][period]
    }

    pub fn class(&self, class: usize) -> &[f64] {
        &self.by_class[class]
    }

    /// Energy an action receives by the end of period `deadline - 1`.
    pub fn delivered_by(&self, action: &[f64], deadline: usize) -> f64 {
        action
            .iter()
            .zip(&self.by_class)
            .map(|(a, f)| if *a == 0.0 { 0.0 } else { a * f[deadline - 1] })
            .sum()
    }
}

/// Served fractions for every class of a trace.
///
/// Classes with positive demand use the realised allocations. An empty class
/// takes the limit of an infinitesimal request: it is served in full at the
/// first period in which supply is left over after all earlier classes,
/// strict positivity required, and otherwise by firm supply at its deadline
/// period.
pub fn class_fractions(trace: &ScheduleTrace) -> ClassFractions {
    let n = trace.horizon();
    let x = trace.bundle();
    let s = trace.path.as_slice();
    let by_class = (0..n)
        .map(|c| {
            let mut f = vec![0.0; n];
            if x[c] > 0.0 {
                for (t, ft) in f.iter_mut().enumerate() {
                    *ft = if t >= c {
                        1.0
                    } else {
                        ((x[c] - trace.z[t + 1][c]) / x[c]).clamp(0.0, 1.0)
                    };
                }
            } else {
                let first = (0..c)
                    .find(|&t| s[t] - trace.u[t][..c].iter().sum::<f64>() > SLACK)
                    .unwrap_or(c);
                for ft in &mut f[first..] {
                    *ft = 1.0;
                }
            }
            f
        })
        .collect();
    ClassFractions { by_class }
}

/// Numeric counterpart of [`class_fractions`] for one class: rerun EDF with
/// `eps` extra demand in that class and read off its served fractions.
pub fn class_fractions_numeric(
    x: &AggregateBundle,
    path: &crate::supply::SupplyPath,
    class: usize,
    eps: f64,
) -> Result<Vec<f64>> {
    let mut bumped = x.as_slice().to_vec();
    bumped[class] += eps;
    let total = bumped[class];
    let trace = simulate(&AggregateBundle::new(bumped)?, path)?;
    Ok((0..x.len())
        .map(|t| ((total - trace.z[t + 1][class]) / total).clamp(0.0, 1.0))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "kind", content = "index", rename_all = "kebab-case")]
pub enum MemberId {
    Entry(usize),
    Probe(usize),
}

impl std::fmt::Display for MemberId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MemberId::Entry(i) => write!(f, "types[{i}]"),
            MemberId::Probe(i) => write!(f, "probes[{i}]"),
        }
    }
}

/// Per-unit-mass deliveries of one consumer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemberAllocation {
    pub id: MemberId,
    pub action: Vec<f64>,
    /// `deliveries[t][j]`: energy from class `j + 1` delivered in period `t`.
    pub deliveries: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntraAllocation {
    pub fractions: ClassFractions,
    pub members: Vec<MemberAllocation>,
}

impl IntraAllocation {
    pub fn member(&self, who: MemberId) -> Option<&MemberAllocation> {
        self.members.iter().find(|m| m.id == who)
    }
}

/// Splits the trace's class allocations across entries (with the given
/// actions) and probes (with their own actions).
pub fn intra_allocate(
    trace: &ScheduleTrace,
    pop: &Population,
    actions: &[Action],
) -> Result<IntraAllocation> {
    let x = aggregate_actions(pop, actions)?;
    let target = trace.bundle();
    if x.len() != target.len() {
        return Err(Error::Consistency(format!(
            "actions span {} classes, trace spans {}",
            x.len(),
            target.len()
        )));
    }
    for (j, (a, b)) in x.as_slice().iter().zip(target).enumerate() {
        if (a - b).abs() > 1e-9 * a.abs().max(b.abs()).max(1.0) {
            return Err(Error::Consistency(format!(
                "class {} aggregates to {a} but the trace was run for {b}",
                j + 1
            )));
        }
    }

    let fractions = class_fractions(trace);
    let allocate = |id: MemberId, action: &Action| {
        let n = trace.horizon();
        let deliveries = (0..n)
            .map(|t| {
                action
                    .as_slice()
                    .iter()
                    .enumerate()
                    .map(|(j, &a)| {
                        let before = if t == 0 { 0.0 } else { fractions.fraction(j, t - 1) };
                        a * (fractions.fraction(j, t) - before)
                    })
                    .collect()
            })
            .collect();
        MemberAllocation {
            id,
            action: action.as_slice().to_vec(),
            deliveries,
        }
    };
    let members = actions
        .iter()
        .enumerate()
        .map(|(i, a)| allocate(MemberId::Entry(i), a))
        .chain(
            pop.probes()
                .iter()
                .enumerate()
                .map(|(i, p)| allocate(MemberId::Probe(i), &p.action)),
        )
        .collect();
    Ok(IntraAllocation { fractions, members })
}

/// Energy delivered to `who` by the end of period `deadline - 1`.
pub fn consumer_delivery(alloc: &IntraAllocation, who: MemberId, deadline: usize) -> Result<f64> {
    let member = alloc
        .member(who)
        .ok_or_else(|| Error::UnknownMember(who.to_string()))?;
    let n = member.deliveries.len();
    if deadline < 1 || deadline > n {
        return Err(Error::InvalidParameter(format!(
            "deadline {deadline} outside 1..={n}"
        )));
    }
    Ok(member.deliveries[..deadline]
        .iter()
        .flatten()
        .sum())
}
