//! Exhaustive dynamic-programming check of EDF's optimality.
//!
//! Demand and supply are mapped onto an integer grid of size `unit`. The DP
//! ranges over every causal allocation: at period `k` the scheduler has seen
//! `s_0..=s_k` and may split the intermittent supply arbitrarily among open
//! classes and buy any amount of firm supply, subject to clearing the class
//! whose deadline is now. Policies may depend on the full observed history,
//! which contains every Markov policy.

use std::collections::HashMap;

use serde::Serialize;

use super::simulate;
use crate::error::{Error, Result};
use crate::population::AggregateBundle;
use crate::supply::{MarketConfig, SupplyPath};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub edf_cost: f64,
    pub oracle_cost: f64,
    /// `edf_cost - oracle_cost`; positive means the DP found a cheaper policy.
    pub margin: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub scenarios: usize,
    pub unit: f64,
}

pub const ORACLE_TOLERANCE: f64 = 1e-9;

fn to_units(value: f64, unit: f64, what: &str) -> Result<i64> {
    let scaled = value / unit;
    let rounded = scaled.round();
    if (scaled - rounded).abs() > 1e-9 * scaled.abs().max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "{what} = {value} is not a multiple of the oracle unit {unit}"
        )));
    }
    Ok(rounded as i64)
}

struct Dp<'a> {
    horizon: usize,
    cost_per_unit: f64,
    supply: Vec<Vec<i64>>,
    probs: &'a [f64],
    memo: HashMap<(usize, Vec<i64>, Vec<i64>), f64>,
}

impl Dp<'_> {
    /// Expected cost-to-go from period `k` given residual `z` and the
    /// scenarios consistent with the supply observed so far.
    fn value(&mut self, k: usize, history: Vec<i64>, members: &[usize], z: Vec<i64>) -> f64 {
        if k == self.horizon {
            return 0.0;
        }
        let key = (k, history.clone(), z.clone());
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let total: f64 = members.iter().map(|&i| self.probs[i]).sum();
        let mut groups: Vec<(i64, Vec<usize>)> = Vec::new();
        for &i in members {
            let s = self.supply[i][k];
            match groups.iter_mut().find(|(level, _)| *level == s) {
                Some((_, g)) => g.push(i),
                None => groups.push((s, vec![i])),
            }
        }
        let mut expected = 0.0;
        for (s, group) in groups {
            let weight: f64 = group.iter().map(|&i| self.probs[i]).sum();
            if weight == 0.0 {
                continue;
            }
            let mut next_history = history.clone();
            next_history.push(s);
            let mut best = f64::INFINITY;
            for (firm, next) in feasible_moves(&z, s, k) {
                let cost = self.cost_per_unit * firm as f64
                    + self.value(k + 1, next_history.clone(), &group, next);
                best = best.min(cost);
            }
            expected += weight * best;
        }
        let v = if total > 0.0 { expected / total } else { 0.0 };
        self.memo.insert(key, v);
        v
    }
}

/// Every `(firm units, next state)` reachable from `z` with `s` units of
/// intermittent supply at period `k`.
fn feasible_moves(z: &[i64], s: i64, k: usize) -> Vec<(i64, Vec<i64>)> {
    let mut out = Vec::new();
    let mut next = z.to_vec();
    fn rec(
        j: usize,
        k: usize,
        z: &[i64],
        left: i64,
        firm: i64,
        next: &mut Vec<i64>,
        out: &mut Vec<(i64, Vec<i64>)>,
    ) {
        if j == z.len() {
            out.push((firm, next.clone()));
            return;
        }
        if j < k || z[j] == 0 {
            next[j] = z[j];
            rec(j + 1, k, z, left, firm, next, out);
            return;
        }
        for u in 0..=z[j].min(left) {
            let open = z[j] - u;
            if j == k {
                next[j] = 0;
                rec(j + 1, k, z, left - u, firm + open, next, out);
            } else {
                for v in 0..=open {
                    next[j] = open - v;
                    rec(j + 1, k, z, left - u, firm + v, next, out);
                }
            }
        }
        next[j] = z[j];
    }
    rec(0, k, z, s, 0, &mut next, &mut out);
    out
}

/// Compares EDF's expected firm cost against the DP minimum over all causal
/// policies on a discretised instance.
pub fn edf_oracle(
    x: &AggregateBundle,
    scenarios: &[(SupplyPath, f64)],
    cfg: &MarketConfig,
    unit: f64,
) -> Result<OracleReport> {
    if !(unit > 0.0 && unit.is_finite()) {
        return Err(Error::InvalidParameter(format!("oracle unit {unit} must be positive")));
    }
    let n = x.len();
    if n != cfg.horizon {
        return Err(Error::Shape {
            what: "bundle".into(),
            expected: cfg.horizon,
            found: n,
        });
    }
    let z0 = x
        .as_slice()
        .iter()
        .map(|&v| to_units(v, unit, "demand"))
        .collect::<Result<Vec<_>>>()?;
    let mut supply = Vec::with_capacity(scenarios.len());
    let mut probs = Vec::with_capacity(scenarios.len());
    let mut edf_cost = 0.0;
    for (path, p) in scenarios {
        if path.len() != n {
            return Err(Error::Shape {
                what: "supply path".into(),
                expected: n,
                found: path.len(),
            });
        }
        supply.push(
            path.as_slice()
                .iter()
                .map(|&v| to_units(v, unit, "supply"))
                .collect::<Result<Vec<_>>>()?,
        );
        probs.push(*p);
        edf_cost += p * cfg.firm_price * simulate(x, path)?.firm_total();
    }
    let members: Vec<usize> = (0..scenarios.len()).collect();
    let mut dp = Dp {
        horizon: n,
        cost_per_unit: cfg.firm_price * unit,
        supply,
        probs: &probs,
        memo: HashMap::new(),
    };
    let total: f64 = probs.iter().sum();
    let oracle_cost = dp.value(0, Vec::new(), &members, z0) * total;
    let margin = edf_cost - oracle_cost;
    Ok(OracleReport {
        edf_cost,
        oracle_cost,
        margin,
        tolerance: ORACLE_TOLERANCE,
        pass: margin <= ORACLE_TOLERANCE,
        scenarios: scenarios.len(),
        unit,
    })
}
