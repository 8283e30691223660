//! Earliest-deadline-first scheduling of deadline classes.
//!
//! Class `j` (stored at index `j - 1`) may be served in periods
//! `0..=j-1`. At period `k` the intermittent supply `s_k` is poured into the
//! classes in deadline order; firm supply tops up a class only in its last
//! admissible period `k = j - 1`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::population::AggregateBundle;
use crate::supply::SupplyPath;

mod intra;
pub mod oracle;

pub use intra::{
    class_fractions, class_fractions_numeric, consumer_delivery, intra_allocate,
    ClassFractions, IntraAllocation, MemberAllocation, MemberId,
};

/// Absolute slack used when clamping allocations against residuals.
pub const SLACK: f64 = 1e-12;

/// Intermittent and firm allocations for one period.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Controls {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// EDF controls at period `k` for class residuals `z` and supply `s`.
///
/// Fails if a class whose deadline has passed (`j <= k`) still holds demand.
pub fn edf_controls(z: &[f64], s: f64, k: usize) -> Result<Controls> {
    if let Some((idx, &residual)) = z.iter().enumerate().take(k).find(|(_, r)| **r > SLACK) {
        return Err(Error::InfeasibleState {
            period: k,
            class: idx + 1,
            residual,
        });
    }
    if s.is_nan() || s < 0.0 {
        return Err(Error::Domain(format!("supply {s} at period {k} is negative")));
    }
    let n = z.len();
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut left = s;
    for j in k..n {
        let take = z[j].min(left).max(0.0);
        u[j] = take;
        left = (left - take).max(0.0);
    }
    if k < n {
        v[k] = (z[k] - u[k]).max(0.0);
    }
    Ok(Controls { u, v })
}

/// States and controls of one EDF run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleTrace {
    /// `z[k]` is the residual class demand at the start of period `k`;
    /// `z[0] = x`, `z[N] = 0`.
    pub z: Vec<Vec<f64>>,
    /// `u[k][j]`: intermittent supply to class `j + 1` in period `k`.
    pub u: Vec<Vec<f64>>,
    /// `v[k][j]`: firm supply to class `j + 1` in period `k`.
    pub v: Vec<Vec<f64>>,
    pub path: SupplyPath,
}

impl ScheduleTrace {
    pub fn horizon(&self) -> usize {
        self.u.len()
    }

    pub fn bundle(&self) -> &[f64] {
        &self.z[0]
    }

    /// Firm energy delivered to each class over the whole horizon.
    pub fn firm_by_class(&self) -> Vec<f64> {
        let n = self.horizon();
        (0..n)
            .map(|j| self.v.iter().map(|row| row[j]).sum())
            .collect()
    }

    pub fn firm_total(&self) -> f64 {
        self.v.iter().flatten().sum()
    }

    /// Intermittent supply left unallocated in period `k`.
    pub fn unused(&self, k: usize) -> f64 {
        self.path.as_slice()[k] - self.u[k].iter().sum::<f64>()
    }

    /// Checks the state equation, deadline feasibility, supply availability
    /// and sign constraints. Returns a description of every violation.
    pub fn check(&self, tol: f64) -> Vec<String> {
        let n = self.horizon();
        let mut out = Vec::new();
        for k in 0..n {
            let s = self.path.as_slice()[k];
            let used: f64 = self.u[k].iter().sum();
            if used > s + tol {
                out.push(format!("period {k}: intermittent use {used} exceeds supply {s}"));
            }
            for j in 0..n {
                let (z0, z1) = (self.z[k][j], self.z[k + 1][j]);
                let (u, v) = (self.u[k][j], self.v[k][j]);
                if (z0 - u - v - z1).abs() > tol {
                    out.push(format!("period {k} class {}: state equation broken", j + 1));
                }
                if u < -tol || v < -tol || z1 < -tol {
                    out.push(format!("period {k} class {}: negative quantity", j + 1));
                }
                if j <= k && z1.abs() > tol {
                    out.push(format!(
                        "period {k} class {}: residual {z1} after deadline",
                        j + 1
                    ));
                }
            }
        }
        out
    }
}

/// Runs EDF from `z_0 = x` along the supply path.
pub fn simulate(x: &AggregateBundle, path: &SupplyPath) -> Result<ScheduleTrace> {
    let n = x.len();
    if path.len() != n {
        return Err(Error::Shape {
            what: "supply path".into(),
            expected: n,
            found: path.len(),
        });
    }
    let mut z = Vec::with_capacity(n + 1);
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    z.push(x.as_slice().to_vec());
    for k in 0..n {
        let current = &z[k];
        let c = edf_controls(current, path.as_slice()[k], k)?;
        let next: Vec<f64> = current
            .iter()
            .zip(c.u.iter().zip(&c.v))
            .map(|(zj, (uj, vj))| {
                let r = (zj - uj) - vj;
                if r < SLACK {
                    0.0
                } else {
                    r
                }
            })
            .collect();
        z.push(next);
        u.push(c.u);
        v.push(c.v);
    }
    Ok(ScheduleTrace {
        z,
        u,
        v,
        path: path.clone(),
    })
}

/// `xi[0] = 0`, `xi[k+1] = max(0, xi[k]) + s[k] - x[k+1]` (with `x` stored
/// zero-based, so `x[k+1]` is `x.as_slice()[k]`).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ResidualTrace(pub Vec<f64>);

impl ResidualTrace {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Shortfall of class `k` (1-based), `max(0, -xi_k)`.
    pub fn shortfall(&self, k: usize) -> f64 {
        (-self.0[k]).max(0.0)
    }
}

pub fn residual_trace(x: &AggregateBundle, path: &SupplyPath) -> Result<ResidualTrace> {
    if path.len() != x.len() {
        return Err(Error::Shape {
            what: "supply path".into(),
            expected: x.len(),
            found: path.len(),
        });
    }
    Ok(ResidualTrace(residuals(x.as_slice(), path.as_slice())))
}

/// Residual recursion on raw slices; the hot path for pricing.
pub(crate) fn residuals(x: &[f64], s: &[f64]) -> Vec<f64> {
    let mut xi = Vec::with_capacity(x.len() + 1);
    xi.push(0.0);
    let mut prev = 0.0f64;
    for (sk, xk) in s.iter().zip(x) {
        let next = prev.max(0.0) + sk - xk;
        xi.push(next);
        prev = next;
    }
    xi
}
