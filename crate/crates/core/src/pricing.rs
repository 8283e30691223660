//! Expected firm-supply cost under EDF and the marginal-cost deadline
//! prices.
//!
//! Both quantities are functions of the residual process `xi` alone:
//!
//! * the expected firm cost is `c0 * E[sum_k max(0, -xi_k)]`;
//! * the price of deadline `k` is `c0` times the probability that some
//!   `xi_t` with `t >= k` is nonpositive, i.e. that a marginal unit with
//!   deadline `k` eventually displaces a unit that has to be bought firm.
//!
//! Ties `xi_t = 0` count as nonpositive. Every menu entry is computed from
//! one shared scenario set, so the menu is nonincreasing in the deadline by
//! construction: the events nest.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::population::AggregateBundle;
use crate::scheduler::residuals;
use crate::supply::{weighted_mean, Budget, MarketConfig, Method, ScenarioSet, SupplyModel};

const PAR_MIN_LEN: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostEstimate {
    pub value: f64,
    pub stderr: f64,
    pub method: Method,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceMenu {
    pub p: Vec<f64>,
    pub c0: f64,
    pub method: Method,
    pub samples: usize,
    pub stderr: Vec<f64>,
    pub assumption2: bool,
    pub x: Vec<f64>,
}

impl PriceMenu {
    /// `c0 >= p_1 >= ... >= p_N >= 0`, with no tolerance.
    pub fn is_monotone(&self) -> bool {
        self.p.first().is_none_or(|&p1| p1 <= self.c0)
            && self.p.windows(2).all(|w| w[0] >= w[1])
            && self.p.last().is_none_or(|&pn| pn >= 0.0)
    }

    /// Price of deadline `k` (1-based).
    pub fn price(&self, deadline: usize) -> f64 {
        self.p[deadline - 1]
    }

    /// Payment `p . a` for an action.
    pub fn payment(&self, action: &[f64]) -> f64 {
        self.p
            .iter()
            .zip(action)
            .map(|(p, a)| if *a == 0.0 { 0.0 } else { p * a })
            .sum()
    }
}

fn check_shapes(x: &AggregateBundle, set: &ScenarioSet, cfg: &MarketConfig) -> Result<()> {
    if x.len() != cfg.horizon {
        return Err(Error::Shape {
            what: "bundle".into(),
            expected: cfg.horizon,
            found: x.len(),
        });
    }
    if let Some(p) = set.paths().iter().find(|p| p.len() != cfg.horizon) {
        return Err(Error::Shape {
            what: "supply path".into(),
            expected: cfg.horizon,
            found: p.len(),
        });
    }
    Ok(())
}

/// Firm cost of serving `x` along each scenario, in set order.
pub fn scenario_costs(x: &[f64], set: &ScenarioSet, c0: f64) -> Vec<f64> {
    set.paths()
        .par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|path| {
            let xi = residuals(x, path.as_slice());
            c0 * xi[1..].iter().map(|v| (-v).max(0.0)).sum::<f64>()
        })
        .collect()
}

/// Expected firm cost of `x` over a prepared scenario set.
pub fn firm_cost_on(
    x: &AggregateBundle,
    set: &ScenarioSet,
    cfg: &MarketConfig,
) -> Result<CostEstimate> {
    check_shapes(x, set, cfg)?;
    let costs = scenario_costs(x.as_slice(), set, cfg.firm_price);
    let (value, stderr) = weighted_mean(set, &costs);
    Ok(CostEstimate {
        value,
        stderr,
        method: set.method(),
        samples: set.len(),
    })
}

pub fn expected_firm_cost(
    x: &AggregateBundle,
    model: &SupplyModel,
    cfg: &MarketConfig,
    budget: Budget,
) -> Result<CostEstimate> {
    firm_cost_on(x, &ScenarioSet::build(model, budget)?, cfg)
}

/// For one scenario, `hit[k-1]` tells whether some `xi_t`, `t >= k`, is
/// nonpositive.
fn shortfall_ahead(xi: &[f64]) -> Vec<bool> {
    let n = xi.len() - 1;
    let mut hit = vec![false; n];
    let mut ahead = false;
    for k in (1..=n).rev() {
        ahead = ahead || xi[k] <= 0.0;
        hit[k - 1] = ahead;
    }
    hit
}

/// Marginal-cost menu for `x` over a prepared scenario set.
pub fn menu_on(x: &AggregateBundle, set: &ScenarioSet, cfg: &MarketConfig) -> Result<PriceMenu> {
    check_shapes(x, set, cfg)?;
    let n = cfg.horizon;
    let c0 = cfg.firm_price;
    let hits: Vec<Vec<bool>> = set
        .paths()
        .par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|path| shortfall_ahead(&residuals(x.as_slice(), path.as_slice())))
        .collect();

    let (p, stderr) = match set.method() {
        Method::MonteCarlo => {
            let samples = set.len() as f64;
            let mut counts = vec![0u64; n];
            for hit in &hits {
                for (c, h) in counts.iter_mut().zip(hit) {
                    *c += *h as u64;
                }
            }
            counts
                .iter()
                .map(|&c| {
                    let share = c as f64 / samples;
                    (c0 * share, c0 * (share * (1.0 - share) / samples).sqrt())
                })
                .unzip()
        }
        Method::ExactEnumeration => {
            let mut shares = vec![0.0; n];
            for (hit, w) in hits.iter().zip(set.weights()) {
                for (s, h) in shares.iter_mut().zip(hit) {
                    if *h {
                        *s += w;
                    }
                }
            }
            // Scenario probabilities may overshoot one by round-off.
            (shares.iter().map(|s| c0 * s.min(1.0)).collect(), vec![0.0; n])
        }
    };
    Ok(PriceMenu {
        p,
        c0,
        method: set.method(),
        samples: set.len(),
        stderr,
        assumption2: set.assumption2(),
        x: x.as_slice().to_vec(),
    })
}

pub fn price_menu(
    x: &AggregateBundle,
    model: &SupplyModel,
    cfg: &MarketConfig,
    budget: Budget,
) -> Result<PriceMenu> {
    menu_on(x, &ScenarioSet::build(model, budget)?, cfg)
}

/// The events "first nonpositive residual at or after `k` occurs at `t`",
/// together with "all residuals from `k` on are positive", partition the
/// sample space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionRow {
    pub deadline: usize,
    /// Sum over `t = k..=N` of the probability of the first-hit event at `t`.
    pub shortfall_share: f64,
    /// Probability that `xi_k, ..., xi_N` are all positive.
    pub survival: f64,
}

pub fn partition_check(x: &AggregateBundle, set: &ScenarioSet) -> Result<Vec<PartitionRow>> {
    let n = x.len();
    let xis: Vec<Vec<f64>> = set
        .paths()
        .iter()
        .map(|p| residuals(x.as_slice(), p.as_slice()))
        .collect();
    Ok((1..=n)
        .map(|k| {
            let mut first_hit = vec![0.0; n + 1];
            let mut survival = 0.0;
            for (xi, w) in xis.iter().zip(set.weights()) {
                match (k..=n).find(|&t| xi[t] <= 0.0) {
                    Some(t) => first_hit[t] += w,
                    None => survival += w,
                }
            }
            PartitionRow {
                deadline: k,
                shortfall_share: first_hit[k..].iter().sum(),
                survival,
            }
        })
        .collect())
}

/// Finite-difference step for [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum Step {
    Absolute(f64),
    /// Fraction of the coordinate being perturbed.
    Relative(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradRow {
    pub deadline: usize,
    pub x: f64,
    pub h: f64,
    pub finite_difference: f64,
    pub fd_stderr: f64,
    pub price: f64,
    pub price_stderr: f64,
    pub abs_gap: f64,
    pub rel_gap: f64,
    /// Why the coordinate was not differenced, if it was skipped.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradReport {
    pub rows: Vec<GradRow>,
    pub method: Method,
    pub samples: usize,
    pub assumption2: bool,
}

impl GradReport {
    /// Largest relative gap over coordinates that were differenced.
    pub fn max_rel_gap(&self) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.skipped.is_none())
            .map(|r| r.rel_gap)
            .fold(0.0, f64::max)
    }
}

/// Central differences of the expected firm cost, compared against the
/// menu. All perturbed evaluations share the scenario set.
pub fn grad_check_on(
    x: &AggregateBundle,
    set: &ScenarioSet,
    cfg: &MarketConfig,
    step: Step,
) -> Result<GradReport> {
    let h_of = |xk: f64| match step {
        Step::Absolute(h) => h,
        Step::Relative(r) => r * xk,
    };
    match step {
        Step::Absolute(h) | Step::Relative(h) if !(h > 0.0 && h.is_finite()) => {
            return Err(Error::InvalidParameter(format!(
                "finite-difference step {h} must be positive"
            )))
        }
        _ => {}
    }
    let menu = menu_on(x, set, cfg)?;
    let c0 = cfg.firm_price;
    let rows = (0..x.len())
        .map(|k| {
            let xk = x.as_slice()[k];
            let h = h_of(xk);
            let mut row = GradRow {
                deadline: k + 1,
                x: xk,
                h,
                finite_difference: 0.0,
                fd_stderr: 0.0,
                price: menu.p[k],
                price_stderr: menu.stderr[k],
                abs_gap: 0.0,
                rel_gap: 0.0,
                skipped: None,
            };
            if xk <= 0.0 {
                row.skipped = Some("boundary coordinate x_k = 0".into());
                return row;
            }
            if h >= xk {
                row.skipped = Some(format!("step {h} would leave the orthant"));
                return row;
            }
            let mut up = x.as_slice().to_vec();
            let mut down = up.clone();
            up[k] += h;
            down[k] -= h;
            let width = up[k] - down[k];
            let hi = scenario_costs(&up, set, c0);
            let lo = scenario_costs(&down, set, c0);
            let quotients: Vec<f64> = hi.iter().zip(&lo).map(|(a, b)| (a - b) / width).collect();
            let (fd, se) = weighted_mean(set, &quotients);
            row.finite_difference = fd;
            row.fd_stderr = se;
            row.abs_gap = (fd - row.price).abs();
            row.rel_gap = row.abs_gap / row.price.abs().max(1e-12 * c0);
            row
        })
        .collect();
    Ok(GradReport {
        rows,
        method: set.method(),
        samples: set.len(),
        assumption2: set.assumption2(),
    })
}

pub fn grad_check(
    x: &AggregateBundle,
    model: &SupplyModel,
    cfg: &MarketConfig,
    step: Step,
    budget: Budget,
) -> Result<GradReport> {
    grad_check_on(x, &ScenarioSet::build(model, budget)?, cfg, step)
}

/// `0.5 Q(x1) + 0.5 Q(x2) - Q(0.5 x1 + 0.5 x2)` on a common scenario set;
/// nonnegative for a convex cost.
pub fn convexity_gap(x1: &[f64], x2: &[f64], set: &ScenarioSet, cfg: &MarketConfig) -> (f64, f64) {
    let mid: Vec<f64> = x1.iter().zip(x2).map(|(a, b)| 0.5 * a + 0.5 * b).collect();
    let c0 = cfg.firm_price;
    let q1 = weighted_mean(set, &scenario_costs(x1, set, c0)).0;
    let q2 = weighted_mean(set, &scenario_costs(x2, set, c0)).0;
    let qm = weighted_mean(set, &scenario_costs(&mid, set, c0)).0;
    let chord = 0.5 * q1 + 0.5 * q2;
    (chord - qm, chord)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityReport {
    pub trials: usize,
    pub violations: usize,
    /// Largest `Q(mid) - chord`; nonpositive when no trial violated.
    pub worst_excess: f64,
    pub tolerance: f64,
    pub method: Method,
    pub samples: usize,
}

/// Midpoint convexity on random pairs drawn uniformly from `[0, scale]^N`.
pub fn convexity_probe(
    model: &SupplyModel,
    cfg: &MarketConfig,
    trials: usize,
    seed: u64,
    budget: Budget,
    scale: f64,
) -> Result<ConvexityReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("convexity probe needs at least one trial".into()));
    }
    let set = ScenarioSet::build(model, budget)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.horizon;
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let x1: Vec<f64> = (0..n).map(|_| scale * rng.random::<f64>()).collect();
        let x2: Vec<f64> = (0..n).map(|_| scale * rng.random::<f64>()).collect();
        let (gap, chord) = convexity_gap(&x1, &x2, &set, cfg);
        let tol = 1e-9 * chord.abs().max(1.0);
        if -gap > tol {
            violations += 1;
        }
        worst = worst.max(-gap);
    }
    Ok(ConvexityReport {
        trials,
        violations,
        worst_excess: worst,
        tolerance: 1e-9,
        method: set.method(),
        samples: set.len(),
    })
}
