//! Consumer payoffs, incentive-compatibility audits and equilibrium checks.
//!
//! A deviating consumer is modelled as a zero-mass probe: its action does not
//! move the aggregate bundle or the menu, and it receives the class-level
//! served fractions of whichever classes it requested.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::population::{
    aggregate_truthful, truthful_action, Action, AggregateBundle, ConsumerType, Entry,
    Population,
};
use crate::pricing::{firm_cost_on, grad_check_on, menu_on, PriceMenu, Step};
use crate::scheduler::{class_fractions, simulate, ClassFractions};
use crate::supply::{
    weighted_mean, Budget, MarketConfig, Method, ScenarioSet, SupplyModel, SupplyPath,
};

/// Slack for IC assertions on exact scenario sets.
pub const EXACT_SLACK: f64 = 1e-9;

/// `U(q) - p_k q`: truth-telling is always served in full by its deadline.
pub fn truthful_payoff(t: &ConsumerType, menu: &PriceMenu) -> f64 {
    if t.q == 0.0 {
        return 0.0;
    }
    t.max_utility() - menu.price(t.deadline) * t.q
}

/// Everything a deviation needs that does not depend on the deviation: the
/// bundle, the scenario set, the menu at the bundle and the served fractions
/// of every class in every scenario.
#[derive(Debug, Clone)]
pub struct AuditContext {
    pub x: AggregateBundle,
    pub set: ScenarioSet,
    pub menu: PriceMenu,
    fractions: Vec<ClassFractions>,
}

impl AuditContext {
    pub fn new(x: AggregateBundle, set: ScenarioSet, cfg: &MarketConfig) -> Result<Self> {
        let menu = menu_on(&x, &set, cfg)?;
        let fractions = set
            .paths()
            .par_iter()
            .map(|p| simulate(&x, p).map(|t| class_fractions(&t)))
            .collect::<Result<Vec<_>>>()?;
        Ok(AuditContext {
            x,
            set,
            menu,
            fractions,
        })
    }

    pub fn build(
        x: AggregateBundle,
        model: &SupplyModel,
        cfg: &MarketConfig,
        budget: Budget,
    ) -> Result<Self> {
        let set = ScenarioSet::build(model, budget)?;
        Self::new(x, set, cfg)
    }

    pub fn fractions(&self) -> &[ClassFractions] {
        &self.fractions
    }

    /// Energy the action receives by `deadline` in every scenario.
    pub fn deliveries(&self, action: &[f64], deadline: usize) -> Vec<f64> {
        self.fractions
            .iter()
            .map(|f| f.delivered_by(action, deadline))
            .collect()
    }

    /// Largest violation of `sum_{t<=k} a_t <= omega_k <= sum_t a_t` over
    /// deadlines `k` and scenarios. Zero when the bounds hold.
    pub fn delivery_bound_gap(&self, action: &[f64]) -> f64 {
        let total: f64 = action.iter().sum();
        let mut worst = 0.0f64;
        for f in &self.fractions {
            let mut due = 0.0;
            for (k, a) in action.iter().enumerate() {
                due += a;
                let omega = f.delivered_by(action, k + 1);
                worst = worst.max(due - omega).max(omega - total);
            }
        }
        worst
    }

    pub fn deviation(&self, t: &ConsumerType, action: &Action) -> Result<DeviationPayoff> {
        if action.len() != self.x.len() {
            return Err(Error::Shape {
                what: "action".into(),
                expected: self.x.len(),
                found: action.len(),
            });
        }
        let a = action.as_slice();
        let payment = self.menu.payment(a);
        // Expected utility as U(cap) minus the expected shortfall in utility,
        // so a deviation that is always served in full is evaluated exactly.
        let cap = t.utility_at(action.total());
        let losses: Vec<f64> = self
            .deliveries(a, t.deadline)
            .into_iter()
            .map(|omega| cap - t.utility_at(omega))
            .collect();
        let (loss, stderr) = weighted_mean(&self.set, &losses);
        let expected_utility = if loss == 0.0 { cap } else { cap - loss };
        Ok(DeviationPayoff {
            payoff: expected_utility - payment,
            expected_utility,
            payment,
            stderr,
            inconclusive: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationPayoff {
    pub payoff: f64,
    pub expected_utility: f64,
    pub payment: f64,
    pub stderr: f64,
    /// The estimate's standard error exceeded the requested ceiling.
    pub inconclusive: bool,
}

/// Expected payoff of a zero-mass consumer of type `t` playing `action`
/// against the bundle `x`.
pub fn deviation_payoff(
    t: &ConsumerType,
    action: &Action,
    x: &AggregateBundle,
    model: &SupplyModel,
    cfg: &MarketConfig,
    budget: Budget,
    max_stderr: Option<f64>,
) -> Result<DeviationPayoff> {
    let ctx = AuditContext::build(x.clone(), model, cfg, budget)?;
    let mut d = ctx.deviation(t, action)?;
    d.inconclusive = max_stderr.is_some_and(|m| d.stderr > m);
    Ok(d)
}

/// Deviation grid: every entry on `{0, q/G, ..., q}`, total at most `cap`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub steps: usize,
    pub cap: f64,
}

impl GridSpec {
    pub const DEFAULT_STEPS: usize = 8;

    /// All grid actions for quantity `q` over `horizon` deadlines, in
    /// lexicographic order of the step indices.
    pub fn actions(&self, q: f64, horizon: usize) -> Vec<Vec<f64>> {
        let g = self.steps;
        let level = |i: usize| if i == g { q } else { q * i as f64 / g as f64 };
        let mut out = Vec::new();
        let mut idx = vec![0usize; horizon];
        loop {
            let a: Vec<f64> = idx.iter().map(|&i| level(i)).collect();
            if a.iter().sum::<f64>() <= self.cap * (1.0 + 1e-12) {
                out.push(a);
            }
            let mut pos = horizon;
            loop {
                if pos == 0 {
                    return out;
                }
                pos -= 1;
                if idx[pos] < g {
                    idx[pos] += 1;
                    break;
                }
                idx[pos] = 0;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PayoffReport {
    pub deadline: usize,
    #[serde(rename = "R")]
    pub marginal_utility: f64,
    pub q: f64,
    pub truthful_payoff: f64,
    pub best_deviation: Vec<f64>,
    pub best_deviation_payoff: f64,
    pub best_deviation_stderr: f64,
    /// Truthful payoff minus the best deviation payoff.
    pub gap: f64,
    pub slack: f64,
    /// `R >= c0`: the type is covered by the incentive-compatibility claim.
    pub covered: bool,
    pub pass: bool,
    pub grid: GridSpec,
    pub evaluated: usize,
    pub inconclusive: bool,
    pub x: Vec<f64>,
}

/// Exhaustive grid search for a profitable deviation from truth-telling.
pub fn ic_audit_on(
    ctx: &AuditContext,
    t: &ConsumerType,
    cfg: &MarketConfig,
    grid: GridSpec,
    max_stderr: Option<f64>,
) -> Result<PayoffReport> {
    if grid.steps == 0 {
        return Err(Error::InvalidParameter("deviation grid needs G >= 1".into()));
    }
    let n = ctx.x.len();
    let truthful = truthful_action(t, n);
    let truth = ctx.deviation(t, &truthful)?.payoff;
    let actions: Vec<Vec<f64>> = grid
        .actions(t.q, n)
        .into_iter()
        .filter(|a| a.as_slice() != truthful.as_slice())
        .collect();
    let payoffs = actions
        .par_iter()
        .map(|a| ctx.deviation(t, &Action::new(a.clone())?))
        .collect::<Result<Vec<_>>>()?;

    let mut best: Option<usize> = None;
    for (i, d) in payoffs.iter().enumerate() {
        if best.is_none_or(|b| d.payoff > payoffs[b].payoff) {
            best = Some(i);
        }
    }
    let (best_deviation, best_payoff, best_se) = match best {
        Some(i) => (actions[i].clone(), payoffs[i].payoff, payoffs[i].stderr),
        None => (truthful.as_slice().to_vec(), truth, 0.0),
    };
    let slack = match ctx.set.method() {
        Method::ExactEnumeration => EXACT_SLACK,
        Method::MonteCarlo => EXACT_SLACK.max(3.0 * best_se),
    };
    let gap = truth - best_payoff;
    let covered = t.marginal_utility >= cfg.firm_price;
    Ok(PayoffReport {
        deadline: t.deadline,
        marginal_utility: t.marginal_utility,
        q: t.q,
        truthful_payoff: truth,
        best_deviation,
        best_deviation_payoff: best_payoff,
        best_deviation_stderr: best_se,
        gap,
        slack,
        covered,
        pass: gap >= -slack,
        grid,
        evaluated: actions.len(),
        inconclusive: max_stderr.is_some_and(|m| payoffs.iter().any(|d| d.stderr > m)),
        x: ctx.x.as_slice().to_vec(),
    })
}

pub fn ic_audit(
    t: &ConsumerType,
    x: &AggregateBundle,
    model: &SupplyModel,
    cfg: &MarketConfig,
    grid: GridSpec,
    budget: Budget,
) -> Result<PayoffReport> {
    let ctx = AuditContext::build(x.clone(), model, cfg, budget)?;
    ic_audit_on(&ctx, t, cfg, grid, None)
}

/// Welfare of serving `x` in full: the utility of the consumers it covers
/// minus the expected firm cost.
///
/// Each deadline class is filled in proportion `min(1, x_j / x*_j)` of the
/// truthful aggregate, so withholding demand serves every type of that
/// deadline the same fraction of `q`, and over-requesting serves no more
/// than `q`.
pub fn social_welfare_on(
    pop: &Population,
    x: &AggregateBundle,
    set: &ScenarioSet,
    cfg: &MarketConfig,
) -> Result<f64> {
    let x_star = aggregate_truthful(pop);
    let cost = firm_cost_on(x, set, cfg)?.value;
    let utility: f64 = pop
        .entries()
        .iter()
        .map(|Entry { consumer, mass }| {
            let j = consumer.deadline - 1;
            let full = x_star.as_slice()[j];
            let fill = if full > 0.0 {
                (x.as_slice()[j] / full).min(1.0)
            } else {
                1.0
            };
            mass * consumer.utility_at(fill * consumer.q)
        })
        .sum();
    Ok(utility - cost)
}

pub fn social_welfare(
    pop: &Population,
    x: &AggregateBundle,
    model: &SupplyModel,
    cfg: &MarketConfig,
    budget: Budget,
) -> Result<f64> {
    social_welfare_on(pop, x, &ScenarioSet::build(model, budget)?, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WelfareProbe {
    pub factors: Vec<f64>,
    pub x: Vec<f64>,
    pub welfare: f64,
    /// Welfare at the truthful aggregate minus welfare here.
    pub margin: f64,
}

/// Welfare at every bundle `x*_k * factor_k` over the product of `factors`.
pub fn welfare_probe(
    pop: &Population,
    set: &ScenarioSet,
    cfg: &MarketConfig,
    factors: &[f64],
) -> Result<(f64, Vec<WelfareProbe>)> {
    let x_star = aggregate_truthful(pop);
    let base = social_welfare_on(pop, &x_star, set, cfg)?;
    let n = x_star.len();
    let mut rows = Vec::new();
    let mut idx = vec![0usize; n];
    if factors.is_empty() {
        return Ok((base, rows));
    }
    'outer: loop {
        let f: Vec<f64> = idx.iter().map(|&i| factors[i]).collect();
        let x: Vec<f64> = x_star.as_slice().iter().zip(&f).map(|(a, b)| a * b).collect();
        let welfare = social_welfare_on(pop, &AggregateBundle::new(x.clone())?, set, cfg)?;
        rows.push(WelfareProbe {
            factors: f,
            x,
            welfare,
            margin: base - welfare,
        });
        for pos in (0..n).rev() {
            if idx[pos] + 1 < factors.len() {
                idx[pos] += 1;
                continue 'outer;
            }
            idx[pos] = 0;
        }
        break;
    }
    Ok((base, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumOptions {
    pub grid_steps: usize,
    /// Random bundles audited in addition to the truthful aggregate.
    pub random_bundles: usize,
    /// Also audit bundles that put the whole truthful total on one deadline.
    pub adversarial_bundles: bool,
    pub foc_directions: usize,
    pub step: Step,
    pub seed: u64,
    pub max_stderr: Option<f64>,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        EquilibriumOptions {
            grid_steps: GridSpec::DEFAULT_STEPS,
            random_bundles: 5,
            adversarial_bundles: true,
            foc_directions: 32,
            step: Step::Relative(1e-2),
            seed: 0,
            max_stderr: None,
        }
    }
}

/// One type's worst IC result across the audited bundles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IcDigest {
    pub member: String,
    pub deadline: usize,
    #[serde(rename = "R")]
    pub marginal_utility: f64,
    pub q: f64,
    pub covered: bool,
    pub worst_gap: f64,
    pub worst_x: Vec<f64>,
    pub best_deviation: Vec<f64>,
    pub slack: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub x_star: Vec<f64>,
    pub menu: PriceMenu,
    pub expected_cost: f64,
    pub welfare: f64,
    pub utility_total: f64,
    /// Largest violation of `(p - grad Q)^T (x* - y) >= 0` over the probed
    /// directions `y >= 0`.
    pub foc_residual: f64,
    pub foc_slack: f64,
    /// The residual is only gated when the supply satisfies the continuity
    /// assumption that makes the cost differentiable.
    pub foc_gated: bool,
    pub ic: Vec<IcDigest>,
    /// Every type has `R >= c0`; otherwise the report is advisory.
    pub assumption3: bool,
    pub sampled_x: Vec<Vec<f64>>,
    pub pass: bool,
}

pub fn equilibrium_check(
    pop: &Population,
    model: &SupplyModel,
    cfg: &MarketConfig,
    budget: Budget,
    opts: &EquilibriumOptions,
) -> Result<EquilibriumReport> {
    let set = ScenarioSet::build(model, budget)?;
    equilibrium_check_on(pop, set, cfg, opts)
}

pub fn equilibrium_check_on(
    pop: &Population,
    set: ScenarioSet,
    cfg: &MarketConfig,
    opts: &EquilibriumOptions,
) -> Result<EquilibriumReport> {
    let n = cfg.horizon;
    let x_star = aggregate_truthful(pop);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let cost = firm_cost_on(&x_star, &set, cfg)?;
    let utility_total: f64 = pop
        .entries()
        .iter()
        .map(|e| e.mass * e.consumer.max_utility())
        .sum();
    let welfare = utility_total - cost.value;

    // First-order condition against directional probes.
    let grad = grad_check_on(&x_star, &set, cfg, opts.step)?;
    let gaps: Vec<f64> = grad
        .rows
        .iter()
        .map(|r| {
            if r.skipped.is_some() {
                0.0
            } else {
                r.price - r.finite_difference
            }
        })
        .collect();
    let scale = x_star.as_slice().iter().fold(1.0f64, |m, v| m.max(*v));
    let mut directions: Vec<Vec<f64>> = vec![vec![0.0; n]];
    for k in 0..n {
        let mut y = x_star.as_slice().to_vec();
        y[k] += scale;
        directions.push(y);
    }
    for _ in 0..opts.foc_directions {
        directions.push((0..n).map(|_| 2.0 * scale * rng.random::<f64>()).collect());
    }
    let foc_residual = directions
        .iter()
        .map(|y| {
            let inner: f64 = gaps
                .iter()
                .zip(x_star.as_slice().iter().zip(y))
                .map(|(g, (x, y))| g * (x - y))
                .sum();
            (-inner).max(0.0)
        })
        .fold(0.0, f64::max);
    let fd_se = grad.rows.iter().map(|r| r.fd_stderr + r.price_stderr).fold(0.0, f64::max);
    let foc_slack = match set.method() {
        Method::ExactEnumeration => 1e-6 * scale * cfg.firm_price.max(1.0),
        Method::MonteCarlo => {
            (1e-2 * cfg.firm_price + 3.0 * fd_se) * 2.0 * scale * n as f64
        }
    };
    let foc_gated = set.assumption2();

    // Bundles at which every type is audited.
    let mut sampled_x = vec![x_star.as_slice().to_vec()];
    let total = x_star.total();
    for _ in 0..opts.random_bundles {
        sampled_x.push(
            (0..n)
                .map(|_| 1.5 * scale * rng.random::<f64>())
                .collect(),
        );
    }
    if opts.adversarial_bundles && total > 0.0 {
        for k in 0..n {
            let mut x = vec![0.0; n];
            x[k] = total;
            sampled_x.push(x);
        }
    }

    let menu = menu_on(&x_star, &set, cfg)?;
    let cap = pop.max_demand();
    let grid = GridSpec {
        steps: opts.grid_steps,
        cap,
    };
    let mut ic: Vec<IcDigest> = pop
        .entries()
        .iter()
        .enumerate()
        .map(|(i, e)| IcDigest {
            member: format!("types[{i}]"),
            deadline: e.consumer.deadline,
            marginal_utility: e.consumer.marginal_utility,
            q: e.consumer.q,
            covered: e.consumer.marginal_utility >= cfg.firm_price,
            worst_gap: f64::INFINITY,
            worst_x: Vec::new(),
            best_deviation: Vec::new(),
            slack: EXACT_SLACK,
            pass: true,
        })
        .collect();
    for x in &sampled_x {
        let ctx = AuditContext::new(AggregateBundle::new(x.clone())?, set.clone(), cfg)?;
        for (digest, e) in ic.iter_mut().zip(pop.entries()) {
            let r = ic_audit_on(&ctx, &e.consumer, cfg, grid, opts.max_stderr)?;
            if r.gap < digest.worst_gap {
                digest.worst_gap = r.gap;
                digest.worst_x = x.clone();
                digest.best_deviation = r.best_deviation;
                digest.slack = r.slack;
            }
            digest.pass &= r.pass;
        }
    }
    for d in &mut ic {
        if !d.worst_gap.is_finite() {
            d.worst_gap = 0.0;
        }
    }

    let assumption3 = pop
        .entries()
        .iter()
        .all(|e| e.consumer.marginal_utility >= cfg.firm_price);
    let ic_ok = ic.iter().filter(|d| d.covered).all(|d| d.pass);
    let foc_ok = !foc_gated || foc_residual <= foc_slack;
    Ok(EquilibriumReport {
        x_star: x_star.as_slice().to_vec(),
        menu,
        expected_cost: cost.value,
        welfare,
        utility_total,
        foc_residual,
        foc_slack,
        foc_gated,
        ic,
        assumption3,
        sampled_x,
        pass: ic_ok && foc_ok,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViolationInstance {
    pub trial: usize,
    pub c0: f64,
    pub consumer: ConsumerType,
    pub x: Vec<f64>,
    pub scenarios: Vec<(Vec<f64>, f64)>,
    pub report: PayoffReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchReport {
    pub trials: usize,
    /// `violation-found` or `inconclusive`: not finding an instance refutes
    /// nothing.
    pub status: String,
    pub instance: Option<ViolationInstance>,
}

/// Random search for a profitable deviation by a type with `R < c0` on
/// small finite-scenario instances.
pub fn search_ic_violation(trials: usize, seed: u64, grid_steps: usize) -> Result<SearchReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..trials {
        let n = rng.random_range(2..=3usize);
        let c0 = 1.0;
        let scenarios: Vec<(SupplyPath, f64)> = {
            let m = rng.random_range(2..=4usize);
            (0..m)
                .map(|_| {
                    let s = (0..n).map(|_| rng.random_range(0..=3u32) as f64).collect();
                    Ok((SupplyPath::new(s)?, 1.0 / m as f64))
                })
                .collect::<Result<_>>()?
        };
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..=4u32) as f64).collect();
        let deadline = rng.random_range(1..=n);
        let r = rng.random_range(0.05..0.95) * c0;
        let q = rng.random_range(1..=3u32) as f64;
        let consumer = ConsumerType::capped_linear(deadline, r, q);
        let cfg = MarketConfig::new(n, c0)?;
        let set = ScenarioSet::from_weighted(scenarios.clone());
        let ctx = AuditContext::new(AggregateBundle::new(x.clone())?, set, &cfg)?;
        let grid = GridSpec {
            steps: grid_steps,
            cap: q,
        };
        let report = ic_audit_on(&ctx, &consumer, &cfg, grid, None)?;
        if report.gap < -EXACT_SLACK {
            return Ok(SearchReport {
                trials: trial + 1,
                status: "violation-found".into(),
                instance: Some(ViolationInstance {
                    trial,
                    c0,
                    consumer,
                    x,
                    scenarios: scenarios
                        .into_iter()
                        .map(|(p, w)| (p.as_slice().to_vec(), w))
                        .collect(),
                    report,
                }),
            });
        }
    }
    Ok(SearchReport {
        trials,
        status: "inconclusive".into(),
        instance: None,
    })
}
