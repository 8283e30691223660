//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test --test acceptance`.

mod common;

use std::cell::Cell;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use ddp_core::audit::{ic_audit_on, welfare_probe, AuditContext};
use ddp_core::pricing::{grad_check_on, menu_on, partition_check};
use ddp_core::scheduler::oracle::edf_oracle;
use ddp_core::scheduler::residual_trace;
use ddp_core::supply::enumerate_scenarios;
use ddp_core::*;
use rand::Rng;

/// Worst violations seen by the cross-cutting criteria.
#[derive(Default)]
struct Tracker {
    delivery_gap: Cell<f64>,
    delivery_checks: Cell<usize>,
    partition_gap: Cell<f64>,
    partition_checks: Cell<usize>,
}

impl Tracker {
    fn deliveries(&self, ctx: &AuditContext, actions: &[Vec<f64>]) {
        for a in actions {
            let g = ctx.delivery_bound_gap(a);
            self.delivery_gap.set(self.delivery_gap.get().max(g));
            self.delivery_checks
                .set(self.delivery_checks.get() + ctx.set.len());
        }
    }

    fn partition(&self, x: &AggregateBundle, set: &ScenarioSet, c: &MarketConfig) {
        if !set.is_exact() {
            return;
        }
        let menu = menu_on(x, set, c).unwrap();
        for (row, p) in partition_check(x, set).unwrap().iter().zip(&menu.p) {
            let g = (p / menu.c0 + row.survival - 1.0).abs();
            self.partition_gap.set(self.partition_gap.get().max(g));
            self.partition_checks.set(self.partition_checks.get() + 1);
        }
    }
}

fn standard_actions(n: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let mut a = vec![0.0; n];
            a[k] = 1.0;
            a
        })
        .collect();
    out.push((0..n).map(|k| 0.5 + k as f64).collect());
    out
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn run(id: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let (pass, detail) = match result {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (
            false,
            format!(
                "panicked: {}",
                e.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default()
            ),
        ),
    };
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let pass = pass && in_time;
    let budget = limit.map_or(String::new(), |l| format!(" / limit {:.0?}", l));
    println!(
        "[{}] {:>2}. {name}: {detail} ({:.2?}{budget})",
        if pass { "PASS" } else { "FAIL" },
        id,
        elapsed
    );
    pass
}

fn golden(t: &Tracker) -> Outcome {
    // Hand enumeration: residual traces and firm energy per scenario.
    //   s=(0,0): xi=(-2,-1), firm 3, nonpositive from k=1: yes, from k=2: yes
    //   s=(0,2): xi=(-2, 1), firm 2, yes, no
    //   s=(4,0): xi=( 2, 1), firm 0, no, no
    //   s=(4,2): xi=( 2, 3), firm 0, no, no
    let hand_cost = (3.0 + 2.0 + 0.0 + 0.0) / 4.0;
    let hand_p = [2.0 / 4.0, 1.0 / 4.0];

    let c = cfg(2, 1.0);
    let x = bundle(&[2.0, 1.0]);
    let set = ScenarioSet::build(&four_scenarios(), Budget::Exact).unwrap();
    let menu = menu_on(&x, &set, &c).unwrap();
    let cost = ddp_core::pricing::firm_cost_on(&x, &set, &c).unwrap();
    let err = (menu.p[0] - hand_p[0])
        .abs()
        .max((menu.p[1] - hand_p[1]).abs())
        .max((cost.value - hand_cost).abs());
    let ctx = AuditContext::new(x.clone(), set.clone(), &c).unwrap();
    t.deliveries(&ctx, &standard_actions(2));
    t.partition(&x, &set, &c);
    Outcome {
        pass: err <= 1e-12,
        detail: format!(
            "p = ({}, {}), expected cost = {}, max error {err:e}",
            menu.p[0], menu.p[1], cost.value
        ),
    }
}

fn monotonicity(t: &Tracker) -> Outcome {
    let mut r = rng(2024);
    let (mut exact, mut mc, mut bad) = (0, 0, 0);
    for i in 0..1000 {
        let n = r.random_range(1..=6usize);
        let c0 = r.random_range(0.5..3.0);
        let c = cfg(n, c0);
        let x = bundle(&(0..n).map(|_| r.random_range(0.0..4.0)).collect::<Vec<_>>());
        let (set, is_exact) = if i % 2 == 0 {
            let count = r.random_range(1..=8usize);
            let m = random_scenarios(&mut r, n, count, 5);
            (ScenarioSet::build(&m, Budget::Exact).unwrap(), true)
        } else {
            let lo = r.random_range(0.0..1.0);
            let m = SupplyModel::iid_uniform(n, lo, lo + r.random_range(0.1..3.0));
            let b = Budget::MonteCarlo {
                samples: 10_000,
                seed: i as u64,
            };
            (ScenarioSet::build(&m, b).unwrap(), false)
        };
        let menu = menu_on(&x, &set, &c).unwrap();
        if !menu.is_monotone() {
            bad += 1;
        }
        if is_exact {
            exact += 1;
            t.partition(&x, &set, &c);
            let ctx = AuditContext::new(x.clone(), set, &c).unwrap();
            t.deliveries(&ctx, &standard_actions(n));
        } else {
            mc += 1;
        }
    }
    Outcome {
        pass: bad == 0,
        detail: format!("{exact} exact and {mc} Monte Carlo menus, {bad} not monotone"),
    }
}

fn shortfall_identity(t: &Tracker) -> Outcome {
    let mut r = rng(77);
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let n = r.random_range(1..=6usize);
        let x: Vec<f64> = (0..n)
            .map(|_| if r.random_bool(0.2) { 0.0 } else { r.random_range(0.0..4.0) })
            .collect();
        let s: Vec<f64> = (0..n)
            .map(|_| if r.random_bool(0.2) { 0.0 } else { r.random_range(0.0..4.0) })
            .collect();
        let (x, s) = (bundle(&x), path(&s));
        let firm = simulate(&x, &s).unwrap().firm_by_class();
        let xi = residual_trace(&x, &s).unwrap();
        for (k, f) in firm.iter().enumerate() {
            worst = worst.max((f - xi.shortfall(k + 1)).abs());
        }
        if i % 100 == 0 {
            let set = ScenarioSet::from_weighted(vec![(s, 1.0)]);
            let ctx = AuditContext::new(x, set, &cfg(n, 1.0)).unwrap();
            t.deliveries(&ctx, &standard_actions(n));
        }
    }
    Outcome {
        pass: worst <= 1e-12,
        detail: format!("10000 pairs, max |firm_k - max(0, -xi_k)| = {worst:e}"),
    }
}

fn gradient(t: &Tracker) -> Outcome {
    let c = cfg(3, 1.0);
    let model = SupplyModel::iid_uniform(3, 0.0, 2.0);
    let x = bundle(&[0.8, 1.1, 1.4]);
    let set = ScenarioSet::build(
        &model,
        Budget::MonteCarlo {
            samples: 1_000_000,
            seed: 4,
        },
    )
    .unwrap();
    let g = grad_check_on(&x, &set, &c, Step::Relative(1e-2)).unwrap();
    let gaps: Vec<String> = g.rows.iter().map(|r| format!("{:.2e}", r.rel_gap)).collect();
    let ctx = AuditContext::new(x, set, &c).unwrap();
    t.deliveries(&ctx, &standard_actions(3));
    Outcome {
        pass: g.rows.iter().all(|r| r.skipped.is_none()) && g.max_rel_gap() <= 1e-2,
        detail: format!("relative gaps [{}] at 1e6 samples", gaps.join(", ")),
    }
}

fn oracle(t: &Tracker) -> Outcome {
    let mut r = rng(5);
    let (mut worst, mut fails) = (f64::NEG_INFINITY, 0);
    for _ in 0..50 {
        let n = r.random_range(1..=3usize);
        let count = r.random_range(1..=4usize);
        let model = random_scenarios(&mut r, n, count, 5);
        let x = bundle(&(0..n).map(|_| r.random_range(0..5u32) as f64).collect::<Vec<_>>());
        let c = cfg(n, 1.0);
        let rep = edf_oracle(&x, &enumerate_scenarios(&model).unwrap(), &c, 1.0).unwrap();
        worst = worst.max(rep.margin);
        fails += !rep.pass as usize;
        let set = ScenarioSet::build(&model, Budget::Exact).unwrap();
        t.partition(&x, &set, &c);
        let ctx = AuditContext::new(x, set, &c).unwrap();
        t.deliveries(&ctx, &standard_actions(n));
    }
    Outcome {
        pass: fails == 0,
        detail: format!("50 instances, largest EDF minus optimum {worst:e}, {fails} failures"),
    }
}

fn incentives(t: &Tracker) -> Outcome {
    let mut r = rng(6);
    let n = 3;
    let c = cfg(n, 1.0);
    let (mut worst, mut audits, mut fails) = (f64::INFINITY, 0, 0);
    for _ in 0..20 {
        let types = r.random_range(1..=4usize);
        let pop = random_population(&mut r, n, types, 1.0);
        let count = r.random_range(1..=5usize);
        let model = random_scenarios(&mut r, n, count, 5);
        let set = ScenarioSet::build(&model, Budget::Exact).unwrap();
        let grid = GridSpec {
            steps: 8,
            cap: pop.max_demand(),
        };
        let x_star = aggregate_truthful(&pop);
        let mut bundles = vec![x_star.as_slice().to_vec()];
        for _ in 0..5 {
            bundles.push((0..n).map(|_| r.random_range(0.0..4.0)).collect());
        }
        for b in bundles {
            let x = bundle(&b);
            t.partition(&x, &set, &c);
            let ctx = AuditContext::new(x, set.clone(), &c).unwrap();
            let mut actions = Vec::new();
            for e in pop.entries() {
                let rep = ic_audit_on(&ctx, &e.consumer, &c, grid, None).unwrap();
                worst = worst.min(rep.gap);
                audits += 1;
                fails += (rep.gap < -1e-9) as usize;
                actions.push(truthful_action(&e.consumer, n).as_slice().to_vec());
                actions.push(rep.best_deviation);
            }
            t.deliveries(&ctx, &actions);
        }
    }
    Outcome {
        pass: fails == 0,
        detail: format!("{audits} type audits on 9^3 grids, smallest gap {worst:e}, {fails} below -1e-9"),
    }
}

fn delivery(t: &Tracker) -> Outcome {
    let g = t.delivery_gap.get();
    Outcome {
        pass: g <= 1e-12 && t.delivery_checks.get() > 0,
        detail: format!(
            "{} (action, scenario) pairs from criteria 1-6, worst bound violation {g:e}",
            t.delivery_checks.get()
        ),
    }
}

fn partition(t: &Tracker) -> Outcome {
    let g = t.partition_gap.get();
    Outcome {
        pass: g <= 1e-12 && t.partition_checks.get() > 0,
        detail: format!(
            "{} menu entries on exact instances, max |p_k/c0 + P(all later xi > 0) - 1| = {g:e}",
            t.partition_checks.get()
        ),
    }
}

fn determinism() -> Outcome {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let golden = root.join("golden.json");
    let uniform = root.join("uniform.json");
    let cases: Vec<(&str, &std::path::Path, Vec<&str>)> = vec![
        ("price", &golden, vec![]),
        ("schedule", &golden, vec![]),
        ("audit-ic", &golden, vec!["--grid", "4"]),
        ("equilibrium", &golden, vec!["--grid", "4"]),
        ("gradcheck", &golden, vec![]),
        ("oracle-edf", &golden, vec![]),
        ("price", &uniform, vec!["--samples", "20000"]),
        ("schedule", &uniform, vec!["--samples", "8"]),
        ("gradcheck", &uniform, vec!["--samples", "20000"]),
    ];
    let mut mismatches = Vec::new();
    let mut runs = 0;
    for (cmd, cfg, extra) in &cases {
        for format in ["json", "csv", "md"] {
            let outputs: Vec<Vec<u8>> = ["1", "4", "1"]
                .iter()
                .map(|w| {
                    runs += 1;
                    let mut args = vec![*cmd, "--config", cfg.to_str().unwrap(), "--workers", w, "--format", format, "--seed", "13"];
                    args.extend(extra.iter());
                    Command::new(env!("CARGO_BIN_EXE_ddp")).args(&args).output().unwrap().stdout
                })
                .collect();
            if outputs.iter().any(|o| o != &outputs[0] || o.is_empty()) {
                mismatches.push(format!("{cmd}/{format}"));
            }
        }
    }
    Outcome {
        pass: mismatches.is_empty(),
        detail: format!(
            "{runs} runs over workers {{1, 4}}, mismatches: {}",
            if mismatches.is_empty() { "none".to_string() } else { mismatches.join(", ") }
        ),
    }
}

fn welfare() -> Outcome {
    let set = ScenarioSet::build(&four_scenarios(), Budget::Exact).unwrap();
    let (base, rows) =
        welfare_probe(&golden_population(2.0), &set, &cfg(2, 1.0), &[0.5, 0.75, 1.25, 1.5]).unwrap();
    let min = rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    Outcome {
        pass: rows.len() == 16 && min >= -1e-9,
        detail: format!("welfare at x* = {base}, smallest margin over 16 bundles = {min}"),
    }
}

fn main() {
    let t = Tracker::default();
    let secs = Duration::from_secs;
    let results = [
        run(1, "golden four-scenario instance", Some(secs(1)), || golden(&t)),
        run(2, "menus nonincreasing in the deadline", Some(secs(120)), || monotonicity(&t)),
        run(3, "firm use equals residual shortfall", Some(secs(10)), || shortfall_identity(&t)),
        run(4, "finite differences match prices", Some(secs(120)), || gradient(&t)),
        run(5, "EDF matches the exhaustive optimum", Some(secs(300)), || oracle(&t)),
        run(6, "truth-telling is optimal for R >= c0", Some(secs(300)), || incentives(&t)),
        run(7, "deliveries within their bounds", None, || delivery(&t)),
        run(8, "prices partition the shortfall events", None, || partition(&t)),
        run(9, "CLI output independent of worker count", None, determinism),
        run(10, "welfare peaks at the truthful bundle", None, welfare),
    ];
    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
