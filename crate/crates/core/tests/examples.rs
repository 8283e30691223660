//! Worked examples for every public operation, with independent checks of
//! the derived values.

mod common;

use common::*;
use ddp_core::audit::{welfare_probe, AuditContext};
use ddp_core::pricing::{convexity_probe, partition_check};
use ddp_core::scheduler::oracle::edf_oracle;
use ddp_core::scheduler::{class_fractions, class_fractions_numeric, intra_allocate, MemberId};
use ddp_core::*;

/// Firm cost by brute-force simulation, independent of the residual formula.
fn simulated_cost(x: &AggregateBundle, model: &SupplyModel, c0: f64) -> f64 {
    ddp_core::supply::enumerate_scenarios(model)
        .unwrap()
        .iter()
        .map(|(s, w)| w * c0 * simulate(x, s).unwrap().firm_total())
        .sum()
}

#[test]
fn golden_values_by_hand() {
    // Firm energy per scenario for x = (2, 1):
    //   (0,0): 2 + 1 = 3;  (0,2): 2 + 0 = 2;  (4,0): 0;  (4,2): 0.
    let hand_cost = 0.25 * 3.0 + 0.25 * 2.0;
    // One extra unit of class 1 costs c0 exactly in (0,0) and (0,2); one
    // extra unit of class 2 only in (0,0).
    let hand_menu = [0.5, 0.25];

    let x = bundle(&[2.0, 1.0]);
    let c = cfg(2, 1.0);
    let q = expected_firm_cost(&x, &four_scenarios(), &c, Budget::Exact).unwrap();
    assert_eq!(q.value, hand_cost);
    assert_eq!(simulated_cost(&x, &four_scenarios(), 1.0), hand_cost);
    let menu = price_menu(&x, &four_scenarios(), &c, Budget::Exact).unwrap();
    assert_eq!(menu.p, hand_menu);
}

#[test]
fn menu_matches_one_sided_differences_away_from_ties() {
    // With no residual at zero, Q is locally linear and the one-sided
    // difference equals the price.
    let x = bundle(&[2.0, 1.0]);
    let c = cfg(2, 1.0);
    let menu = price_menu(&x, &four_scenarios(), &c, Budget::Exact).unwrap();
    let base = simulated_cost(&x, &four_scenarios(), 1.0);
    for k in 0..2 {
        let mut up = x.as_slice().to_vec();
        up[k] += 1e-3;
        let d = (simulated_cost(&bundle(&up), &four_scenarios(), 1.0) - base) / 1e-3;
        assert!((d - menu.p[k]).abs() < 1e-9, "k={k} d={d}");
    }
}

#[test]
fn cost_examples() {
    let zero = SupplyModel::Deterministic {
        path: path(&[0.0, 0.0]),
    };
    let q = expected_firm_cost(&bundle(&[1.0, 2.0]), &zero, &cfg(2, 1.0), Budget::Exact).unwrap();
    assert_eq!(q.value, 3.0);
    let q = expected_firm_cost(&bundle(&[0.0, 0.0]), &four_scenarios(), &cfg(2, 1.0), Budget::Exact)
        .unwrap();
    assert_eq!(q.value, 0.0);
}

#[test]
fn menu_examples() {
    let zero = SupplyModel::Deterministic {
        path: path(&[0.0, 0.0, 0.0]),
    };
    let m = price_menu(&bundle(&[1.0, 0.0, 3.0]), &zero, &cfg(3, 2.0), Budget::Exact).unwrap();
    assert_eq!(m.p, vec![2.0; 3]);
    let early = SupplyModel::Deterministic {
        path: path(&[4.0, 0.0]),
    };
    let m = price_menu(&bundle(&[2.0, 1.0]), &early, &cfg(2, 1.0), Budget::Exact).unwrap();
    assert_eq!(m.p, vec![0.0, 0.0]);
}

#[test]
fn gradient_examples() {
    let g = grad_check(
        &bundle(&[2.0, 1.0]),
        &four_scenarios(),
        &cfg(2, 1.0),
        Step::Absolute(0.01),
        Budget::Exact,
    )
    .unwrap();
    assert!((g.rows[0].finite_difference - 0.5).abs() < 1e-12);
    assert!((g.rows[1].finite_difference - 0.25).abs() < 1e-12);
    assert!(matches!(
        grad_check(
            &bundle(&[2.0, 1.0]),
            &four_scenarios(),
            &cfg(2, 1.0),
            Step::Relative(-1.0),
            Budget::Exact
        ),
        Err(Error::InvalidParameter(_))
    ));
}

#[test]
fn convexity_examples() {
    let r = convexity_probe(&four_scenarios(), &cfg(2, 1.0), 100, 17, Budget::Exact, 5.0).unwrap();
    assert_eq!(r.violations, 0);
    let r = convexity_probe(
        &SupplyModel::iid_uniform(3, 0.0, 1.0),
        &cfg(3, 1.0),
        20,
        3,
        Budget::MonteCarlo {
            samples: 2000,
            seed: 5,
        },
        3.0,
    )
    .unwrap();
    assert_eq!(r.violations, 0);
    assert!(matches!(
        convexity_probe(&four_scenarios(), &cfg(2, 1.0), 0, 1, Budget::Exact, 1.0),
        Err(Error::InvalidParameter(_))
    ));
}

#[test]
fn payoff_examples() {
    let ctx = AuditContext::build(bundle(&[2.0, 1.0]), &four_scenarios(), &cfg(2, 1.0), Budget::Exact)
        .unwrap();
    let t = ConsumerType::capped_linear(2, 1.5, 1.0);
    assert_eq!(truthful_payoff(&t, &ctx.menu), 1.25);
    let d = deviation_payoff(
        &t,
        &Action::new(vec![1.0, 0.0]).unwrap(),
        &bundle(&[2.0, 1.0]),
        &four_scenarios(),
        &cfg(2, 1.0),
        Budget::Exact,
        None,
    )
    .unwrap();
    assert_eq!(d.payoff, 1.0);
    assert!(!d.inconclusive);

    // Zero supply, R = c0: truthful payoff is zero.
    let zero = SupplyModel::Deterministic {
        path: path(&[0.0, 0.0]),
    };
    let ctx = AuditContext::build(bundle(&[2.0, 1.0]), &zero, &cfg(2, 1.0), Budget::Exact).unwrap();
    assert_eq!(truthful_payoff(&ConsumerType::capped_linear(1, 1.0, 3.0), &ctx.menu), 0.0);
}

#[test]
fn inconclusive_flag_on_noisy_estimates() {
    let t = ConsumerType::capped_linear(3, 1.5, 1.0);
    let d = deviation_payoff(
        &t,
        &Action::new(vec![0.0, 0.0, 1.0]).unwrap().clone(),
        &bundle(&[1.0, 1.0, 1.0]),
        &SupplyModel::iid_uniform(3, 0.0, 2.0),
        &cfg(3, 1.0),
        Budget::MonteCarlo { samples: 50, seed: 1 },
        Some(1e-9),
    )
    .unwrap();
    // Truthful delivery is certain: no noise, so not inconclusive.
    assert!(!d.inconclusive);
    let d = deviation_payoff(
        &t,
        &Action::new(vec![0.0, 0.0, 0.0]).unwrap(),
        &bundle(&[1.0, 1.0, 1.0]),
        &SupplyModel::iid_uniform(3, 0.0, 2.0),
        &cfg(3, 1.0),
        Budget::MonteCarlo { samples: 50, seed: 1 },
        Some(1e-9),
    )
    .unwrap();
    assert_eq!(d.payoff, 0.0);
}

#[test]
fn audit_examples() {
    let t = ConsumerType::capped_linear(2, 1.5, 1.0);
    let r = ic_audit(
        &t,
        &bundle(&[2.0, 1.0]),
        &four_scenarios(),
        &cfg(2, 1.0),
        GridSpec { steps: 4, cap: 4.0 },
        Budget::Exact,
    )
    .unwrap();
    // 25 grid actions, minus the truthful one.
    assert_eq!(r.evaluated, 24);
    assert!(r.gap >= 0.0);

    // Last deadline: nothing later to move to.
    let t = ConsumerType::capped_linear(2, 1.0, 2.0);
    let r = ic_audit(
        &t,
        &bundle(&[1.0, 3.0]),
        &four_scenarios(),
        &cfg(2, 1.0),
        GridSpec { steps: 8, cap: 2.0 },
        Budget::Exact,
    )
    .unwrap();
    assert!(r.gap >= -1e-9);
}

#[test]
fn equilibrium_examples() {
    let r = equilibrium_check(
        &golden_population(2.0),
        &four_scenarios(),
        &cfg(2, 1.0),
        Budget::Exact,
        &Default::default(),
    )
    .unwrap();
    assert_eq!(r.x_star, vec![2.0, 1.0]);
    assert_eq!(r.menu.p, vec![0.5, 0.25]);
    assert_eq!(r.welfare, (4.0 * 0.5 * 2.0 + 2.0 * 0.5 * 2.0) - 1.25);
    let w = social_welfare(
        &golden_population(2.0),
        &AggregateBundle::zeros(2),
        &four_scenarios(),
        &cfg(2, 1.0),
        Budget::Exact,
    )
    .unwrap();
    assert_eq!(w, 0.0);
}

#[test]
fn welfare_peaks_at_truthful_bundle() {
    let set = ScenarioSet::build(&four_scenarios(), Budget::Exact).unwrap();
    let (_, rows) =
        welfare_probe(&golden_population(2.0), &set, &cfg(2, 1.0), &[0.5, 0.75, 1.25, 1.5]).unwrap();
    assert!(rows.iter().all(|r| r.margin >= -1e-9));
    // Strictly positive whenever the bundle actually moved.
    assert!(rows
        .iter()
        .filter(|r| r.factors.iter().any(|f| *f != 1.0))
        .all(|r| r.margin > 0.0));
}

#[test]
fn partition_identity_golden() {
    let set = ScenarioSet::build(&four_scenarios(), Budget::Exact).unwrap();
    let x = bundle(&[2.0, 1.0]);
    let menu = ddp_core::pricing::menu_on(&x, &set, &cfg(2, 1.0)).unwrap();
    for (row, p) in partition_check(&x, &set).unwrap().iter().zip(&menu.p) {
        assert!((p + row.survival - 1.0).abs() <= 1e-12);
        assert!((row.shortfall_share - p).abs() <= 1e-12);
    }
}

#[test]
fn intra_allocation_matches_numeric_limit() {
    let x = bundle(&[1.0, 0.0, 2.0]);
    for s in [[0.5, 1.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 3.0], [1.0, 0.5, 0.5]] {
        let p = path(&s);
        let f = class_fractions(&simulate(&x, &p).unwrap());
        for class in 0..3 {
            let numeric = class_fractions_numeric(&x, &p, class, 1e-9).unwrap();
            for (t, n) in numeric.iter().enumerate() {
                assert!(
                    (f.fraction(class, t) - n).abs() < 1e-6,
                    "s={s:?} class={class} t={t}"
                );
            }
        }
    }
}

#[test]
fn probes_ride_along() {
    let pop = golden_population(2.0)
        .with_truthful_probe(ConsumerType::capped_linear(2, 1.5, 1.0))
        .with_probe(
            ConsumerType::capped_linear(2, 1.5, 1.0),
            Action::new(vec![1.0, 0.0]).unwrap(),
        )
        .unwrap();
    let x = aggregate_truthful(&pop);
    assert_eq!(x.as_slice(), &[2.0, 1.0]);
    let trace = simulate(&x, &path(&[0.0, 2.0])).unwrap();
    let alloc = intra_allocate(&trace, &pop, &pop.truthful_actions()).unwrap();
    let truthful = ddp_core::scheduler::consumer_delivery(&alloc, MemberId::Probe(0), 2).unwrap();
    assert_eq!(truthful, 1.0);
    let early = ddp_core::scheduler::consumer_delivery(&alloc, MemberId::Probe(1), 1).unwrap();
    assert_eq!(early, 1.0);
    assert!(matches!(
        ddp_core::scheduler::consumer_delivery(&alloc, MemberId::Probe(7), 1),
        Err(Error::UnknownMember(_))
    ));
}

#[test]
fn oracle_agrees_on_small_instances() {
    let mut r = rng(99);
    for _ in 0..10 {
        let model = random_scenarios(&mut r, 3, 3, 3);
        let scenarios = ddp_core::supply::enumerate_scenarios(&model).unwrap();
        let x = bundle(&[1.0, 2.0, 1.0]);
        let rep = edf_oracle(&x, &scenarios, &cfg(3, 1.0), 1.0).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.margin.abs() <= 1e-9, "EDF should be optimal: {rep:?}");
    }
}
