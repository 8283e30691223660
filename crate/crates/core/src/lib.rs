//! Deadline-differentiated pricing for deferrable energy demand.
//!
//! Consumers report a deadline and a quantity; the supplier serves the
//! aggregate bundle with earliest-deadline-first scheduling of intermittent
//! supply, topping up with firm supply at price `c0` only when a class would
//! otherwise miss its deadline. Each deadline is priced at the marginal
//! expected firm cost of one more unit of it.
//!
//! ```
//! use ddp_core::{price_menu, AggregateBundle, Budget, MarketConfig, SupplyModel, SupplyPath};
//!
//! let cfg = MarketConfig::new(2, 1.0)?;
//! let model = SupplyModel::FiniteScenario {
//!     scenarios: vec![
//!         (SupplyPath::new(vec![0.0, 0.0])?, 0.25),
//!         (SupplyPath::new(vec![0.0, 2.0])?, 0.25),
//!         (SupplyPath::new(vec![4.0, 0.0])?, 0.25),
//!         (SupplyPath::new(vec![4.0, 2.0])?, 0.25),
//!     ],
//! };
//! let x = AggregateBundle::new(vec![2.0, 1.0])?;
//! let menu = price_menu(&x, &model, &cfg, Budget::Exact)?;
//! assert_eq!(menu.p, vec![0.5, 0.25]);
//! # Ok::<(), ddp_core::Error>(())
//! ```
//!
//! The guide in `book/` walks through each piece; its snippets run as
//! doc-tests.

pub mod audit;
pub mod cli;
pub mod config;
pub mod error;
pub mod population;
pub mod pricing;
pub mod report;
pub mod scheduler;
pub mod supply;

pub use audit::{
    deviation_payoff, equilibrium_check, ic_audit, social_welfare, truthful_payoff,
    AuditContext, EquilibriumReport, GridSpec, PayoffReport,
};
pub use config::{load_config, ExperimentConfig};
pub use error::{Error, Result};
pub use population::{
    aggregate_truthful, truthful_action, Action, AggregateBundle, ConsumerType, Entry,
    Population, UtilitySpec,
};
pub use pricing::{expected_firm_cost, grad_check, price_menu, CostEstimate, PriceMenu, Step};
pub use scheduler::{simulate, ScheduleTrace};
pub use supply::{Budget, MarketConfig, Method, ScenarioSet, SupplyModel, SupplyPath};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/demand.md")]
mod book_demand {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/supply.md")]
mod book_supply {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/edf.md")]
mod book_edf {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/pricing.md")]
mod book_pricing {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/incentives.md")]
mod book_incentives {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/equilibrium.md")]
mod book_equilibrium {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
