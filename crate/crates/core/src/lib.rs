//! Constrained nonlinear programming by integrating an explicit ODE whose
//! equilibria are exactly the KKT points of the problem.
//!
//! ```
//! use nlpflow::field::SolverConfig;
//! use nlpflow::integrate::{integrate, IntegratorConfig, MonitorConfig, NlpSystem};
//! use nlpflow::kkt::{classify, KktClass, KktTolerances};
//! use nlpflow::problem::builtin;
//!
//! let prob = builtin("ex71").unwrap();
//! let cfg = SolverConfig::unit();
//! let traj = integrate(
//!     &NlpSystem::new(&prob, &cfg),
//!     &[1.5, -0.5],
//!     &IntegratorConfig::default(),
//!     &MonitorConfig::default(),
//! )
//! .unwrap();
//! let limit = classify(&prob, traj.final_x(), &KktTolerances::limit(1e-6)).unwrap();
//! assert_eq!(limit.class, KktClass::KktPoint);
//! ```

pub mod cli;
pub mod error;
pub mod expr;
pub mod field;
pub mod integrate;
pub mod kernels;
pub mod kkt;
pub mod problem;

pub use error::{Error, Result};
pub use problem::NlpProblem;
