//! Distributed online control of networked linear systems: centralized and
//! truncated predictive controllers, their finite-horizon KKT solvers, and
//! tooling to measure spatial decay and dynamic regret.

pub mod bench;
pub mod control;
pub mod costs;
pub mod decay;
pub mod forecast;
pub mod lti;
pub mod network;
pub mod ocp;
pub mod rng;
