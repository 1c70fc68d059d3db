//! Control plane for sharing idle GPUs across a campus, plus a churn simulator
//! that runs the same coordinator and agent logic on virtual time.

pub mod agent;
pub mod clock;
pub mod coordinator;
pub mod domain;
pub mod resilience;
pub mod sim;
