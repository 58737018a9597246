//! Residual boosting on top of a frozen binary scorer.
//!
//! The pipeline mines regions where the frozen model's residuals are large,
//! evolves one guarded symbolic expert per region, and fuses the experts
//! with the frozen score through a small gating model.

pub mod aggregator;
pub mod chain;
pub mod dataset;
pub mod expr;
pub mod gbdt;
pub mod legacy;
pub mod metrics;
pub mod orchestrator;
pub mod par;
pub mod provider;
pub mod regions;
pub mod tpe;
pub mod tree;
