//! Exponentially weighted forecasters for online multi-task learning under
//! hard joint constraints on the played action vector.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod constraint;
pub mod continuum;
pub mod error;
pub mod global;
pub mod harness;
pub mod lattice;
pub mod numeric;
pub mod oracle;
pub mod tracking;

pub use constraint::{ActionSet, ConstraintAutomaton, ConstraintDescriptor, ConstraintKind, ConstraintState};
pub use continuum::{
    best_in_continuum, continuum_regret, discretize, integrate_losses, ContinuumComparator, ContinuumForecaster,
    PiecewiseConstantLoss, StepFunction, SuperTaskGrid,
};
pub use error::{Error, Result};
pub use global::{global_eta, global_forward_pass, ActionSetTracker, Aggregator, GlobalForecaster, GlobalLattice};
pub use lattice::{
    best_fixed, count_legal, eta_default, eta_with_rule, forward_pass, BestPath, EtaRule, LatticeScratch, LegalCount,
    LossTable, PlaySample, WeightLattice,
};
pub use oracle::{enumerate_legal, enumerate_switching, EnumeratedSet};
pub use tracking::{switching_comparator, tracking_eta, tracking_regret, SwitchingPath, TrackingForecaster};
