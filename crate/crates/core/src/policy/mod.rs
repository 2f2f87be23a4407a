//! Policy heads and network.
//!
//! The same arithmetic is implemented twice on purpose: a plain `f64` path
//! used during rollouts and evaluation, and a taped path used inside losses.
//! Both follow the identical operation order, so a log-prob stored during
//! collection is bit-equal to the one recomputed on the tape before the first
//! optimizer step.

mod dist;
mod net;

pub use dist::{
    kl_categorical_probs, ln_2pi, ActionDist, ActionValue, PolicyError, CONT_ACTION_DIM,
    DISCRETE_ACTIONS, LOG_STD_MAX, LOG_STD_MIN,
};
pub use net::{BatchHeads, BoundNet, HeadKind, PlainBatch, PolicyConfig, PolicyNet};
