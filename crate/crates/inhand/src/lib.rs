//! In-hand regrasp toolkit.
//!
//! A desk-scale stack for learning finger-gaiting regrasps: a superquadric
//! object model, a four-finger kinematic hand, a penalty-contact rigid-body
//! simulator, contact-state classification with force-closure margins, a
//! contact-state transition graph and primitive planner, a step-wise reward
//! engine, hand-rolled policy networks with verified gradients, and a PPO +
//! teacher-student training pipeline.

pub mod contactstate;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod hand;
pub mod nets;
pub mod reward;
pub mod rl;
pub mod simcore;

pub use error::{InhandError, Result};
