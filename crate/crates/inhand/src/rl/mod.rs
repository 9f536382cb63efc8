//! Training and evaluation: primitive environments, the scripted expert,
//! PPO with generalized advantage estimation, teacher-student distillation,
//! skill chaining, and the shape-sweep evaluation protocol.

pub mod buffer;
pub mod chain;
pub mod env;
pub mod expert;
pub mod ppo;
pub mod train;

pub use env::{PrimitiveEnv, StepOutcome};
pub use expert::{ExpertConfig, ScriptedExpert};
