//! Rollout storage and generalized advantage estimation.
