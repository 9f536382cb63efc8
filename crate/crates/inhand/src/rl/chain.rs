//! Skill chaining, the evaluation grid, and latent export.
