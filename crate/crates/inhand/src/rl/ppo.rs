//! Clipped-surrogate policy optimization.
