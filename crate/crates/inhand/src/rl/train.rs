//! Teacher training, output harvesting, and student distillation.
