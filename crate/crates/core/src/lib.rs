//! Self-organizing fuzzy PID gain scheduling with quantum fuzzy inference
//! for a planar three-link manipulator.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod closed_loop;
pub mod fuzzy;
pub mod harness;
pub mod pid;
pub mod plant;
pub mod qfi;
pub mod sco;
pub mod thermo;
