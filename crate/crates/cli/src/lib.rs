//! Batch front end: JSON analysis plans, report assembly with exit-code
//! semantics, and the randomized consistency sweep.

// negated comparisons are used deliberately so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod fuzz;
pub mod plan;
pub mod run;
