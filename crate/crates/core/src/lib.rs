//! Weak decay rates of operator orbits: sequence-space calculus, a zoo of
//! finite-dimensional operators, discrete resolvent estimates and their
//! continuous-time counterpart for matrix semigroups.

// negated comparisons are used deliberately so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod linalg;
pub mod operators;
pub mod resolvent;
pub mod semigroup;
pub mod seqspace;
pub mod serde_util;
