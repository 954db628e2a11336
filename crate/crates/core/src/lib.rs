#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod contact;
pub mod error;
pub mod io;
pub mod nlp;
pub mod planners;
pub mod rollout;
pub mod scenarios;
pub mod se2;
pub mod sqp;
