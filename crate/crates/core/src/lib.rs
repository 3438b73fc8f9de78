// NaN-rejecting `!(a < b)` checks and index loops over parallel arrays are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

mod par;

pub mod boxgrid;
pub mod conley;
pub mod dynamics;
pub mod fieldlang;
pub mod perturb;
pub mod rds;
