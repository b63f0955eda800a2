//! Shaped-pulse analysis and design for spin-1/2 NMR: propagators, schematic
//! evolution delays, symmetry partners, GRAPE optimization and small
//! spin-system simulation.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli_io;
pub mod grape;
pub mod propagation;
pub mod pulse;
pub mod spin_sim;
pub mod su2;
pub mod symmetry;
