#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coevolution;
pub mod config;
pub mod driver;
pub mod error;
pub mod evolution;
pub mod filter;
pub mod harness;
pub mod models;
pub mod rng;
pub mod species;
pub mod world;
