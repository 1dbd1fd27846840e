//! Homogenization of random conductance models on supercritical percolation
//! clusters: partitions of good cubes, coarsening, subadditive energies and
//! the numerical experiments built on them.

pub mod coarsen;
pub mod energy;
pub mod error;
pub mod experiments;
pub mod io;
pub mod lattice;
pub mod partition;
pub mod percolation;
pub mod regularity;
pub mod solver;

pub use error::{Error, Result};
