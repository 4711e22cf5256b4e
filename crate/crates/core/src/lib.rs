//! Regularization of port-Hamiltonian descriptor systems by output feedback.

pub mod analysis;
pub mod cli;
pub mod condense;
pub mod error;
pub mod matops;
pub mod regularize;
pub mod sysmodel;

pub use error::{Error, Result};
pub use matops::{Matrix, RankTolerance};
pub use sysmodel::{DescriptorSystem, PhRealization};
