pub mod bnb;
pub mod cran;
pub mod error;
pub mod features;
pub mod harness;
pub mod imitation;
pub mod lorm;
pub mod policy;
pub mod problem;
pub mod relaxation;
pub mod rng;
pub mod self_imitation;
pub mod table;
pub mod theory;
pub mod toy;

pub use error::{Error, Result};
