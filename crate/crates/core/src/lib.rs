pub mod bayes;
pub mod corpus;
pub mod error;
pub mod evo;
pub mod exec;
pub mod filters;
pub mod harness;
pub mod hierarchy;
pub mod infogeo;
pub mod linalg;
pub mod objectives;
pub mod optim;
pub mod price;
pub mod rng;

pub use error::{FmbError, Result};
