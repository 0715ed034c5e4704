pub mod alpha_select;
pub mod config;
pub mod env;
pub mod error;
pub mod finite;
pub mod gaussian;
pub mod goal;
pub mod manifest;
pub mod mdp;
pub mod report;
pub mod runner;
pub mod seeding;
pub mod stats;
pub mod validate;

pub use error::{Error, Result};
