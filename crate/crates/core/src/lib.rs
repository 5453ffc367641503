pub mod config;
pub mod engine;
pub mod error;
pub mod group;
pub mod highway;
pub mod manifest;
pub mod marks;
pub mod norm;
pub mod paths;
pub mod region;
pub mod run;
pub mod shape;
pub mod stats;
pub mod weights;

pub use error::{NilError, Result};
