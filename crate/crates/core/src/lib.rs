pub mod app;
pub mod bounds;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod fbm;
pub mod gamma;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod operator;
pub mod presets;
pub mod quadrature;
pub mod seeding;
pub mod simulator;

pub use error::{Error, Result};
