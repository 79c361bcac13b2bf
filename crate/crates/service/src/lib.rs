//! Command-line and HTTP front end for the ECG diagnosis pipeline.

pub mod api;
pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod session;

pub use api::{router, AppState};
pub use config::AppConfig;
pub use engine::Engine;
pub use error::AppError;
