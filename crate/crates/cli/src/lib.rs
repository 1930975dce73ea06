//! Dataset ingestion, deterministic training harness, evaluation, exports,
//! and the command-line surface for the riskcast forecasting model.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod export;
pub mod ingest;
pub mod manifest;
pub mod synthio;
pub mod trainer;

pub use error::AppError;
