//! Event-log ingestion, feature encoding, the uncertainty-aware encoder-decoder
//! LSTM, its training loop, Monte Carlo suffix sampling, evaluation and a
//! synthetic repair-process generator.

pub mod checkpoint;
pub mod error;
pub mod evalkit;
pub mod eventlog;
pub mod features;
pub mod mcsampler;
pub mod objective;
pub mod setting;
pub mod synthlog;
pub mod trainer;
pub mod ulstm;

pub use error::{CoreError, ErrorClass, Result};
pub use setting::HyperparameterSetting;
