pub mod compose;
pub mod engine;
pub mod error;
pub mod fastpath;
pub mod harness;
pub mod infer;
pub mod model;
pub mod service;
pub mod store;

pub use error::EngineError;
