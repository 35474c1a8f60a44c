pub mod analysis;
pub mod assets;
pub mod benchmark;
pub mod corpus;
pub mod error;
pub mod generation;
pub mod hashing;
mod http;
pub use http::RetryPolicy;
pub mod metrics;
pub mod mitigation;
pub mod pipeline;
pub mod retrieval;
