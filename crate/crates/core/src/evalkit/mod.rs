pub mod bench;
pub mod metrics;
