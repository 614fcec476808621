pub mod dataset;
pub mod transforms;
pub mod funnel;
pub mod inference;
pub mod metrics;
