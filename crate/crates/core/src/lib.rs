pub mod duration;
pub mod geo;
pub mod model;
pub mod query;
pub mod engine;
pub mod detector;
pub mod simulator;
