pub mod config;
pub mod engine;
pub mod experiment;
pub mod metrics;
pub mod platform;
pub mod queueing;
pub mod rng;
pub mod schedulers;
pub mod sim;
pub mod verify;
pub mod workload;
