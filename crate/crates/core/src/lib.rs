//! Multi-layer spam defense engine with a worm outbreak simulator.

pub mod bayes;
pub mod conf;
pub mod content;
pub mod corpus;
pub mod experiment;
pub mod message;
pub mod pipeline;
pub mod report;
pub mod source;
pub mod sim;
